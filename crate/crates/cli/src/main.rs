use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use guzheng_core::analysis::{
    benchmark_csv, benchmark_table, run_benchmark, spectral_mode_error, MIN_REPEATS,
};
use guzheng_core::body::BodyIR;
use guzheng_core::damping::{fit_damping, track_partials, FitReport};
use guzheng_core::pipeline::{Instrument, Method};
use guzheng_core::wav::{read_wav, write_wav, WavFormat};
use guzheng_core::waveguide::TuningMode;
use guzheng_core::{load_config, AudioBuffer, Config, Error, ErrorKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "guzheng",
    version,
    about = "Hybrid modal/waveguide plucked-string synthesizer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a string sound to WAV.
    Render(RenderArgs),
    /// Write the modal excitation signal fed to the waveguide loop.
    Excite(ExciteArgs),
    /// Fit d1/d3 to a recorded single-string note.
    EstimateDamping(EstimateArgs),
    /// Time every synthesis method over a range of render lengths.
    Bench(BenchArgs),
    /// Per-mode spectral comparison of two string signals.
    Compare(CompareArgs),
    /// Print the modal bank and loop design for a config.
    DesignReport(DesignArgs),
}

#[derive(Args)]
struct OutputFormat {
    /// Write 16-bit PCM instead of 32-bit float.
    #[arg(long)]
    pcm16: bool,
}

#[derive(Args)]
struct RenderArgs {
    config: PathBuf,
    out: PathBuf,
    #[arg(long, default_value = "hybrid")]
    method: Method,
    /// Body impulse response (mono WAV at the config sample rate).
    #[arg(long)]
    ir: Option<PathBuf>,
    /// Length in seconds; overrides the config.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    tuning: Option<TuningMode>,
    /// Scale the output to a -1 dBFS peak.
    #[arg(long)]
    normalize: bool,
    #[command(flatten)]
    format: OutputFormat,
    /// Seed for TPDF dither before 16-bit quantization.
    #[arg(long, requires = "pcm16")]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExciteArgs {
    config: PathBuf,
    out: PathBuf,
    /// Excitation length; overrides the config.
    #[arg(long)]
    excitation_samples: Option<usize>,
    #[command(flatten)]
    format: OutputFormat,
}

#[derive(Args)]
struct EstimateArgs {
    recording: PathBuf,
    config: PathBuf,
    #[arg(long, default_value_t = 30)]
    max_modes: u32,
    /// Write a copy of the config with the fitted damping.
    #[arg(long)]
    write_config: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    config: PathBuf,
    /// Directory for the per-method CSV files.
    out: PathBuf,
    /// Render lengths in seconds.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    lengths: Vec<f64>,
    #[arg(long, default_value_t = MIN_REPEATS)]
    repeats: usize,
    #[arg(long, value_delimiter = ',', default_value = "hybrid,ftm,dwg")]
    methods: Vec<Method>,
}

#[derive(Args)]
struct CompareArgs {
    reference: PathBuf,
    candidate: PathBuf,
    #[arg(long, default_value_t = 10)]
    modes: u32,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DesignArgs {
    config: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let text: Vec<&str> = msg
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .filter(|l| !l.is_empty())
                .collect();
            let text = text.join(" ");
            eprintln!(
                "{}: {}",
                ErrorKind::Validation.code(),
                text.trim_start_matches("error: ")
            );
            return ExitCode::from(ErrorKind::Validation.exit_code() as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            eprintln!("{}: {}", kind.code(), e.to_string().replace('\n', "; "));
            ExitCode::from(kind.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Render(a) => render(a),
        Command::Excite(a) => excite(a),
        Command::EstimateDamping(a) => estimate_damping(a),
        Command::Bench(a) => bench(a),
        Command::Compare(a) => compare(a),
        Command::DesignReport(a) => design_report(a),
    }
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn load(path: &Path) -> Result<Config, Error> {
    let config = load_config(path)?;
    warn_all(&config.warnings);
    Ok(config)
}

/// Builds the instrument; loop warnings are printed unless the caller
/// prints the plan report, which already lists them.
fn instrument(config: &Config, quiet: bool) -> Result<Instrument, Error> {
    let inst = Instrument::new(config)?;
    if !quiet {
        warn_all(&inst.plan().warnings);
    }
    Ok(inst)
}

fn wav_format(f: &OutputFormat) -> WavFormat {
    if f.pcm16 {
        WavFormat::Pcm16
    } else {
        WavFormat::Float32
    }
}

/// Adds triangular dither of ±1 LSB at 16-bit resolution.
fn dither(audio: &AudioBuffer, seed: u64) -> Result<AudioBuffer, Error> {
    let lsb = 1.0 / 32768.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = audio
        .samples()
        .iter()
        .map(|s| s + lsb * (rng.gen::<f64>() - rng.gen::<f64>()))
        .collect();
    AudioBuffer::new(x, audio.sample_rate())
}

fn render(a: RenderArgs) -> Result<(), Error> {
    let mut config = load(&a.config)?;
    if let Some(d) = a.duration {
        config = config.with_duration(d)?;
    }
    if let Some(mode) = a.tuning {
        config = config.with_tuning_mode(mode)?;
    }
    let ir = match &a.ir {
        Some(path) => Some(BodyIR::from_audio(read_wav(path)?)?),
        None => None,
    };
    if let Some(ir) = &ir {
        if ir.sample_rate() != config.render.sample_rate {
            return Err(Error::SampleRateMismatch {
                signal: config.render.sample_rate,
                ir: ir.sample_rate(),
            });
        }
    }

    let inst = instrument(&config, true)?;
    println!("{}", inst.plan());
    let mut out = inst.render_sound(a.method, ir.as_ref(), a.normalize)?;
    if let Some(seed) = a.seed {
        out = dither(&out, seed)?;
    }
    if out.peak() > 1.0 && a.format.pcm16 {
        eprintln!(
            "warning: peak {:.3} exceeds full scale and will clip; try --normalize",
            out.peak()
        );
    }
    write_wav(&a.out, &out, wav_format(&a.format))?;
    println!(
        "wrote {} ({} samples, {:.3} s, {})",
        a.out.display(),
        out.len(),
        out.duration(),
        a.method
    );
    Ok(())
}

fn excite(a: ExciteArgs) -> Result<(), Error> {
    let mut config = load(&a.config)?;
    if let Some(n) = a.excitation_samples {
        config = config.with_excitation_samples(n)?;
    }
    let inst = instrument(&config, false)?;
    let exc = inst.excitation();
    if exc.peak() == 0.0 {
        eprintln!("warning: excitation is silent (pluck force is zero)");
    }
    write_wav(&a.out, &exc, wav_format(&a.format))?;
    println!("wrote {} ({} samples)", a.out.display(), exc.len());
    Ok(())
}

fn estimate_damping(a: EstimateArgs) -> Result<(), Error> {
    let recording = read_wav(&a.recording)?;
    let config = load(&a.config)?;
    let tracks = track_partials(&recording, &config.physics, a.max_modes)?;
    let fit = fit_damping(&tracks, &config.physics)?;
    println!(
        "{}",
        FitReport {
            tracks: &tracks,
            fit: &fit
        }
    );
    if let Some(path) = &a.write_config {
        let updated = config.with_damping(fit.params()?)?;
        write_text(path, &updated.to_config_string())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<(), Error> {
    let config = load(&a.config)?;
    let fs = config.render.sample_rate;
    for &s in &a.lengths {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::validation(
                "lengths",
                format!("must be > 0 s, got {s}"),
            ));
        }
    }
    let lengths: Vec<usize> = a
        .lengths
        .iter()
        .map(|s| (s * fs).round() as usize)
        .collect();
    let inst = instrument(&config, false)?;
    let reports = run_benchmark(&inst, &a.methods, &lengths, a.repeats)?;
    fs::create_dir_all(&a.out).map_err(|source| Error::Io {
        path: a.out.clone(),
        source,
    })?;
    print!("{}", benchmark_table(&reports, fs));
    for r in &reports {
        let path = a.out.join(format!("bench_{}.csv", r.method));
        write_text(&path, &benchmark_csv(r))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Result<(), Error> {
    let reference = read_wav(&a.reference)?;
    let candidate = read_wav(&a.candidate)?;
    let report = spectral_mode_error(&reference, &candidate, a.modes)?.labelled(
        &a.reference.display().to_string(),
        &a.candidate.display().to_string(),
    );
    print!("{report}");
    if let Some(path) = &a.csv {
        write_text(path, &report.to_csv())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn design_report(a: DesignArgs) -> Result<(), Error> {
    let config = load(&a.config)?;
    let inst = instrument(&config, true)?;
    println!("{}", inst.bank());
    println!("{}", inst.plan());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
