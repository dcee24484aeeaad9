use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use guzheng_core::wav::{read_wav, write_wav, WavFormat};
use guzheng_core::{load_config, AudioBuffer};
use tempfile::TempDir;

fn reference_cfg() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../reference_string.cfg")
}

fn guzheng(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_guzheng"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn render_is_bit_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a.wav"), dir.path().join("b.wav"));
    for p in [&a, &b] {
        let out = guzheng(&["render", s(&reference_cfg()), s(p), "--duration", "1"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let audio = read_wav(&a).unwrap();
    assert_eq!(audio.len(), 48_000);
    assert_eq!(audio.sample_rate(), 48_000.0);
}

#[test]
fn dithered_pcm16_is_reproducible_per_seed() {
    let dir = TempDir::new().unwrap();
    let path = |n: &str| dir.path().join(n);
    for (name, seed) in [("a.wav", "7"), ("b.wav", "7"), ("c.wav", "8")] {
        let out = guzheng(&[
            "render",
            s(&reference_cfg()),
            s(&path(name)),
            "--duration",
            "1",
            "--normalize",
            "--pcm16",
            "--seed",
            seed,
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let read = |n: &str| fs::read(path(n)).unwrap();
    assert_eq!(read("a.wav"), read("b.wav"));
    assert_ne!(read("a.wav"), read("c.wav"));
}

#[test]
fn render_prints_the_loop_plan() {
    let dir = TempDir::new().unwrap();
    let out = guzheng(&[
        "render",
        s(&reference_cfg()),
        s(&dir.path().join("x.wav")),
        "--duration",
        "1",
    ]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("L             590"), "{text}");
    assert!(text.contains("D_frac"));
}

#[test]
fn render_with_body_ir() {
    let dir = TempDir::new().unwrap();
    let ir_path = dir.path().join("ir.wav");
    let ir: Vec<f64> = (0..2000)
        .map(|n| 0.5 * (-(n as f64) / 300.0).exp())
        .collect();
    write_wav(
        &ir_path,
        &AudioBuffer::new(ir, 48_000.0).unwrap(),
        WavFormat::Float32,
    )
    .unwrap();
    let out_path = dir.path().join("body.wav");
    let out = guzheng(&[
        "render",
        s(&reference_cfg()),
        s(&out_path),
        "--duration",
        "1",
        "--ir",
        s(&ir_path),
        "--normalize",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let audio = read_wav(&out_path).unwrap();
    assert!((audio.peak() - 10f64.powf(-1.0 / 20.0)).abs() < 1e-6);
}

#[test]
fn body_ir_at_another_rate_is_rejected() {
    let dir = TempDir::new().unwrap();
    let ir_path = dir.path().join("ir.wav");
    write_wav(
        &ir_path,
        &AudioBuffer::new(vec![1.0, 0.5], 44_100.0).unwrap(),
        WavFormat::Float32,
    )
    .unwrap();
    let out = guzheng(&[
        "render",
        s(&reference_cfg()),
        s(&dir.path().join("x.wav")),
        "--ir",
        s(&ir_path),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("sample rate mismatch"));
}

#[test]
fn zero_duration_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let out = guzheng(&[
        "render",
        s(&reference_cfg()),
        s(&dir.path().join("x.wav")),
        "--duration",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
    // warnings may precede the error line
    let err = stderr(&out);
    assert!(
        err.trim_end()
            .lines()
            .last()
            .unwrap()
            .starts_with("E_VALIDATION:"),
        "{err}"
    );
}

#[test]
fn bad_flags_exit_with_validation_code() {
    for args in [
        vec!["render", "a.cfg", "b.wav", "--method", "karplus"],
        vec!["render", "a.cfg", "b.wav", "--seed", "3"],
        vec!["frobnicate"],
    ] {
        let out = guzheng(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = stderr(&out);
        assert!(err.starts_with("E_VALIDATION:"), "{err}");
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    }
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let out = guzheng(&[
        "render",
        s(&dir.path().join("none.cfg")),
        s(&dir.path().join("x.wav")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).starts_with("E_IO:"));
}

#[test]
fn excite_writes_configured_length() {
    let dir = TempDir::new().unwrap();
    let default = dir.path().join("e.wav");
    let out = guzheng(&["excite", s(&reference_cfg()), s(&default)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(read_wav(&default).unwrap().len(), 4800);

    let longer = dir.path().join("e2.wav");
    let out = guzheng(&[
        "excite",
        s(&reference_cfg()),
        s(&longer),
        "--excitation-samples",
        "9600",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(read_wav(&longer).unwrap().len(), 9600);
}

#[test]
fn zero_force_excitation_is_silent_with_warning() {
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(reference_cfg())
        .unwrap()
        .replace("force = 1.0", "force = 0.0");
    let cfg = dir.path().join("zero.cfg");
    fs::write(&cfg, text).unwrap();
    let wav = dir.path().join("e.wav");
    let out = guzheng(&["excite", s(&cfg), s(&wav)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("silent"));
    assert_eq!(read_wav(&wav).unwrap().peak(), 0.0);
}

#[test]
fn estimate_damping_recovers_the_rendered_parameters() {
    let dir = TempDir::new().unwrap();
    let wav = dir.path().join("ftm.wav");
    let out = guzheng(&["render", s(&reference_cfg()), s(&wav), "--method", "ftm"]);
    assert!(out.status.success(), "{}", stderr(&out));

    let fitted = dir.path().join("fitted.cfg");
    let out = guzheng(&[
        "estimate-damping",
        s(&wav),
        s(&reference_cfg()),
        "--write-config",
        s(&fitted),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let truth = load_config(&reference_cfg()).unwrap().damping;
    let got = load_config(&fitted).unwrap().damping;
    assert!((got.d1 - truth.d1).abs() / truth.d1 < 0.05, "d1 {}", got.d1);
    assert!(
        (got.d3 - truth.d3).abs() / truth.d3.abs() < 0.05,
        "d3 {}",
        got.d3
    );
}

#[test]
fn estimate_damping_rejects_short_recordings() {
    let dir = TempDir::new().unwrap();
    let wav = dir.path().join("short.wav");
    let x: Vec<f64> = (0..24_000).map(|n| (n as f64 * 0.01).sin() * 0.5).collect();
    write_wav(
        &wav,
        &AudioBuffer::new(x, 48_000.0).unwrap(),
        WavFormat::Float32,
    )
    .unwrap();
    let out = guzheng(&["estimate-damping", s(&wav), s(&reference_cfg())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("E_COMPUTATION"));
}

#[test]
fn compare_of_a_file_with_itself_is_zero() {
    let dir = TempDir::new().unwrap();
    let wav = dir.path().join("x.wav");
    let out = guzheng(&["render", s(&reference_cfg()), s(&wav), "--duration", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = dir.path().join("cmp.csv");
    let out = guzheng(&["compare", s(&wav), s(&wav), "--csv", s(&csv)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(!rows.is_empty());
    for row in rows {
        let err = row.rsplit(',').next().unwrap();
        if !err.is_empty() {
            assert_eq!(err.parse::<f64>().unwrap(), 0.0, "{row}");
        }
    }
}

#[test]
fn compare_rejects_mismatched_rates() {
    let dir = TempDir::new().unwrap();
    let tone = |fs: f64| {
        let x = (0..(1.5 * fs) as usize)
            .map(|n| (2.0 * std::f64::consts::PI * 110.0 * n as f64 / fs).sin())
            .collect();
        AudioBuffer::new(x, fs).unwrap()
    };
    let (a, b) = (dir.path().join("a.wav"), dir.path().join("b.wav"));
    write_wav(&a, &tone(48_000.0), WavFormat::Float32).unwrap();
    write_wav(&b, &tone(44_100.0), WavFormat::Float32).unwrap();
    let out = guzheng(&["compare", s(&a), s(&b)]);
    assert!(!out.status.success());
    assert!(
        stderr(&out).contains("sample rate mismatch"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn bench_writes_one_csv_per_method() {
    let dir = TempDir::new().unwrap();
    let out = guzheng(&[
        "bench",
        s(&reference_cfg()),
        s(dir.path()),
        "--lengths",
        "0.1,0.2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for m in ["hybrid", "ftm", "dwg"] {
        let text = fs::read_to_string(dir.path().join(format!("bench_{m}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 3, "{text}");
    }
}

#[test]
fn bench_rejects_too_few_repeats() {
    let dir = TempDir::new().unwrap();
    let out = guzheng(&[
        "bench",
        s(&reference_cfg()),
        s(dir.path()),
        "--repeats",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn design_report_lists_modes_and_filters() {
    let out = guzheng(&["design-report", s(&reference_cfg())]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("modal bank"));
    assert!(text.contains("A_d(z)"));
}

#[test]
fn estimate_damping_on_noise_finds_no_tracks() {
    use rand::{Rng, SeedableRng};
    let dir = TempDir::new().unwrap();
    let wav = dir.path().join("noise.wav");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..96_000).map(|_| rng.gen_range(-0.3..0.3)).collect();
    write_wav(
        &wav,
        &AudioBuffer::new(x, 48_000.0).unwrap(),
        WavFormat::Float32,
    )
    .unwrap();
    let out = guzheng(&["estimate-damping", s(&wav), s(&reference_cfg())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no coherent"), "{}", stderr(&out));
}
