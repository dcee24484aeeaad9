//! Evaluation: pitch and decay measurement, per-mode spectral error and the
//! runtime-vs-length benchmark.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::hint::black_box;
use std::time::Instant;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::config::AudioBuffer;
use crate::damping::{measure_partial_decay, StftSettings};
use crate::dsp::{
    hann_symmetric, linear_fit, magnitude_spectrum, median, parabolic_peak, refine_dtft_peak,
};
use crate::error::{Error, Result};
use crate::pipeline::{Instrument, Method};

/// Shortest signal accepted by the pitch and spectrum analysis, seconds.
pub const MIN_ANALYSIS_S: f64 = 1.0;
/// Normalized cross-correlation needed to call a signal periodic.
pub const PERIODICITY_THRESHOLD: f64 = 0.5;
/// Pitch search range used when comparing spectra, Hz.
pub const DEFAULT_F0_RANGE: (f64, f64) = (20.0, 1000.0);
/// Untimed runs per method before measuring.
pub const WARMUP_RUNS: usize = 2;
pub const MIN_REPEATS: usize = 10;

const F0_ANALYSIS_S: f64 = 2.0;
const REFINE_TOLERANCE: f64 = 0.03;
const PEAK_SEARCH_HALF_WIDTH: f64 = 0.3;
/// Partials weaker than this (relative to the fundamental) count as absent.
const ABSENT_LEVEL: f64 = 1e-6;

fn check_analysis_length(signal: &AudioBuffer, what: &str) -> Result<()> {
    if signal.duration() < MIN_ANALYSIS_S {
        return Err(Error::validation(
            "signal",
            format!(
                "{what} needs at least {MIN_ANALYSIS_S} s of audio, got {:.3} s",
                signal.duration()
            ),
        ));
    }
    Ok(())
}

/// Normalized cross-correlation r(τ)/√(E_head(τ)·E_tail(τ)) for τ in 0..=max_lag.
fn nccf(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let fft_len = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = (0..fft_len)
        .map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    planner.plan_fft_forward(fft_len).process(&mut buf);
    for b in buf.iter_mut() {
        *b = Complex64::new(b.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(fft_len).process(&mut buf);

    let mut cum = vec![0.0; n + 1];
    for (i, v) in x.iter().enumerate() {
        cum[i + 1] = cum[i] + v * v;
    }
    (0..=max_lag)
        .map(|tau| {
            let head = cum[n - tau];
            let tail = cum[n] - cum[tau];
            let denom = (head * tail).sqrt();
            if denom > 0.0 {
                buf[tau].re / fft_len as f64 / denom
            } else {
                0.0
            }
        })
        .collect()
}

/// Fundamental frequency in Hz within `search_range`.
///
/// The normalized autocorrelation picks the period (smallest-lag peak within
/// 10% of the strongest, parabolically interpolated); the lowest spectral
/// peak near that estimate then sets the final value.
pub fn estimate_f0(signal: &AudioBuffer, search_range: (f64, f64)) -> Result<f64> {
    check_analysis_length(signal, "pitch estimation")?;
    let (lo, hi) = search_range;
    let fs = signal.sample_rate();
    if !(lo > 0.0 && hi > lo && hi < fs / 2.0) {
        return Err(Error::validation(
            "search_range",
            format!("need 0 < low < high < Nyquist, got [{lo}, {hi}] Hz"),
        ));
    }
    let take = ((F0_ANALYSIS_S * fs) as usize).min(signal.len());
    let x = &signal.samples()[..take];

    let min_lag = ((fs / hi).floor() as usize).max(1);
    let max_lag = ((fs / lo).ceil() as usize).min(take / 2);
    if max_lag <= min_lag + 1 {
        return Err(Error::validation(
            "search_range",
            "range too narrow for the sample rate".to_string(),
        ));
    }
    let r = nccf(x, max_lag + 1);
    let peaks: Vec<usize> = (min_lag.max(1)..=max_lag)
        .filter(|&t| r[t] > r[t - 1] && r[t] >= r[t + 1])
        .collect();
    let best = peaks
        .iter()
        .map(|&t| r[t])
        .fold(f64::NEG_INFINITY, f64::max);
    if !(best >= PERIODICITY_THRESHOLD) {
        return Err(Error::NoPeriodicity(format!(
            "best normalized autocorrelation {best:.3} in {lo}-{hi} Hz is below {PERIODICITY_THRESHOLD}"
        )));
    }
    let lag = peaks
        .into_iter()
        .find(|&t| r[t] >= 0.9 * best)
        .expect("the best peak qualifies");
    let (offset, _) = parabolic_peak(r[lag - 1], r[lag], r[lag + 1]);
    let f_acf = fs / (lag as f64 + offset);

    let win = hann_symmetric(take);
    let windowed: Vec<f64> = x.iter().zip(&win).map(|(a, w)| a * w).collect();
    let w_lo = (f_acf * (1.0 - REFINE_TOLERANCE)).max(lo) * 2.0 * PI / fs;
    let w_hi = (f_acf * (1.0 + REFINE_TOLERANCE)).min(hi) * 2.0 * PI / fs;
    let (omega, _) = refine_dtft_peak(&windowed, w_lo, w_hi);
    Ok(omega * fs / (2.0 * PI))
}

/// Decay rate (1/s, negative for a decaying partial) of the partial nearest `freq_hz`.
pub fn measure_decay(signal: &AudioBuffer, freq_hz: f64) -> Result<f64> {
    Ok(measure_partial_decay(signal, freq_hz, StftSettings::default())?.fitted_sigma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeError {
    pub mode_index: u32,
    /// Fundamental-normalized partial magnitude; `None` when no peak was found.
    pub reference: Option<f64>,
    pub candidate: Option<f64>,
}

impl ModeError {
    /// |candidate − reference|, or `None` when either peak is absent.
    pub fn error(&self) -> Option<f64> {
        Some((self.candidate? - self.reference?).abs())
    }
}

/// Per-mode spectral comparison of two string signals. Mode 1 is the
/// normalization reference and is not listed.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralErrorReport {
    pub reference_id: String,
    pub candidate_id: String,
    pub reference_f0: f64,
    pub candidate_f0: f64,
    pub modes: Vec<ModeError>,
}

impl SpectralErrorReport {
    pub fn labelled(mut self, reference_id: &str, candidate_id: &str) -> Self {
        self.reference_id = reference_id.to_string();
        self.candidate_id = candidate_id.to_string();
        self
    }

    pub fn error(&self, mode_index: u32) -> Option<f64> {
        self.modes
            .iter()
            .find(|m| m.mode_index == mode_index)
            .and_then(ModeError::error)
    }

    /// One row per mode: `mode,reference,candidate,error`; absent values are empty.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_default();
        let mut out = String::from("mode,reference,candidate,error\n");
        for m in &self.modes {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                m.mode_index,
                cell(m.reference),
                cell(m.candidate),
                cell(m.error())
            );
        }
        out
    }
}

impl fmt::Display for SpectralErrorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "spectral error: {} (f0 {:.3} Hz) vs {} (f0 {:.3} Hz)",
            self.reference_id, self.reference_f0, self.candidate_id, self.candidate_f0
        )?;
        writeln!(
            f,
            "{:>5} {:>12} {:>12} {:>12}",
            "mode", "reference", "candidate", "error"
        )?;
        writeln!(f, "{:>5} {:>12} {:>12} {:>12}", 1, "1", "1", "-")?;
        let cell = |v: Option<f64>| {
            v.map(|x| format!("{x:.6}"))
                .unwrap_or_else(|| "absent".into())
        };
        for m in &self.modes {
            writeln!(
                f,
                "{:>5} {:>12} {:>12} {:>12}",
                m.mode_index,
                cell(m.reference),
                cell(m.candidate),
                cell(m.error())
            )?;
        }
        Ok(())
    }
}

struct PartialAmplitudes {
    f0: f64,
    /// Index μ − 1 → magnitude relative to the fundamental.
    amps: Vec<Option<f64>>,
}

fn partial_amplitudes(signal: &AudioBuffer, num_modes: u32) -> Result<PartialAmplitudes> {
    let fs = signal.sample_rate();
    let f0 = estimate_f0(signal, DEFAULT_F0_RANGE)?;
    let take = (MIN_ANALYSIS_S * fs) as usize;
    let win = hann_symmetric(take);
    let x: Vec<f64> = signal.samples()[..take]
        .iter()
        .zip(&win)
        .map(|(a, w)| a * w)
        .collect();
    let n_fft = (4 * take).next_power_of_two();
    let mag = magnitude_spectrum(&mut FftPlanner::new(), &x, n_fft);
    let bin_hz = fs / n_fft as f64;

    let mut raw = Vec::with_capacity(num_modes as usize);
    for mu in 1..=num_modes {
        let centre = mu as f64 * f0;
        let lo = ((centre - PEAK_SEARCH_HALF_WIDTH * f0) / bin_hz)
            .ceil()
            .max(1.0) as usize;
        let hi = ((centre + PEAK_SEARCH_HALF_WIDTH * f0) / bin_hz).floor() as usize;
        if hi + 1 >= mag.len() || hi <= lo {
            raw.push(None);
            continue;
        }
        let k = (lo..=hi)
            .max_by(|&a, &b| mag[a].total_cmp(&mag[b]))
            .expect("non-empty range");
        // An edge maximum means the window holds no actual peak.
        if k == lo || k == hi || mag[k] <= 0.0 {
            raw.push(None);
            continue;
        }
        let to_omega = 2.0 * PI / n_fft as f64;
        let (_, m) = refine_dtft_peak(&x, (k - 1) as f64 * to_omega, (k + 1) as f64 * to_omega);
        raw.push(Some(m.max(mag[k])));
    }
    let fundamental =
        raw[0].ok_or_else(|| Error::Estimation(format!("no fundamental peak near {f0:.2} Hz")))?;
    let amps = raw
        .into_iter()
        .map(|m| m.map(|v| v / fundamental).filter(|&a| a >= ABSENT_LEVEL))
        .collect();
    Ok(PartialAmplitudes { f0, amps })
}

/// Compares fundamental-normalized partial magnitudes over the first second
/// (Hann window) of both signals, modes 2..=num_modes.
pub fn spectral_mode_error(
    reference: &AudioBuffer,
    candidate: &AudioBuffer,
    num_modes: u32,
) -> Result<SpectralErrorReport> {
    if reference.sample_rate() != candidate.sample_rate() {
        return Err(Error::SampleRateMismatch {
            signal: candidate.sample_rate(),
            ir: reference.sample_rate(),
        });
    }
    if num_modes < 2 {
        return Err(Error::validation(
            "num_modes",
            format!("must be >= 2, got {num_modes}"),
        ));
    }
    check_analysis_length(reference, "spectral comparison")?;
    check_analysis_length(candidate, "spectral comparison")?;
    let r = partial_amplitudes(reference, num_modes)?;
    let c = partial_amplitudes(candidate, num_modes)?;
    let modes = (2..=num_modes)
        .map(|mu| ModeError {
            mode_index: mu,
            reference: r.amps[(mu - 1) as usize],
            candidate: c.amps[(mu - 1) as usize],
        })
        .collect();
    Ok(SpectralErrorReport {
        reference_id: "reference".into(),
        candidate_id: "candidate".into(),
        reference_f0: r.f0,
        candidate_f0: c.f0,
        modes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkPoint {
    pub length: usize,
    /// Median wall time, seconds.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub method: Method,
    /// Sorted by length.
    pub points: Vec<BenchmarkPoint>,
    /// Least-squares slope of time against length, seconds per sample.
    pub slope: f64,
    pub linear_fit_r2: f64,
}

impl BenchmarkReport {
    pub fn time_at(&self, length: usize) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.length == length)
            .map(|p| p.seconds)
    }
}

/// Times `instrument.render(method, length)` for every method and length.
///
/// Each (method, length) pair is run `repeats` times and the median kept;
/// [`WARMUP_RUNS`] untimed renders per method come first. Runs are sequential
/// on the calling thread.
pub fn run_benchmark(
    instrument: &Instrument,
    methods: &[Method],
    lengths: &[usize],
    repeats: usize,
) -> Result<Vec<BenchmarkReport>> {
    if repeats < MIN_REPEATS {
        return Err(Error::validation(
            "repeats",
            format!("need at least {MIN_REPEATS}, got {repeats}"),
        ));
    }
    if lengths.len() < 2 || lengths.contains(&0) {
        return Err(Error::validation(
            "lengths",
            "need at least two positive render lengths".to_string(),
        ));
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let mut reports = Vec::with_capacity(methods.len());
    for &method in methods {
        for _ in 0..WARMUP_RUNS {
            black_box(instrument.render(method, sorted[0]));
        }
        let mut points = Vec::with_capacity(sorted.len());
        for &length in &sorted {
            let mut times: Vec<f64> = (0..repeats)
                .map(|_| {
                    let start = Instant::now();
                    black_box(instrument.render(black_box(method), black_box(length)));
                    start.elapsed().as_secs_f64()
                })
                .collect();
            points.push(BenchmarkPoint {
                length,
                seconds: median(&mut times).max(f64::MIN_POSITIVE),
            });
        }
        let xs: Vec<f64> = points.iter().map(|p| p.length as f64).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.seconds).collect();
        let fit = linear_fit(&xs, &ys).ok_or_else(|| {
            Error::Estimation("benchmark lengths do not admit a linear fit".into())
        })?;
        reports.push(BenchmarkReport {
            method,
            points,
            slope: fit.slope,
            linear_fit_r2: fit.r_squared,
        });
    }
    Ok(reports)
}

/// Aligned text table of benchmark results.
pub fn benchmark_table(reports: &[BenchmarkReport], sample_rate: f64) -> String {
    let mut out = format!(
        "{:<8} {:>10} {:>10} {:>12} {:>10}\n",
        "method", "length", "seconds", "median s", "realtime"
    );
    for r in reports {
        for p in &r.points {
            let dur = p.length as f64 / sample_rate;
            let _ = writeln!(
                out,
                "{:<8} {:>10} {:>10.3} {:>12.6} {:>9.1}x",
                r.method.name(),
                p.length,
                dur,
                p.seconds,
                dur / p.seconds
            );
        }
        let _ = writeln!(
            out,
            "{:<8} slope {:.4e} s/sample, R^2 {:.5}",
            r.method.name(),
            r.slope,
            r.linear_fit_r2
        );
    }
    out
}

/// One row per benchmark point: `method,length,median_seconds`.
pub fn benchmark_csv(report: &BenchmarkReport) -> String {
    let mut out = String::from("method,length,median_seconds\n");
    for p in &report.points {
        let _ = writeln!(
            out,
            "{},{},{:.9e}",
            report.method.name(),
            p.length,
            p.seconds
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FS: f64 = 48_000.0;

    fn partials(f0: f64, amps: &[f64], secs: f64) -> AudioBuffer {
        let n = (secs * FS) as usize;
        let x = (0..n)
            .map(|i| {
                let t = i as f64 / FS;
                amps.iter()
                    .enumerate()
                    .map(|(k, a)| a * (2.0 * PI * f0 * (k + 1) as f64 * t).sin())
                    .sum()
            })
            .collect();
        AudioBuffer::new(x, FS).unwrap()
    }

    #[test]
    fn pure_sinusoid_pitch() {
        let x = partials(73.42, &[1.0], 2.0);
        let f = estimate_f0(&x, (50.0, 200.0)).unwrap();
        assert!((f - 73.42).abs() < 0.05, "{f}");
    }

    #[test]
    fn inharmonic_tone_reports_lowest_partial() {
        let b: f64 = 1e-4;
        let n = (2.0 * FS) as usize;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / FS;
                (1..=8)
                    .map(|k| {
                        let k = k as f64;
                        let f = 100.0 * k * (1.0 + b * k * k).sqrt();
                        (2.0 * PI * f * t).sin() / k
                    })
                    .sum()
            })
            .collect();
        let f = estimate_f0(&AudioBuffer::new(x, FS).unwrap(), (50.0, 400.0)).unwrap();
        let lowest = 100.0 * (1.0 + b).sqrt();
        assert!((f - lowest).abs() < 0.5, "{f}");
    }

    #[test]
    fn white_noise_has_no_pitch() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..96_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let err = estimate_f0(&AudioBuffer::new(x, FS).unwrap(), (50.0, 400.0)).unwrap_err();
        assert!(matches!(err, Error::NoPeriodicity(_)));
    }

    #[test]
    fn short_signal_is_rejected() {
        let x = partials(100.0, &[1.0], 0.5);
        assert!(estimate_f0(&x, (50.0, 400.0)).is_err());
    }

    #[test]
    fn identical_signals_have_zero_error() {
        let x = partials(
            73.42,
            &[1.0, 0.4, 0.3, 0.2, 0.15, 0.1, 0.08, 0.05, 0.03, 0.02],
            1.5,
        );
        let rep = spectral_mode_error(&x, &x, 10).unwrap();
        assert_eq!(rep.modes.len(), 9);
        for m in &rep.modes {
            assert_eq!(m.error(), Some(0.0));
        }
    }

    #[test]
    fn scaled_second_partial_shows_up_in_mode_two_only() {
        let mut amps = vec![1.0, 0.4, 0.3, 0.2, 0.15, 0.1, 0.08, 0.05, 0.03, 0.02];
        let reference = partials(73.42, &amps, 1.5);
        amps[1] *= 1.5;
        let candidate = partials(73.42, &amps, 1.5);
        let rep = spectral_mode_error(&reference, &candidate, 10).unwrap();
        assert!((rep.error(2).unwrap() - 0.2).abs() < 0.01);
        for mu in 3..=10 {
            assert!(rep.error(mu).unwrap() < 0.01, "mode {mu}");
        }
    }

    #[test]
    fn missing_partial_is_absent_not_zero() {
        let reference = partials(73.42, &[1.0, 0.4, 0.3], 1.2);
        let candidate = partials(73.42, &[1.0, 0.0, 0.3], 1.2);
        let rep = spectral_mode_error(&reference, &candidate, 3).unwrap();
        assert_eq!(rep.modes[0].candidate, None);
        assert_eq!(rep.error(2), None);
        assert!(rep.error(3).unwrap() < 0.01);
    }

    #[test]
    fn rate_mismatch_is_rejected() {
        let a = partials(100.0, &[1.0], 1.0);
        let b = AudioBuffer::new(vec![0.0; 44_100], 44_100.0).unwrap();
        assert!(matches!(
            spectral_mode_error(&a, &b, 5),
            Err(Error::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn benchmark_needs_ten_repeats() {
        let inst = Instrument::new(&Config::reference()).unwrap();
        assert!(run_benchmark(&inst, &[Method::Dwg], &[100, 200], 9).is_err());
    }

    #[test]
    fn benchmark_points_are_sorted_and_positive() {
        let inst = Instrument::new(&Config::reference()).unwrap();
        let reps = run_benchmark(&inst, &[Method::Dwg], &[4000, 1000, 2000], 10).unwrap();
        let lengths: Vec<usize> = reps[0].points.iter().map(|p| p.length).collect();
        assert_eq!(lengths, vec![1000, 2000, 4000]);
        assert!(reps[0].points.iter().all(|p| p.seconds > 0.0));
        assert!(benchmark_csv(&reps[0]).lines().count() == 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn pitch_is_scale_invariant(gain in 1e-3f64..1e3, f0 in 60.0f64..300.0) {
            let x = partials(f0, &[1.0, 0.5, 0.25], 1.0);
            let a = estimate_f0(&x, (40.0, 600.0)).unwrap();
            let b = estimate_f0(&x.scaled(gain), (40.0, 600.0)).unwrap();
            prop_assert!((a - b).abs() < 1e-6);
        }

        #[test]
        fn spectral_error_is_symmetric(s2 in 0.2f64..2.0, s3 in 0.2f64..2.0) {
            let a = partials(110.0, &[1.0, 0.4, 0.3, 0.2], 1.0);
            let b = partials(110.0, &[1.0, 0.4 * s2, 0.3 * s3, 0.2], 1.0);
            let ab = spectral_mode_error(&a, &b, 4).unwrap();
            let ba = spectral_mode_error(&b, &a, 4).unwrap();
            for mu in 2..=4 {
                prop_assert_eq!(ab.error(mu), ba.error(mu));
            }
        }
    }
}
