//! Estimation of the decay parameters d₁, d₃ from a recorded string signal.
//!
//! Each partial is tracked through a short-time Fourier transform, its decay
//! rate σ̂_μ is the slope of ln-amplitude against time, and the damping
//! parameters follow from regressing σ̂_μ on γ_μ², since
//! σ_μ = (d₃·γ_μ² − d₁) / (2ε).

use std::f64::consts::PI;
use std::fmt;

use rustfft::FftPlanner;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::config::{AudioBuffer, DampingParams, StringPhysics};
use crate::dsp::{hann_periodic, linear_fit, median, parabolic_peak};
use crate::error::{Error, Result};
use crate::modal::mode_frequency;

/// Shortest recording accepted, seconds.
pub const MIN_RECORDING_S: f64 = 1.0;
/// Half-width of the peak search around each predicted partial.
pub const SEARCH_TOLERANCE: f64 = 0.03;
/// A frame counts as "above the floor" when it exceeds the noise floor by this much.
pub const FLOOR_MARGIN_DB: f64 = 6.0;
/// Tracks end once they fall this far below the frame's strongest peak, where
/// window leakage from louder partials starts to dominate.
pub const DYNAMIC_RANGE_DB: f64 = 50.0;
/// Probability that a noise-only bin exceeds the noise floor.
pub const NOISE_EXCEEDANCE: f64 = 0.01;
pub const MIN_TRACK_FRAMES: usize = 5;
pub const MIN_TRACK_R2: f64 = 0.5;
/// R² says nothing about a flat (undamped) track; such a track is kept when
/// its ln-amplitude residual stays below this.
pub const FLAT_TRACK_RESIDUAL: f64 = 0.01;
/// Frames skipped after a track's maximum before fitting starts.
pub const ATTACK_SKIP_FRAMES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftSettings {
    pub window: usize,
    pub hop: usize,
}

impl Default for StftSettings {
    /// 2560-sample periodic Hann (3.9 bins between partials of a 73 Hz
    /// string at 48 kHz), hop 128.
    fn default() -> Self {
        Self {
            window: 2560,
            hop: 128,
        }
    }
}

/// Level exceeded by a fraction [`NOISE_EXCEEDANCE`] of Rayleigh-distributed
/// noise bins, scaled from the frame's median magnitude.
fn noise_floor(mag: &[f64]) -> f64 {
    median(&mut mag.to_vec()) * ((1.0 / NOISE_EXCEEDANCE).ln() / std::f64::consts::LN_2).sqrt()
}

/// One partial followed through the spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialTrack {
    pub mode_index: u32,
    /// Median tracked peak frequency over the fit window, Hz.
    pub frequency: f64,
    /// (time s, ln amplitude) for every frame inside the fit window.
    pub log_amp_samples: Vec<(f64, f64)>,
    /// Least-squares slope of ln amplitude, 1/s.
    pub fitted_sigma: f64,
    pub fit_r2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingFit {
    pub d1: f64,
    pub d3: f64,
    pub r_squared: f64,
    pub p_value: f64,
    pub tracks_used: usize,
}

impl DampingFit {
    pub fn params(&self) -> Result<DampingParams> {
        DampingParams::new(self.d1, self.d3)
    }
}

/// Magnitude spectrogram with per-frame noise floor.
struct Spectrogram {
    frames: Vec<Vec<f64>>,
    floors: Vec<f64>,
    times: Vec<f64>,
    bin_hz: f64,
}

impl Spectrogram {
    fn compute(recording: &AudioBuffer, settings: StftSettings) -> Result<Self> {
        let x = recording.samples();
        let StftSettings { window, hop } = settings;
        if window < 16 || hop == 0 || hop > window {
            return Err(Error::validation(
                "stft",
                format!("invalid window {window} / hop {hop}"),
            ));
        }
        if x.len() < window {
            return Err(Error::Estimation(format!(
                "recording of {} samples is shorter than one {window}-sample frame",
                x.len()
            )));
        }
        let win = hann_periodic(window);
        let mut planner = FftPlanner::new();
        let fs = recording.sample_rate();
        let n_frames = (x.len() - window) / hop + 1;
        let mut frames = Vec::with_capacity(n_frames);
        let mut floors = Vec::with_capacity(n_frames);
        let mut times = Vec::with_capacity(n_frames);
        let mut seg = vec![0.0; window];
        for f in 0..n_frames {
            let start = f * hop;
            for (i, s) in seg.iter_mut().enumerate() {
                *s = x[start + i] * win[i];
            }
            let mag = crate::dsp::magnitude_spectrum(&mut planner, &seg, window);
            let top = mag.iter().copied().fold(0.0, f64::max);
            floors.push(noise_floor(&mag).max(top * 10f64.powf(-DYNAMIC_RANGE_DB / 20.0)));
            frames.push(mag);
            times.push((start as f64 + window as f64 / 2.0) / fs);
        }
        Ok(Self {
            frames,
            floors,
            times,
            bin_hz: fs / window as f64,
        })
    }

    /// Per-frame (ln amplitude, frequency Hz) of the strongest peak within
    /// `freq·(1 ± tol)`, widened to at least one bin either side.
    fn follow(&self, freq: f64, tol: f64) -> Vec<(f64, f64)> {
        let n_bins = self.frames[0].len();
        let centre = (freq / self.bin_hz).round() as isize;
        let lo = ((freq * (1.0 - tol) / self.bin_hz).floor() as isize)
            .min(centre - 1)
            .max(1);
        let hi = ((freq * (1.0 + tol) / self.bin_hz).ceil() as isize)
            .max(centre + 1)
            .min(n_bins as isize - 2);
        self.frames
            .iter()
            .map(|mag| {
                if lo > hi {
                    return (f64::NEG_INFINITY, freq);
                }
                let (k, _) = (lo..=hi).map(|k| (k as usize, mag[k as usize])).fold(
                    (lo as usize, f64::MIN),
                    |best, c| if c.1 > best.1 { c } else { best },
                );
                let (ym, y0, yp) = (mag[k - 1].ln(), mag[k].ln(), mag[k + 1].ln());
                // A maximum on the range edge is a neighbour's skirt, not a peak.
                if k as isize == lo || k as isize == hi {
                    return (f64::NEG_INFINITY, freq);
                }
                if !y0.is_finite() {
                    return (f64::NEG_INFINITY, freq);
                }
                let (offset, peak) = if ym.is_finite() && yp.is_finite() {
                    parabolic_peak(ym, y0, yp)
                } else {
                    (0.0, y0)
                };
                (peak, (k as f64 + offset) * self.bin_hz)
            })
            .collect()
    }

    /// Fits the free-decay part of a followed peak. `None` when the track is
    /// too short or too noisy.
    fn fit_track(&self, mode_index: u32, peaks: &[(f64, f64)]) -> Option<PartialTrack> {
        let (argmax, _) = peaks
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, p)| {
                if p.0 > best.1 {
                    (i, p.0)
                } else {
                    best
                }
            });
        let start = argmax + ATTACK_SKIP_FRAMES;
        let margin = FLOOR_MARGIN_DB / 20.0 * std::f64::consts::LN_10;
        let end = (start..peaks.len())
            .find(|&i| !(peaks[i].0 >= self.floors[i].ln() + margin))
            .unwrap_or(peaks.len());
        if end < start + MIN_TRACK_FRAMES {
            return None;
        }
        let times = &self.times[start..end];
        let logs: Vec<f64> = peaks[start..end].iter().map(|p| p.0).collect();
        let fit = linear_fit(times, &logs)?;
        if !fit.slope.is_finite()
            || (fit.r_squared < MIN_TRACK_R2 && fit.rms_residual > FLAT_TRACK_RESIDUAL)
        {
            return None;
        }
        let mut freqs: Vec<f64> = peaks[start..end].iter().map(|p| p.1).collect();
        Some(PartialTrack {
            mode_index,
            frequency: median(&mut freqs),
            log_amp_samples: times.iter().copied().zip(logs).collect(),
            fitted_sigma: fit.slope,
            fit_r2: fit.r_squared,
        })
    }
}

fn check_length(recording: &AudioBuffer) -> Result<()> {
    if recording.duration() < MIN_RECORDING_S {
        return Err(Error::Estimation(format!(
            "recording is {:.3} s long, at least {MIN_RECORDING_S} s is needed",
            recording.duration()
        )));
    }
    Ok(())
}

/// Tracks partials 1..=max_modes with the default STFT settings.
pub fn track_partials(
    recording: &AudioBuffer,
    physics: &StringPhysics,
    max_modes: u32,
) -> Result<Vec<PartialTrack>> {
    track_partials_with(recording, physics, max_modes, StftSettings::default())
}

/// Tracks partials 1..=max_modes. The search for mode μ is centred on the
/// undamped modal frequency of `physics`.
pub fn track_partials_with(
    recording: &AudioBuffer,
    physics: &StringPhysics,
    max_modes: u32,
    settings: StftSettings,
) -> Result<Vec<PartialTrack>> {
    check_length(recording)?;
    let spec = Spectrogram::compute(recording, settings)?;
    let nyquist = recording.sample_rate() / 2.0;
    let mut tracks = Vec::new();
    for mu in 1..=max_modes {
        let m = mode_frequency(physics, &DampingParams::LOSSLESS, mu);
        let freq = m.omega() / (2.0 * PI);
        if !(freq.is_finite() && freq > 0.0) || freq * (1.0 + SEARCH_TOLERANCE) >= nyquist {
            break;
        }
        let peaks = spec.follow(freq, SEARCH_TOLERANCE);
        tracks.extend(spec.fit_track(mu, &peaks));
    }
    if tracks.len() < 3 {
        return Err(Error::Estimation(format!(
            "no coherent tracks: only {} of {max_modes} partials decayed cleanly above the noise floor (need 3)",
            tracks.len()
        )));
    }
    Ok(tracks)
}

/// Decay of the partial nearest `freq_hz`.
pub fn measure_partial_decay(
    recording: &AudioBuffer,
    freq_hz: f64,
    settings: StftSettings,
) -> Result<PartialTrack> {
    check_length(recording)?;
    let spec = Spectrogram::compute(recording, settings)?;
    let peaks = spec.follow(freq_hz, SEARCH_TOLERANCE);
    spec.fit_track(1, &peaks).ok_or_else(|| {
        Error::Estimation(format!(
            "no clean exponential decay found near {freq_hz:.2} Hz"
        ))
    })
}

/// Ordinary least squares of σ̂_μ on γ_μ²: d₃ = 2ε·slope, d₁ = −2ε·intercept.
pub fn fit_damping(tracks: &[PartialTrack], physics: &StringPhysics) -> Result<DampingFit> {
    if tracks.len() < 3 {
        return Err(Error::Estimation(format!(
            "regression needs at least 3 tracks, got {}",
            tracks.len()
        )));
    }
    let gamma2: Vec<f64> = tracks
        .iter()
        .map(|t| (t.mode_index as f64 * PI / physics.length).powi(2))
        .collect();
    let sigmas: Vec<f64> = tracks.iter().map(|t| t.fitted_sigma).collect();
    let fit = linear_fit(&gamma2, &sigmas).ok_or_else(|| {
        Error::Estimation("singular regression: all tracks share one mode number".into())
    })?;
    let n = tracks.len();
    let dof = (n - 2) as f64;
    let p_value = if fit.r_squared >= 1.0 {
        0.0
    } else {
        let f_stat = fit.r_squared / (1.0 - fit.r_squared) * dof;
        FisherSnedecor::new(1.0, dof)
            .map(|d| d.sf(f_stat))
            .map_err(|e| Error::Estimation(e.to_string()))?
    };
    Ok(DampingFit {
        d1: -2.0 * physics.epsilon * fit.intercept,
        d3: 2.0 * physics.epsilon * fit.slope,
        r_squared: fit.r_squared,
        p_value,
        tracks_used: n,
    })
}

/// Per-track table followed by the regression result.
pub struct FitReport<'a> {
    pub tracks: &'a [PartialTrack],
    pub fit: &'a DampingFit,
}

impl fmt::Display for FitReport<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>4} {:>10} {:>12} {:>8} {:>7}",
            "mu", "f (Hz)", "sigma (1/s)", "R^2", "frames"
        )?;
        for t in self.tracks {
            writeln!(
                f,
                "{:>4} {:>10.3} {:>12.4} {:>8.4} {:>7}",
                t.mode_index,
                t.frequency,
                t.fitted_sigma,
                t.fit_r2,
                t.log_amp_samples.len()
            )?;
        }
        writeln!(f)?;
        writeln!(f, "d1  = {:.6}", self.fit.d1)?;
        writeln!(f, "d3  = {:.6e}", self.fit.d3)?;
        writeln!(f, "R^2 = {:.4}", self.fit.r_squared)?;
        writeln!(f, "p   = {:.3e}", self.fit.p_value)?;
        write!(f, "tracks used: {}", self.fit.tracks_used)
    }
}
