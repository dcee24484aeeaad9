//! Small numeric helpers shared by the analysis-side modules.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Periodic Hann window (the STFT-friendly variant).
pub(crate) fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Symmetric Hann window.
pub(crate) fn hann_symmetric(n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![1.0; n];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Magnitude spectrum (bins 0..=n/2) of `x` zero-padded to `n`.
pub(crate) fn magnitude_spectrum(planner: &mut FftPlanner<f64>, x: &[f64], n: usize) -> Vec<f64> {
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    fft.process(&mut buf);
    buf[..=n / 2].iter().map(|c| c.norm()).collect()
}

/// |Σ x[n]·e^{−jωn}| at `omega` rad/sample.
pub(crate) fn dtft_magnitude(x: &[f64], omega: f64) -> f64 {
    let step = Complex64::from_polar(1.0, -omega);
    let mut phasor = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        acc += v * phasor;
        phasor *= step;
        if i % 1024 == 1023 {
            phasor = Complex64::from_polar(1.0, -omega * (i + 1) as f64);
        }
    }
    acc.norm()
}

/// Golden-section search for the maximum of |DTFT(x)| on [lo, hi] (rad/sample).
/// Returns (omega, magnitude).
pub(crate) fn refine_dtft_peak(x: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = dtft_magnitude(x, c);
    let mut fd = dtft_magnitude(x, d);
    while (b - a) > 1e-10 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = dtft_magnitude(x, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = dtft_magnitude(x, d);
        }
    }
    let w = 0.5 * (a + b);
    (w, dtft_magnitude(x, w))
}

/// Vertex of the parabola through (−1, ym), (0, y0), (1, yp): (offset, value).
pub(crate) fn parabolic_peak(ym: f64, y0: f64, yp: f64) -> (f64, f64) {
    let denom = ym - 2.0 * y0 + yp;
    if denom >= 0.0 || !denom.is_finite() {
        return (0.0, y0);
    }
    let offset = (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5);
    (offset, y0 - 0.25 * (ym - yp) * offset)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Root-mean-square residual.
    pub rms_residual: f64,
}

/// Ordinary least squares y = slope·x + intercept.
pub(crate) fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Some(LineFit {
        slope,
        intercept,
        r_squared,
        rms_residual: (ss_res / nf).sqrt(),
    })
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let mid = values.len() / 2;
    if values.len() % 2 == 0 {
        0.5 * (values[mid - 1] + values[mid])
    } else {
        values[mid]
    }
}
