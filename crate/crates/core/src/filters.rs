//! Loop filters: second-order Thiran all-pass and the one-pole loss filter.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::config::{AudioBuffer, DampingParams, RenderConfig, StringPhysics};
use crate::error::{Error, Result};
use crate::modal::{flush, mode_frequency};

/// Order of every Thiran section in the loop.
pub const THIRAN_ORDER: usize = 2;

/// Second-order Thiran all-pass,
/// H(z) = (a2 + a1·z⁻¹ + z⁻²) / (1 + a1·z⁻¹ + a2·z⁻²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThiranCoeffs {
    /// Design delay D in samples (DC group delay).
    pub delay_d: f64,
    pub a1: f64,
    pub a2: f64,
}

/// Maximally flat group-delay all-pass of order 2 with DC delay `delay_d`.
///
/// a_k = (−1)^k · C(N, k) · Π_{n=0..N} (D − N + n) / (D − N + k + n)
pub fn design_thiran(delay_d: f64) -> Result<ThiranCoeffs> {
    let order = THIRAN_ORDER as f64;
    if !delay_d.is_finite() || delay_d <= order - 1.0 {
        return Err(Error::Design(format!(
            "Thiran delay must exceed {} samples, got {delay_d}",
            order - 1.0
        )));
    }
    let coeff = |k: usize| {
        let kf = k as f64;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let product: f64 = (0..=THIRAN_ORDER)
            .map(|n| {
                let n = n as f64;
                (delay_d - order + n) / (delay_d - order + kf + n)
            })
            .product();
        sign * binomial(THIRAN_ORDER, k) * product
    };
    Ok(ThiranCoeffs {
        delay_d,
        a1: coeff(1),
        a2: coeff(2),
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl ThiranCoeffs {
    /// A pure two-sample delay (D = 2).
    pub const IDENTITY_DELAY: ThiranCoeffs = ThiranCoeffs {
        delay_d: 2.0,
        a1: 0.0,
        a2: 0.0,
    };

    fn denominator(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        1.0 + self.a1 * z1 + self.a2 * z2
    }

    /// Frequency response at `omega` rad/sample.
    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.a2 + self.a1 * z1 + z2) / self.denominator(omega)
    }

    /// Phase delay −arg H(e^{jω})/ω in samples. Uses the all-pass structure,
    /// arg H = −2ω − 2·arg A(e^{jω}), to avoid phase unwrapping.
    pub fn phase_delay(&self, omega: f64) -> f64 {
        if omega == 0.0 {
            return self.group_delay(0.0);
        }
        THIRAN_ORDER as f64 + 2.0 * self.denominator(omega).arg() / omega
    }

    /// Group delay in samples.
    pub fn group_delay(&self, omega: f64) -> f64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        let weighted = self.a1 * z1 + 2.0 * self.a2 * z2;
        THIRAN_ORDER as f64 - 2.0 * (weighted / self.denominator(omega)).re
    }

    /// Both poles strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        // Jury conditions for 1 + a1 z^-1 + a2 z^-2.
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }
}

/// Running second-order all-pass (transposed direct form II).
#[derive(Debug, Clone)]
pub struct Allpass2 {
    coeffs: ThiranCoeffs,
    s1: f64,
    s2: f64,
}

impl Allpass2 {
    pub fn new(coeffs: ThiranCoeffs) -> Self {
        Self {
            coeffs,
            s1: 0.0,
            s2: 0.0,
        }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let ThiranCoeffs { a1, a2, .. } = self.coeffs;
        let y = a2 * x + self.s1;
        self.s1 = flush(a1 * x - a1 * y + self.s2);
        self.s2 = flush(x - a2 * y);
        y
    }

    pub fn reset(&mut self) {
        self.s1 = 0.0;
        self.s2 = 0.0;
    }
}

/// Filters `input` through the all-pass with zero initial state.
pub fn run_allpass(coeffs: &ThiranCoeffs, input: &AudioBuffer) -> AudioBuffer {
    let mut f = Allpass2::new(*coeffs);
    let out = input.samples().iter().map(|&x| f.process(x)).collect();
    AudioBuffer::from_finite(out, input.sample_rate())
}

/// Loss filter H(z) = g·(1 + a) / (1 + a·z⁻¹); DC gain is exactly g.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnePoleCoeffs {
    pub g: f64,
    pub a: f64,
}

impl OnePoleCoeffs {
    pub const UNITY: OnePoleCoeffs = OnePoleCoeffs { g: 1.0, a: 0.0 };

    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        self.g * (1.0 + self.a) / (1.0 + self.a * z1)
    }

    pub fn phase_delay(&self, omega: f64) -> f64 {
        if omega == 0.0 {
            // d/dω arg(1 + a e^{-jω}) at 0
            return -self.a / (1.0 + self.a);
        }
        -self.response(omega).arg() / omega
    }

    /// Same pole, gain raised to `power`. Used to lump a per-sample loss over
    /// a whole loop round trip.
    pub fn with_gain_power(&self, power: f64) -> OnePoleCoeffs {
        OnePoleCoeffs {
            g: self.g.powf(power),
            a: self.a,
        }
    }
}

/// Which equation sets the loss-filter gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GainFormula {
    /// g = exp(σ₁/f_s): per-sample decay of the fundamental mode.
    #[default]
    Exponential,
    /// g = 1 − π·d₁/(ε·ω₁), kept for comparison; for the reference string it
    /// gives ≈ 0.026.
    Printed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossFilterDesign {
    pub coeffs: OnePoleCoeffs,
    /// Intermediate c₀ = −ε·l²·ω₁³·T² / (4π²·d₃); `None` when d₃ = 0.
    pub c0: Option<f64>,
    pub warning: Option<String>,
}

/// Designs the one-pole loss filter from the string physics.
pub fn design_loss_filter(
    physics: &StringPhysics,
    damping: &DampingParams,
    omega1: f64,
    config: &RenderConfig,
    formula: GainFormula,
) -> Result<LossFilterDesign> {
    if !(omega1.is_finite() && omega1 > 0.0) {
        return Err(Error::Design(format!("omega1 must be > 0, got {omega1}")));
    }
    let t = config.sample_period();
    let sigma1 = mode_frequency(physics, damping, 1).sigma;
    let g = match formula {
        GainFormula::Exponential => (sigma1 * t).exp(),
        GainFormula::Printed => 1.0 - PI * damping.d1 / (physics.epsilon * omega1),
    };
    if !(g > 0.0 && g <= 1.0) {
        return Err(Error::Design(format!(
            "loop gain g = {g} is outside (0, 1]; the damping parameters give a non-passive loop"
        )));
    }

    let (a, c0, warning) = if damping.d3 == 0.0 {
        (
            0.0,
            None,
            Some("d3 = 0: loss filter reduced to a pure gain (a = 0)".to_string()),
        )
    } else {
        let c0 = -physics.epsilon * physics.length.powi(2) * omega1.powi(3) * t * t
            / (4.0 * PI * PI * damping.d3);
        let disc = c0 * c0 - 2.0 * c0;
        if disc < 0.0 {
            (
                0.0,
                Some(c0),
                Some(format!(
                    "c0 = {c0:.6}: c0^2 - 2c0 = {disc:.3e} < 0, loss filter reduced to a pure gain (a = 0)"
                )),
            )
        } else {
            let a = -1.0 + c0 - disc.sqrt();
            if a.abs() < 1.0 {
                (a, Some(c0), None)
            } else {
                (
                    0.0,
                    Some(c0),
                    Some(format!(
                        "pole a = {a:.6} is not stable, loss filter reduced to a pure gain (a = 0)"
                    )),
                )
            }
        }
    };

    Ok(LossFilterDesign {
        coeffs: OnePoleCoeffs { g, a },
        c0,
        warning,
    })
}

/// Running one-pole loss filter.
#[derive(Debug, Clone)]
pub struct OnePole {
    b0: f64,
    a: f64,
    y1: f64,
}

impl OnePole {
    pub fn new(coeffs: OnePoleCoeffs) -> Self {
        Self {
            b0: coeffs.g * (1.0 + coeffs.a),
            a: coeffs.a,
            y1: 0.0,
        }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = flush(self.b0 * x - self.a * self.y1);
        self.y1 = y;
        y
    }
}

pub fn run_one_pole(coeffs: &OnePoleCoeffs, input: &AudioBuffer) -> AudioBuffer {
    let mut f = OnePole::new(*coeffs);
    let out = input.samples().iter().map(|&x| f.process(x)).collect();
    AudioBuffer::from_finite(out, input.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modal::fundamental_omega;

    #[test]
    fn integer_delay_degeneracy() {
        let c = design_thiran(2.0).unwrap();
        assert_eq!(c.a1, 0.0);
        assert_eq!(c.a2, 0.0);
        let x = AudioBuffer::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], 48_000.0).unwrap();
        let y = run_allpass(&c, &x);
        assert_eq!(y.samples(), &[0.0, 0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn delay_at_or_below_one_is_rejected() {
        assert!(design_thiran(1.0).is_err());
        assert!(design_thiran(0.3).is_err());
        assert!(design_thiran(f64::NAN).is_err());
        assert!(design_thiran(1.0001).is_ok());
    }

    #[test]
    fn stability_for_valid_delays() {
        for d in [1.01, 1.5, 1.8566, 2.5, 15.5236, 40.0] {
            assert!(design_thiran(d).unwrap().is_stable(), "D = {d}");
        }
    }

    #[test]
    fn dc_group_delay_equals_design_delay() {
        for d in [1.3, 1.8566, 3.0, 15.5236] {
            let c = design_thiran(d).unwrap();
            assert!((c.group_delay(0.0) - d).abs() < 1e-9, "D = {d}");
            assert!((c.phase_delay(1e-5) - d).abs() < 1e-6, "D = {d}");
        }
    }

    #[test]
    fn one_pole_pure_gain() {
        let c = OnePoleCoeffs { g: 0.75, a: 0.0 };
        let x = AudioBuffer::new(vec![1.0, -2.0, 0.5], 48_000.0).unwrap();
        assert_eq!(run_one_pole(&c, &x).samples(), &[0.75, -1.5, 0.375]);
    }

    #[test]
    fn one_pole_dc_gain_is_g() {
        let c = OnePoleCoeffs { g: 0.9, a: -0.6 };
        let x = AudioBuffer::new(vec![1.0; 2000], 48_000.0).unwrap();
        let y = run_one_pole(&c, &x);
        assert!((y.samples()[1999] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn one_pole_impulse_response() {
        let c = OnePoleCoeffs { g: 1.0, a: 0.5 };
        let mut x = vec![0.0; 30];
        x[0] = 1.0;
        let y = run_one_pole(&c, &AudioBuffer::new(x, 48_000.0).unwrap());
        for (n, v) in y.samples().iter().enumerate() {
            assert!((v - 1.5 * (-0.5f64).powi(n as i32)).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_filter_lossless_limit() {
        let physics = StringPhysics::REFERENCE;
        let damping = DampingParams::LOSSLESS;
        let w1 = fundamental_omega(&physics, &damping).unwrap();
        let d = design_loss_filter(
            &physics,
            &damping,
            w1,
            &RenderConfig::REFERENCE,
            GainFormula::Exponential,
        )
        .unwrap();
        assert_eq!(d.coeffs, OnePoleCoeffs { g: 1.0, a: 0.0 });
    }

    #[test]
    fn loss_filter_reference_falls_back_to_pure_gain() {
        let physics = StringPhysics::REFERENCE;
        let damping = DampingParams::REFERENCE;
        let w1 = fundamental_omega(&physics, &damping).unwrap();
        let d = design_loss_filter(
            &physics,
            &damping,
            w1,
            &RenderConfig::REFERENCE,
            GainFormula::Exponential,
        )
        .unwrap();
        assert!((d.coeffs.g - 0.9985).abs() < 5e-4);
        assert_eq!(d.coeffs.a, 0.0);
        let c0 = d.c0.unwrap();
        assert!((c0 - 0.022).abs() < 1e-3, "c0 {c0}");
        assert!(d.warning.is_some());
    }

    #[test]
    fn printed_gain_formula_is_available() {
        let physics = StringPhysics::REFERENCE;
        let damping = DampingParams::REFERENCE;
        let w1 = fundamental_omega(&physics, &damping).unwrap();
        let d = design_loss_filter(
            &physics,
            &damping,
            w1,
            &RenderConfig::REFERENCE,
            GainFormula::Printed,
        )
        .unwrap();
        assert!((d.coeffs.g - 0.026).abs() < 2e-3, "g {}", d.coeffs.g);
    }

    #[test]
    fn non_passive_gain_is_a_design_error() {
        let physics = StringPhysics::REFERENCE;
        let damping = DampingParams { d1: 20.0, d3: 0.0 };
        let w1 = 460.0;
        let err = design_loss_filter(
            &physics,
            &damping,
            w1,
            &RenderConfig::REFERENCE,
            GainFormula::Printed,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Design(_)));
    }

    #[test]
    fn reference_thiran_coefficients() {
        let c = design_thiran(15.5236).unwrap();
        assert!((c.a1 + 1.63689).abs() < 5e-5 && (c.a2 - 0.67833).abs() < 5e-5);
        let c = design_thiran(1.8566).unwrap();
        assert!((c.a1 - 0.1004).abs() < 5e-5 && (c.a2 + 0.01115).abs() < 5e-5);
    }

    #[test]
    fn allpass_preserves_white_noise_power() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..96_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let input = AudioBuffer::new(x, 48_000.0).unwrap();
        for d in [1.8566, 4.3, 15.5236] {
            let out = run_allpass(&design_thiran(d).unwrap(), &input);
            let ratio = out.rms() / input.rms();
            assert!((ratio - 1.0).abs() < 0.01, "D = {d}: {ratio}");
        }
    }

    proptest::proptest! {
        #[test]
        fn thiran_magnitude_is_flat(d in 1.01f64..40.0) {
            let c = design_thiran(d).unwrap();
            for k in 0..1000 {
                let w = std::f64::consts::PI * (k as f64 + 0.5) / 1000.0;
                proptest::prop_assert!((c.response(w).norm() - 1.0).abs() < 1e-10);
            }
        }
    }
}
