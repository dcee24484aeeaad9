//! Modal resonator bank for the stiff, damped string.
//!
//! Each mode μ of the fixed-fixed string is realized as a second-order
//! recursion driven by the excitation force; the bank output is the weighted
//! sum of all modes read out at the pickup point.

use std::f64::consts::PI;
use std::fmt;

use crate::config::{AudioBuffer, DampingParams, Pluck, RenderConfig, StringPhysics};
use crate::error::{Error, Result};

/// Decay rate and frequency of one mode before any discretization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeFrequency {
    /// Wavenumber μπ/l, rad/m.
    pub gamma: f64,
    /// Decay rate, 1/s.
    pub sigma: f64,
    /// ω², (rad/s)². May be ≤ 0 for overdamped parameter sets.
    pub omega_squared: f64,
}

impl ModeFrequency {
    pub fn omega(&self) -> f64 {
        self.omega_squared.sqrt()
    }
}

/// γ, σ and ω² of mode `mu`.
///
/// The constant term of ω² is `d1²/(2ε)`, not the `d1²/(4ε²)` a textbook
/// derivation of the damped wave equation gives; for the reference string
/// the two differ by well under 0.1% of ω₁².
pub fn mode_frequency(physics: &StringPhysics, damping: &DampingParams, mu: u32) -> ModeFrequency {
    let eps = physics.epsilon;
    let (d1, d3) = (damping.d1, damping.d3);
    let gamma = mu as f64 * PI / physics.length;
    let g2 = gamma * gamma;
    let sigma = (d3 * g2 - d1) / (2.0 * eps);
    let stiffness = (4.0 * eps * physics.bending_stiffness() - d3 * d3) / (4.0 * eps * eps);
    let tension = (2.0 * eps * physics.tension + d1 * d3) / (2.0 * eps * eps);
    let omega_squared = stiffness * g2 * g2 + tension * g2 - d1 * d1 / (2.0 * eps);
    ModeFrequency {
        gamma,
        sigma,
        omega_squared,
    }
}

/// Fundamental angular frequency ω₁ of the damped string.
pub fn fundamental_omega(physics: &StringPhysics, damping: &DampingParams) -> Result<f64> {
    let m = mode_frequency(physics, damping, 1);
    if !(m.omega_squared > 0.0) {
        return Err(Error::Modal {
            mode: 1,
            reason: format!("omega^2 = {} is not positive", m.omega_squared),
        });
    }
    Ok(m.omega())
}

/// Coefficients of one resonator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModalCoefficients {
    pub mode_index: u32,
    pub gamma: f64,
    pub sigma: f64,
    pub omega: f64,
    /// Spatial weight ½·f·l·sin(μπx_a/l)·sin(μπx_e/l).
    pub weight_a: f64,
    pub b1: f64,
    pub c1: f64,
    pub c0: f64,
}

impl ModalCoefficients {
    pub fn frequency_hz(&self) -> f64 {
        self.omega / (2.0 * PI)
    }

    /// Radius of the complex-conjugate pole pair, exp(σT).
    pub fn pole_radius(&self) -> f64 {
        self.c0.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneReason {
    NonPositiveOmegaSquared,
    AboveNyquist,
    Growing,
}

impl fmt::Display for PruneReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PruneReason::NonPositiveOmegaSquared => "omega^2 <= 0",
            PruneReason::AboveNyquist => "above Nyquist",
            PruneReason::Growing => "sigma > 0",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrunedMode {
    pub mode_index: u32,
    pub reason: PruneReason,
    pub gamma: f64,
    pub sigma: f64,
    pub omega_squared: f64,
}

/// Record of which modes were kept and which were dropped, and why.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DesignLog {
    pub pruned: Vec<PrunedMode>,
}

/// The parallel bank of resonators for one string, pluck and sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalBank {
    modes: Vec<ModalCoefficients>,
    sample_rate: f64,
    physics: StringPhysics,
    pluck: Pluck,
    log: DesignLog,
}

/// Computes the resonator coefficients for modes 1..=num_modes.
///
/// Modes with ω² ≤ 0, ω at or above Nyquist, or σ > 0 are dropped and
/// listed in the bank's design log.
pub fn design_modal_bank(
    physics: &StringPhysics,
    damping: &DampingParams,
    pluck: &Pluck,
    config: &RenderConfig,
) -> Result<ModalBank> {
    config.validate()?;
    pluck.validate(physics.length)?;
    for (name, v) in [
        ("epsilon", physics.epsilon),
        ("length", physics.length),
        ("tension", physics.tension),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::validation(name, format!("must be > 0, got {v}")));
        }
    }
    if !(physics.bending_stiffness() >= 0.0) {
        return Err(Error::validation("young_modulus", "E·I must be >= 0"));
    }

    let t = config.sample_period();
    let l = physics.length;
    let mut modes = Vec::with_capacity(config.num_modes as usize);
    let mut log = DesignLog::default();

    for mu in 1..=config.num_modes {
        let m = mode_frequency(physics, damping, mu);
        let non_finite = |what: &str, v: f64| Error::Modal {
            mode: mu,
            reason: format!("{what} is not finite ({v})"),
        };
        if !m.sigma.is_finite() {
            return Err(non_finite("sigma", m.sigma));
        }
        if !m.omega_squared.is_finite() {
            return Err(non_finite("omega^2", m.omega_squared));
        }

        let reason = if m.omega_squared <= 0.0 {
            Some(PruneReason::NonPositiveOmegaSquared)
        } else if m.omega() >= PI * config.sample_rate {
            Some(PruneReason::AboveNyquist)
        } else if m.sigma > 0.0 {
            Some(PruneReason::Growing)
        } else {
            None
        };
        if let Some(reason) = reason {
            log.pruned.push(PrunedMode {
                mode_index: mu,
                reason,
                gamma: m.gamma,
                sigma: m.sigma,
                omega_squared: m.omega_squared,
            });
            continue;
        }

        let omega = m.omega();
        let mu_f = mu as f64;
        let weight_a = 0.5
            * pluck.force
            * l
            * (mu_f * PI * pluck.pickup_point / l).sin()
            * (mu_f * PI * pluck.pluck_point / l).sin();
        let b1 = (omega * t).sin() / (physics.epsilon * omega);
        let c1 = -2.0 * (m.sigma * t).exp() * (omega * t).cos();
        let c0 = (2.0 * m.sigma * t).exp();

        for (what, v) in [("weight_a", weight_a), ("b1", b1), ("c1", c1), ("c0", c0)] {
            if !v.is_finite() {
                return Err(non_finite(what, v));
            }
        }
        modes.push(ModalCoefficients {
            mode_index: mu,
            gamma: m.gamma,
            sigma: m.sigma,
            omega,
            weight_a,
            b1,
            c1,
            c0,
        });
    }

    if modes.is_empty() {
        return Err(Error::Modal {
            mode: config.num_modes,
            reason: format!("all {} modes were pruned", config.num_modes),
        });
    }

    Ok(ModalBank {
        modes,
        sample_rate: config.sample_rate,
        physics: *physics,
        pluck: *pluck,
        log,
    })
}

impl ModalBank {
    /// Assembles a bank from precomputed coefficients. Modes are sorted by index.
    pub fn from_modes(
        mut modes: Vec<ModalCoefficients>,
        sample_rate: f64,
        physics: StringPhysics,
        pluck: Pluck,
    ) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Modal {
                mode: 0,
                reason: "empty bank".into(),
            });
        }
        modes.sort_by_key(|m| m.mode_index);
        if modes.windows(2).any(|w| w[0].mode_index == w[1].mode_index) {
            return Err(Error::Modal {
                mode: 0,
                reason: "duplicate mode index".into(),
            });
        }
        Ok(Self {
            modes,
            sample_rate,
            physics,
            pluck,
            log: DesignLog::default(),
        })
    }

    pub fn modes(&self) -> &[ModalCoefficients] {
        &self.modes
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn physics(&self) -> &StringPhysics {
        &self.physics
    }

    pub fn pluck(&self) -> &Pluck {
        &self.pluck
    }

    pub fn log(&self) -> &DesignLog {
        &self.log
    }

    /// ω of the lowest retained mode, rad/s.
    pub fn fundamental_omega(&self) -> f64 {
        self.modes[0].omega
    }

    /// Zero-order-hold rectangular force pulse, `len` samples long.
    pub fn force_pulse(&self, len: usize) -> Vec<f64> {
        let on = self.pluck.pulse_samples(self.sample_rate);
        (0..len).map(|n| if n < on { 1.0 } else { 0.0 }).collect()
    }

    /// Drives every resonator with `force` and sums the weighted outputs.
    ///
    /// Per mode: y[n] = b1·u[n−1] − c1·y[n−1] − c0·y[n−2], zero initial state.
    /// Modes are summed in ascending index order so the result is reproducible
    /// to the bit.
    pub fn render_driven(&self, force: &[f64], length: usize) -> AudioBuffer {
        let n_modes = self.modes.len();
        let b1: Vec<f64> = self.modes.iter().map(|m| m.b1).collect();
        let c1: Vec<f64> = self.modes.iter().map(|m| m.c1).collect();
        let c0: Vec<f64> = self.modes.iter().map(|m| m.c0).collect();
        let w: Vec<f64> = self.modes.iter().map(|m| m.weight_a).collect();
        let mut y1 = vec![0.0; n_modes];
        let mut y2 = vec![0.0; n_modes];
        let mut out = Vec::with_capacity(length);
        let mut u_prev = 0.0;
        for n in 0..length {
            let mut acc = 0.0;
            for k in 0..n_modes {
                let y = flush(b1[k] * u_prev - c1[k] * y1[k] - c0[k] * y2[k]);
                y2[k] = y1[k];
                y1[k] = y;
                acc += w[k] * y;
            }
            out.push(acc);
            u_prev = force.get(n).copied().unwrap_or(0.0);
        }
        AudioBuffer::from_finite(out, self.sample_rate)
    }

    /// The excitation signal handed to the waveguide: the bank's response to
    /// the pluck pulse, `config.excitation_length` samples long.
    pub fn render_excitation(&self, config: &RenderConfig) -> AudioBuffer {
        let len = config.excitation_length;
        self.render_driven(&self.force_pulse(len), len)
    }

    /// Pure modal synthesis of the whole note.
    pub fn render_ftm_full(&self, length: usize) -> AudioBuffer {
        self.render_driven(&self.force_pulse(length), length)
    }
}

/// Below this a state is set to zero. Far enough above the subnormal range
/// that products with filter coefficients stay normal; flushing only true
/// subnormals leaves tails hovering at the boundary for seconds.
const FLUSH_BELOW: f64 = 1e-200;

/// Zeroes vanishing values. Long decays otherwise spend most of their time in
/// slow subnormal arithmetic.
#[inline(always)]
pub(crate) fn flush(x: f64) -> f64 {
    if x.abs() < FLUSH_BELOW {
        0.0
    } else {
        x
    }
}

impl fmt::Display for ModalBank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "modal bank: {} retained, {} pruned, fs = {} Hz",
            self.modes.len(),
            self.log.pruned.len(),
            self.sample_rate
        )?;
        writeln!(
            f,
            "{:>4} {:>12} {:>12} {:>12} {:>14}",
            "mu", "gamma", "sigma", "f (Hz)", "weight"
        )?;
        for m in &self.modes {
            writeln!(
                f,
                "{:>4} {:>12.4} {:>12.4} {:>12.4} {:>14.6e}",
                m.mode_index,
                m.gamma,
                m.sigma,
                m.frequency_hz(),
                m.weight_a
            )?;
        }
        for p in &self.log.pruned {
            let f_hz = if p.omega_squared > 0.0 {
                p.omega_squared.sqrt() / (2.0 * PI)
            } else {
                f64::NAN
            };
            writeln!(
                f,
                "{:>4} {:>12.4} {:>12.4} {:>12.4} pruned: {}",
                p.mode_index, p.gamma, p.sigma, f_hz, p.reason
            )?;
        }
        Ok(())
    }
}
