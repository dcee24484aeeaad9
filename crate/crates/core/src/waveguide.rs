//! Single-rail digital waveguide string: integer delay line, fractional-delay
//! tuner, four-stage dispersion cascade and lumped loss filter.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::{AudioBuffer, DampingParams, Pluck, RenderConfig, StringPhysics};
use crate::error::{Error, Result};
use crate::filters::{
    design_loss_filter, design_thiran, Allpass2, GainFormula, OnePole, OnePoleCoeffs, ThiranCoeffs,
};
use crate::modal::{flush, fundamental_omega};

/// Number of Thiran sections in the dispersion cascade.
pub const DISPERSION_STAGES: usize = 4;

/// How the fractional delay is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuningMode {
    /// Nominal Thiran delays: D_frac = f_s/f₀ − L − 4·D_disp.
    Paper,
    /// Phase delays of the loop filters evaluated at f₀.
    #[default]
    Measured,
}

impl std::str::FromStr for TuningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(TuningMode::Paper),
            "measured" => Ok(TuningMode::Measured),
            other => Err(Error::validation(
                "tuning",
                format!("expected `paper` or `measured`, got `{other}`"),
            )),
        }
    }
}

/// Inharmonicity coefficient B = π³·E·d⁴ / (64·l²·T_s).
pub fn inharmonicity(physics: &StringPhysics) -> f64 {
    PI.powi(3) * physics.young_modulus * physics.diameter.powi(4)
        / (64.0 * physics.length.powi(2) * physics.tension)
}

/// Scale of the stiffness term in [`estimate_dispersion_delay`]. Fitted so the
/// 21st guzheng string at 73.42 Hz and 48 kHz maps to D = 15.5236.
const DISPERSION_SCALE: f64 = 3.344_031_789_001_84;

/// Per-stage Thiran delay for the dispersion cascade.
///
/// D = 2 + k·√B·(f_s/f₀). A stiffness-free string (B = 0) gets D = 2, for
/// which the second-order Thiran section is a pure two-sample delay; D grows
/// monotonically with B.
pub fn estimate_dispersion_delay(
    physics: &StringPhysics,
    f0: f64,
    sample_rate: f64,
) -> Result<f64> {
    for (name, v) in [
        ("f0", f0),
        ("sample_rate", sample_rate),
        ("length", physics.length),
        ("tension", physics.tension),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Design(format!(
                "dispersion estimate needs {name} > 0, got {v}"
            )));
        }
    }
    let b = inharmonicity(physics);
    if !(b.is_finite() && b >= 0.0) {
        return Err(Error::Design(format!(
            "inharmonicity coefficient is {b}, expected >= 0"
        )));
    }
    Ok(2.0 + DISPERSION_SCALE * b.sqrt() * sample_rate / f0)
}

/// Delay budget and designed filter coefficients for one string.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopPlan {
    pub f0: f64,
    pub sample_rate: f64,
    /// f_s / f₀
    pub total_delay: f64,
    pub integer_delay: usize,
    pub d_disp: f64,
    pub num_disp_stages: usize,
    pub d_frac: f64,
    /// Per-sample loss; the loop applies it once per round trip as g^(f_s/f₀).
    pub loss: OnePoleCoeffs,
    pub disp: ThiranCoeffs,
    pub frac: ThiranCoeffs,
    pub mode: TuningMode,
    pub warnings: Vec<String>,
}

impl LoopPlan {
    /// Loss filter as placed in the loop: per-sample gain compounded over one
    /// period of the fundamental.
    pub fn loop_loss(&self) -> OnePoleCoeffs {
        self.loss.with_gain_power(self.total_delay)
    }

    fn omega0(&self) -> f64 {
        2.0 * PI * self.f0 / self.sample_rate
    }

    /// Phase delays at f₀ of each loop element: (delay line, frac, dispersion cascade, loss).
    pub fn phase_delays_at_f0(&self) -> (f64, f64, f64, f64) {
        let w = self.omega0();
        (
            self.integer_delay as f64,
            self.frac.phase_delay(w),
            self.num_disp_stages as f64 * self.disp.phase_delay(w),
            self.loop_loss().phase_delay(w),
        )
    }

    /// Same, using group delays.
    pub fn group_delays_at_f0(&self) -> (f64, f64, f64) {
        let w = self.omega0();
        (
            self.frac.group_delay(w),
            self.num_disp_stages as f64 * self.disp.group_delay(w),
            group_delay_one_pole(&self.loop_loss(), w),
        )
    }

    /// Round-trip loop response at `omega` rad/sample.
    pub fn loop_response(&self, omega: f64) -> num_complex::Complex64 {
        let delay = num_complex::Complex64::from_polar(1.0, -omega * self.integer_delay as f64);
        delay
            * self.frac.response(omega)
            * self.disp.response(omega).powu(self.num_disp_stages as u32)
            * self.loop_loss().response(omega)
    }
}

fn group_delay_one_pole(c: &OnePoleCoeffs, omega: f64) -> f64 {
    // −d/dω arg H = −Re(a·e^{-jω} / (1 + a·e^{-jω}))
    let z1 = num_complex::Complex64::from_polar(1.0, -omega);
    (-(c.a * z1) / (1.0 + c.a * z1)).re
}

/// Computes the delay budget for pitch `f0` and designs all loop filters.
pub fn plan_loop(
    physics: &StringPhysics,
    damping: &DampingParams,
    f0: f64,
    config: &RenderConfig,
    d_disp: f64,
    mode: TuningMode,
) -> Result<LoopPlan> {
    config.validate()?;
    if !(f0.is_finite() && f0 > 0.0) {
        return Err(Error::validation("f0_hz", format!("must be > 0, got {f0}")));
    }
    let fs = config.sample_rate;
    let total_delay = fs / f0;
    let stages = DISPERSION_STAGES as f64;
    if total_delay <= stages * d_disp + 2.0 {
        return Err(Error::Budget(format!(
            "f_s/f0 = {total_delay:.3} samples cannot hold {DISPERSION_STAGES} dispersion stages of \
             {d_disp:.3} samples plus delay line and tuner; use fewer dispersion stages or a smaller D_disp"
        )));
    }

    let disp = design_thiran(d_disp)?;
    let omega1 = fundamental_omega(physics, damping)?;
    let loss_design =
        design_loss_filter(physics, damping, omega1, config, GainFormula::Exponential)?;
    let loss = loss_design.coeffs;
    let mut warnings: Vec<String> = loss_design.warning.into_iter().collect();

    let mut integer_delay = (total_delay - stages * d_disp).floor() - 1.0;
    let omega0 = 2.0 * PI * f0 / fs;
    let (mut d_frac, frac) = match mode {
        TuningMode::Paper => {
            let mut d_frac = total_delay - integer_delay - stages * d_disp;
            if d_frac <= 1.0 {
                integer_delay -= 1.0;
                d_frac += 1.0;
            }
            (d_frac, design_thiran(d_frac)?)
        }
        TuningMode::Measured => {
            let loop_loss = loss.with_gain_power(total_delay);
            let fixed = stages * disp.phase_delay(omega0) + loop_loss.phase_delay(omega0);
            let mut target = total_delay - integer_delay - fixed;
            while target <= 1.0 {
                integer_delay -= 1.0;
                target += 1.0;
            }
            // Thiran phase delay at f0 is close to, not equal to, D: iterate.
            let mut d = target;
            let mut frac = design_thiran(d)?;
            for _ in 0..8 {
                let err = target - frac.phase_delay(omega0);
                if err.abs() < 1e-12 {
                    break;
                }
                d += err;
                frac = design_thiran(d)?;
            }
            (d, frac)
        }
    };
    if integer_delay < 1.0 {
        return Err(Error::Budget(format!(
            "integer delay L = {integer_delay} < 1; use fewer dispersion stages"
        )));
    }
    if !frac.is_stable() {
        warnings.push(format!(
            "fractional-delay filter with D = {d_frac} is not stable"
        ));
        d_frac = frac.delay_d;
    }

    Ok(LoopPlan {
        f0,
        sample_rate: fs,
        total_delay,
        integer_delay: integer_delay as usize,
        d_disp,
        num_disp_stages: DISPERSION_STAGES,
        d_frac,
        loss,
        disp,
        frac,
        mode,
        warnings,
    })
}

/// Runs the excitation through the feedback loop.
///
/// y[n] = excitation[n] + loss(disp⁴(frac(y[n − L]))), zero initial state,
/// `length` output samples.
pub fn render_string(excitation: &AudioBuffer, plan: &LoopPlan, length: usize) -> AudioBuffer {
    let exc = excitation.samples();
    let l = plan.integer_delay.max(1);
    let mut line = vec![0.0; l];
    let mut pos = 0;
    let mut frac = Allpass2::new(plan.frac);
    let mut disp: Vec<Allpass2> = (0..plan.num_disp_stages)
        .map(|_| Allpass2::new(plan.disp))
        .collect();
    let mut loss = OnePole::new(plan.loop_loss());

    let mut out = Vec::with_capacity(length);
    for n in 0..length {
        let mut v = frac.process(line[pos]);
        for stage in disp.iter_mut() {
            v = stage.process(v);
        }
        let y = flush(exc.get(n).copied().unwrap_or(0.0) + loss.process(v));
        line[pos] = y;
        pos += 1;
        if pos == l {
            pos = 0;
        }
        out.push(y);
    }
    AudioBuffer::from_finite(out, excitation.sample_rate())
}

/// The rectangular-excitation waveguide: the raw pluck pulse, scaled by the
/// pluck force, drives the same loop.
pub fn render_dwg_baseline(
    plan: &LoopPlan,
    pluck: &Pluck,
    config: &RenderConfig,
    length: usize,
) -> AudioBuffer {
    let on = pluck.pulse_samples(config.sample_rate).min(length);
    let mut exc = vec![0.0; on];
    exc.fill(pluck.force);
    render_string(
        &AudioBuffer::from_finite(exc, config.sample_rate),
        plan,
        length,
    )
}

impl fmt::Display for LoopPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            TuningMode::Paper => "paper",
            TuningMode::Measured => "measured",
        };
        writeln!(f, "loop plan ({mode} tuning)")?;
        writeln!(f, "  f0            {:.4} Hz", self.f0)?;
        writeln!(f, "  total delay   {:.4} samples", self.total_delay)?;
        writeln!(f, "  L             {}", self.integer_delay)?;
        writeln!(
            f,
            "  D_disp        {:.4} x {} stages",
            self.d_disp, self.num_disp_stages
        )?;
        writeln!(f, "  D_frac        {:.4}", self.d_frac)?;
        writeln!(f, "  loop gain     {:.6}", self.loop_loss().g)?;
        writeln!(f)?;
        writeln!(f, "{:<8}| {:>10} {:>12} {:>10}", "filter", "", "", "")?;
        writeln!(
            f,
            "{:<8}| {:>10} {:>12} {:>10}",
            "A_d(z)", "D_d", "a1", "a2"
        )?;
        writeln!(
            f,
            "{:<8}| {:>10.4} {:>12.4} {:>10.4}",
            "", self.disp.delay_d, self.disp.a1, self.disp.a2
        )?;
        writeln!(
            f,
            "{:<8}| {:>10} {:>12} {:>10}",
            "A_f(z)", "D_f", "a1", "a2"
        )?;
        writeln!(
            f,
            "{:<8}| {:>10.4} {:>12.4} {:>10.4}",
            "", self.frac.delay_d, self.frac.a1, self.frac.a2
        )?;
        writeln!(f, "{:<8}| {:>10} {:>12}", "H_lp(z)", "g", "a")?;
        writeln!(f, "{:<8}| {:>10.4} {:>12.3e}", "", self.loss.g, self.loss.a)?;
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}
