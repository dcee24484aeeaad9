//! Shared domain types and the key-value configuration format.
//!
//! Everything is strict SI internally. The config file uses the units the
//! string data sheets use (mm, mm⁴, GPa, ms) and is converted on load.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveguide::TuningMode;

/// Measurable constants of one string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StringPhysics {
    /// Linear density, kg/m.
    pub epsilon: f64,
    /// Young's modulus, Pa.
    pub young_modulus: f64,
    /// Area moment of inertia, m⁴.
    pub inertia_moment: f64,
    /// Vibrating length, m.
    pub length: f64,
    /// Tension, N.
    pub tension: f64,
    /// Wire diameter, m.
    pub diameter: f64,
}

impl StringPhysics {
    /// The 21st (lowest) guzheng string.
    pub const REFERENCE: StringPhysics = StringPhysics {
        epsilon: 2.057e-2,
        young_modulus: 220e9,
        inertia_moment: 2.545e-14,
        length: 0.95,
        tension: 400.0,
        diameter: 0.6e-3,
    };

    pub fn new(
        epsilon: f64,
        young_modulus: f64,
        inertia_moment: f64,
        length: f64,
        tension: f64,
        diameter: f64,
    ) -> Result<Self> {
        let physics = Self {
            epsilon,
            young_modulus,
            inertia_moment,
            length,
            tension,
            diameter,
        };
        physics.validate()?;
        Ok(physics)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("epsilon", self.epsilon),
            ("young_modulus", self.young_modulus),
            ("inertia_moment", self.inertia_moment),
            ("length", self.length),
            ("tension", self.tension),
            ("diameter", self.diameter),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::validation(name, format!("must be > 0, got {value}")));
            }
        }
        Ok(())
    }

    /// Bending stiffness E·I, N·m².
    pub fn bending_stiffness(&self) -> f64 {
        self.young_modulus * self.inertia_moment
    }

    /// Relative deviation of the moment of inertia from a solid round wire, π·d⁴/64.
    pub fn round_wire_deviation(&self) -> f64 {
        let solid = std::f64::consts::PI * self.diameter.powi(4) / 64.0;
        (self.inertia_moment - solid).abs() / solid
    }

    /// Advisory only: wound strings legitimately differ from the solid-wire value.
    pub fn round_wire_warning(&self) -> Option<String> {
        let dev = self.round_wire_deviation();
        (dev > 0.2).then(|| {
            format!(
                "inertia_moment {:.4e} m^4 deviates {:.0}% from a solid round wire of diameter {:.3e} m",
                self.inertia_moment,
                dev * 100.0,
                self.diameter
            )
        })
    }
}

/// Frequency-independent (`d1`) and frequency-dependent (`d3`) decay parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingParams {
    /// kg/(m·s)
    pub d1: f64,
    /// kg·m/s
    pub d3: f64,
}

impl DampingParams {
    pub const REFERENCE: DampingParams = DampingParams {
        d1: 2.9390,
        d3: -9.1e-4,
    };

    pub const LOSSLESS: DampingParams = DampingParams { d1: 0.0, d3: 0.0 };

    pub fn new(d1: f64, d3: f64) -> Result<Self> {
        if !d1.is_finite() || d1 < 0.0 {
            return Err(Error::validation("d1", format!("must be >= 0, got {d1}")));
        }
        if !d3.is_finite() {
            return Err(Error::validation("d3", format!("must be finite, got {d3}")));
        }
        Ok(Self { d1, d3 })
    }
}

/// A single pluck: force magnitude, where it is applied, how long, and where
/// the string displacement is read out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pluck {
    /// N
    pub force: f64,
    /// m from the termination
    pub pluck_point: f64,
    /// s
    pub pluck_duration: f64,
    /// m from the termination
    pub pickup_point: f64,
}

impl Pluck {
    /// Force 1 N at l/7 for 3 ms, read out at the pluck point.
    pub fn reference(length: f64) -> Self {
        let x = length * DEFAULT_PLUCK_RATIO;
        Self {
            force: 1.0,
            pluck_point: x,
            pluck_duration: 3e-3,
            pickup_point: x,
        }
    }

    pub fn validate(&self, length: f64) -> Result<()> {
        if !self.force.is_finite() {
            return Err(Error::validation("force", "must be finite"));
        }
        if !(self.pluck_point > 0.0 && self.pluck_point < length) {
            return Err(Error::validation(
                "pluck_point",
                format!(
                    "must lie strictly inside (0, {length}) m, got {}",
                    self.pluck_point
                ),
            ));
        }
        if !(self.pickup_point > 0.0 && self.pickup_point < length) {
            return Err(Error::validation(
                "pickup_point",
                format!(
                    "must lie strictly inside (0, {length}) m, got {}",
                    self.pickup_point
                ),
            ));
        }
        if !(self.pluck_duration.is_finite() && self.pluck_duration > 0.0) {
            return Err(Error::validation(
                "pluck_duration",
                format!("must be > 0, got {}", self.pluck_duration),
            ));
        }
        Ok(())
    }

    /// Length of the rectangular force pulse in samples.
    pub fn pulse_samples(&self, sample_rate: f64) -> usize {
        (self.pluck_duration * sample_rate).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub sample_rate: f64,
    pub num_modes: u32,
    /// Samples of modal output handed to the waveguide loop.
    pub excitation_length: usize,
    pub render_length: usize,
}

impl RenderConfig {
    pub const REFERENCE: RenderConfig = RenderConfig {
        sample_rate: 48_000.0,
        num_modes: 80,
        excitation_length: 4800,
        render_length: 240_000,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::validation("sample_rate", "must be > 0"));
        }
        if self.num_modes == 0 {
            return Err(Error::validation("num_modes", "must be >= 1"));
        }
        if self.render_length == 0 {
            return Err(Error::validation("duration_s", "render length must be > 0"));
        }
        if self.excitation_length == 0 {
            return Err(Error::validation("excitation_samples", "must be >= 1"));
        }
        if self.excitation_length > self.render_length {
            return Err(Error::validation(
                "excitation_samples",
                format!(
                    "{} exceeds render length {}",
                    self.excitation_length, self.render_length
                ),
            ));
        }
        Ok(())
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn with_render_length(mut self, render_length: usize) -> Self {
        self.render_length = render_length;
        self
    }
}

/// Uniformly sampled mono signal.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::validation("sample_rate", "must be > 0"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::validation(
                "samples",
                format!("non-finite value at index {i}"),
            ));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// For internal producers whose output is finite by construction.
    pub(crate) fn from_finite(samples: Vec<f64>, sample_rate: f64) -> Self {
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn scaled(&self, gain: f64) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn truncated(&self, len: usize) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples[..len.min(self.samples.len())].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    /// Scales so that the absolute peak sits at `dbfs` (e.g. -1.0). Silence is left alone.
    pub fn normalized_to(&self, dbfs: f64) -> AudioBuffer {
        let peak = self.peak();
        if peak == 0.0 {
            return self.clone();
        }
        self.scaled(10f64.powf(dbfs / 20.0) / peak)
    }
}

/// Pitch and delay-budget controls for the waveguide loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tuning {
    /// Exact target pitch; `None` uses the modal fundamental.
    pub f0: Option<f64>,
    /// Per-stage dispersion delay; `None` uses the automatic estimate.
    pub dispersion_delay: Option<f64>,
    pub mode: TuningMode,
}

impl Default for Tuning {
    fn default() -> Self {
        Self {
            f0: None,
            dispersion_delay: None,
            mode: TuningMode::Measured,
        }
    }
}

/// A fully resolved, validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub physics: StringPhysics,
    pub damping: DampingParams,
    pub pluck: Pluck,
    pub render: RenderConfig,
    pub tuning: Tuning,
    /// Non-fatal findings (e.g. the round-wire inertia check).
    pub warnings: Vec<String>,
    file: ConfigFile,
}

const DEFAULT_PLUCK_RATIO: f64 = 1.0 / 7.0;

impl Config {
    pub fn reference() -> Self {
        Self::resolve(ConfigFile::default()).expect("built-in defaults are valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::resolve(file)
    }

    /// Serializes every value (defaults included) in the file format.
    pub fn to_config_string(&self) -> String {
        toml::to_string(&self.file.filled()).expect("config serializes")
    }

    /// Same config with the damping section replaced.
    pub fn with_damping(&self, damping: DampingParams) -> Result<Self> {
        let mut file = self.file.clone();
        file.damping = Some(DampingSection {
            d1: Some(damping.d1),
            d3: Some(damping.d3),
        });
        Self::resolve(file)
    }

    pub fn with_duration(&self, duration_s: f64) -> Result<Self> {
        let mut file = self.file.filled();
        file.render.as_mut().expect("filled").duration_s = Some(duration_s);
        Self::resolve(file)
    }

    pub fn with_excitation_samples(&self, samples: usize) -> Result<Self> {
        let mut file = self.file.filled();
        file.render.as_mut().expect("filled").excitation_samples = Some(samples);
        Self::resolve(file)
    }

    pub fn with_tuning_mode(&self, mode: TuningMode) -> Result<Self> {
        let mut file = self.file.filled();
        file.tuning.as_mut().expect("filled").mode = Some(mode);
        Self::resolve(file)
    }

    fn resolve(file: ConfigFile) -> Result<Self> {
        let s = file.string.clone().unwrap_or_default();
        let physics = StringPhysics::new(
            s.epsilon.unwrap_or(StringPhysics::REFERENCE.epsilon),
            s.young_modulus_gpa.unwrap_or(220.0) * 1e9,
            s.inertia_moment_mm4.unwrap_or(2.545e-2) * 1e-12,
            s.length_mm.unwrap_or(950.0) / 1e3,
            s.tension.unwrap_or(StringPhysics::REFERENCE.tension),
            s.diameter_mm.unwrap_or(0.6) / 1e3,
        )?;
        let mut warnings = Vec::new();
        if s.check_round_wire.unwrap_or(true) {
            warnings.extend(physics.round_wire_warning());
        }

        let d = file.damping.clone().unwrap_or_default();
        let damping = DampingParams::new(
            d.d1.unwrap_or(DampingParams::REFERENCE.d1),
            d.d3.unwrap_or(DampingParams::REFERENCE.d3),
        )?;

        let p = file.pluck.clone().unwrap_or_default();
        let length = physics.length;
        let pluck_point = match (p.pluck_point_ratio, p.pluck_point_m) {
            (Some(ratio), _) => ratio * length,
            (None, Some(m)) => m,
            (None, None) => DEFAULT_PLUCK_RATIO * length,
        };
        let pickup_point = match (p.pickup_point_ratio, p.pickup_point_m) {
            (Some(ratio), _) => ratio * length,
            (None, Some(m)) => m,
            (None, None) => pluck_point,
        };
        let pluck = Pluck {
            force: p.force.unwrap_or(1.0),
            pluck_point,
            pluck_duration: p.duration_ms.unwrap_or(3.0) / 1e3,
            pickup_point,
        };
        pluck.validate(length)?;

        let r = file.render.clone().unwrap_or_default();
        let sample_rate = r.sample_rate.unwrap_or(48_000.0);
        let duration_s = r.duration_s.unwrap_or(5.0);
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err(Error::validation(
                "duration_s",
                format!("must be > 0, got {duration_s}"),
            ));
        }
        let render = RenderConfig {
            sample_rate,
            num_modes: r.num_modes.unwrap_or(80),
            excitation_length: r.excitation_samples.unwrap_or(4800),
            render_length: (duration_s * sample_rate).round() as usize,
        };
        render.validate()?;
        let pulse = pluck.pulse_samples(sample_rate);
        if pulse == 0 || pulse > render.excitation_length {
            return Err(Error::validation(
                "duration_ms",
                format!(
                    "pluck pulse of {pulse} samples must fit inside the {}-sample excitation",
                    render.excitation_length
                ),
            ));
        }

        let t = file.tuning.clone().unwrap_or_default();
        if let Some(f0) = t.f0_hz {
            if !(f0.is_finite() && f0 > 0.0) {
                return Err(Error::validation("f0_hz", format!("must be > 0, got {f0}")));
            }
        }
        if let Some(dd) = t.dispersion_delay {
            if !(dd.is_finite() && dd > 1.0) {
                return Err(Error::validation(
                    "dispersion_delay",
                    format!("must be > 1, got {dd}"),
                ));
            }
        }
        let tuning = Tuning {
            f0: t.f0_hz,
            dispersion_delay: t.dispersion_delay,
            mode: t.mode.unwrap_or(TuningMode::Measured),
        };

        Ok(Self {
            physics,
            damping,
            pluck,
            render,
            tuning,
            warnings,
            file,
        })
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_config_string())
    }
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Config::parse(&text)
}

// On-disk layout. Every key is optional; unknown keys are rejected.

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    string: Option<StringSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    damping: Option<DampingSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pluck: Option<PluckSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    render: Option<RenderSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tuning: Option<TuningSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StringSection {
    epsilon: Option<f64>,
    young_modulus_gpa: Option<f64>,
    inertia_moment_mm4: Option<f64>,
    length_mm: Option<f64>,
    tension: Option<f64>,
    diameter_mm: Option<f64>,
    check_round_wire: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DampingSection {
    d1: Option<f64>,
    d3: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PluckSection {
    force: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pluck_point_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pluck_point_m: Option<f64>,
    duration_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pickup_point_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pickup_point_m: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderSection {
    sample_rate: Option<f64>,
    num_modes: Option<u32>,
    excitation_samples: Option<usize>,
    duration_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TuningSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    f0_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dispersion_delay: Option<f64>,
    mode: Option<TuningMode>,
}

impl ConfigFile {
    /// Copy with every defaulted key written out explicitly. Optional
    /// tuning overrides and position alternatives stay as given.
    fn filled(&self) -> ConfigFile {
        let s = self.string.clone().unwrap_or_default();
        let d = self.damping.clone().unwrap_or_default();
        let p = self.pluck.clone().unwrap_or_default();
        let r = self.render.clone().unwrap_or_default();
        let t = self.tuning.clone().unwrap_or_default();
        let pluck_given = p.pluck_point_ratio.is_some() || p.pluck_point_m.is_some();
        ConfigFile {
            string: Some(StringSection {
                epsilon: s.epsilon.or(Some(StringPhysics::REFERENCE.epsilon)),
                young_modulus_gpa: s.young_modulus_gpa.or(Some(220.0)),
                inertia_moment_mm4: s.inertia_moment_mm4.or(Some(2.545e-2)),
                length_mm: s.length_mm.or(Some(950.0)),
                tension: s.tension.or(Some(StringPhysics::REFERENCE.tension)),
                diameter_mm: s.diameter_mm.or(Some(0.6)),
                check_round_wire: s.check_round_wire.or(Some(true)),
            }),
            damping: Some(DampingSection {
                d1: d.d1.or(Some(DampingParams::REFERENCE.d1)),
                d3: d.d3.or(Some(DampingParams::REFERENCE.d3)),
            }),
            pluck: Some(PluckSection {
                force: p.force.or(Some(1.0)),
                pluck_point_ratio: if pluck_given {
                    p.pluck_point_ratio
                } else {
                    Some(DEFAULT_PLUCK_RATIO)
                },
                pluck_point_m: p.pluck_point_m,
                duration_ms: p.duration_ms.or(Some(3.0)),
                pickup_point_ratio: p.pickup_point_ratio,
                pickup_point_m: p.pickup_point_m,
            }),
            render: Some(RenderSection {
                sample_rate: r.sample_rate.or(Some(48_000.0)),
                num_modes: r.num_modes.or(Some(80)),
                excitation_samples: r.excitation_samples.or(Some(4800)),
                duration_s: r.duration_s.or(Some(5.0)),
            }),
            tuning: Some(TuningSection {
                f0_hz: t.f0_hz,
                dispersion_delay: t.dispersion_delay,
                mode: t.mode.or(Some(TuningMode::Measured)),
            }),
        }
    }
}
