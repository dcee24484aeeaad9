//! End-to-end string rendering: modal excitation, waveguide loop and the two
//! baselines, all from one resolved [`Config`].

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::body::{convolve_body, BodyIR};
use crate::config::{AudioBuffer, Config};
use crate::error::{Error, Result};
use crate::modal::{design_modal_bank, ModalBank};
use crate::waveguide::{
    estimate_dispersion_delay, plan_loop, render_dwg_baseline, render_string, LoopPlan,
};

/// Synthesis method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Modal excitation feeding the waveguide loop.
    Hybrid,
    /// The modal bank alone, run for the whole output.
    Ftm,
    /// Waveguide loop driven by the rectangular force pulse.
    Dwg,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Hybrid, Method::Ftm, Method::Dwg];

    pub fn name(self) -> &'static str {
        match self {
            Method::Hybrid => "hybrid",
            Method::Ftm => "ftm",
            Method::Dwg => "dwg",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::validation("method", format!("expected hybrid, ftm or dwg, got `{s}`"))
            })
    }
}

/// A designed string: modal bank plus loop plan.
#[derive(Debug, Clone)]
pub struct Instrument {
    config: Config,
    bank: ModalBank,
    plan: LoopPlan,
}

impl Instrument {
    pub fn new(config: &Config) -> Result<Self> {
        let bank = design_modal_bank(
            &config.physics,
            &config.damping,
            &config.pluck,
            &config.render,
        )?;
        let f0 = config
            .tuning
            .f0
            .unwrap_or_else(|| bank.fundamental_omega() / (2.0 * PI));
        let d_disp = match config.tuning.dispersion_delay {
            Some(d) => d,
            None => estimate_dispersion_delay(&config.physics, f0, config.render.sample_rate)?,
        };
        let plan = plan_loop(
            &config.physics,
            &config.damping,
            f0,
            &config.render,
            d_disp,
            config.tuning.mode,
        )?;
        Ok(Self {
            config: config.clone(),
            bank,
            plan,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn bank(&self) -> &ModalBank {
        &self.bank
    }

    pub fn plan(&self) -> &LoopPlan {
        &self.plan
    }

    /// The modal-bank output handed to the loop (`excitation_length` samples).
    pub fn excitation(&self) -> AudioBuffer {
        self.bank.render_excitation(&self.config.render)
    }

    /// Renders `length` samples of the string signal.
    pub fn render(&self, method: Method, length: usize) -> AudioBuffer {
        match method {
            Method::Hybrid => render_string(&self.excitation(), &self.plan, length),
            Method::Ftm => self.bank.render_ftm_full(length),
            Method::Dwg => {
                render_dwg_baseline(&self.plan, &self.config.pluck, &self.config.render, length)
            }
        }
    }

    /// Renders the configured duration, optionally through a body IR.
    pub fn render_sound(
        &self,
        method: Method,
        ir: Option<&BodyIR>,
        normalize: bool,
    ) -> Result<AudioBuffer> {
        let string = self.render(method, self.config.render.render_length);
        match ir {
            Some(ir) => convolve_body(&string, ir, normalize),
            None if normalize => Ok(string.normalized_to(crate::body::OUTPUT_PEAK_DBFS)),
            None => Ok(string),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("karplus".parse::<Method>().is_err());
    }

    #[test]
    fn reference_instrument_uses_modal_fundamental_without_override() {
        let inst = Instrument::new(&Config::reference()).unwrap();
        let f1 = inst.bank().fundamental_omega() / (2.0 * PI);
        assert!((inst.plan().f0 - f1).abs() < 1e-12);
    }

    #[test]
    fn every_method_renders_requested_length() {
        let inst = Instrument::new(&Config::reference()).unwrap();
        for m in Method::ALL {
            let out = inst.render(m, 9000);
            assert_eq!(out.len(), 9000);
            assert!(out.peak() > 0.0, "{m} is silent");
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let inst = Instrument::new(&Config::reference()).unwrap();
        assert_eq!(
            inst.render(Method::Hybrid, 5000),
            inst.render(Method::Hybrid, 5000)
        );
    }
}
