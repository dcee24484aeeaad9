//! Plucked-string synthesis engine combining a modal resonator bank (for a
//! physically parameterized excitation) with a digital-waveguide loop.

pub mod analysis;
pub mod body;
pub mod config;
pub mod damping;
mod dsp;
pub mod error;
pub mod filters;
pub mod modal;
pub mod pipeline;
pub mod wav;
pub mod waveguide;

pub use config::{
    load_config, AudioBuffer, Config, DampingParams, Pluck, RenderConfig, StringPhysics, Tuning,
};
pub use error::{Error, ErrorKind, Result};
