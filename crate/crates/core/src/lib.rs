//! Strain coupling of the NV centre optical excited state to a driven
//! diamond cantilever: crystal-frame strain mapping, beam mechanics,
//! polarization selection rules, time-averaged and stroboscopic spectra,
//! coupling-constant extraction and optomechanical figures of merit.

pub mod cli;
pub mod config;
pub mod error;
pub mod inference;
pub mod lm;
pub mod mechanics;
pub mod metrics;
pub mod nv_core;
pub mod optics;
pub mod spectra;
pub mod synth;

pub use error::{Error, Result};
pub use nv_core::{CouplingConstants, Group, IntrinsicStrain, NvOrientation, StrainModel, StrainTensor};
pub use spectra::NvSite;

/// Shortest decimal that parses back to the same f64.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}
