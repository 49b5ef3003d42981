use thiserror::Error;

use crate::nv_core::Frame;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar input is outside the range where the model applies.
    #[error("{name} = {value} is out of range: {constraint}")]
    Range {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("strain tensor is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("frame mismatch: expected {expected}, found {found:?}")]
    FrameMismatch { expected: &'static str, found: Frame },

    /// Both E-channel arguments vanish so the Stuckelberg angle is undefined.
    #[error("degenerate E strain: Stuckelberg angle undefined (e1 = {e1:e} Hz, e2 = {e2:e} Hz)")]
    DegenerateStrain { e1: f64, e2: f64 },

    #[error("target angle {target_deg:.3} deg is unreachable along the available strain direction")]
    UnreachableAngle { target_deg: f64 },

    #[error("target frequency {target_hz:e} Hz is unreachable within |x| <= {x_limit_m:e} m")]
    UnreachableFrequency { target_hz: f64, x_limit_m: f64 },

    #[error("quadrature did not converge after {samples} samples (relative change {change:e})")]
    Quadrature { samples: usize, change: f64 },

    #[error("fit did not converge after {iterations} iterations (residual norm {residual_norm:e})")]
    NonConvergence {
        iterations: usize,
        residual_norm: f64,
    },

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("insufficient design: {0}")]
    Design(String),

    #[error("no peak with positive prominence in spectrum")]
    NoPeaks,

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of numerical procedures (fits, quadrature).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Quadrature { .. }
                | Error::NonConvergence { .. }
                | Error::RankDeficient(_)
                | Error::Design(_)
                | Error::NoPeaks
                | Error::DegenerateStrain { .. }
                | Error::UnreachableAngle { .. }
                | Error::UnreachableFrequency { .. }
                | Error::DivisionByZero(_)
        )
    }
}

pub(crate) fn ensure_finite(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Range {
            name,
            value,
            constraint: "must be finite",
        })
    }
}

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::Range {
            name,
            value,
            constraint: "must be finite and > 0",
        })
    }
}

pub(crate) fn ensure_non_negative(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(Error::Range {
            name,
            value,
            constraint: "must be finite and >= 0",
        })
    }
}
