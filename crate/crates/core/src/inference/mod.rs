//! Extraction of the four orbital strain coupling constants, per-site
//! intrinsic strain and polarization parameters from strain scans.
//!
//! The pipeline is two-stage: the common-mode shift (f+ + f-)/2 is linear
//! in the λ_A1 pair and is solved directly across both orientation groups;
//! λ_E and λ_E' are then fitted jointly over every site with the A1 pair
//! held fixed, each site carrying its own offset and intrinsic E strain.

mod common_mode;
mod e_constants;
mod io;
mod polarization;
mod uncertainty;

pub use common_mode::{fit_common_mode, CommonModeFit};
pub use e_constants::{fit_e_constants, EConstantsFit, SiteFit};
pub use io::{read_dataset_csv, read_polarization_csv, write_dataset_csv, write_polarization_csv};
pub use polarization::{fit_polarization, PolarizationFit, PolarizationPoint, PolarizationScan};
pub use uncertainty::{propagate_uncertainties, UncertaintyContext};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanics::DEFAULT_AMPLITUDE_CALIBRATION;
use crate::nv_core::{CouplingConstants, Group, DIAMOND_POISSON_RATIO};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrainScanPoint {
    /// Mechanically induced axial strain at the NV.
    pub eps: f64,
    pub f_plus: f64,
    pub f_minus: f64,
    /// Frequency uncertainty (Hz).
    pub sigma_f: f64,
    /// Strain uncertainty.
    pub sigma_eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NvDataset {
    pub site_id: String,
    pub group: Group,
    pub points: Vec<StrainScanPoint>,
    /// Dipole angle at rest, from a polarization scan.
    pub theta_obs: Option<f64>,
    /// Splitting at rest.
    pub delta_f0_obs: Option<f64>,
}

impl NvDataset {
    pub fn validate(&self) -> Result<()> {
        for p in &self.points {
            let ok = p.eps.is_finite()
                && p.f_plus.is_finite()
                && p.f_minus.is_finite()
                && p.sigma_f.is_finite()
                && p.sigma_f >= 0.0
                && p.sigma_eps.is_finite()
                && p.sigma_eps >= 0.0;
            if !ok {
                return Err(Error::InvalidInput(format!(
                    "site {}: non-finite value or negative uncertainty in {p:?}",
                    self.site_id
                )));
            }
        }
        Ok(())
    }

    pub fn distinct_strains(&self) -> usize {
        let mut e: Vec<f64> = self.points.iter().map(|p| p.eps).collect();
        e.sort_by(f64::total_cmp);
        e.dedup();
        e.len()
    }

    /// Splitting at the smallest |ε| in the scan.
    pub fn splitting_near_rest(&self) -> Option<f64> {
        self.points
            .iter()
            .min_by(|a, b| a.eps.abs().total_cmp(&b.eps.abs()))
            .map(|p| (p.f_plus - p.f_minus).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub poisson_ratio: f64,
    /// Reference line used to express per-site offsets as δf_A1.
    pub f_zpl_reference: f64,
    /// Fractional calibration uncertainty of the strain scale.
    pub calibration_fraction: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            poisson_ratio: DIAMOND_POISSON_RATIO,
            f_zpl_reference: 470.4e12,
            calibration_fraction: DEFAULT_AMPLITUDE_CALIBRATION,
        }
    }
}

/// Complete result of the two-stage coupling-constant extraction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaFit {
    pub constants: CouplingConstants,
    /// One-sigma statistical uncertainties (Hz/strain).
    pub statistical_sigma: [f64; 4],
    /// Fractional uncertainties including the calibration floor, in the
    /// order λ_A1, λ_A1', λ_E, λ_E'.
    pub fractional_uncertainty: [f64; 4],
    pub calibration_fraction: f64,
    pub sites: Vec<SiteFit>,
    pub common_mode_residual_norm: f64,
    pub e_fit_residual_norm: f64,
    pub e_fit_iterations: usize,
    pub converged: bool,
    /// False when λ_E' could not be determined (no group-A data) and was
    /// fixed at zero.
    pub lambda_ep_identifiable: bool,
}

/// Run both stages over a set of datasets.
pub fn fit_lambdas(datasets: &[NvDataset], options: &FitOptions) -> Result<LambdaFit> {
    let (a, b): (Vec<NvDataset>, Vec<NvDataset>) = datasets.iter().cloned().partition(|d| d.group == Group::A);
    let cm = fit_common_mode(&a, &b, options.poisson_ratio)?;
    let e = fit_e_constants(datasets, (cm.lambda_a1, cm.lambda_a1p), options)?;
    let constants = CouplingConstants {
        lambda_a1: cm.lambda_a1,
        lambda_a1p: cm.lambda_a1p,
        lambda_e: e.lambda_e,
        lambda_ep: e.lambda_ep,
    };
    let statistical_sigma = [
        cm.covariance[(0, 0)].max(0.0).sqrt(),
        cm.covariance[(1, 1)].max(0.0).sqrt(),
        e.covariance[(0, 0)].max(0.0).sqrt(),
        e.covariance[(1, 1)].max(0.0).sqrt(),
    ];
    let cal = options.calibration_fraction;
    let values = constants.as_array();
    let mut fractional = [0.0; 4];
    for k in 0..4 {
        let stat = if values[k] != 0.0 {
            statistical_sigma[k] / values[k].abs()
        } else {
            0.0
        };
        fractional[k] = stat.hypot(cal);
    }
    Ok(LambdaFit {
        constants,
        statistical_sigma,
        fractional_uncertainty: fractional,
        calibration_fraction: cal,
        sites: e.sites,
        common_mode_residual_norm: cm.residual_norm,
        e_fit_residual_norm: e.residual_norm,
        e_fit_iterations: e.iterations,
        converged: e.converged,
        lambda_ep_identifiable: e.lambda_ep_identifiable,
    })
}

/// Frequency precision floor applied to every point, so a point whose
/// propagated uncertainty vanishes (for example ε = 0) keeps a finite weight.
pub const SIGMA_FLOOR_HZ: f64 = 1e6;

/// sqrt(σ_f² + (slope·σ_ε)²), floored at [`SIGMA_FLOOR_HZ`].
pub(crate) fn effective_sigma(sigma_f: f64, slope: f64, sigma_eps: f64) -> f64 {
    sigma_f.hypot(slope * sigma_eps).max(SIGMA_FLOOR_HZ)
}
