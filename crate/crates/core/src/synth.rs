//! Synthetic strain-scan and polarization-scan datasets, optionally with
//! seeded noise, for exercising the fitting pipeline.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::inference::{
    propagate_uncertainties, NvDataset, PolarizationPoint, PolarizationScan, StrainScanPoint, UncertaintyContext,
};
use crate::mechanics::{mode_strain, CantileverGeometry, DEFAULT_DEPTH_UNCERTAINTY};
use crate::nv_core::{stuckelberg_angle, zero_strain_splitting, IntrinsicStrain, NvOrientation, StrainModel, SymmetryShifts};
use crate::optics::{saturated_intensity, LaserPolarization};
use crate::spectra::{NvSite, DEFAULT_PHASE_UNCERTAINTY};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Strobe phase error drawn uniformly in ±this per point (rad).
    pub phase_jitter: f64,
    /// Gaussian spread of each site's true depth about the nominal (m).
    pub depth_sigma: f64,
    /// Gaussian read-out noise on each transition frequency (Hz).
    pub frequency_sigma: f64,
    /// Gaussian noise on polarization-scan PL (kcps).
    pub pl_sigma: f64,
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel {
        phase_jitter: 0.0,
        depth_sigma: 0.0,
        frequency_sigma: 0.0,
        pl_sigma: 0.0,
    };

    /// Phase error within the 5° strobe bound and 13 nm depth straggle.
    pub fn realistic() -> Self {
        Self {
            phase_jitter: DEFAULT_PHASE_UNCERTAINTY,
            depth_sigma: DEFAULT_DEPTH_UNCERTAINTY,
            ..Self::NONE
        }
    }

    pub fn is_none(&self) -> bool {
        *self == Self::NONE
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::NONE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisPlan {
    /// Signed tip deflections sampled in each strain scan (m).
    pub deflections: Vec<f64>,
    /// Polarization angles per scan, evenly spaced over [0, π).
    pub polarization_points: usize,
    pub laser: LaserPolarization,
    pub phase_uncertainty: f64,
    pub depth_uncertainty: f64,
}

impl Default for SynthesisPlan {
    fn default() -> Self {
        Self {
            deflections: (-6..=6).map(|i| i as f64 * 4e-9).collect(),
            polarization_points: 36,
            laser: LaserPolarization::default(),
            phase_uncertainty: DEFAULT_PHASE_UNCERTAINTY,
            depth_uncertainty: DEFAULT_DEPTH_UNCERTAINTY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// Strain scans, with observed θ and Δf0 taken from the rest state.
    pub datasets: Vec<NvDataset>,
    /// One polarization scan per site, same order.
    pub polarization: Vec<PolarizationScan>,
}

/// Independent random stream per (seed, stream) pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Strain and polarization scans for every site. Each site draws from its
/// own stream, so output does not depend on evaluation order.
pub fn synthesize_dataset(
    sites: &[NvSite],
    model: &StrainModel,
    plan: &SynthesisPlan,
    noise: &NoiseModel,
    seed: u64,
) -> Result<SyntheticData> {
    if sites.is_empty() {
        return Err(Error::Config("sites: at least one site is required".into()));
    }
    if plan.polarization_points < 1 {
        return Err(Error::Config("polarization_points: must be >= 1".into()));
    }
    if plan.deflections.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config("deflections_m: values must be finite".into()));
    }
    plan.laser.validate()?;
    let mut datasets = Vec::with_capacity(sites.len());
    let mut polarization = Vec::with_capacity(sites.len());
    for (i, site) in sites.iter().enumerate() {
        site.validate()?;
        let mut rng = stream_rng(seed, i as u64);
        datasets.push(strain_scan(site, model, plan, noise, &mut rng)?);
        polarization.push(polarization_scan(site, plan, noise, &mut rng)?);
    }
    Ok(SyntheticData { datasets, polarization })
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("positive sigma").sample(rng)
    } else {
        0.0
    }
}

fn strain_scan(
    site: &NvSite,
    model: &StrainModel,
    plan: &SynthesisPlan,
    noise: &NoiseModel,
    rng: &mut ChaCha8Rng,
) -> Result<NvDataset> {
    let nominal = site.geometry;
    let mut truth = site.clone();
    let depth = nominal.nv_depth + gaussian(rng, noise.depth_sigma);
    truth.geometry = CantileverGeometry {
        nv_depth: depth.clamp(0.0, nominal.thickness),
        ..nominal
    };
    let ctx = UncertaintyContext {
        site,
        model,
        phase_uncertainty: plan.phase_uncertainty,
        depth_uncertainty: plan.depth_uncertainty,
    };
    let sigmas = propagate_uncertainties(&ctx, &plan.deflections);
    let mut points = Vec::with_capacity(plan.deflections.len());
    for (&x, &(sigma_f, sigma_eps)) in plan.deflections.iter().zip(&sigmas) {
        let delta = if noise.phase_jitter > 0.0 {
            rng.random_range(-noise.phase_jitter..=noise.phase_jitter)
        } else {
            0.0
        };
        let t = truth.transitions_at(model, x * delta.cos());
        points.push(StrainScanPoint {
            eps: mode_strain(&nominal, x),
            f_plus: t.plus + gaussian(rng, noise.frequency_sigma),
            f_minus: t.minus + gaussian(rng, noise.frequency_sigma),
            sigma_f: sigma_f.hypot(noise.frequency_sigma),
            sigma_eps,
        });
    }
    let theta = stuckelberg_angle(&site.intrinsic, &SymmetryShifts::default()).ok();
    Ok(NvDataset {
        site_id: site.id.clone(),
        group: site.orientation.group(),
        points,
        theta_obs: theta,
        delta_f0_obs: Some(zero_strain_splitting(&site.intrinsic)),
    })
}

fn polarization_scan(
    site: &NvSite,
    plan: &SynthesisPlan,
    noise: &NoiseModel,
    rng: &mut ChaCha8Rng,
) -> Result<PolarizationScan> {
    let group = site.orientation.group();
    let theta = stuckelberg_angle(&site.intrinsic, &SymmetryShifts::default()).unwrap_or(0.0);
    let n = plan.polarization_points;
    let points = (0..n)
        .map(|k| {
            let phi = k as f64 * PI / n as f64;
            let d = saturated_intensity(group, theta, &plan.laser.with_phi(phi));
            PolarizationPoint {
                phi,
                pl_ex: site.pl_scale * d.i_ex + gaussian(rng, noise.pl_sigma),
                pl_ey: site.pl_scale * d.i_ey + gaussian(rng, noise.pl_sigma),
            }
        })
        .collect();
    Ok(PolarizationScan {
        group,
        p_in: plan.laser.p_in,
        points,
    })
}

/// Twelve sites, six per orientation group, spread along the beam with
/// intrinsic splittings of a few GHz at assorted dipole angles.
pub fn reference_ensemble() -> Vec<NvSite> {
    // (orientation, axial position µm, δf_A1 GHz, Δf0 GHz, θ deg)
    let table: [(NvOrientation, f64, f64, f64, f64); 12] = [
        (NvOrientation::M1M1M1, 0.0, 1.2, 3.1, 16.4),
        (NvOrientation::P1P1M1, 0.8, -2.5, 5.4, 45.9),
        (NvOrientation::M1M1M1, 1.5, 0.4, 2.2, -28.0),
        (NvOrientation::P1P1M1, 2.4, 3.3, 7.9, 63.6),
        (NvOrientation::M1M1M1, 3.0, -0.9, 4.6, -72.5),
        (NvOrientation::P1P1M1, 4.2, 1.8, 1.7, 8.0),
        (NvOrientation::M1P1P1, 0.0, -1.6, 3.8, 33.9),
        (NvOrientation::P1M1P1, 0.6, 2.1, 6.2, -11.2),
        (NvOrientation::M1P1P1, 1.1, -3.4, 2.9, 77.0),
        (NvOrientation::P1M1P1, 2.0, 0.7, 5.0, -55.3),
        (NvOrientation::M1P1P1, 3.3, -0.2, 1.4, 24.1),
        (NvOrientation::P1M1P1, 4.6, 2.9, 8.3, -40.0),
    ];
    table
        .iter()
        .enumerate()
        .map(|(i, &(orientation, axial_um, a1_ghz, df0_ghz, theta_deg))| NvSite {
            id: format!("nv{:02}", i + 1),
            orientation,
            intrinsic: IntrinsicStrain::from_splitting_and_angle(a1_ghz * 1e9, df0_ghz * 1e9, theta_deg.to_radians()),
            pl_scale: 30.0 + 2.0 * i as f64,
            geometry: CantileverGeometry {
                nv_axial: axial_um * 1e-6,
                ..CantileverGeometry::default()
            },
            ..NvSite::default()
        })
        .collect()
}
