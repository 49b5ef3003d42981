//! JSON run configuration. Every key carries its unit; angles are degrees
//! here and radians everywhere else. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::FitOptions;
use crate::mechanics::{
    CantileverGeometry, MechanicalMode, DEFAULT_AMPLITUDE_CALIBRATION, DEFAULT_DEPTH_UNCERTAINTY, DEFAULT_NV_DEPTH,
};
use crate::metrics::{CouplingMode, DeviceProposal};
use crate::nv_core::{CouplingConstants, Group, IntrinsicStrain, NvOrientation, StrainModel, DIAMOND_POISSON_RATIO};
use crate::optics::{LaserPolarization, DEFAULT_PSI_DEG, DEFAULT_P_SAT};
use crate::spectra::{linear_grid, Antinode, Branch, IntensityModel, NvSite, StrobeWindow, DEFAULT_STROBE_TAU};
use crate::synth::{reference_ensemble, NoiseModel, SynthesisPlan};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub device: DeviceConfig,
    pub sites: Vec<SiteConfig>,
    pub laser: LaserConfig,
    pub drive: DriveConfig,
    pub strobe: Option<StrobeConfig>,
    pub constants: ConstantsConfig,
    pub poisson_ratio: Option<f64>,
    pub seed: u64,
    pub synthesis: SynthesisConfig,
    pub fit: FitConfig,
    pub matching: MatchConfig,
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub length_m: f64,
    pub width_m: f64,
    pub thickness_m: f64,
    pub f_c_hz: f64,
    pub quality_q: f64,
    pub x_max_m: f64,
    pub temperature_k: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        let g = CantileverGeometry::default();
        Self {
            length_m: g.length,
            width_m: g.width,
            thickness_m: g.thickness,
            f_c_hz: 870e3,
            quality_q: 2e4,
            x_max_m: 20e-9,
            temperature_k: 4.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiteConfig {
    pub id: String,
    /// Axis label such as "-111" or "[1-11]".
    pub orientation: String,
    pub f_zpl_hz: f64,
    pub df_a1_hz: f64,
    pub df_e1_hz: Option<f64>,
    pub df_e2_hz: Option<f64>,
    /// Alternative to df_e1/df_e2: splitting at rest and dipole angle.
    pub delta_f0_hz: Option<f64>,
    pub theta_deg: Option<f64>,
    pub depth_m: f64,
    pub axial_m: f64,
    pub linewidth_hz: f64,
    pub pl_scale_kcps: f64,
}

impl Default for SiteConfig {
    fn default() -> Self {
        let s = NvSite::default();
        Self {
            id: s.id,
            orientation: s.orientation.label().into(),
            f_zpl_hz: s.f_zpl,
            df_a1_hz: 0.0,
            df_e1_hz: None,
            df_e2_hz: None,
            delta_f0_hz: None,
            theta_deg: None,
            depth_m: DEFAULT_NV_DEPTH,
            axial_m: 0.0,
            linewidth_hz: s.linewidth_gamma,
            pl_scale_kcps: s.pl_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaserConfig {
    pub phi_deg: f64,
    pub psi_deg: f64,
    pub p_in_w: f64,
    pub p_sat_w: f64,
    /// Detuning grid (Hz) relative to each site's f_zpl.
    pub grid_hz: GridConfig,
    /// Fixed E_x / E_y intensities instead of the polarization model.
    pub fixed_intensity: Option<[f64; 2]>,
}

impl Default for LaserConfig {
    fn default() -> Self {
        Self {
            phi_deg: 0.0,
            psi_deg: DEFAULT_PSI_DEG,
            p_in_w: DEFAULT_P_SAT,
            p_sat_w: DEFAULT_P_SAT,
            grid_hz: GridConfig {
                min: -20e9,
                max: 20e9,
                points: 401,
            },
            fixed_intensity: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveConfig {
    /// Resonant tip amplitude; used when `f_piezo_hz` is absent.
    pub x_c_m: f64,
    /// Drive frequency; the amplitude then follows the mechanical response.
    pub f_piezo_hz: Option<f64>,
    pub piezo_sweep_hz: Option<GridConfig>,
    pub amplitude_sweep_m: Option<GridConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AntinodeConfig {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrobeConfig {
    pub tau_s: f64,
    /// Window start within the period; overrides `antinode`.
    pub start_s: Option<f64>,
    pub antinode: AntinodeConfig,
    pub phase_uncertainty_deg: f64,
}

impl Default for StrobeConfig {
    fn default() -> Self {
        Self {
            tau_s: DEFAULT_STROBE_TAU,
            start_s: None,
            antinode: AntinodeConfig::Upper,
            phase_uncertainty_deg: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsConfig {
    pub lambda_a1_hz_per_strain: f64,
    pub lambda_a1p_hz_per_strain: f64,
    pub lambda_e_hz_per_strain: f64,
    pub lambda_ep_hz_per_strain: f64,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        let k = CouplingConstants::default();
        Self {
            lambda_a1_hz_per_strain: k.lambda_a1,
            lambda_a1p_hz_per_strain: k.lambda_a1p,
            lambda_e_hz_per_strain: k.lambda_e,
            lambda_ep_hz_per_strain: k.lambda_ep,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleConfig {
    /// Use only the listed sites.
    #[default]
    None,
    /// Twelve-site ensemble spanning both orientation groups, used when no
    /// sites are listed.
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub phase_jitter_deg: f64,
    pub depth_sigma_m: f64,
    pub frequency_sigma_hz: f64,
    pub pl_sigma_kcps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub ensemble: EnsembleConfig,
    pub deflections_m: Vec<f64>,
    pub polarization_points: usize,
    pub phase_uncertainty_deg: f64,
    pub depth_uncertainty_m: f64,
    pub noise: NoiseConfig,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        let p = SynthesisPlan::default();
        Self {
            ensemble: EnsembleConfig::None,
            deflections_m: p.deflections,
            polarization_points: p.polarization_points,
            phase_uncertainty_deg: p.phase_uncertainty.to_degrees(),
            depth_uncertainty_m: DEFAULT_DEPTH_UNCERTAINTY,
            noise: NoiseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub f_zpl_reference_hz: f64,
    pub calibration_fraction: f64,
    /// Orientation group for `fit polarization`.
    pub group: Group,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            f_zpl_reference_hz: NvSite::default().f_zpl,
            calibration_fraction: DEFAULT_AMPLITUDE_CALIBRATION,
            group: Group::B,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchConfig {
    Plus,
    Minus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    /// Site to tune; the first site when absent.
    pub site: Option<String>,
    pub target_hz: Option<f64>,
    pub branch: BranchConfig,
    pub x_limit_m: f64,
    pub target_theta_deg: Option<f64>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            site: None,
            target_hz: None,
            branch: BranchConfig::Plus,
            x_limit_m: 100e-9,
            target_theta_deg: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub f_c_hz: f64,
    pub quality_q: f64,
    pub temperature_k: f64,
    pub eps_zero_point: f64,
    pub gamma2_hz: f64,
    pub rabi_omega_hz: f64,
    pub linewidth_gamma_hz: f64,
    pub coupling_mode: CouplingMode,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        let p = DeviceProposal::default();
        Self {
            f_c_hz: p.f_c,
            quality_q: p.quality_q,
            temperature_k: p.temperature,
            eps_zero_point: p.eps_zero_point,
            gamma2_hz: p.gamma2,
            rabi_omega_hz: p.rabi_omega,
            linewidth_gamma_hz: p.linewidth_gamma,
            coupling_mode: CouplingMode::Quoted,
        }
    }
}

fn bad(key: &str, constraint: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {constraint}"))
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(bad(key, format!("must be finite and > 0, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(bad(key, format!("must be finite and >= 0, got {v}")))
    }
}

fn finite(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad(key, format!("must be finite, got {v}")))
    }
}

impl GridConfig {
    pub fn to_grid(&self, key: &str) -> Result<Vec<f64>> {
        if self.points < 2 {
            return Err(bad(&format!("{key}.points"), format!("must be >= 2, got {}", self.points)));
        }
        finite(&format!("{key}.min"), self.min)?;
        finite(&format!("{key}.max"), self.max)?;
        if self.max <= self.min {
            return Err(bad(&format!("{key}.max"), "must exceed min"));
        }
        linear_grid(self.min, self.max, self.points)
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Check everything that does not depend on the subcommand.
    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        self.mode()?;
        self.model()?;
        self.sites()?;
        self.polarization()?;
        self.laser.grid_hz.to_grid("laser.grid_hz")?;
        if let Some([ex, ey]) = self.laser.fixed_intensity {
            non_negative("laser.fixed_intensity[0]", ex)?;
            non_negative("laser.fixed_intensity[1]", ey)?;
        }
        non_negative("drive.x_c_m", self.drive.x_c_m)?;
        if let Some(f) = self.drive.f_piezo_hz {
            positive("drive.f_piezo_hz", f)?;
        }
        if let Some(g) = self.drive.piezo_sweep_hz {
            g.to_grid("drive.piezo_sweep_hz")?;
        }
        if let Some(g) = self.drive.amplitude_sweep_m {
            g.to_grid("drive.amplitude_sweep_m")?;
        }
        if let Some(s) = &self.strobe {
            positive("strobe.tau_s", s.tau_s)?;
            non_negative("strobe.phase_uncertainty_deg", s.phase_uncertainty_deg)?;
            if let Some(t) = s.start_s {
                non_negative("strobe.start_s", t)?;
            }
        }
        self.synthesis_plan()?;
        self.noise()?;
        self.fit_options()?;
        positive("matching.x_limit_m", self.matching.x_limit_m)?;
        self.proposal()?;
        Ok(())
    }

    pub fn geometry(&self) -> Result<CantileverGeometry> {
        let d = &self.device;
        Ok(CantileverGeometry {
            length: positive("device.length_m", d.length_m)?,
            width: positive("device.width_m", d.width_m)?,
            thickness: positive("device.thickness_m", d.thickness_m)?,
            nv_depth: DEFAULT_NV_DEPTH.min(0.5 * d.thickness_m),
            nv_axial: 0.0,
        })
    }

    pub fn mode(&self) -> Result<MechanicalMode> {
        let d = &self.device;
        Ok(MechanicalMode {
            f_c: positive("device.f_c_hz", d.f_c_hz)?,
            quality_q: positive("device.quality_q", d.quality_q)?,
            x_max: non_negative("device.x_max_m", d.x_max_m)?,
        })
    }

    pub fn constants(&self) -> Result<CouplingConstants> {
        let c = &self.constants;
        Ok(CouplingConstants {
            lambda_a1: finite("constants.lambda_a1_hz_per_strain", c.lambda_a1_hz_per_strain)?,
            lambda_a1p: finite("constants.lambda_a1p_hz_per_strain", c.lambda_a1p_hz_per_strain)?,
            lambda_e: finite("constants.lambda_e_hz_per_strain", c.lambda_e_hz_per_strain)?,
            lambda_ep: finite("constants.lambda_ep_hz_per_strain", c.lambda_ep_hz_per_strain)?,
        })
    }

    pub fn nu(&self) -> Result<f64> {
        let nu = self.poisson_ratio.unwrap_or(DIAMOND_POISSON_RATIO);
        if !(nu.is_finite() && nu > -1.0 && nu < 0.5) {
            return Err(bad("poisson_ratio", format!("must lie in (-1, 0.5), got {nu}")));
        }
        Ok(nu)
    }

    pub fn model(&self) -> Result<StrainModel> {
        Ok(StrainModel {
            constants: self.constants()?,
            poisson_ratio: self.nu()?,
        })
    }

    /// Configured sites, or the twelve-site ensemble when none are listed
    /// and the synthesis section asks for it.
    pub fn sites(&self) -> Result<Vec<NvSite>> {
        let geometry = self.geometry()?;
        if self.sites.is_empty() && self.synthesis.ensemble == EnsembleConfig::Reference {
            return Ok(reference_ensemble()
                .into_iter()
                .map(|s| NvSite {
                    geometry: CantileverGeometry {
                        nv_depth: s.geometry.nv_depth,
                        nv_axial: s.geometry.nv_axial,
                        ..geometry
                    },
                    ..s
                })
                .collect());
        }
        let mut ids = std::collections::HashSet::new();
        self.sites
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let key = |f: &str| format!("sites[{i}].{f}");
                if s.id.is_empty() || s.id.contains([',', '/', '\\']) {
                    return Err(bad(&key("id"), "must be non-empty without ',', '/' or '\\'"));
                }
                if !ids.insert(s.id.clone()) {
                    return Err(bad(&key("id"), format!("duplicate id '{}'", s.id)));
                }
                let orientation: NvOrientation = s
                    .orientation
                    .parse()
                    .map_err(|e: Error| bad(&key("orientation"), e))?;
                let intrinsic = match (s.df_e1_hz, s.df_e2_hz, s.delta_f0_hz, s.theta_deg) {
                    (e1, e2, None, None) => IntrinsicStrain {
                        df_a1: finite(&key("df_a1_hz"), s.df_a1_hz)?,
                        df_e1: finite(&key("df_e1_hz"), e1.unwrap_or(0.0))?,
                        df_e2: finite(&key("df_e2_hz"), e2.unwrap_or(0.0))?,
                    },
                    (None, None, Some(df0), Some(theta)) => IntrinsicStrain::from_splitting_and_angle(
                        finite(&key("df_a1_hz"), s.df_a1_hz)?,
                        non_negative(&key("delta_f0_hz"), df0)?,
                        finite(&key("theta_deg"), theta)?.to_radians(),
                    ),
                    _ => {
                        return Err(bad(
                            &key("df_e1_hz"),
                            "give either df_e1_hz/df_e2_hz or both delta_f0_hz and theta_deg",
                        ))
                    }
                };
                let depth = non_negative(&key("depth_m"), s.depth_m)?;
                if depth > geometry.thickness {
                    return Err(bad(&key("depth_m"), "must not exceed device.thickness_m"));
                }
                let axial = non_negative(&key("axial_m"), s.axial_m)?;
                if axial > geometry.length {
                    return Err(bad(&key("axial_m"), "must not exceed device.length_m"));
                }
                Ok(NvSite {
                    id: s.id.clone(),
                    orientation,
                    intrinsic,
                    f_zpl: finite(&key("f_zpl_hz"), s.f_zpl_hz)?,
                    linewidth_gamma: positive(&key("linewidth_hz"), s.linewidth_hz)?,
                    pl_scale: non_negative(&key("pl_scale_kcps"), s.pl_scale_kcps)?,
                    geometry: geometry.with_position(depth, axial),
                })
            })
            .collect()
    }

    /// The site named by `matching.site`, else the first one.
    pub fn selected_site(&self, id: Option<&str>) -> Result<NvSite> {
        let sites = self.sites()?;
        match id.or(self.matching.site.as_deref()) {
            Some(id) => sites
                .into_iter()
                .find(|s| s.id == id)
                .ok_or_else(|| bad("matching.site", format!("no site with id '{id}'"))),
            None => sites.into_iter().next().ok_or_else(|| bad("sites", "at least one site is required")),
        }
    }

    pub fn polarization(&self) -> Result<LaserPolarization> {
        let l = &self.laser;
        Ok(LaserPolarization {
            phi: finite("laser.phi_deg", l.phi_deg)?.to_radians(),
            psi: finite("laser.psi_deg", l.psi_deg)?.to_radians(),
            p_in: non_negative("laser.p_in_w", l.p_in_w)?,
            p_sat: positive("laser.p_sat_w", l.p_sat_w)?,
        })
    }

    pub fn intensity(&self) -> Result<IntensityModel> {
        Ok(match self.laser.fixed_intensity {
            Some([ex, ey]) => IntensityModel::Fixed { ex, ey },
            None => IntensityModel::Polarized(self.polarization()?),
        })
    }

    pub fn laser_grid(&self) -> Result<Vec<f64>> {
        self.laser.grid_hz.to_grid("laser.grid_hz")
    }

    pub fn strobe_window(&self, period: f64) -> Result<StrobeWindow> {
        let s = self.strobe.ok_or_else(|| bad("strobe", "section required for this command"))?;
        let pu = s.phase_uncertainty_deg.to_radians();
        if s.tau_s > period {
            return Err(bad("strobe.tau_s", format!("must not exceed the drive period {period:e} s")));
        }
        let start = match s.start_s {
            Some(t) => t,
            None => {
                let antinode = match s.antinode {
                    AntinodeConfig::Upper => Antinode::Upper,
                    AntinodeConfig::Lower => Antinode::Lower,
                };
                StrobeWindow::at_antinode(period, s.tau_s, antinode)?.start
            }
        };
        if start >= period {
            return Err(bad("strobe.start_s", format!("must lie within the drive period {period:e} s")));
        }
        StrobeWindow::new(start, s.tau_s, pu, period)
    }

    pub fn synthesis_plan(&self) -> Result<SynthesisPlan> {
        let s = &self.synthesis;
        for (i, &x) in s.deflections_m.iter().enumerate() {
            finite(&format!("synthesis.deflections_m[{i}]"), x)?;
        }
        if s.polarization_points < 8 {
            return Err(bad("synthesis.polarization_points", "must be >= 8"));
        }
        Ok(SynthesisPlan {
            deflections: s.deflections_m.clone(),
            polarization_points: s.polarization_points,
            laser: self.polarization()?,
            phase_uncertainty: non_negative("synthesis.phase_uncertainty_deg", s.phase_uncertainty_deg)?.to_radians(),
            depth_uncertainty: non_negative("synthesis.depth_uncertainty_m", s.depth_uncertainty_m)?,
        })
    }

    pub fn noise(&self) -> Result<NoiseModel> {
        let n = &self.synthesis.noise;
        Ok(NoiseModel {
            phase_jitter: non_negative("synthesis.noise.phase_jitter_deg", n.phase_jitter_deg)?.to_radians(),
            depth_sigma: non_negative("synthesis.noise.depth_sigma_m", n.depth_sigma_m)?,
            frequency_sigma: non_negative("synthesis.noise.frequency_sigma_hz", n.frequency_sigma_hz)?,
            pl_sigma: non_negative("synthesis.noise.pl_sigma_kcps", n.pl_sigma_kcps)?,
        })
    }

    pub fn fit_options(&self) -> Result<FitOptions> {
        Ok(FitOptions {
            poisson_ratio: self.nu()?,
            f_zpl_reference: finite("fit.f_zpl_reference_hz", self.fit.f_zpl_reference_hz)?,
            calibration_fraction: non_negative("fit.calibration_fraction", self.fit.calibration_fraction)?,
        })
    }

    pub fn branch(&self) -> Branch {
        match self.matching.branch {
            BranchConfig::Plus => Branch::Plus,
            BranchConfig::Minus => Branch::Minus,
        }
    }

    pub fn proposal(&self) -> Result<DeviceProposal> {
        let m = &self.metrics;
        Ok(DeviceProposal {
            f_c: positive("metrics.f_c_hz", m.f_c_hz)?,
            quality_q: positive("metrics.quality_q", m.quality_q)?,
            temperature: positive("metrics.temperature_k", m.temperature_k)?,
            eps_zero_point: non_negative("metrics.eps_zero_point", m.eps_zero_point)?,
            gamma2: positive("metrics.gamma2_hz", m.gamma2_hz)?,
            rabi_omega: non_negative("metrics.rabi_omega_hz", m.rabi_omega_hz)?,
            linewidth_gamma: positive("metrics.linewidth_gamma_hz", m.linewidth_gamma_hz)?,
            constants: self.constants()?,
            nu: self.nu()?,
        })
    }
}
