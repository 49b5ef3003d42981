//! Optomechanical figures of merit for a strain-coupled NV: single-phonon
//! coupling, cooperativity, thermalization and sideband cooling.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::mechanics::{thermal_occupation, thermalization_rate};
use crate::nv_core::{CouplingConstants, DIAMOND_POISSON_RATIO};

/// Coupling coefficient quoted for the transverse group-B configuration
/// (Hz per unit strain). It does not follow from the stored constants; see
/// [`CouplingMode`].
pub const QUOTED_COEFFICIENT: f64 = 2.31e15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceProposal {
    pub f_c: f64,
    pub quality_q: f64,
    /// Bath temperature (K).
    pub temperature: f64,
    /// Zero-point strain amplitude ε_0.
    pub eps_zero_point: f64,
    /// Optical dephasing rate Γ_2 (Hz).
    pub gamma2: f64,
    /// Optical Rabi frequency Ω (Hz).
    pub rabi_omega: f64,
    /// Optical linewidth Γ (Hz).
    pub linewidth_gamma: f64,
    pub constants: CouplingConstants,
    pub nu: f64,
}

impl Default for DeviceProposal {
    /// Doubly-clamped nanobeam proposal.
    fn default() -> Self {
        Self {
            f_c: 238e6,
            quality_q: 1e5,
            temperature: 4.2,
            eps_zero_point: 9.3e-9,
            gamma2: 100e6,
            rabi_omega: 100e6,
            linewidth_gamma: 100e6,
            constants: CouplingConstants::default(),
            nu: DIAMOND_POISSON_RATIO,
        }
    }
}

impl DeviceProposal {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("f_c", self.f_c)?;
        ensure_positive("quality_q", self.quality_q)?;
        ensure_positive("temperature", self.temperature)?;
        ensure_non_negative("eps_zero_point", self.eps_zero_point)?;
        ensure_positive("gamma2", self.gamma2)?;
        ensure_non_negative("rabi_omega", self.rabi_omega)?;
        ensure_positive("linewidth_gamma", self.linewidth_gamma)?;
        self.constants.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingMode {
    /// Evaluate the coefficient from the stored coupling constants.
    #[default]
    Literal,
    /// Use the quoted 2.31 PHz.
    Quoted,
}

/// Coefficient -λ_A1 ν + λ_A1'(1-ν) - λ_E(1+ν) in Hz per unit strain.
pub fn parallel_coefficient(k: &CouplingConstants, nu: f64) -> f64 {
    -k.lambda_a1 * nu + k.lambda_a1p * (1.0 - nu) - k.lambda_e * (1.0 + nu)
}

/// Single-phonon coupling g_∥ = coefficient · ε_0 (Hz), with the
/// coefficient it used.
pub fn parallel_coupling(p: &DeviceProposal, mode: CouplingMode) -> (f64, f64) {
    let c = match mode {
        CouplingMode::Literal => parallel_coefficient(&p.constants, p.nu),
        CouplingMode::Quoted => QUOTED_COEFFICIENT,
    };
    (c * p.eps_zero_point, c)
}

/// η = g²/(Γ_2 γ_th).
pub fn cooperativity(g: f64, gamma2: f64, gamma_th: f64) -> Result<f64> {
    ensure_positive("gamma2", gamma2)?;
    ensure_positive("gamma_th", gamma_th)?;
    Ok(g * g / (gamma2 * gamma_th))
}

/// Γ_C = 4π² g² Ω² / (Γ ω_c²), ω_c = 2π f_c.
pub fn cooling_rate(p: &DeviceProposal, g: f64) -> f64 {
    let omega_c = 2.0 * PI * p.f_c;
    4.0 * PI * PI * g * g * p.rabi_omega * p.rabi_omega / (p.linewidth_gamma * omega_c * omega_c)
}

/// n̄_ss = γ_th / Γ_C.
pub fn steady_state_occupation(gamma_th: f64, cooling: f64) -> Result<f64> {
    if cooling == 0.0 {
        return Err(Error::DivisionByZero("cooling rate"));
    }
    ensure_positive("cooling", cooling)?;
    ensure_non_negative("gamma_th", gamma_th)?;
    Ok(gamma_th / cooling)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub coupling_mode: CouplingMode,
    pub coefficient_literal_phz: f64,
    pub coefficient_quoted_phz: f64,
    pub g_literal_hz: f64,
    pub g_quoted_hz: f64,
    /// Coupling used for the downstream quantities.
    pub g_hz: f64,
    pub n_bar: f64,
    pub gamma_th_hz: f64,
    pub cooperativity: f64,
    pub cooling_rate_hz: f64,
    pub steady_state_occupation: Option<f64>,
    /// Set when Γ > f_c, outside the resolved-sideband regime the cooling
    /// rate assumes.
    pub unresolved_sideband: bool,
}

pub fn report(p: &DeviceProposal, mode: CouplingMode) -> Result<MetricsReport> {
    p.validate()?;
    let (g_lit, c_lit) = parallel_coupling(p, CouplingMode::Literal);
    let (g_quoted, c_quoted) = parallel_coupling(p, CouplingMode::Quoted);
    let g = match mode {
        CouplingMode::Literal => g_lit,
        CouplingMode::Quoted => g_quoted,
    };
    let n_bar = thermal_occupation(p.temperature, p.f_c)?;
    let gamma_th = thermalization_rate(n_bar, p.f_c, p.quality_q)?;
    let cooling = cooling_rate(p, g);
    Ok(MetricsReport {
        coupling_mode: mode,
        coefficient_literal_phz: c_lit / 1e15,
        coefficient_quoted_phz: c_quoted / 1e15,
        g_literal_hz: g_lit,
        g_quoted_hz: g_quoted,
        g_hz: g,
        n_bar,
        gamma_th_hz: gamma_th,
        cooperativity: cooperativity(g, p.gamma2, gamma_th)?,
        cooling_rate_hz: cooling,
        steady_state_occupation: (cooling > 0.0).then(|| gamma_th / cooling),
        unresolved_sideband: p.linewidth_gamma > p.f_c,
    })
}
