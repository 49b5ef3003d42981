//! Polarization selection rules for the E_x / E_y transitions: dipole
//! rotation by the Stuckelberg angle, saturation and laser ellipticity.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::mechanics::strain_per_deflection;
use crate::nv_core::{stuckelberg_angle, Group, StrainModel, SymmetryShifts};
use crate::spectra::{Antinode, NvSite};

/// Default ellipticity phase delay.
pub const DEFAULT_PSI_DEG: f64 = 54.0;
/// Default saturation power (W).
pub const DEFAULT_P_SAT: f64 = 0.4e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaserPolarization {
    /// Linear polarization angle from [-110].
    pub phi: f64,
    /// Phase delay between the [-110] and [110] field components.
    pub psi: f64,
    pub p_in: f64,
    pub p_sat: f64,
}

impl Default for LaserPolarization {
    fn default() -> Self {
        Self {
            phi: 0.0,
            psi: DEFAULT_PSI_DEG.to_radians(),
            p_in: DEFAULT_P_SAT,
            p_sat: DEFAULT_P_SAT,
        }
    }
}

impl LaserPolarization {
    pub fn new(phi: f64, psi: f64, p_in: f64, p_sat: f64) -> Result<Self> {
        let p = Self { phi, psi, p_in, p_sat };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("p_in", self.p_in)?;
        ensure_positive("p_sat", self.p_sat)?;
        if !self.phi.is_finite() || !self.psi.is_finite() {
            return Err(Error::InvalidInput("polarization angles must be finite".into()));
        }
        Ok(())
    }

    pub fn with_phi(self, phi: f64) -> Self {
        Self { phi, ..self }
    }
}

/// Normalized absorption intensities of the E_x and E_y transitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipolePattern {
    pub i_ex: f64,
    pub i_ey: f64,
}

/// Unsaturated squared projections for a linearly polarized drive.
pub fn linear_intensity(group: Group, theta: f64, phi: f64) -> DipolePattern {
    let (st, ct) = theta.sin_cos();
    // group B swaps the roles of sin φ and cos φ
    let (sp, cp) = match group {
        Group::A => phi.sin_cos(),
        Group::B => {
            let (s, c) = phi.sin_cos();
            (c, s)
        }
    };
    let s3 = 3f64.sqrt();
    let ex = ct * cp / s3 - st * sp;
    let ey = st * cp / s3 + ct * sp;
    DipolePattern {
        i_ex: ex * ex,
        i_ey: ey * ey,
    }
}

/// Effective-power quadratic forms (q_ex, q_ey) including the cos ψ cross
/// term. Both are nonnegative.
pub fn quadratic_forms(group: Group, theta: f64, phi: f64, psi: f64) -> (f64, f64) {
    let (sin_sq, cos_sq) = phi_weights(group, phi);
    let (st, ct) = theta.sin_cos();
    let cross = cross_term(theta, phi, psi);
    let q_ex = st * st * sin_sq + ct * ct * cos_sq / 3.0 - cross;
    let q_ey = ct * ct * sin_sq + st * st * cos_sq / 3.0 + cross;
    (q_ex.max(0.0), q_ey.max(0.0))
}

fn phi_weights(group: Group, phi: f64) -> (f64, f64) {
    let (sp, cp) = phi.sin_cos();
    match group {
        Group::A => (sp * sp, cp * cp),
        Group::B => (cp * cp, sp * sp),
    }
}

/// cos ψ written as sin(π/2 - ψ), which is exactly zero at ψ = π/2.
fn cos_psi(psi: f64) -> f64 {
    (FRAC_PI_2 - psi).sin()
}

fn cross_term(theta: f64, phi: f64, psi: f64) -> f64 {
    cos_psi(psi) * (2.0 * theta).sin() * (2.0 * phi).sin() / (2.0 * 3f64.sqrt())
}

/// Partial derivatives of q_ex with respect to θ and ψ; q_ey has the
/// opposite derivatives.
pub(crate) fn quadratic_form_gradient(group: Group, theta: f64, phi: f64, psi: f64) -> (f64, f64) {
    let (sin_sq, cos_sq) = phi_weights(group, phi);
    let s2t = (2.0 * theta).sin();
    let c2t = (2.0 * theta).cos();
    let s2p = (2.0 * phi).sin();
    let r3 = 3f64.sqrt();
    let d_theta = s2t * sin_sq - s2t * cos_sq / 3.0 - cos_psi(psi) * c2t * s2p / r3;
    let d_psi = psi.sin() * s2t * s2p / (2.0 * r3);
    (d_theta, d_psi)
}

/// I = 1 - exp(-(P_in/P_sat) q) for both transitions.
pub fn saturated_intensity(group: Group, theta: f64, pol: &LaserPolarization) -> DipolePattern {
    let (q_ex, q_ey) = quadratic_forms(group, theta, pol.phi, pol.psi);
    let r = pol.p_in / pol.p_sat;
    DipolePattern {
        i_ex: -(-r * q_ex).exp_m1(),
        i_ey: -(-r * q_ey).exp_m1(),
    }
}

/// Wrap an angle into (-π/2, π/2].
pub fn canonical_theta(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(PI);
    if t > FRAC_PI_2 {
        t -= PI;
    }
    t
}

/// Deflection that rotates a site's dipoles to a target angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationMatch {
    /// Signed tip deflection (m).
    pub deflection: f64,
    /// E-channel shifts produced at that deflection (Hz).
    pub shifts: SymmetryShifts,
    /// Antinode to strobe (lower for negative deflection).
    pub antinode: Antinode,
    /// Drive amplitude |deflection|.
    pub amplitude: f64,
}

/// Find the tip deflection at which the Stuckelberg angle of `site` equals
/// `target_theta` (taken modulo π).
///
/// The drive moves the E-strain vector (δf_E1 + e1, δf_E2 + e2) along a
/// fixed direction, so only angles on that ray are reachable.
pub fn match_polarization(target_theta: f64, site: &NvSite, model: &StrainModel) -> Result<PolarizationMatch> {
    if !target_theta.is_finite() {
        return Err(Error::InvalidInput("target angle must be finite".into()));
    }
    let target = canonical_theta(target_theta);
    let per_m = model
        .shifts_per_strain(site.orientation)
        .scaled(strain_per_deflection(&site.geometry));
    let v0 = (site.intrinsic.df_e1, site.intrinsic.df_e2);

    if let Ok(current) = stuckelberg_angle(&site.intrinsic, &SymmetryShifts::default()) {
        if (canonical_theta(current - target)).abs() < 1e-12 {
            return Ok(PolarizationMatch {
                deflection: 0.0,
                shifts: SymmetryShifts::default(),
                antinode: Antinode::Upper,
                amplitude: 0.0,
            });
        }
    }

    let (dy, dx) = (2.0 * target).sin_cos();
    let denom = dx * per_m.e2 - dy * per_m.e1;
    let unreachable = Error::UnreachableAngle {
        target_deg: target.to_degrees(),
    };
    if denom == 0.0 || !denom.is_finite() {
        return Err(unreachable);
    }
    let x = (dy * v0.0 - dx * v0.1) / denom;
    let v = (v0.0 + x * per_m.e1, v0.1 + x * per_m.e2);
    // must point along +(cos 2θ, sin 2θ), not its opposite
    if dx * v.0 + dy * v.1 <= 0.0 {
        return Err(unreachable);
    }
    Ok(PolarizationMatch {
        deflection: x,
        shifts: per_m.scaled(x),
        antinode: if x < 0.0 { Antinode::Lower } else { Antinode::Upper },
        amplitude: x.abs(),
    })
}
