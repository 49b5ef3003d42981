use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lm::{minimize, LmConfig, Problem};
use crate::nv_core::Group;
use crate::optics::{canonical_theta, quadratic_form_gradient, quadratic_forms};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationPoint {
    /// Linear polarization angle (rad).
    pub phi: f64,
    pub pl_ex: f64,
    pub pl_ey: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationScan {
    pub group: Group,
    /// Laser power at the sample (W).
    pub p_in: f64,
    pub points: Vec<PolarizationPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolarizationFit {
    /// Dipole angle in (-π/2, π/2].
    pub theta: f64,
    pub p_sat: f64,
    /// Ellipticity phase in [0, π/2].
    pub psi: f64,
    /// PL per unit absorption intensity.
    pub scale: f64,
    pub sigma_theta: f64,
    pub sigma_p_sat: f64,
    pub sigma_psi: f64,
    pub sigma_scale: f64,
    pub residual_norm: f64,
}

const MIN_DISTINCT_PHI: usize = 8;
const MIN_PHI_SPAN: f64 = 150.0 * PI / 180.0;
const SEED_RESTARTS: usize = 4;

/// Parameters: [θ, ln P_sat, ψ, scale].
struct PolProblem<'a> {
    scan: &'a PolarizationScan,
}

impl PolProblem<'_> {
    fn model(&self, p: &[f64], phi: f64) -> (f64, f64, f64, f64) {
        let (q_ex, q_ey) = quadratic_forms(self.scan.group, p[0], phi, p[2]);
        let r = self.scan.p_in * (-p[1]).exp();
        (-(-r * q_ex).exp_m1(), -(-r * q_ey).exp_m1(), q_ex, q_ey)
    }
}

impl Problem for PolProblem<'_> {
    fn residual_count(&self) -> usize {
        2 * self.scan.points.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, pt) in self.scan.points.iter().enumerate() {
            let (ix, iy, _, _) = self.model(p, pt.phi);
            out[2 * i] = p[3] * ix - pt.pl_ex;
            out[2 * i + 1] = p[3] * iy - pt.pl_ey;
        }
    }

    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
        let r = self.scan.p_in * (-p[1]).exp();
        for (i, pt) in self.scan.points.iter().enumerate() {
            let (ix, iy, qx, qy) = self.model(p, pt.phi);
            let (dq_t, dq_p) = quadratic_form_gradient(self.scan.group, p[0], pt.phi, p[2]);
            for (row, i_val, q, sign) in [(2 * i, ix, qx, 1.0), (2 * i + 1, iy, qy, -1.0)] {
                let decay = (-r * q).exp();
                // clamped forms have no gradient
                let g = if q > 0.0 { sign } else { 0.0 };
                out[(row, 0)] = p[3] * r * decay * g * dq_t;
                out[(row, 1)] = -p[3] * r * q * decay;
                out[(row, 2)] = p[3] * r * decay * g * dq_p;
                out[(row, 3)] = i_val;
            }
        }
    }
}

fn check_design(scan: &PolarizationScan) -> Result<()> {
    if !(scan.p_in.is_finite() && scan.p_in > 0.0) {
        return Err(Error::Range {
            name: "p_in",
            value: scan.p_in,
            constraint: "> 0",
        });
    }
    let mut phis: Vec<f64> = Vec::with_capacity(scan.points.len());
    for pt in &scan.points {
        if !(pt.phi.is_finite() && pt.pl_ex.is_finite() && pt.pl_ey.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite polarization point {pt:?}")));
        }
        phis.push(pt.phi);
    }
    phis.sort_by(f64::total_cmp);
    phis.dedup();
    if phis.len() < MIN_DISTINCT_PHI {
        return Err(Error::Design(format!(
            "{} distinct polarization angles, at least {MIN_DISTINCT_PHI} needed",
            phis.len()
        )));
    }
    let span = phis[phis.len() - 1] - phis[0];
    if span < MIN_PHI_SPAN {
        return Err(Error::Design(format!(
            "polarization angles span {:.1} deg, at least 150 deg needed",
            span.to_degrees()
        )));
    }
    Ok(())
}

/// Best linear scale and the resulting sum of squares for fixed (θ, P_sat, ψ).
fn profile(problem: &PolProblem, p: &[f64; 3]) -> (f64, f64) {
    let mut sii = 0.0;
    let mut siy = 0.0;
    let mut syy = 0.0;
    for pt in &problem.scan.points {
        let (ix, iy, _, _) = problem.model(&[p[0], p[1], p[2], 1.0], pt.phi);
        sii += ix * ix + iy * iy;
        siy += ix * pt.pl_ex + iy * pt.pl_ey;
        syy += pt.pl_ex * pt.pl_ex + pt.pl_ey * pt.pl_ey;
    }
    if sii <= 0.0 {
        return (0.0, syy);
    }
    let scale = siy / sii;
    (scale, syy - scale * siy)
}

/// Fit θ, P_sat, ψ and the PL scale to a polarization scan of both
/// transitions. Seeds come from a coarse grid over the physical ranges.
///
/// (θ, ψ) and (-θ, π - ψ) produce identical data; the returned branch has
/// ψ in [0, π/2].
pub fn fit_polarization(scan: &PolarizationScan) -> Result<PolarizationFit> {
    check_design(scan)?;
    let problem = PolProblem { scan };
    // ψ = 0 is a stationary point of the model (the ψ derivative carries
    // sin ψ), so the seed grid stays strictly inside (0, π/2)
    let mut seeds: Vec<(f64, [f64; 4])> = Vec::new();
    for it in 0..36 {
        let theta = -FRAC_PI_2 + (it as f64 + 0.5) * PI / 36.0;
        for ip in 0..7 {
            let ln_p_sat = (scan.p_in * 2f64.powi(ip - 3)).ln();
            for ipsi in 0..5 {
                let psi = (ipsi as f64 + 0.5) * PI / 10.0;
                let (scale, ss) = profile(&problem, &[theta, ln_p_sat, psi]);
                if scale > 0.0 && ss.is_finite() {
                    seeds.push((ss, [theta, ln_p_sat, psi, scale]));
                }
            }
        }
    }
    if seeds.is_empty() {
        return Err(Error::NoPeaks);
    }
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<crate::lm::LmReport> = None;
    let mut last_err = None;
    for (_, seed) in seeds.iter().take(SEED_RESTARTS) {
        match minimize(&problem, seed, &LmConfig::default()) {
            Ok(rep) if best.as_ref().is_none_or(|b| rep.cost < b.cost) => best = Some(rep),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    let rep = match (best, last_err) {
        (Some(rep), _) => rep,
        (None, Some(e)) => return Err(e),
        (None, None) => return Err(Error::NoPeaks),
    };
    let cov = rep.scaled_covariance(problem.residual_count());
    let sd = |j: usize| cov[(j, j)].max(0.0).sqrt();

    let mut theta = rep.params[0];
    let mut psi = rep.params[2].rem_euclid(2.0 * PI);
    if psi > PI {
        psi = 2.0 * PI - psi;
    }
    if psi > FRAC_PI_2 {
        psi = PI - psi;
        theta = -theta;
    }
    let p_sat = rep.params[1].exp();
    Ok(PolarizationFit {
        theta: canonical_theta(theta),
        p_sat,
        psi,
        scale: rep.params[3],
        sigma_theta: sd(0),
        sigma_p_sat: p_sat * sd(1),
        sigma_psi: sd(2),
        sigma_scale: sd(3),
        residual_norm: rep.residual_norm,
    })
}
