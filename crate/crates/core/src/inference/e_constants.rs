use nalgebra::{DMatrix, Matrix2};
use serde::Serialize;

use super::{effective_sigma, FitOptions, NvDataset};
use crate::error::{Error, Result};
use crate::lm::{minimize, LmConfig, Problem};
use crate::nv_core::{
    a1_slope, CouplingConstants, Group, IntrinsicStrain, NvOrientation, StrainModel,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteFit {
    pub site_id: String,
    pub group: Group,
    /// f_ZPL + δf_A1 (Hz).
    pub offset_hz: f64,
    /// Intrinsic strain, with δf_A1 relative to the reference line.
    pub intrinsic: IntrinsicStrain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EConstantsFit {
    pub lambda_e: f64,
    pub lambda_ep: f64,
    pub lambda_ep_identifiable: bool,
    /// Covariance of (λ_E, λ_E'); the λ_E' entries are zero when fixed.
    pub covariance: Matrix2<f64>,
    pub sites: Vec<SiteFit>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// dE1/dε and dE2/dε per unit λ_E and λ_E', for a group.
fn e_coefficients(nu: f64, group: Group) -> [[f64; 2]; 2] {
    let o = NvOrientation::representative(group);
    let unit = |lambda_e: f64, lambda_ep: f64| {
        StrainModel {
            constants: CouplingConstants {
                lambda_a1: 0.0,
                lambda_a1p: 0.0,
                lambda_e,
                lambda_ep,
            },
            poisson_ratio: nu,
        }
        .shifts_per_strain(o)
    };
    let e = unit(1.0, 0.0);
    let ep = unit(0.0, 1.0);
    [[e.e1, ep.e1], [e.e2, ep.e2]]
}

struct Row {
    site: usize,
    eps: f64,
    f_plus: f64,
    f_minus: f64,
    w_plus: f64,
    w_minus: f64,
}

/// Parameters: [λ_E, (λ_E'), then (offset, δE1, δE2²) per site].
///
/// Axial strain leaves the E2 channel alone, so the lines depend on δE2 only
/// through its square. Fitting the square removes the δE2 = 0 saddle that
/// Gauss-Newton cannot see; the sign comes from the observed angle.
struct EProblem {
    rows: Vec<Row>,
    /// Largest absolute frequency in the input, for the rounding floor.
    magnitude: f64,
    /// Per site: A1 slope and dE1/dε per unit (λ_E, λ_E').
    site_coef: Vec<(f64, [f64; 2])>,
    free_ep: bool,
}

impl EProblem {
    fn base(&self) -> usize {
        if self.free_ep {
            2
        } else {
            1
        }
    }

    fn lambdas(&self, p: &[f64]) -> (f64, f64) {
        (p[0], if self.free_ep { p[1] } else { 0.0 })
    }

    /// (u, R) with u the total E1 shift and R the half splitting at a row.
    fn e_terms(&self, p: &[f64], row: &Row) -> (f64, f64) {
        let (le, lep) = self.lambdas(p);
        let c = &self.site_coef[row.site].1;
        let k = self.base() + 3 * row.site;
        let u = (c[0] * le + c[1] * lep) * row.eps + p[k + 1];
        (u, (u * u + p[k + 2]).max(0.0).sqrt().max(1e-300))
    }
}

impl Problem for EProblem {
    fn residual_count(&self) -> usize {
        2 * self.rows.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate() {
            let slope = self.site_coef[row.site].0;
            let off = p[self.base() + 3 * row.site];
            let (_, r) = self.e_terms(p, row);
            let center = off + slope * row.eps;
            out[2 * i] = (center + r - row.f_plus) * row.w_plus;
            out[2 * i + 1] = (center - r - row.f_minus) * row.w_minus;
        }
    }

    fn residual_floor(&self) -> f64 {
        let w = self.rows.iter().map(|r| r.w_plus.max(r.w_minus)).fold(0.0, f64::max);
        8.0 * f64::EPSILON * self.magnitude * w * (self.residual_count() as f64).sqrt()
    }

    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
        out.fill(0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let c = &self.site_coef[row.site].1;
            let k = self.base() + 3 * row.site;
            let (u, r) = self.e_terms(p, row);
            let (du, dq) = (u / r, 0.5 / r);
            let d_le = du * c[0] * row.eps;
            let d_lep = du * c[1] * row.eps;
            for (sign, idx, w) in [(1.0, 2 * i, row.w_plus), (-1.0, 2 * i + 1, row.w_minus)] {
                out[(idx, 0)] = sign * d_le * w;
                if self.free_ep {
                    out[(idx, 1)] = sign * d_lep * w;
                }
                out[(idx, k)] = w;
                out[(idx, k + 1)] = sign * du * w;
                out[(idx, k + 2)] = sign * dq * w;
            }
        }
    }
}

const REWEIGHT_PASSES: usize = 2;

/// Joint fit of λ_E, λ_E' and per-site (offset, δE1, δE2) over all sites,
/// with the A1 pair fixed at `a1 = (λ_A1, λ_A1')`.
///
/// Seeds for the intrinsic strain come from each site's observed θ and Δf0;
/// θ is required because it fixes the overall sign of the E couplings.
pub fn fit_e_constants(datasets: &[NvDataset], a1: (f64, f64), options: &FitOptions) -> Result<EConstantsFit> {
    let nu = options.poisson_ratio;
    if datasets.is_empty() {
        return Err(Error::Design("no datasets".into()));
    }
    if !datasets.iter().any(|d| d.group == Group::B) {
        return Err(Error::RankDeficient(
            "group-A data alone cannot separate λ_E from λ_E'".into(),
        ));
    }
    let free_ep = datasets.iter().any(|d| d.group == Group::A);
    let k_a1 = CouplingConstants {
        lambda_a1: a1.0,
        lambda_a1p: a1.1,
        lambda_e: 0.0,
        lambda_ep: 0.0,
    };

    // work relative to a common line so residuals are not limited by the
    // ~1e-16 relative rounding of absolute optical frequencies
    let reference = datasets[0]
        .points
        .first()
        .map(|p| 0.5 * (p.f_plus + p.f_minus))
        .unwrap_or(0.0);
    let mut site_coef = Vec::with_capacity(datasets.len());
    let mut rows = Vec::new();
    let mut seeds_intr = Vec::with_capacity(datasets.len());
    let mut seeds_off = Vec::with_capacity(datasets.len());
    for (s, d) in datasets.iter().enumerate() {
        d.validate()?;
        if d.distinct_strains() < 2 {
            return Err(Error::RankDeficient(format!(
                "site {} has fewer than 2 distinct strain values",
                d.site_id
            )));
        }
        let theta = d
            .theta_obs
            .ok_or_else(|| Error::Design(format!("site {} has no observed dipole angle", d.site_id)))?;
        let df0 = d
            .delta_f0_obs
            .or_else(|| d.splitting_near_rest())
            .unwrap_or(0.0);
        let slope = a1_slope(&k_a1, nu, d.group);
        let c = e_coefficients(nu, d.group);
        debug_assert!(c[1] == [0.0, 0.0], "axial strain reached the E2 channel");
        site_coef.push((slope, c[0]));
        let intr = IntrinsicStrain::from_splitting_and_angle(0.0, df0, theta);
        seeds_intr.push((intr.df_e1, intr.df_e2));
        let off = d
            .points
            .iter()
            .map(|p| 0.5 * (p.f_plus + p.f_minus) - reference - slope * p.eps)
            .sum::<f64>()
            / d.points.len() as f64;
        seeds_off.push(off);
        for p in &d.points {
            rows.push(Row {
                site: s,
                eps: p.eps,
                f_plus: p.f_plus - reference,
                f_minus: p.f_minus - reference,
                w_plus: 1.0,
                w_minus: 1.0,
            });
        }
    }

    let (le0, lep0) = seed_lambdas(datasets, &site_coef, &seeds_intr, free_ep);
    let mut params = vec![le0];
    if free_ep {
        params.push(lep0);
    }
    for s in 0..datasets.len() {
        params.extend([seeds_off[s], seeds_intr[s].0, seeds_intr[s].1.powi(2)]);
    }

    let magnitude = datasets
        .iter()
        .flat_map(|d| d.points.iter().flat_map(|p| [p.f_plus.abs(), p.f_minus.abs()]))
        .fold(0.0, f64::max);
    let mut problem = EProblem {
        rows,
        magnitude,
        site_coef,
        free_ep,
    };
    // Unit weights are rescaled to 1 GHz so residuals stay O(1).
    let unit_weight = 1e-9;
    let sigmas: Vec<(f64, f64)> = datasets
        .iter()
        .flat_map(|d| d.points.iter().map(|p| (p.sigma_f, p.sigma_eps)))
        .collect();
    let known_sigma = sigmas.iter().any(|&(sf, se)| sf > 0.0 || se > 0.0);

    let mut report = None;
    let passes = if known_sigma { REWEIGHT_PASSES } else { 1 };
    for _ in 0..passes {
        let weights: Vec<(f64, f64)> = problem
            .rows
            .iter()
            .zip(&sigmas)
            .map(|(row, &(sf, se))| {
                if !known_sigma {
                    return (unit_weight, unit_weight);
                }
                let slope = problem.site_coef[row.site].0;
                let (u, r) = problem.e_terms(&params, row);
                let (le, lep) = problem.lambdas(&params);
                let c = &problem.site_coef[row.site].1;
                let de = u * (c[0] * le + c[1] * lep) / r;
                (
                    1.0 / effective_sigma(sf, slope + de, se),
                    1.0 / effective_sigma(sf, slope - de, se),
                )
            })
            .collect();
        for (row, (wp, wm)) in problem.rows.iter_mut().zip(weights) {
            row.w_plus = wp;
            row.w_minus = wm;
        }
        let rep = minimize(&problem, &params, &LmConfig::default())?;
        params = rep.params.clone();
        report = Some(rep);
    }
    let rep = report.expect("at least one pass");

    let n_res = problem.residual_count();
    let cov = if known_sigma {
        rep.jtj_inverse.clone()
    } else {
        rep.scaled_covariance(n_res)
    };
    let (lambda_e, lambda_ep) = problem.lambdas(&params);
    let covariance = if free_ep {
        Matrix2::new(cov[(0, 0)], cov[(0, 1)], cov[(1, 0)], cov[(1, 1)])
    } else {
        Matrix2::new(cov[(0, 0)], 0.0, 0.0, 0.0)
    };
    let base = problem.base();
    let sites = datasets
        .iter()
        .enumerate()
        .map(|(s, d)| {
            let k = base + 3 * s;
            SiteFit {
                site_id: d.site_id.clone(),
                group: d.group,
                offset_hz: params[k] + reference,
                intrinsic: IntrinsicStrain {
                    df_a1: (reference - options.f_zpl_reference) + params[k],
                    df_e1: params[k + 1],
                    df_e2: params[k + 2].max(0.0).sqrt().copysign(seeds_intr[s].1),
                },
            }
        })
        .collect();
    let residual_norm = if known_sigma {
        rep.residual_norm
    } else {
        rep.residual_norm / unit_weight
    };
    Ok(EConstantsFit {
        lambda_e,
        lambda_ep,
        lambda_ep_identifiable: free_ep,
        covariance,
        sites,
        residual_norm,
        iterations: rep.iterations,
        converged: rep.converged,
    })
}

/// Seeds for the E couplings. With the E2 channel unstrained, the half
/// splitting obeys s² - |δE|² = 2cδE1·ε + c²ε² per site, c being the E1
/// slope. A per-site quadratic regression gives |c| from the ε² term and its
/// sign from the linear term; group averages then give λ_E and λ_E'.
fn seed_lambdas(
    datasets: &[NvDataset],
    coef: &[(f64, [f64; 2])],
    intr: &[(f64, f64)],
    free_ep: bool,
) -> (f64, f64) {
    let mut slopes: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (s, d) in datasets.iter().enumerate() {
        let (d1, d2) = intr[s];
        let h2 = d1 * d1 + d2 * d2;
        let mut ata = Matrix2::zeros();
        let mut atb = nalgebra::Vector2::zeros();
        for p in &d.points {
            let half = 0.5 * (p.f_plus - p.f_minus);
            // scale ε to O(1) for conditioning
            let e = p.eps * 1e5;
            let row = nalgebra::Vector2::new(e, e * e);
            ata += row * row.transpose();
            atb += row * (half * half - h2);
        }
        let Some(sol) = ata.try_inverse().map(|inv| inv * atb) else {
            continue;
        };
        let (a, b) = (sol[0] * 1e5, sol[1] * 1e10);
        if b <= 0.0 || !b.is_finite() || d1 == 0.0 {
            continue;
        }
        let c = b.sqrt() * (a * d1).signum();
        slopes[d.group as usize].push(c);
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let fallback = CouplingConstants::default();
    let ce_b = coef_for(coef, datasets, Group::B)[0];
    let lambda_e = match mean(&slopes[Group::B as usize]) {
        Some(c) if ce_b != 0.0 => c / ce_b,
        _ => fallback.lambda_e,
    };
    if !free_ep {
        return (lambda_e, 0.0);
    }
    let ca = coef_for(coef, datasets, Group::A);
    let lambda_ep = match mean(&slopes[Group::A as usize]) {
        Some(c) if ca[1] != 0.0 => (c - ca[0] * lambda_e) / ca[1],
        _ => fallback.lambda_ep,
    };
    (lambda_e, lambda_ep)
}

fn coef_for(coef: &[(f64, [f64; 2])], datasets: &[NvDataset], group: Group) -> [f64; 2] {
    datasets
        .iter()
        .position(|d| d.group == group)
        .map(|i| coef[i].1)
        .unwrap_or([0.0; 2])
}
