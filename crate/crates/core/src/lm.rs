//! Damped Gauss-Newton (Levenberg-Marquardt) least squares with analytic
//! Jacobians.
//!
//! Columns of the Jacobian are scaled before every solve, so the damping term
//! acts like Marquardt's diag(JᵀJ) scaling and parameters of wildly different
//! magnitude (PHz couplings next to GHz offsets) stay conditioned. Each scale
//! is the largest column norm seen so far, as in MINPACK: a column that
//! collapses to rounding level near a symmetric point is not blown up to unit
//! size.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub trait Problem {
    fn residual_count(&self) -> usize;

    fn residuals(&self, params: &[f64], out: &mut [f64]);

    /// Jacobian ∂r_i/∂p_j, `residual_count` × `params.len()`.
    fn jacobian(&self, params: &[f64], out: &mut DMatrix<f64>);

    /// Residual norm attributable to rounding in the data; a fit that can
    /// make no further progress below it has converged.
    fn residual_floor(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Converged when every |Δp_j| ≤ tol·(|p_j| + tol).
    pub step_tolerance: f64,
    /// Converged when both the actual and the predicted relative cost
    /// reduction of an accepted step fall below this.
    pub cost_tolerance: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            step_tolerance: 1e-12,
            cost_tolerance: 1e-10,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// ½‖r‖² at the solution.
    pub cost: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    /// (JᵀJ)⁻¹ at the solution (pseudo-inverse when singular).
    pub jtj_inverse: DMatrix<f64>,
    /// Numerical rank of J at the solution.
    pub rank: usize,
}

impl LmReport {
    /// Covariance scaled by the reduced chi-square, for fits whose residuals
    /// are not already normalized by known standard deviations.
    pub fn scaled_covariance(&self, n_residuals: usize) -> DMatrix<f64> {
        let dof = n_residuals.saturating_sub(self.params.len()).max(1);
        &self.jtj_inverse * (2.0 * self.cost / dof as f64)
    }
}

const MAX_DAMPING: f64 = 1e32;
const MIN_DAMPING: f64 = 1e-15;
/// Residual norm, relative to the initial one, treated as an exact fit.
const RESIDUAL_FLOOR: f64 = 1e-10;

pub fn minimize<P: Problem + ?Sized>(problem: &P, initial: &[f64], config: &LmConfig) -> Result<LmReport> {
    let m = initial.len();
    let n = problem.residual_count();
    if n < m {
        return Err(Error::Design(format!("{n} residuals for {m} parameters")));
    }
    let mut p = initial.to_vec();
    let mut r = vec![0.0; n];
    let mut trial_r = vec![0.0; n];
    let mut jac = DMatrix::zeros(n, m);

    problem.residuals(&p, &mut r);
    let mut cost = half_sq(&r);
    if !cost.is_finite() {
        return Err(Error::InvalidInput("non-finite residuals at the initial point".into()));
    }
    let mut history = vec![cost];
    let mut damping = config.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    problem.jacobian(&p, &mut jac);
    let mut scale = vec![0.0; m];
    while iterations < config.max_iterations {
        iterations += 1;
        let jn = scale_columns(&jac, &mut scale);
        let rv = DVector::from_column_slice(&r);
        let a = jn.transpose() * &jn;
        let g = jn.transpose() * &rv;
        if cost == 0.0 {
            converged = true;
            break;
        }

        let mut accepted = false;
        while damping <= MAX_DAMPING {
            let mut damped = a.clone();
            for j in 0..m {
                damped[(j, j)] += damping;
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    damping *= config.damping_up;
                    continue;
                }
            };
            let trial: Vec<f64> = (0..m).map(|j| p[j] + step[j] / unit_if_zero(scale[j])).collect();
            problem.residuals(&trial, &mut trial_r);
            let trial_cost = half_sq(&trial_r);
            if trial_cost.is_finite() && trial_cost < cost {
                let small_step = (0..m).all(|j| {
                    let d = (trial[j] - p[j]).abs();
                    d <= config.step_tolerance * (p[j].abs() + config.step_tolerance)
                });
                let predicted = -(g.dot(&step) + 0.5 * step.dot(&(&a * &step)));
                let small_gain = cost - trial_cost <= config.cost_tolerance * cost
                    && predicted <= config.cost_tolerance * cost;
                p = trial;
                std::mem::swap(&mut r, &mut trial_r);
                cost = trial_cost;
                history.push(cost);
                damping = (damping * config.damping_down).max(MIN_DAMPING);
                accepted = true;
                if small_step || small_gain {
                    converged = true;
                }
                break;
            }
            damping *= config.damping_up;
        }

        if !accepted {
            // no damped step lowers the cost: stop, and call it a minimum if
            // the scaled gradient is below what rounding in the residuals
            // lets us resolve
            let rnorm = (2.0 * cost).sqrt();
            let floor = problem.residual_floor();
            let reachable = g.norm();
            let resolvable = (4.0 * (n as f64 * f64::EPSILON).sqrt() * rnorm)
                .max(4.0 * floor.max((2.0 * rnorm * floor).sqrt()));
            converged = reachable <= resolvable || rnorm <= floor.max(RESIDUAL_FLOOR * (2.0 * history[0]).sqrt());
            break;
        }
        if converged {
            break;
        }
        problem.jacobian(&p, &mut jac);
    }

    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            residual_norm: (2.0 * cost).sqrt(),
        });
    }

    problem.jacobian(&p, &mut jac);
    let (jtj_inverse, rank) = normal_inverse(&jac);
    Ok(LmReport {
        params: p,
        cost,
        residual_norm: (2.0 * cost).sqrt(),
        iterations,
        converged,
        cost_history: history,
        jtj_inverse,
        rank,
    })
}

fn half_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn unit_if_zero(s: f64) -> f64 {
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Raises each `scale` entry to the current column norm and divides by it.
fn scale_columns(j: &DMatrix<f64>, scale: &mut [f64]) -> DMatrix<f64> {
    let mut out = j.clone();
    for (c, s) in scale.iter_mut().enumerate() {
        let norm = j.column(c).norm();
        if norm.is_finite() {
            *s = s.max(norm);
        }
        if *s > 0.0 {
            out.column_mut(c).scale_mut(1.0 / *s);
        }
    }
    out
}

fn normalize_columns(j: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut out = j.clone();
    let mut scale = Vec::with_capacity(j.ncols());
    for c in 0..j.ncols() {
        let norm = j.column(c).norm();
        let s = if norm > 0.0 && norm.is_finite() { norm } else { 1.0 };
        out.column_mut(c).scale_mut(1.0 / s);
        scale.push(s);
    }
    (out, scale)
}

/// (JᵀJ)⁻¹ through the SVD of the column-normalized Jacobian; returns the
/// pseudo-inverse and the numerical rank.
pub(crate) fn normal_inverse(j: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let m = j.ncols();
    let (jn, scale) = normalize_columns(j);
    let svd = jn.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    let cutoff = smax * 1e-12 * (j.nrows().max(m) as f64);
    let mut inv = DMatrix::zeros(m, m);
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            rank += 1;
            let v = v_t.row(k).transpose();
            inv += &v * v.transpose() / (s * s);
        }
    }
    for a in 0..m {
        for b in 0..m {
            inv[(a, b)] /= scale[a] * scale[b];
        }
    }
    // symmetrize rounding
    let inv = (&inv + inv.transpose()) * 0.5;
    (inv, rank)
}
