use nalgebra::{DMatrix, DVector, Matrix2};

use super::{effective_sigma, NvDataset};
use crate::error::{Error, Result};
use crate::lm::normal_inverse;
use crate::nv_core::{a1_coefficients, Group};

#[derive(Debug, Clone, PartialEq)]
pub struct CommonModeFit {
    pub lambda_a1: f64,
    pub lambda_a1p: f64,
    /// Covariance of (λ_A1, λ_A1').
    pub covariance: Matrix2<f64>,
    /// Fitted common-mode offset per site, in input order (group A first).
    pub offsets: Vec<(String, f64)>,
    /// Weighted residual norm.
    pub residual_norm: f64,
}

const REWEIGHT_PASSES: usize = 3;

/// Simultaneous weighted linear fit of Δ = (f+ + f-)/2 against ε for both
/// groups, with one free offset per site.
pub fn fit_common_mode(group_a: &[NvDataset], group_b: &[NvDataset], nu: f64) -> Result<CommonModeFit> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::RankDeficient(
            "both orientation groups are needed to separate λ_A1 from λ_A1'".into(),
        ));
    }
    let sites: Vec<&NvDataset> = group_a.iter().chain(group_b).collect();
    for d in &sites {
        d.validate()?;
        if d.distinct_strains() < 2 {
            return Err(Error::RankDeficient(format!(
                "site {} has fewer than 2 distinct strain values",
                d.site_id
            )));
        }
    }
    let n: usize = sites.iter().map(|d| d.points.len()).sum();
    let p = 2 + sites.len();

    // common reference keeps the right-hand side small
    let reference = {
        let first = &sites[0].points[0];
        0.5 * (first.f_plus + first.f_minus)
    };
    let mut design = DMatrix::zeros(n, p);
    let mut rhs = DVector::zeros(n);
    let mut row_group = Vec::with_capacity(n);
    let mut row = 0;
    for (s, d) in sites.iter().enumerate() {
        let group = if s < group_a.len() { Group::A } else { Group::B };
        if d.group != group {
            return Err(Error::InvalidInput(format!(
                "site {} is labelled group {} but was passed as group {group}",
                d.site_id, d.group
            )));
        }
        let (ca, cap) = a1_coefficients(nu, group);
        for pt in &d.points {
            design[(row, 0)] = ca * pt.eps;
            design[(row, 1)] = cap * pt.eps;
            design[(row, 2 + s)] = 1.0;
            rhs[row] = 0.5 * (pt.f_plus + pt.f_minus) - reference;
            row_group.push((group, pt.sigma_f, pt.sigma_eps));
            row += 1;
        }
    }

    let mut slopes = [0.0f64; 2];
    let mut solution = DVector::zeros(p);
    let mut weights = vec![1.0; n];
    let mut known_sigma = false;
    for _ in 0..REWEIGHT_PASSES {
        let sig: Vec<f64> = row_group
            .iter()
            .map(|&(g, sf, se)| effective_sigma(sf, slopes[g as usize], se))
            .collect();
        known_sigma = row_group.iter().any(|&(_, sf, se)| sf > 0.0 || se > 0.0);
        weights = if known_sigma {
            sig.iter().map(|s| 1.0 / s).collect()
        } else {
            vec![1.0; n]
        };
        let mut a = design.clone();
        let mut b = rhs.clone();
        for i in 0..n {
            a.row_mut(i).scale_mut(weights[i]);
            b[i] *= weights[i];
        }
        solution = solve_least_squares(&a, &b)?;
        let (ca, cap) = a1_coefficients(nu, Group::A);
        let (cb, cbp) = a1_coefficients(nu, Group::B);
        slopes = [
            ca * solution[0] + cap * solution[1],
            cb * solution[0] + cbp * solution[1],
        ];
    }

    let mut a = design.clone();
    for (i, w) in weights.iter().enumerate() {
        a.row_mut(i).scale_mut(*w);
    }
    let resid: f64 = {
        let r = &design * &solution - &rhs;
        r.iter().zip(&weights).map(|(v, w)| (v * w).powi(2)).sum::<f64>().sqrt()
    };
    let (inv, _) = normal_inverse(&a);
    let scale = if known_sigma {
        1.0
    } else {
        resid * resid / (n.saturating_sub(p).max(1)) as f64
    };
    let covariance = Matrix2::new(inv[(0, 0)], inv[(0, 1)], inv[(1, 0)], inv[(1, 1)]) * scale;
    Ok(CommonModeFit {
        lambda_a1: solution[0],
        lambda_a1p: solution[1],
        covariance,
        offsets: sites
            .iter()
            .enumerate()
            .map(|(s, d)| (d.site_id.clone(), solution[2 + s] + reference))
            .collect(),
        residual_norm: resid,
    })
}

/// Column-normalized SVD least squares; rank deficiency is an error.
fn solve_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let p = a.ncols();
    let mut an = a.clone();
    let mut scale = Vec::with_capacity(p);
    for c in 0..p {
        let norm = a.column(c).norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::RankDeficient(format!("design column {c} is empty")));
        }
        an.column_mut(c).scale_mut(1.0 / norm);
        scale.push(norm);
    }
    let svd = an.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= smax * 1e-10 {
        return Err(Error::RankDeficient(format!(
            "design matrix condition number {:e}",
            smax / smin
        )));
    }
    let x = svd
        .solve(b, 0.0)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    Ok(DVector::from_iterator(p, (0..p).map(|c| x[c] / scale[c])))
}
