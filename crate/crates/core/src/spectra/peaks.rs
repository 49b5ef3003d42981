//! Sum-of-Lorentzians fits with a constant background.

use nalgebra::DMatrix;

use super::Spectrum;
use crate::error::{Error, Result};
use crate::lm::{minimize, LmConfig, Problem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakFit {
    /// Centre detuning (Hz).
    pub center: f64,
    /// Full width at half maximum (Hz).
    pub fwhm: f64,
    /// Peak height above background (kcps).
    pub amplitude: f64,
    pub sigma_center: f64,
    pub sigma_fwhm: f64,
    pub sigma_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakFitReport {
    /// Peaks sorted by increasing centre.
    pub peaks: Vec<PeakFit>,
    pub background: f64,
    pub sigma_background: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    /// Set when two fitted centres are closer than a quarter linewidth.
    pub degenerate: bool,
}

/// Parameters in normalized units: detuning u = (f - mid)/span and signal
/// y/ymax. Layout: [background, (amplitude, centre, half width) per peak].
struct Lorentzians<'a> {
    u: &'a [f64],
    y: &'a [f64],
    n_peaks: usize,
}

impl Lorentzians<'_> {
    fn eval(&self, p: &[f64], u: f64) -> f64 {
        let mut v = p[0];
        for k in 0..self.n_peaks {
            let (a, c, h) = (p[1 + 3 * k], p[2 + 3 * k], p[3 + 3 * k]);
            let d = u - c;
            v += a * h * h / (h * h + d * d);
        }
        v
    }
}

impl Problem for Lorentzians<'_> {
    fn residual_count(&self) -> usize {
        self.u.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, (&u, &y)) in self.u.iter().zip(self.y).enumerate() {
            out[i] = self.eval(p, u) - y;
        }
    }

    /// Data are scaled to a unit maximum.
    fn residual_floor(&self) -> f64 {
        8.0 * f64::EPSILON * (self.u.len() as f64).sqrt()
    }

    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
        for (i, &u) in self.u.iter().enumerate() {
            out[(i, 0)] = 1.0;
            for k in 0..self.n_peaks {
                let (a, c, h) = (p[1 + 3 * k], p[2 + 3 * k], p[3 + 3 * k]);
                let d = u - c;
                let den = h * h + d * d;
                out[(i, 1 + 3 * k)] = h * h / den;
                out[(i, 2 + 3 * k)] = a * h * h * 2.0 * d / (den * den);
                out[(i, 3 + 3 * k)] = a * 2.0 * h * d * d / (den * den);
            }
        }
    }
}

/// Local maxima with their topographic prominence, most prominent first.
fn prominent_peaks(y: &[f64]) -> Vec<(usize, f64)> {
    let n = y.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if y[i] > y[i - 1] {
            // walk across a plateau
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] {
                let mid = (i + j) / 2;
                let left = {
                    let mut m = y[i];
                    let mut k = i;
                    while k > 0 && y[k - 1] <= y[i] {
                        k -= 1;
                        m = m.min(y[k]);
                    }
                    m
                };
                let right = {
                    let mut m = y[i];
                    let mut k = j;
                    while k + 1 < n && y[k + 1] <= y[i] {
                        k += 1;
                        m = m.min(y[k]);
                    }
                    m
                };
                let prominence = y[i] - left.max(right);
                if prominence > 0.0 {
                    peaks.push((mid, prominence));
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    peaks
}

/// Half width at half maximum around index `i` above `base`, in units of `u`.
fn half_width(u: &[f64], y: &[f64], i: usize, base: f64) -> Option<f64> {
    let half = base + 0.5 * (y[i] - base);
    let cross = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = i;
        for k in range {
            if y[k] <= half {
                let t = (y[prev] - half) / (y[prev] - y[k]);
                return Some((u[prev] + t * (u[k] - u[prev]) - u[i]).abs());
            }
            prev = k;
        }
        None
    };
    let l = cross(&mut (0..i).rev());
    let r = cross(&mut (i + 1..u.len()));
    match (l, r) {
        (Some(a), Some(b)) => Some(0.5 * (a + b)),
        (Some(a), None) | (None, Some(a)) => Some(a),
        (None, None) => None,
    }
}

/// Least-squares fit of `n_peaks` Lorentzians (1 or 2) plus a constant
/// background, initialized deterministically from the most prominent maxima.
pub fn fit_lorentzian_peaks(spec: &Spectrum, n_peaks: usize) -> Result<PeakFitReport> {
    if !(1..=2).contains(&n_peaks) {
        return Err(Error::InvalidInput(format!("n_peaks must be 1 or 2, got {n_peaks}")));
    }
    if spec.len() < 8 * n_peaks {
        return Err(Error::Design(format!(
            "{} samples is fewer than 8 per peak for {n_peaks} peaks",
            spec.len()
        )));
    }
    let f = &spec.detunings;
    let mid = 0.5 * (f[0] + f[f.len() - 1]);
    let span = f[f.len() - 1] - f[0];
    let ymax = spec.signal.iter().cloned().fold(0.0, f64::max);
    if ymax <= 0.0 {
        return Err(Error::NoPeaks);
    }
    let u: Vec<f64> = f.iter().map(|v| (v - mid) / span).collect();
    let y: Vec<f64> = spec.signal.iter().map(|v| v / ymax).collect();
    let base = y.iter().cloned().fold(f64::INFINITY, f64::min);

    let found = prominent_peaks(&y);
    if found.is_empty() {
        return Err(Error::NoPeaks);
    }
    let default_hw = 0.02;
    let mut p0 = vec![base];
    let mut seeds: Vec<(f64, f64, f64)> = found
        .iter()
        .take(n_peaks)
        .map(|&(i, _)| {
            let hw = half_width(&u, &y, i, base).unwrap_or(default_hw).max(1e-6);
            (y[i] - base, u[i], hw)
        })
        .collect();
    if seeds.len() < n_peaks {
        // one visible maximum: split it symmetrically
        let (a, c, hw) = seeds[0];
        seeds = vec![(0.5 * a, c - 0.5 * hw, hw), (0.5 * a, c + 0.5 * hw, hw)];
    }
    for (a, c, hw) in &seeds {
        p0.extend([*a, *c, *hw]);
    }

    let problem = Lorentzians {
        u: &u,
        y: &y,
        n_peaks,
    };
    let rep = minimize(&problem, &p0, &LmConfig::default())?;
    let cov = rep.scaled_covariance(u.len());
    let sd = |j: usize| cov[(j, j)].max(0.0).sqrt();

    let mut peaks: Vec<PeakFit> = (0..n_peaks)
        .map(|k| {
            let (ia, ic, ih) = (1 + 3 * k, 2 + 3 * k, 3 + 3 * k);
            PeakFit {
                center: mid + rep.params[ic] * span,
                fwhm: 2.0 * rep.params[ih].abs() * span,
                amplitude: rep.params[ia] * ymax,
                sigma_center: sd(ic) * span,
                sigma_fwhm: 2.0 * sd(ih) * span,
                sigma_amplitude: sd(ia) * ymax,
            }
        })
        .collect();
    peaks.sort_by(|a, b| a.center.total_cmp(&b.center));
    let degenerate = peaks.len() == 2 && {
        let mean_fwhm = 0.5 * (peaks[0].fwhm + peaks[1].fwhm);
        (peaks[1].center - peaks[0].center).abs() < 0.25 * mean_fwhm
    };
    Ok(PeakFitReport {
        peaks,
        background: rep.params[0] * ymax,
        sigma_background: sd(0) * ymax,
        residual_norm: rep.residual_norm * ymax,
        iterations: rep.iterations,
        degenerate,
    })
}
