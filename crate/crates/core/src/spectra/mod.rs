//! Resonant-excitation spectra of a cantilever-embedded NV: CW (time
//! averaged over the drive period), stroboscopic (averaged over a gated
//! window), and 2-D maps versus drive frequency or amplitude.
//!
//! Detunings are laser frequency minus the site's natural line `f_zpl`.

mod io;
mod peaks;

pub use io::{read_map_csv, read_spectrum_csv, write_map_csv, write_spectrum_csv};
pub use peaks::{fit_lorentzian_peaks, PeakFit, PeakFitReport};

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{ensure_finite, ensure_non_negative, ensure_positive, Error, Result};
use crate::mechanics::{drive_response, strain_per_deflection, CantileverGeometry, DriveState, MechanicalMode};
use crate::nv_core::{
    stuckelberg_angle, transition_frequencies, IntrinsicStrain, NvOrientation, StrainModel, SymmetryShifts,
    Transitions,
};
use crate::optics::{saturated_intensity, LaserPolarization};

/// Default strobe window length (s).
pub const DEFAULT_STROBE_TAU: f64 = 60e-9;
/// Default strobe phase uncertainty (rad).
pub const DEFAULT_PHASE_UNCERTAINTY: f64 = 5.0 * PI / 180.0;

/// Relative change between successive refinements that counts as converged.
pub const QUADRATURE_TOLERANCE: f64 = 1e-6;
const CW_START_SAMPLES: usize = 512;
const STROBE_START_INTERVALS: usize = 64;
const MAX_SAMPLES: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq)]
pub struct NvSite {
    pub id: String,
    pub orientation: NvOrientation,
    pub intrinsic: IntrinsicStrain,
    /// Natural zero-phonon line (Hz).
    pub f_zpl: f64,
    /// Optical FWHM Γ (Hz).
    pub linewidth_gamma: f64,
    /// Photoluminescence per unit absorption intensity (kcps).
    pub pl_scale: f64,
    /// Beam geometry including the NV's depth and axial position.
    pub geometry: CantileverGeometry,
}

impl Default for NvSite {
    fn default() -> Self {
        Self {
            id: "nv".into(),
            orientation: NvOrientation::M1P1P1,
            intrinsic: IntrinsicStrain::default(),
            f_zpl: 470.4e12,
            linewidth_gamma: 1e9,
            pl_scale: 1.0,
            geometry: CantileverGeometry::default(),
        }
    }
}

impl NvSite {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("linewidth_gamma", self.linewidth_gamma)?;
        ensure_non_negative("pl_scale", self.pl_scale)?;
        ensure_finite("f_zpl", self.f_zpl)?;
        ensure_finite("df_a1", self.intrinsic.df_a1)?;
        ensure_finite("df_e1", self.intrinsic.df_e1)?;
        ensure_finite("df_e2", self.intrinsic.df_e2)?;
        self.geometry.validate()
    }

    /// Symmetry shifts per metre of tip deflection.
    pub fn shifts_per_deflection(&self, model: &StrainModel) -> SymmetryShifts {
        model
            .shifts_per_strain(self.orientation)
            .scaled(strain_per_deflection(&self.geometry))
    }

    pub fn shifts_at(&self, model: &StrainModel, x: f64) -> SymmetryShifts {
        self.shifts_per_deflection(model).scaled(x)
    }

    /// Absolute transition frequencies at tip deflection `x`.
    pub fn transitions_at(&self, model: &StrainModel, x: f64) -> Transitions {
        transition_frequencies(self.f_zpl, &self.intrinsic, &self.shifts_at(model, x))
    }

    /// Transition detunings from `f_zpl` at tip deflection `x`.
    pub fn detunings_at(&self, model: &StrainModel, x: f64) -> Transitions {
        transition_frequencies(0.0, &self.intrinsic, &self.shifts_at(model, x))
    }

    pub fn theta_at(&self, model: &StrainModel, x: f64) -> Result<f64> {
        stuckelberg_angle(&self.intrinsic, &self.shifts_at(model, x))
    }
}

/// How transition intensities are computed along the drive cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntensityModel {
    /// Saturated absorption at the instantaneous Stuckelberg angle.
    Polarized(LaserPolarization),
    /// Fixed E_x / E_y intensities, no modulation.
    Fixed { ex: f64, ey: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Antinode {
    /// Maximal upward deflection (x = +x_c at phase 0).
    Upper,
    /// Maximal downward deflection (phase π).
    Lower,
}

impl Antinode {
    pub fn sign(self) -> f64 {
        match self {
            Antinode::Upper => 1.0,
            Antinode::Lower => -1.0,
        }
    }

    /// Drive phase of the antinode.
    pub fn phase(self) -> f64 {
        match self {
            Antinode::Upper => 0.0,
            Antinode::Lower => PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrobeWindow {
    /// Window start within the drive period (s).
    pub start: f64,
    /// Window length (s).
    pub tau: f64,
    /// Phase uncertainty of the window placement (rad).
    pub phase_uncertainty: f64,
}

impl StrobeWindow {
    /// Validated window for a drive `period`. `tau` may equal the period
    /// (full-cycle gating).
    pub fn new(start: f64, tau: f64, phase_uncertainty: f64, period: f64) -> Result<Self> {
        ensure_positive("period", period)?;
        ensure_positive("tau", tau)?;
        ensure_non_negative("phase_uncertainty", phase_uncertainty)?;
        if tau > period {
            return Err(Error::Range {
                name: "tau",
                value: tau,
                constraint: "must not exceed the drive period",
            });
        }
        if !(0.0..period).contains(&start) {
            return Err(Error::Range {
                name: "start",
                value: start,
                constraint: "must lie in [0, period)",
            });
        }
        Ok(Self {
            start,
            tau,
            phase_uncertainty,
        })
    }

    /// Window centred on an antinode; the lower one starts at period/2 - τ/2.
    pub fn at_antinode(period: f64, tau: f64, antinode: Antinode) -> Result<Self> {
        let start = match antinode {
            Antinode::Upper => period - 0.5 * tau,
            Antinode::Lower => 0.5 * period - 0.5 * tau,
        };
        Self::new(start.rem_euclid(period), tau, DEFAULT_PHASE_UNCERTAINTY, period)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpectrumMeta {
    pub f_piezo: f64,
    pub x_c: f64,
    pub strobe: Option<StrobeWindow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub detunings: Vec<f64>,
    pub signal: Vec<f64>,
    pub meta: SpectrumMeta,
}

impl Spectrum {
    pub fn new(detunings: Vec<f64>, signal: Vec<f64>, meta: SpectrumMeta) -> Result<Self> {
        if detunings.len() != signal.len() {
            return Err(Error::InvalidInput(format!(
                "{} detunings but {} signal values",
                detunings.len(),
                signal.len()
            )));
        }
        check_grid(&detunings)?;
        if let Some(v) = signal.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInput(format!("signal value {v} is not finite and nonnegative")));
        }
        Ok(Self {
            detunings,
            signal,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.detunings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detunings.is_empty()
    }
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("grid contains non-finite values".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `n` evenly spaced points from `min` to `max` inclusive.
pub fn linear_grid(min: f64, max: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || min.is_nan() || max.is_nan() || max <= min {
        return Err(Error::InvalidInput(format!(
            "grid needs at least 2 points and max > min (got n={n}, [{min}, {max}])"
        )));
    }
    let step = (max - min) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| if i == n - 1 { max } else { min + step * i as f64 })
        .collect())
}

/// Lorentzian of unit height and FWHM `gamma` centred at `center`.
pub fn lorentzian(f: f64, center: f64, gamma: f64) -> f64 {
    let hw = 0.5 * gamma;
    let d = f - center;
    hw * hw / (hw * hw + d * d)
}

/// Transition detunings and PL weights at one instant of the drive.
#[derive(Debug, Clone, Copy)]
struct Sample {
    plus: f64,
    minus: f64,
    w_plus: f64,
    w_minus: f64,
}

struct Integrand<'a> {
    site: &'a NvSite,
    per_m: SymmetryShifts,
    intensity: IntensityModel,
    gamma: f64,
}

impl<'a> Integrand<'a> {
    fn new(site: &'a NvSite, model: &StrainModel, intensity: IntensityModel) -> Result<Self> {
        site.validate()?;
        if let IntensityModel::Polarized(p) = &intensity {
            p.validate()?;
        }
        Ok(Self {
            site,
            per_m: site.shifts_per_deflection(model),
            intensity,
            gamma: site.linewidth_gamma,
        })
    }

    fn sample(&self, x: f64) -> Sample {
        let shifts = self.per_m.scaled(x);
        let t = transition_frequencies(0.0, &self.site.intrinsic, &shifts);
        let (ex, ey) = match self.intensity {
            IntensityModel::Fixed { ex, ey } => (ex, ey),
            IntensityModel::Polarized(pol) => {
                // exactly degenerate E strain: lines coincide, pick θ = 0
                let theta = stuckelberg_angle(&self.site.intrinsic, &shifts).unwrap_or(0.0);
                let p = saturated_intensity(self.site.orientation.group(), theta, &pol);
                (p.i_ex, p.i_ey)
            }
        };
        Sample {
            plus: t.plus,
            minus: t.minus,
            w_plus: self.site.pl_scale * ex,
            w_minus: self.site.pl_scale * ey,
        }
    }

    fn accumulate(&self, s: &Sample, grid: &[f64], weight: f64, acc: &mut [f64]) {
        for (a, &f) in acc.iter_mut().zip(grid) {
            *a += weight
                * (s.w_plus * lorentzian(f, s.plus, self.gamma) + s.w_minus * lorentzian(f, s.minus, self.gamma));
        }
    }
}

fn converged(prev: &[f64], next: &[f64]) -> (bool, f64) {
    let mut worst = 0.0f64;
    for (a, b) in prev.iter().zip(next) {
        let d = (a - b).abs();
        if d > 0.0 {
            worst = worst.max(d / b.abs().max(f64::MIN_POSITIVE));
        }
    }
    (worst <= QUADRATURE_TOLERANCE, worst)
}

/// Time average of the drive-modulated two-line spectrum over one period.
///
/// Uses the periodic rectangle rule on uniform phases, doubling the sample
/// count from 512 until no grid value changes by more than 1e-6 relative.
pub fn cw_spectrum(
    site: &NvSite,
    model: &StrainModel,
    drive: &DriveState,
    intensity: IntensityModel,
    grid: &[f64],
) -> Result<Spectrum> {
    check_grid(grid)?;
    let integrand = Integrand::new(site, model, intensity)?;
    let meta = SpectrumMeta {
        f_piezo: drive.f_piezo,
        x_c: drive.x_c,
        strobe: None,
    };
    let signal = cw_average(&integrand, drive.x_c, grid)?;
    Spectrum::new(grid.to_vec(), signal, meta)
}

fn cw_average(integrand: &Integrand<'_>, x_c: f64, grid: &[f64]) -> Result<Vec<f64>> {
    if x_c == 0.0 {
        let mut acc = vec![0.0; grid.len()];
        integrand.accumulate(&integrand.sample(0.0), grid, 1.0, &mut acc);
        return Ok(acc);
    }
    let mut n = CW_START_SAMPLES;
    let mut sum = vec![0.0; grid.len()];
    for k in 0..n {
        let phase = 2.0 * PI * k as f64 / n as f64;
        integrand.accumulate(&integrand.sample(x_c * phase.cos()), grid, 1.0, &mut sum);
    }
    let mut mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    loop {
        // odd samples of the doubled grid
        for k in 0..n {
            let phase = 2.0 * PI * (2 * k + 1) as f64 / (2 * n) as f64;
            integrand.accumulate(&integrand.sample(x_c * phase.cos()), grid, 1.0, &mut sum);
        }
        n *= 2;
        let next: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let (ok, change) = converged(&mean, &next);
        mean = next;
        if ok {
            return Ok(mean);
        }
        if 2 * n > MAX_SAMPLES {
            return Err(Error::Quadrature { samples: n, change });
        }
    }
}

/// Average of the same integrand over the gated window [T, T+τ].
///
/// Trapezoid rule starting at 64 intervals, doubled until converged.
pub fn strobe_spectrum(
    site: &NvSite,
    model: &StrainModel,
    drive: &DriveState,
    intensity: IntensityModel,
    window: &StrobeWindow,
    grid: &[f64],
) -> Result<Spectrum> {
    check_grid(grid)?;
    StrobeWindow::new(window.start, window.tau, window.phase_uncertainty, drive.period())?;
    let integrand = Integrand::new(site, model, intensity)?;
    let meta = SpectrumMeta {
        f_piezo: drive.f_piezo,
        x_c: drive.x_c,
        strobe: Some(*window),
    };
    let omega = 2.0 * PI * drive.f_piezo;
    let x_at = |t: f64| drive.x_c * (omega * t).cos();
    if drive.x_c == 0.0 {
        let mut acc = vec![0.0; grid.len()];
        integrand.accumulate(&integrand.sample(0.0), grid, 1.0, &mut acc);
        return Spectrum::new(grid.to_vec(), acc, meta);
    }

    let mut n = STROBE_START_INTERVALS;
    let t0 = window.start;
    let tau = window.tau;
    let mut sum = vec![0.0; grid.len()];
    integrand.accumulate(&integrand.sample(x_at(t0)), grid, 0.5, &mut sum);
    integrand.accumulate(&integrand.sample(x_at(t0 + tau)), grid, 0.5, &mut sum);
    for k in 1..n {
        integrand.accumulate(&integrand.sample(x_at(t0 + tau * k as f64 / n as f64)), grid, 1.0, &mut sum);
    }
    let mut mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    loop {
        for k in 0..n {
            let t = t0 + tau * (2 * k + 1) as f64 / (2 * n) as f64;
            integrand.accumulate(&integrand.sample(x_at(t)), grid, 1.0, &mut sum);
        }
        n *= 2;
        let next: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let (ok, change) = converged(&mean, &next);
        mean = next;
        if ok {
            return Spectrum::new(grid.to_vec(), mean, meta);
        }
        if 2 * n > MAX_SAMPLES {
            return Err(Error::Quadrature { samples: n, change });
        }
    }
}

/// Which quantity labels the rows of a [`SpectrumMap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapAxis {
    /// Piezo drive frequency (Hz).
    PiezoHz,
    /// Resonant tip amplitude (m).
    XcM,
}

impl MapAxis {
    pub fn key(self) -> &'static str {
        match self {
            MapAxis::PiezoHz => "piezo_hz",
            MapAxis::XcM => "xc_m",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumMap {
    pub axis: MapAxis,
    pub row_values: Vec<f64>,
    pub detunings: Vec<f64>,
    /// One spectrum per row value, kcps.
    pub rows: Vec<Vec<f64>>,
}

/// CW spectra versus piezo frequency, with the tip amplitude following the
/// mechanical response at each frequency.
pub fn drive_detuning_map(
    site: &NvSite,
    model: &StrainModel,
    mode: &MechanicalMode,
    intensity: IntensityModel,
    piezo_grid: &[f64],
    laser_grid: &[f64],
) -> Result<SpectrumMap> {
    check_grid(piezo_grid)?;
    check_grid(laser_grid)?;
    mode.validate()?;
    let rows = piezo_grid
        .par_iter()
        .map(|&f| {
            let drive = DriveState {
                mode: *mode,
                f_piezo: f,
                x_c: drive_response(mode, f),
            };
            cw_spectrum(site, model, &drive, intensity, laser_grid).map(|s| s.signal)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectrumMap {
        axis: MapAxis::PiezoHz,
        row_values: piezo_grid.to_vec(),
        detunings: laser_grid.to_vec(),
        rows,
    })
}

/// CW spectra versus resonant tip amplitude.
pub fn amplitude_map(
    site: &NvSite,
    model: &StrainModel,
    mode: &MechanicalMode,
    intensity: IntensityModel,
    amplitude_grid: &[f64],
    laser_grid: &[f64],
) -> Result<SpectrumMap> {
    check_grid(amplitude_grid)?;
    check_grid(laser_grid)?;
    mode.validate()?;
    let rows = amplitude_grid
        .par_iter()
        .map(|&x_c| {
            let drive = DriveState::resonant(*mode, x_c)?;
            cw_spectrum(site, model, &drive, intensity, laser_grid).map(|s| s.signal)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectrumMap {
        axis: MapAxis::XcM,
        row_values: amplitude_grid.to_vec(),
        detunings: laser_grid.to_vec(),
        rows,
    })
}

/// Signed tip deflection at which the chosen transition reaches
/// `target_hz`, searched over |x| ≤ `x_limit`; the smallest |x| wins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyMatch {
    pub deflection: f64,
    pub antinode: Antinode,
    pub transitions: Transitions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

pub fn match_frequency(
    site: &NvSite,
    model: &StrainModel,
    branch: Branch,
    target_hz: f64,
    x_limit: f64,
) -> Result<FrequencyMatch> {
    ensure_finite("target_hz", target_hz)?;
    ensure_positive("x_limit", x_limit)?;
    let f = |x: f64| {
        let t = site.transitions_at(model, x);
        match branch {
            Branch::Plus => t.plus,
            Branch::Minus => t.minus,
        }
    } - target_hz;

    const STEPS: usize = 4000;
    let mut best: Option<f64> = None;
    for dir in [1.0, -1.0] {
        let mut x0 = 0.0;
        let mut f0 = f(0.0);
        if f0 == 0.0 {
            best = Some(0.0);
            break;
        }
        for k in 1..=STEPS {
            let x1 = dir * x_limit * k as f64 / STEPS as f64;
            let f1 = f(x1);
            if f0.signum() != f1.signum() || f1 == 0.0 {
                let root = bisect(&f, x0, x1, f0);
                if best.is_none_or(|b: f64| root.abs() < b.abs()) {
                    best = Some(root);
                }
                break;
            }
            x0 = x1;
            f0 = f1;
        }
    }
    let x = best.ok_or(Error::UnreachableFrequency {
        target_hz,
        x_limit_m: x_limit,
    })?;
    Ok(FrequencyMatch {
        deflection: x,
        antinode: if x < 0.0 { Antinode::Lower } else { Antinode::Upper },
        transitions: site.transitions_at(model, x),
    })
}

fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}
