//! Singly-clamped cantilever: fundamental flexural strain profile, driven
//! tip response and thermal phonon statistics.

use std::f64::consts::PI;

use crate::error::{ensure_non_negative, ensure_positive, Error, Result};

/// Planck constant (J s).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Boltzmann constant (J/K).
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// First root of the clamped-free characteristic equation, as tabulated.
const MODE_WAVENUMBER: f64 = 1.875;
/// Mode-shape ratio (cosh βl + cos βl)/(sinh βl + sin βl) for the first mode.
const MODE_RATIO: f64 = 1.3622;

/// Default NV depth below the top surface (m).
pub const DEFAULT_NV_DEPTH: f64 = 51.5e-9;
/// One-sigma depth uncertainty from implantation straggle (m).
pub const DEFAULT_DEPTH_UNCERTAINTY: f64 = 13e-9;
/// Fractional calibration uncertainty of the tip amplitude.
pub const DEFAULT_AMPLITUDE_CALIBRATION: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CantileverGeometry {
    pub length: f64,
    pub width: f64,
    pub thickness: f64,
    /// NV depth below the top surface.
    pub nv_depth: f64,
    /// NV position along the beam axis, measured from the clamp.
    pub nv_axial: f64,
}

impl Default for CantileverGeometry {
    fn default() -> Self {
        Self {
            length: 20e-6,
            width: 4e-6,
            thickness: 1e-6,
            nv_depth: DEFAULT_NV_DEPTH,
            nv_axial: 0.0,
        }
    }
}

impl CantileverGeometry {
    pub fn new(length: f64, width: f64, thickness: f64, nv_depth: f64, nv_axial: f64) -> Result<Self> {
        let g = Self {
            length,
            width,
            thickness,
            nv_depth,
            nv_axial,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("length", self.length)?;
        ensure_positive("width", self.width)?;
        ensure_positive("thickness", self.thickness)?;
        ensure_non_negative("nv_depth", self.nv_depth)?;
        ensure_non_negative("nv_axial", self.nv_axial)?;
        if self.nv_depth > self.thickness {
            return Err(Error::Range {
                name: "nv_depth",
                value: self.nv_depth,
                constraint: "must not exceed the beam thickness",
            });
        }
        if self.nv_axial > self.length {
            return Err(Error::Range {
                name: "nv_axial",
                value: self.nv_axial,
                constraint: "must not exceed the beam length",
            });
        }
        Ok(())
    }

    /// Distance of the NV above the neutral axis, t/2 - d.
    pub fn neutral_axis_offset(&self) -> f64 {
        0.5 * self.thickness - self.nv_depth
    }

    pub fn with_position(self, nv_depth: f64, nv_axial: f64) -> Self {
        Self {
            nv_depth,
            nv_axial,
            ..self
        }
    }
}

/// Normalized fundamental-mode curvature profile; 2 at the clamp.
pub fn mode_bracket(u: f64) -> f64 {
    let k = MODE_WAVENUMBER * u;
    k.cos() + k.cosh() - (k.sin() + k.sinh()) / MODE_RATIO
}

/// Axial strain at the NV for tip deflection `x_c` (signed).
pub fn mode_strain(g: &CantileverGeometry, x_c: f64) -> f64 {
    strain_per_deflection(g) * x_c
}

/// dε/dx_c at the NV location.
pub fn strain_per_deflection(g: &CantileverGeometry) -> f64 {
    let l = g.length;
    g.neutral_axis_offset() / (2.0 * l * l) * MODE_WAVENUMBER * MODE_WAVENUMBER * mode_bracket(g.nv_axial / l)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanicalMode {
    pub f_c: f64,
    pub quality_q: f64,
    /// Tip amplitude for a resonant drive.
    pub x_max: f64,
}

impl MechanicalMode {
    pub fn new(f_c: f64, quality_q: f64, x_max: f64) -> Result<Self> {
        let m = Self { f_c, quality_q, x_max };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("f_c", self.f_c)?;
        ensure_positive("quality_q", self.quality_q)?;
        ensure_non_negative("x_max", self.x_max)?;
        Ok(())
    }

    /// Mechanical linewidth f_c/Q (Hz).
    pub fn linewidth(&self) -> f64 {
        self.f_c / self.quality_q
    }

    pub fn period(&self) -> f64 {
        1.0 / self.f_c
    }
}

/// Lorentzian amplitude response x_max (γ/2)² / ((γ/2)² + (f - f_c)²).
pub fn drive_response(mode: &MechanicalMode, f_piezo: f64) -> f64 {
    let hw = 0.5 * mode.linewidth();
    let d = (f_piezo - mode.f_c) / hw;
    mode.x_max / (1.0 + d * d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveState {
    pub mode: MechanicalMode,
    pub f_piezo: f64,
    /// Realized tip amplitude.
    pub x_c: f64,
}

impl DriveState {
    pub fn new(mode: MechanicalMode, f_piezo: f64) -> Result<Self> {
        mode.validate()?;
        ensure_positive("f_piezo", f_piezo)?;
        Ok(Self {
            mode,
            f_piezo,
            x_c: drive_response(&mode, f_piezo),
        })
    }

    /// Resonant drive with tip amplitude `x_c`; x_max is raised to match if
    /// needed.
    pub fn resonant(mode: MechanicalMode, x_c: f64) -> Result<Self> {
        mode.validate()?;
        ensure_non_negative("x_c", x_c)?;
        let mode = MechanicalMode {
            x_max: mode.x_max.max(x_c),
            ..mode
        };
        Ok(Self {
            mode,
            f_piezo: mode.f_c,
            x_c,
        })
    }

    pub fn undriven(mode: MechanicalMode) -> Self {
        Self {
            mode,
            f_piezo: mode.f_c,
            x_c: 0.0,
        }
    }

    /// Drive period (s).
    pub fn period(&self) -> f64 {
        1.0 / self.f_piezo
    }
}

/// Tip displacement x_c cos(2π f_piezo t).
pub fn displacement(d: &DriveState, t: f64) -> f64 {
    d.x_c * (2.0 * PI * d.f_piezo * t).cos()
}

/// Bose-Einstein occupation of a mode at `f_c` and `temperature`.
pub fn thermal_occupation(temperature: f64, f_c: f64) -> Result<f64> {
    ensure_positive("temperature", temperature)?;
    ensure_positive("f_c", f_c)?;
    Ok(1.0 / (PLANCK * f_c / (BOLTZMANN * temperature)).exp_m1())
}

/// γ_th = n̄ f_c / Q.
pub fn thermalization_rate(n_bar: f64, f_c: f64, quality_q: f64) -> Result<f64> {
    ensure_non_negative("n_bar", n_bar)?;
    ensure_positive("f_c", f_c)?;
    ensure_positive("quality_q", quality_q)?;
    Ok(n_bar * f_c / quality_q)
}
