//! NV orientation geometry, strain-tensor frame transforms, the C3v-projected
//! strain couplings and the resulting E_x / E_y transition frequencies.
//!
//! Conventions: frequencies in Hz, strain dimensionless, coupling constants
//! in Hz per unit strain, angles in radians.
//!
//! The cantilever frame has X ∥ [-110], Y ∥ [001] and Z ∥ [110] (beam axis).
//! Every orientation class has a fixed NV triad; the two axes of one class
//! are related by a C2 rotation about [001], which maps the cantilever frame
//! onto itself up to X → -X, Z → -Z, so both see the same beam strain.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Poisson ratio of diamond.
pub const DIAMOND_POISSON_RATIO: f64 = 0.11;

/// Largest axial strain magnitude accepted by [`axial_strain_tensor`].
pub const LINEAR_STRAIN_LIMIT: f64 = 1e-2;

/// Max absolute asymmetry tolerated when constructing a [`StrainTensor`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-14;

/// Below this magnitude (Hz) both E-channel arguments count as zero.
pub const DEGENERATE_E_STRAIN_HZ: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    A,
    B,
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Group::A => f.write_str("A"),
            Group::B => f.write_str("B"),
        }
    }
}

impl std::str::FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Group::A),
            "B" | "b" => Ok(Group::B),
            other => Err(Error::Parse(format!("unknown NV group '{other}'"))),
        }
    }
}

/// The four crystallographic directions an NV axis can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NvOrientation {
    /// [-1-1-1], group A representative.
    M1M1M1,
    /// [11-1], group A.
    P1P1M1,
    /// [-111], group B representative.
    M1P1P1,
    /// [1-11], group B.
    P1M1P1,
}

impl NvOrientation {
    pub const ALL: [NvOrientation; 4] = [
        NvOrientation::M1M1M1,
        NvOrientation::P1P1M1,
        NvOrientation::M1P1P1,
        NvOrientation::P1M1P1,
    ];

    pub fn group(self) -> Group {
        match self {
            NvOrientation::M1M1M1 | NvOrientation::P1P1M1 => Group::A,
            NvOrientation::M1P1P1 | NvOrientation::P1M1P1 => Group::B,
        }
    }

    /// Representative orientation of a group.
    pub fn representative(group: Group) -> Self {
        match group {
            Group::A => NvOrientation::M1M1M1,
            Group::B => NvOrientation::M1P1P1,
        }
    }

    /// Miller indices of the axis.
    pub fn axis(self) -> [i8; 3] {
        match self {
            NvOrientation::M1M1M1 => [-1, -1, -1],
            NvOrientation::P1P1M1 => [1, 1, -1],
            NvOrientation::M1P1P1 => [-1, 1, 1],
            NvOrientation::P1M1P1 => [1, -1, 1],
        }
    }

    fn is_representative(self) -> bool {
        matches!(self, NvOrientation::M1M1M1 | NvOrientation::M1P1P1)
    }

    pub fn label(self) -> &'static str {
        match self {
            NvOrientation::M1M1M1 => "-1-1-1",
            NvOrientation::P1P1M1 => "11-1",
            NvOrientation::M1P1P1 => "-111",
            NvOrientation::P1M1P1 => "1-11",
        }
    }
}

impl std::fmt::Display for NvOrientation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}]", self.label())
    }
}

impl std::str::FromStr for NvOrientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches('[').trim_end_matches(']');
        NvOrientation::ALL
            .into_iter()
            .find(|o| o.label() == t)
            .ok_or_else(|| Error::Parse(format!("unknown NV axis '{s}' (expected one of -1-1-1, 11-1, -111, 1-11)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frame {
    Cantilever,
    CrystalCube,
    Nv(NvOrientation),
}

/// Right-handed orthonormal NV triad in crystal-cube coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triad {
    pub x: Vector3<f64>,
    pub y: Vector3<f64>,
    pub z: Vector3<f64>,
}

impl Triad {
    /// Matrix whose columns are x̂, ŷ, ẑ.
    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.x, self.y, self.z])
    }
}

/// NV triad for an orientation. ẑ is collinear with the orientation axis.
pub fn nv_frame(orientation: NvOrientation) -> Triad {
    let s2 = 2f64.sqrt();
    let s3 = 3f64.sqrt();
    let s6 = 6f64.sqrt();
    let rep = match orientation.group() {
        Group::A => Triad {
            x: Vector3::new(-1.0, -1.0, 2.0) / s6,
            y: Vector3::new(1.0, -1.0, 0.0) / s2,
            z: Vector3::new(1.0, 1.0, 1.0) / s3,
        },
        Group::B => Triad {
            x: Vector3::new(1.0, -1.0, 2.0) / s6,
            y: Vector3::new(1.0, 1.0, 0.0) / s2,
            z: Vector3::new(-1.0, 1.0, 1.0) / s3,
        },
    };
    if orientation.is_representative() {
        rep
    } else {
        // C2 about [001]
        let c2 = |v: Vector3<f64>| Vector3::new(-v.x, -v.y, v.z);
        Triad {
            x: c2(rep.x),
            y: c2(rep.y),
            z: c2(rep.z),
        }
    }
}

/// Cantilever axes X, Y, Z as columns in crystal-cube coordinates.
pub fn cantilever_basis() -> Matrix3<f64> {
    let s2 = 2f64.sqrt();
    Matrix3::from_columns(&[
        Vector3::new(-1.0, 1.0, 0.0) / s2,
        Vector3::new(0.0, 0.0, 1.0),
        Vector3::new(1.0, 1.0, 0.0) / s2,
    ])
}

/// Symmetric rank-2 strain tensor tagged with its frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrainTensor {
    components: Matrix3<f64>,
    frame: Frame,
}

impl StrainTensor {
    pub fn new(components: Matrix3<f64>, frame: Frame) -> Result<Self> {
        if components.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("strain tensor has non-finite components".into()));
        }
        let asym = (components - components.transpose()).amax();
        if asym > SYMMETRY_TOLERANCE {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(Self { components, frame })
    }

    pub fn zero(frame: Frame) -> Self {
        Self {
            components: Matrix3::zeros(),
            frame,
        }
    }

    pub fn components(&self) -> &Matrix3<f64> {
        &self.components
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.components[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.components.trace()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            components: self.components * c,
            frame: self.frame,
        }
    }

    /// Express the tensor in the crystal-cube frame.
    pub fn to_crystal_frame(&self) -> Result<StrainTensor> {
        match self.frame {
            Frame::CrystalCube => Ok(*self),
            Frame::Cantilever => {
                let c = cantilever_basis();
                Ok(Self::rotated(c * self.components * c.transpose(), Frame::CrystalCube))
            }
            Frame::Nv(o) => {
                let n = nv_frame(o).to_matrix();
                Ok(Self::rotated(n * self.components * n.transpose(), Frame::CrystalCube))
            }
        }
    }

    fn rotated(m: Matrix3<f64>, frame: Frame) -> Self {
        Self {
            components: (m + m.transpose()) * 0.5,
            frame,
        }
    }
}

/// Beam strain in the cantilever frame: axial `eps` along Z, `-nu * eps`
/// transverse.
pub fn axial_strain_tensor(eps: f64, nu: f64) -> Result<StrainTensor> {
    ensure_finite("eps", eps)?;
    ensure_finite("nu", nu)?;
    if eps.abs() >= LINEAR_STRAIN_LIMIT {
        return Err(Error::Range {
            name: "eps",
            value: eps,
            constraint: "|eps| < 1e-2 (linear elasticity)",
        });
    }
    Ok(axial_unchecked(eps, nu))
}

fn axial_unchecked(eps: f64, nu: f64) -> StrainTensor {
    StrainTensor {
        components: Matrix3::from_diagonal(&Vector3::new(-nu * eps, -nu * eps, eps)),
        frame: Frame::Cantilever,
    }
}

/// ε_NV = Rᵀ ε R with R the NV triad (columns) in the input's basis.
pub fn to_nv_frame(t: &StrainTensor, orientation: NvOrientation) -> Result<StrainTensor> {
    if let Frame::Nv(_) = t.frame {
        return Err(Error::FrameMismatch {
            expected: "Cantilever or CrystalCube",
            found: t.frame,
        });
    }
    let cube = t.to_crystal_frame()?;
    let n = nv_frame(orientation).to_matrix();
    Ok(StrainTensor::rotated(
        n.transpose() * cube.components * n,
        Frame::Nv(orientation),
    ))
}

/// Orbital strain coupling constants (Hz per unit strain).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingConstants {
    pub lambda_a1: f64,
    pub lambda_a1p: f64,
    pub lambda_e: f64,
    pub lambda_ep: f64,
}

impl Default for CouplingConstants {
    fn default() -> Self {
        Self {
            lambda_a1: -1.95e15,
            lambda_a1p: 2.16e15,
            lambda_e: -0.85e15,
            lambda_ep: 0.02e15,
        }
    }
}

impl CouplingConstants {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("lambda_a1", self.lambda_a1)?;
        ensure_finite("lambda_a1p", self.lambda_a1p)?;
        ensure_finite("lambda_e", self.lambda_e)?;
        ensure_finite("lambda_ep", self.lambda_ep)?;
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.lambda_a1, self.lambda_a1p, self.lambda_e, self.lambda_ep]
    }
}

/// Frequency offsets from local, intrinsic strain.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntrinsicStrain {
    pub df_a1: f64,
    pub df_e1: f64,
    pub df_e2: f64,
}

impl IntrinsicStrain {
    /// Intrinsic E strain from a measured splitting and dipole angle:
    /// (Δf0/2)(cos 2θ, sin 2θ).
    pub fn from_splitting_and_angle(df_a1: f64, delta_f0: f64, theta: f64) -> Self {
        let half = 0.5 * delta_f0;
        Self {
            df_a1,
            df_e1: half * (2.0 * theta).cos(),
            df_e2: half * (2.0 * theta).sin(),
        }
    }
}

/// Strain-induced frequency terms in the three symmetry channels (Hz).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SymmetryShifts {
    pub a1: f64,
    pub e1: f64,
    pub e2: f64,
}

impl SymmetryShifts {
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            a1: self.a1 * c,
            e1: self.e1 * c,
            e2: self.e2 * c,
        }
    }
}

pub fn symmetry_shifts(t: &StrainTensor, k: &CouplingConstants) -> Result<SymmetryShifts> {
    if !matches!(t.frame, Frame::Nv(_)) {
        return Err(Error::FrameMismatch {
            expected: "Nv",
            found: t.frame,
        });
    }
    let e = &t.components;
    Ok(SymmetryShifts {
        a1: k.lambda_a1 * e[(2, 2)] + k.lambda_a1p * (e[(0, 0)] + e[(1, 1)]),
        e1: k.lambda_e * (e[(1, 1)] - e[(0, 0)]) + k.lambda_ep * (e[(0, 2)] + e[(2, 0)]),
        e2: k.lambda_e * (e[(0, 1)] + e[(1, 0)]) + k.lambda_ep * (e[(1, 2)] + e[(2, 1)]),
    })
}

/// E_x (`plus`) and E_y (`minus`) transition frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transitions {
    pub plus: f64,
    pub minus: f64,
}

impl Transitions {
    pub fn splitting(&self) -> f64 {
        self.plus - self.minus
    }

    pub fn mean(&self) -> f64 {
        0.5 * (self.plus + self.minus)
    }
}

pub fn transition_frequencies(f_zpl: f64, intr: &IntrinsicStrain, s: &SymmetryShifts) -> Transitions {
    let center = f_zpl + intr.df_a1 + s.a1;
    let half = (s.e1 + intr.df_e1).hypot(s.e2 + intr.df_e2);
    Transitions {
        plus: center + half,
        minus: center - half,
    }
}

/// E_x/E_y splitting with the cantilever at rest.
pub fn zero_strain_splitting(intr: &IntrinsicStrain) -> f64 {
    2.0 * intr.df_e1.hypot(intr.df_e2)
}

/// θ = ½ atan2(E2, E1), in (-π/2, π/2].
pub fn stuckelberg_angle(intr: &IntrinsicStrain, s: &SymmetryShifts) -> Result<f64> {
    let e1 = intr.df_e1 + s.e1;
    let e2 = intr.df_e2 + s.e2;
    if e1.abs() < DEGENERATE_E_STRAIN_HZ && e2.abs() < DEGENERATE_E_STRAIN_HZ {
        return Err(Error::DegenerateStrain { e1, e2 });
    }
    Ok(0.5 * e2.atan2(e1))
}

/// Constants plus the beam Poisson ratio: everything needed to map axial
/// beam strain onto symmetry shifts for a given orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrainModel {
    pub constants: CouplingConstants,
    pub poisson_ratio: f64,
}

impl Default for StrainModel {
    fn default() -> Self {
        Self {
            constants: CouplingConstants::default(),
            poisson_ratio: DIAMOND_POISSON_RATIO,
        }
    }
}

impl StrainModel {
    /// Symmetry shifts per unit axial beam strain. Linear, so callers scale
    /// this by the actual strain.
    pub fn shifts_per_strain(&self, orientation: NvOrientation) -> SymmetryShifts {
        let t = axial_unchecked(1.0, self.poisson_ratio);
        let nv = to_nv_frame(&t, orientation).expect("cantilever-frame input");
        symmetry_shifts(&nv, &self.constants).expect("nv-frame input")
    }

    /// Shifts at axial strain `eps` (no linear-regime check).
    pub fn shifts(&self, orientation: NvOrientation, eps: f64) -> SymmetryShifts {
        self.shifts_per_strain(orientation).scaled(eps)
    }

    /// Common-mode slope d((f+ + f-)/2)/dε for a group.
    pub fn a1_slope(&self, group: Group) -> f64 {
        a1_slope(&self.constants, self.poisson_ratio, group)
    }

    /// E1 slope dE1/dε for a group.
    pub fn e1_slope(&self, group: Group) -> f64 {
        e1_slope(&self.constants, self.poisson_ratio, group)
    }
}

/// Closed-form common-mode slope: λ_A1(2-ν)/3 + λ_A1'(1-5ν)/3 for group A,
/// -λ_A1 ν + λ_A1'(1-ν) for group B.
pub fn a1_slope(k: &CouplingConstants, nu: f64, group: Group) -> f64 {
    let (ca, cap) = a1_coefficients(nu, group);
    ca * k.lambda_a1 + cap * k.lambda_a1p
}

/// Coefficients multiplying (λ_A1, λ_A1') in the common-mode slope.
pub fn a1_coefficients(nu: f64, group: Group) -> (f64, f64) {
    match group {
        Group::A => ((2.0 - nu) / 3.0, (1.0 - 5.0 * nu) / 3.0),
        Group::B => (-nu, 1.0 - nu),
    }
}

/// Closed-form E1 slope: -λ_E(1+ν)/3 - λ_E'·2√2(1+ν)/3 for group A,
/// λ_E(1+ν) for group B.
pub fn e1_slope(k: &CouplingConstants, nu: f64, group: Group) -> f64 {
    let (ce, cep) = e1_coefficients(nu, group);
    ce * k.lambda_e + cep * k.lambda_ep
}

/// Coefficients multiplying (λ_E, λ_E') in the E1 slope.
pub fn e1_coefficients(nu: f64, group: Group) -> (f64, f64) {
    match group {
        Group::A => (-(1.0 + nu) / 3.0, -2.0 * 2f64.sqrt() * (1.0 + nu) / 3.0),
        Group::B => (1.0 + nu, 0.0),
    }
}
