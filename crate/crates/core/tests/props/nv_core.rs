use nalgebra::{Matrix2, Matrix3, Vector3};
use proptest::prelude::*;

use nvstrain::nv_core::{
    axial_strain_tensor, nv_frame, stuckelberg_angle, symmetry_shifts, to_nv_frame, transition_frequencies,
    zero_strain_splitting, Frame, SymmetryShifts,
};
use nvstrain::optics::canonical_theta;
use nvstrain::{CouplingConstants, Error, Group, IntrinsicStrain, NvOrientation, StrainTensor};

use super::{close, Failures, SuiteResult};

/// Axial beam strain expressed in the NV frame, written out by hand.
pub fn printed_tensor(group: Group, eps: f64, nu: f64) -> Matrix3<f64> {
    match group {
        Group::A => {
            let off = -(2f64.sqrt()) * eps * (1.0 + nu) / 3.0;
            Matrix3::new(
                eps * (1.0 - 2.0 * nu) / 3.0,
                0.0,
                off,
                0.0,
                -nu * eps,
                0.0,
                off,
                0.0,
                eps * (2.0 - nu) / 3.0,
            )
        }
        Group::B => Matrix3::from_diagonal(&Vector3::new(-nu * eps, eps, -nu * eps)),
    }
}

/// Both transitions for a strained group member, from the closed-form
/// strain dependence of each group.
pub fn printed_transitions(
    group: Group,
    f_zpl: f64,
    intr: &IntrinsicStrain,
    k: &CouplingConstants,
    nu: f64,
    eps: f64,
) -> (f64, f64) {
    let (common, e1) = match group {
        Group::A => (
            k.lambda_a1 * (2.0 - nu) / 3.0 * eps + k.lambda_a1p * (1.0 - 5.0 * nu) / 3.0 * eps,
            -k.lambda_e * (1.0 + nu) / 3.0 * eps - k.lambda_ep * 2.0 * 2f64.sqrt() * (1.0 + nu) / 3.0 * eps,
        ),
        Group::B => (
            -k.lambda_a1 * nu * eps + k.lambda_a1p * (1.0 - nu) * eps,
            k.lambda_e * (1.0 + nu) * eps,
        ),
    };
    let center = f_zpl + intr.df_a1 + common;
    let half = ((e1 + intr.df_e1).powi(2) + intr.df_e2.powi(2)).sqrt();
    (center + half, center - half)
}

/// ε' = Nᵀ (C ε Cᵀ) N summed index by index, with the cantilever axes C
/// written independently of the library.
fn explicit_nv_tensor(cantilever: &Matrix3<f64>, o: NvOrientation) -> Matrix3<f64> {
    let s2 = 2f64.sqrt();
    let axes = [[-1.0 / s2, 1.0 / s2, 0.0], [0.0, 0.0, 1.0], [1.0 / s2, 1.0 / s2, 0.0]];
    let mut cube = [[0.0; 3]; 3];
    for (i, row) in cube.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            for a in 0..3 {
                for b in 0..3 {
                    *v += axes[a][i] * axes[b][j] * cantilever[(a, b)];
                }
            }
        }
    }
    let t = nv_frame(o);
    let n = [t.x, t.y, t.z];
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for (k, row) in cube.iter().enumerate() {
                for (l, v) in row.iter().enumerate() {
                    s += n[i][k] * n[j][l] * v;
                }
            }
            out[(i, j)] = s;
        }
    }
    out
}

fn symmetric() -> impl Strategy<Value = Matrix3<f64>> {
    prop::array::uniform6(-1e-3f64..1e-3)
        .prop_map(|c| Matrix3::new(c[0], c[3], c[4], c[3], c[1], c[5], c[4], c[5], c[2]))
}

fn orientation() -> impl Strategy<Value = NvOrientation> {
    prop::sample::select(NvOrientation::ALL.to_vec())
}

fn constants() -> impl Strategy<Value = CouplingConstants> {
    prop::array::uniform4(-3e15f64..3e15).prop_map(|a| CouplingConstants {
        lambda_a1: a[0],
        lambda_a1p: a[1],
        lambda_e: a[2],
        lambda_ep: a[3],
    })
}

fn intrinsic() -> impl Strategy<Value = IntrinsicStrain> {
    prop::array::uniform3(-20e9f64..20e9).prop_map(|a| IntrinsicStrain {
        df_a1: a[0],
        df_e1: a[1],
        df_e2: a[2],
    })
}

fn shifts() -> impl Strategy<Value = SymmetryShifts> {
    prop::array::uniform3(-20e9f64..20e9).prop_map(|a| SymmetryShifts {
        a1: a[0],
        e1: a[1],
        e2: a[2],
    })
}

fn max_abs_diff(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (a - b).amax()
}

pub fn suite() -> SuiteResult {
    let mut f = Failures::default();

    for o in NvOrientation::ALL {
        let group = match o.axis() {
            [-1, -1, -1] | [1, 1, -1] => Group::A,
            _ => Group::B,
        };
        f.fact("group follows axis", o.group() == group, o);
        let t = nv_frame(o);
        let unit = [t.x, t.y, t.z].iter().all(|v| (v.norm() - 1.0).abs() <= 1e-14);
        f.fact("triad unit norms", unit, o);
        f.fact("triad right-handed", (t.x.cross(&t.y) - t.z).amax() <= 1e-14, o);
        let axis = o.axis();
        let axis = Vector3::new(axis[0] as f64, axis[1] as f64, axis[2] as f64).normalize();
        f.fact("z along axis", t.z.cross(&axis).amax() <= 1e-14, o);
    }

    f.check("symmetric on construction", 200, (symmetric(), 2e-14f64..1e-3), |(m, skew)| {
        prop_assert!(StrainTensor::new(m, Frame::Cantilever).is_ok());
        let mut bad = m;
        bad[(0, 1)] += skew;
        prop_assert!(matches!(StrainTensor::new(bad, Frame::Cantilever), Err(Error::NotSymmetric(_))));
        Ok(())
    });

    f.check("trace is frame invariant", 500, (symmetric(), orientation()), |(m, o)| {
        let t = StrainTensor::new(m, Frame::Cantilever).unwrap();
        let scale = m.amax();
        let cube = t.to_crystal_frame().unwrap();
        let nv = to_nv_frame(&t, o).unwrap();
        prop_assert!(close(cube.trace(), t.trace(), 1e-12, scale));
        prop_assert!(close(nv.trace(), t.trace(), 1e-12, scale));
        let from_cube = to_nv_frame(&cube, o).unwrap();
        prop_assert!(max_abs_diff(from_cube.components(), nv.components()) <= 1e-12 * scale);
        Ok(())
    });

    f.check("general transform matches index sums", 1000, (symmetric(), orientation()), |(m, o)| {
        let t = StrainTensor::new(m, Frame::Cantilever).unwrap();
        let nv = to_nv_frame(&t, o).unwrap();
        let want = explicit_nv_tensor(&m, o);
        prop_assert!(max_abs_diff(nv.components(), &want) <= 1e-12 * m.amax(), "{o}");
        Ok(())
    });

    f.check("axial transform matches printed tensors", 1000, (-5e-3f64..5e-3, 0f64..0.5, orientation()), |(eps, nu, o)| {
        let nv = to_nv_frame(&axial_strain_tensor(eps, nu).unwrap(), o).unwrap();
        let want = printed_tensor(o.group(), eps, nu);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!(close(nv.get(i, j), want[(i, j)], 1e-12, eps.abs()), "{o} ({i},{j})");
            }
        }
        Ok(())
    });

    f.check("shifts linear in the tensor", 500, (symmetric(), orientation(), constants(), -10f64..10.0), |(m, o, k, c)| {
        let nv = to_nv_frame(&StrainTensor::new(m, Frame::Cantilever).unwrap(), o).unwrap();
        let s = symmetry_shifts(&nv, &k).unwrap();
        let sc = symmetry_shifts(&nv.scaled(c), &k).unwrap();
        let scale = 1e-12 * m.amax() * 4.0 * 3e15 * c.abs().max(1.0);
        prop_assert!((sc.a1 - c * s.a1).abs() <= scale);
        prop_assert!((sc.e1 - c * s.e1).abs() <= scale);
        prop_assert!((sc.e2 - c * s.e2).abs() <= scale);
        Ok(())
    });

    f.check("shifts linear in each constant", 500, (symmetric(), orientation(), constants()), |(m, o, k)| {
        let nv = to_nv_frame(&StrainTensor::new(m, Frame::Cantilever).unwrap(), o).unwrap();
        let total = symmetry_shifts(&nv, &k).unwrap();
        let mut sum = SymmetryShifts::default();
        for (i, v) in k.as_array().into_iter().enumerate() {
            let mut a = [0.0; 4];
            a[i] = 1.0;
            let unit = CouplingConstants {
                lambda_a1: a[0],
                lambda_a1p: a[1],
                lambda_e: a[2],
                lambda_ep: a[3],
            };
            let s = symmetry_shifts(&nv, &unit).unwrap().scaled(v);
            sum.a1 += s.a1;
            sum.e1 += s.e1;
            sum.e2 += s.e2;
        }
        let scale = 1e-12 * m.amax() * 4.0 * 3e15;
        prop_assert!((sum.a1 - total.a1).abs() <= scale);
        prop_assert!((sum.e1 - total.e1).abs() <= scale);
        prop_assert!((sum.e2 - total.e2).abs() <= scale);
        Ok(())
    });

    let f_zpl = prop_oneof![Just(0.0), Just(470.4e12)];

    f.check("transitions are eigenvalues of the E block", 1000, (f_zpl.clone(), intrinsic(), shifts()), |(f0, intr, s)| {
        let e1 = s.e1 + intr.df_e1;
        let e2 = s.e2 + intr.df_e2;
        let eig = Matrix2::new(e1, e2, e2, -e1).symmetric_eigen();
        let (lo, hi) = if eig.eigenvalues[0] <= eig.eigenvalues[1] {
            (eig.eigenvalues[0], eig.eigenvalues[1])
        } else {
            (eig.eigenvalues[1], eig.eigenvalues[0])
        };
        let center = f0 + intr.df_a1 + s.a1;
        let t = transition_frequencies(f0, &intr, &s);
        let scale = center.abs() + e1.hypot(e2);
        prop_assert!(close(t.plus, center + hi, 1e-12, scale));
        prop_assert!(close(t.minus, center + lo, 1e-12, scale));
        Ok(())
    });

    f.check("f_plus >= f_minus", 1000, (f_zpl, intrinsic(), shifts()), |(f0, intr, s)| {
        let t = transition_frequencies(f0, &intr, &s);
        prop_assert!(t.plus >= t.minus);
        Ok(())
    });

    f.check("stuckelberg angle is the E-block eigenvector angle", 1000, (intrinsic(), shifts()), |(intr, s)| {
        let e1 = s.e1 + intr.df_e1;
        let e2 = s.e2 + intr.df_e2;
        prop_assume!(e1.hypot(e2) > 1e3);
        let eig = Matrix2::new(e1, e2, e2, -e1).symmetric_eigen();
        let top = if eig.eigenvalues[0] >= eig.eigenvalues[1] { 0 } else { 1 };
        let v = eig.eigenvectors.column(top);
        let eigen_angle = v[1].atan2(v[0]);
        let theta = stuckelberg_angle(&intr, &s).unwrap();
        prop_assert!(canonical_theta(eigen_angle - theta).abs() <= 1e-10);
        Ok(())
    });

    f.check("degenerate E strain is rejected", 200, (-9e-4f64..9e-4, -9e-4f64..9e-4), |(e1, e2)| {
        let intr = IntrinsicStrain {
            df_a1: 1e9,
            df_e1: e1,
            df_e2: e2,
        };
        let r = stuckelberg_angle(&intr, &SymmetryShifts::default());
        let degenerate = matches!(r, Err(Error::DegenerateStrain { .. }));
        prop_assert!(degenerate, "{:?}", r);
        Ok(())
    });

    f.check("zero-strain splitting nonnegative", 500, intrinsic(), |intr| {
        prop_assert!(zero_strain_splitting(&intr) >= 0.0);
        Ok(())
    });

    f.check("shifts scale with axial strain", 300, (-5e-3f64..5e-3, -10f64..10.0, orientation()), |(eps, c, o)| {
        prop_assume!((c * eps).abs() < 1e-2);
        let k = CouplingConstants::default();
        let s = symmetry_shifts(&to_nv_frame(&axial_strain_tensor(eps, 0.11).unwrap(), o).unwrap(), &k).unwrap();
        let sc = symmetry_shifts(&to_nv_frame(&axial_strain_tensor(c * eps, 0.11).unwrap(), o).unwrap(), &k).unwrap();
        let scale = 3e15 * (c * eps).abs();
        prop_assert!(close(sc.a1, c * s.a1, 1e-12, scale));
        prop_assert!(close(sc.e1, c * s.e1, 1e-12, scale));
        prop_assert!(close(sc.e2, c * s.e2, 1e-12, scale));
        Ok(())
    });

    let k = CouplingConstants::default();
    f.fact(
        "default constants",
        k.as_array() == [-1.95e15, 2.16e15, -0.85e15, 0.02e15],
        k,
    );
    let bad = CouplingConstants {
        lambda_e: f64::NAN,
        ..k
    };
    f.fact("non-finite constants rejected", bad.validate().is_err(), bad);

    f.finish()
}
