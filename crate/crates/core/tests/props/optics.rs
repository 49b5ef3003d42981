use std::f64::consts::{FRAC_PI_2, PI};

use proptest::prelude::*;

use nvstrain::nv_core::StrainModel;
use nvstrain::optics::{canonical_theta, linear_intensity, match_polarization, saturated_intensity, LaserPolarization};
use nvstrain::{Group, IntrinsicStrain, NvOrientation, NvSite};

use super::{Failures, SuiteResult};

fn group() -> impl Strategy<Value = Group> {
    prop_oneof![Just(Group::A), Just(Group::B)]
}

fn angle() -> impl Strategy<Value = f64> {
    -2.0 * PI..2.0 * PI
}

fn laser() -> impl Strategy<Value = LaserPolarization> {
    (angle(), 0f64..=PI, 0f64..1e-5, 1e-8f64..1e-5).prop_map(|(phi, psi, p_in, p_sat)| LaserPolarization {
        phi,
        psi,
        p_in,
        p_sat,
    })
}

/// Saturated intensities with the cos ψ cross term left out.
fn without_cross_term(group: Group, theta: f64, pol: &LaserPolarization) -> (f64, f64) {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = pol.phi.sin_cos();
    let (sin_sq, cos_sq) = match group {
        Group::A => (sp * sp, cp * cp),
        Group::B => (cp * cp, sp * sp),
    };
    let q_ex = st * st * sin_sq + ct * ct * cos_sq / 3.0;
    let q_ey = ct * ct * sin_sq + st * st * cos_sq / 3.0;
    let r = pol.p_in / pol.p_sat;
    (-(-r * q_ex).exp_m1(), -(-r * q_ey).exp_m1())
}

pub fn suite() -> SuiteResult {
    let mut f = Failures::default();

    f.check("intensities within [0, 1]", 2000, (group(), angle(), laser()), |(g, theta, pol)| {
        let l = linear_intensity(g, theta, pol.phi);
        let s = saturated_intensity(g, theta, &pol);
        for v in [l.i_ex, l.i_ey, s.i_ex, s.i_ey] {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
        Ok(())
    });

    f.check("circular-quadrature light has no cross term", 1000, (group(), angle(), laser()), |(g, theta, pol)| {
        for psi in [FRAC_PI_2, 90f64.to_radians()] {
            let pol = LaserPolarization { psi, ..pol };
            let s = saturated_intensity(g, theta, &pol);
            let (ex, ey) = without_cross_term(g, theta, &pol);
            prop_assert_eq!(s.i_ex, ex);
            prop_assert_eq!(s.i_ey, ey);
        }
        Ok(())
    });

    // The group-B forms are the group-A forms with sin φ and cos φ swapped,
    // i.e. φ → π/2 - φ; equivalently φ → φ + π/2 together with θ → -θ.
    f.check("group B is group A with sin and cos of phi swapped", 2000, (angle(), angle()), |(theta, phi)| {
        let a = linear_intensity(Group::A, theta, phi);
        let b = linear_intensity(Group::B, theta, FRAC_PI_2 - phi);
        let b2 = linear_intensity(Group::B, -theta, phi + FRAC_PI_2);
        for (x, y) in [(a.i_ex, b.i_ex), (a.i_ey, b.i_ey), (a.i_ex, b2.i_ex), (a.i_ey, b2.i_ey)] {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        Ok(())
    });

    f.check("theta + pi leaves intensities unchanged", 2000, (group(), angle(), laser()), |(g, theta, pol)| {
        let l0 = linear_intensity(g, theta, pol.phi);
        let l1 = linear_intensity(g, theta + PI, pol.phi);
        let s0 = saturated_intensity(g, theta, &pol);
        let s1 = saturated_intensity(g, theta + PI, &pol);
        for (x, y) in [(l0.i_ex, l1.i_ex), (l0.i_ey, l1.i_ey), (s0.i_ex, s1.i_ex), (s0.i_ey, s1.i_ey)] {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        Ok(())
    });

    f.check("canonical angle in (-pi/2, pi/2] and congruent", 1000, -20f64..20.0, |t| {
        let c = canonical_theta(t);
        prop_assert!(c > -FRAC_PI_2 && c <= FRAC_PI_2);
        let k = (t - c) / PI;
        prop_assert!((k - k.round()).abs() <= 1e-12);
        Ok(())
    });

    f.fact(
        "laser rejects negative power",
        LaserPolarization::new(0.0, 0.0, -1e-9, 1e-6).is_err(),
        (),
    );
    f.fact(
        "laser rejects non-positive saturation",
        LaserPolarization::new(0.0, 0.0, 1e-6, 0.0).is_err(),
        (),
    );

    let orientation = prop::sample::select(NvOrientation::ALL.to_vec());
    f.check(
        "matched deflection reaches the target angle",
        500,
        (orientation, 0.5e9f64..10e9, -FRAC_PI_2..FRAC_PI_2, -FRAC_PI_2..FRAC_PI_2),
        |(o, df0, theta0, target)| {
            let site = NvSite {
                orientation: o,
                intrinsic: IntrinsicStrain::from_splitting_and_angle(0.0, df0, theta0),
                ..NvSite::default()
            };
            let model = StrainModel::default();
            if let Ok(m) = match_polarization(target, &site, &model) {
                let reached = site.theta_at(&model, m.deflection).unwrap();
                prop_assert!(canonical_theta(reached - target).abs() <= 1e-9);
                prop_assert_eq!(m.amplitude, m.deflection.abs());
            }
            Ok(())
        },
    );

    f.finish()
}
