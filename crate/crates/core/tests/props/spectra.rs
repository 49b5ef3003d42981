use std::f64::consts::PI;

use proptest::prelude::*;

use nvstrain::mechanics::{CantileverGeometry, DriveState, MechanicalMode};
use nvstrain::nv_core::StrainModel;
use nvstrain::optics::{saturated_intensity, LaserPolarization};
use nvstrain::spectra::{
    amplitude_map, cw_spectrum, fit_lorentzian_peaks, linear_grid, lorentzian, read_map_csv, read_spectrum_csv,
    strobe_spectrum, write_map_csv, write_spectrum_csv, Antinode, IntensityModel, MapAxis, Spectrum, SpectrumMap,
    SpectrumMeta, StrobeWindow,
};
use nvstrain::{IntrinsicStrain, NvOrientation, NvSite};

use super::{Failures, SuiteResult};

fn mode() -> MechanicalMode {
    MechanicalMode::new(870e3, 2e4, 20e-9).unwrap()
}

fn site() -> impl Strategy<Value = NvSite> {
    (
        prop::sample::select(NvOrientation::ALL.to_vec()),
        0.5e9f64..8e9,
        -PI..PI,
        -3e9f64..3e9,
        0f64..0.3,
        0.5e9f64..2e9,
    )
        .prop_map(|(orientation, df0, theta, a1, axial, gamma)| {
            let g = CantileverGeometry::default();
            NvSite {
                id: "p".into(),
                orientation,
                intrinsic: IntrinsicStrain::from_splitting_and_angle(a1, df0, theta),
                linewidth_gamma: gamma,
                pl_scale: 25.0,
                geometry: g.with_position(g.nv_depth, axial * g.length),
                ..NvSite::default()
            }
        })
}

fn polarized() -> IntensityModel {
    IntensityModel::Polarized(LaserPolarization {
        phi: 0.3,
        p_in: 0.6e-6,
        ..LaserPolarization::default()
    })
}

/// Largest |detuning| either line reaches over the drive cycle.
fn excursion(site: &NvSite, model: &StrainModel, x_c: f64) -> f64 {
    [x_c, -x_c, 0.0]
        .iter()
        .map(|&x| {
            let t = site.detunings_at(model, x);
            t.plus.abs().max(t.minus.abs())
        })
        .fold(0.0, f64::max)
}

/// Fine uniform core around every line position with geometric tails out
/// to 10⁶ linewidths, so the trapezoid integral captures the whole line.
fn covering_grid(half_width: f64, gamma: f64) -> Vec<f64> {
    let core = half_width + 200.0 * gamma;
    let step = gamma / 20.0;
    let n = (2.0 * core / step).ceil() as usize;
    let mut right = vec![];
    let mut x = core;
    while x < 1e6 * gamma {
        x *= 1.02;
        right.push(x);
    }
    let mut grid: Vec<f64> = right.iter().rev().map(|v| -v).collect();
    grid.extend(linear_grid(-core, core, n + 1).unwrap());
    grid.extend(right);
    grid
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

/// Signal at one deflection, assembled from public per-point quantities.
fn instantaneous(site: &NvSite, model: &StrainModel, pol: &LaserPolarization, x: f64, f: f64) -> f64 {
    let t = site.detunings_at(model, x);
    let theta = site.theta_at(model, x).unwrap_or(0.0);
    let p = saturated_intensity(site.orientation.group(), theta, pol);
    site.pl_scale * (p.i_ex * lorentzian(f, t.plus, site.linewidth_gamma) + p.i_ey * lorentzian(f, t.minus, site.linewidth_gamma))
}

/// Local maxima above 5% of the global maximum, refined by a parabola.
fn local_maxima(spec: &Spectrum) -> Vec<f64> {
    let s = &spec.signal;
    let top = s.iter().cloned().fold(0.0, f64::max);
    let mut out = vec![];
    for i in 1..s.len() - 1 {
        if s[i] > s[i - 1] && s[i] >= s[i + 1] && s[i] > 0.05 * top {
            let h = spec.detunings[i + 1] - spec.detunings[i];
            let denom = s[i - 1] - 2.0 * s[i] + s[i + 1];
            let shift = if denom != 0.0 { 0.5 * (s[i - 1] - s[i + 1]) / denom } else { 0.0 };
            out.push(spec.detunings[i] + shift * h);
        }
    }
    out
}

pub fn suite() -> SuiteResult {
    let mut f = Failures::default();
    let model = StrainModel::default();

    f.check("spectral weight conserved", 6, (site(), 0f64..3e-9, 0f64..1.0), |(s, x_c, ey)| {
        let intensity = IntensityModel::Fixed { ex: 1.0, ey };
        let grid = covering_grid(excursion(&s, &model, x_c), s.linewidth_gamma);
        let rest = cw_spectrum(&s, &model, &DriveState::undriven(mode()), intensity, &grid).unwrap();
        let driven = cw_spectrum(&s, &model, &DriveState::resonant(mode(), x_c).unwrap(), intensity, &grid).unwrap();
        let w0 = trapezoid(&grid, &rest.signal);
        let w1 = trapezoid(&grid, &driven.signal);
        prop_assert!((w1 - w0).abs() <= 1e-6 * w0, "{w0} vs {w1}");
        Ok(())
    });

    f.check("strobed antinodes bracket cw peaks", 8, (site(), 0.5e-9f64..3e-9), |(s, x_c)| {
        let gamma = s.linewidth_gamma;
        for x in [x_c, -x_c] {
            prop_assume!(s.detunings_at(&model, x).splitting() > 3.0 * gamma);
        }
        let intensity = IntensityModel::Fixed { ex: 1.0, ey: 0.7 };
        let drive = DriveState::resonant(mode(), x_c).unwrap();
        let half = excursion(&s, &model, x_c) + 10.0 * gamma;
        let grid = linear_grid(-half, half, (2.0 * half / (gamma / 40.0)) as usize).unwrap();
        let mut strobed = vec![];
        for antinode in [Antinode::Upper, Antinode::Lower] {
            let w = StrobeWindow::at_antinode(drive.period(), drive.period() / 200.0, antinode).unwrap();
            let spec = strobe_spectrum(&s, &model, &drive, intensity, &w, &grid).unwrap();
            let fit = fit_lorentzian_peaks(&spec, 2).unwrap();
            strobed.extend(fit.peaks.iter().map(|p| p.center));
        }
        let lo = strobed.iter().cloned().fold(f64::INFINITY, f64::min) - gamma / 100.0;
        let hi = strobed.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + gamma / 100.0;
        let cw = cw_spectrum(&s, &model, &drive, intensity, &grid).unwrap();
        for p in local_maxima(&cw) {
            prop_assert!(p >= lo && p <= hi, "cw peak {p} outside [{lo}, {hi}]");
        }
        Ok(())
    });

    f.check("cw quadrature converged", 6, (site(), 0.1e-9f64..3e-9), |(s, x_c)| {
        let pol = LaserPolarization {
            phi: 0.3,
            p_in: 0.6e-6,
            ..LaserPolarization::default()
        };
        let half = excursion(&s, &model, x_c) + 5.0 * s.linewidth_gamma;
        let grid = linear_grid(-half, half, 151).unwrap();
        let drive = DriveState::resonant(mode(), x_c).unwrap();
        let spec = cw_spectrum(&s, &model, &drive, IntensityModel::Polarized(pol), &grid).unwrap();
        let n = 8192;
        for (i, &fq) in grid.iter().enumerate() {
            let fine: f64 = (0..n)
                .map(|k| instantaneous(&s, &model, &pol, x_c * (2.0 * PI * k as f64 / n as f64).cos(), fq))
                .sum::<f64>()
                / n as f64;
            prop_assert!((spec.signal[i] - fine).abs() <= 1e-6 * fine, "{} vs {fine}", spec.signal[i]);
        }
        Ok(())
    });

    f.check("strobe quadrature converged", 6, (site(), 0.1e-9f64..3e-9, 0f64..1.0, 0.01f64..1.0), |(s, x_c, start, frac)| {
        let pol = LaserPolarization {
            phi: 0.3,
            p_in: 0.6e-6,
            ..LaserPolarization::default()
        };
        let drive = DriveState::resonant(mode(), x_c).unwrap();
        let period = drive.period();
        let w = StrobeWindow::new(start * period * 0.999, frac * period, 0.0, period).unwrap();
        let half = excursion(&s, &model, x_c) + 5.0 * s.linewidth_gamma;
        let grid = linear_grid(-half, half, 101).unwrap();
        let spec = strobe_spectrum(&s, &model, &drive, IntensityModel::Polarized(pol), &w, &grid).unwrap();
        let n = 8192;
        let omega = 2.0 * PI * drive.f_piezo;
        for (i, &fq) in grid.iter().enumerate() {
            // composite Simpson: the window is not periodic, so a trapezoid
            // oracle at this resolution is only good to ~1e-6 itself
            let mut acc = 0.0;
            for k in 0..=n {
                let t = w.start + w.tau * k as f64 / n as f64;
                let weight = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                acc += weight * instantaneous(&s, &model, &pol, x_c * (omega * t).cos(), fq);
            }
            let fine = acc / (3 * n) as f64;
            prop_assert!((spec.signal[i] - fine).abs() <= 1e-6 * fine, "{} vs {fine}", spec.signal[i]);
        }
        Ok(())
    });

    f.check("signals nonnegative", 20, (site(), 0f64..5e-9, 0f64..1.0), |(s, x_c, start)| {
        let grid = linear_grid(-60e9, 60e9, 121).unwrap();
        let drive = DriveState::resonant(mode(), x_c).unwrap();
        let cw = cw_spectrum(&s, &model, &drive, polarized(), &grid).unwrap();
        let w = StrobeWindow::new(start * 0.999 * drive.period(), 60e-9, 0.0, drive.period()).unwrap();
        let st = strobe_spectrum(&s, &model, &drive, polarized(), &w, &grid).unwrap();
        prop_assert!(cw.signal.iter().chain(&st.signal).all(|v| *v >= 0.0));
        Ok(())
    });

    f.check("undriven spectrum is two lorentzians", 50, site(), |s| {
        let grid = linear_grid(-20e9, 20e9, 81).unwrap();
        let spec = cw_spectrum(&s, &model, &DriveState::undriven(mode()), polarized(), &grid).unwrap();
        let IntensityModel::Polarized(pol) = polarized() else { unreachable!() };
        for (v, &fq) in spec.signal.iter().zip(&grid) {
            let want = instantaneous(&s, &model, &pol, 0.0, fq);
            prop_assert!((v - want).abs() <= 1e-12 * want.max(1e-300));
        }
        Ok(())
    });

    f.check("full-period strobe equals cw", 6, (site(), 0.1e-9f64..3e-9), |(s, x_c)| {
        let drive = DriveState::resonant(mode(), x_c).unwrap();
        let grid = linear_grid(-40e9, 40e9, 161).unwrap();
        let w = StrobeWindow::new(0.0, drive.period(), 0.0, drive.period()).unwrap();
        let cw = cw_spectrum(&s, &model, &drive, polarized(), &grid).unwrap();
        let st = strobe_spectrum(&s, &model, &drive, polarized(), &w, &grid).unwrap();
        for (a, b) in cw.signal.iter().zip(&st.signal) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()));
        }
        Ok(())
    });

    let period = mode().period();
    f.fact("window rejects tau <= 0", StrobeWindow::new(0.0, 0.0, 0.0, period).is_err(), ());
    f.fact("window rejects tau > period", StrobeWindow::new(0.0, 1.01 * period, 0.0, period).is_err(), ());
    f.fact("window rejects start >= period", StrobeWindow::new(period, 1e-9, 0.0, period).is_err(), ());
    f.fact("window rejects start < 0", StrobeWindow::new(-1e-12, 1e-9, 0.0, period).is_err(), ());
    let meta = SpectrumMeta::default();
    f.fact(
        "spectrum rejects unordered detunings",
        Spectrum::new(vec![0.0, 0.0], vec![1.0, 1.0], meta).is_err(),
        (),
    );
    f.fact(
        "spectrum rejects negative signal",
        Spectrum::new(vec![0.0, 1.0], vec![1.0, -1e-9], meta).is_err(),
        (),
    );
    f.fact(
        "spectrum rejects length mismatch",
        Spectrum::new(vec![0.0, 1.0], vec![1.0], meta).is_err(),
        (),
    );

    let values = prop::collection::vec((1e-3f64..1e3, 0f64..1e3), 2..60);
    f.check("spectrum csv round-trips bit-exactly", 200, values.clone(), |v| {
        let mut x = 0.0;
        let det: Vec<f64> = v.iter().map(|(d, _)| {
            x += d * 1.234_567_890_123e6;
            x - 3e10
        }).collect();
        let sig: Vec<f64> = v.iter().map(|(_, s)| s / 7.0).collect();
        let spec = Spectrum::new(det, sig, SpectrumMeta::default()).unwrap();
        let mut buf = vec![];
        write_spectrum_csv(&mut buf, &spec).unwrap();
        let back = read_spectrum_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(&back.detunings, &spec.detunings);
        prop_assert_eq!(&back.signal, &spec.signal);
        Ok(())
    });

    f.check("map csv round-trips bit-exactly", 100, (values, 1usize..6, prop::bool::ANY), |(v, rows, piezo)| {
        let det: Vec<f64> = v.iter().scan(0.0, |x, (d, _)| {
            *x += d / 3.0;
            Some(*x)
        }).collect();
        let map = SpectrumMap {
            axis: if piezo { MapAxis::PiezoHz } else { MapAxis::XcM },
            row_values: (0..rows).map(|r| 1e-9 * (r as f64 + 1.0) / 3.0).collect(),
            detunings: det,
            rows: (0..rows).map(|r| v.iter().map(|(_, s)| s * (r as f64 + 0.1) / 9.0).collect()).collect(),
        };
        let mut buf = vec![];
        write_map_csv(&mut buf, &map).unwrap();
        let back = read_map_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, map);
        Ok(())
    });

    f.check("map rows are ordered and deterministic", 4, site(), |s| {
        let grid = linear_grid(-30e9, 30e9, 61).unwrap();
        let amps = linear_grid(0.0, 2e-9, 6).unwrap();
        let a = amplitude_map(&s, &model, &mode(), polarized(), &amps, &grid).unwrap();
        let b = amplitude_map(&s, &model, &mode(), polarized(), &amps, &grid).unwrap();
        prop_assert_eq!(&a, &b);
        for (row, &x) in a.rows.iter().zip(&amps) {
            let one = cw_spectrum(&s, &model, &DriveState::resonant(mode(), x).unwrap(), polarized(), &grid).unwrap();
            prop_assert_eq!(row, &one.signal);
        }
        Ok(())
    });

    f.finish()
}
