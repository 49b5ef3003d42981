use std::fs;
use std::path::Path;

use serde_json::Value;

use nvstrain::cli::{run, EXIT_CONFIG, EXIT_OK};
use nvstrain::config::RunConfig;
use nvstrain::inference::{read_dataset_csv, read_polarization_csv};
use nvstrain::spectra::{read_map_csv, read_spectrum_csv};
use nvstrain::CouplingConstants;

use super::{close, Failures, SuiteResult};

const ENSEMBLE: &str = r#"{
  "seed": 7,
  "synthesis": {
    "ensemble": "reference",
    "noise": {"phase_jitter_deg": 5, "depth_sigma_m": 13e-9, "frequency_sigma_hz": 5e6, "pl_sigma_kcps": 0.2}
  },
  "drive": {
    "x_c_m": 2e-9,
    "piezo_sweep_hz": {"min": 869.8e3, "max": 870.2e3, "points": 5},
    "amplitude_sweep_m": {"min": 0, "max": 3e-9, "points": 4}
  },
  "strobe": {"tau_s": 60e-9, "antinode": "lower"},
  "laser": {"grid_hz": {"min": -40e9, "max": 40e9, "points": 161}},
  "matching": {"target_hz": 470.41e12, "target_theta_deg": 10}
}"#;

const SINGLE: &str = r#"{
  "sites": [{
    "id": "b1", "orientation": "-111", "delta_f0_hz": 6e9, "theta_deg": 20,
    "df_a1_hz": 1e9, "linewidth_hz": 1e9, "pl_scale_kcps": 30
  }],
  "laser": {"phi_deg": 30, "p_in_w": 0.6e-6, "grid_hz": {"min": -15e9, "max": 15e9, "points": 601}},
  "drive": {"amplitude_sweep_m": {"min": 0, "max": 2e-9, "points": 3}},
  "fit": {"group": "B"}
}"#;

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("nvstrain").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Every command a config supports, writing into `dir`.
fn run_all(config: &Path, dir: &Path) -> Vec<(String, i32)> {
    let c = s(config);
    let out = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let ds = out("ds");
    let commands: Vec<Vec<String>> = vec![
        vec!["simulate".into(), "dataset".into(), "--out".into(), ds.clone()],
        vec!["simulate".into(), "cw".into(), "--out".into(), out("cw.csv")],
        vec!["simulate".into(), "strobe".into(), "--out".into(), out("strobe.csv")],
        vec!["simulate".into(), "map-detuning".into(), "--out".into(), out("md.csv")],
        vec!["simulate".into(), "map-amplitude".into(), "--out".into(), out("ma.csv")],
        vec!["simulate".into(), "polarization".into(), "--out".into(), out("pol.csv")],
        vec!["fit".into(), "lambdas".into(), "--out".into(), out("fit_mem.json")],
        vec!["fit".into(), "lambdas".into(), "--data".into(), ds.clone(), "--out".into(), out("fit_disk.json")],
        vec!["fit".into(), "peaks".into(), "--data".into(), out("cw.csv"), "--out".into(), out("peaks.json")],
        vec!["match".into(), "frequency".into(), "--out".into(), out("mf.json")],
        vec!["match".into(), "polarization".into(), "--out".into(), out("mp.json")],
        vec!["metrics".into(), "report".into(), "--out".into(), out("metrics.json")],
    ];
    commands
        .into_iter()
        .map(|mut a| {
            a.extend(["--config".to_string(), c.to_string()]);
            let args: Vec<&str> = a.iter().map(String::as_str).collect();
            (a[..2].join(" "), cli(&args))
        })
        .collect()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = vec![];
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub fn suite() -> SuiteResult {
    let mut f = Failures::default();
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();

    // determinism
    let config = root.join("ensemble.json");
    fs::write(&config, ENSEMBLE).unwrap();
    let (d1, d2) = (root.join("run1"), root.join("run2"));
    for d in [&d1, &d2] {
        fs::create_dir(d).unwrap();
        for (cmd, code) in run_all(&config, d) {
            f.fact("command succeeds", code == EXIT_OK, (&cmd, code));
        }
    }
    let (a, b) = (files(&d1), files(&d2));
    f.fact("same outputs produced", a.len() == b.len() && a.len() >= 24, (a.len(), b.len()));
    for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
        f.fact("byte-identical output", na == nb && ba == bb, na);
    }
    let reseeded = root.join("reseeded.json");
    fs::write(&reseeded, ENSEMBLE.replace("\"seed\": 7", "\"seed\": 8")).unwrap();
    let d3 = root.join("run3");
    let code = cli(&["simulate", "dataset", "--config", s(&reseeded), "--out", s(&d3)]);
    let differs = code == EXIT_OK && fs::read(d3.join("dataset.csv")).ok() != fs::read(d1.join("ds/dataset.csv")).ok();
    f.fact("seed changes noisy output", differs, code);

    // every emitted file is re-readable
    let readable = read_dataset_csv(fs::File::open(d1.join("ds/dataset.csv")).unwrap()).map(|d| d.len());
    f.fact("dataset re-read", matches!(readable, Ok(12)), &readable);
    for i in 1..=12 {
        let p = d1.join(format!("ds/polarization_nv{i:02}.csv"));
        f.fact("polarization re-read", read_polarization_csv(fs::File::open(&p).unwrap()).is_ok(), &p);
    }
    for name in ["cw.csv", "strobe.csv"] {
        f.fact("spectrum re-read", read_spectrum_csv(fs::File::open(d1.join(name)).unwrap()).is_ok(), name);
    }
    for (name, rows) in [("md.csv", 5), ("ma.csv", 4)] {
        let m = read_map_csv(fs::File::open(d1.join(name)).unwrap());
        f.fact("map re-read", m.as_ref().is_ok_and(|m| m.rows.len() == rows), name);
    }
    for name in ["fit_mem.json", "fit_disk.json", "peaks.json", "mf.json", "mp.json", "metrics.json"] {
        let v: Result<Value, _> = serde_json::from_str(&fs::read_to_string(d1.join(name)).unwrap());
        f.fact("json re-read", v.is_ok(), name);
    }

    // noiseless round trip through files recovers the constants
    let clean = root.join("clean.json");
    fs::write(&clean, r#"{"synthesis": {"ensemble": "reference"}}"#).unwrap();
    let dc = root.join("clean");
    let c1 = cli(&["simulate", "dataset", "--config", s(&clean), "--out", s(&dc)]);
    let c2 = cli(&["fit", "lambdas", "--config", s(&clean), "--data", s(&dc), "--out", s(&root.join("clean_fit.json"))]);
    f.fact("clean round trip runs", c1 == EXIT_OK && c2 == EXIT_OK, (c1, c2));
    if c2 == EXIT_OK {
        let v = json(&root.join("clean_fit.json"));
        let want = CouplingConstants::default().as_array();
        for (key, w) in ["lambda_a1", "lambda_a1p", "lambda_e", "lambda_ep"].iter().zip(want) {
            let got = v[format!("{key}_hz_per_strain")].as_f64().unwrap_or(f64::NAN);
            f.fact("file round trip recovers constants", close(got, w, 1e-6, 0.0), (key, got, w));
        }
    }

    // single site: spectrum -> peaks and polarization -> angle
    let single = root.join("single.json");
    fs::write(&single, SINGLE).unwrap();
    let cw = root.join("single_cw.csv");
    let peaks = root.join("single_peaks.json");
    let pol = root.join("single_pol.csv");
    let pol_fit = root.join("single_pol.json");
    let codes = [
        cli(&["simulate", "cw", "--config", s(&single), "--out", s(&cw)]),
        cli(&["fit", "peaks", "--config", s(&single), "--data", s(&cw), "--out", s(&peaks)]),
        cli(&["simulate", "polarization", "--config", s(&single), "--out", s(&pol)]),
        cli(&["fit", "polarization", "--config", s(&single), "--data", s(&pol), "--out", s(&pol_fit)]),
    ];
    f.fact("single-site commands run", codes.iter().all(|&c| c == EXIT_OK), codes);
    if codes.iter().all(|&c| c == EXIT_OK) {
        let v = json(&peaks);
        let mut centers: Vec<f64> = v["peaks"].as_array().unwrap().iter().map(|p| p["center_hz"].as_f64().unwrap()).collect();
        centers.sort_by(f64::total_cmp);
        // rest lines at δf_A1 ± Δf0/2
        let want = [1e9 - 3e9, 1e9 + 3e9];
        let ok = centers.len() == 2 && centers.iter().zip(want).all(|(c, w)| (c - w).abs() < 1e9 / 100.0);
        f.fact("fitted peaks sit at configured lines", ok, &centers);
        let theta = json(&pol_fit)["theta_deg"].as_f64().unwrap_or(f64::NAN);
        f.fact("polarization round trip recovers angle", (theta - 20.0).abs() < 1e-6, theta);
    }

    // rejection messages name the key and the constraint
    for (text, key, constraint) in [
        (r#"{"device": {"length_m": -1}}"#, "device.length_m", "> 0"),
        (r#"{"sites": [{"id": "a", "orientation": "-111", "linewidth_hz": 0}]}"#, "sites[0].linewidth_hz", "> 0"),
        (r#"{"sites": [{"id": "a", "orientation": "001"}]}"#, "sites[0].orientation", "expected one of"),
        (r#"{"laser": {"grid_hz": {"min": 0, "max": 1, "points": 1}}}"#, "laser.grid_hz.points", ">= 2"),
        (r#"{"poisson_ratio": 0.7}"#, "poisson_ratio", "(-1, 0.5)"),
        (r#"{"devise": {}}"#, "devise", "unknown field"),
        (r#"{"device": {"f_c_hz": 1e6, "q": 3}}"#, "q", "unknown field"),
    ] {
        let msg = RunConfig::from_json(text).map(|_| String::new()).unwrap_or_else(|e| e.to_string());
        f.fact("rejection names key and constraint", msg.contains(key) && msg.contains(constraint), (text, &msg));
        let p = root.join("bad.json");
        fs::write(&p, text).unwrap();
        let code = cli(&["metrics", "report", "--config", s(&p), "--out", s(&root.join("bad_out.json"))]);
        f.fact("bad config exits with config code", code == EXIT_CONFIG, (text, code));
    }

    f.finish()
}
