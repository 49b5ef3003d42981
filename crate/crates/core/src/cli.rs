//! `nvstrain` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! failure (fit, quadrature, unreachable target), 64 usage error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::inference::{
    fit_lambdas, fit_polarization, read_dataset_csv, read_polarization_csv, write_dataset_csv, write_polarization_csv,
    NvDataset, PolarizationFit, PolarizationPoint, PolarizationScan,
};
use crate::mechanics::DriveState;
use crate::metrics;
use crate::nv_core::{stuckelberg_angle, Group, SymmetryShifts};
use crate::optics::{match_polarization, saturated_intensity};
use crate::spectra::{
    amplitude_map, cw_spectrum, drive_detuning_map, fit_lorentzian_peaks, match_frequency, read_spectrum_csv,
    strobe_spectrum, write_map_csv, write_spectrum_csv, Antinode, Branch,
};
use crate::synth::{synthesize_dataset, SyntheticData};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "NVSTRAIN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "nvstrain", version, about = "NV excited-state strain coupling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate spectra, maps and synthetic datasets.
    #[command(subcommand)]
    Simulate(Simulate),
    /// Fit models to measured or synthetic data.
    #[command(subcommand)]
    Fit(Fit),
    /// Find drive settings that reach a target frequency or dipole angle.
    #[command(subcommand)]
    Match(Match),
    /// Optomechanical figures of merit.
    #[command(subcommand)]
    Metrics(Metrics),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output file (directory for `simulate dataset`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SiteArgs {
    #[command(flatten)]
    common: Common,
    /// Site id; defaults to `matching.site` or the first site.
    #[arg(long)]
    site: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Simulate {
    /// Time-averaged spectrum under the configured drive.
    Cw(SiteArgs),
    /// Stroboscopically gated spectrum.
    Strobe(SiteArgs),
    /// Spectra versus piezo drive frequency.
    MapDetuning(SiteArgs),
    /// Spectra versus resonant tip amplitude.
    MapAmplitude(SiteArgs),
    /// PL of both transitions versus laser polarization, at rest.
    Polarization(SiteArgs),
    /// Strain scans and polarization scans for every site.
    Dataset(Common),
}

#[derive(Debug, Args)]
struct DataArgs {
    #[command(flatten)]
    common: Common,
    /// Input data file or directory.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Fit {
    /// Extract the four coupling constants and per-site intrinsic strain.
    Lambdas(DataArgs),
    /// Fit θ, P_sat, ψ to a polarization scan.
    Polarization(DataArgs),
    /// Fit one or two Lorentzians to a spectrum.
    Peaks {
        #[command(flatten)]
        args: DataArgs,
        #[arg(long, default_value_t = 2)]
        peaks: usize,
    },
}

#[derive(Debug, Subcommand)]
enum Match {
    /// Deflection at which a transition reaches `matching.target_hz`.
    Frequency(SiteArgs),
    /// Deflection at which the dipoles reach `matching.target_theta_deg`.
    Polarization(SiteArgs),
}

#[derive(Debug, Subcommand)]
enum Metrics {
    /// Coupling, cooperativity and cooling figures for `metrics`.
    Report(Common),
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                EXIT_NUMERIC
            } else {
                EXIT_CONFIG
            }
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV}: expected a positive integer, got '{value}'")))?;
    // a pool may already exist when run() is called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(s) => simulate(s),
        Command::Fit(f) => fit(f),
        Command::Match(m) => matching(m),
        Command::Metrics(Metrics::Report(c)) => {
            let cfg = RunConfig::load(&c.config)?;
            let p = cfg.proposal()?;
            let report = metrics::report(&p, cfg.metrics.coupling_mode)?;
            write_json(&c.out, &report)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        Error::Config(format!("cannot create {}: {e}", path.display()))
    })?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))
}

fn drive_state(cfg: &RunConfig) -> Result<DriveState> {
    let mode = cfg.mode()?;
    match cfg.drive.f_piezo_hz {
        Some(f) => DriveState::new(mode, f),
        None if cfg.drive.x_c_m == 0.0 => Ok(DriveState::undriven(mode)),
        None => DriveState::resonant(mode, cfg.drive.x_c_m),
    }
}

fn simulate(cmd: Simulate) -> Result<()> {
    match cmd {
        Simulate::Cw(a) => {
            let cfg = RunConfig::load(&a.common.config)?;
            let site = cfg.selected_site(a.site.as_deref())?;
            let spec = cw_spectrum(&site, &cfg.model()?, &drive_state(&cfg)?, cfg.intensity()?, &cfg.laser_grid()?)?;
            write_spectrum_csv(create(&a.common.out)?, &spec)
        }
        Simulate::Strobe(a) => {
            let cfg = RunConfig::load(&a.common.config)?;
            let site = cfg.selected_site(a.site.as_deref())?;
            let drive = drive_state(&cfg)?;
            let window = cfg.strobe_window(drive.period())?;
            let spec = strobe_spectrum(
                &site,
                &cfg.model()?,
                &drive,
                cfg.intensity()?,
                &window,
                &cfg.laser_grid()?,
            )?;
            write_spectrum_csv(create(&a.common.out)?, &spec)
        }
        Simulate::MapDetuning(a) => {
            let cfg = RunConfig::load(&a.common.config)?;
            let site = cfg.selected_site(a.site.as_deref())?;
            let sweep = cfg
                .drive
                .piezo_sweep_hz
                .ok_or_else(|| Error::Config("drive.piezo_sweep_hz: required for map-detuning".into()))?
                .to_grid("drive.piezo_sweep_hz")?;
            let map = drive_detuning_map(
                &site,
                &cfg.model()?,
                &cfg.mode()?,
                cfg.intensity()?,
                &sweep,
                &cfg.laser_grid()?,
            )?;
            write_map_csv(create(&a.common.out)?, &map)
        }
        Simulate::MapAmplitude(a) => {
            let cfg = RunConfig::load(&a.common.config)?;
            let site = cfg.selected_site(a.site.as_deref())?;
            let sweep = cfg
                .drive
                .amplitude_sweep_m
                .ok_or_else(|| Error::Config("drive.amplitude_sweep_m: required for map-amplitude".into()))?
                .to_grid("drive.amplitude_sweep_m")?;
            let map = amplitude_map(
                &site,
                &cfg.model()?,
                &cfg.mode()?,
                cfg.intensity()?,
                &sweep,
                &cfg.laser_grid()?,
            )?;
            write_map_csv(create(&a.common.out)?, &map)
        }
        Simulate::Polarization(a) => {
            let cfg = RunConfig::load(&a.common.config)?;
            let site = cfg.selected_site(a.site.as_deref())?;
            let pol = cfg.polarization()?;
            let theta = stuckelberg_angle(&site.intrinsic, &SymmetryShifts::default())?;
            let n = cfg.synthesis.polarization_points;
            let points: Vec<PolarizationPoint> = (0..n)
                .map(|k| {
                    let phi = k as f64 * std::f64::consts::PI / n as f64;
                    let d = saturated_intensity(site.orientation.group(), theta, &pol.with_phi(phi));
                    PolarizationPoint {
                        phi,
                        pl_ex: site.pl_scale * d.i_ex,
                        pl_ey: site.pl_scale * d.i_ey,
                    }
                })
                .collect();
            write_polarization_csv(create(&a.common.out)?, &points)
        }
        Simulate::Dataset(c) => {
            let cfg = RunConfig::load(&c.config)?;
            let data = synthesize(&cfg)?;
            std::fs::create_dir_all(&c.out)
                .map_err(|e| Error::Config(format!("cannot create {}: {e}", c.out.display())))?;
            write_dataset_files(&c.out, &data)
        }
    }
}

fn synthesize(cfg: &RunConfig) -> Result<SyntheticData> {
    synthesize_dataset(&cfg.sites()?, &cfg.model()?, &cfg.synthesis_plan()?, &cfg.noise()?, cfg.seed)
}

pub const DATASET_FILE: &str = "dataset.csv";

pub fn polarization_file(site_id: &str) -> String {
    format!("polarization_{site_id}.csv")
}

/// `dataset.csv` plus one `polarization_<id>.csv` per site.
pub fn write_dataset_files(dir: &Path, data: &SyntheticData) -> Result<()> {
    write_dataset_csv(create(&dir.join(DATASET_FILE))?, &data.datasets)?;
    for (d, scan) in data.datasets.iter().zip(&data.polarization) {
        write_polarization_csv(create(&dir.join(polarization_file(&d.site_id)))?, &scan.points)?;
    }
    Ok(())
}

/// Read a dataset (file, or directory holding `dataset.csv`) and attach
/// each site's observed dipole angle from its polarization scan.
pub fn load_observed(path: &Path, p_in: f64) -> Result<(Vec<NvDataset>, Vec<PolarizationFit>)> {
    let (file, dir) = if path.is_dir() {
        (path.join(DATASET_FILE), path.to_path_buf())
    } else {
        (
            path.to_path_buf(),
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
        )
    };
    let mut datasets = read_dataset_csv(open(&file)?)?;
    let mut scans = Vec::with_capacity(datasets.len());
    for d in &datasets {
        let pol_path = dir.join(polarization_file(&d.site_id));
        let points = read_polarization_csv(open(&pol_path)?)?;
        scans.push(PolarizationScan {
            group: d.group,
            p_in,
            points,
        });
    }
    let fits = observe_angles(&mut datasets, &scans)?;
    Ok((datasets, fits))
}

fn observe_angles(datasets: &mut [NvDataset], scans: &[PolarizationScan]) -> Result<Vec<PolarizationFit>> {
    let mut fits = Vec::with_capacity(datasets.len());
    for (d, scan) in datasets.iter_mut().zip(scans) {
        let fit = fit_polarization(scan)?;
        d.theta_obs = Some(fit.theta);
        fits.push(fit);
    }
    Ok(fits)
}

#[derive(Serialize)]
struct SiteReport<'a> {
    site_id: &'a str,
    group: Group,
    offset_hz: f64,
    df_a1_hz: f64,
    df_e1_hz: f64,
    df_e2_hz: f64,
    theta_obs_deg: Option<f64>,
    p_sat_w: Option<f64>,
    psi_deg: Option<f64>,
}

#[derive(Serialize)]
struct LambdaReport<'a> {
    lambda_a1_hz_per_strain: f64,
    lambda_a1p_hz_per_strain: f64,
    lambda_e_hz_per_strain: f64,
    lambda_ep_hz_per_strain: f64,
    statistical_sigma_hz_per_strain: [f64; 4],
    fractional_uncertainty: [f64; 4],
    calibration_fraction: f64,
    lambda_ep_identifiable: bool,
    converged: bool,
    e_fit_iterations: usize,
    common_mode_residual_norm: f64,
    e_fit_residual_norm: f64,
    sites: Vec<SiteReport<'a>>,
}

fn fit(cmd: Fit) -> Result<()> {
    match cmd {
        Fit::Lambdas(a) => {
            let cfg = RunConfig::load(&a.common.config)?;
            let p_in = cfg.polarization()?.p_in;
            let (datasets, pol_fits) = match &a.data {
                Some(path) => load_observed(path, p_in)?,
                None => {
                    let data = synthesize(&cfg)?;
                    let mut datasets = data.datasets;
                    let fits = observe_angles(&mut datasets, &data.polarization)?;
                    for d in &mut datasets {
                        d.delta_f0_obs = None;
                    }
                    (datasets, fits)
                }
            };
            let fit = fit_lambdas(&datasets, &cfg.fit_options()?)?;
            let report = LambdaReport {
                lambda_a1_hz_per_strain: fit.constants.lambda_a1,
                lambda_a1p_hz_per_strain: fit.constants.lambda_a1p,
                lambda_e_hz_per_strain: fit.constants.lambda_e,
                lambda_ep_hz_per_strain: fit.constants.lambda_ep,
                statistical_sigma_hz_per_strain: fit.statistical_sigma,
                fractional_uncertainty: fit.fractional_uncertainty,
                calibration_fraction: fit.calibration_fraction,
                lambda_ep_identifiable: fit.lambda_ep_identifiable,
                converged: fit.converged,
                e_fit_iterations: fit.e_fit_iterations,
                common_mode_residual_norm: fit.common_mode_residual_norm,
                e_fit_residual_norm: fit.e_fit_residual_norm,
                sites: fit
                    .sites
                    .iter()
                    .zip(&datasets)
                    .zip(&pol_fits)
                    .map(|((s, d), p)| SiteReport {
                        site_id: &s.site_id,
                        group: s.group,
                        offset_hz: s.offset_hz,
                        df_a1_hz: s.intrinsic.df_a1,
                        df_e1_hz: s.intrinsic.df_e1,
                        df_e2_hz: s.intrinsic.df_e2,
                        theta_obs_deg: d.theta_obs.map(f64::to_degrees),
                        p_sat_w: Some(p.p_sat),
                        psi_deg: Some(p.psi.to_degrees()),
                    })
                    .collect(),
            };
            write_json(&a.common.out, &report)
        }
        Fit::Polarization(a) => {
            let cfg = RunConfig::load(&a.common.config)?;
            let path = a
                .data
                .ok_or_else(|| Error::Config("--data: polarization CSV required".into()))?;
            let scan = PolarizationScan {
                group: cfg.fit.group,
                p_in: cfg.polarization()?.p_in,
                points: read_polarization_csv(open(&path)?)?,
            };
            let fit = fit_polarization(&scan)?;
            #[derive(Serialize)]
            struct Out {
                group: Group,
                theta_deg: f64,
                sigma_theta_deg: f64,
                p_sat_w: f64,
                sigma_p_sat_w: f64,
                psi_deg: f64,
                sigma_psi_deg: f64,
                scale_kcps: f64,
                sigma_scale_kcps: f64,
                residual_norm_kcps: f64,
            }
            write_json(
                &a.common.out,
                &Out {
                    group: scan.group,
                    theta_deg: fit.theta.to_degrees(),
                    sigma_theta_deg: fit.sigma_theta.to_degrees(),
                    p_sat_w: fit.p_sat,
                    sigma_p_sat_w: fit.sigma_p_sat,
                    psi_deg: fit.psi.to_degrees(),
                    sigma_psi_deg: fit.sigma_psi.to_degrees(),
                    scale_kcps: fit.scale,
                    sigma_scale_kcps: fit.sigma_scale,
                    residual_norm_kcps: fit.residual_norm,
                },
            )
        }
        Fit::Peaks { args, peaks } => {
            RunConfig::load(&args.common.config)?;
            let path = args
                .data
                .ok_or_else(|| Error::Config("--data: spectrum CSV required".into()))?;
            let spec = read_spectrum_csv(open(&path)?)?;
            let r = fit_lorentzian_peaks(&spec, peaks)?;
            #[derive(Serialize)]
            struct Peak {
                center_hz: f64,
                sigma_center_hz: f64,
                fwhm_hz: f64,
                sigma_fwhm_hz: f64,
                amplitude_kcps: f64,
                sigma_amplitude_kcps: f64,
            }
            #[derive(Serialize)]
            struct Out {
                peaks: Vec<Peak>,
                background_kcps: f64,
                residual_norm_kcps: f64,
                degenerate: bool,
            }
            write_json(
                &args.common.out,
                &Out {
                    peaks: r
                        .peaks
                        .iter()
                        .map(|p| Peak {
                            center_hz: p.center,
                            sigma_center_hz: p.sigma_center,
                            fwhm_hz: p.fwhm,
                            sigma_fwhm_hz: p.sigma_fwhm,
                            amplitude_kcps: p.amplitude,
                            sigma_amplitude_kcps: p.sigma_amplitude,
                        })
                        .collect(),
                    background_kcps: r.background,
                    residual_norm_kcps: r.residual_norm,
                    degenerate: r.degenerate,
                },
            )
        }
    }
}

fn antinode_name(a: Antinode) -> &'static str {
    match a {
        Antinode::Upper => "upper",
        Antinode::Lower => "lower",
    }
}

fn matching(cmd: Match) -> Result<()> {
    match cmd {
        Match::Frequency(a) => {
            let cfg = RunConfig::load(&a.common.config)?;
            let site = cfg.selected_site(a.site.as_deref())?;
            let target = cfg
                .matching
                .target_hz
                .ok_or_else(|| Error::Config("matching.target_hz: required for match frequency".into()))?;
            let branch = cfg.branch();
            let m = match_frequency(&site, &cfg.model()?, branch, target, cfg.matching.x_limit_m)?;
            #[derive(Serialize)]
            struct Out<'a> {
                site: &'a str,
                branch: &'static str,
                target_hz: f64,
                deflection_m: f64,
                amplitude_m: f64,
                antinode: &'static str,
                f_plus_hz: f64,
                f_minus_hz: f64,
            }
            write_json(
                &a.common.out,
                &Out {
                    site: &site.id,
                    branch: match branch {
                        Branch::Plus => "plus",
                        Branch::Minus => "minus",
                    },
                    target_hz: target,
                    deflection_m: m.deflection,
                    amplitude_m: m.deflection.abs(),
                    antinode: antinode_name(m.antinode),
                    f_plus_hz: m.transitions.plus,
                    f_minus_hz: m.transitions.minus,
                },
            )
        }
        Match::Polarization(a) => {
            let cfg = RunConfig::load(&a.common.config)?;
            let site = cfg.selected_site(a.site.as_deref())?;
            let target = cfg.matching.target_theta_deg.ok_or_else(|| {
                Error::Config("matching.target_theta_deg: required for match polarization".into())
            })?;
            let model = cfg.model()?;
            let m = match_polarization(target.to_radians(), &site, &model)?;
            let reached = site.theta_at(&model, m.deflection)?;
            #[derive(Serialize)]
            struct Out<'a> {
                site: &'a str,
                target_theta_deg: f64,
                reached_theta_deg: f64,
                deflection_m: f64,
                amplitude_m: f64,
                antinode: &'static str,
                e1_shift_hz: f64,
                e2_shift_hz: f64,
            }
            write_json(
                &a.common.out,
                &Out {
                    site: &site.id,
                    target_theta_deg: target,
                    reached_theta_deg: reached.to_degrees(),
                    deflection_m: m.deflection,
                    amplitude_m: m.amplitude,
                    antinode: antinode_name(m.antinode),
                    e1_shift_hz: m.shifts.e1,
                    e2_shift_hz: m.shifts.e2,
                },
            )
        }
    }
}
