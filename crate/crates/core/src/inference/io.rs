//! Strain-scan and polarization-scan CSV files.
//!
//! Dataset: `site_id,group,eps,f_plus_hz,f_minus_hz,sigma_f_hz,sigma_eps`,
//! rows grouped into sites by first appearance.
//! Polarization: `phi_deg,pl_ex_kcps,pl_ey_kcps`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{NvDataset, PolarizationPoint, StrainScanPoint};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::nv_core::Group;

const DATASET_HEADER: [&str; 7] = [
    "site_id",
    "group",
    "eps",
    "f_plus_hz",
    "f_minus_hz",
    "sigma_f_hz",
    "sigma_eps",
];
const POLARIZATION_HEADER: [&str; 3] = ["phi_deg", "pl_ex_kcps", "pl_ey_kcps"];

#[derive(Debug, Deserialize)]
struct DatasetRow {
    site_id: String,
    group: Group,
    eps: f64,
    f_plus_hz: f64,
    f_minus_hz: f64,
    sigma_f_hz: f64,
    sigma_eps: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PolarizationRow {
    phi_deg: f64,
    pl_ex_kcps: f64,
    pl_ey_kcps: f64,
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::Parse(format!(
            "unexpected header '{}', expected '{}'",
            header.iter().collect::<Vec<_>>().join(","),
            expected.join(",")
        )));
    }
    Ok(())
}

pub fn write_dataset_csv<W: Write>(w: W, datasets: &[NvDataset]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(DATASET_HEADER)?;
    for d in datasets {
        for p in &d.points {
            wr.write_record([
                d.site_id.clone(),
                d.group.to_string(),
                fmt_f64(p.eps),
                fmt_f64(p.f_plus),
                fmt_f64(p.f_minus),
                fmt_f64(p.sigma_f),
                fmt_f64(p.sigma_eps),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Read a dataset file. Observed θ and Δf0 are not part of the format and
/// come back as `None`.
pub fn read_dataset_csv<R: Read>(r: R) -> Result<Vec<NvDataset>> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    check_header(&mut rd, &DATASET_HEADER)?;
    let mut out: Vec<NvDataset> = Vec::new();
    for row in rd.deserialize::<DatasetRow>() {
        let row = row?;
        let point = StrainScanPoint {
            eps: row.eps,
            f_plus: row.f_plus_hz,
            f_minus: row.f_minus_hz,
            sigma_f: row.sigma_f_hz,
            sigma_eps: row.sigma_eps,
        };
        match out.iter_mut().find(|d| d.site_id == row.site_id) {
            Some(d) if d.group != row.group => {
                return Err(Error::Parse(format!("site {} appears with two groups", row.site_id)));
            }
            Some(d) => d.points.push(point),
            None => out.push(NvDataset {
                site_id: row.site_id,
                group: row.group,
                points: vec![point],
                theta_obs: None,
                delta_f0_obs: None,
            }),
        }
    }
    for d in &out {
        d.validate()?;
    }
    Ok(out)
}

pub fn write_polarization_csv<W: Write>(w: W, points: &[PolarizationPoint]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(POLARIZATION_HEADER)?;
    for p in points {
        wr.write_record([fmt_f64(p.phi.to_degrees()), fmt_f64(p.pl_ex), fmt_f64(p.pl_ey)])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_polarization_csv<R: Read>(r: R) -> Result<Vec<PolarizationPoint>> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    check_header(&mut rd, &POLARIZATION_HEADER)?;
    rd.deserialize::<PolarizationRow>()
        .map(|row| {
            let row = row?;
            Ok(PolarizationPoint {
                phi: row.phi_deg.to_radians(),
                pl_ex: row.pl_ex_kcps,
                pl_ey: row.pl_ey_kcps,
            })
        })
        .collect()
}
