//! Spectrum and map CSV files.
//!
//! Spectrum: header `detuning_hz,signal_kcps`, one row per sample.
//! Map: one block per row value, each opened by `# piezo_hz=<v>` or
//! `# xc_m=<v>` followed by a spectrum header and its rows.
//! Values are written with 17 significant digits so files round-trip
//! bit-exactly.

use std::io::{BufRead, BufReader, Read, Write};

use super::{MapAxis, Spectrum, SpectrumMap, SpectrumMeta};
use crate::error::{Error, Result};
use crate::fmt_f64;

const SPECTRUM_HEADER: &str = "detuning_hz,signal_kcps";

pub fn write_spectrum_csv<W: Write>(mut w: W, spec: &Spectrum) -> Result<()> {
    writeln!(w, "{SPECTRUM_HEADER}")?;
    for (f, s) in spec.detunings.iter().zip(&spec.signal) {
        writeln!(w, "{},{}", fmt_f64(*f), fmt_f64(*s))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_row(line: &str, lineno: usize) -> Result<(f64, f64)> {
    let mut it = line.split(',');
    let mut next = |what: &str| -> Result<f64> {
        let field = it
            .next()
            .ok_or_else(|| Error::Parse(format!("line {lineno}: missing {what}")))?;
        field
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("line {lineno}: bad {what} '{field}': {e}")))
    };
    let f = next("detuning_hz")?;
    let s = next("signal_kcps")?;
    if it.next().is_some() {
        return Err(Error::Parse(format!("line {lineno}: expected 2 columns")));
    }
    Ok((f, s))
}

pub fn read_spectrum_csv<R: Read>(r: R) -> Result<Spectrum> {
    let mut lines = BufReader::new(r).lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == SPECTRUM_HEADER => {}
        Some((_, Ok(h))) => return Err(Error::Parse(format!("unexpected header '{h}'"))),
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(Error::Parse("empty spectrum file".into())),
    }
    let mut det = Vec::new();
    let mut sig = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (f, s) = parse_row(&line, i + 1)?;
        det.push(f);
        sig.push(s);
    }
    Spectrum::new(det, sig, SpectrumMeta::default())
}

pub fn write_map_csv<W: Write>(mut w: W, map: &SpectrumMap) -> Result<()> {
    for (value, row) in map.row_values.iter().zip(&map.rows) {
        writeln!(w, "# {}={}", map.axis.key(), fmt_f64(*value))?;
        writeln!(w, "{SPECTRUM_HEADER}")?;
        for (f, s) in map.detunings.iter().zip(row) {
            writeln!(w, "{},{}", fmt_f64(*f), fmt_f64(*s))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_map_csv<R: Read>(r: R) -> Result<SpectrumMap> {
    let mut axis: Option<MapAxis> = None;
    let mut row_values = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut detunings: Option<Vec<f64>> = None;
    let mut current: Vec<f64> = Vec::new();
    let mut current_det: Vec<f64> = Vec::new();

    let mut finish = |det: &mut Vec<f64>, cur: &mut Vec<f64>, rows: &mut Vec<Vec<f64>>| -> Result<()> {
        match &detunings {
            None => detunings = Some(std::mem::take(det)),
            Some(d) if d == det => det.clear(),
            Some(_) => return Err(Error::Parse("map blocks use different detuning grids".into())),
        }
        rows.push(std::mem::take(cur));
        Ok(())
    };

    let mut in_block = false;
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('#') {
            let (key, value) = rest
                .trim()
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: malformed block comment", i + 1)))?;
            let this_axis = match key.trim() {
                "piezo_hz" => MapAxis::PiezoHz,
                "xc_m" => MapAxis::XcM,
                other => return Err(Error::Parse(format!("line {}: unknown block key '{other}'", i + 1))),
            };
            if axis.is_some_and(|a| a != this_axis) {
                return Err(Error::Parse(format!("line {}: mixed block keys", i + 1)));
            }
            axis = Some(this_axis);
            if in_block {
                finish(&mut current_det, &mut current, &mut rows)?;
            }
            in_block = true;
            row_values.push(
                value
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?,
            );
            continue;
        }
        if t == SPECTRUM_HEADER {
            continue;
        }
        if !in_block {
            return Err(Error::Parse(format!("line {}: data before first block comment", i + 1)));
        }
        let (f, s) = parse_row(t, i + 1)?;
        current_det.push(f);
        current.push(s);
    }
    if in_block {
        finish(&mut current_det, &mut current, &mut rows)?;
    }
    let axis = axis.ok_or_else(|| Error::Parse("map file has no blocks".into()))?;
    let detunings = detunings.unwrap_or_default();
    super::check_grid(&detunings)?;
    Ok(SpectrumMap {
        axis,
        row_values,
        detunings,
        rows,
    })
}
