//! CSV and JSON file formats.
//!
//! | file | header |
//! |------|--------|
//! | trace | `theta,stat` |
//! | unbinned dataset | `y` |
//! | grouped dataset | `x,cases,trials` |
//! | elbow table | `R,e_upcrossings,mc_err` |
//! | oracle table | `c,p_hat,mc_err` |
//! | Berman table | `tau,value` |
//! | ratio table | `c,sigma,R,ratio` |

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::bound::BoundReport;
use crate::diagnostics::ScoreCovariance;
use crate::error::{Result, TohmError};
use crate::grid::{ProcessTrace, ScanGrid};
use crate::models::{Events, GroupedBinomial};
use crate::montecarlo::EnsembleSummary;

fn format_err(path: &Path, message: impl Into<String>) -> TohmError {
    TohmError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> TohmError {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => TohmError::Io(io),
            _ => unreachable!(),
        },
        _ => format_err(path, e.to_string()),
    }
}

fn open_reader(path: &Path, expected: &[&str]) -> Result<csv::Reader<File>> {
    let file = File::open(path)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(format_err(
            path,
            format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        ));
    }
    Ok(rdr)
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, raw: &str) -> Result<T> {
    raw.parse::<T>()
        .map_err(|_| format_err(path, format!("line {line}: `{name}` value `{raw}` is not valid")))
}

fn records(path: &Path, expected: &[&str]) -> Result<Vec<(u64, Vec<String>)>> {
    let mut rdr = open_reader(path, expected)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    if out.is_empty() {
        return Err(format_err(path, "no data rows"));
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes serializable rows as CSV under `header`, which is written even
/// when there are no rows.
pub fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(create(path)?);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: &Path, expected: &[&str]) -> Result<Vec<T>> {
    let mut rdr = open_reader(path, expected)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec.map_err(|e| csv_err(path, e))?);
    }
    Ok(out)
}

pub fn write_trace(path: &Path, trace: &ProcessTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["theta", "stat"]).map_err(|e| csv_err(path, e))?;
    for (t, v) in trace.grid().points().iter().zip(trace.values()) {
        w.write_record([t.to_string(), v.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<ProcessTrace> {
    let rows = records(path, &["theta", "stat"])?;
    let mut thetas = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let t: f64 = parse_field(path, *line, "theta", &rec[0])?;
        let v: f64 = parse_field(path, *line, "stat", &rec[1])?;
        if !t.is_finite() || !v.is_finite() {
            return Err(format_err(path, format!("line {line}: values must be finite")));
        }
        thetas.push(t);
        values.push(v);
    }
    let grid = ScanGrid::from_points(thetas).map_err(|e| format_err(path, e.to_string()))?;
    ProcessTrace::new(grid, values).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_events(path: &Path, events: &Events) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "y")?;
    for y in events.values() {
        writeln!(w, "{y}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events(path: &Path) -> Result<Events> {
    let rows = records(path, &["y"])?;
    let mut ys = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let y: f64 = parse_field(path, *line, "y", &rec[0])?;
        if !(y.is_finite() && y > 0.0) {
            return Err(format_err(path, format!("line {line}: y must be a positive real")));
        }
        ys.push(y);
    }
    Events::new(ys).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_grouped(path: &Path, data: &GroupedBinomial) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "x,cases,trials")?;
    for i in 0..data.len() {
        writeln!(w, "{},{},{}", data.x[i], data.cases[i], data.trials[i])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grouped(path: &Path) -> Result<GroupedBinomial> {
    let rows = records(path, &["x", "cases", "trials"])?;
    let (mut x, mut cases, mut trials) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in &rows {
        x.push(parse_field::<f64>(path, *line, "x", &rec[0])?);
        cases.push(parse_field::<u64>(path, *line, "cases", &rec[1])?);
        trials.push(parse_field::<u64>(path, *line, "trials", &rec[2])?);
    }
    GroupedBinomial::new(x, cases, trials).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| format_err(path, e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))
}

pub fn read_ensemble_summary(path: &Path) -> Result<EnsembleSummary> {
    let s: EnsembleSummary = read_json(path)?;
    if s.n_replicates < 2 {
        return Err(format_err(path, "n_replicates must be >= 2"));
    }
    if !(s.e_upcrossings.is_finite() && s.e_upcrossings >= 0.0) {
        return Err(format_err(path, "e_upcrossings must be finite and >= 0"));
    }
    if !(s.mc_std_error.is_finite() && s.mc_std_error >= 0.0) {
        return Err(format_err(path, "mc_std_error must be finite and >= 0"));
    }
    if !s.c0.is_finite() {
        return Err(format_err(path, "c0 must be finite"));
    }
    Ok(s)
}

pub fn read_report(path: &Path) -> Result<BoundReport> {
    read_json(path)
}

/// Score correlation in long form `theta_i,theta_j,rho`.
pub fn write_covariance(path: &Path, cov: &ScoreCovariance) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "theta_i,theta_j,rho")?;
    let p = cov.grid.points();
    for i in 0..p.len() {
        for j in 0..p.len() {
            writeln!(w, "{},{},{}", p[i], p[j], cov.cov[(i, j)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Several traces in long form `path,theta,stat`.
pub fn write_paths(path: &Path, traces: &[ProcessTrace]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "path,theta,stat")?;
    for (k, t) in traces.iter().enumerate() {
        for (th, v) in t.grid().points().iter().zip(t.values()) {
            writeln!(w, "{k},{th},{v}")?;
        }
    }
    w.flush()?;
    Ok(())
}
