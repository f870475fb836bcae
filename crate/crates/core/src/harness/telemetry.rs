//! Per-round telemetry, its CSV form, and step-interpolated plot series.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTelemetry {
    pub trial: usize,
    pub round: usize,
    pub skipped: bool,
    pub g_depth: usize,
    pub s_n: usize,
    #[serde(serialize_with = "sig9")]
    pub gamma_eff: f64,
    pub active_count: usize,
    #[serde(serialize_with = "sig9")]
    pub alpha_sq_hat: f64,
    #[serde(serialize_with = "sig9")]
    pub v_sq_hat: f64,
    #[serde(serialize_with = "sig9")]
    pub mse_empirical: f64,
    #[serde(serialize_with = "sig9")]
    pub mse_closed_form: f64,
    #[serde(serialize_with = "sig9")]
    pub u_n: f64,
    #[serde(serialize_with = "sig9")]
    pub loss: f64,
    #[serde(serialize_with = "sig9")]
    pub accuracy: f64,
    pub cumulative_chips: u64,
    #[serde(serialize_with = "sig9")]
    pub power_spent: f64,
}

pub const TELEMETRY_HEADER: [&str; 16] = [
    "trial",
    "round",
    "skipped",
    "g_depth",
    "s_n",
    "gamma_eff",
    "active_count",
    "alpha_sq_hat",
    "v_sq_hat",
    "mse_empirical",
    "mse_closed_form",
    "u_n",
    "loss",
    "accuracy",
    "cumulative_chips",
    "power_spent",
];

/// Round to 9 significant digits, then print the shortest exact form.
pub fn format_sig9(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.8e}").parse().unwrap_or(x);
    format!("{rounded}")
}

fn sig9<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format_sig9(*x))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

pub fn write_telemetry<W: Write>(rows: &[RoundTelemetry], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(TELEMETRY_HEADER).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn telemetry_to_string(rows: &[RoundTelemetry]) -> Result<String> {
    let mut buf = Vec::new();
    write_telemetry(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

/// Read a telemetry CSV, rejecting any header that is not exactly ours.
pub fn read_telemetry<R: Read>(input: R) -> Result<Vec<RoundTelemetry>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(TELEMETRY_HEADER.iter().copied()) {
        return Err(Error::Parse(format!(
            "telemetry header mismatch: got [{}]",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub fn read_telemetry_file(path: impl AsRef<Path>) -> Result<Vec<RoundTelemetry>> {
    read_telemetry(std::fs::File::open(path)?)
}

/// One scheme's curve on a shared chip grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    pub chips: Vec<u64>,
    pub accuracy: Vec<f64>,
    pub loss: Vec<f64>,
}

/// Per-trial step function of `(chips, accuracy, loss)`; skipped rounds
/// send no chips and hold the previous values.
fn steps(rows: &[RoundTelemetry], trial: usize) -> Vec<(u64, f64, f64)> {
    let mut out: Vec<(u64, f64, f64)> = Vec::new();
    for r in rows.iter().filter(|r| r.trial == trial) {
        if r.skipped && !out.is_empty() {
            continue;
        }
        match out.last_mut() {
            Some(last) if last.0 == r.cumulative_chips => {
                last.1 = r.accuracy;
                last.2 = r.loss;
            }
            _ => out.push((r.cumulative_chips, r.accuracy, r.loss)),
        }
    }
    out
}

fn value_at(steps: &[(u64, f64, f64)], x: u64) -> (f64, f64) {
    match steps.partition_point(|s| s.0 <= x) {
        0 => (f64::NAN, f64::NAN),
        i => (steps[i - 1].1, steps[i - 1].2),
    }
}

/// Align tables on the union of their chip counts, averaging over trials.
pub fn plot_series(tables: &[(String, Vec<RoundTelemetry>)]) -> Result<Vec<PlotSeries>> {
    if tables.is_empty() {
        return Err(Error::config("plot data needs at least one telemetry table"));
    }
    let mut grid: Vec<u64> = tables
        .iter()
        .flat_map(|(_, rows)| rows.iter().map(|r| r.cumulative_chips))
        .collect();
    grid.sort_unstable();
    grid.dedup();
    tables
        .iter()
        .map(|(label, rows)| {
            if rows.is_empty() {
                return Err(Error::Parse(format!("telemetry table `{label}` is empty")));
            }
            let mut trials: Vec<usize> = rows.iter().map(|r| r.trial).collect();
            trials.sort_unstable();
            trials.dedup();
            let per_trial: Vec<_> = trials.iter().map(|&t| steps(rows, t)).collect();
            let mut accuracy = Vec::with_capacity(grid.len());
            let mut loss = Vec::with_capacity(grid.len());
            for &x in &grid {
                let (mut a, mut l) = (0.0, 0.0);
                for s in &per_trial {
                    let (sa, sl) = value_at(s, x);
                    a += sa;
                    l += sl;
                }
                accuracy.push(a / per_trial.len() as f64);
                loss.push(l / per_trial.len() as f64);
            }
            Ok(PlotSeries {
                label: label.clone(),
                chips: grid.clone(),
                accuracy,
                loss,
            })
        })
        .collect()
}

/// Write one `<label>.csv` per series into `dir`; returns the paths.
pub fn emit_plot_data(tables: &[(String, Vec<RoundTelemetry>)], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let series = plot_series(tables)?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for s in &series {
        let path = dir.join(format!("{}.csv", s.label));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(["cumulative_chips", "accuracy", "loss"]).map_err(csv_err)?;
        for i in 0..s.chips.len() {
            w.write_record([s.chips[i].to_string(), format_sig9(s.accuracy[i]), format_sig9(s.loss[i])])
                .map_err(csv_err)?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}
