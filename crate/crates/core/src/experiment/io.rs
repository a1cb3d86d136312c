//! On-disk layout of a run directory:
//!
//! * `series.csv`: header `t,avg_x,energy,norm,max_entropy`, one row per step;
//! * `snapshot_t<T>.csv`: `height` rows of `width` comma-separated `<X_r>`,
//!   row `y` holding `x = 0..width`, `<T>` printed with three decimals;
//! * `observables.csv`: header `t,<label>...` when observables are configured;
//! * `local_x.csv`: header `t,x_<x>_<y>...` when `record_local` is set;
//! * `result.json`: everything else, with pointers to the files above.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a run
//! back gives bit-identical values.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::run::{Fate, ObservableSeries, Provenance, QuenchResult, Snapshot};
use super::QuenchConfig;
use crate::error::{Error, Result};
use crate::shapes::ShapeStats;
use crate::tdvp::{Sample, StepStats};

pub const SERIES_HEADER: [&str; 5] = ["t", "avg_x", "energy", "norm", "max_entropy"];
pub const RESULT_FILE: &str = "result.json";
const SERIES_FILE: &str = "series.csv";
const OBSERVABLES_FILE: &str = "observables.csv";
const LOCAL_FILE: &str = "local_x.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRef {
    pub t: f64,
    pub file: String,
}

/// Contents of `result.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultMeta {
    pub config: QuenchConfig,
    pub shape: ShapeStats,
    pub fate: Fate,
    pub window_mean: Option<f64>,
    pub provenance: Provenance,
    pub krylov: Option<StepStats>,
    pub failure: Option<String>,
    pub series_file: String,
    pub snapshots: Vec<SnapshotRef>,
    pub observables_file: Option<String>,
    pub local_file: Option<String>,
}

fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn parse_f64(s: &str, path: &Path) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{}: cannot parse {s:?} as a number", path.display())))
}

pub fn snapshot_file_name(t: f64) -> String {
    format!("snapshot_t{t:.3}.csv")
}

fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.into_iter().map(fmt_f64))?;
    }
    w.flush()?;
    Ok(())
}

/// Header and numeric rows; every row must match the header width.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Config(format!(
                "{}: row has {} fields, header has {}",
                path.display(),
                rec.len(),
                header.len()
            )));
        }
        rows.push(rec.iter().map(|s| parse_f64(s, path)).collect::<Result<Vec<_>>>()?);
    }
    Ok((header, rows))
}

pub fn write_series_csv(path: &Path, series: &[Sample]) -> Result<()> {
    let header: Vec<String> = SERIES_HEADER.iter().map(|s| s.to_string()).collect();
    write_table(
        path,
        &header,
        series.iter().map(|s| vec![s.t, s.avg_x, s.energy, s.norm, s.max_entropy]),
    )
}

pub fn read_series_csv(path: &Path) -> Result<Vec<Sample>> {
    let (header, rows) = read_table(path)?;
    if header != SERIES_HEADER {
        return Err(Error::Config(format!(
            "{}: expected header {}, found {}",
            path.display(),
            SERIES_HEADER.join(","),
            header.join(",")
        )));
    }
    Ok(rows
        .into_iter()
        .map(|r| Sample {
            t: r[0],
            avg_x: r[1],
            energy: r[2],
            norm: r[3],
            max_entropy: r[4],
        })
        .collect())
}

pub fn write_snapshot_csv(path: &Path, snap: &Snapshot) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in snap.values.chunks(snap.width) {
        w.write_record(row.iter().map(|&v| fmt_f64(v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a snapshot grid; `t` is not stored in the file and must be supplied.
pub fn read_snapshot_csv(path: &Path, t: f64) -> Result<Snapshot> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    for rec in r.records() {
        let rec = rec?;
        if *width.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Config(format!("{}: ragged snapshot rows", path.display())));
        }
        for s in rec.iter() {
            values.push(parse_f64(s, path)?);
        }
        height += 1;
    }
    Ok(Snapshot {
        t,
        width: width.unwrap_or(0),
        height,
        values,
    })
}

pub fn write_observables_csv(path: &Path, times: &[f64], obs: &[ObservableSeries]) -> Result<()> {
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(obs.iter().map(|o| o.label.clone()))
        .collect();
    write_table(
        path,
        &header,
        times
            .iter()
            .enumerate()
            .map(|(k, &t)| std::iter::once(t).chain(obs.iter().map(|o| o.values[k])).collect()),
    )
}

pub fn read_observables_csv(path: &Path) -> Result<(Vec<f64>, Vec<ObservableSeries>)> {
    let (header, rows) = read_table(path)?;
    if header.first().map(String::as_str) != Some("t") {
        return Err(Error::Config(format!("{}: first column must be t", path.display())));
    }
    let times = rows.iter().map(|r| r[0]).collect();
    let obs = header[1..]
        .iter()
        .enumerate()
        .map(|(j, label)| ObservableSeries {
            label: label.clone(),
            values: rows.iter().map(|r| r[j + 1]).collect(),
        })
        .collect();
    Ok((times, obs))
}

pub fn write_local_csv(path: &Path, width: usize, times: &[f64], local: &[Vec<f64>]) -> Result<()> {
    let n = local.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..n).map(|s| format!("x_{}_{}", s % width, s / width)))
        .collect();
    write_table(
        path,
        &header,
        times
            .iter()
            .zip(local)
            .map(|(&t, row)| std::iter::once(t).chain(row.iter().copied()).collect()),
    )
}

pub fn read_local_csv(path: &Path) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (_, rows) = read_table(path)?;
    Ok(rows.into_iter().map(|r| (r[0], r[1..].to_vec())).unzip())
}

/// Writes every file of a run into `dir`, creating it if needed.
pub fn write_result(dir: &Path, res: &QuenchResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_series_csv(&dir.join(SERIES_FILE), &res.series)?;
    let mut snapshots = Vec::new();
    for snap in &res.snapshots {
        let file = snapshot_file_name(snap.t);
        write_snapshot_csv(&dir.join(&file), snap)?;
        snapshots.push(SnapshotRef { t: snap.t, file });
    }
    let times = res.times();
    let observables_file = if res.observables.is_empty() {
        None
    } else {
        write_observables_csv(&dir.join(OBSERVABLES_FILE), &times, &res.observables)?;
        Some(OBSERVABLES_FILE.to_string())
    };
    let local_file = if res.local_x.is_empty() {
        None
    } else {
        write_local_csv(&dir.join(LOCAL_FILE), res.config.lattice.width, &times, &res.local_x)?;
        Some(LOCAL_FILE.to_string())
    };
    let meta = ResultMeta {
        config: res.config.clone(),
        shape: res.shape.clone(),
        fate: res.fate,
        window_mean: res.window_mean,
        provenance: res.provenance.clone(),
        krylov: res.krylov,
        failure: res.failure.clone(),
        series_file: SERIES_FILE.to_string(),
        snapshots,
        observables_file,
        local_file,
    };
    let f = File::create(dir.join(RESULT_FILE))?;
    serde_json::to_writer_pretty(f, &meta)?;
    Ok(())
}

pub fn read_result(dir: &Path) -> Result<QuenchResult> {
    let meta: ResultMeta = serde_json::from_reader(File::open(dir.join(RESULT_FILE))?)?;
    let series = read_series_csv(&dir.join(&meta.series_file))?;
    let snapshots = meta
        .snapshots
        .iter()
        .map(|s| read_snapshot_csv(&dir.join(&s.file), s.t))
        .collect::<Result<Vec<_>>>()?;
    let observables = match &meta.observables_file {
        Some(f) => read_observables_csv(&dir.join(f))?.1,
        None => Vec::new(),
    };
    let local_x = match &meta.local_file {
        Some(f) => read_local_csv(&dir.join(f))?.1,
        None => Vec::new(),
    };
    Ok(QuenchResult {
        config: meta.config,
        shape: meta.shape,
        series,
        snapshots,
        observables,
        local_x,
        fate: meta.fate,
        window_mean: meta.window_mean,
        provenance: meta.provenance,
        krylov: meta.krylov,
        failure: meta.failure,
    })
}

/// Writes a scan summary to `dir/<name>.json` and returns the path.
pub fn write_scan<T: Serialize>(dir: &Path, name: &str, scan: &T) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.json"));
    serde_json::to_writer_pretty(File::create(&path)?, scan)?;
    Ok(path)
}

pub fn read_scan<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}
