//! Parameter scans. Each scan expands a base config into independent
//! `run_quench` jobs, runs them on a thread pool and reduces the results.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::run::{classify_fate, run_quench, Fate, QuenchResult};
use super::{steps_for, ObservableSpec, QuenchConfig};
use crate::error::{Error, Result};
use crate::lattice::Coord;
use crate::shapes::{CatalogEntry, Patch, ShapeKind, ShapeMask, ShapeSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct ScanOptions {
    /// Worker threads; 0 means one per core.
    pub jobs: usize,
    /// Per-job results go to `out_dir/<job>` when set.
    pub out_dir: Option<PathBuf>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { jobs: 1, out_dir: None }
    }
}

fn job_name(parts: &[String]) -> String {
    parts
        .join("_")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn run_jobs(jobs: Vec<(String, QuenchConfig)>, opts: &ScanOptions) -> Result<Vec<QuenchResult>> {
    let configs: Vec<QuenchConfig> = jobs
        .into_iter()
        .map(|(name, mut c)| {
            c.run.out_dir = opts.out_dir.as_ref().map(|d| d.join(name));
            c
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| configs.par_iter().map(run_quench).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeScanRow {
    #[serde(rename = "L")]
    pub side: usize,
    pub fate: Fate,
    pub window_mean: Option<f64>,
    pub area: usize,
    #[serde(rename = "P_b")]
    pub bond_perimeter: usize,
    #[serde(rename = "P_s")]
    pub site_perimeter: usize,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeScan {
    pub h_perp: f64,
    pub h_par: f64,
    pub t_max: f64,
    pub rows: Vec<SizeScanRow>,
    /// Shrinking for every size below some L and Expanding from L on.
    pub monotone: bool,
    /// Smallest expanding side, reported only for a monotone table with at
    /// least one size of each fate.
    #[serde(rename = "L_c")]
    pub critical_size: Option<usize>,
}

/// Index of the first Expanding entry when the sequence is Shrinking* then
/// Expanding*, else `None`.
fn monotone_split(fates: &[Fate]) -> Option<usize> {
    let k = fates.iter().take_while(|&&f| f == Fate::Shrinking).count();
    fates[k..].iter().all(|&f| f == Fate::Expanding).then_some(k)
}

/// Square bubbles of each side in `sizes`, centered where the base shape is.
pub fn critical_size_scan(base: &QuenchConfig, sizes: &[usize], opts: &ScanOptions) -> Result<SizeScan> {
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let jobs = sizes
        .iter()
        .map(|&l| {
            let mut c = base.clone();
            c.shape = ShapeSpec {
                center_x: base.shape.center_x,
                center_y: base.shape.center_y,
                ..ShapeSpec::square(l)
            };
            (job_name(&[format!("L{l}")]), c)
        })
        .collect();
    let results = run_jobs(jobs, opts)?;
    let rows: Vec<SizeScanRow> = sizes
        .iter()
        .zip(&results)
        .map(|(&side, r)| SizeScanRow {
            side,
            fate: r.fate,
            window_mean: r.window_mean,
            area: r.shape.area,
            bond_perimeter: r.shape.bond_perimeter,
            site_perimeter: r.shape.site_perimeter,
            failure: r.failure.clone(),
        })
        .collect();
    let fates: Vec<Fate> = rows.iter().map(|r| r.fate).collect();
    let split = monotone_split(&fates);
    let critical_size = split.filter(|&k| k > 0 && k < rows.len()).map(|k| rows[k].side);
    Ok(SizeScan {
        h_perp: base.hamiltonian.h_perp,
        h_par: base.hamiltonian.h_par,
        t_max: base.run.t_max,
        rows,
        monotone: split.is_some(),
        critical_size,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRecord {
    pub id: String,
    pub kind: ShapeKind,
    #[serde(rename = "P_s")]
    pub site_perimeter: usize,
    #[serde(rename = "P_b")]
    pub bond_perimeter: usize,
    pub area: usize,
    pub fate: Fate,
    pub window_mean: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterDataset {
    pub h_par: f64,
    pub records: Vec<ScatterRecord>,
}

/// Fate of every shape in the `(P_s, P_b)` plane. `x_axis`/`y_axis` name
/// the record fields plotted horizontally/vertically; `colors` maps fates to
/// marker styles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterScan {
    pub x_axis: String,
    pub y_axis: String,
    pub colors: Vec<(Fate, String)>,
    pub h_perp: f64,
    pub datasets: Vec<ScatterDataset>,
}

pub fn shape_scatter_scan(
    base: &QuenchConfig,
    shapes: &[CatalogEntry],
    h_par_values: &[f64],
    opts: &ScanOptions,
) -> Result<ScatterScan> {
    let h_pars = if h_par_values.is_empty() {
        vec![base.hamiltonian.h_par]
    } else {
        h_par_values.to_vec()
    };
    let mut jobs = Vec::new();
    for &h_par in &h_pars {
        for entry in shapes {
            let mut c = base.clone();
            c.hamiltonian.h_par = h_par;
            c.shape = entry.spec.clone();
            jobs.push((job_name(&[format!("hpar{h_par}"), entry.id.clone()]), c));
        }
    }
    let results = run_jobs(jobs, opts)?;
    let mut chunks = results.chunks(shapes.len().max(1));
    let datasets = h_pars
        .iter()
        .map(|&h_par| {
            let records = if shapes.is_empty() {
                Vec::new()
            } else {
                chunks
                    .next()
                    .expect("one chunk per h_par")
                    .iter()
                    .zip(shapes)
                    .map(|(r, e)| ScatterRecord {
                        id: e.id.clone(),
                        kind: e.spec.kind,
                        site_perimeter: r.shape.site_perimeter,
                        bond_perimeter: r.shape.bond_perimeter,
                        area: r.shape.area,
                        fate: r.fate,
                        window_mean: r.window_mean,
                        failure: r.failure.clone(),
                    })
                    .collect()
            };
            ScatterDataset { h_par, records }
        })
        .collect();
    Ok(ScatterScan {
        x_axis: "P_s".into(),
        y_axis: "P_b".into(),
        colors: vec![
            (Fate::Expanding, "green".into()),
            (Fate::Shrinking, "red".into()),
            (Fate::Undecided, "hollow".into()),
        ],
        h_perp: base.hamiltonian.h_perp,
        datasets,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSeries {
    pub site: [usize; 2],
    pub values: Vec<f64>,
    /// Same probe in the bubble-free run.
    pub reference: Vec<f64>,
}

impl ProbeSeries {
    fn max_deviation(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfinementRow {
    pub h_perp: f64,
    pub times: Vec<f64>,
    pub inside: Vec<ProbeSeries>,
    pub outside: Vec<ProbeSeries>,
    /// max over time and outside probes of |<X>(bubble) - <X>(reference)|.
    pub metric: f64,
    /// The same quantity over the inside probes.
    pub inside_metric: f64,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfinementScan {
    pub shape: String,
    pub h_par: f64,
    pub patch: Patch,
    pub rows: Vec<ConfinementRow>,
}

fn probe_sites(mask: &ShapeMask, patch: &Patch, inside: &[[usize; 2]], outside: &[[usize; 2]]) -> Result<(Vec<[usize; 2]>, Vec<[usize; 2]>)> {
    let (w, h) = (mask.width(), mask.height());
    if inside.is_empty() && outside.is_empty() {
        let all = (0..h).flat_map(|y| (0..w).map(move |x| [x, y]));
        let (a, b): (Vec<_>, Vec<_>) = all.partition(|&[x, y]| patch.contains(Coord::new(x, y)));
        return Ok((a, b));
    }
    for (set, want_inside) in [(inside, true), (outside, false)] {
        for &[x, y] in set {
            if x >= w || y >= h {
                return Err(Error::InvalidParameter(format!("probe ({x}, {y}) outside the lattice")));
            }
            if patch.contains(Coord::new(x, y)) != want_inside {
                let side = if want_inside { "inside" } else { "outside" };
                return Err(Error::InvalidParameter(format!("probe ({x}, {y}) is not {side} the patch")));
            }
        }
    }
    Ok((inside.to_vec(), outside.to_vec()))
}

/// Local magnetization at probes inside and outside the bounding patch of a
/// diamond, compared against a bubble-free reference run at the same
/// couplings. Empty probe lists select every site on each side.
pub fn patch_confinement_scan(
    base: &QuenchConfig,
    h_perp_values: &[f64],
    inside: &[[usize; 2]],
    outside: &[[usize; 2]],
    opts: &ScanOptions,
) -> Result<ConfinementScan> {
    if base.shape.kind != ShapeKind::Diamond {
        return Err(Error::InvalidShape("the confinement scan expects a diamond".into()));
    }
    let mask = base.mask()?;
    let patch = mask.bounding_patch()?;
    let (inside, outside) = probe_sites(&mask, &patch, inside, outside)?;
    let probes: Vec<ObservableSpec> = inside
        .iter()
        .chain(&outside)
        .map(|&site| ObservableSpec::LocalX { site })
        .collect();
    let h_perps = if h_perp_values.is_empty() {
        vec![base.hamiltonian.h_perp]
    } else {
        h_perp_values.to_vec()
    };
    let mut jobs = Vec::new();
    for &h_perp in &h_perps {
        let mut c = base.clone();
        c.hamiltonian.h_perp = h_perp;
        c.run.observables.extend(probes.iter().cloned());
        let mut reference = c.clone();
        reference.shape = ShapeSpec::empty();
        jobs.push((job_name(&[format!("hperp{h_perp}"), "bubble".into()]), c));
        jobs.push((job_name(&[format!("hperp{h_perp}"), "reference".into()]), reference));
    }
    let results = run_jobs(jobs, opts)?;
    let rows = h_perps
        .iter()
        .zip(results.chunks(2))
        .map(|(&h_perp, pair)| {
            let (bubble, reference) = (&pair[0], &pair[1]);
            let len = bubble.series.len().min(reference.series.len());
            let series = |site: [usize; 2]| {
                let label = ObservableSpec::LocalX { site }.label();
                let get = |r: &QuenchResult| r.observable(&label).expect("probe recorded")[..len].to_vec();
                ProbeSeries {
                    site,
                    values: get(bubble),
                    reference: get(reference),
                }
            };
            let inside: Vec<ProbeSeries> = inside.iter().map(|&s| series(s)).collect();
            let outside: Vec<ProbeSeries> = outside.iter().map(|&s| series(s)).collect();
            let worst = |v: &[ProbeSeries]| v.iter().map(ProbeSeries::max_deviation).fold(0.0, f64::max);
            ConfinementRow {
                h_perp,
                times: bubble.times()[..len].to_vec(),
                metric: worst(&outside),
                inside_metric: worst(&inside),
                inside,
                outside,
                failure: bubble.failure.clone().or_else(|| reference.failure.clone()),
            }
        })
        .collect();
    Ok(ConfinementScan {
        shape: base.shape.label(),
        h_par: base.hamiltonian.h_par,
        patch,
        rows,
    })
}

/// Largest spread of `<X_r>` over the four images of a site under rotation
/// of a `width x width` grid (values row-major).
pub fn c4_asymmetry(width: usize, local: &[f64]) -> f64 {
    let n = width;
    let mut worst: f64 = 0.0;
    for y in 0..n {
        for x in 0..n {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            let (mut cx, mut cy) = (x, y);
            for _ in 0..4 {
                let v = local[cy * n + cx];
                lo = lo.min(v);
                hi = hi.max(v);
                (cx, cy) = (n - 1 - cy, cx);
            }
            worst = worst.max(hi - lo);
        }
    }
    worst
}

pub fn is_c4_symmetric(mask: &ShapeMask) -> bool {
    mask.width() == mask.height() && mask.rotate90() == *mask
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSetting {
    pub chi: usize,
    pub dt: f64,
    /// Max over time of [`c4_asymmetry`]; only for rotation-symmetric setups.
    pub c4_asymmetry: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceDiff {
    pub from: usize,
    pub to: usize,
    /// max over shared times and sites of |<X_r>(from) - <X_r>(to)|.
    pub max_local_diff: f64,
    pub shared_times: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceScan {
    pub settings: Vec<ConvergenceSetting>,
    /// Between consecutive entries of `settings`.
    pub differences: Vec<ConvergenceDiff>,
}

fn local_difference(a: &QuenchResult, b: &QuenchResult) -> (f64, usize) {
    let (da, db) = (a.config.tdvp.dt, b.config.tdvp.dt);
    let mut worst: f64 = 0.0;
    let mut shared = 0;
    for (sa, la) in a.series.iter().zip(&a.local_x) {
        let Some(k) = steps_for(sa.t, db) else { continue };
        let Some(lb) = b.local_x.get(k) else { continue };
        debug_assert!((k as f64 * db - sa.t).abs() < 1e-6 * da.max(db));
        shared += 1;
        for (x, y) in la.iter().zip(lb) {
            worst = worst.max((x - y).abs());
        }
    }
    (worst, shared)
}

/// Runs every `(chi, dt)` pair, chi-major, and compares consecutive ones.
pub fn convergence_scan(base: &QuenchConfig, chis: &[usize], dts: &[f64], opts: &ScanOptions) -> Result<ConvergenceScan> {
    if chis.len() < 2 {
        return Err(Error::InvalidParameter("the convergence scan needs at least two chi values".into()));
    }
    let dts = if dts.is_empty() { vec![base.tdvp.dt] } else { dts.to_vec() };
    let symmetric = is_c4_symmetric(&base.mask()?);
    let mut jobs = Vec::new();
    for &chi in chis {
        for &dt in &dts {
            let mut c = base.clone();
            c.tdvp.chi = chi;
            c.tdvp.dt = dt;
            c.run.record_local = true;
            jobs.push((job_name(&[format!("chi{chi}"), format!("dt{dt}")]), c));
        }
    }
    let results = run_jobs(jobs, opts)?;
    let width = base.lattice.width;
    let settings = results
        .iter()
        .map(|r| ConvergenceSetting {
            chi: r.config.tdvp.chi,
            dt: r.config.tdvp.dt,
            c4_asymmetry: symmetric.then(|| r.local_x.iter().map(|l| c4_asymmetry(width, l)).fold(0.0, f64::max)),
            failure: r.failure.clone(),
        })
        .collect();
    let differences = results
        .windows(2)
        .enumerate()
        .map(|(i, pair)| {
            let (max_local_diff, shared_times) = local_difference(&pair[0], &pair[1]);
            ConvergenceDiff {
                from: i,
                to: i + 1,
                max_local_diff,
                shared_times,
            }
        })
        .collect();
    Ok(ConvergenceScan { settings, differences })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundRow {
    pub h_perp: f64,
    pub times: Vec<f64>,
    pub avg_x: Vec<f64>,
    /// Mean of `avg_x` over the final window.
    pub long_time_mean: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundScan {
    pub t_max: f64,
    pub window_fraction: f64,
    pub rows: Vec<BackgroundRow>,
}

/// Bubble-free quench at zero longitudinal field for each transverse field.
/// A base config with a bubble or a nonzero `h_par` is overridden, with a
/// warning.
pub fn background_scan(base: &QuenchConfig, h_perp_values: &[f64], opts: &ScanOptions) -> Result<BackgroundScan> {
    let mut base = base.clone();
    if base.shape.kind != ShapeKind::Empty || base.hamiltonian.h_par != 0.0 {
        log::warn!("background scan: using an empty mask and h_par = 0");
        base.shape = ShapeSpec::empty();
        base.hamiltonian.h_par = 0.0;
    }
    let h_perps = if h_perp_values.is_empty() {
        vec![base.hamiltonian.h_perp]
    } else {
        h_perp_values.to_vec()
    };
    let jobs = h_perps
        .iter()
        .map(|&h| {
            let mut c = base.clone();
            c.hamiltonian.h_perp = h;
            (job_name(&[format!("hperp{h}")]), c)
        })
        .collect();
    let results = run_jobs(jobs, opts)?;
    let rows = h_perps
        .iter()
        .zip(&results)
        .map(|(&h_perp, r)| BackgroundRow {
            h_perp,
            times: r.times(),
            avg_x: r.avg_x(),
            long_time_mean: classify_fate(&r.series, base.window(), 0.0).ok().map(|f| f.window_mean),
            failure: r.failure.clone(),
        })
        .collect();
    Ok(BackgroundScan {
        t_max: base.run.t_max,
        window_fraction: base.classify.window_fraction,
        rows,
    })
}
