use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{steps_for, write_result, Backend, QuenchConfig};
use crate::error::{Error, Result};
use crate::lattice::SiteOrdering;
use crate::oracle::{entanglement_entropy, evolve_exact_with, observables_exact, DenseState, ExactOptions, SparseHamiltonian};
use crate::shapes::{ShapeMask, ShapeStats};
use crate::tdvp::{Sample, StepStats, TdvpEngine};
use crate::ttn::{Observable, Topology, TreeState};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fate {
    Expanding,
    Shrinking,
    Undecided,
}

impl Fate {
    /// The fate of the sign-flipped series.
    pub fn negated(self) -> Self {
        match self {
            Fate::Expanding => Fate::Shrinking,
            Fate::Shrinking => Fate::Expanding,
            Fate::Undecided => Fate::Undecided,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FateSummary {
    pub fate: Fate,
    /// Mean of `avg_x` over the window.
    pub window_mean: f64,
}

/// Windowed-mean sign test on `avg_x`: the mean over samples with
/// `t >= t_end - window` decides Shrinking (above `threshold`), Expanding
/// (below `-threshold`) or Undecided.
pub fn classify_fate(series: &[Sample], window: f64, threshold: f64) -> Result<FateSummary> {
    let (first, last) = match (series.first(), series.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::InvalidParameter("empty series".into())),
    };
    if !(window >= 0.0) || !(threshold >= 0.0) {
        return Err(Error::InvalidParameter("window and threshold must be nonnegative".into()));
    }
    let span = last.t - first.t;
    if window > span + 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "window {window} is longer than the series ({span})"
        )));
    }
    let start = last.t - window - 1e-9;
    let tail: Vec<f64> = series.iter().filter(|s| s.t >= start).map(|s| s.avg_x).collect();
    let window_mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let fate = if window_mean > threshold {
        Fate::Shrinking
    } else if window_mean < -threshold {
        Fate::Expanding
    } else {
        Fate::Undecided
    };
    Ok(FateSummary { fate, window_mean })
}

/// `<X_r>` on the grid at one time, row-major from `(0, 0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Snapshot {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// One configured observable, sampled alongside `series`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableSeries {
    pub label: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub code_version: String,
    pub backend: Backend,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuenchResult {
    pub config: QuenchConfig,
    pub shape: ShapeStats,
    /// One sample per step, starting at t = 0.
    pub series: Vec<Sample>,
    pub snapshots: Vec<Snapshot>,
    pub observables: Vec<ObservableSeries>,
    /// Per-sample `<X_r>` in canonical site order; empty unless
    /// `run.record_local` is set.
    pub local_x: Vec<Vec<f64>>,
    pub fate: Fate,
    pub window_mean: Option<f64>,
    pub provenance: Provenance,
    /// Krylov work (TTN backend only).
    pub krylov: Option<StepStats>,
    /// Set when the run stopped early; the series then ends at the last good
    /// step.
    pub failure: Option<String>,
}

impl QuenchResult {
    pub fn times(&self) -> Vec<f64> {
        self.series.iter().map(|s| s.t).collect()
    }

    pub fn avg_x(&self) -> Vec<f64> {
        self.series.iter().map(|s| s.avg_x).collect()
    }

    pub fn observable(&self, label: &str) -> Option<&[f64]> {
        self.observables
            .iter()
            .find(|o| o.label == label)
            .map(|o| o.values.as_slice())
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| (s.t - t).abs() < 1e-9)
    }
}

/// Collects samples, snapshots and observables as the evolution proceeds.
struct Recorder {
    width: usize,
    height: usize,
    dt: f64,
    snapshot_steps: Vec<(usize, f64)>,
    observables: Vec<Observable>,
    record_local: bool,
    series: Vec<Sample>,
    snapshots: Vec<Snapshot>,
    obs_values: Vec<Vec<f64>>,
    local_x: Vec<Vec<f64>>,
}

impl Recorder {
    fn new(cfg: &QuenchConfig) -> Result<Self> {
        let g = cfg.geometry()?;
        let snapshot_steps = cfg
            .run
            .snapshot_times
            .iter()
            .map(|&t| (steps_for(t, cfg.tdvp.dt).expect("validated"), t))
            .collect();
        let observables = cfg
            .run
            .observables
            .iter()
            .map(|o| o.resolve(&g, &cfg.hamiltonian))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            width: g.width(),
            height: g.height(),
            dt: cfg.tdvp.dt,
            snapshot_steps,
            obs_values: vec![Vec::new(); observables.len()],
            observables,
            record_local: cfg.run.record_local,
            series: Vec::new(),
            snapshots: Vec::new(),
            local_x: Vec::new(),
        })
    }

    fn wants_local(&self, step: usize) -> bool {
        self.record_local || self.snapshot_steps.iter().any(|&(k, _)| k == step)
    }

    /// `local` is in canonical site order, which is row-major on the grid.
    fn push(
        &mut self,
        step: usize,
        mut sample: Sample,
        local: Option<Vec<f64>>,
        mut eval: impl FnMut(&Observable) -> Result<f64>,
    ) -> Result<()> {
        sample.t = step as f64 * self.dt;
        self.series.push(sample);
        for (obs, out) in self.observables.iter().zip(&mut self.obs_values) {
            out.push(eval(obs)?);
        }
        if let Some(local) = local {
            for &(_, t) in self.snapshot_steps.iter().filter(|&&(k, _)| k == step) {
                self.snapshots.push(Snapshot {
                    t,
                    width: self.width,
                    height: self.height,
                    values: local.clone(),
                });
            }
            if self.record_local {
                self.local_x.push(local);
            }
        }
        Ok(())
    }
}

/// Runs one quench. When `run.out_dir` is set the result is written there,
/// including a partial result if a step fails.
pub fn run_quench(cfg: &QuenchConfig) -> Result<QuenchResult> {
    cfg.validate()?;
    let started = Instant::now();
    let mask = cfg.mask()?;
    let mut rec = Recorder::new(cfg)?;
    let steps = cfg.num_steps()?;
    let (failure, krylov) = match cfg.run.backend {
        Backend::Ttn => run_ttn(cfg, &mask, steps, &mut rec)?,
        Backend::Exact => (run_exact(cfg, &mask, steps, &mut rec)?, None),
    };
    if let Some(msg) = &failure {
        log::error!("run stopped at t = {}: {msg}", rec.series.last().map_or(0.0, |s| s.t));
    }
    // a partial series has no meaningful final window
    let summary = match failure {
        None => Some(classify_fate(&rec.series, cfg.window(), cfg.classify.threshold)?),
        Some(_) => None,
    };
    let result = QuenchResult {
        config: cfg.clone(),
        shape: mask.stats(),
        observables: cfg
            .run
            .observables
            .iter()
            .zip(rec.obs_values)
            .map(|(o, values)| ObservableSeries { label: o.label(), values })
            .collect(),
        series: rec.series,
        snapshots: rec.snapshots,
        local_x: rec.local_x,
        fate: summary.map_or(Fate::Undecided, |s| s.fate),
        window_mean: summary.map(|s| s.window_mean),
        provenance: Provenance {
            config_hash: cfg.hash(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            backend: cfg.run.backend,
            wall_time_s: started.elapsed().as_secs_f64(),
        },
        krylov,
        failure,
    };
    if let Some(dir) = &cfg.run.out_dir {
        write_result(dir, &result)?;
    }
    Ok(result)
}

fn run_ttn(
    cfg: &QuenchConfig,
    mask: &ShapeMask,
    steps: usize,
    rec: &mut Recorder,
) -> Result<(Option<String>, Option<StepStats>)> {
    let ordering = cfg.ordering()?;
    let terms = cfg.terms()?;
    let state = TreeState::product_state(&ordering, mask, cfg.tdvp.chi)?;
    let mut engine = TdvpEngine::new(state, &terms, cfg.tdvp)?;
    let record = |k: usize, engine: &TdvpEngine, rec: &mut Recorder| -> Result<()> {
        let state = engine.state();
        let local = rec.wants_local(k).then(|| state.local_x());
        rec.push(k, engine.sample()?, local, |o| state.expectation(o))
    };
    record(0, &engine, rec)?;
    let mut failure = None;
    for k in 1..=steps {
        if let Err(e) = engine.step() {
            failure = Some(e.to_string());
            break;
        }
        record(k, &engine, rec)?;
    }
    Ok((failure, Some(engine.take_stats())))
}

/// Sites below each tree node, used for the entropies of the exact backend.
fn subtree_sites(ordering: &SiteOrdering) -> Result<Vec<Vec<usize>>> {
    let n = ordering.num_sites();
    let topo = Topology::new(n)?;
    Ok((0..n)
        .map(|q| {
            if q < 2 {
                return Vec::new();
            }
            let (lo, hi) = topo.leaf_range(q);
            (lo..hi).map(|l| ordering.site_of_leaf(l)).collect()
        })
        .collect())
}

fn exact_observable(psi: &DenseState, obs: &Observable, subtrees: &[Vec<usize>]) -> Result<f64> {
    match obs {
        Observable::SubtreeEntropy(q) => entanglement_entropy(psi, &subtrees[*q]),
        other => observables_exact(psi, other),
    }
}

fn run_exact(cfg: &QuenchConfig, mask: &ShapeMask, steps: usize, rec: &mut Recorder) -> Result<Option<String>> {
    let terms = cfg.terms()?;
    let h = SparseHamiltonian::new(&terms)?;
    let psi0 = DenseState::product(mask)?;
    let subtrees = subtree_sites(&cfg.ordering()?)?;
    let opts = ExactOptions {
        method: cfg.run.exact_method,
        ..ExactOptions::default()
    };
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * cfg.tdvp.dt).collect();
    let mut k = 0;
    let outcome = evolve_exact_with(&psi0, &terms, &times, &opts, |_, psi| {
        let local = psi.local_x();
        let avg_x = local.iter().sum::<f64>() / local.len() as f64;
        // node 3 holds the complement of node 2, hence the same entropy
        let mut max_entropy: f64 = 0.0;
        for (q, sites) in subtrees.iter().enumerate().skip(2) {
            if q != 3 {
                max_entropy = max_entropy.max(entanglement_entropy(psi, sites)?);
            }
        }
        let sample = Sample {
            t: 0.0,
            avg_x,
            energy: h.expectation(psi),
            norm: psi.norm() / psi0.norm(),
            max_entropy,
        };
        let local = rec.wants_local(k).then_some(local);
        rec.push(k, sample, local, |o| exact_observable(psi, o, &subtrees))?;
        k += 1;
        Ok(())
    });
    match outcome {
        Ok(()) => Ok(None),
        Err(e @ Error::KrylovNonConvergence { .. }) => Ok(Some(e.to_string())),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: &[f64]) -> Vec<Sample> {
        values
            .iter()
            .enumerate()
            .map(|(k, &v)| Sample {
                t: k as f64 * 0.5,
                avg_x: v,
                energy: 0.0,
                norm: 1.0,
                max_entropy: 0.0,
            })
            .collect()
    }

    #[test]
    fn fate_of_constant_series() {
        let s = series(&[0.9; 11]);
        assert_eq!(classify_fate(&s, 1.0, 0.1).unwrap().fate, Fate::Shrinking);
        let s = series(&[-0.9; 11]);
        assert_eq!(classify_fate(&s, 1.0, 0.1).unwrap().fate, Fate::Expanding);
        let decay: Vec<f64> = (0..11).map(|k| (-(k as f64)).exp()).collect();
        assert_eq!(classify_fate(&series(&decay), 1.0, 0.1).unwrap().fate, Fate::Undecided);
    }

    #[test]
    fn window_selects_tail() {
        let s = series(&[1.0, 1.0, 1.0, -1.0, -1.0]);
        let f = classify_fate(&s, 0.5, 0.1).unwrap();
        assert_eq!(f.fate, Fate::Expanding);
        assert_eq!(f.window_mean, -1.0);
        let f = classify_fate(&s, 1.0, 0.1).unwrap();
        assert!((f.window_mean + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_long_window() {
        let s = series(&[0.5; 3]);
        assert!(classify_fate(&s, 1.5, 0.1).is_err());
        assert!(classify_fate(&[], 0.0, 0.1).is_err());
    }
}
