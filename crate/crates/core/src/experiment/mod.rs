//! Quench experiments: configuration, execution, fate classification, scans
//! and their on-disk formats.

mod io;
mod presets;
mod run;
mod scans;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hamiltonian::{build_terms, IsingParams, TermList};
use crate::lattice::{hilbert_ordering, LatticeGeometry, SiteOrdering};
use crate::oracle::{ExactMethod, ORACLE_LIMIT};
use crate::shapes::{make_shape, CatalogEntry, ShapeMask, ShapeSpec};
use crate::tdvp::TdvpConfig;
use crate::ttn::Observable;

pub use io::{
    read_local_csv, read_observables_csv, read_result, read_scan, read_series_csv, read_snapshot_csv, snapshot_file_name,
    write_local_csv, write_observables_csv, write_result, write_scan, write_series_csv, write_snapshot_csv, ResultMeta,
    SnapshotRef, RESULT_FILE, SERIES_HEADER,
};
pub use presets::{preset, presets, Preset, ScanKind};
pub use run::{classify_fate, run_quench, Fate, FateSummary, ObservableSeries, Provenance, QuenchResult, Snapshot};
pub use scans::{
    background_scan, c4_asymmetry, convergence_scan, critical_size_scan, is_c4_symmetric, patch_confinement_scan,
    shape_scatter_scan, BackgroundRow, BackgroundScan, ConfinementRow, ConfinementScan, ConvergenceDiff,
    ConvergenceScan, ConvergenceSetting, ProbeSeries, ScanOptions, ScatterDataset, ScatterRecord, ScatterScan,
    SizeScan, SizeScanRow,
};

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Ttn,
    Exact,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Ttn => "ttn",
            Backend::Exact => "exact",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ttn" => Ok(Backend::Ttn),
            "exact" => Ok(Backend::Exact),
            other => Err(Error::Config(format!("unknown backend {other:?}, expected ttn or exact"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub width: usize,
    pub height: usize,
}

/// Extra per-step observables, addressed by grid coordinates `[x, y]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableSpec {
    LocalX { site: [usize; 2] },
    LocalZ { site: [usize; 2] },
    AverageX,
    BondEnergy { a: [usize; 2], b: [usize; 2] },
    /// Entropy across the tree bond above heap node `node`.
    SubtreeEntropy { node: usize },
}

impl ObservableSpec {
    /// Column name used in `observables.csv`.
    pub fn label(&self) -> String {
        match self {
            ObservableSpec::LocalX { site: [x, y] } => format!("local_x_{x}_{y}"),
            ObservableSpec::LocalZ { site: [x, y] } => format!("local_z_{x}_{y}"),
            ObservableSpec::AverageX => "average_x".into(),
            ObservableSpec::BondEnergy { a: [ax, ay], b: [bx, by] } => format!("bond_energy_{ax}_{ay}_{bx}_{by}"),
            ObservableSpec::SubtreeEntropy { node } => format!("subtree_entropy_{node}"),
        }
    }

    pub fn resolve(&self, geometry: &LatticeGeometry, params: &IsingParams) -> Result<Observable> {
        let site = |[x, y]: [usize; 2]| -> Result<usize> {
            geometry
                .check(x as i64, y as i64)
                .map(|c| geometry.index(c))
                .map_err(|_| Error::InvalidObservable(format!("site ({x}, {y}) outside the lattice")))
        };
        Ok(match self {
            ObservableSpec::LocalX { site: s } => Observable::LocalX(site(*s)?),
            ObservableSpec::LocalZ { site: s } => Observable::LocalZ(site(*s)?),
            ObservableSpec::AverageX => Observable::AverageX,
            ObservableSpec::BondEnergy { a, b } => {
                let (sa, sb) = (site(*a)?, site(*b)?);
                if geometry.coord(sa).manhattan(geometry.coord(sb)) != 1 {
                    return Err(Error::InvalidObservable(format!("{a:?} and {b:?} are not nearest neighbors")));
                }
                Observable::BondEnergy {
                    sites: (sa, sb),
                    coupling: params.j,
                }
            }
            ObservableSpec::SubtreeEntropy { node } => {
                let n = geometry.num_sites();
                if *node < 2 || *node >= n {
                    return Err(Error::InvalidNode(*node));
                }
                Observable::SubtreeEntropy(*node)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub t_max: f64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default)]
    pub backend: Backend,
    /// Solver used by the exact backend.
    #[serde(default)]
    pub exact_method: ExactMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observables: Vec<ObservableSpec>,
    /// Keep <X_r> at every site after every step (written to `local_x.csv`).
    #[serde(default)]
    pub record_local: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifySection {
    #[serde(default = "default_window_fraction")]
    pub window_fraction: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_window_fraction() -> f64 {
    0.2
}

fn default_threshold() -> f64 {
    0.1
}

impl Default for ClassifySection {
    fn default() -> Self {
        Self {
            window_fraction: default_window_fraction(),
            threshold: default_threshold(),
        }
    }
}

/// Parameters read by the scan subcommands; ignored by single runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub h_par_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub h_perp_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chis: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dts: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probes_inside: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probes_outside: Vec<[usize; 2]>,
    /// Shapes for the scatter scan; the default catalog when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shapes: Vec<CatalogEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchConfig {
    pub lattice: LatticeSection,
    #[serde(default)]
    pub shape: ShapeSpec,
    #[serde(default)]
    pub hamiltonian: IsingParams,
    #[serde(default)]
    pub tdvp: TdvpConfig,
    pub run: RunSection,
    #[serde(default)]
    pub classify: ClassifySection,
    #[serde(default)]
    pub scan: ScanSection,
}

/// Tolerance for "is a whole number of time steps".
const GRID_TOL: f64 = 1e-6;

pub(crate) fn steps_for(t: f64, dt: f64) -> Option<usize> {
    let k = t / dt;
    ((k - k.round()).abs() < GRID_TOL).then_some(k.round() as usize)
}

impl QuenchConfig {
    /// A run of `t_max` on a `width x height` lattice with default shape,
    /// couplings and integrator settings.
    pub fn new(width: usize, height: usize, t_max: f64) -> Self {
        Self {
            lattice: LatticeSection { width, height },
            shape: ShapeSpec::empty(),
            hamiltonian: IsingParams::default(),
            tdvp: TdvpConfig::default(),
            run: RunSection {
                t_max,
                snapshot_times: Vec::new(),
                backend: Backend::Ttn,
                exact_method: ExactMethod::Krylov,
                out_dir: None,
                observables: Vec::new(),
                record_local: false,
            },
            classify: ClassifySection::default(),
            scan: ScanSection::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        Ok(cfg)
    }

    /// Reads and validates a config file. A relative `mask_file` is taken
    /// relative to the directory of the config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(mask), Some(dir)) = (cfg.shape.mask_file.as_mut(), path.parent()) {
            if mask.is_relative() {
                *mask = dir.join(&*mask);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn geometry(&self) -> Result<LatticeGeometry> {
        LatticeGeometry::new(self.lattice.width, self.lattice.height)
    }

    /// Hilbert ordering on square lattices, row-major otherwise.
    pub fn ordering(&self) -> Result<SiteOrdering> {
        let g = self.geometry()?;
        if g.is_square() {
            hilbert_ordering(&g)
        } else {
            Ok(SiteOrdering::row_major(&g))
        }
    }

    pub fn mask(&self) -> Result<ShapeMask> {
        make_shape(&self.shape, &self.geometry()?)
    }

    pub fn terms(&self) -> Result<TermList> {
        Ok(build_terms(&self.geometry()?, &self.hamiltonian))
    }

    pub fn num_steps(&self) -> Result<usize> {
        steps_for(self.run.t_max, self.tdvp.dt).ok_or_else(|| {
            Error::Config(format!(
                "t_max = {} is not a whole number of steps dt = {}",
                self.run.t_max, self.tdvp.dt
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.geometry()?;
        self.hamiltonian.validate()?;
        self.tdvp.validate()?;
        let t_max = self.run.t_max;
        if !(t_max >= 0.0) || !t_max.is_finite() {
            return Err(Error::Config(format!("t_max must be finite and nonnegative, got {t_max}")));
        }
        self.num_steps()?;
        for &t in &self.run.snapshot_times {
            if !(t >= 0.0) || t > t_max + GRID_TOL {
                return Err(Error::Config(format!("snapshot time {t} outside [0, t_max = {t_max}]")));
            }
            if steps_for(t, self.tdvp.dt).is_none() {
                return Err(Error::Config(format!("snapshot time {t} is not on the dt = {} grid", self.tdvp.dt)));
            }
        }
        if let Some(path) = &self.shape.mask_file {
            if !path.exists() {
                return Err(Error::Config(format!("mask file {} does not exist", path.display())));
            }
        }
        make_shape(&self.shape, &g)?;
        for obs in &self.run.observables {
            obs.resolve(&g, &self.hamiltonian)?;
        }
        let c = &self.classify;
        if !(c.window_fraction > 0.0 && c.window_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "window_fraction must lie in (0, 1], got {}",
                c.window_fraction
            )));
        }
        if !(c.threshold >= 0.0) {
            return Err(Error::Config(format!("threshold must be nonnegative, got {}", c.threshold)));
        }
        if self.run.backend == Backend::Exact && g.num_sites() > ORACLE_LIMIT {
            return Err(Error::TooLarge {
                sites: g.num_sites(),
                limit: ORACLE_LIMIT,
            });
        }
        Ok(())
    }

    /// SHA-256 of the config with `out_dir` cleared, so that two runs of the
    /// same physics written to different places share a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.out_dir = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Final-window length in time units.
    pub fn window(&self) -> f64 {
        self.classify.window_fraction * self.run.t_max
    }
}
