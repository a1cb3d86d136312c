//! Named configurations. Presets without the `desk-` prefix
//! are the production regime (16x16, chi = 256, dt = 0.05) and take hours to
//! days on a CPU; their `t_max` values are read off plotted ranges and are
//! free parameters. The `desk-*` presets are 4x4 counterparts that finish in
//! seconds on the exact backend.

use serde::{Deserialize, Serialize};

use super::{Backend, QuenchConfig};
use crate::error::{Error, Result};
use crate::hamiltonian::IsingParams;
use crate::shapes::ShapeSpec;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanKind {
    Run,
    ScanSize,
    ScanShapes,
    ScanPatch,
    ScanConvergence,
    ScanBackground,
}

impl ScanKind {
    /// The CLI subcommand that consumes the preset.
    pub fn subcommand(self) -> &'static str {
        match self {
            ScanKind::Run => "run",
            ScanKind::ScanSize => "scan-size",
            ScanKind::ScanShapes => "scan-shapes",
            ScanKind::ScanPatch => "scan-patch",
            ScanKind::ScanConvergence => "scan-convergence",
            ScanKind::ScanBackground => "scan-background",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub kind: ScanKind,
    pub description: &'static str,
    /// What a finished run should show.
    pub expected: &'static str,
    /// Not desk scale: hours or more on a CPU.
    pub extended: bool,
    pub config: QuenchConfig,
}

fn params(h_perp: f64, h_par: f64) -> IsingParams {
    IsingParams::new(1.0, h_perp, h_par).expect("preset couplings are valid")
}

fn production(t_max: f64) -> QuenchConfig {
    let mut c = QuenchConfig::new(16, 16, t_max);
    c.hamiltonian = params(1.2, -0.15);
    c.tdvp.chi = 256;
    c.tdvp.dt = 0.05;
    c
}

fn desk(t_max: f64) -> QuenchConfig {
    let mut c = QuenchConfig::new(4, 4, t_max);
    c.hamiltonian = params(1.2, -0.15);
    c.tdvp.dt = 0.05;
    c.run.backend = Backend::Exact;
    c
}

pub fn presets() -> Vec<Preset> {
    let mut out = Vec::new();

    let mut c = production(10.0);
    c.scan.sizes = (5..=11).collect();
    c.scan.h_par_values = vec![-0.15, -0.05];
    out.push(Preset {
        name: "critical-size",
        kind: ScanKind::ScanSize,
        description: "square bubbles of side 5..11 at h_perp = 1.2; run once per entry of h_par_values",
        expected: "L_c = 7 at h_par = -0.15 and L_c = 9 at h_par = -0.05",
        extended: true,
        config: c,
    });

    for (name, h_par, expected) in [
        ("snapshots-expand", -0.15, "the 8x8 bubble grows, rounding toward a diamond, until it fills the lattice"),
        ("snapshots-shrink", -0.05, "the 8x8 bubble contracts, rounding toward a diamond"),
    ] {
        let mut c = production(10.0);
        c.hamiltonian = params(1.2, h_par);
        c.shape = ShapeSpec::square(8);
        c.run.snapshot_times = vec![0.0, 2.5, 5.0, 7.5, 10.0];
        out.push(Preset {
            name,
            kind: ScanKind::Run,
            description: "single 8x8 square quench with local magnetization snapshots",
            expected,
            extended: true,
            config: c,
        });
    }

    let mut c = production(8.0);
    c.hamiltonian = params(1.2, -0.25);
    c.shape = ShapeSpec::diamond(3);
    c.scan.h_perp_values = vec![0.5, 0.8, 1.1];
    out.push(Preset {
        name: "patch",
        kind: ScanKind::ScanPatch,
        description: "diamond bubble at h_par = -0.25, probes inside and outside its bounding square",
        expected: "outside probes stay at the background up to h_perp ~ 0.8 and deviate at 1.1",
        extended: true,
        config: c,
    });

    let mut c = production(10.0);
    c.scan.h_par_values = vec![-0.05, -0.1, -0.15];
    out.push(Preset {
        name: "scatter",
        kind: ScanKind::ScanShapes,
        description: "default shape catalog in the (P_s, P_b) plane, one dataset per h_par",
        expected: "no horizontal or vertical line separates expanding from shrinking shapes",
        extended: true,
        config: c,
    });

    let mut c = production(5.0);
    c.shape = ShapeSpec::square(8);
    c.scan.chis = vec![224, 256];
    c.scan.dts = vec![0.05];
    out.push(Preset {
        name: "convergence",
        kind: ScanKind::ScanConvergence,
        description: "8x8 square bubble at chi = 224 and 256",
        expected: "local magnetization differs by about 1e-3 between the two bond dimensions; C4 spread stays small",
        extended: true,
        config: c,
    });

    let mut c = production(10.0);
    c.hamiltonian = params(1.2, 0.0);
    c.scan.h_perp_values = vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
    out.push(Preset {
        name: "background",
        kind: ScanKind::ScanBackground,
        description: "bubble-free quench of the all-up state at h_par = 0",
        expected: "the long-time magnetization goes to zero for h_perp >= 2.0",
        extended: true,
        config: c,
    });

    let mut c = desk(6.0);
    c.scan.sizes = vec![1, 2];
    c.scan.h_par_values = vec![-0.25, -0.05];
    out.push(Preset {
        name: "desk-size",
        kind: ScanKind::ScanSize,
        description: "4x4 exact counterpart of the critical-size scan",
        expected: "the final-window magnetization of the 2x2 bubble is lower at h_par = -0.25 than at -0.05",
        extended: false,
        config: c,
    });

    let mut c = desk(4.0);
    c.hamiltonian = params(0.5, -0.25);
    c.shape = ShapeSpec::diamond(1);
    c.scan.h_perp_values = vec![0.3, 0.5, 0.8, 1.1];
    out.push(Preset {
        name: "desk-patch",
        kind: ScanKind::ScanPatch,
        description: "4x4 exact counterpart of the patch-confinement scan",
        expected: "every outside probe borders the patch on 4x4, so the metric peaks near h_perp = 0.5-0.8 (about 0.85) and drops to about 0.5 at 1.1",
        extended: false,
        config: c,
    });

    let mut c = desk(20.0);
    c.hamiltonian = params(0.5, 0.0);
    c.scan.h_perp_values = vec![0.5, 2.5];
    out.push(Preset {
        name: "desk-background",
        kind: ScanKind::ScanBackground,
        description: "4x4 exact counterpart of the background scan",
        expected: "the long-time mean is smaller at h_perp = 2.5 than at 0.5",
        extended: false,
        config: c,
    });

    let mut c = desk(2.0);
    c.run.backend = Backend::Ttn;
    c.shape = ShapeSpec::square(2);
    c.scan.chis = vec![16, 64, 256];
    c.scan.dts = vec![0.05];
    out.push(Preset {
        name: "desk-convergence",
        kind: ScanKind::ScanConvergence,
        description: "4x4 TTN runs at growing bond dimension; 256 is exact for 16 sites",
        expected: "differences shrink with chi; the C4 spread is near machine precision at chi = 256",
        extended: false,
        config: c,
    });

    out
}

pub fn preset(name: &str) -> Result<Preset> {
    presets().into_iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<&str> = presets().iter().map(|p| p.name).collect();
        Error::Config(format!("unknown preset {name:?}; available: {}", names.join(", ")))
    })
}
