use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bubbles_core::experiment::{
    background_scan, convergence_scan, critical_size_scan, patch_confinement_scan, preset, presets, run_quench,
    shape_scatter_scan, write_scan, Backend, QuenchConfig, ScanOptions,
};
use bubbles_core::shapes::{default_catalog, CatalogRecord};
use bubbles_core::LatticeGeometry;

#[derive(Parser)]
#[command(name = "bubbles", version, about = "Quench dynamics of true-vacuum bubbles in the 2D Ising model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single quench; writes series, snapshots and result.json.
    Run(Common),
    /// Square bubbles of several sides; reports the critical size.
    ScanSize {
        #[command(flatten)]
        common: Common,
        /// Bubble sides (default: [scan] sizes).
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        /// One table per value (default: [scan] h_par_values, else the config's h_par).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        h_par: Vec<f64>,
    },
    /// Fates of a shape catalog in the (P_s, P_b) plane.
    ScanShapes {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        h_par: Vec<f64>,
    },
    /// Local magnetization inside and outside the patch of a diamond bubble.
    ScanPatch {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        h_perp: Vec<f64>,
    },
    /// Local magnetization differences across bond dimensions and time steps.
    ScanConvergence {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        chis: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        dts: Vec<f64>,
    },
    /// Bubble-free quenches at zero longitudinal field.
    ScanBackground {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        h_perp: Vec<f64>,
    },
    /// Area and perimeters of the shape catalog, as JSON.
    Shapes {
        /// Takes the lattice and [scan] shapes from here.
        #[arg(long, conflicts_with_all = ["width", "height"])]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        width: usize,
        #[arg(long, default_value_t = 16)]
        height: usize,
        /// Write DIR/shapes.json instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the named presets, or write them as config files.
    Presets {
        #[arg(long)]
        write: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Use a named preset instead of a config file.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Output directory (overrides [run] out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    backend: Option<Backend>,
    /// Concurrent scan jobs; 0 uses every core.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl Common {
    fn load(&self) -> Result<QuenchConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => QuenchConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            (None, Some(name)) => preset(name)?.config,
            (None, None) => unreachable!("clap requires one of them"),
        };
        if let Some(b) = self.backend {
            cfg.run.backend = b;
        }
        if let Some(out) = &self.out {
            cfg.run.out_dir = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &QuenchConfig) -> PathBuf {
        cfg.run
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.hash()[..12]))
    }

    /// Per-job outputs go under `<out>/<name>/`, the summary to `<out>/<name>.json`.
    fn scan(&self, name: &str) -> Result<(QuenchConfig, ScanOptions, PathBuf)> {
        let mut cfg = self.load()?;
        let out = self.out_dir(&cfg);
        cfg.run.out_dir = None;
        let opts = ScanOptions {
            jobs: self.jobs,
            out_dir: Some(out.join(name)),
        };
        Ok((cfg, opts, out))
    }
}

fn or_default<T: Clone>(cli: &[T], config: &[T]) -> Vec<T> {
    if cli.is_empty() {
        config.to_vec()
    } else {
        cli.to_vec()
    }
}

fn fmt_mean(m: Option<f64>) -> String {
    m.map_or("-".into(), |v| format!("{v:+.4}"))
}

fn run(common: &Common) -> Result<()> {
    let mut cfg = common.load()?;
    let out = common.out_dir(&cfg);
    cfg.run.out_dir = Some(out.clone());
    let res = run_quench(&cfg)?;
    println!(
        "fate {:?}, final-window <X> {}, {:.1} s, written to {}",
        res.fate,
        fmt_mean(res.window_mean),
        res.provenance.wall_time_s,
        out.display()
    );
    if let Some(f) = &res.failure {
        bail!("run stopped early: {f}");
    }
    Ok(())
}

fn scan_size(common: &Common, sizes: &[usize], h_par: &[f64]) -> Result<()> {
    let (cfg, opts, out) = common.scan("scan-size")?;
    let sizes = or_default(sizes, &cfg.scan.sizes);
    let h_pars = or_default(h_par, &cfg.scan.h_par_values);
    let h_pars = if h_pars.is_empty() { vec![cfg.hamiltonian.h_par] } else { h_pars };
    let mut tables = Vec::new();
    for h in h_pars {
        let mut base = cfg.clone();
        base.hamiltonian.h_par = h;
        let job_opts = ScanOptions {
            out_dir: opts.out_dir.as_ref().map(|d| d.join(format!("hpar{h}"))),
            ..opts.clone()
        };
        let table = critical_size_scan(&base, &sizes, &job_opts)?;
        println!("h_par = {h}");
        for r in &table.rows {
            println!("  L = {:2}  {:?}  {}", r.side, r.fate, fmt_mean(r.window_mean));
        }
        match table.critical_size {
            Some(l) => println!("  L_c = {l}"),
            None => println!("  L_c not determined (monotone: {})", table.monotone),
        }
        tables.push(table);
    }
    println!("{}", write_scan(&out, "scan-size", &tables)?.display());
    Ok(())
}

fn scan_shapes(common: &Common, h_par: &[f64]) -> Result<()> {
    let (cfg, opts, out) = common.scan("scan-shapes")?;
    let shapes = if cfg.scan.shapes.is_empty() {
        default_catalog(&cfg.geometry()?)
    } else {
        cfg.scan.shapes.clone()
    };
    let scan = shape_scatter_scan(&cfg, &shapes, &or_default(h_par, &cfg.scan.h_par_values), &opts)?;
    for d in &scan.datasets {
        println!("h_par = {}", d.h_par);
        for r in &d.records {
            println!("  {:20} P_s {:3} P_b {:3}  {:?}", r.id, r.site_perimeter, r.bond_perimeter, r.fate);
        }
    }
    println!("{}", write_scan(&out, "scan-shapes", &scan)?.display());
    Ok(())
}

fn scan_patch(common: &Common, h_perp: &[f64]) -> Result<()> {
    let (cfg, opts, out) = common.scan("scan-patch")?;
    let scan = patch_confinement_scan(
        &cfg,
        &or_default(h_perp, &cfg.scan.h_perp_values),
        &cfg.scan.probes_inside,
        &cfg.scan.probes_outside,
        &opts,
    )?;
    for r in &scan.rows {
        println!("h_perp = {}  outside {:.3e}  inside {:.3e}", r.h_perp, r.metric, r.inside_metric);
    }
    println!("{}", write_scan(&out, "scan-patch", &scan)?.display());
    Ok(())
}

fn scan_convergence(common: &Common, chis: &[usize], dts: &[f64]) -> Result<()> {
    let (cfg, opts, out) = common.scan("scan-convergence")?;
    let scan = convergence_scan(&cfg, &or_default(chis, &cfg.scan.chis), &or_default(dts, &cfg.scan.dts), &opts)?;
    for d in &scan.differences {
        let (a, b) = (&scan.settings[d.from], &scan.settings[d.to]);
        println!(
            "chi {} dt {} -> chi {} dt {}: max |d<X_r>| {:.3e}",
            a.chi, a.dt, b.chi, b.dt, d.max_local_diff
        );
    }
    println!("{}", write_scan(&out, "scan-convergence", &scan)?.display());
    Ok(())
}

fn scan_background(common: &Common, h_perp: &[f64]) -> Result<()> {
    let (cfg, opts, out) = common.scan("scan-background")?;
    let scan = background_scan(&cfg, &or_default(h_perp, &cfg.scan.h_perp_values), &opts)?;
    for r in &scan.rows {
        println!("h_perp = {}  long-time <X> {}", r.h_perp, fmt_mean(r.long_time_mean));
    }
    println!("{}", write_scan(&out, "scan-background", &scan)?.display());
    Ok(())
}

fn shapes(config: Option<&Path>, width: usize, height: usize, out: Option<&Path>) -> Result<()> {
    let (geometry, entries) = match config {
        Some(path) => {
            let cfg = QuenchConfig::load(path)?;
            let g = cfg.geometry()?;
            let entries = if cfg.scan.shapes.is_empty() { default_catalog(&g) } else { cfg.scan.shapes };
            (g, entries)
        }
        None => {
            let g = LatticeGeometry::new(width, height)?;
            let entries = default_catalog(&g);
            (g, entries)
        }
    };
    let records = entries
        .iter()
        .map(|e| CatalogRecord::new(e, &geometry))
        .collect::<bubbles_core::Result<Vec<_>>>()?;
    match out {
        Some(dir) => println!("{}", write_scan(dir, "shapes", &records)?.display()),
        None => println!("{}", serde_json::to_string_pretty(&records)?),
    }
    Ok(())
}

fn list_presets(write: Option<&Path>) -> Result<()> {
    for p in presets() {
        let scale = if p.extended { "extended" } else { "desk" };
        println!("{:24} {:17} {:8} {}", p.name, p.kind.subcommand(), scale, p.description);
        if let Some(dir) = write {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("{}.toml", p.name));
            let text = format!(
                "# {}\n# usage: bubbles {} --config {}.toml\n# expected: {}\n\n{}",
                p.description,
                p.kind.subcommand(),
                p.name,
                p.expected,
                p.config.to_toml_string()?
            );
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(c) => run(c),
        Command::ScanSize { common, sizes, h_par } => scan_size(common, sizes, h_par),
        Command::ScanShapes { common, h_par } => scan_shapes(common, h_par),
        Command::ScanPatch { common, h_perp } => scan_patch(common, h_perp),
        Command::ScanConvergence { common, chis, dts } => scan_convergence(common, chis, dts),
        Command::ScanBackground { common, h_perp } => scan_background(common, h_perp),
        Command::Shapes { config, width, height, out } => shapes(config.as_deref(), *width, *height, out.as_deref()),
        Command::Presets { write } => list_presets(write.as_deref()),
    }
}
