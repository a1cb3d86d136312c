//! Single-site TDVP on tree states.
//!
//! A step is the symmetric composition of a post-order sweep over `dt/2`
//! (each node evolved forward, each bond evolved backward on the way up) and
//! its exact reverse, with the two root evolutions merged into one of length
//! `dt`. The center starts and ends at the root.
//!
//! Environments: `env_up[e]` is the Hamiltonian projected on the subtree
//! below edge `e` (edges are named by the heap index of their lower end,
//! leaves included); `env_down[e]` is the projection of the complement. Each
//! carries the fully contained terms as one `block` matrix plus one `open`
//! matrix per site operator of a two-site term that crosses the edge.

pub mod krylov;

use std::collections::HashMap;

use faer::{c64, Accum, Mat, MatMut, MatRef, Par};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{Pauli, TermList};
use crate::tensor::Tensor3;
use crate::ttn::{pauli_op, op_matrix, Topology, TreeState};

pub use krylov::{krylov_expm_apply, KrylovOutcome};

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdvpConfig {
    pub dt: f64,
    /// Bond dimension the initial state is padded to.
    pub chi: usize,
    #[serde(default = "default_krylov_dim")]
    pub krylov_dim: usize,
    #[serde(default = "default_krylov_tol")]
    pub krylov_tol: f64,
    #[serde(default = "default_svd_cutoff")]
    pub svd_cutoff: f64,
}

fn default_krylov_dim() -> usize {
    25
}

fn default_krylov_tol() -> f64 {
    1e-10
}

fn default_svd_cutoff() -> f64 {
    1e-10
}

impl Default for TdvpConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            chi: 256,
            krylov_dim: default_krylov_dim(),
            krylov_tol: default_krylov_tol(),
            svd_cutoff: default_svd_cutoff(),
        }
    }
}

impl TdvpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if self.krylov_dim < 2 {
            return Err(Error::InvalidParameter("krylov_dim must be at least 2".into()));
        }
        if self.chi < 1 {
            return Err(Error::InvalidParameter("chi must be at least 1".into()));
        }
        if !(self.krylov_tol > 0.0) {
            return Err(Error::InvalidParameter("krylov_tol must be positive".into()));
        }
        if !(self.svd_cutoff >= 0.0) {
            return Err(Error::InvalidParameter("svd_cutoff must be nonnegative".into()));
        }
        Ok(())
    }
}

type Key = (usize, Pauli);

/// Two-site terms sharing the operator on one side: `op_a (x) sum_k coef_k op_k`.
#[derive(Clone, Debug)]
struct CrossGroup {
    leg_a: usize,
    key_a: Key,
    leg_b: usize,
    partners: Vec<(f64, Key)>,
}

/// Which terms live where in the tree; independent of the tensors.
#[derive(Clone, Debug)]
struct Layout {
    topo: Topology,
    leaf_of_site: Vec<usize>,
    leaf_block: Vec<Mat<c64>>,
    // heap index 2..2N: keys inside the subtree with partners outside
    up_keys: Vec<Vec<Key>>,
    // heap index 2..N: keys outside the subtree with partners inside
    down_keys: Vec<Vec<Key>>,
    node_cross: Vec<Vec<CrossGroup>>,
    // heap index 2..N: grouped by the key inside the subtree
    edge_cross: Vec<Vec<(Key, Vec<(f64, Key)>)>>,
}

fn group_terms(list: Vec<(usize, Key, usize, f64, Key)>) -> Vec<CrossGroup> {
    let mut groups: Vec<CrossGroup> = Vec::new();
    for (leg_a, key_a, leg_b, coef, key_b) in list {
        match groups
            .iter_mut()
            .find(|g| g.leg_a == leg_a && g.key_a == key_a && g.leg_b == leg_b)
        {
            Some(g) => g.partners.push((coef, key_b)),
            None => groups.push(CrossGroup {
                leg_a,
                key_a,
                leg_b,
                partners: vec![(coef, key_b)],
            }),
        }
    }
    groups
}

impl Layout {
    fn new(state: &TreeState, terms: &TermList) -> Result<Self> {
        let topo = state.topology();
        let n = topo.num_leaves();
        if terms.num_sites != n {
            return Err(Error::InvalidParameter(format!(
                "terms act on {} sites but the state has {n}",
                terms.num_sites
            )));
        }
        let ordering = state.ordering();
        let leaf_of_site: Vec<usize> = (0..n).map(|s| ordering.leaf_of_site(s)).collect();
        let mut leaf_block = vec![Mat::<c64>::zeros(2, 2); n];
        for t in &terms.one_site {
            let m = op_matrix(&pauli_op(t.op));
            let b = &mut leaf_block[leaf_of_site[t.site]];
            for i in 0..2 {
                for j in 0..2 {
                    b[(i, j)] += m[(i, j)] * t.coef;
                }
            }
        }
        let inside = |e: usize, leaf: usize| {
            let (lo, hi) = topo.leaf_range(e);
            leaf >= lo && leaf < hi
        };
        let side = |q: usize, leaf: usize| {
            if inside(2 * q, leaf) {
                0
            } else if inside(2 * q + 1, leaf) {
                1
            } else {
                2
            }
        };
        let mut up_keys = vec![Vec::new(); 2 * n];
        let mut down_keys = vec![Vec::new(); n];
        let mut node_lists: Vec<Vec<(usize, Key, usize, f64, Key)>> = vec![Vec::new(); n];
        let mut edge_lists: Vec<Vec<(usize, Key, usize, f64, Key)>> = vec![Vec::new(); n];
        let push_unique = |v: &mut Vec<Key>, k: Key| {
            if !v.contains(&k) {
                v.push(k);
            }
        };
        for t in &terms.two_site {
            let (a, b) = t.sites;
            if a == b {
                return Err(Error::InvalidParameter("two-site term on a single site".into()));
            }
            let ka = (a, t.ops.0);
            let kb = (b, t.ops.1);
            let (la, lb) = (leaf_of_site[a], leaf_of_site[b]);
            for e in 2..2 * n {
                let (ia, ib) = (inside(e, la), inside(e, lb));
                if ia == ib {
                    continue;
                }
                let (kin, kout) = if ia { (ka, kb) } else { (kb, ka) };
                push_unique(&mut up_keys[e], kin);
                if e < n {
                    push_unique(&mut down_keys[e], kout);
                    edge_lists[e].push((0, kin, 1, t.coef, kout));
                }
            }
            for q in 1..n {
                let (sa, sb) = (side(q, la), side(q, lb));
                if sa == sb {
                    continue;
                }
                if sa < sb {
                    node_lists[q].push((sa, ka, sb, t.coef, kb));
                } else {
                    node_lists[q].push((sb, kb, sa, t.coef, ka));
                }
            }
        }
        let node_cross = node_lists.into_iter().map(group_terms).collect();
        let edge_cross = edge_lists
            .into_iter()
            .map(|l| {
                group_terms(l)
                    .into_iter()
                    .map(|g| (g.key_a, g.partners))
                    .collect()
            })
            .collect();
        Ok(Self {
            topo,
            leaf_of_site,
            leaf_block,
            up_keys,
            down_keys,
            node_cross,
            edge_cross,
        })
    }

    fn side(&self, q: usize, site: usize) -> usize {
        let leaf = self.leaf_of_site[site];
        let (lo, hi) = self.topo.leaf_range(q);
        let mid = (lo + hi) / 2;
        if leaf < lo || leaf >= hi {
            2
        } else if leaf < mid {
            0
        } else {
            1
        }
    }
}

#[derive(Clone, Debug)]
struct Env {
    block: Mat<c64>,
    open: HashMap<Key, Mat<c64>>,
}

impl Env {
    fn trivial() -> Self {
        Self {
            block: Mat::zeros(1, 1),
            open: HashMap::new(),
        }
    }

    fn op(&self, k: &Key) -> &Mat<c64> {
        self.open.get(k).expect("open operator present for every crossing term")
    }
}

/// Krylov work done by one step.
#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub matvecs: usize,
    pub exponentials: usize,
    /// Exponentials that had to be split into substeps.
    pub split: usize,
    pub max_krylov_error: f64,
}

/// One recorded point of a trajectory.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub avg_x: f64,
    pub energy: f64,
    pub norm: f64,
    pub max_entropy: f64,
}

const ONE: c64 = c64 { re: 1.0, im: 0.0 };

pub struct TdvpEngine {
    state: TreeState,
    layout: Layout,
    cfg: TdvpConfig,
    env_up: Vec<Option<Env>>,
    env_down: Vec<Option<Env>>,
    time: f64,
    log_norm0: f64,
    stats: StepStats,
}

impl TdvpEngine {
    /// Pads `state` to `cfg.chi`, moves its center to the root and builds all
    /// upward environments.
    pub fn new(mut state: TreeState, terms: &TermList, cfg: TdvpConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&state, terms)?;
        state.pad_to(cfg.chi)?;
        state.move_center(1)?;
        let n = layout.topo.num_leaves();
        let mut env_up: Vec<Option<Env>> = vec![None; 2 * n];
        for leaf in 0..n {
            let e = n + leaf;
            let open = layout.up_keys[e]
                .iter()
                .map(|&k| (k, op_matrix(&pauli_op(k.1))))
                .collect();
            env_up[e] = Some(Env {
                block: layout.leaf_block[leaf].clone(),
                open,
            });
        }
        let mut env_down = vec![None; n];
        env_down[1] = Some(Env::trivial());
        let log_norm0 = state.log_norm();
        let mut engine = Self {
            state,
            layout,
            cfg,
            env_up,
            env_down,
            time: 0.0,
            log_norm0,
            stats: StepStats::default(),
        };
        for q in engine.layout.topo.post_order() {
            if q >= 2 {
                let env = engine.combine(q, 2);
                engine.env_up[q] = Some(env);
            }
        }
        Ok(engine)
    }

    pub fn state(&self) -> &TreeState {
        &self.state
    }

    pub fn into_state(self) -> TreeState {
        self.state
    }

    pub fn config(&self) -> &TdvpConfig {
        &self.cfg
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Krylov statistics accumulated since the last call.
    pub fn take_stats(&mut self) -> StepStats {
        std::mem::take(&mut self.stats)
    }

    fn env_of_leg(&self, q: usize, leg: usize) -> &Env {
        let e = if leg == 2 { &self.env_down[q] } else { &self.env_up[2 * q + leg] };
        e.as_ref().expect("environment computed before use")
    }

    /// Environment on output leg `o` of node `q`, built from the other two legs.
    fn combine(&self, q: usize, o: usize) -> Env {
        let t = self.state.tensor(q);
        let (i, j) = match o {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let (ei, ej) = (self.env_of_leg(q, i), self.env_of_leg(q, j));
        let mut x = t.apply_leg(i, ei.block.as_ref());
        t.apply_leg_into(j, ej.block.as_ref(), ONE, &mut x, Accum::Add);
        for g in &self.layout.node_cross[q] {
            if (g.leg_a, g.leg_b) != (i, j) {
                continue;
            }
            let u = t.apply_leg(i, ei.op(&g.key_a).as_ref());
            let m = weighted_sum(ej, &g.partners);
            u.apply_leg_into(j, m.as_ref(), ONE, &mut x, Accum::Add);
        }
        let block = Tensor3::contract_except(t, &x, o);
        let keys = if o == 2 {
            &self.layout.up_keys[q]
        } else {
            &self.layout.down_keys[2 * q + o]
        };
        let open = keys
            .iter()
            .map(|k| {
                let leg = self.layout.side(q, k.0);
                debug_assert!(leg == i || leg == j);
                let u = t.apply_leg(leg, self.env_of_leg(q, leg).op(k).as_ref());
                (*k, Tensor3::contract_except(t, &u, o))
            })
            .collect();
        Env { block, open }
    }

    fn node_heff(&self, q: usize, t: &Tensor3, out: &mut Tensor3) {
        let envs = [self.env_of_leg(q, 0), self.env_of_leg(q, 1), self.env_of_leg(q, 2)];
        for (leg, env) in envs.iter().enumerate() {
            let acc = if leg == 0 { Accum::Replace } else { Accum::Add };
            t.apply_leg_into(leg, env.block.as_ref(), ONE, out, acc);
        }
        for g in &self.layout.node_cross[q] {
            let u = t.apply_leg(g.leg_a, envs[g.leg_a].op(&g.key_a).as_ref());
            let m = weighted_sum(envs[g.leg_b], &g.partners);
            u.apply_leg_into(g.leg_b, m.as_ref(), ONE, out, Accum::Add);
        }
    }

    /// `H R = A R + R B^T + sum coef O_a R O_b^T`; `inside_is_a` tells whether
    /// the rows of `R` belong to the subtree below edge `e`.
    fn bond_heff(&self, e: usize, inside_is_a: bool, r: MatRef<'_, c64>, mut out: MatMut<'_, c64>) {
        let up = self.env_up[e].as_ref().expect("upward environment");
        let down = self.env_down[e].as_ref().expect("downward environment");
        let (a, b) = if inside_is_a { (up, down) } else { (down, up) };
        faer::linalg::matmul::matmul(out.as_mut(), Accum::Replace, a.block.as_ref(), r, ONE, Par::Seq);
        faer::linalg::matmul::matmul(out.as_mut(), Accum::Add, r, b.block.transpose(), ONE, Par::Seq);
        for (kin, partners) in &self.layout.edge_cross[e] {
            let o_in = up.op(kin);
            let o_out = weighted_sum(down, partners);
            let (oa, ob) = if inside_is_a { (o_in, &o_out) } else { (&o_out, o_in) };
            let tmp = oa * r;
            faer::linalg::matmul::matmul(out.as_mut(), Accum::Add, tmp.as_ref(), ob.transpose(), ONE, Par::Seq);
        }
    }

    fn record(&mut self, st: StepStats) {
        self.stats.matvecs += st.matvecs;
        self.stats.exponentials += st.exponentials;
        self.stats.split += st.split;
        self.stats.max_krylov_error = self.stats.max_krylov_error.max(st.max_krylov_error);
    }

    fn evolve_node(&mut self, q: usize, tau: f64) -> Result<()> {
        let dims = self.state.tensor(q).dims();
        let v = self.state.tensor(q).data().to_vec();
        let mut input = Tensor3::zeros(dims);
        let mut scratch = Tensor3::zeros(dims);
        let (out, st) = {
            let this: &Self = self;
            let apply = |x: &[c64], y: &mut [c64]| {
                input.data_mut().copy_from_slice(x);
                this.node_heff(q, &input, &mut scratch);
                y.copy_from_slice(scratch.data());
            };
            expm_adaptive(apply, v, tau, self.cfg.krylov_dim, self.cfg.krylov_tol)?
        };
        self.record(st);
        *self.state.tensor_mut(q) = Tensor3::from_vec(dims, out)?;
        Ok(())
    }

    /// Evolves the bond matrix on edge `e` by `exp(+i H tau)`.
    fn evolve_bond(&mut self, e: usize, inside_is_a: bool, r: Mat<c64>, tau: f64) -> Result<Mat<c64>> {
        let (rows, cols) = (r.nrows(), r.ncols());
        let v: Vec<c64> = (0..cols).flat_map(|j| (0..rows).map(move |i| (i, j))).map(|(i, j)| r[(i, j)]).collect();
        let (out, st) = {
            let this: &Self = self;
            let apply = |x: &[c64], y: &mut [c64]| {
                let xr = MatRef::from_column_major_slice(x, rows, cols);
                let yr = MatMut::from_column_major_slice_mut(y, rows, cols);
                this.bond_heff(e, inside_is_a, xr, yr);
            };
            expm_adaptive(apply, v, -tau, self.cfg.krylov_dim, self.cfg.krylov_tol)?
        };
        self.record(st);
        Ok(MatRef::from_column_major_slice(&out, rows, cols).to_owned())
    }

    /// Center `q` -> child on `leg`; optionally evolves the bond backward.
    fn move_down(&mut self, q: usize, leg: usize, tau: Option<f64>) -> Result<()> {
        let c = 2 * q + leg;
        let (qt, mut r) = self.state.tensor(q).qr_toward(leg);
        *self.state.tensor_mut(q) = qt;
        let env = self.combine(q, leg);
        self.env_down[c] = Some(env);
        if let Some(tau) = tau {
            r = self.evolve_bond(c, false, r, tau)?;
        }
        let child = self.state.tensor(c).apply_leg(2, r.as_ref());
        *self.state.tensor_mut(c) = child;
        self.state.set_center(c);
        Ok(())
    }

    /// Center `c` -> its parent; optionally evolves the bond backward.
    fn move_up(&mut self, c: usize, tau: Option<f64>) -> Result<()> {
        let q = c / 2;
        let (qt, mut r) = self.state.tensor(c).qr_toward(2);
        *self.state.tensor_mut(c) = qt;
        let env = self.combine(c, 2);
        self.env_up[c] = Some(env);
        if let Some(tau) = tau {
            r = self.evolve_bond(c, true, r, tau)?;
        }
        let parent = self.state.tensor(q).apply_leg(c % 2, r.as_ref());
        *self.state.tensor_mut(q) = parent;
        self.state.set_center(q);
        Ok(())
    }

    fn internal_children(&self, q: usize) -> impl DoubleEndedIterator<Item = usize> {
        let n = self.layout.topo.num_leaves();
        (0..2).filter(move |leg| 2 * q + leg < n)
    }

    fn forward(&mut self, q: usize, tau: f64) -> Result<()> {
        for leg in self.internal_children(q).collect::<Vec<_>>() {
            let c = 2 * q + leg;
            self.move_down(q, leg, None)?;
            self.forward(c, tau)?;
            self.evolve_node(c, tau)?;
            self.move_up(c, Some(tau))?;
        }
        Ok(())
    }

    fn reverse(&mut self, q: usize, tau: f64) -> Result<()> {
        for leg in self.internal_children(q).rev().collect::<Vec<_>>() {
            let c = 2 * q + leg;
            self.move_down(q, leg, Some(tau))?;
            self.evolve_node(c, tau)?;
            self.reverse(c, tau)?;
            self.move_up(c, None)?;
        }
        Ok(())
    }

    /// One full second-order step of length `dt`. The state is renormalized
    /// afterwards; the returned value is the norm before renormalization.
    pub fn step(&mut self) -> Result<f64> {
        let dt = self.cfg.dt;
        debug_assert_eq!(self.state.center(), 1);
        self.forward(1, dt / 2.0)?;
        self.evolve_node(1, dt)?;
        self.reverse(1, dt / 2.0)?;
        self.time += dt;
        Ok(self.state.normalize())
    }

    /// Alias of [`Self::step`].
    pub fn sweep(&mut self) -> Result<f64> {
        self.step()
    }

    /// <H> evaluated at the center with its environments.
    pub fn energy(&self) -> f64 {
        let q = self.state.center();
        let t = self.state.tensor(q);
        let mut h = Tensor3::zeros(t.dims());
        self.node_heff(q, t, &mut h);
        t.inner(&h).re / t.norm_sqr()
    }

    /// Energy computed at every node by walking the center through the tree;
    /// all entries agree when the environments are consistent.
    pub fn energies_at_all_nodes(&mut self) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        self.visit(1, &mut out)?;
        Ok(out)
    }

    fn visit(&mut self, q: usize, out: &mut Vec<f64>) -> Result<()> {
        out.push(self.energy());
        for leg in self.internal_children(q).collect::<Vec<_>>() {
            self.move_down(q, leg, None)?;
            self.visit(2 * q + leg, out)?;
            self.move_up(2 * q + leg, None)?;
        }
        Ok(())
    }

    /// Norm of the evolved vector relative to the initial one, accumulated
    /// over all renormalizations.
    pub fn accumulated_norm(&self) -> f64 {
        (self.state.log_norm() - self.log_norm0).exp()
    }

    pub fn sample(&self) -> Result<Sample> {
        let d = self.state.edge_densities();
        let n = self.state.num_sites();
        let x = pauli_op(Pauli::X);
        let norm2 = self.state.norm().powi(2);
        let avg_x = (0..n).map(|leaf| d.local(leaf, &x).re).sum::<f64>() / (n as f64 * norm2);
        let mut max_entropy: f64 = 0.0;
        for e in 2..n {
            max_entropy = max_entropy.max(d.entropy(e)?);
        }
        Ok(Sample {
            t: self.time,
            avg_x,
            energy: self.energy(),
            norm: self.accumulated_norm(),
            max_entropy,
        })
    }

    /// Steps until `t_max`, sampling after every step (and at t = 0).
    /// `on_step` sees the state after each step.
    pub fn run<F>(&mut self, t_max: f64, mut on_step: F) -> Result<Vec<Sample>>
    where
        F: FnMut(&Sample, &TreeState) -> Result<()>,
    {
        let steps = num_steps(t_max, self.cfg.dt)?;
        let mut out = Vec::with_capacity(steps + 1);
        let s = self.sample()?;
        on_step(&s, &self.state)?;
        out.push(s);
        for _ in 0..steps {
            self.step()?;
            let s = self.sample()?;
            on_step(&s, &self.state)?;
            out.push(s);
        }
        Ok(out)
    }
}

/// Number of steps of size `dt` covering `t_max` (rounded to the nearest
/// whole step).
pub fn num_steps(t_max: f64, dt: f64) -> Result<usize> {
    if !(t_max >= 0.0) || !t_max.is_finite() {
        return Err(Error::InvalidParameter(format!("t_max must be nonnegative, got {t_max}")));
    }
    Ok((t_max / dt).round() as usize)
}

/// Pads `state`, evolves it to `t_max` and returns the trajectory and the
/// final state.
pub fn evolve<F>(state: TreeState, terms: &TermList, cfg: TdvpConfig, t_max: f64, on_step: F) -> Result<(Vec<Sample>, TreeState)>
where
    F: FnMut(&Sample, &TreeState) -> Result<()>,
{
    let mut engine = TdvpEngine::new(state, terms, cfg)?;
    let series = engine.run(t_max, on_step)?;
    Ok((series, engine.into_state()))
}

/// `exp(-i t H) v`, halving the interval where the Krylov space is too small.
fn expm_adaptive<F>(mut apply: F, v: Vec<c64>, t: f64, dim: usize, tol: f64) -> Result<(Vec<c64>, StepStats)>
where
    F: FnMut(&[c64], &mut [c64]),
{
    let mut st = StepStats {
        exponentials: 1,
        ..StepStats::default()
    };
    let mut counted = |x: &[c64], y: &mut [c64]| {
        st.matvecs += 1;
        apply(x, y)
    };
    let mut pending = vec![(t, 0u32)];
    let mut v = v;
    let mut split = false;
    let mut worst: f64 = 0.0;
    while let Some((tau, depth)) = pending.pop() {
        match krylov_expm_apply(&mut counted, &v, tau, tol, dim) {
            Ok(out) => {
                v = out.vector;
                worst = worst.max(out.error);
            }
            Err(Error::KrylovNonConvergence { .. }) if depth < 12 => {
                split = true;
                pending.push((tau / 2.0, depth + 1));
                pending.push((tau / 2.0, depth + 1));
            }
            Err(e) => return Err(e),
        }
    }
    st.split = split as usize;
    st.max_krylov_error = worst;
    Ok((v, st))
}

fn weighted_sum(env: &Env, partners: &[(f64, Key)]) -> Mat<c64> {
    let first = env.op(&partners[0].1);
    let mut m = Mat::<c64>::zeros(first.nrows(), first.ncols());
    for (coef, k) in partners {
        let o = env.op(k);
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                m[(i, j)] += o[(i, j)] * coef;
            }
        }
    }
    m
}
