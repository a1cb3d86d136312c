//! Binary tree tensor network over Hilbert-ordered leaves.
//!
//! Internal nodes use heap numbering: the root is 1 and node `q` has children
//! `2q` and `2q + 1`. With `N` leaves there are `N - 1` nodes; a child index
//! `c >= N` denotes the physical leaf `c - N`, whose leg has dimension 2.
//! Node tensors carry legs (left child, right child, parent); the root's
//! parent leg has dimension 1.
//!
//! Canonical form: every node other than the center is an isometry toward the
//! center, so the squared norm of the state is the squared norm of the center
//! tensor.

use faer::{c64, Mat, MatRef};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{Pauli, TermList};
use crate::lattice::{hilbert_ordering, LatticeGeometry, SiteOrdering};
use crate::shapes::ShapeMask;
use crate::tensor::{identity, Tensor3};

/// Largest site count that [`TreeState::flatten`] expands.
pub const FLATTEN_LIMIT: usize = 20;

pub const CHECKPOINT_VERSION: u32 = 1;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Z-basis components of |+x> and |-x>.
pub fn x_eigenvector(down: bool) -> [c64; 2] {
    let s = if down { -FRAC_1_SQRT_2 } else { FRAC_1_SQRT_2 };
    [c64::new(FRAC_1_SQRT_2, 0.0), c64::new(s, 0.0)]
}

pub type Op2 = [[c64; 2]; 2];

pub fn pauli_op(p: Pauli) -> Op2 {
    p.matrix().map(|row| row.map(|v| c64::new(v, 0.0)))
}

pub fn is_hermitian(op: &Op2) -> bool {
    (0..2).all(|i| (0..2).all(|j| (op[i][j] - op[j][i].conj()).norm() < 1e-12))
}

pub(crate) fn op_matrix(op: &Op2) -> Mat<c64> {
    Mat::from_fn(2, 2, |i, j| op[i][j])
}

#[derive(Clone, Debug, PartialEq)]
pub enum Observable {
    /// <X_r> at a canonical site index.
    LocalX(usize),
    LocalZ(usize),
    /// Mean of <X_r> over all sites.
    AverageX,
    /// -coupling * <X_a X_b>.
    BondEnergy { sites: (usize, usize), coupling: f64 },
    /// Von Neumann entropy across the bond above a node (heap index >= 2).
    SubtreeEntropy(usize),
    /// Arbitrary single-site operator; must be Hermitian.
    Local { site: usize, op: Op2 },
    Identity,
}

/// Child slot of a node.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Child {
    Node(usize),
    Leaf(usize),
}

/// Shape of the perfect binary tree over `num_leaves` leaves.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    num_leaves: usize,
}

impl Topology {
    pub fn new(num_leaves: usize) -> Result<Self> {
        if num_leaves < 2 || !num_leaves.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "tree needs a power-of-two leaf count >= 2, got {num_leaves}"
            )));
        }
        Ok(Self { num_leaves })
    }

    pub fn num_leaves(&self) -> usize {
        self.num_leaves
    }

    /// Nodes are `1..num_nodes() + 1`.
    pub fn num_nodes(&self) -> usize {
        self.num_leaves - 1
    }

    pub fn is_node(&self, q: usize) -> bool {
        q >= 1 && q < self.num_leaves
    }

    pub fn child(&self, q: usize, leg: usize) -> Child {
        let c = 2 * q + leg;
        if c >= self.num_leaves {
            Child::Leaf(c - self.num_leaves)
        } else {
            Child::Node(c)
        }
    }

    /// Leaves under heap index `q` (node or `N + leaf`), as a half-open range.
    pub fn leaf_range(&self, q: usize) -> (usize, usize) {
        let level = usize::BITS - 1 - q.leading_zeros();
        let width = (2 * self.num_leaves) >> (level + 1);
        let lo = (q - (1 << level)) * width;
        (lo, lo + width)
    }

    pub fn subtree_size(&self, q: usize) -> usize {
        let (lo, hi) = self.leaf_range(q);
        hi - lo
    }

    /// Post-order list of nodes (children before parents).
    pub fn post_order(&self) -> Vec<usize> {
        (1..self.num_leaves).rev().collect()
    }

    /// Bond dimension the edge above heap index `q` gets when padded to `chi`.
    pub fn padded_dim(&self, q: usize, chi: usize) -> usize {
        if q == 1 {
            return 1;
        }
        if q >= self.num_leaves {
            return 2;
        }
        let below = self.subtree_size(q);
        let above = self.num_leaves - below;
        let cap = |k: usize| if k >= 60 { usize::MAX } else { 1usize << k };
        chi.min(cap(below)).min(cap(above))
    }

    /// Path of nodes from `a` to `b`, both included.
    pub fn path(&self, a: usize, b: usize) -> Vec<usize> {
        let (mut x, mut y) = (a, b);
        let mut up = vec![];
        let mut down = vec![];
        while x != y {
            if x > y {
                up.push(x);
                x /= 2;
            } else {
                down.push(y);
                y /= 2;
            }
        }
        up.push(x);
        up.extend(down.into_iter().rev());
        up
    }
}

#[derive(Clone, Debug)]
pub struct TreeState {
    ordering: SiteOrdering,
    topology: Topology,
    // index 0 unused
    tensors: Vec<Tensor3>,
    center: usize,
    chi_max: usize,
    log_norm: f64,
}

/// Reduced density matrices on every edge of a state, computed top-down.
///
/// `edge[q]` is indexed by heap position (node or `N + leaf`) and holds
/// `sigma[b', b]` such that `<O> = sum sigma[b', b] <b'|O|b>` for operators
/// supported below the edge.
pub struct EdgeDensities {
    edge: Vec<Mat<c64>>,
    num_leaves: usize,
}

impl EdgeDensities {
    pub fn leaf(&self, leaf: usize) -> &Mat<c64> {
        &self.edge[self.num_leaves + leaf]
    }

    pub fn local(&self, leaf: usize, op: &Op2) -> c64 {
        let s = self.leaf(leaf);
        let mut acc = c64::new(0.0, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                acc += s[(i, j)] * op[i][j];
            }
        }
        acc
    }

    /// Eigenvalues of the reduced density matrix above heap index `q >= 2`.
    pub fn spectrum(&self, q: usize) -> Result<Vec<f64>> {
        let s = &self.edge[q];
        let eig = s
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
        let d = eig.S();
        Ok((0..s.nrows()).map(|i| d[i].re.max(0.0)).collect())
    }

    pub fn entropy(&self, q: usize) -> Result<f64> {
        let p = self.spectrum(q)?;
        let total: f64 = p.iter().sum();
        Ok(p.iter()
            .filter(|&&x| x > 1e-300 * total.max(1e-300))
            .map(|&x| {
                let x = x / total;
                -x * x.ln()
            })
            .sum())
    }
}

impl TreeState {
    /// Bond-dimension-1 product state; masked sites hold |-x>, the rest |+x>.
    pub fn product_state(ordering: &SiteOrdering, mask: &ShapeMask, chi_max: usize) -> Result<Self> {
        if (mask.width(), mask.height()) != (ordering.width(), ordering.height()) {
            return Err(Error::InvalidShape(format!(
                "mask is {}x{} but the lattice is {}x{}",
                mask.width(),
                mask.height(),
                ordering.width(),
                ordering.height()
            )));
        }
        let leaves: Vec<[c64; 2]> = (0..ordering.num_sites())
            .map(|leaf| x_eigenvector(mask.is_set(ordering.site_of_leaf(leaf))))
            .collect();
        Self::from_leaf_vectors(ordering, &leaves, chi_max)
    }

    /// Product state from arbitrary normalized leaf vectors, in leaf order.
    pub fn from_leaf_vectors(ordering: &SiteOrdering, leaves: &[[c64; 2]], chi_max: usize) -> Result<Self> {
        if chi_max < 1 {
            return Err(Error::InvalidParameter("chi_max must be at least 1".into()));
        }
        let topology = Topology::new(ordering.num_sites())?;
        if leaves.len() != topology.num_leaves() {
            return Err(Error::InvalidParameter("one vector per leaf required".into()));
        }
        let n = topology.num_leaves();
        let mut tensors = vec![Tensor3::zeros([0, 0, 0])];
        for q in 1..n {
            let t = match (topology.child(q, 0), topology.child(q, 1)) {
                (Child::Leaf(a), Child::Leaf(b)) => {
                    let mut t = Tensor3::zeros([2, 2, 1]);
                    for i in 0..2 {
                        for j in 0..2 {
                            t.set(i, j, 0, leaves[a][i] * leaves[b][j]);
                        }
                    }
                    t
                }
                _ => Tensor3::from_vec([1, 1, 1], vec![c64::new(1.0, 0.0)])?,
            };
            tensors.push(t);
        }
        let mut state = Self {
            ordering: ordering.clone(),
            topology,
            tensors,
            center: 1,
            chi_max,
            log_norm: 0.0,
        };
        state.normalize();
        Ok(state)
    }

    /// Random canonical state with every bond at its padded dimension.
    pub fn random(ordering: &SiteOrdering, chi_max: usize, rng: &mut impl Rng) -> Result<Self> {
        let topology = Topology::new(ordering.num_sites())?;
        let n = topology.num_leaves();
        let mut tensors = vec![Tensor3::zeros([0, 0, 0]); n];
        for q in topology.post_order() {
            let dims = [
                topology.padded_dim(2 * q, chi_max),
                topology.padded_dim(2 * q + 1, chi_max),
                topology.padded_dim(q, chi_max),
            ];
            let data = (0..dims.iter().product::<usize>())
                .map(|_| c64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let t = Tensor3::from_vec(dims, data)?;
            tensors[q] = if q == 1 { t } else { t.qr_toward(2).0 };
        }
        let mut state = Self {
            ordering: ordering.clone(),
            topology,
            tensors,
            center: 1,
            chi_max,
            log_norm: 0.0,
        };
        state.normalize();
        state.log_norm = 0.0;
        Ok(state)
    }

    /// Canonical tree state of a dense vector (bit `s` of the index = site
    /// `s`), by hierarchical SVD. Bonds are capped at `chi_max`.
    pub fn from_dense(ordering: &SiteOrdering, amplitudes: &[c64], chi_max: usize) -> Result<Self> {
        let topology = Topology::new(ordering.num_sites())?;
        let n = topology.num_leaves();
        if n > FLATTEN_LIMIT {
            return Err(Error::TooLarge {
                sites: n,
                limit: FLATTEN_LIMIT,
            });
        }
        if amplitudes.len() != 1 << n {
            return Err(Error::InvalidParameter("amplitude count must be 2^N".into()));
        }
        // leaf-ordered vector: bit k = leaf k
        let mut psi = vec![c64::new(0.0, 0.0); 1 << n];
        for (idx, &a) in amplitudes.iter().enumerate() {
            let mut j = 0usize;
            for s in 0..n {
                if idx >> s & 1 == 1 {
                    j |= 1 << ordering.leaf_of_site(s);
                }
            }
            psi[j] = a;
        }
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        // bases[q]: (2^{|S_q|} x dim) isometry, rows indexed by the leaf bits of q's subtree
        let mut bases: Vec<Option<Mat<c64>>> = vec![None; 2 * n];
        let mut tensors = vec![Tensor3::zeros([0, 0, 0]); n];
        for q in topology.post_order() {
            let basis = |c: usize, bases: &Vec<Option<Mat<c64>>>| -> Mat<c64> {
                if c >= n {
                    identity(2)
                } else {
                    bases[c].clone().expect("children processed first")
                }
            };
            let bl = basis(2 * q, &bases);
            let br = basis(2 * q + 1, &bases);
            let (lo, hi) = topology.leaf_range(q);
            let k = hi - lo;
            // M[sub, rest] with sub = bits lo..hi, rest = other bits
            let rest_bits = n - k;
            let mut m = Mat::<c64>::zeros(1 << k, 1 << rest_bits);
            for (j, &a) in psi.iter().enumerate() {
                let sub = (j >> lo) & ((1 << k) - 1);
                let rest = (j & ((1 << lo) - 1)) | ((j >> hi) << lo);
                m[(sub, rest)] = a;
            }
            // project on the children bases: sub = l + 2^{kl} r
            let kl = k / 2;
            let (dl, dr) = (bl.ncols(), br.ncols());
            let mut proj = Mat::<c64>::zeros(dl * dr, 1 << rest_bits);
            for rest in 0..1usize << rest_bits {
                for r in 0..1usize << (k - kl) {
                    for l in 0..1usize << kl {
                        let v = m[(l + (r << kl), rest)];
                        if v == c64::new(0.0, 0.0) {
                            continue;
                        }
                        for b in 0..dr {
                            let vb = v * br[(r, b)].conj();
                            for a in 0..dl {
                                proj[(a + dl * b, rest)] += vb * bl[(l, a)].conj();
                            }
                        }
                    }
                }
            }
            if q == 1 {
                let mut t = Tensor3::zeros([dl, dr, 1]);
                for b in 0..dr {
                    for a in 0..dl {
                        t.set(a, b, 0, proj[(a + dl * b, 0)]);
                    }
                }
                tensors[1] = t;
                break;
            }
            let svd = proj
                .thin_svd()
                .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
            let keep = topology.padded_dim(q, chi_max).min(dl * dr);
            let u = svd.U();
            let mut t = Tensor3::zeros([dl, dr, keep]);
            for c in 0..keep.min(u.ncols()) {
                for b in 0..dr {
                    for a in 0..dl {
                        t.set(a, b, c, u[(a + dl * b, c)]);
                    }
                }
            }
            if keep > u.ncols() {
                complete_isometry(&mut t, u.ncols());
            }
            // basis of q in the leaf bits of its subtree
            let mut bq = Mat::<c64>::zeros(1 << k, keep);
            for c in 0..keep {
                for r in 0..1usize << (k - kl) {
                    for l in 0..1usize << kl {
                        let mut acc = c64::new(0.0, 0.0);
                        for b in 0..dr {
                            for a in 0..dl {
                                acc += bl[(l, a)] * br[(r, b)] * t.get(a, b, c);
                            }
                        }
                        bq[(l + (r << kl), c)] = acc;
                    }
                }
            }
            bases[q] = Some(bq);
            tensors[q] = t;
        }
        let mut state = Self {
            ordering: ordering.clone(),
            topology,
            tensors,
            center: 1,
            chi_max,
            log_norm: 0.0,
        };
        if norm > 0.0 {
            state.normalize();
            state.log_norm = 0.0;
        }
        Ok(state)
    }

    pub fn ordering(&self) -> &SiteOrdering {
        &self.ordering
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn num_sites(&self) -> usize {
        self.topology.num_leaves()
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn chi_max(&self) -> usize {
        self.chi_max
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn tensor(&self, q: usize) -> &Tensor3 {
        &self.tensors[q]
    }

    pub(crate) fn tensor_mut(&mut self, q: usize) -> &mut Tensor3 {
        &mut self.tensors[q]
    }

    pub(crate) fn set_center(&mut self, q: usize) {
        self.center = q;
    }

    /// Dimension of the bond above each node `2..N`, indexed by heap number.
    pub fn bond_dims(&self) -> Vec<usize> {
        (0..self.topology.num_leaves())
            .map(|q| if q < 2 { 0 } else { self.tensors[q].dim(2) })
            .collect()
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(0)
    }

    /// Norm of the represented vector (center tensor norm).
    pub fn norm(&self) -> f64 {
        self.tensors[self.center].norm_sqr().sqrt()
    }

    /// Rescales the center to unit norm, adding the removed factor to the
    /// log-norm. Returns the norm before rescaling.
    pub fn normalize(&mut self) -> f64 {
        let n = self.norm();
        if n > 0.0 {
            self.tensors[self.center].scale(1.0 / n);
            self.log_norm += n.ln();
        }
        n
    }

    fn check_node(&self, q: usize) -> Result<()> {
        if self.topology.is_node(q) {
            Ok(())
        } else {
            Err(Error::InvalidNode(q))
        }
    }

    /// Moves the center one step to a neighboring node.
    pub(crate) fn shift_center(&mut self, to: usize) {
        let from = self.center;
        if to == from / 2 {
            let (q, r) = self.tensors[from].qr_toward(2);
            self.tensors[from] = q;
            let leg = from % 2;
            self.tensors[to] = self.tensors[to].apply_leg(leg, r.as_ref());
        } else {
            debug_assert_eq!(to / 2, from);
            let leg = to % 2;
            let (q, r) = self.tensors[from].qr_toward(leg);
            self.tensors[from] = q;
            self.tensors[to] = self.tensors[to].apply_leg(2, r.as_ref());
        }
        self.center = to;
    }

    pub fn move_center(&mut self, node: usize) -> Result<()> {
        self.check_node(node)?;
        let path = self.topology.path(self.center, node);
        for &q in &path[1..] {
            self.shift_center(q);
        }
        Ok(())
    }

    /// Largest deviation from the isometry condition over non-center nodes.
    pub fn isometry_defect(&self) -> f64 {
        let c = self.center;
        (1..self.topology.num_leaves())
            .filter(|&q| q != c)
            .map(|q| {
                let toward = self.topology.path(q, c)[1];
                let leg = if toward == q / 2 { 2 } else { toward % 2 };
                self.tensors[q].isometry_defect(leg)
            })
            .fold(0.0, f64::max)
    }

    /// Grows every bond to `min(chi, 2^below, 2^above)` by zero-padding and
    /// completing isometries; the represented vector is unchanged.
    pub fn pad_to(&mut self, chi: usize) -> Result<()> {
        if chi < 1 {
            return Err(Error::InvalidParameter("chi must be at least 1".into()));
        }
        self.move_center(1)?;
        let topo = self.topology;
        for q in topo.post_order() {
            let t = &self.tensors[q];
            let [d0, d1, d2] = t.dims();
            let target = [
                topo.padded_dim(2 * q, chi).max(d0),
                topo.padded_dim(2 * q + 1, chi).max(d1),
                topo.padded_dim(q, chi).max(d2),
            ];
            if target == t.dims() {
                continue;
            }
            let mut out = Tensor3::zeros(target);
            for i2 in 0..d2 {
                for i1 in 0..d1 {
                    for i0 in 0..d0 {
                        out.set(i0, i1, i2, t.get(i0, i1, i2));
                    }
                }
            }
            if q != 1 && target[2] > d2 {
                complete_isometry(&mut out, d2);
            }
            self.tensors[q] = out;
        }
        self.chi_max = self.chi_max.max(chi);
        Ok(())
    }

    /// Edge densities; requires the center at the root (a moved copy is used
    /// otherwise).
    pub fn edge_densities(&self) -> EdgeDensities {
        if self.center != 1 {
            let mut s = self.clone();
            s.move_center(1).expect("root exists");
            return s.edge_densities();
        }
        let n = self.topology.num_leaves();
        let mut edge = vec![Mat::<c64>::zeros(0, 0); 2 * n];
        let root = &self.tensors[1];
        for leg in 0..2 {
            edge[2 + leg] = Tensor3::contract_except(root, root, leg);
        }
        for q in 2..n {
            let t = &self.tensors[q];
            let weighted = t.apply_leg(2, edge[q].as_ref());
            for leg in 0..2 {
                edge[2 * q + leg] = Tensor3::contract_except(t, &weighted, leg);
            }
        }
        EdgeDensities { edge, num_leaves: n }
    }

    /// <op> at every site, canonical order.
    pub fn local_expectations(&self, op: &Op2) -> Vec<f64> {
        let d = self.edge_densities();
        let norm2 = self.norm().powi(2);
        (0..self.num_sites())
            .map(|s| d.local(self.ordering.leaf_of_site(s), op).re / norm2)
            .collect()
    }

    pub fn local_x(&self) -> Vec<f64> {
        self.local_expectations(&pauli_op(Pauli::X))
    }

    pub fn average_x(&self) -> f64 {
        let v = self.local_x();
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Entropy across every bond, indexed by heap number (0 for 0 and 1).
    pub fn bond_entropies(&self) -> Result<Vec<f64>> {
        let d = self.edge_densities();
        let mut out = vec![0.0; self.topology.num_leaves()];
        for (q, slot) in out.iter_mut().enumerate().skip(2) {
            *slot = d.entropy(q)?;
        }
        Ok(out)
    }

    pub fn max_entropy(&self) -> Result<f64> {
        Ok(self.bond_entropies()?.into_iter().fold(0.0, f64::max))
    }

    pub fn subtree_entropy(&self, node: usize) -> Result<f64> {
        if node < 2 || !self.topology.is_node(node) {
            return Err(Error::InvalidNode(node));
        }
        self.edge_densities().entropy(node)
    }

    /// <prod_i op_i> for operators on distinct sites.
    pub fn product_expectation(&self, ops: &[(usize, Op2)]) -> Result<c64> {
        let n = self.num_sites();
        let mut at_leaf: Vec<Option<Mat<c64>>> = vec![None; n];
        for (site, op) in ops {
            if *site >= n {
                return Err(Error::InvalidObservable(format!("site {site} out of range")));
            }
            let leaf = self.ordering.leaf_of_site(*site);
            if at_leaf[leaf].is_some() {
                return Err(Error::InvalidObservable(format!("site {site} repeated")));
            }
            at_leaf[leaf] = Some(op_matrix(op));
        }
        let state = if self.center == 1 {
            std::borrow::Cow::Borrowed(self)
        } else {
            let mut s = self.clone();
            s.move_center(1)?;
            std::borrow::Cow::Owned(s)
        };
        let topo = self.topology;
        // sub[q]: operator matrix on the edge above q; None = identity
        let mut sub: Vec<Option<Mat<c64>>> = vec![None; 2 * n];
        for (leaf, m) in at_leaf.into_iter().enumerate() {
            sub[n + leaf] = m;
        }
        for q in topo.post_order() {
            let t = state.tensor(q);
            if sub[2 * q].is_none() && sub[2 * q + 1].is_none() {
                continue;
            }
            let mut u = t.clone();
            for leg in 0..2 {
                if let Some(m) = &sub[2 * q + leg] {
                    u = u.apply_leg(leg, m.as_ref());
                }
            }
            if q == 1 {
                let norm2 = t.norm_sqr();
                return Ok(t.inner(&u) / norm2);
            }
            // Ket side carries the operator; the bra side is the bare tensor.
            // X[b', b] = <b'|O|b>, which is the matrix applied to the parent.
            sub[q] = Some(Tensor3::contract_except(t, &u, 2));
        }
        Ok(c64::new(1.0, 0.0))
    }

    pub fn expectation(&self, obs: &Observable) -> Result<f64> {
        let n = self.num_sites();
        let check = |s: usize| {
            if s < n {
                Ok(())
            } else {
                Err(Error::InvalidObservable(format!("site {s} out of range")))
            }
        };
        match obs {
            Observable::LocalX(s) => {
                check(*s)?;
                Ok(self.product_expectation(&[(*s, pauli_op(Pauli::X))])?.re)
            }
            Observable::LocalZ(s) => {
                check(*s)?;
                Ok(self.product_expectation(&[(*s, pauli_op(Pauli::Z))])?.re)
            }
            Observable::AverageX => Ok(self.average_x()),
            Observable::BondEnergy { sites: (a, b), coupling } => {
                check(*a)?;
                check(*b)?;
                if a == b {
                    return Err(Error::InvalidObservable("bond needs two distinct sites".into()));
                }
                let x = pauli_op(Pauli::X);
                Ok(-coupling * self.product_expectation(&[(*a, x), (*b, x)])?.re)
            }
            Observable::SubtreeEntropy(q) => self.subtree_entropy(*q),
            Observable::Identity => Ok(1.0),
            Observable::Local { site, op } => {
                check(*site)?;
                if !is_hermitian(op) {
                    return Err(Error::InvalidObservable("operator is not Hermitian".into()));
                }
                Ok(self.product_expectation(&[(*site, *op)])?.re)
            }
        }
    }

    /// <H> summed term by term; cost grows with the term count, intended for
    /// checks on small systems.
    pub fn energy(&self, terms: &TermList) -> Result<f64> {
        let mut e = 0.0;
        for t in &terms.one_site {
            e += t.coef * self.product_expectation(&[(t.site, pauli_op(t.op))])?.re;
        }
        for t in &terms.two_site {
            let ops = [(t.sites.0, pauli_op(t.ops.0)), (t.sites.1, pauli_op(t.ops.1))];
            e += t.coef * self.product_expectation(&ops)?.re;
        }
        Ok(e)
    }

    /// Dense amplitudes in the Z basis, bit `s` of the index = canonical site
    /// `s`, bit value 0 = Z up. The log-norm is not applied.
    pub fn flatten(&self) -> Result<Vec<c64>> {
        let n = self.num_sites();
        if n > FLATTEN_LIMIT {
            return Err(Error::TooLarge {
                sites: n,
                limit: FLATTEN_LIMIT,
            });
        }
        let topo = self.topology;
        // v[q]: (2^{|S_q|} x d_parent), rows = leaf bits of the subtree
        let mut v: Vec<Option<Mat<c64>>> = vec![None; 2 * n];
        for q in topo.post_order() {
            let t = &self.tensors[q];
            let take = |c: usize, v: &mut Vec<Option<Mat<c64>>>| -> Mat<c64> {
                if c >= n {
                    identity(2)
                } else {
                    v[c].take().expect("children flattened first")
                }
            };
            let vl = take(2 * q, &mut v);
            let vr = take(2 * q + 1, &mut v);
            let [d0, d1, d2] = t.dims();
            let (rl, rr) = (vl.nrows(), vr.nrows());
            // W = vl * T(d0 x d1 d2) : rl x (d1 d2)
            let tm = MatRef::from_column_major_slice(t.data(), d0, d1 * d2);
            let w = &vl * tm;
            let mut out = Mat::<c64>::zeros(rl * rr, d2);
            for c in 0..d2 {
                // block (rl x d1) times vr^T (d1 x rr)
                let blk = w.as_ref().subcols(c * d1, d1);
                let prod = blk * vr.transpose();
                for r in 0..rr {
                    for l in 0..rl {
                        out[(l + rl * r, c)] = prod[(l, r)];
                    }
                }
            }
            v[q] = Some(out);
        }
        let root = v[1].take().expect("root flattened");
        let mut amps = vec![c64::new(0.0, 0.0); 1 << n];
        for (j, slot) in amps.iter_mut().enumerate() {
            let mut leaf_index = 0usize;
            for s in 0..n {
                if j >> s & 1 == 1 {
                    leaf_index |= 1 << self.ordering.leaf_of_site(s);
                }
            }
            *slot = root[(leaf_index, 0)];
        }
        Ok(amps)
    }

    /// SVD truncation of every bond to at most `chi`, dropping singular
    /// values whose relative squared weight is below `svd_cutoff`. Returns the
    /// discarded squared weight (relative to the norm) summed over bonds. The
    /// result is renormalized with the center at the root.
    pub fn truncate(&mut self, chi: usize, svd_cutoff: f64) -> Result<f64> {
        if chi < 1 {
            return Err(Error::InvalidParameter("chi must be at least 1".into()));
        }
        self.move_center(1)?;
        let norm2 = self.norm().powi(2);
        let mut discarded = 0.0;
        self.truncate_below(1, chi, svd_cutoff, norm2, &mut discarded)?;
        self.chi_max = chi;
        self.normalize();
        Ok(discarded)
    }

    fn truncate_below(&mut self, q: usize, chi: usize, cutoff: f64, norm2: f64, discarded: &mut f64) -> Result<()> {
        for leg in 0..2 {
            let c = 2 * q + leg;
            if c >= self.topology.num_leaves() {
                continue;
            }
            let m = self.tensors[q].to_matrix(leg);
            let svd = m
                .thin_svd()
                .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
            let s = svd.S();
            let k_all = m.nrows().min(m.ncols());
            let total: f64 = (0..k_all).map(|i| s[i].re * s[i].re).sum();
            let mut keep = 0;
            while keep < k_all.min(chi) && s[keep].re * s[keep].re > cutoff * total {
                keep += 1;
            }
            let keep = keep.max(1);
            *discarded += (keep..k_all).map(|i| s[i].re * s[i].re).sum::<f64>() / norm2;
            let u = svd.U().subcols(0, keep);
            let v = svd.V().subcols(0, keep);
            self.tensors[q] = Tensor3::from_matrix(u, leg, self.tensors[q].dims());
            // child absorbs S V^H on its parent leg
            let svh = Mat::from_fn(keep, v.nrows(), |j, a| v[(a, j)].conj() * s[j]);
            self.tensors[c] = self.tensors[c].apply_leg(2, svh.as_ref());
            self.center = c;
            self.truncate_below(c, chi, cutoff, norm2, discarded)?;
            self.shift_center(q);
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            width: self.ordering.width(),
            height: self.ordering.height(),
            ordering: "hilbert".into(),
            center: self.center,
            chi_max: self.chi_max,
            log_norm: self.log_norm,
            tensors: self.tensors[1..]
                .iter()
                .map(|t| TensorRecord {
                    dims: t.dims(),
                    re: t.data().iter().map(|z| z.re).collect(),
                    im: t.data().iter().map(|z| z.im).collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(cp: &Checkpoint) -> Result<Self> {
        if cp.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", cp.version)));
        }
        if cp.ordering != "hilbert" {
            return Err(Error::Checkpoint(format!("unknown ordering {:?}", cp.ordering)));
        }
        let geometry = LatticeGeometry::new(cp.width, cp.height)?;
        let ordering = hilbert_ordering(&geometry)?;
        let topology = Topology::new(ordering.num_sites())?;
        if cp.tensors.len() != topology.num_nodes() || !topology.is_node(cp.center) {
            return Err(Error::Checkpoint("tree topology does not match the lattice".into()));
        }
        let mut tensors = vec![Tensor3::zeros([0, 0, 0])];
        for rec in &cp.tensors {
            if rec.re.len() != rec.im.len() {
                return Err(Error::Checkpoint("real/imaginary parts differ in length".into()));
            }
            let data = rec.re.iter().zip(&rec.im).map(|(&r, &i)| c64::new(r, i)).collect();
            tensors.push(Tensor3::from_vec(rec.dims, data).map_err(|e| Error::Checkpoint(e.to_string()))?);
        }
        for q in 1..topology.num_leaves() {
            let d = tensors[q].dims();
            let want0 = if 2 * q >= topology.num_leaves() { 2 } else { tensors[2 * q].dim(2) };
            let want1 = if 2 * q + 1 >= topology.num_leaves() { 2 } else { tensors[2 * q + 1].dim(2) };
            let want2 = if q == 1 { 1 } else { d[2] };
            if [want0, want1, want2] != d {
                return Err(Error::Checkpoint(format!("inconsistent bond dimensions at node {q}")));
            }
        }
        Ok(Self {
            ordering,
            topology,
            tensors,
            center: cp.center,
            chi_max: cp.chi_max,
            log_norm: cp.log_norm,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let cp: Checkpoint = serde_json::from_reader(f)?;
        Self::from_checkpoint(&cp)
    }
}

/// Fills columns `from..` of the parent-leg matricization of `t` with
/// orthonormal vectors, keeping columns `..from` (already orthonormal).
/// Candidates are standard basis vectors in order, so the result is
/// deterministic.
fn complete_isometry(t: &mut Tensor3, from: usize) {
    let [d0, d1, d2] = t.dims();
    let rows = d0 * d1;
    let mut cols: Vec<Vec<c64>> = (0..from)
        .map(|c| t.data()[c * rows..(c + 1) * rows].to_vec())
        .collect();
    let mut candidate = 0;
    while cols.len() < d2 {
        assert!(candidate < rows, "not enough room to complete the isometry");
        let mut v = vec![c64::new(0.0, 0.0); rows];
        v[candidate] = c64::new(1.0, 0.0);
        candidate += 1;
        for _ in 0..2 {
            for u in &cols {
                let ov: c64 = u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= ov * y;
                }
            }
        }
        let nv = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nv > 1e-6 {
            for x in &mut v {
                *x /= nv;
            }
            cols.push(v);
        }
    }
    for (c, col) in cols.into_iter().enumerate().skip(from) {
        t.data_mut()[c * rows..(c + 1) * rows].copy_from_slice(&col);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub dims: [usize; 3],
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// Serialized tree state. Tensors are listed in heap order starting at the
/// root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub width: usize,
    pub height: usize,
    pub ordering: String,
    pub center: usize,
    pub chi_max: usize,
    pub log_norm: f64,
    pub tensors: Vec<TensorRecord>,
}
