//! Exact state-vector evolution for small lattices, used as ground truth.
//!
//! Amplitudes are in the Z basis with bit `s` of the index holding canonical
//! site `s` (bit value 0 = Z up), the same convention as
//! [`TreeState::flatten`](crate::ttn::TreeState::flatten).

use faer::{c64, Mat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{dense_hamiltonian, Pauli, TermList, DENSE_MATRIX_LIMIT};
use crate::shapes::ShapeMask;
use crate::tdvp::krylov_expm_apply;
use crate::ttn::{is_hermitian, Observable, Op2};

pub const ORACLE_LIMIT: usize = 20;

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExactMethod {
    /// Lanczos stepping with the matrix-free Hamiltonian.
    #[default]
    Krylov,
    /// Full diagonalization of the dense Hamiltonian (small systems only).
    Eigen,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseState {
    num_sites: usize,
    amplitudes: Vec<c64>,
}

fn check_size(n: usize) -> Result<()> {
    if n > ORACLE_LIMIT {
        return Err(Error::TooLarge {
            sites: n,
            limit: ORACLE_LIMIT,
        });
    }
    Ok(())
}

impl DenseState {
    pub fn from_amplitudes(num_sites: usize, amplitudes: Vec<c64>) -> Result<Self> {
        check_size(num_sites)?;
        if amplitudes.len() != 1 << num_sites {
            return Err(Error::InvalidParameter(format!(
                "{} amplitudes for {num_sites} sites",
                amplitudes.len()
            )));
        }
        Ok(Self {
            num_sites,
            amplitudes,
        })
    }

    /// X-basis product state: masked sites |-x>, others |+x>.
    pub fn product(mask: &ShapeMask) -> Result<Self> {
        let n = mask.width() * mask.height();
        check_size(n)?;
        let occupied: usize = (0..n).filter(|&s| mask.is_set(s)).map(|s| 1usize << s).sum();
        let a = (0.5f64).powf(n as f64 / 2.0);
        let amplitudes = (0..1usize << n)
            .map(|i| {
                let sign = if (i & occupied).count_ones() % 2 == 0 { a } else { -a };
                c64::new(sign, 0.0)
            })
            .collect();
        Ok(Self {
            num_sites: n,
            amplitudes,
        })
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn amplitudes(&self) -> &[c64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn overlap(&self, other: &DenseState) -> c64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .fold(c64::new(0.0, 0.0), |acc, (a, b)| acc + a.conj() * b)
    }

    fn local(&self, site: usize, op: &Op2) -> f64 {
        let bit = 1usize << site;
        let mut acc = c64::new(0.0, 0.0);
        for (i, a) in self.amplitudes.iter().enumerate() {
            // <i| op |j>, with j ranging over i and i ^ bit
            let bi = (i >> site) & 1;
            let j = i ^ bit;
            acc += a.conj() * (op[bi][bi] * a + op[bi][1 - bi] * self.amplitudes[j]);
        }
        acc.re / self.norm().powi(2)
    }

    pub fn local_x(&self) -> Vec<f64> {
        let x = crate::ttn::pauli_op(Pauli::X);
        (0..self.num_sites).map(|s| self.local(s, &x)).collect()
    }

    pub fn local_z(&self) -> Vec<f64> {
        let z = crate::ttn::pauli_op(Pauli::Z);
        (0..self.num_sites).map(|s| self.local(s, &z)).collect()
    }

    pub fn average_x(&self) -> f64 {
        self.local_x().iter().sum::<f64>() / self.num_sites as f64
    }

    pub fn energy(&self, terms: &TermList) -> Result<f64> {
        let h = self.apply(terms)?;
        Ok(self.overlap(&h).re / self.norm().powi(2))
    }

    pub fn apply(&self, terms: &TermList) -> Result<DenseState> {
        let op = SparseHamiltonian::new(terms)?;
        let mut out = vec![c64::new(0.0, 0.0); self.amplitudes.len()];
        op.apply(&self.amplitudes, &mut out);
        Ok(DenseState {
            num_sites: self.num_sites,
            amplitudes: out,
        })
    }
}

/// Matrix-free H as a list of `coef * X^flip Z^phase` strings.
pub struct SparseHamiltonian {
    num_sites: usize,
    /// Diagonal part evaluated on every basis state.
    diagonal: Vec<f64>,
    /// Pure flips `(f, coef)`.
    flips: Vec<(usize, f64)>,
    /// Flips with a Z string `(f, z, coef)`.
    offdiagonal: Vec<(usize, usize, f64)>,
}

impl SparseHamiltonian {
    pub fn new(terms: &TermList) -> Result<Self> {
        check_size(terms.num_sites)?;
        let mut strings: Vec<(usize, usize, f64)> = Vec::new();
        let mut add = |flip: usize, phase: usize, coef: f64| {
            if coef == 0.0 {
                return;
            }
            match strings.iter_mut().find(|s| s.0 == flip && s.1 == phase) {
                Some(s) => s.2 += coef,
                None => strings.push((flip, phase, coef)),
            }
        };
        let bits = |site: usize, p: Pauli| match p {
            Pauli::X => (1usize << site, 0usize),
            Pauli::Z => (0, 1usize << site),
        };
        for t in &terms.one_site {
            let (f, z) = bits(t.site, t.op);
            add(f, z, t.coef);
        }
        for t in &terms.two_site {
            let (fa, za) = bits(t.sites.0, t.ops.0);
            let (fb, zb) = bits(t.sites.1, t.ops.1);
            add(fa ^ fb, za ^ zb, t.coef);
        }
        let phases: Vec<(usize, f64)> = strings.iter().filter(|s| s.0 == 0).map(|s| (s.1, s.2)).collect();
        let mut diagonal = vec![0.0; 1 << terms.num_sites];
        diagonal.par_iter_mut().enumerate().for_each(|(i, d)| {
            *d = phases
                .iter()
                .map(|&(z, coef)| if (i & z).count_ones() % 2 == 0 { coef } else { -coef })
                .sum();
        });
        let flips = strings.iter().filter(|s| s.0 != 0 && s.1 == 0).map(|s| (s.0, s.2)).collect();
        let offdiagonal = strings.into_iter().filter(|s| s.0 != 0 && s.1 != 0).collect();
        Ok(Self {
            num_sites: terms.num_sites,
            diagonal,
            flips,
            offdiagonal,
        })
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    /// `<psi|H|psi> / <psi|psi>`.
    pub fn expectation(&self, psi: &DenseState) -> f64 {
        let mut h = vec![c64::new(0.0, 0.0); psi.amplitudes.len()];
        self.apply(&psi.amplitudes, &mut h);
        let num: f64 = psi.amplitudes.iter().zip(&h).map(|(a, b)| (a.conj() * b).re).sum();
        num / psi.norm().powi(2)
    }

    /// `out = H psi`. The Z factors act after the flips (X^f Z^z acting on
    /// |j> gives (-1)^{|j & z|} |j ^ f>), matching the term products above
    /// since X and Z on different sites commute and each site carries one
    /// operator per term.
    pub fn apply(&self, psi: &[c64], out: &mut [c64]) {
        const CHUNK: usize = 1 << 12;
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let base = c * CHUNK;
            for (k, o) in chunk.iter_mut().enumerate() {
                let i = base + k;
                let mut acc = psi[i] * self.diagonal[i];
                for &(f, coef) in &self.flips {
                    acc += psi[i ^ f] * coef;
                }
                for &(f, z, coef) in &self.offdiagonal {
                    let j = i ^ f;
                    let s = if (j & z).count_ones() % 2 == 0 { coef } else { -coef };
                    acc += psi[j] * s;
                }
                *o = acc;
            }
        });
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactOptions {
    pub method: ExactMethod,
    /// Longest single Krylov step.
    pub max_step: f64,
    pub krylov_tol: f64,
    pub krylov_dim: usize,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            method: ExactMethod::Krylov,
            max_step: 0.1,
            krylov_tol: 1e-12,
            krylov_dim: 40,
        }
    }
}

/// `psi(t) = exp(-i H t) psi0` at each of the sorted, nonnegative `times`.
pub fn evolve_exact(psi0: &DenseState, terms: &TermList, times: &[f64], opts: &ExactOptions) -> Result<Vec<DenseState>> {
    let mut out = Vec::with_capacity(times.len());
    evolve_exact_with(psi0, terms, times, opts, |_, psi| {
        out.push(psi.clone());
        Ok(())
    })?;
    Ok(out)
}

/// Streaming form of [`evolve_exact`]: `visit(t, psi(t))` is called once per
/// requested time, in order, and may abort the evolution with an error.
pub fn evolve_exact_with<F>(psi0: &DenseState, terms: &TermList, times: &[f64], opts: &ExactOptions, visit: F) -> Result<()>
where
    F: FnMut(f64, &DenseState) -> Result<()>,
{
    check_size(terms.num_sites)?;
    if terms.num_sites != psi0.num_sites {
        return Err(Error::InvalidParameter("state and Hamiltonian sizes differ".into()));
    }
    if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("times must be sorted, finite and nonnegative".into()));
    }
    match opts.method {
        ExactMethod::Krylov => evolve_krylov(psi0, terms, times, opts, visit),
        ExactMethod::Eigen => evolve_eigen(psi0, terms, times, visit),
    }
}

fn evolve_krylov<F>(psi0: &DenseState, terms: &TermList, times: &[f64], opts: &ExactOptions, mut visit: F) -> Result<()>
where
    F: FnMut(f64, &DenseState) -> Result<()>,
{
    let h = SparseHamiltonian::new(terms)?;
    let mut psi = psi0.clone();
    let mut now = 0.0;
    for &t in times {
        while t - now > 1e-15 {
            let mut tau = (t - now).min(opts.max_step);
            let res = loop {
                match krylov_expm_apply(|x, y| h.apply(x, y), &psi.amplitudes, tau, opts.krylov_tol, opts.krylov_dim) {
                    Ok(r) => break r,
                    Err(Error::KrylovNonConvergence { .. }) if tau > 1e-6 => tau /= 2.0,
                    Err(e) => return Err(e),
                }
            };
            psi.amplitudes = res.vector;
            now += tau;
        }
        now = t;
        visit(t, &psi)?;
    }
    Ok(())
}

fn evolve_eigen<F>(psi0: &DenseState, terms: &TermList, times: &[f64], mut visit: F) -> Result<()>
where
    F: FnMut(f64, &DenseState) -> Result<()>,
{
    if terms.num_sites > DENSE_MATRIX_LIMIT {
        return Err(Error::TooLarge {
            sites: terms.num_sites,
            limit: DENSE_MATRIX_LIMIT,
        });
    }
    let h = dense_hamiltonian(terms)?;
    let eig = h
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    let (u, s) = (eig.U(), eig.S());
    let dim = h.nrows();
    // coefficients in the eigenbasis (U real)
    let coef: Vec<c64> = (0..dim)
        .map(|m| (0..dim).fold(c64::new(0.0, 0.0), |acc, i| acc + psi0.amplitudes[i] * u[(i, m)]))
        .collect();
    let uc = Mat::<c64>::from_fn(dim, dim, |i, j| c64::new(u[(i, j)], 0.0));
    for &t in times {
        let phased = Mat::<c64>::from_fn(dim, 1, |m, _| coef[m] * c64::from_polar(1.0, -s[m] * t));
        let v = &uc * &phased;
        let psi = DenseState {
            num_sites: psi0.num_sites,
            amplitudes: (0..dim).map(|i| v[(i, 0)]).collect(),
        };
        visit(t, &psi)?;
    }
    Ok(())
}

/// Von Neumann entropy of the reduced state on `sites`.
pub fn entanglement_entropy(psi: &DenseState, sites: &[usize]) -> Result<f64> {
    let n = psi.num_sites;
    let mut in_a = vec![false; n];
    for &s in sites {
        if s >= n || in_a[s] {
            return Err(Error::InvalidObservable(format!("bad site {s} in bipartition")));
        }
        in_a[s] = true;
    }
    // reduce onto the smaller side; both sides share the spectrum
    let small_is_a = 2 * sites.len() <= n;
    let a: Vec<usize> = (0..n).filter(|&s| in_a[s] == small_is_a).collect();
    let b: Vec<usize> = (0..n).filter(|&s| in_a[s] != small_is_a).collect();
    let gather = |idx: usize, set: &[usize]| -> usize {
        set.iter().enumerate().fold(0, |acc, (k, &s)| acc | (((idx >> s) & 1) << k))
    };
    let mut m = Mat::<c64>::zeros(1 << a.len(), 1 << b.len());
    for (i, &amp) in psi.amplitudes.iter().enumerate() {
        m[(gather(i, &a), gather(i, &b))] = amp;
    }
    let rho = &m * m.adjoint();
    let evals = rho
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    let total: f64 = evals.iter().map(|p| p.max(0.0)).sum();
    Ok(evals
        .iter()
        .map(|p| p / total)
        .filter(|&p| p > 1e-300)
        .map(|p| -p * p.ln())
        .sum())
}

/// `<psi|O|psi>` without materializing `O`.
pub fn observables_exact(psi: &DenseState, obs: &Observable) -> Result<f64> {
    let n = psi.num_sites;
    let check = |s: usize| {
        if s < n {
            Ok(())
        } else {
            Err(Error::InvalidObservable(format!("site {s} out of range")))
        }
    };
    let x = crate::ttn::pauli_op(Pauli::X);
    match obs {
        Observable::Identity => Ok(1.0),
        Observable::LocalX(s) => {
            check(*s)?;
            Ok(psi.local(*s, &x))
        }
        Observable::LocalZ(s) => {
            check(*s)?;
            Ok(psi.local(*s, &crate::ttn::pauli_op(Pauli::Z)))
        }
        Observable::AverageX => Ok(psi.average_x()),
        Observable::Local { site, op } => {
            check(*site)?;
            if !is_hermitian(op) {
                return Err(Error::InvalidObservable("operator is not Hermitian".into()));
            }
            Ok(psi.local(*site, op))
        }
        Observable::BondEnergy { sites: (a, b), coupling } => {
            check(*a)?;
            check(*b)?;
            if a == b {
                return Err(Error::InvalidObservable("bond needs two distinct sites".into()));
            }
            let f = (1usize << a) | (1usize << b);
            let acc: f64 = psi
                .amplitudes
                .iter()
                .enumerate()
                .map(|(i, amp)| (amp.conj() * psi.amplitudes[i ^ f]).re)
                .sum();
            Ok(-coupling * acc / psi.norm().powi(2))
        }
        Observable::SubtreeEntropy(_) => Err(Error::InvalidObservable(
            "tree-node entropies need a tree; use entanglement_entropy with a site set".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{build_terms, IsingParams, OneSiteTerm};
    use crate::lattice::LatticeGeometry;

    #[test]
    fn single_spin_precession() {
        let terms = TermList {
            num_sites: 1,
            one_site: vec![OneSiteTerm {
                site: 0,
                coef: -0.8,
                op: Pauli::Z,
            }],
            two_site: vec![],
        };
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi0 = DenseState::from_amplitudes(1, vec![c64::new(s, 0.0), c64::new(s, 0.0)]).unwrap();
        let times = [0.0, 0.3, 1.7, 4.0];
        for method in [ExactMethod::Krylov, ExactMethod::Eigen] {
            let opts = ExactOptions {
                method,
                ..ExactOptions::default()
            };
            let out = evolve_exact(&psi0, &terms, &times, &opts).unwrap();
            assert_eq!(out[0], psi0);
            for (st, t) in out.iter().zip(times) {
                assert!((st.local_x()[0] - (2.0 * 0.8 * t).cos()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sparse_matches_dense() {
        let g = LatticeGeometry::new(2, 4).unwrap();
        let terms = build_terms(&g, &IsingParams::new(1.0, 0.9, -0.2).unwrap());
        let h = dense_hamiltonian(&terms).unwrap();
        let sparse = SparseHamiltonian::new(&terms).unwrap();
        let dim = 1 << 8;
        let v: Vec<c64> = (0..dim).map(|i| c64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut out = vec![c64::new(0.0, 0.0); dim];
        sparse.apply(&v, &mut out);
        for i in 0..dim {
            let want = (0..dim).fold(c64::new(0.0, 0.0), |acc, j| acc + v[j] * h[(i, j)]);
            assert!((want - out[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_oversized_and_unsorted() {
        let g = LatticeGeometry::new(2, 2).unwrap();
        let terms = build_terms(&g, &IsingParams::default());
        let psi = DenseState::product(&ShapeMask::empty(&g)).unwrap();
        assert!(evolve_exact(&psi, &terms, &[1.0, 0.5], &ExactOptions::default()).is_err());
        assert!(evolve_exact(&psi, &terms, &[-1.0], &ExactOptions::default()).is_err());
        let big = LatticeGeometry::new(8, 4).unwrap();
        assert!(matches!(
            DenseState::product(&ShapeMask::empty(&big)),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn product_observables() {
        let g = LatticeGeometry::new(2, 2).unwrap();
        let psi = DenseState::product(&ShapeMask::empty(&g)).unwrap();
        assert!((observables_exact(&psi, &Observable::AverageX).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(observables_exact(&psi, &Observable::Identity).unwrap(), 1.0);
        assert!(observables_exact(&psi, &Observable::LocalZ(2)).unwrap().abs() < 1e-14);
        assert!(entanglement_entropy(&psi, &[0, 1]).unwrap().abs() < 1e-12);
    }
}
