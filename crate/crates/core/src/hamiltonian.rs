//! H = -J sum_<r,r'> X_r X_r' - h_perp sum_r Z_r - h_par sum_r X_r
//! on an open-boundary square lattice.
//!
//! The Ising coupling and the longitudinal field act on X; "spin up/down"
//! always means the X eigenstates. The computational basis is the Z basis,
//! with bit `s` of a basis index holding site `s` (canonical row-major order)
//! and bit value 0 meaning Z = +1.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::LatticeGeometry;
use crate::shapes::ShapeMask;

/// Reference transverse field of the ground-state transition at h_par = 0.
pub const H_PERP_QUANTUM_CRITICAL: f64 = 3.04;
/// Transverse field above which the quenched background demagnetizes.
pub const H_PERP_DYNAMICAL_CRITICAL: f64 = 2.0;

/// Largest site count for which [`dense_hamiltonian`] materializes a matrix.
pub const DENSE_MATRIX_LIMIT: usize = 12;

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsingParams {
    #[serde(rename = "J")]
    pub j: f64,
    pub h_perp: f64,
    pub h_par: f64,
}

impl IsingParams {
    pub fn new(j: f64, h_perp: f64, h_par: f64) -> Result<Self> {
        let p = Self { j, h_perp, h_par };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.j > 0.0) || !self.j.is_finite() {
            return Err(Error::InvalidParameter(format!("J must be positive, got {}", self.j)));
        }
        if !self.h_perp.is_finite() || !self.h_par.is_finite() {
            return Err(Error::InvalidParameter("fields must be finite".into()));
        }
        Ok(())
    }
}

impl Default for IsingParams {
    fn default() -> Self {
        Self {
            j: 1.0,
            h_perp: 1.2,
            h_par: -0.15,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Z,
}

impl Pauli {
    /// Real 2x2 matrix in the Z basis, `m[row][col]`.
    pub const fn matrix(self) -> [[f64; 2]; 2] {
        match self {
            Pauli::X => [[0.0, 1.0], [1.0, 0.0]],
            Pauli::Z => [[1.0, 0.0], [0.0, -1.0]],
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneSiteTerm {
    pub site: usize,
    pub coef: f64,
    pub op: Pauli,
}

/// `coef * op_a(a) op_b(b)` with `a < b`.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSiteTerm {
    pub sites: (usize, usize),
    pub coef: f64,
    pub ops: (Pauli, Pauli),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermList {
    pub num_sites: usize,
    pub one_site: Vec<OneSiteTerm>,
    pub two_site: Vec<TwoSiteTerm>,
}

impl TermList {
    /// Number of sites touched by a nonzero term, or all sites.
    pub fn num_sites(&self) -> usize {
        self.num_sites
    }
}

/// One XX term per bond and a Z and an X term per site (zero coefficients
/// included, so the count is always B + 2N).
pub fn build_terms(geometry: &LatticeGeometry, params: &IsingParams) -> TermList {
    let two_site = geometry
        .bonds()
        .iter()
        .map(|&(a, b)| TwoSiteTerm {
            sites: (a, b),
            coef: -params.j,
            ops: (Pauli::X, Pauli::X),
        })
        .collect();
    let mut one_site = Vec::with_capacity(2 * geometry.num_sites());
    for site in 0..geometry.num_sites() {
        one_site.push(OneSiteTerm {
            site,
            coef: -params.h_perp,
            op: Pauli::Z,
        });
        one_site.push(OneSiteTerm {
            site,
            coef: -params.h_par,
            op: Pauli::X,
        });
    }
    TermList {
        num_sites: geometry.num_sites(),
        one_site,
        two_site,
    }
}

/// Energy of the X-basis product state in which masked sites point down.
pub fn classical_energy(mask: &ShapeMask, params: &IsingParams) -> f64 {
    let (w, h) = (mask.width(), mask.height());
    let bonds = (w * (h - 1) + h * (w - 1)) as f64;
    let n = (w * h) as f64;
    let pb = mask.bond_perimeter() as f64;
    let area = mask.area() as f64;
    -params.j * (bonds - 2.0 * pb) - params.h_par * (n - 2.0 * area)
}

/// Materializes H as a real symmetric matrix in the Z basis.
pub fn dense_hamiltonian(terms: &TermList) -> Result<Mat<f64>> {
    let n = terms.num_sites;
    if n > DENSE_MATRIX_LIMIT {
        return Err(Error::TooLarge {
            sites: n,
            limit: DENSE_MATRIX_LIMIT,
        });
    }
    let dim = 1usize << n;
    let mut h = Mat::<f64>::zeros(dim, dim);
    for col in 0..dim {
        for t in &terms.one_site {
            match t.op {
                Pauli::Z => {
                    let z = if col >> t.site & 1 == 0 { 1.0 } else { -1.0 };
                    h[(col, col)] += t.coef * z;
                }
                Pauli::X => h[(col ^ (1 << t.site), col)] += t.coef,
            }
        }
        for t in &terms.two_site {
            let (a, b) = t.sites;
            let mut row = col;
            let mut amp = t.coef;
            for (site, op) in [(a, t.ops.0), (b, t.ops.1)] {
                match op {
                    Pauli::X => row ^= 1 << site,
                    Pauli::Z => {
                        if col >> site & 1 == 1 {
                            amp = -amp;
                        }
                    }
                }
            }
            h[(row, col)] += amp;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Coord;
    use crate::shapes::{make_shape, ShapeSpec};

    fn geometry(w: usize, h: usize) -> LatticeGeometry {
        LatticeGeometry::new(w, h).unwrap()
    }

    // Z-basis amplitudes of an X-basis product state; bit s = site s.
    fn product_vector(mask: &ShapeMask) -> Vec<f64> {
        let n = mask.width() * mask.height();
        (0..1usize << n)
            .map(|i| {
                (0..n)
                    .map(|s| if i >> s & 1 == 1 && mask.is_set(s) { -1.0 } else { 1.0 })
                    .product::<f64>()
                    / 2f64.powi(n as i32).sqrt()
            })
            .collect()
    }

    fn quadratic_form(h: &Mat<f64>, v: &[f64]) -> f64 {
        let n = v.len();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += v[i] * h[(i, j)] * v[j];
            }
        }
        acc
    }

    // cyclic Jacobi eigenvalue sweep, independent of faer
    fn jacobi_eigenvalues(h: &Mat<f64>) -> Vec<f64> {
        let n = h.nrows();
        let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| h[(i, j)]).collect()).collect();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    fn faer_eigenvalues(h: &Mat<f64>) -> Vec<f64> {
        let eig = h.self_adjoint_eigen(faer::Side::Lower).unwrap();
        let s = eig.S();
        let mut ev: Vec<f64> = (0..h.nrows()).map(|i| s[i]).collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    #[test]
    fn term_counts() {
        let g = geometry(4, 4);
        let t = build_terms(&g, &IsingParams::default());
        assert_eq!((t.two_site.len(), t.one_site.len()), (24, 32));
    }

    #[test]
    fn rejects_nonpositive_coupling() {
        assert!(IsingParams::new(0.0, 1.0, 0.0).is_err());
        assert!(IsingParams::new(-1.0, 1.0, 0.0).is_err());
        assert!(IsingParams::new(1.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn classical_energy_examples() {
        let g = geometry(4, 4);
        let p = IsingParams::new(1.0, 1.2, 0.0).unwrap();
        assert_eq!(classical_energy(&ShapeMask::empty(&g), &p), -24.0);
        let single = ShapeMask::from_sites(&g, [Coord::new(1, 1)]).unwrap();
        assert_eq!(classical_energy(&single, &p), -16.0);
        let g8 = geometry(8, 8);
        let p = IsingParams::new(1.0, 0.7, -0.1).unwrap();
        let sq = make_shape(&ShapeSpec::square(2), &g8).unwrap();
        assert!((classical_energy(&sq, &p) - (-90.4)).abs() < 1e-12);
    }

    #[test]
    fn single_site_and_pair_spectra() {
        let one = TermList {
            num_sites: 1,
            one_site: vec![OneSiteTerm {
                site: 0,
                coef: -0.7,
                op: Pauli::Z,
            }],
            two_site: vec![],
        };
        let ev = faer_eigenvalues(&dense_hamiltonian(&one).unwrap());
        assert!((ev[0] + 0.7).abs() < 1e-14 && (ev[1] - 0.7).abs() < 1e-14);
        let pair = TermList {
            num_sites: 2,
            one_site: vec![],
            two_site: vec![TwoSiteTerm {
                sites: (0, 1),
                coef: -1.0,
                ops: (Pauli::X, Pauli::X),
            }],
        };
        let ev = faer_eigenvalues(&dense_hamiltonian(&pair).unwrap());
        for (got, want) in ev.iter().zip([-1.0, -1.0, 1.0, 1.0]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn two_eigensolvers_agree_on_2x2() {
        let g = geometry(2, 2);
        let h = dense_hamiltonian(&build_terms(&g, &IsingParams::new(1.0, 1.2, -0.15).unwrap())).unwrap();
        let a = jacobi_eigenvalues(&h);
        let b = faer_eigenvalues(&h);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
        // frozen from the two solvers above
        assert!((b[0] - GROUND_2X2).abs() < 1e-10, "{}", b[0]);
    }

    const GROUND_2X2: f64 = -6.046_241_253_032_717;

    #[test]
    fn dense_rejects_large_systems() {
        let g = geometry(4, 4);
        let t = build_terms(&g, &IsingParams::default());
        assert!(matches!(dense_hamiltonian(&t), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn symmetric_for_random_parameters() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let p = IsingParams::new(rng.gen_range(0.1..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0)).unwrap();
            let h = dense_hamiltonian(&build_terms(&geometry(2, 4), &p)).unwrap();
            for i in 0..h.nrows() {
                for j in 0..i {
                    assert!((h[(i, j)] - h[(j, i)]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn product_state_energy_matches_closed_form() {
        let p = IsingParams::new(1.0, 0.9, -0.3).unwrap();
        let g = geometry(2, 2);
        let h = dense_hamiltonian(&build_terms(&g, &p)).unwrap();
        for bits in 0..16usize {
            let cells = (0..4).map(|s| bits >> s & 1 == 1).collect();
            let mask = ShapeMask::from_cells(&g, cells).unwrap();
            let e = quadratic_form(&h, &product_vector(&mask));
            assert!((e - classical_energy(&mask, &p)).abs() < 1e-12);
        }
        let g = geometry(2, 4);
        let h = dense_hamiltonian(&build_terms(&g, &p)).unwrap();
        for bits in [0usize, 1, 0b1011_0110, 0xff, 0b0110_0000] {
            let cells = (0..8).map(|s| bits >> s & 1 == 1).collect();
            let mask = ShapeMask::from_cells(&g, cells).unwrap();
            let e = quadratic_form(&h, &product_vector(&mask));
            assert!((e - classical_energy(&mask, &p)).abs() < 1e-12);
        }
    }

    #[test]
    fn flip_symmetry_at_zero_longitudinal_field() {
        for (w, hgt) in [(2, 2), (2, 4)] {
            let g = geometry(w, hgt);
            let n = g.num_sites();
            let h = dense_hamiltonian(&build_terms(&g, &IsingParams::new(1.0, 1.3, 0.0).unwrap())).unwrap();
            // prod_r Z_r is diagonal with entries (-1)^popcount
            let sign = |i: usize| if i.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            for i in 0..1 << n {
                for j in 0..1 << n {
                    let commutator = h[(i, j)] * (sign(j) - sign(i));
                    assert!(commutator.abs() < 1e-15);
                }
            }
            let biased = dense_hamiltonian(&build_terms(&g, &IsingParams::new(1.0, 1.3, -0.1).unwrap())).unwrap();
            let broken = (0..1usize << n).any(|i| (0..1usize << n).any(|j| (biased[(i, j)] * (sign(j) - sign(i))).abs() > 1e-3));
            assert!(broken);
        }
    }
}
