//! Lanczos approximation of `exp(-i t H) v` for Hermitian `H` given as a map.

use faer::{c64, Mat};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct KrylovOutcome {
    pub vector: Vec<c64>,
    /// Krylov vectors used.
    pub dim: usize,
    /// A posteriori error estimate, relative to `|v|`.
    pub error: f64,
}

// Four independent accumulators let the compiler vectorize the reductions.
fn dot(a: &[c64], b: &[c64]) -> c64 {
    let mut acc = [c64::new(0.0, 0.0); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail = ca.remainder().iter().zip(cb.remainder()).fold(c64::new(0.0, 0.0), |s, (x, y)| s + x.conj() * y);
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k].conj() * y[k];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

fn norm(a: &[c64]) -> f64 {
    dot(a, a).re.sqrt()
}

fn axpy(alpha: c64, x: &[c64], y: &mut [c64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// First column of `exp(-i t T)` for the symmetric tridiagonal `T` with
/// diagonal `alpha` and off-diagonal `beta`.
fn tridiagonal_expm_e0(alpha: &[f64], beta: &[f64], t: f64) -> Result<Vec<c64>> {
    let k = alpha.len();
    let tri = Mat::<f64>::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = tri
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("tridiagonal eigensolver: {e:?}")))?;
    let (u, s) = (eig.U(), eig.S());
    Ok((0..k)
        .map(|i| {
            (0..k).fold(c64::new(0.0, 0.0), |acc, m| {
                let phase = c64::from_polar(1.0, -t * s[m]);
                acc + phase * (u[(i, m)] * u[(0, m)])
            })
        })
        .collect())
}

/// Approximates `exp(-i t H) v`. Stops as soon as the a posteriori error
/// estimate `beta_m |c_m|` falls below `tol` (relative to `|v|`); an
/// invariant subspace ends the iteration with the exact result.
pub fn krylov_expm_apply<F>(mut apply_h: F, v: &[c64], t: f64, tol: f64, max_dim: usize) -> Result<KrylovOutcome>
where
    F: FnMut(&[c64], &mut [c64]),
{
    let beta0 = norm(v);
    if beta0 == 0.0 || t == 0.0 {
        return Ok(KrylovOutcome {
            vector: v.to_vec(),
            dim: 0,
            error: 0.0,
        });
    }
    let n = v.len();
    let max_dim = max_dim.max(1).min(n);
    let mut basis: Vec<Vec<c64>> = vec![v.iter().map(|z| z / beta0).collect()];
    let mut alpha = Vec::with_capacity(max_dim);
    let mut beta: Vec<f64> = Vec::with_capacity(max_dim);
    let mut w = vec![c64::new(0.0, 0.0); n];
    loop {
        let j = basis.len() - 1;
        apply_h(&basis[j], &mut w);
        let a = dot(&basis[j], &w).re;
        axpy(c64::new(-a, 0.0), &basis[j], &mut w);
        if j > 0 {
            axpy(c64::new(-beta[j - 1], 0.0), &basis[j - 1], &mut w);
        }
        // a second pass only when the first one removed a large component
        for _ in 0..2 {
            let before = norm(&w);
            for q in &basis {
                let ov = dot(q, &w);
                axpy(-ov, q, &mut w);
            }
            if norm(&w) > 0.5 * before {
                break;
            }
        }
        alpha.push(a);
        let b = norm(&w);
        let c = tridiagonal_expm_e0(&alpha, &beta, t)?;
        let k = alpha.len();
        let error = b * c[k - 1].norm();
        if error <= tol || k == n {
            let mut out = vec![c64::new(0.0, 0.0); n];
            for (ci, q) in c.iter().zip(&basis) {
                axpy(ci * beta0, q, &mut out);
            }
            return Ok(KrylovOutcome {
                vector: out,
                dim: k,
                error,
            });
        }
        if k >= max_dim {
            return Err(Error::KrylovNonConvergence {
                residual: error,
                tol,
                dim: k,
                time: t,
            });
        }
        beta.push(b);
        basis.push(w.iter().map(|z| z / b).collect());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_phases() {
        let v = [c64::new(1.0, 0.0), c64::new(0.0, 1.0)];
        let out = krylov_expm_apply(
            |x, y| {
                y[0] = x[0];
                y[1] = x[1] * 2.0;
            },
            &v,
            std::f64::consts::PI,
            1e-12,
            10,
        )
        .unwrap();
        assert!((out.vector[0] - c64::new(-1.0, 0.0)).norm() < 1e-12);
        assert!((out.vector[1] - c64::new(0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn zero_map_is_identity() {
        let v = [c64::new(0.3, 0.1), c64::new(-0.2, 0.5), c64::new(0.0, 1.0)];
        let out = krylov_expm_apply(|_, y| y.fill(c64::new(0.0, 0.0)), &v, 3.0, 1e-12, 5).unwrap();
        for (a, b) in out.vector.iter().zip(&v) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn two_level_rotation() {
        // H = h Z on |+x>: <X(t)> = cos(2 h t)
        let h = 0.7;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for t in [0.1, 0.9, 2.3] {
            let out = krylov_expm_apply(
                |x, y| {
                    y[0] = x[0] * h;
                    y[1] = -x[1] * h;
                },
                &[c64::new(s, 0.0), c64::new(s, 0.0)],
                t,
                1e-12,
                4,
            )
            .unwrap();
            let v = &out.vector;
            let x = 2.0 * (v[0].conj() * v[1]).re;
            assert!((x - (2.0 * h * t).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn reports_nonconvergence() {
        let n = 64;
        let v: Vec<c64> = (0..n).map(|i| c64::new(1.0 + i as f64, 0.0)).collect();
        let r = krylov_expm_apply(
            |x, y| {
                for i in 0..n {
                    y[i] = x[i] * (i as f64 * 10.0);
                }
            },
            &v,
            5.0,
            1e-12,
            3,
        );
        assert!(matches!(r, Err(Error::KrylovNonConvergence { .. })));
    }
}
