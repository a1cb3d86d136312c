//! Rank-3 complex tensors stored column-major: element `(i0, i1, i2)` sits at
//! `i0 + d0 * (i1 + d1 * i2)`. Legs 0 and 1 point to the children of a tree
//! node, leg 2 to its parent.

use faer::linalg::matmul::matmul;
use faer::{c64, Accum, Mat, MatMut, MatRef, Par};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<c64>,
}

impl Tensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![c64::new(0.0, 0.0); dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<c64>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::LinearAlgebra(format!(
                "tensor data of length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn dim(&self, leg: usize) -> usize {
        self.dims[leg]
    }

    pub fn data(&self) -> &[c64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [c64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<c64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i0: usize, i1: usize, i2: usize) -> c64 {
        self.data[i0 + self.dims[0] * (i1 + self.dims[1] * i2)]
    }

    #[inline]
    pub fn set(&mut self, i0: usize, i1: usize, i2: usize, v: c64) {
        self.data[i0 + self.dims[0] * (i1 + self.dims[1] * i2)] = v;
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scale(&mut self, s: f64) {
        for z in &mut self.data {
            *z *= s;
        }
    }

    /// `sum conj(self) * other`.
    pub fn inner(&self, other: &Tensor3) -> c64 {
        debug_assert_eq!(self.dims, other.dims);
        self.data
            .iter()
            .zip(&other.data)
            .fold(c64::new(0.0, 0.0), |acc, (a, b)| acc + a.conj() * b)
    }

    fn view(&self, rows: usize, cols: usize) -> MatRef<'_, c64> {
        MatRef::from_column_major_slice(&self.data, rows, cols)
    }

    /// `T'[.., a', ..] = sum_a m[a', a] T[.., a, ..]` on `leg`.
    pub fn apply_leg(&self, leg: usize, m: MatRef<'_, c64>) -> Tensor3 {
        let mut dims = self.dims;
        dims[leg] = m.nrows();
        let mut out = Tensor3::zeros(dims);
        self.apply_leg_into(leg, m, c64::new(1.0, 0.0), &mut out, Accum::Replace);
        out
    }

    /// `out (+)= alpha * apply_leg(leg, m)`; `out` must already have the
    /// output dimensions.
    pub fn apply_leg_into(&self, leg: usize, m: MatRef<'_, c64>, alpha: c64, out: &mut Tensor3, accum: Accum) {
        let [d0, d1, d2] = self.dims;
        debug_assert_eq!(m.ncols(), self.dims[leg]);
        debug_assert_eq!(out.dims[leg], m.nrows());
        match leg {
            0 => {
                let dst = MatMut::from_column_major_slice_mut(&mut out.data, m.nrows(), d1 * d2);
                matmul(dst, accum, m, self.view(d0, d1 * d2), alpha, Par::Seq);
            }
            1 => {
                let e = m.nrows();
                for i2 in 0..d2 {
                    let src = MatRef::from_column_major_slice(&self.data[i2 * d0 * d1..(i2 + 1) * d0 * d1], d0, d1);
                    let dst = MatMut::from_column_major_slice_mut(&mut out.data[i2 * d0 * e..(i2 + 1) * d0 * e], d0, e);
                    matmul(dst, accum, src, m.transpose(), alpha, Par::Seq);
                }
            }
            2 => {
                let dst = MatMut::from_column_major_slice_mut(&mut out.data, d0 * d1, m.nrows());
                matmul(dst, accum, self.view(d0 * d1, d2), m.transpose(), alpha, Par::Seq);
            }
            _ => panic!("leg {leg} out of range"),
        }
    }

    /// `X[x', x] = sum over the other legs of conj(a[.., x', ..]) b[.., x, ..]`.
    pub fn contract_except(a: &Tensor3, b: &Tensor3, leg: usize) -> Mat<c64> {
        let [d0, d1, d2] = a.dims;
        debug_assert_eq!(a.dims, b.dims);
        let n = a.dims[leg];
        let mut x = Mat::<c64>::zeros(n, n);
        let one = c64::new(1.0, 0.0);
        match leg {
            0 => matmul(
                x.as_mut(),
                Accum::Replace,
                a.view(d0, d1 * d2).conjugate(),
                b.view(d0, d1 * d2).transpose(),
                one,
                Par::Seq,
            ),
            1 => {
                for i2 in 0..d2 {
                    let r = i2 * d0 * d1..(i2 + 1) * d0 * d1;
                    let ab = MatRef::from_column_major_slice(&a.data[r.clone()], d0, d1);
                    let bb = MatRef::from_column_major_slice(&b.data[r], d0, d1);
                    let acc = if i2 == 0 { Accum::Replace } else { Accum::Add };
                    matmul(x.as_mut(), acc, ab.adjoint(), bb, one, Par::Seq);
                }
            }
            2 => matmul(
                x.as_mut(),
                Accum::Replace,
                a.view(d0 * d1, d2).adjoint(),
                b.view(d0 * d1, d2),
                one,
                Par::Seq,
            ),
            _ => panic!("leg {leg} out of range"),
        }
        x
    }

    /// Matricization with `leg` as the column index and the other two legs,
    /// in increasing order, fused into the row index.
    pub fn to_matrix(&self, leg: usize) -> Mat<c64> {
        let [d0, d1, d2] = self.dims;
        match leg {
            0 => self.view(d0, d1 * d2).transpose().to_owned(),
            1 => Mat::from_fn(d0 * d2, d1, |r, i1| self.get(r % d0, i1, r / d0)),
            2 => self.view(d0 * d1, d2).to_owned(),
            _ => panic!("leg {leg} out of range"),
        }
    }

    /// Inverse of [`Self::to_matrix`]; `dims[leg]` is taken from `m`.
    pub fn from_matrix(m: MatRef<'_, c64>, leg: usize, mut dims: [usize; 3]) -> Tensor3 {
        dims[leg] = m.ncols();
        let [d0, d1, d2] = dims;
        debug_assert_eq!(m.nrows() * m.ncols(), d0 * d1 * d2);
        let mut t = Tensor3::zeros(dims);
        for i2 in 0..d2 {
            for i1 in 0..d1 {
                for i0 in 0..d0 {
                    let v = match leg {
                        0 => m[(i1 + d1 * i2, i0)],
                        1 => m[(i0 + d0 * i2, i1)],
                        _ => m[(i0 + d0 * i1, i2)],
                    };
                    t.set(i0, i1, i2, v);
                }
            }
        }
        t
    }

    /// Thin QR toward `leg`: returns `(q, r)` with `q` isometric on the other
    /// legs and `self = apply_leg(q, leg, r^T)`, i.e.
    /// `self[.., b, ..] = sum_a q[.., a, ..] r[a, b]`.
    pub fn qr_toward(&self, leg: usize) -> (Tensor3, Mat<c64>) {
        let m = self.to_matrix(leg);
        assert!(
            m.nrows() >= m.ncols(),
            "QR toward leg {leg} needs the other legs to span at least {} dimensions",
            m.ncols()
        );
        let qr = m.qr();
        let q = qr.compute_thin_Q();
        let r = qr.thin_R().to_owned();
        (Tensor3::from_matrix(q.as_ref(), leg, self.dims), r)
    }

    /// Largest deviation of `contract_except(self, self, leg)` from identity.
    pub fn isometry_defect(&self, leg: usize) -> f64 {
        let x = Tensor3::contract_except(self, self, leg);
        let mut worst = 0.0f64;
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((x[(i, j)] - c64::new(target, 0.0)).norm());
            }
        }
        worst
    }
}

pub(crate) fn identity(n: usize) -> Mat<c64> {
    Mat::from_fn(n, n, |i, j| c64::new(if i == j { 1.0 } else { 0.0 }, 0.0))
}
