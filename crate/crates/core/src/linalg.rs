//! Dense complex and real matrices.
//!
//! Storage is row-major. Eigen- and singular-value decompositions are
//! delegated to `nalgebra`; everything else is a handful of loops.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest supported Hilbert-space dimension (nine two-level atoms).
pub const MAX_DIM: usize = 1 << 9;

/// Tolerance used when a routine requires a Hermitian input.
pub const HERMITIAN_TOL: f64 = 1e-9;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(d, 0.0);
        }
        m
    }

    /// Rank-one projector `|v><v|` (no normalization applied).
    pub fn outer(v: &[C64]) -> Self {
        Self::from_fn(v.len(), v.len(), |r, c| v[r] * v[c].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|x| x.norm_sqr()).sum::<f64>())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    /// Largest elementwise deviation `max |a_ij - b_ij|`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// `max |M - M†|`, or infinity for non-square input.
    pub fn hermiticity_error(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut err: f64 = 0.0;
        for r in 0..self.rows {
            for c in r..self.cols {
                err = err.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        err
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    /// `(M + M†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        assert!(self.is_square());
        Self::from_fn(self.rows, self.cols, |r, c| (self[(r, c)] + self[(c, r)].conj()) * 0.5)
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows).map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    /// `tr(A B)` without forming the product.
    pub fn trace_product(&self, rhs: &Self) -> C64 {
        assert_eq!((self.rows, self.cols), (rhs.cols, rhs.rows));
        let mut acc = ZERO;
        for r in 0..self.rows {
            for c in 0..self.cols {
                acc += self[(r, c)] * rhs[(c, r)];
            }
        }
        acc
    }

    /// Submatrix on the given (row, column) index lists.
    pub fn select(&self, row_idx: &[usize], col_idx: &[usize]) -> Self {
        Self::from_fn(row_idx.len(), col_idx.len(), |r, c| self[(row_idx[r], col_idx[c])])
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

/// Kronecker product `A ⊗ B`; `A` supplies the more significant index.
pub fn tensor(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    let rows = a.rows.checked_mul(b.rows);
    let cols = a.cols.checked_mul(b.cols);
    match (rows, cols) {
        (Some(r), Some(c)) if r <= MAX_DIM && c <= MAX_DIM => {}
        _ => {
            return Err(Error::Size(format!(
                "tensor product of {}x{} and {}x{} exceeds the {MAX_DIM} dimension budget",
                a.rows, a.cols, b.rows, b.cols
            )))
        }
    }
    Ok(ComplexMatrix::from_fn(a.rows * b.rows, a.cols * b.cols, |r, c| {
        a[(r / b.rows, c / b.cols)] * b[(r % b.rows, c % b.cols)]
    }))
}

/// Spectral decomposition `M = V diag(values) V†` of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Unitary whose columns are the matching eigenvectors.
    pub vectors: ComplexMatrix,
}

impl HermitianEig {
    /// `V diag(f(λ)) V†`.
    pub fn reconstruct_with(&self, mut f: impl FnMut(f64) -> C64) -> ComplexMatrix {
        let n = self.values.len();
        let weights: Vec<C64> = self.values.iter().map(|&l| f(l)).collect();
        let v = &self.vectors;
        let mut out = ComplexMatrix::zeros(n, n);
        for k in 0..n {
            let w = weights[k];
            if w == ZERO {
                continue;
            }
            for r in 0..n {
                let a = v[(r, k)] * w;
                if a == ZERO {
                    continue;
                }
                for c in 0..n {
                    out[(r, c)] += a * v[(c, k)].conj();
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.reconstruct_with(|l| C64::new(l, 0.0))
    }

    pub fn eigenvector(&self, k: usize) -> Vec<C64> {
        (0..self.values.len()).map(|r| self.vectors[(r, k)]).collect()
    }
}

pub fn hermitian_eig(m: &ComplexMatrix) -> Result<HermitianEig> {
    if !m.is_square() {
        return Err(Error::Shape(format!("eigendecomposition of non-square {}x{}", m.rows, m.cols)));
    }
    let err = m.hermiticity_error();
    if err > HERMITIAN_TOL * m.max_abs().max(1.0) {
        return Err(Error::Domain(format!("matrix is not Hermitian (max |M - M†| = {err:e})")));
    }
    let eig = m.hermitian_part().to_nalgebra().symmetric_eigen();
    let n = m.rows;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = ComplexMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(HermitianEig { values, vectors })
}

/// `exp(-i H t)` for Hermitian `H`.
pub fn unitary_propagator(h: &ComplexMatrix, t: f64) -> Result<ComplexMatrix> {
    let eig = hermitian_eig(h)?;
    if t == 0.0 {
        return Ok(ComplexMatrix::identity(h.rows()));
    }
    Ok(eig.reconstruct_with(|l| C64::from_polar(1.0, -l * t)))
}

/// Principal square root of a PSD matrix; negative eigenvalues are clipped to zero.
pub fn sqrt_psd(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = hermitian_eig(m)?;
    Ok(eig.reconstruct_with(|l| C64::new(libm::sqrt(l.max(0.0)), 0.0)))
}

/// Dense real matrix, row-major. Used for the measurement matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows).map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    /// Stack row blocks with equal column counts.
    pub fn vstack(blocks: &[RealMatrix]) -> Result<Self> {
        let cols = blocks.first().map_or(0, |b| b.cols);
        if blocks.iter().any(|b| b.cols != cols) {
            return Err(Error::Shape("row blocks have different column counts".into()));
        }
        let mut data = Vec::with_capacity(blocks.iter().map(|b| b.data.len()).sum());
        for b in blocks {
            data.extend_from_slice(&b.data);
        }
        Ok(Self { rows: data.len() / cols.max(1), cols, data })
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Vec<f64> {
        let m = DMatrix::from_row_slice(self.rows, self.cols, &self.data);
        let mut s: Vec<f64> = m.svd(false, false).singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    pub(crate) fn svd(&self) -> Svd {
        let m = DMatrix::from_row_slice(self.rows, self.cols, &self.data);
        let svd = m.svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested V^T");
        Svd { u, singular_values: svd.singular_values.iter().copied().collect(), v_t }
    }
}

impl Index<(usize, usize)> for RealMatrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for RealMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub(crate) struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v_t: DMatrix<f64>,
}

impl Svd {
    /// Minimum-norm least-squares solution `x = V Σ⁺ Uᵀ b`, dropping `σ ≤ tol`.
    pub fn solve(&self, b: &[f64], tol: f64) -> Vec<f64> {
        let k = self.singular_values.len();
        let cols = self.v_t.ncols();
        let mut x = vec![0.0; cols];
        for j in 0..k {
            let s = self.singular_values[j];
            if s <= tol {
                continue;
            }
            let coef: f64 = (0..self.u.nrows()).map(|r| self.u[(r, j)] * b[r]).sum::<f64>() / s;
            for (c, xc) in x.iter_mut().enumerate() {
                *xc += coef * self.v_t[(j, c)];
            }
        }
        x
    }
}
