//! Tensor-product Pauli operator basis.
//!
//! Pauli strings are monomial matrices: every row holds exactly one nonzero
//! entry. A string is stored as a pair of bit masks and only densified on
//! request, so the full 4^N basis stays cheap even at N = 8.
//!
//! Index convention: basis element `i` has base-4 digits `(d_0, ..., d_{N-1})`
//! with `d_0` the most significant digit, factor `d_q` acting on qubit `q`
//! and `0, 1, 2, 3 = I, X, Y, Z`. Qubit 0 is the most significant bit of a
//! computational-basis index.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, C64, ZERO};

pub const MAX_BASIS_QUBITS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PauliString {
    num_qubits: usize,
    x_mask: u32,
    z_mask: u32,
    y_count: u32,
}

impl PauliString {
    /// Pauli string for lexicographic index `index` over `num_qubits` factors.
    pub fn from_index(num_qubits: usize, index: usize) -> Self {
        let mut x_mask = 0u32;
        let mut z_mask = 0u32;
        let mut y_count = 0;
        for q in 0..num_qubits {
            let digit = (index >> (2 * (num_qubits - 1 - q))) & 3;
            let bit = 1u32 << (num_qubits - 1 - q);
            match digit {
                1 => x_mask |= bit,
                2 => {
                    x_mask |= bit;
                    z_mask |= bit;
                    y_count += 1;
                }
                3 => z_mask |= bit,
                _ => {}
            }
        }
        Self { num_qubits, x_mask, z_mask, y_count }
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn is_identity(&self) -> bool {
        self.x_mask == 0 && self.z_mask == 0
    }

    /// Label such as `"IXYZ"`, qubit 0 first.
    pub fn label(&self) -> String {
        (0..self.num_qubits)
            .map(|q| {
                let bit = 1u32 << (self.num_qubits - 1 - q);
                match (self.x_mask & bit != 0, self.z_mask & bit != 0) {
                    (false, false) => 'I',
                    (true, false) => 'X',
                    (true, true) => 'Y',
                    (false, true) => 'Z',
                }
            })
            .collect()
    }

    /// The single nonzero entry of row `row`: `(column, value)`.
    ///
    /// Uses `Y = i X Z` per factor, so `O[a, a ^ x] = i^{#Y} (-1)^{|(a ^ x) & z|}`.
    #[inline]
    pub fn entry(&self, row: usize) -> (usize, C64) {
        let col = row ^ self.x_mask as usize;
        let negative = ((col as u32) & self.z_mask).count_ones() & 1 == 1;
        let sign = if negative { -1.0 } else { 1.0 };
        let value = match self.y_count % 4 {
            0 => C64::new(sign, 0.0),
            1 => C64::new(0.0, sign),
            2 => C64::new(-sign, 0.0),
            _ => C64::new(0.0, -sign),
        };
        (col, value)
    }

    pub fn to_matrix(&self) -> ComplexMatrix {
        let dim = 1usize << self.num_qubits;
        let mut m = ComplexMatrix::zeros(dim, dim);
        for r in 0..dim {
            let (c, v) = self.entry(r);
            m[(r, c)] = v;
        }
        m
    }

    /// `tr(O M)`.
    pub fn trace_with(&self, m: &ComplexMatrix) -> C64 {
        let dim = 1usize << self.num_qubits;
        let mut acc = ZERO;
        for r in 0..dim {
            let (c, v) = self.entry(r);
            acc += v * m[(c, r)];
        }
        acc
    }
}

/// Operator basis `{O_i}` with `tr(O_i O_j) = 2^N δ_ij`, identity first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalBasis {
    num_qubits: usize,
    strings: Vec<PauliString>,
}

pub fn pauli_basis(num_qubits: usize) -> Result<OrthogonalBasis> {
    if num_qubits == 0 || num_qubits > MAX_BASIS_QUBITS {
        return Err(Error::Size(format!(
            "Pauli basis supports 1..={MAX_BASIS_QUBITS} qubits, got {num_qubits}"
        )));
    }
    let len = 1usize << (2 * num_qubits);
    let strings = (0..len).map(|i| PauliString::from_index(num_qubits, i)).collect();
    Ok(OrthogonalBasis { num_qubits, strings })
}

impl OrthogonalBasis {
    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    /// Hilbert-space dimension `2^N`.
    pub fn dim(&self) -> usize {
        1 << self.num_qubits
    }

    /// Number of basis elements `4^N`.
    pub fn len(&self) -> usize {
        self.strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strings.is_empty()
    }

    pub fn element(&self, i: usize) -> &PauliString {
        &self.strings[i]
    }

    pub fn elements(&self) -> &[PauliString] {
        &self.strings
    }

    pub fn matrix(&self, i: usize) -> ComplexMatrix {
        self.strings[i].to_matrix()
    }

    /// Coefficients `η_i = tr(O_i M) / 2^N` of a Hermitian matrix.
    pub fn decompose(&self, m: &ComplexMatrix) -> Result<Vec<f64>> {
        if m.rows() != self.dim() || m.cols() != self.dim() {
            return Err(Error::Shape(format!(
                "expected {0}x{0} operator, got {1}x{2}",
                self.dim(),
                m.rows(),
                m.cols()
            )));
        }
        let norm = self.dim() as f64;
        Ok(self.strings.iter().map(|p| p.trace_with(m).re / norm).collect())
    }

    /// `Σ η_i O_i`.
    pub fn compose(&self, eta: &[f64]) -> Result<ComplexMatrix> {
        if eta.len() != self.len() {
            return Err(Error::Shape(format!("expected {} coefficients, got {}", self.len(), eta.len())));
        }
        let dim = self.dim();
        let mut m = ComplexMatrix::zeros(dim, dim);
        for (p, &coef) in self.strings.iter().zip(eta) {
            if coef == 0.0 {
                continue;
            }
            for r in 0..dim {
                let (c, v) = p.entry(r);
                m[(r, c)] += v * coef;
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{tensor, ONE};
    use alloc::vec;
    use alloc::vec::Vec;

    fn single(d: usize) -> ComplexMatrix {
        let i = C64::new(0.0, 1.0);
        match d {
            0 => ComplexMatrix::identity(2),
            1 => ComplexMatrix::from_vec(2, 2, vec![ZERO, ONE, ONE, ZERO]).unwrap(),
            2 => ComplexMatrix::from_vec(2, 2, vec![ZERO, -i, i, ZERO]).unwrap(),
            _ => ComplexMatrix::from_real_diagonal(&[1.0, -1.0]),
        }
    }

    /// Dense Kronecker construction, independent of the mask arithmetic.
    fn kron_oracle(num_qubits: usize, index: usize) -> ComplexMatrix {
        let digits: Vec<usize> =
            (0..num_qubits).map(|q| (index >> (2 * (num_qubits - 1 - q))) & 3).collect();
        let mut m = single(digits[0]);
        for &d in &digits[1..] {
            m = tensor(&m, &single(d)).unwrap();
        }
        m
    }

    #[test]
    fn single_qubit_basis_is_i_x_y_z() {
        let b = pauli_basis(1).unwrap();
        assert_eq!(b.len(), 4);
        for d in 0..4 {
            assert_eq!(b.matrix(d), single(d));
        }
        for i in 0..4 {
            for j in 0..4 {
                let t = b.matrix(i).trace_product(&b.matrix(j));
                let expected = if i == j { 2.0 } else { 0.0 };
                assert!((t - C64::new(expected, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn masks_match_kronecker_products() {
        for n in 1..=3 {
            let b = pauli_basis(n).unwrap();
            for i in 0..b.len() {
                assert_eq!(b.matrix(i), kron_oracle(n, i), "n={n} i={i} {}", b.element(i).label());
            }
        }
    }

    #[test]
    fn two_qubit_normalization() {
        let b = pauli_basis(2).unwrap();
        assert_eq!(b.len(), 16);
        let o5 = b.matrix(5);
        assert!((o5.trace_product(&o5) - C64::new(4.0, 0.0)).norm() < 1e-14);
        assert_eq!(b.element(5).label(), "XX");
    }

    #[test]
    fn three_qubit_gram_matrix_is_8_identity() {
        // brute force over all 64^2 dense traces
        let b = pauli_basis(3).unwrap();
        let mats: Vec<ComplexMatrix> = (0..64).map(|i| kron_oracle(3, i)).collect();
        for i in 0..64 {
            for j in 0..64 {
                let t = mats[i].trace_product(&mats[j]);
                let expected = if i == j { 8.0 } else { 0.0 };
                assert!((t - C64::new(expected, 0.0)).norm() <= 1e-10);
            }
        }
        assert_eq!(b.len(), 64);
    }

    #[test]
    fn size_errors() {
        assert!(matches!(pauli_basis(0), Err(Error::Size(_))));
        assert!(matches!(pauli_basis(9), Err(Error::Size(_))));
        assert_eq!(pauli_basis(8).unwrap().len(), 65536);
    }

    #[test]
    fn decompose_compose_round_trip() {
        let b = pauli_basis(2).unwrap();
        let m = ComplexMatrix::from_fn(4, 4, |r, c| {
            C64::new((r + c) as f64 * 0.1, if r < c { 0.3 } else if r > c { -0.3 } else { 0.0 })
        });
        let eta = b.decompose(&m).unwrap();
        assert!(b.compose(&eta).unwrap().max_abs_diff(&m) < 1e-14);
    }

    #[test]
    fn maximally_mixed_has_identity_coefficient_only() {
        let b = pauli_basis(3).unwrap();
        let eta = b.decompose(&ComplexMatrix::identity(8).scale(C64::new(0.125, 0.0))).unwrap();
        assert!((eta[0] - 0.125).abs() < 1e-15);
        assert!(eta[1..].iter().all(|e| e.abs() < 1e-15));
    }
}
