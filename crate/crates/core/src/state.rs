//! Density matrices and the distance measures between them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eig, sqrt_psd, ComplexMatrix, C64, MAX_DIM, ONE};

/// Validation tolerance for Hermiticity, trace and positivity.
pub const STATE_TOL: f64 = 1e-10;

/// Slack allowed when clamping a fidelity into `[0, 1]`.
pub const FIDELITY_SLACK: f64 = 1e-8;

/// Trace-one positive-semidefinite matrix on `2^n` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    /// Validates dimension, Hermiticity, trace and positivity.
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        check_dim(&matrix)?;
        let herm = matrix.hermiticity_error();
        if herm > STATE_TOL {
            return Err(Error::Domain(format!("density matrix not Hermitian (error {herm:e})")));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(Error::Domain(format!("density matrix trace {tr} is not 1")));
        }
        let min = hermitian_eig(&matrix)?.values[0];
        if min < -STATE_TOL {
            return Err(Error::Domain(format!("density matrix has negative eigenvalue {min:e}")));
        }
        Ok(Self { matrix })
    }

    /// Wraps a matrix that is valid by construction. The Hermitian part is kept.
    pub fn new_unchecked(matrix: ComplexMatrix) -> Self {
        Self { matrix: matrix.hermitian_part() }
    }

    /// `|ψ><ψ|` for a state vector, normalized first.
    pub fn from_pure(psi: &[C64]) -> Result<Self> {
        let norm = libm::sqrt(psi.iter().map(|a| a.norm_sqr()).sum::<f64>());
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Domain("cannot normalize a zero state vector".into()));
        }
        let v: Vec<C64> = psi.iter().map(|a| a / norm).collect();
        let m = ComplexMatrix::outer(&v);
        check_dim(&m)?;
        Ok(Self { matrix: m })
    }

    /// Computational basis state `|index><index|` on `num_qubits` qubits.
    pub fn basis_state(num_qubits: usize, index: usize) -> Result<Self> {
        let dim = 1usize << num_qubits;
        if index >= dim {
            return Err(Error::Size(format!("basis index {index} out of range for {num_qubits} qubits")));
        }
        let mut m = ComplexMatrix::zeros(dim, dim);
        m[(index, index)] = ONE;
        check_dim(&m)?;
        Ok(Self { matrix: m })
    }

    pub fn maximally_mixed(num_qubits: usize) -> Result<Self> {
        let dim = 1usize << num_qubits;
        let m = ComplexMatrix::identity(dim).scale(C64::new(1.0 / dim as f64, 0.0));
        check_dim(&m)?;
        Ok(Self { matrix: m })
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn num_qubits(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eig(&self.matrix).map(|e| e.values).unwrap_or_default()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(f64::NAN)
    }

    /// Diagonal in the computational basis, i.e. bitstring probabilities.
    pub fn populations(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|d| d.re).collect()
    }

    pub fn purity(&self) -> f64 {
        self.matrix.trace_product(&self.matrix).re
    }
}

fn check_dim(m: &ComplexMatrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Shape(format!("density matrix must be square, got {}x{}", m.rows(), m.cols())));
    }
    let d = m.rows();
    if d == 0 || !d.is_power_of_two() || d > MAX_DIM {
        return Err(Error::Size(format!("density matrix dimension {d} must be a power of two ≤ {MAX_DIM}")));
    }
    Ok(())
}

/// Partial trace of an arbitrary square operator.
///
/// `dims` lists subsystem dimensions with subsystem 0 most significant;
/// `keep` selects the subsystems that survive, in their original order.
pub fn partial_trace_matrix(m: &ComplexMatrix, keep: &[usize], dims: &[usize]) -> Result<ComplexMatrix> {
    let total: usize = dims.iter().product();
    if !m.is_square() || m.rows() != total || dims.is_empty() {
        return Err(Error::Shape(format!(
            "subsystem dims {dims:?} do not match a {}x{} operator",
            m.rows(),
            m.cols()
        )));
    }
    let mut kept = vec![false; dims.len()];
    for &k in keep {
        if k >= dims.len() || kept[k] {
            return Err(Error::Shape(format!("invalid keep set {keep:?} for {} subsystems", dims.len())));
        }
        kept[k] = true;
    }
    let keep_dims: Vec<usize> = (0..dims.len()).filter(|&s| kept[s]).map(|s| dims[s]).collect();
    let trace_dims: Vec<usize> = (0..dims.len()).filter(|&s| !kept[s]).map(|s| dims[s]).collect();
    let out_dim: usize = keep_dims.iter().product();
    let env_dim: usize = trace_dims.iter().product();

    // Full index from (kept multi-index, traced multi-index).
    let compose = |k_idx: usize, e_idx: usize| -> usize {
        let mut digits = vec![0usize; dims.len()];
        let mut k_rem = k_idx;
        let mut e_rem = e_idx;
        for s in (0..dims.len()).rev() {
            if kept[s] {
                digits[s] = k_rem % dims[s];
                k_rem /= dims[s];
            } else {
                digits[s] = e_rem % dims[s];
                e_rem /= dims[s];
            }
        }
        digits.iter().zip(dims).fold(0, |acc, (&d, &n)| acc * n + d)
    };
    let index: Vec<Vec<usize>> =
        (0..out_dim).map(|k| (0..env_dim).map(|e| compose(k, e)).collect()).collect();

    Ok(ComplexMatrix::from_fn(out_dim, out_dim, |r, c| {
        (0..env_dim).map(|e| m[(index[r][e], index[c][e])]).sum()
    }))
}

pub fn partial_trace(rho: &DensityMatrix, keep: &[usize], dims: &[usize]) -> Result<DensityMatrix> {
    let m = partial_trace_matrix(rho.matrix(), keep, dims)?;
    check_dim(&m)?;
    Ok(DensityMatrix::new_unchecked(m))
}

/// Root fidelity `tr sqrt(sqrt(ρ) σ sqrt(ρ))`, evaluated as the trace norm
/// `‖sqrt(ρ) sqrt(σ)‖₁` (sum of singular values).
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::Shape(format!("fidelity of {}- and {}-dimensional states", rho.dim(), sigma.dim())));
    }
    let sqrt_rho = checked_sqrt(rho, "first")?;
    let sqrt_sigma = checked_sqrt(sigma, "second")?;
    let f: f64 = (&sqrt_rho * &sqrt_sigma).to_nalgebra().singular_values().iter().sum();
    if !(-FIDELITY_SLACK..=1.0 + FIDELITY_SLACK).contains(&f) {
        return Err(Error::Domain(format!("fidelity {f} outside [0, 1]; inputs not normalized")));
    }
    Ok(f.clamp(0.0, 1.0))
}

fn checked_sqrt(rho: &DensityMatrix, which: &str) -> Result<ComplexMatrix> {
    let eig = hermitian_eig(rho.matrix())?;
    if eig.values[0] < -FIDELITY_SLACK {
        return Err(Error::Domain(format!("{which} argument not PSD (λ_min = {:e})", eig.values[0])));
    }
    Ok(eig.reconstruct_with(|l| C64::new(libm::sqrt(l.max(0.0)), 0.0)))
}

/// `½ tr|A - B|` for square Hermitian operators of equal shape.
pub fn trace_norm_distance(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::Shape("trace distance of differently shaped operators".into()));
    }
    let eig = hermitian_eig(&(a - b))?;
    Ok(0.5 * eig.values.iter().map(|l| l.abs()).sum::<f64>())
}

pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    trace_norm_distance(rho.matrix(), sigma.matrix())
}

/// Result of projecting a Hermitian estimate onto the state space.
#[derive(Debug, Clone)]
pub struct PsdProjection {
    pub state: DensityMatrix,
    /// Most negative eigenvalue of the input (0 if already PSD).
    pub negativity: f64,
    /// Sum of the clipped negative eigenvalues' magnitudes.
    pub clipped_weight: f64,
}

/// Clip negative eigenvalues to zero and renormalize the trace.
pub fn psd_project(m: &ComplexMatrix) -> Result<PsdProjection> {
    check_dim(m)?;
    let eig = hermitian_eig(&m.hermitian_part())?;
    let kept: f64 = eig.values.iter().map(|l| l.max(0.0)).sum();
    if kept <= 0.0 {
        return Err(Error::Domain("operator has no positive spectrum to project onto".into()));
    }
    let negativity = eig.values[0].min(0.0);
    let clipped_weight = eig.values.iter().filter(|&&l| l < 0.0).map(|l| -l).sum();
    let projected = eig.reconstruct_with(|l| C64::new(l.max(0.0) / kept, 0.0));
    Ok(PsdProjection { state: DensityMatrix::new_unchecked(projected), negativity, clipped_weight })
}

/// Matrix square root of a state, exposed for callers needing `sqrt(ρ)` repeatedly.
pub fn sqrt_state(rho: &DensityMatrix) -> Result<ComplexMatrix> {
    sqrt_psd(rho.matrix())
}
