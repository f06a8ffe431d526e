//! Ancilla-generated measurement ensemble, linear inversion and SPAM handling.
//!
//! For an arrangement `g` the ancillas start in `|0…0>`, all atoms evolve for
//! `t_E` under the global drive and every atom is read out. With
//! `W_g = U_g (1 ⊗ |0>_A)`, a `2^{N+N_A} × 2^N` isometry, the probability of
//! joint bitstring `n` is `P_n = w_n ρ w_n†` where `w_n` is row `n` of `W_g`.
//! Expanding `ρ = Σ η_i O_i` in the Pauli basis gives the real linear system
//! `P = Q η` with `Q[(g,n), i] = w_n O_i w_n†`.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{tensor, unitary_propagator, ComplexMatrix, RealMatrix, C64, ZERO};
use crate::pauli::OrthogonalBasis;
use crate::rydberg::{build_hamiltonian, AtomGeometry, DriveParams};
use crate::state::DensityMatrix;

/// Largest tolerated imaginary part of a measurement-matrix entry.
pub const Q_IMAG_TOL: f64 = 1e-12;

/// Tolerance on the normalization of probability vectors.
pub const PROB_SUM_TOL: f64 = 1e-9;

fn check_entangling_drive(drive: &DriveParams) -> Result<()> {
    if !drive.anti_addressed.is_empty() {
        return Err(Error::Config("the entangling drive must not anti-address any atom".into()));
    }
    drive.validate()
}

/// `w_n ρ w_n†` for each row `n` of `w`.
fn row_expectations(w: &ComplexMatrix, rho: &ComplexMatrix) -> Vec<f64> {
    let d = w.cols();
    (0..w.rows())
        .map(|n| {
            let row = w.row(n);
            let mut acc = ZERO;
            for a in 0..d {
                if row[a] == ZERO {
                    continue;
                }
                let mut inner = ZERO;
                for b in 0..d {
                    inner += rho[(a, b)] * row[b].conj();
                }
                acc += row[a] * inner;
            }
            acc.re
        })
        .collect()
}

/// Columns of `U` with every ancilla in `|0>`, i.e. `U (1 ⊗ |0…0>_A)`.
fn ancilla_ground_isometry(u: &ComplexMatrix, num_ancilla: usize) -> ComplexMatrix {
    let sys_dim = u.cols() >> num_ancilla;
    ComplexMatrix::from_fn(u.rows(), sys_dim, |r, x| u[(r, x << num_ancilla)])
}

fn entangling_isometry(geom: &AtomGeometry, drive: &DriveParams) -> Result<ComplexMatrix> {
    check_entangling_drive(drive)?;
    let h = build_hamiltonian(geom, drive)?;
    let u = unitary_propagator(&h, drive.duration_us)?;
    Ok(ancilla_ground_isometry(&u, geom.num_ancilla()))
}

/// `tr(Π_n U (ρ_X ⊗ |0><0|_A) U† Π_n)` by full joint-space evolution.
pub fn superoperator_probability(
    rho_x: &DensityMatrix,
    geom: &AtomGeometry,
    drive: &DriveParams,
    n: usize,
) -> Result<f64> {
    let probs = superoperator_probabilities(rho_x, geom, drive)?;
    probs.get(n).copied().ok_or_else(|| {
        Error::Size(format!("bitstring {n} out of range for {} outcomes", probs.len()))
    })
}

/// All joint-bitstring probabilities after the entangling evolution.
pub fn superoperator_probabilities(rho_x: &DensityMatrix, geom: &AtomGeometry, drive: &DriveParams) -> Result<Vec<f64>> {
    check_entangling_drive(drive)?;
    if rho_x.num_qubits() != geom.num_system() {
        return Err(Error::Shape(format!(
            "{}-qubit state for {} system atoms",
            rho_x.num_qubits(),
            geom.num_system()
        )));
    }
    let anc_dim = 1usize << geom.num_ancilla();
    let mut ground = ComplexMatrix::zeros(anc_dim, anc_dim);
    ground[(0, 0)] = C64::new(1.0, 0.0);
    let joint = tensor(rho_x.matrix(), &ground)?;
    let h = build_hamiltonian(geom, drive)?;
    let u = unitary_propagator(&h, drive.duration_us)?;
    let evolved = &(&u * &joint) * &u.adjoint();
    Ok(evolved.diagonal().iter().map(|d| d.re).collect())
}

/// Measurement-matrix rows and isometry for a single arrangement.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleBlock {
    pub q_rows: RealMatrix,
    pub isometry: ComplexMatrix,
}

/// Rows `Q[(g, n), ·]` for every outcome `n` of arrangement `geom`.
pub fn arrangement_block(geom: &AtomGeometry, drive: &DriveParams, basis: &OrthogonalBasis) -> Result<EnsembleBlock> {
    if geom.num_system() != basis.num_qubits() {
        return Err(Error::Shape(format!(
            "{}-qubit basis for {} system atoms",
            basis.num_qubits(),
            geom.num_system()
        )));
    }
    let w = entangling_isometry(geom, drive)?;
    let outcomes = w.rows();
    let sys_dim = w.cols();
    let mut q = RealMatrix::zeros(outcomes, basis.len());
    for n in 0..outcomes {
        let row = w.row(n);
        let q_row = q.row_mut(n);
        for (i, p) in basis.elements().iter().enumerate() {
            let mut acc = ZERO;
            for a in 0..sys_dim {
                let (c, v) = p.entry(a);
                acc += row[a] * v * row[c].conj();
            }
            if acc.im.abs() > Q_IMAG_TOL {
                return Err(Error::Internal(format!("Q entry ({n},{i}) has imaginary part {:e}", acc.im)));
            }
            q_row[i] = acc.re;
        }
    }
    Ok(EnsembleBlock { q_rows: q, isometry: w })
}

/// Measurement superoperators of a set of ancilla arrangements, materialized
/// as the real `K × 4^N` matrix `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementEnsemble {
    system_qubits: usize,
    ancilla_qubits: usize,
    drive: DriveParams,
    arrangements: Vec<AtomGeometry>,
    basis: OrthogonalBasis,
    q: RealMatrix,
    isometries: Vec<ComplexMatrix>,
}

fn check_arrangements(geoms: &[AtomGeometry]) -> Result<()> {
    let first = geoms.first().ok_or_else(|| Error::Config("no ancilla arrangements given".into()))?;
    for (m, g) in geoms.iter().enumerate() {
        if !g.same_system(first) || g.num_ancilla() != first.num_ancilla() {
            return Err(Error::Config(format!(
                "arrangement {m} does not share the system positions and ancilla count of arrangement 0"
            )));
        }
    }
    Ok(())
}

/// Sequential construction of the ensemble; see [`MeasurementEnsemble::from_blocks`]
/// for assembling blocks computed elsewhere.
pub fn build_q_matrix(geoms: &[AtomGeometry], drive: &DriveParams, basis: &OrthogonalBasis) -> Result<MeasurementEnsemble> {
    check_arrangements(geoms)?;
    let blocks = geoms.iter().map(|g| arrangement_block(g, drive, basis)).collect::<Result<Vec<_>>>()?;
    MeasurementEnsemble::from_blocks(geoms.to_vec(), drive.clone(), basis.clone(), blocks)
}

impl MeasurementEnsemble {
    /// Assemble from per-arrangement blocks, in arrangement order.
    pub fn from_blocks(
        arrangements: Vec<AtomGeometry>,
        drive: DriveParams,
        basis: OrthogonalBasis,
        blocks: Vec<EnsembleBlock>,
    ) -> Result<Self> {
        check_arrangements(&arrangements)?;
        if blocks.len() != arrangements.len() {
            return Err(Error::Shape(format!("{} blocks for {} arrangements", blocks.len(), arrangements.len())));
        }
        let system_qubits = arrangements[0].num_system();
        let ancilla_qubits = arrangements[0].num_ancilla();
        let outcomes = 1usize << (system_qubits + ancilla_qubits);
        if blocks.iter().any(|b| b.q_rows.rows() != outcomes || b.q_rows.cols() != basis.len()) {
            return Err(Error::Shape("block shape does not match the arrangement".into()));
        }
        let q = RealMatrix::vstack(&blocks.iter().map(|b| b.q_rows.clone()).collect::<Vec<_>>())?;
        let isometries = blocks.into_iter().map(|b| b.isometry).collect();
        Ok(Self { system_qubits, ancilla_qubits, drive, arrangements, basis, q, isometries })
    }

    pub fn system_qubits(&self) -> usize {
        self.system_qubits
    }

    pub fn ancilla_qubits(&self) -> usize {
        self.ancilla_qubits
    }

    pub fn drive(&self) -> &DriveParams {
        &self.drive
    }

    pub fn basis(&self) -> &OrthogonalBasis {
        &self.basis
    }

    pub fn arrangements(&self) -> &[AtomGeometry] {
        &self.arrangements
    }

    pub fn num_arrangements(&self) -> usize {
        self.arrangements.len()
    }

    /// Joint bitstrings per arrangement, `2^{N+N_A}`.
    pub fn outcomes_per_arrangement(&self) -> usize {
        1 << (self.system_qubits + self.ancilla_qubits)
    }

    /// Total row count `K`.
    pub fn num_rows(&self) -> usize {
        self.q.rows()
    }

    /// Unknown count `4^N`.
    pub fn num_params(&self) -> usize {
        self.q.cols()
    }

    pub fn q(&self) -> &RealMatrix {
        &self.q
    }

    pub fn isometry(&self, arrangement: usize) -> &ComplexMatrix {
        &self.isometries[arrangement]
    }

    pub fn row(&self, arrangement: usize, outcome: usize) -> &[f64] {
        self.q.row(arrangement * self.outcomes_per_arrangement() + outcome)
    }

    /// Model probabilities per arrangement for an operator on the system.
    pub fn probabilities(&self, rho: &ComplexMatrix) -> Result<Vec<Vec<f64>>> {
        let dim = 1usize << self.system_qubits;
        if rho.rows() != dim || rho.cols() != dim {
            return Err(Error::Shape(format!("expected a {dim}x{dim} operator, got {}x{}", rho.rows(), rho.cols())));
        }
        Ok(self.isometries.iter().map(|w| row_expectations(w, rho)).collect())
    }

    /// `Q η`, flattened over (arrangement, outcome).
    pub fn predict(&self, eta: &[f64]) -> Result<Vec<f64>> {
        if eta.len() != self.num_params() {
            return Err(Error::Shape(format!("expected {} coefficients, got {}", self.num_params(), eta.len())));
        }
        Ok(self.q.matvec(eta))
    }

    pub fn rank(&self, tol: RankTolerance) -> RankReport {
        numerical_rank(&self.q, tol)
    }
}

/// Singular-value cutoff for the numerical rank.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum RankTolerance {
    /// `max(rows, cols) · ε · σ_max`.
    #[default]
    Default,
    Absolute(f64),
    /// Fraction of `σ_max`.
    Relative(f64),
}

impl RankTolerance {
    pub fn threshold(&self, rows: usize, cols: usize, sigma_max: f64) -> f64 {
        match *self {
            Self::Default => rows.max(cols) as f64 * f64::EPSILON * sigma_max,
            Self::Absolute(t) => t,
            Self::Relative(r) => r * sigma_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rank: usize,
    pub tolerance: f64,
    /// Descending.
    pub singular_values: Vec<f64>,
}

impl RankReport {
    /// `σ_max / σ_min` over the retained spectrum.
    pub fn condition_number(&self) -> f64 {
        match (self.singular_values.first(), self.rank) {
            (Some(&max), r) if r > 0 => max / self.singular_values[r - 1],
            _ => f64::INFINITY,
        }
    }
}

pub fn numerical_rank(q: &RealMatrix, tol: RankTolerance) -> RankReport {
    let singular_values = q.singular_values();
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let tolerance = tol.threshold(q.rows(), q.cols(), sigma_max);
    let rank = singular_values.iter().filter(|&&s| s > tolerance).count();
    RankReport { rank, tolerance, singular_values }
}

/// Moore-Penrose estimate of the state from per-row probabilities.
#[derive(Debug, Clone)]
pub struct LinearEstimate {
    pub eta: Vec<f64>,
    /// `Σ η_i O_i`: Hermitian, trace one when the data are normalized, not necessarily PSD.
    pub rho_raw: ComplexMatrix,
    pub rank: usize,
    /// `‖Q η − P‖₂`.
    pub residual: f64,
}

/// `η = Q⁺ P` by SVD, and `ρ_raw = Σ η_i O_i`.
pub fn least_squares_reconstruct(ensemble: &MeasurementEnsemble, probabilities: &[f64]) -> Result<LinearEstimate> {
    if probabilities.len() != ensemble.num_rows() {
        return Err(Error::Shape(format!(
            "{} probabilities for {} measurement rows",
            probabilities.len(),
            ensemble.num_rows()
        )));
    }
    let q = ensemble.q();
    let svd = q.svd();
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = RankTolerance::Default.threshold(q.rows(), q.cols(), sigma_max);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < q.cols() {
        return Err(Error::UnderDetermined { rank, required: q.cols() });
    }
    let eta = svd.solve(probabilities, tol);
    let predicted = q.matvec(&eta);
    let residual = libm::sqrt(predicted.iter().zip(probabilities).map(|(a, b)| (a - b) * (a - b)).sum());
    let rho_raw = ensemble.basis().compose(&eta)?;
    Ok(LinearEstimate { eta, rho_raw, rank, residual })
}

/// `‖Q_{n,g2} − Q_{n,g1}‖₂` for each pair of arrangement indices.
pub fn row_independence_diagnostic(
    ensemble: &MeasurementEnsemble,
    outcome: usize,
    pairs: &[(usize, usize)],
) -> Result<Vec<f64>> {
    if outcome >= ensemble.outcomes_per_arrangement() {
        return Err(Error::Size(format!("bitstring {outcome} out of range")));
    }
    pairs
        .iter()
        .map(|&(a, b)| {
            if a >= ensemble.num_arrangements() || b >= ensemble.num_arrangements() {
                return Err(Error::Size(format!("arrangement pair ({a}, {b}) out of range")));
            }
            let (ra, rb) = (ensemble.row(a, outcome), ensemble.row(b, outcome));
            Ok(libm::sqrt(ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum()))
        })
        .collect()
}

/// Per-atom readout confusion.
///
/// A ground-state atom reads as Rydberg with probability `p10`. A Rydberg atom
/// reads as ground with probability `p01 (1 − p10)`, so
/// `P(1|1) = 1 − p01 + p10·p01`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpamModel {
    /// `P(1|0)`.
    pub p10: f64,
    /// `P(0|1)`.
    pub p01: f64,
}

impl SpamModel {
    pub fn new(p10: f64, p01: f64) -> Result<Self> {
        let s = Self { p10, p01 };
        s.validate()?;
        Ok(s)
    }

    pub fn ideal() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p10) || !(0.0..1.0).contains(&self.p01) {
            return Err(Error::Config(format!(
                "SPAM probabilities must lie in [0, 1), got p10={} p01={}",
                self.p10, self.p01
            )));
        }
        Ok(())
    }

    pub fn is_invertible(&self) -> bool {
        self.p10 + self.p01 < 1.0
    }

    /// Column-stochastic `[[P(read 0|0), P(read 0|1)], [P(read 1|0), P(read 1|1)]]`.
    pub fn confusion(&self) -> [[f64; 2]; 2] {
        let (a, b) = (self.p10, self.p01);
        [[1.0 - a, b - a * b], [a, 1.0 - b + a * b]]
    }

    fn inverse_confusion(&self) -> Result<[[f64; 2]; 2]> {
        if !self.is_invertible() {
            return Err(Error::Domain(format!(
                "SPAM matrix not invertible (p10 + p01 = {} ≥ 1)",
                self.p10 + self.p01
            )));
        }
        let [[m00, m01], [m10, m11]] = self.confusion();
        let det = m00 * m11 - m01 * m10;
        Ok([[m11 / det, -m01 / det], [-m10 / det, m00 / det]])
    }

    /// Ideal bitstring distribution to the distribution actually read out.
    pub fn corrupt(&self, probs: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        apply_per_qubit(&self.confusion(), probs)
    }

    /// Exact inverse of [`SpamModel::corrupt`], without clipping.
    pub fn uncorrupt(&self, probs: &[f64]) -> Result<Vec<f64>> {
        apply_per_qubit(&self.inverse_confusion()?, probs)
    }
}

fn apply_per_qubit(m: &[[f64; 2]; 2], probs: &[f64]) -> Result<Vec<f64>> {
    let len = probs.len();
    if len == 0 || !len.is_power_of_two() {
        return Err(Error::Shape(format!("distribution length {len} is not a power of two")));
    }
    let mut v = probs.to_vec();
    let mut bit = 1;
    while bit < len {
        for a in (0..len).filter(|a| a & bit == 0) {
            let (x0, x1) = (v[a], v[a | bit]);
            v[a] = m[0][0] * x0 + m[0][1] * x1;
            v[a | bit] = m[1][0] * x0 + m[1][1] * x1;
        }
        bit <<= 1;
    }
    Ok(v)
}

/// Bitstring counts per arrangement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    shots: Vec<u64>,
    counts: Vec<Vec<u64>>,
}

impl MeasurementRecord {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let outcomes = counts.first().map_or(0, Vec::len);
        if counts.iter().any(|c| c.len() != outcomes) {
            return Err(Error::Shape("arrangements have different outcome counts".into()));
        }
        let shots = counts.iter().map(|c| c.iter().sum()).collect();
        Ok(Self { shots, counts })
    }

    /// A record with no shots, for `arrangements × outcomes`.
    pub fn empty(arrangements: usize, outcomes: usize) -> Self {
        Self { shots: vec![0; arrangements], counts: vec![vec![0; outcomes]; arrangements] }
    }

    pub fn shots(&self) -> &[u64] {
        &self.shots
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn num_arrangements(&self) -> usize {
        self.counts.len()
    }

    pub fn num_outcomes(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    /// Empirical frequencies; arrangements without shots give zeros.
    pub fn frequencies(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .zip(&self.shots)
            .map(|(c, &s)| c.iter().map(|&k| if s == 0 { 0.0 } else { k as f64 / s as f64 }).collect())
            .collect()
    }
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL || p.iter().any(|&x| x < -PROB_SUM_TOL || !x.is_finite()) {
        return Err(Error::Domain(format!("not a probability distribution (sum {sum})")));
    }
    Ok(())
}

/// SPAM-corrupt each distribution and draw multinomial counts.
pub fn sample_record(probabilities: &[Vec<f64>], shots: &[u64], spam: &SpamModel, seed: u64) -> Result<MeasurementRecord> {
    if probabilities.len() != shots.len() {
        return Err(Error::Shape(format!("{} distributions for {} shot counts", probabilities.len(), shots.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = Vec::with_capacity(probabilities.len());
    for (p, &s) in probabilities.iter().zip(shots) {
        check_distribution(p)?;
        let corrupted = spam.corrupt(p)?;
        if corrupted.iter().any(|&x| x < -PROB_SUM_TOL) {
            return Err(Error::Internal("SPAM corruption produced a negative probability".into()));
        }
        counts.push(multinomial(&corrupted, s, &mut rng)?);
    }
    MeasurementRecord::new(counts)
}

/// Sequential conditional binomials.
fn multinomial(p: &[f64], shots: u64, rng: &mut ChaCha8Rng) -> Result<Vec<u64>> {
    let mut out = vec![0u64; p.len()];
    let mut remaining = shots;
    let mut mass = 1.0;
    for (k, &pk) in p.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k == p.len() - 1 {
            out[k] = remaining;
            break;
        }
        let frac = if mass > 0.0 { (pk.max(0.0) / mass).clamp(0.0, 1.0) } else { 0.0 };
        let draw = Binomial::new(remaining, frac).map_err(|e| Error::Internal(e.to_string()))?.sample(rng);
        out[k] = draw;
        remaining -= draw;
        mass -= pk.max(0.0);
    }
    Ok(out)
}

/// SPAM-corrected distributions plus how much clipping moved them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpamCorrection {
    pub frequencies: Vec<Vec<f64>>,
    /// L1 distance between the raw inverse and the clipped, renormalized result.
    pub clip_l1: Vec<f64>,
}

impl SpamCorrection {
    pub fn flattened(&self) -> Vec<f64> {
        self.frequencies.iter().flatten().copied().collect()
    }
}

/// Invert the readout confusion on empirical frequencies, then clip negatives
/// and renormalize.
pub fn spam_correct(record: &MeasurementRecord, spam: &SpamModel) -> Result<SpamCorrection> {
    correct_frequencies(&record.frequencies(), spam)
}

pub fn correct_frequencies(freqs: &[Vec<f64>], spam: &SpamModel) -> Result<SpamCorrection> {
    let mut frequencies = Vec::with_capacity(freqs.len());
    let mut clip_l1 = Vec::with_capacity(freqs.len());
    for f in freqs {
        let raw = spam.uncorrupt(f)?;
        let clipped: Vec<f64> = raw.iter().map(|&x| x.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        let fixed: Vec<f64> =
            if total > 0.0 { clipped.iter().map(|x| x / total).collect() } else { clipped };
        clip_l1.push(raw.iter().zip(&fixed).map(|(a, b)| (a - b).abs()).sum());
        frequencies.push(fixed);
    }
    Ok(SpamCorrection { frequencies, clip_l1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// `(|01> + |10>)/√2`.
    Bell,
    /// Uniform superposition of the single-excitation bitstrings.
    W,
}

pub fn target_state(kind: TargetKind, num_qubits: usize) -> Result<DensityMatrix> {
    let dim = 1usize << num_qubits;
    match kind {
        TargetKind::Bell if num_qubits != 2 => {
            Err(Error::Config(format!("the Bell target needs 2 qubits, got {num_qubits}")))
        }
        _ if num_qubits == 0 => Err(Error::Config("target state needs at least one qubit".into())),
        _ => {
            let psi: Vec<C64> = (0..dim)
                .map(|a: usize| if a.count_ones() == 1 { C64::new(1.0, 0.0) } else { ZERO })
                .collect();
            DensityMatrix::from_pure(&psi)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::pauli_basis;
    use crate::rydberg::{ancilla_ring, circular_sweep, regular_polygon};
    use crate::state::{fidelity, psd_project, tests::random_state};
    use core::f64::consts::{FRAC_1_SQRT_2, PI};
    use proptest::prelude::*;
    use rand::Rng;

    fn bell_ensemble(m: usize) -> MeasurementEnsemble {
        let geoms = circular_sweep(&regular_polygon(2, 2.5), 1, 9.0, m).unwrap();
        build_q_matrix(&geoms, &DriveParams::resonant(0.896, 0.595), &pauli_basis(2).unwrap()).unwrap()
    }

    fn bell() -> DensityMatrix {
        target_state(TargetKind::Bell, 2).unwrap()
    }

    fn flat(p: &[Vec<f64>]) -> Vec<f64> {
        p.iter().flatten().copied().collect()
    }

    #[test]
    fn no_entangling_time_measures_the_prepared_bitstring() {
        let geom = AtomGeometry::new(regular_polygon(2, 2.5), ancilla_ring(1, 9.0, 0.0)).unwrap();
        let drive = DriveParams::resonant(0.896, 0.0);
        let rho = DensityMatrix::basis_state(2, 0).unwrap();
        for n in 0..8 {
            let p = superoperator_probability(&rho, &geom, &drive, n).unwrap();
            assert!((p - if n == 0 { 1.0 } else { 0.0 }).abs() < 1e-15);
        }
        assert!(matches!(superoperator_probability(&rho, &geom, &drive, 8), Err(Error::Size(_))));
    }

    #[test]
    fn bell_angular_profile_follows_blockade() {
        // outcome 3 = |01>_X|1>_A: ancilla blockades atom 0 when it sits on the left
        let ens = bell_ensemble(20);
        let probs = ens.probabilities(bell().matrix()).unwrap();
        let left: f64 = (6..15).map(|j| probs[j][3]).sum::<f64>() / 9.0;
        let right: f64 = [16, 17, 18, 19, 0, 1, 2, 3, 4].iter().map(|&j| probs[j][3]).sum::<f64>() / 9.0;
        assert!(left > 0.15 && left > 5.0 * right, "left {left} right {right}");
        // and |10>_X|1>_A is suppressed in the same region
        let p5_left: f64 = (6..15).map(|j| probs[j][5]).sum::<f64>() / 9.0;
        assert!(p5_left < 0.2 * left);
    }

    #[test]
    fn probabilities_are_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let drive = DriveParams::resonant(0.9, 0.6);
        for _ in 0..20 {
            let theta = rng.random_range(0.0..2.0 * PI);
            let geom = AtomGeometry::new(regular_polygon(2, 2.5), ancilla_ring(1, 9.0, theta)).unwrap();
            let rho = random_state(4, 2, &mut rng);
            let p = superoperator_probabilities(&rho, &geom, &drive).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn q_matrix_reproduces_direct_evolution() {
        // Q η(ρ) against full joint-space evolution for random states
        let ens = bell_ensemble(6);
        let basis = pauli_basis(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let rho = random_state(4, rng.random_range(1..=4), &mut rng);
            let predicted = ens.predict(&basis.decompose(rho.matrix()).unwrap()).unwrap();
            let direct: Vec<f64> = ens
                .arrangements()
                .iter()
                .flat_map(|g| superoperator_probabilities(&rho, g, ens.drive()).unwrap())
                .collect();
            let residual = predicted.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(residual <= 1e-8, "{residual}");
            let via_isometry = flat(&ens.probabilities(rho.matrix()).unwrap());
            assert!(via_isometry.iter().zip(&direct).all(|(a, b)| (a - b).abs() <= 1e-10));
        }
    }

    #[test]
    fn q_column_sums_per_arrangement() {
        let ens = bell_ensemble(5);
        let outcomes = ens.outcomes_per_arrangement();
        for m in 0..5 {
            for i in 0..ens.num_params() {
                let s: f64 = (0..outcomes).map(|n| ens.row(m, n)[i]).sum();
                let expected = if i == 0 { 4.0 } else { 0.0 };
                assert!((s - expected).abs() <= 1e-9, "m={m} i={i} sum={s}");
            }
        }
    }

    #[test]
    fn mixed_system_geometries_rejected() {
        let a = AtomGeometry::new(regular_polygon(2, 2.5), ancilla_ring(1, 9.0, 0.0)).unwrap();
        let b = AtomGeometry::new(regular_polygon(2, 3.0), ancilla_ring(1, 9.0, 1.0)).unwrap();
        let err = build_q_matrix(&[a, b], &DriveParams::resonant(0.9, 0.6), &pauli_basis(2).unwrap());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn single_qubit_four_angles_full_rank() {
        let geoms = circular_sweep(&[[0.0, 0.0, 0.0]], 1, 6.0, 4).unwrap();
        let ens = build_q_matrix(&geoms, &DriveParams::resonant(1.0, 0.3), &pauli_basis(1).unwrap()).unwrap();
        assert_eq!(ens.rank(RankTolerance::Default).rank, 4);
    }

    #[test]
    fn bell_layout_twenty_angles_full_rank() {
        let ens = bell_ensemble(20);
        assert_eq!(ens.num_rows(), 160);
        let report = ens.rank(RankTolerance::Default);
        assert_eq!(report.rank, 16);
        assert!(report.condition_number().is_finite());
    }

    #[test]
    fn single_arrangement_rank_bounded_by_outcomes() {
        let ens = bell_ensemble(1);
        assert!(ens.rank(RankTolerance::Default).rank <= 8);
    }

    #[test]
    fn duplicated_arrangement_keeps_rank() {
        let geoms = circular_sweep(&regular_polygon(2, 2.5), 1, 9.0, 3).unwrap();
        let drive = DriveParams::resonant(0.896, 0.595);
        let basis = pauli_basis(2).unwrap();
        let once = build_q_matrix(&geoms, &drive, &basis).unwrap().rank(RankTolerance::Default).rank;
        let mut doubled = geoms.clone();
        doubled.push(geoms[1].clone());
        let twice = build_q_matrix(&doubled, &drive, &basis).unwrap().rank(RankTolerance::Default).rank;
        assert_eq!(once, twice);
    }

    #[test]
    fn rank_never_decreases_with_more_arrangements() {
        let geoms = circular_sweep(&regular_polygon(2, 2.5), 1, 9.0, 8).unwrap();
        let drive = DriveParams::resonant(0.896, 0.595);
        let basis = pauli_basis(2).unwrap();
        let mut last = 0;
        for m in 1..=8 {
            let r = build_q_matrix(&geoms[..m], &drive, &basis).unwrap().rank(RankTolerance::Default).rank;
            assert!(r >= last);
            last = r;
        }
    }

    #[test]
    fn exact_inversion_recovers_state() {
        let ens = bell_ensemble(20);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho = random_state(4, 2, &mut rng);
        let p = flat(&ens.probabilities(rho.matrix()).unwrap());
        let est = least_squares_reconstruct(&ens, &p).unwrap();
        assert!((&est.rho_raw - rho.matrix()).frobenius_norm() <= 1e-6);
        assert!(est.residual < 1e-10);
    }

    #[test]
    fn maximally_mixed_inversion() {
        let ens = bell_ensemble(20);
        let mixed = DensityMatrix::maximally_mixed(2).unwrap();
        let p = flat(&ens.probabilities(mixed.matrix()).unwrap());
        let est = least_squares_reconstruct(&ens, &p).unwrap();
        assert!((est.eta[0] - 0.25).abs() < 1e-10);
        assert!(est.eta[1..].iter().all(|e| e.abs() < 1e-10));
    }

    #[test]
    fn under_determined_ensemble_is_reported() {
        let ens = bell_ensemble(1);
        let p = vec![0.125; 8];
        match least_squares_reconstruct(&ens, &p) {
            Err(Error::UnderDetermined { rank, required }) => {
                assert!(rank < 16);
                assert_eq!(required, 16);
            }
            other => panic!("expected under-determined error, got {other:?}"),
        }
        assert!(matches!(least_squares_reconstruct(&bell_ensemble(20), &p), Err(Error::Shape(_))));
    }

    #[test]
    fn finite_shot_bell_inversion_converges() {
        // Monte-Carlo over seeds; the weakest singular direction is ~7e-3, so
        // linear inversion needs far more than 1000 shots per arrangement
        let ens = bell_ensemble(20);
        let ideal = ens.probabilities(bell().matrix()).unwrap();
        let mean_fidelity = |shots: u64| {
            (0..8u64)
                .map(|seed| {
                    let record = sample_record(&ideal, &[shots; 20], &SpamModel::ideal(), seed).unwrap();
                    let est = least_squares_reconstruct(&ens, &flat(&record.frequencies())).unwrap();
                    fidelity(&psd_project(&est.rho_raw).unwrap().state, &bell()).unwrap()
                })
                .sum::<f64>()
                / 8.0
        };
        let f3 = mean_fidelity(1_000);
        let f5 = mean_fidelity(100_000);
        let f7 = mean_fidelity(10_000_000);
        assert!(f3 < f5 && f5 < f7, "{f3} {f5} {f7}");
        assert!(f3 > 0.6);
        assert!(f7 >= 0.99, "{f7}");
    }

    #[test]
    fn large_sample_frequencies_converge() {
        let p = vec![vec![0.5, 0.25, 0.125, 0.125]];
        let record = sample_record(&p, &[100_000], &SpamModel::ideal(), 9).unwrap();
        assert_eq!(record.shots(), &[100_000]);
        let l1: f64 = record.frequencies()[0].iter().zip(&p[0]).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 <= 0.02);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let p = vec![vec![0.1, 0.2, 0.3, 0.4]; 3];
        let spam = SpamModel::new(0.02, 0.1).unwrap();
        let a = sample_record(&p, &[500; 3], &spam, 42).unwrap();
        let b = sample_record(&p, &[500; 3], &spam, 42).unwrap();
        let c = sample_record(&p, &[500; 3], &spam, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.counts().iter().all(|c| c.iter().sum::<u64>() == 500));
    }

    #[test]
    fn sampling_rejects_unnormalized_input() {
        let p = vec![vec![0.6, 0.6]];
        assert!(matches!(sample_record(&p, &[10], &SpamModel::ideal(), 0), Err(Error::Domain(_))));
    }

    #[test]
    fn single_qubit_spam_examples() {
        let rydberg_loss = SpamModel::new(0.0, 0.10).unwrap();
        let c = rydberg_loss.corrupt(&[0.0, 1.0]).unwrap();
        assert!((c[1] - 0.90).abs() < 1e-15 && (c[0] - 0.10).abs() < 1e-15);

        let ground_flip = SpamModel::new(0.02, 0.10).unwrap();
        let c = ground_flip.corrupt(&[1.0, 0.0]).unwrap();
        assert!((c[0] - 0.98).abs() < 1e-15 && (c[1] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn ideal_spam_is_identity() {
        let freqs = vec![vec![0.1, 0.2, 0.3, 0.4]];
        let out = correct_frequencies(&freqs, &SpamModel::ideal()).unwrap();
        assert_eq!(out.frequencies, freqs);
        assert_eq!(out.clip_l1, vec![0.0]);
    }

    #[test]
    fn non_invertible_spam() {
        let spam = SpamModel::new(0.6, 0.5).unwrap();
        assert!(matches!(spam.uncorrupt(&[0.5, 0.5]), Err(Error::Domain(_))));
        assert!(SpamModel::new(1.0, 0.0).is_err());
    }

    #[test]
    fn spam_correction_on_finite_samples() {
        // Monte-Carlo: 1000-shot N=2 records corrected back toward the ideal distribution
        let ens = bell_ensemble(20);
        let ideal = ens.probabilities(bell().matrix()).unwrap();
        let spam = SpamModel::new(0.02, 0.10).unwrap();
        let mut mean_l1 = 0.0;
        let trials = 10;
        for seed in 0..trials {
            let record = sample_record(&ideal, &[1000; 20], &spam, seed).unwrap();
            let corrected = spam_correct(&record, &spam).unwrap();
            for (c, p) in corrected.frequencies.iter().zip(&ideal) {
                mean_l1 += c.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>();
            }
        }
        mean_l1 /= (trials * 20) as f64;
        assert!(mean_l1 <= 0.08, "mean L1 {mean_l1}");
    }

    #[test]
    fn row_differences() {
        let ens = bell_ensemble(20);
        let d = row_independence_diagnostic(&ens, 3, &[(2, 2), (0, 5)]).unwrap();
        assert_eq!(d[0], 0.0);
        assert!(d[1] > 1e-3);
    }

    #[test]
    fn far_ancilla_rows_converge() {
        let drive = DriveParams::resonant(0.896, 0.595);
        let basis = pauli_basis(2).unwrap();
        let mut previous = f64::INFINITY;
        for r_a in [12.0, 18.0, 30.0] {
            let geoms = circular_sweep(&regular_polygon(2, 2.5), 1, r_a, 4).unwrap();
            let ens = build_q_matrix(&geoms, &drive, &basis).unwrap();
            let d = row_independence_diagnostic(&ens, 1, &[(0, 1)]).unwrap()[0];
            assert!(d < previous, "r_A={r_a}: {d} !< {previous}");
            previous = d;
        }
        assert!(previous < 1e-2);
    }

    #[test]
    fn target_states() {
        let b = bell();
        let h = 0.5;
        assert!((b.matrix()[(1, 1)].re - h).abs() < 1e-15 && (b.matrix()[(1, 2)].re - h).abs() < 1e-15);
        assert!((b.matrix()[(0, 0)].re).abs() < 1e-15);
        let w3 = target_state(TargetKind::W, 3).unwrap();
        for a in 0..8usize {
            let expected = if a.count_ones() == 1 { 1.0 / 3.0 } else { 0.0 };
            assert!((w3.populations()[a] - expected).abs() < 1e-15);
        }
        let w1 = target_state(TargetKind::W, 1).unwrap();
        assert!((w1.populations()[1] - 1.0).abs() < 1e-15);
        assert!(target_state(TargetKind::Bell, 3).is_err());
        let _ = FRAC_1_SQRT_2;
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn superoperator_is_linear(seed in any::<u64>(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ens = bell_ensemble(3);
            let a = random_state(4, 4, &mut rng).into_matrix();
            let b = random_state(4, 1, &mut rng).into_matrix();
            let combo = &a.scale(C64::new(alpha, 0.0)) + &b.scale(C64::new(beta, 0.0));
            let pa = flat(&ens.probabilities(&a).unwrap());
            let pb = flat(&ens.probabilities(&b).unwrap());
            let pc = flat(&ens.probabilities(&combo).unwrap());
            for k in 0..pc.len() {
                prop_assert!((pc[k] - alpha * pa[k] - beta * pb[k]).abs() <= 1e-10);
            }
        }

        #[test]
        fn spam_round_trip_exact(seed in any::<u64>(), p10 in 0.0f64..0.3, p01 in 0.0f64..0.3, bits in 1usize..=5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p: Vec<f64> = (0..1 << bits).map(|_| rng.random::<f64>()).collect();
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= s);
            let spam = SpamModel::new(p10, p01).unwrap();
            let back = spam.uncorrupt(&spam.corrupt(&p).unwrap()).unwrap();
            let l1: f64 = back.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
            prop_assert!(l1 <= 1e-9);
        }
    }
}
