//! Rydberg-atom model: geometry, Ising Hamiltonian and time evolution.
//!
//! Units: positions in μm, times in μs. Rabi frequency, detuning, interaction
//! strength and dephasing rates are linear frequencies in MHz. The Hamiltonian
//! builder multiplies coherent terms by 2π so that `H` is in rad/μs; dephasing
//! rates enter the dissipator as given (1/μs).
//!
//! Qubit order: atom `i` is qubit `i`, system atoms first, then ancillas.
//! Qubit 0 is the most significant bit of a basis index. `|0>` is the ground
//! state and `|1>` the Rydberg state, so `n̂ = |1><1|`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{unitary_propagator, ComplexMatrix, C64, ZERO};
use crate::state::{partial_trace, DensityMatrix};

/// Largest atom count whose joint space fits the dense budget.
pub const MAX_ATOMS: usize = 9;

/// Default C6 (MHz·μm⁶), calibrated so the blockade radius is 10 μm at Ω = 0.896 MHz.
pub const DEFAULT_C6: f64 = 0.896e6;

/// Default light-shift detuning (MHz) for the detuned anti-addressing mode.
pub const DEFAULT_ANTI_ADDRESS_DETUNING: f64 = 50.0;

/// Default RK4 resolution of the Lindblad integrator.
pub const DEFAULT_STEPS_PER_US: f64 = 2000.0;

pub type Position = [f64; 3];

/// Positions of the system atoms `X` and the ancilla atoms `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomGeometry {
    system: Vec<Position>,
    ancilla: Vec<Position>,
}

impl AtomGeometry {
    pub fn new(system: Vec<Position>, ancilla: Vec<Position>) -> Result<Self> {
        let geom = Self { system, ancilla };
        geom.validate()?;
        Ok(geom)
    }

    fn validate(&self) -> Result<()> {
        if self.system.is_empty() {
            return Err(Error::Config("geometry needs at least one system atom".into()));
        }
        let n = self.num_atoms();
        for i in 0..n {
            let p = self.position(i);
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("atom {i} has a non-finite coordinate")));
            }
            for j in 0..i {
                if self.distance(i, j) <= 0.0 {
                    return Err(Error::Config(format!("atoms {j} and {i} coincide")));
                }
            }
        }
        Ok(())
    }

    pub fn system(&self) -> &[Position] {
        &self.system
    }

    pub fn ancilla(&self) -> &[Position] {
        &self.ancilla
    }

    pub fn num_system(&self) -> usize {
        self.system.len()
    }

    pub fn num_ancilla(&self) -> usize {
        self.ancilla.len()
    }

    pub fn num_atoms(&self) -> usize {
        self.system.len() + self.ancilla.len()
    }

    pub fn position(&self, i: usize) -> Position {
        if i < self.system.len() {
            self.system[i]
        } else {
            self.ancilla[i - self.system.len()]
        }
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.position(i), self.position(j));
        libm::sqrt((0..3).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum())
    }

    /// Indices of the ancilla atoms in the joint ordering.
    pub fn ancilla_indices(&self) -> Vec<usize> {
        (self.num_system()..self.num_atoms()).collect()
    }

    /// Same system atoms, new ancilla positions.
    pub fn with_ancilla(&self, ancilla: Vec<Position>) -> Result<Self> {
        Self::new(self.system.clone(), ancilla)
    }

    pub fn same_system(&self, other: &Self) -> bool {
        self.system == other.system
    }
}

/// `n` atoms on a circle of radius `radius` about the origin, atom `k` at
/// angle `π + 2πk/n` (for two atoms: first atom on the negative x axis).
pub fn regular_polygon(n: usize, radius: f64) -> Vec<Position> {
    (0..n)
        .map(|k| {
            let phi = PI + TAU * k as f64 / n as f64;
            [radius * libm::cos(phi), radius * libm::sin(phi), 0.0]
        })
        .collect()
}

/// `count` ancillas at distance `radius` from the origin, the first at angle
/// `theta` and the rest spaced by `2π/count`.
pub fn ancilla_ring(count: usize, radius: f64, theta: f64) -> Vec<Position> {
    (0..count)
        .map(|k| {
            let phi = theta + TAU * k as f64 / count as f64;
            [radius * libm::cos(phi), radius * libm::sin(phi), 0.0]
        })
        .collect()
}

/// Arrangements with the ancilla ring rotated to `θ_j = 2πj/M`, `j = 0..M`.
pub fn circular_sweep(
    system: &[Position],
    ancilla_count: usize,
    ancilla_radius: f64,
    arrangements: usize,
) -> Result<Vec<AtomGeometry>> {
    sweep_angles(arrangements)
        .into_iter()
        .map(|theta| AtomGeometry::new(system.to_vec(), ancilla_ring(ancilla_count, ancilla_radius, theta)))
        .collect()
}

pub fn sweep_angles(arrangements: usize) -> Vec<f64> {
    (0..arrangements).map(|j| TAU * j as f64 / arrangements as f64).collect()
}

/// How anti-addressed atoms are kept out of the drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AntiAddressing {
    /// The σx drive on the atom is removed.
    Exact,
    /// The drive stays on and the atom picks up an extra detuning (MHz).
    LightShift { detuning_mhz: f64 },
}

impl Default for AntiAddressing {
    fn default() -> Self {
        Self::Exact
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveParams {
    pub rabi_mhz: f64,
    pub detuning_mhz: f64,
    /// Van der Waals coefficient in MHz·μm⁶.
    pub c6: f64,
    pub duration_us: f64,
    #[serde(default)]
    pub anti_addressed: Vec<usize>,
    #[serde(default)]
    pub anti_addressing: AntiAddressing,
}

impl DriveParams {
    /// Resonant global drive with no anti-addressing.
    pub fn resonant(rabi_mhz: f64, duration_us: f64) -> Self {
        Self {
            rabi_mhz,
            detuning_mhz: 0.0,
            c6: DEFAULT_C6,
            duration_us,
            anti_addressed: Vec::new(),
            anti_addressing: AntiAddressing::Exact,
        }
    }

    pub fn with_c6(mut self, c6: f64) -> Self {
        self.c6 = c6;
        self
    }

    pub fn with_detuning(mut self, detuning_mhz: f64) -> Self {
        self.detuning_mhz = detuning_mhz;
        self
    }

    pub fn with_anti_addressed(mut self, atoms: Vec<usize>) -> Self {
        self.anti_addressed = atoms;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.rabi_mhz, self.detuning_mhz, self.c6, self.duration_us].iter().all(|x| x.is_finite());
        if !finite || self.rabi_mhz < 0.0 || self.duration_us < 0.0 || self.c6 <= 0.0 {
            return Err(Error::Config(format!(
                "drive needs Ω ≥ 0, t ≥ 0, C6 > 0 (got Ω={}, t={}, C6={})",
                self.rabi_mhz, self.duration_us, self.c6
            )));
        }
        if let AntiAddressing::LightShift { detuning_mhz } = self.anti_addressing {
            if !detuning_mhz.is_finite() {
                return Err(Error::Config("anti-addressing detuning must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Individual dephasing rate per atom (1/μs), jump operator `n̂_i`.
    pub gamma_ind: f64,
    /// Collective dephasing rate (1/μs), jump operator `Σ_i n̂_i`.
    pub gamma_col: f64,
}

impl NoiseParams {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn is_noiseless(&self) -> bool {
        self.gamma_ind == 0.0 && self.gamma_col == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_ind >= 0.0 && self.gamma_col >= 0.0)
            || !self.gamma_ind.is_finite()
            || !self.gamma_col.is_finite()
        {
            return Err(Error::Config("dephasing rates must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// `(C6/Ω)^{1/6}` in μm.
pub fn blockade_radius(drive: &DriveParams) -> Result<f64> {
    if !(drive.rabi_mhz > 0.0) {
        return Err(Error::Domain("blockade radius needs Ω > 0".into()));
    }
    if !(drive.c6 > 0.0) {
        return Err(Error::Domain("blockade radius needs C6 > 0".into()));
    }
    Ok(libm::pow(drive.c6 / drive.rabi_mhz, 1.0 / 6.0))
}

#[inline]
fn bit_of(atom: usize, num_atoms: usize) -> usize {
    1 << (num_atoms - 1 - atom)
}

/// Ising Hamiltonian over all atoms of `geom`, in rad/μs:
///
/// `H = 2π [ (Ω/2) Σ σx_i − Σ (Δ_i/2) σz_i + Σ_{i<j} C6/r_ij⁶ n̂_i n̂_j ]`
///
/// with `σz = 2n̂ − 1`. Anti-addressed atoms lose their σx term
/// ([`AntiAddressing::Exact`]) or get `Δ_i = Δ + Δ_AA`.
pub fn build_hamiltonian(geom: &AtomGeometry, drive: &DriveParams) -> Result<ComplexMatrix> {
    drive.validate()?;
    let n = geom.num_atoms();
    if n > MAX_ATOMS {
        return Err(Error::Size(format!("{n} atoms exceed the {MAX_ATOMS}-atom limit")));
    }
    if let Some(&bad) = drive.anti_addressed.iter().find(|&&i| i >= n) {
        return Err(Error::Config(format!("anti-addressed atom {bad} out of range")));
    }
    let dim = 1usize << n;
    let mut driven = vec![true; n];
    let mut detuning = vec![drive.detuning_mhz; n];
    for &i in &drive.anti_addressed {
        match drive.anti_addressing {
            AntiAddressing::Exact => driven[i] = false,
            AntiAddressing::LightShift { detuning_mhz } => detuning[i] += detuning_mhz,
        }
    }
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((i, j, drive.c6 / libm::pow(geom.distance(i, j), 6.0)));
        }
    }

    let mut h = ComplexMatrix::zeros(dim, dim);
    let drive_term = C64::new(TAU * drive.rabi_mhz / 2.0, 0.0);
    for a in 0..dim {
        let excited = |i: usize| a & bit_of(i, n) != 0;
        let mut diag = 0.0;
        for (i, &d) in detuning.iter().enumerate() {
            let sz = if excited(i) { 1.0 } else { -1.0 };
            diag -= d / 2.0 * sz;
        }
        for &(i, j, v) in &pairs {
            if excited(i) && excited(j) {
                diag += v;
            }
        }
        h[(a, a)] = C64::new(TAU * diag, 0.0);
        if drive.rabi_mhz != 0.0 {
            for (i, _) in driven.iter().enumerate().filter(|(_, &d)| d) {
                h[(a, a ^ bit_of(i, n))] = drive_term;
            }
        }
    }
    Ok(h)
}

/// Computational basis states allowed by a blockade cutoff: no two atoms
/// closer than `radius` are simultaneously excited.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockadeSubspace {
    full_dim: usize,
    labels: Vec<usize>,
}

impl BlockadeSubspace {
    pub fn new(geom: &AtomGeometry, radius: f64) -> Self {
        let n = geom.num_atoms();
        let mut close = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if geom.distance(i, j) < radius {
                    close.push(bit_of(i, n) | bit_of(j, n));
                }
            }
        }
        let full_dim = 1usize << n;
        let labels = (0..full_dim).filter(|&a| close.iter().all(|&m| a & m != m)).collect();
        Self { full_dim, labels }
    }

    pub fn full(num_atoms: usize) -> Self {
        let full_dim = 1usize << num_atoms;
        Self { full_dim, labels: (0..full_dim).collect() }
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn restrict(&self, m: &ComplexMatrix) -> ComplexMatrix {
        m.select(&self.labels, &self.labels)
    }

    pub fn embed(&self, m: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.full_dim, self.full_dim);
        for (r, &lr) in self.labels.iter().enumerate() {
            for (c, &lc) in self.labels.iter().enumerate() {
                out[(lr, lc)] = m[(r, c)];
            }
        }
        out
    }
}

fn check_operator_shapes(rho: &DensityMatrix, h: &ComplexMatrix) -> Result<()> {
    if !h.is_square() || h.rows() != rho.dim() {
        return Err(Error::Shape(format!(
            "Hamiltonian {}x{} does not act on a {}-dimensional state",
            h.rows(),
            h.cols(),
            rho.dim()
        )));
    }
    Ok(())
}

/// `U ρ U†` with `U = exp(−iHt)`.
pub fn evolve_unitary(rho: &DensityMatrix, h: &ComplexMatrix, t: f64) -> Result<DensityMatrix> {
    check_operator_shapes(rho, h)?;
    Ok(DensityMatrix::new_unchecked(conjugate_by_propagator(rho.matrix(), h, t)?))
}

fn conjugate_by_propagator(rho: &ComplexMatrix, h: &ComplexMatrix, t: f64) -> Result<ComplexMatrix> {
    if t == 0.0 {
        return Ok(rho.clone());
    }
    let u = unitary_propagator(h, t)?;
    Ok(&(&u * rho) * &u.adjoint())
}

/// Row-compressed copy of a dense matrix, for `H ρ` products.
struct SparseRows {
    row_ptr: Vec<usize>,
    entries: Vec<(usize, C64)>,
}

impl SparseRows {
    fn from_dense(m: &ComplexMatrix) -> Self {
        let mut row_ptr = Vec::with_capacity(m.rows() + 1);
        let mut entries = Vec::new();
        row_ptr.push(0);
        for r in 0..m.rows() {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v != ZERO {
                    entries.push((c, v));
                }
            }
            row_ptr.push(entries.len());
        }
        Self { row_ptr, entries }
    }

    fn mul_dense(&self, rho: &ComplexMatrix, out: &mut ComplexMatrix) {
        let dim = rho.cols();
        let out_data = out.as_mut_slice();
        out_data.fill(ZERO);
        for r in 0..self.row_ptr.len() - 1 {
            let out_row = &mut out_data[r * dim..(r + 1) * dim];
            for &(c, v) in &self.entries[self.row_ptr[r]..self.row_ptr[r + 1]] {
                for (o, &x) in out_row.iter_mut().zip(rho.row(c)) {
                    *o += v * x;
                }
            }
        }
    }
}

/// Elementwise dissipator weights for diagonal jump operators:
/// `D[L](ρ)_ab = −½ (l_a − l_b)² ρ_ab` summed over the channels.
fn dephasing_weights(labels: &[usize], noise: &NoiseParams) -> Vec<f64> {
    let d = labels.len();
    let mut w = vec![0.0; d * d];
    for (r, &a) in labels.iter().enumerate() {
        for (c, &b) in labels.iter().enumerate() {
            let flips = (a ^ b).count_ones() as f64;
            let dn = a.count_ones() as f64 - b.count_ones() as f64;
            w[r * d + c] = -0.5 * (noise.gamma_ind * flips + noise.gamma_col * dn * dn);
        }
    }
    w
}

fn lindblad_rhs(h: &SparseRows, weights: &[f64], rho: &ComplexMatrix, scratch: &mut ComplexMatrix) -> ComplexMatrix {
    h.mul_dense(rho, scratch);
    let dim = rho.rows();
    let minus_i = C64::new(0.0, -1.0);
    ComplexMatrix::from_fn(dim, dim, |r, c| {
        // ρH = (Hρ)† for Hermitian H and ρ
        let comm = scratch[(r, c)] - scratch[(c, r)].conj();
        minus_i * comm + rho[(r, c)] * weights[r * dim + c]
    })
}

fn axpy(base: &ComplexMatrix, k: &ComplexMatrix, s: f64) -> ComplexMatrix {
    let mut out = base.clone();
    for (o, &x) in out.as_mut_slice().iter_mut().zip(k.as_slice()) {
        *o += x * s;
    }
    out
}

fn lindblad_rk4(
    rho0: &ComplexMatrix,
    h: &ComplexMatrix,
    weights: &[f64],
    t: f64,
    steps: usize,
) -> Result<ComplexMatrix> {
    let sparse = SparseRows::from_dense(h);
    let dim = rho0.rows();
    let dt = t / steps as f64;
    let mut scratch = ComplexMatrix::zeros(dim, dim);
    let mut rho = rho0.clone();
    for _ in 0..steps {
        let k1 = lindblad_rhs(&sparse, weights, &rho, &mut scratch);
        let k2 = lindblad_rhs(&sparse, weights, &axpy(&rho, &k1, dt / 2.0), &mut scratch);
        let k3 = lindblad_rhs(&sparse, weights, &axpy(&rho, &k2, dt / 2.0), &mut scratch);
        let k4 = lindblad_rhs(&sparse, weights, &axpy(&rho, &k3, dt), &mut scratch);
        for (i, x) in rho.as_mut_slice().iter_mut().enumerate() {
            *x += (k1.as_slice()[i] + k2.as_slice()[i] * 2.0 + k3.as_slice()[i] * 2.0 + k4.as_slice()[i])
                * (dt / 6.0);
        }
        rho = rho.hermitian_part();
    }
    let tr0 = rho0.trace().re;
    let drift = (rho.trace().re - tr0).abs();
    let purity = rho.trace_product(&rho).re;
    let growth = purity - rho0.trace_product(rho0).re.max(tr0 * tr0);
    if !drift.is_finite() || !purity.is_finite() || drift > 1e-6 || growth > 1e-6 {
        let drift = if drift.is_finite() { drift.max(growth) } else { f64::INFINITY };
        return Err(Error::Integration { drift });
    }
    Ok(rho)
}

/// Fixed-step RK4 integration of
/// `dρ/dt = −i[H,ρ] + γ_ind Σ_i D[n̂_i](ρ) + γ_col D[Σ_i n̂_i](ρ)`.
pub fn evolve_lindblad(
    rho: &DensityMatrix,
    h: &ComplexMatrix,
    noise: &NoiseParams,
    t: f64,
    steps: usize,
) -> Result<DensityMatrix> {
    check_operator_shapes(rho, h)?;
    noise.validate()?;
    if steps == 0 {
        return Err(Error::Config("Lindblad integration needs at least one step".into()));
    }
    let labels: Vec<usize> = (0..rho.dim()).collect();
    let weights = dephasing_weights(&labels, noise);
    Ok(DensityMatrix::new_unchecked(lindblad_rk4(rho.matrix(), h, &weights, t, steps)?))
}

/// Step count for a duration at the given resolution (at least one).
pub fn steps_for(duration_us: f64, steps_per_us: f64) -> usize {
    (libm::ceil(duration_us * steps_per_us) as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionOptions {
    pub steps_per_us: f64,
    /// Drop basis states with two excitations closer than this distance (μm).
    pub blockade_truncation: Option<f64>,
}

impl Default for EvolutionOptions {
    fn default() -> Self {
        Self { steps_per_us: DEFAULT_STEPS_PER_US, blockade_truncation: None }
    }
}

/// Evolve under `H` for `t`, unitarily when noiseless, optionally inside a
/// blockade-truncated subspace.
pub fn evolve(
    rho: &DensityMatrix,
    h: &ComplexMatrix,
    noise: &NoiseParams,
    t: f64,
    opts: &EvolutionOptions,
    subspace: Option<&BlockadeSubspace>,
) -> Result<DensityMatrix> {
    check_operator_shapes(rho, h)?;
    noise.validate()?;
    let full;
    let space = match subspace {
        Some(s) => s,
        None => {
            full = BlockadeSubspace::full(rho.num_qubits());
            &full
        }
    };
    let truncated = space.dim() != rho.dim();
    let (rho_s, h_s) = if truncated {
        (space.restrict(rho.matrix()), space.restrict(h))
    } else {
        (rho.matrix().clone(), h.clone())
    };
    let evolved = if noise.is_noiseless() || t == 0.0 {
        conjugate_by_propagator(&rho_s, &h_s, t)?
    } else {
        let weights = dephasing_weights(space.labels(), noise);
        lindblad_rk4(&rho_s, &h_s, &weights, t, steps_for(t, opts.steps_per_us))?
    };
    let out = if truncated { space.embed(&evolved) } else { evolved };
    Ok(DensityMatrix::new_unchecked(out))
}

/// Joint states after the two stages of the pulse sequence.
#[derive(Debug, Clone)]
pub struct PulseOutcome {
    /// After initialization (ancillas anti-addressed).
    pub initialized: DensityMatrix,
    /// After the global entangling pulse.
    pub entangled: DensityMatrix,
}

impl PulseOutcome {
    /// System-only state after initialization, ancillas traced out.
    pub fn prepared_system(&self, num_system: usize, num_ancilla: usize) -> Result<DensityMatrix> {
        trace_out_ancilla(&self.initialized, num_system, num_ancilla)
    }
}

pub fn trace_out_ancilla(joint: &DensityMatrix, num_system: usize, num_ancilla: usize) -> Result<DensityMatrix> {
    if num_ancilla == 0 {
        return Ok(joint.clone());
    }
    partial_trace(joint, &[0], &[1 << num_system, 1 << num_ancilla])
}

/// Initialize from `|0…0>` with the ancillas anti-addressed for
/// `drive_init.duration_us`, then drive all atoms for `drive_entangle.duration_us`.
pub fn pulse_sequence(
    geom: &AtomGeometry,
    drive_init: &DriveParams,
    drive_entangle: &DriveParams,
    noise: &NoiseParams,
    opts: &EvolutionOptions,
) -> Result<PulseOutcome> {
    let mut expected = geom.ancilla_indices();
    let mut given = drive_init.anti_addressed.clone();
    expected.sort_unstable();
    given.sort_unstable();
    given.dedup();
    if given != expected {
        return Err(Error::Config(format!(
            "initialization must anti-address exactly the ancillas {expected:?}, got {:?}",
            drive_init.anti_addressed
        )));
    }
    if !drive_entangle.anti_addressed.is_empty() {
        return Err(Error::Config("entangling drive must not anti-address any atom".into()));
    }
    let n = geom.num_atoms();
    let subspace = opts.blockade_truncation.map(|r| BlockadeSubspace::new(geom, r));
    let start = DensityMatrix::basis_state(n, 0)?;
    let h_init = build_hamiltonian(geom, drive_init)?;
    let initialized = evolve(&start, &h_init, noise, drive_init.duration_us, opts, subspace.as_ref())?;
    let h_ent = build_hamiltonian(geom, drive_entangle)?;
    let entangled = evolve(&initialized, &h_ent, noise, drive_entangle.duration_us, opts, subspace.as_ref())?;
    Ok(PulseOutcome { initialized, entangled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermitian_eig, tensor};
    use crate::state::{fidelity, trace_distance};
    use core::f64::consts::FRAC_1_SQRT_2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_atom() -> AtomGeometry {
        AtomGeometry::new(vec![[0.0, 0.0, 0.0]], vec![]).unwrap()
    }

    fn pair(separation: f64) -> AtomGeometry {
        AtomGeometry::new(vec![[-separation / 2.0, 0.0, 0.0], [separation / 2.0, 0.0, 0.0]], vec![]).unwrap()
    }

    fn bell() -> DensityMatrix {
        let s = C64::new(FRAC_1_SQRT_2, 0.0);
        DensityMatrix::from_pure(&[ZERO, s, s, ZERO]).unwrap()
    }

    fn w_state(n: usize) -> DensityMatrix {
        let dim = 1 << n;
        let psi: Vec<C64> =
            (0..dim).map(|a: usize| if a.count_ones() == 1 { C64::new(1.0, 0.0) } else { ZERO }).collect();
        DensityMatrix::from_pure(&psi).unwrap()
    }

    fn table1_setup(n: usize, r_x: f64, r_a: f64, rabi: f64, t_i: f64, t_e: f64) -> (AtomGeometry, DriveParams, DriveParams) {
        let geom = AtomGeometry::new(regular_polygon(n, r_x), ancilla_ring(1, r_a, 0.0)).unwrap();
        let init = DriveParams::resonant(rabi, t_i).with_anti_addressed(vec![n]);
        let ent = DriveParams::resonant(rabi, t_e);
        (geom, init, ent)
    }

    #[test]
    fn single_atom_hamiltonian_is_half_sigma_x() {
        let h = build_hamiltonian(&single_atom(), &DriveParams::resonant(1.0, 0.0)).unwrap();
        let expected = ComplexMatrix::from_fn(2, 2, |r, c| if r != c { C64::new(PI, 0.0) } else { ZERO });
        assert!(h.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn interaction_only_on_double_excitation() {
        let r: f64 = 4.0;
        let drive = DriveParams::resonant(0.0, 0.0);
        let h = build_hamiltonian(&pair(r), &drive).unwrap();
        let v = TAU * DEFAULT_C6 / r.powi(6);
        for a in 0..4 {
            let expected = if a == 3 { v } else { 0.0 };
            assert!((h[(a, a)].re - expected).abs() < 1e-9 * v);
        }
    }

    #[test]
    fn table1_pair_is_deep_in_blockade() {
        let drive = DriveParams::resonant(0.896, 0.0);
        let v = drive.c6 / 5f64.powi(6);
        assert!(v > 50.0 * drive.rabi_mhz, "V/2π = {v} MHz");
    }

    #[test]
    fn detuning_sign_favours_rydberg_state() {
        let drive = DriveParams::resonant(0.0, 0.0).with_detuning(2.0);
        let h = build_hamiltonian(&single_atom(), &drive).unwrap();
        assert!((h[(0, 0)].re - TAU).abs() < 1e-12);
        assert!((h[(1, 1)].re + TAU).abs() < 1e-12);
    }

    #[test]
    fn anti_addressing_modes() {
        let exact = DriveParams::resonant(1.0, 0.0).with_anti_addressed(vec![0]);
        let h = build_hamiltonian(&single_atom(), &exact).unwrap();
        assert_eq!(h.max_abs(), 0.0);

        let mut shifted = exact.clone();
        shifted.anti_addressing = AntiAddressing::LightShift { detuning_mhz: DEFAULT_ANTI_ADDRESS_DETUNING };
        let h = build_hamiltonian(&single_atom(), &shifted).unwrap();
        let rho = evolve_unitary(&DensityMatrix::basis_state(1, 0).unwrap(), &h, 0.5).unwrap();
        // far off resonance: Ω²/(Ω²+Δ²) bounds the excitation
        assert!(rho.populations()[1] < 1.0 / (1.0 + 50.0 * 50.0) + 1e-12);
    }

    #[test]
    fn too_many_atoms() {
        let system: Vec<Position> = (0..10).map(|i| [i as f64 * 3.0, 0.0, 0.0]).collect();
        let geom = AtomGeometry::new(system, vec![]).unwrap();
        assert!(matches!(build_hamiltonian(&geom, &DriveParams::resonant(1.0, 0.1)), Err(Error::Size(_))));
    }

    #[test]
    fn geometry_validation() {
        assert!(AtomGeometry::new(vec![[0.0; 3], [0.0; 3]], vec![]).is_err());
        assert!(AtomGeometry::new(vec![[f64::NAN, 0.0, 0.0]], vec![]).is_err());
        assert!(AtomGeometry::new(vec![], vec![[0.0; 3]]).is_err());
    }

    #[test]
    fn hamiltonian_hermitian_for_random_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let n = rng.random_range(1..=5);
            let pts: Vec<Position> =
                (0..n).map(|_| [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), 0.0]).collect();
            let geom = AtomGeometry::new(pts, vec![]).unwrap();
            let drive = DriveParams::resonant(rng.random_range(0.0..2.0), 0.1).with_detuning(rng.random_range(-3.0..3.0));
            let h = build_hamiltonian(&geom, &drive).unwrap();
            assert!(h.hermiticity_error() <= 1e-12);
        }
    }

    #[test]
    fn blockade_radius_scaling() {
        let base = DriveParams::resonant(0.896, 0.0);
        assert!((blockade_radius(&base).unwrap() - 10.0).abs() < 1e-9);
        let fast = DriveParams::resonant(0.896 * 64.0, 0.0);
        assert!((blockade_radius(&fast).unwrap() - 5.0).abs() < 1e-9);
        let strong = base.clone().with_c6(2.0 * DEFAULT_C6);
        assert!((blockade_radius(&strong).unwrap() - 10.0 * 2f64.powf(1.0 / 6.0)).abs() < 1e-9);
        assert!(matches!(blockade_radius(&DriveParams::resonant(0.0, 0.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn rabi_pi_pulse() {
        let h = build_hamiltonian(&single_atom(), &DriveParams::resonant(1.0, 0.0)).unwrap();
        let rho = evolve_unitary(&DensityMatrix::basis_state(1, 0).unwrap(), &h, 0.5).unwrap();
        assert!((rho.populations()[1] - 1.0).abs() < 1e-12);
        let same = evolve_unitary(&rho, &h, 0.0).unwrap();
        assert!(same.matrix().max_abs_diff(rho.matrix()) < 1e-15);
    }

    #[test]
    fn blockaded_pair_sqrt2_pulse() {
        let rabi = 0.896;
        let drive = DriveParams::resonant(rabi, 0.0);
        let h = build_hamiltonian(&pair(5.0), &drive).unwrap();
        let t = 1.0 / (2.0 * 2f64.sqrt() * rabi);
        let rho = evolve_unitary(&DensityMatrix::basis_state(2, 0).unwrap(), &h, t).unwrap();
        let pops = rho.populations();
        for (p, e) in pops.iter().zip([0.0, 0.5, 0.5, 0.0]) {
            assert!((p - e).abs() < 1e-3, "{pops:?}");
        }
    }

    #[test]
    fn unitary_evolution_preserves_trace_and_positivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let geom = AtomGeometry::new(regular_polygon(3, 3.0), vec![]).unwrap();
        let h = build_hamiltonian(&geom, &DriveParams::resonant(1.0, 0.0).with_detuning(0.4)).unwrap();
        let rho = crate::state::tests::random_state(8, 2, &mut rng);
        let out = evolve_unitary(&rho, &h, rng.random_range(0.0..2.0)).unwrap();
        assert!((out.matrix().trace().re - 1.0).abs() < 1e-10);
        assert!(out.min_eigenvalue() >= -1e-10);
    }

    #[test]
    fn closed_system_lindblad_matches_unitary() {
        let geom = AtomGeometry::new(regular_polygon(3, 3.0), vec![]).unwrap();
        let h = build_hamiltonian(&geom, &DriveParams::resonant(0.9, 0.0)).unwrap();
        let rho0 = DensityMatrix::basis_state(3, 0).unwrap();
        let t = 0.6;
        let a = evolve_lindblad(&rho0, &h, &NoiseParams::noiseless(), t, steps_for(t, DEFAULT_STEPS_PER_US)).unwrap();
        let b = evolve_unitary(&rho0, &h, t).unwrap();
        assert!(a.matrix().max_abs_diff(b.matrix()) < 1e-6);
    }

    #[test]
    fn pure_dephasing_decay() {
        let h = ComplexMatrix::zeros(2, 2);
        let s = C64::new(FRAC_1_SQRT_2, 0.0);
        let plus = DensityMatrix::from_pure(&[s, s]).unwrap();
        let g = 0.8;
        for t in [0.25, 1.0, 2.0] {
            let noise = NoiseParams { gamma_ind: g, gamma_col: 0.0 };
            let rho = evolve_lindblad(&plus, &h, &noise, t, steps_for(t, DEFAULT_STEPS_PER_US)).unwrap();
            let expected = 0.5 * libm::exp(-g * t / 2.0);
            assert!((rho.matrix()[(0, 1)].re - expected).abs() < 1e-10);
            assert!((rho.matrix().trace().re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn collective_dephasing_spares_equal_excitation_coherences() {
        // |01>+|10> has no spread in Σn̂, so collective dephasing leaves it intact
        let h = ComplexMatrix::zeros(4, 4);
        let noise = NoiseParams { gamma_ind: 0.0, gamma_col: 1.0 };
        let rho = evolve_lindblad(&bell(), &h, &noise, 1.0, 100).unwrap();
        assert!(rho.matrix().max_abs_diff(bell().matrix()) < 1e-12);
    }

    #[test]
    fn dissipator_matches_generic_formula() {
        // -½(l_a - l_b)² ρ_ab against L ρ L† − ½{L†L, ρ} for L = n̂_0 + n̂_1
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rho = crate::state::tests::random_state(4, 4, &mut rng);
        let l = ComplexMatrix::from_real_diagonal(&[0.0, 1.0, 1.0, 2.0]);
        let ld = l.adjoint();
        let ldl = &ld * &l;
        let generic = &(&(&l * rho.matrix()) * &ld)
            - &(&(&ldl * rho.matrix()) + &(rho.matrix() * &ldl)).scale(C64::new(0.5, 0.0));
        let w = dephasing_weights(&[0, 1, 2, 3], &NoiseParams { gamma_ind: 0.0, gamma_col: 1.0 });
        let fast = ComplexMatrix::from_fn(4, 4, |r, c| rho.matrix()[(r, c)] * w[r * 4 + c]);
        assert!(fast.max_abs_diff(&generic) < 1e-14);
    }

    #[test]
    fn lindblad_step_doubling_converges() {
        let geom = AtomGeometry::new(regular_polygon(2, 2.5), vec![]).unwrap();
        let h = build_hamiltonian(&geom, &DriveParams::resonant(0.896, 0.0)).unwrap();
        let noise = NoiseParams { gamma_ind: 0.02, gamma_col: 0.07 };
        let rho0 = DensityMatrix::basis_state(2, 0).unwrap();
        let coarse = evolve_lindblad(&rho0, &h, &noise, 0.6, 1200).unwrap();
        let fine = evolve_lindblad(&rho0, &h, &noise, 0.6, 2400).unwrap();
        assert!(trace_distance(&coarse, &fine).unwrap() <= 1e-6);
    }

    #[test]
    fn lindblad_rejects_unstable_step() {
        let geom = AtomGeometry::new(regular_polygon(2, 2.5), vec![]).unwrap();
        let h = build_hamiltonian(&geom, &DriveParams::resonant(0.896, 0.0)).unwrap();
        let noise = NoiseParams { gamma_ind: 0.02, gamma_col: 0.07 };
        let rho0 = DensityMatrix::basis_state(2, 0).unwrap();
        let err = evolve_lindblad(&rho0, &h, &noise, 1.0, 3).unwrap_err();
        assert!(matches!(err, Error::Integration { .. }));
        assert!(matches!(evolve_lindblad(&rho0, &h, &noise, 1.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn blockade_suppresses_double_excitation() {
        let drive = DriveParams::resonant(1.0, 0.0);
        let rb = blockade_radius(&drive).unwrap();
        let h = build_hamiltonian(&pair(0.45 * rb), &drive).unwrap();
        let rho0 = DensityMatrix::basis_state(2, 0).unwrap();
        for k in 1..=100 {
            let rho = evolve_unitary(&rho0, &h, k as f64 * 0.01).unwrap();
            assert!(rho.populations()[3] <= 0.05);
        }
    }

    #[test]
    fn zero_entangling_time_leaves_product_state() {
        let (geom, init, mut ent) = table1_setup(2, 2.5, 9.0, 0.896, 0.387, 0.595);
        ent.duration_us = 0.0;
        let out = pulse_sequence(&geom, &init, &ent, &NoiseParams::noiseless(), &EvolutionOptions::default()).unwrap();
        let rho_x = out.prepared_system(2, 1).unwrap();
        let product = tensor(rho_x.matrix(), DensityMatrix::basis_state(1, 0).unwrap().matrix()).unwrap();
        assert_eq!(out.entangled.matrix(), out.initialized.matrix());
        assert!(out.entangled.matrix().max_abs_diff(&product) < 1e-15);
    }

    #[test]
    fn table1_pair_prepares_bell_state() {
        let (geom, init, ent) = table1_setup(2, 2.5, 9.0, 0.896, 0.387, 0.595);
        let out = pulse_sequence(&geom, &init, &ent, &NoiseParams::noiseless(), &EvolutionOptions::default()).unwrap();
        let f = fidelity(&out.prepared_system(2, 1).unwrap(), &bell()).unwrap();
        assert!(f >= 0.99, "F = {f}");
    }

    #[test]
    fn triangle_prepares_w_state() {
        let rabi = 0.894;
        // collective √3 π pulse; the tabulated 0.259 μs only reaches ~0.95
        let t_w = 1.0 / (2.0 * 3f64.sqrt() * rabi);
        let (geom, init, ent) = table1_setup(3, 5.0 / 3f64.sqrt(), 9.0, rabi, t_w, 0.595);
        let out = pulse_sequence(&geom, &init, &ent, &NoiseParams::noiseless(), &EvolutionOptions::default()).unwrap();
        let f = fidelity(&out.prepared_system(3, 1).unwrap(), &w_state(3)).unwrap();
        assert!(f >= 0.98, "F = {f}");

        let (geom, init, ent) = table1_setup(3, 5.0 / 3f64.sqrt(), 9.0, rabi, 0.259, 0.595);
        let out = pulse_sequence(&geom, &init, &ent, &NoiseParams::noiseless(), &EvolutionOptions::default()).unwrap();
        let f_table = fidelity(&out.prepared_system(3, 1).unwrap(), &w_state(3)).unwrap();
        assert!((f_table - 0.952).abs() < 0.005, "F = {f_table}");
    }

    #[test]
    fn noisy_bell_pipeline_stays_high_fidelity() {
        let (geom, init, ent) = table1_setup(2, 2.5, 9.0, 0.896, 0.387, 0.595);
        let noise = NoiseParams { gamma_ind: 0.02, gamma_col: 0.07 };
        let out = pulse_sequence(&geom, &init, &ent, &noise, &EvolutionOptions::default()).unwrap();
        let f = fidelity(&out.prepared_system(2, 1).unwrap(), &bell()).unwrap();
        assert!(f >= 0.95, "F = {f}");
        assert!((out.entangled.matrix().trace().re - 1.0).abs() < 1e-8);
    }

    #[test]
    fn pulse_sequence_checks_anti_addressing() {
        let (geom, mut init, ent) = table1_setup(2, 2.5, 9.0, 0.896, 0.387, 0.595);
        init.anti_addressed = vec![0];
        let noise = NoiseParams::noiseless();
        assert!(matches!(pulse_sequence(&geom, &init, &ent, &noise, &EvolutionOptions::default()), Err(Error::Config(_))));
        let (geom, init, mut ent) = table1_setup(2, 2.5, 9.0, 0.896, 0.387, 0.595);
        ent.anti_addressed = vec![2];
        assert!(matches!(pulse_sequence(&geom, &init, &ent, &noise, &EvolutionOptions::default()), Err(Error::Config(_))));
    }

    #[test]
    fn blockade_truncation_tracks_full_dynamics() {
        let (geom, init, ent) = table1_setup(3, 5.0 / 3f64.sqrt(), 9.0, 0.894, 0.259, 0.595);
        let noise = NoiseParams { gamma_ind: 0.02, gamma_col: 0.05 };
        let full = pulse_sequence(&geom, &init, &ent, &noise, &EvolutionOptions::default()).unwrap();
        let opts = EvolutionOptions { blockade_truncation: Some(5.5), ..EvolutionOptions::default() };
        let sub = BlockadeSubspace::new(&geom, 5.5);
        assert!(sub.dim() < 16);
        let trunc = pulse_sequence(&geom, &init, &ent, &noise, &opts).unwrap();
        assert!(trace_distance(&full.entangled, &trunc.entangled).unwrap() < 0.02);
        assert!(hermitian_eig(trunc.entangled.matrix()).unwrap().values[0] > -1e-10);
    }
}
