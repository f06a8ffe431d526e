//! Bayesian mean estimation by Metropolis-Hastings over purifications.
//!
//! The chain walks on unit vectors `ψ` in `C^{2^N} ⊗ C^{d_aux}`. The prior on
//! `ρ = tr_aux |ψ><ψ|` is the one induced by the Haar measure on that sphere,
//! so every sample is a valid density matrix by construction.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eig, ComplexMatrix, C64, ZERO};
use crate::state::{fidelity, trace_distance, DensityMatrix};
use crate::tomography::{MeasurementEnsemble, MeasurementRecord};

/// Lower clamp on model probabilities inside the log-likelihood.
pub const PROB_FLOOR: f64 = 1e-12;

/// Smallest jumping step the adaptation will return.
pub const STEP_MIN: f64 = 1e-3;

/// Acceptance rates outside this band raise a warning.
pub const ACCEPTANCE_BAND: (f64, f64) = (0.05, 0.95);

const NORM_TOL: f64 = 1e-12;

/// Unit vector in `C^{2^N} ⊗ C^{d_aux}`, system index major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurifiedState {
    num_qubits: usize,
    aux_dim: usize,
    amplitudes: Vec<C64>,
}

impl PurifiedState {
    pub fn new(num_qubits: usize, aux_dim: usize, amplitudes: Vec<C64>) -> Result<Self> {
        if aux_dim == 0 {
            return Err(Error::Config("auxiliary dimension must be at least 1".into()));
        }
        if amplitudes.len() != (1usize << num_qubits) * aux_dim {
            return Err(Error::Shape(format!(
                "{} amplitudes for {num_qubits} qubits with auxiliary dimension {aux_dim}",
                amplitudes.len()
            )));
        }
        let norm = libm::sqrt(amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>());
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::Domain(format!("purification norm {norm} is not 1")));
        }
        Ok(Self { num_qubits, aux_dim, amplitudes })
    }

    /// Haar-random unit vector.
    pub fn random<R: Rng + ?Sized>(num_qubits: usize, aux_dim: usize, rng: &mut R) -> Self {
        let len = (1usize << num_qubits) * aux_dim;
        let raw: Vec<C64> = (0..len).map(|_| complex_gaussian(rng, 1.0)).collect();
        Self { num_qubits, aux_dim, amplitudes: normalized(raw) }
    }

    /// Purification of the `aux_dim` largest eigencomponents of `rho`.
    pub fn from_density(rho: &DensityMatrix, aux_dim: usize) -> Result<Self> {
        if aux_dim == 0 {
            return Err(Error::Config("auxiliary dimension must be at least 1".into()));
        }
        let dim = rho.dim();
        let eig = hermitian_eig(rho.matrix())?;
        let mut amps = vec![ZERO; dim * aux_dim];
        for k in 0..aux_dim.min(dim) {
            let idx = dim - 1 - k;
            let weight = libm::sqrt(eig.values[idx].max(0.0));
            let v = eig.eigenvector(idx);
            for x in 0..dim {
                amps[x * aux_dim + k] = v[x] * weight;
            }
        }
        if amps.iter().all(|a| *a == ZERO) {
            return Err(Error::Domain("state has no positive spectrum".into()));
        }
        Ok(Self { num_qubits: rho.num_qubits(), aux_dim, amplitudes: normalized(amps) })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn aux_dim(&self) -> usize {
        self.aux_dim
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    #[inline]
    fn amp(&self, x: usize, k: usize) -> C64 {
        self.amplitudes[x * self.aux_dim + k]
    }

    /// `tr_aux |ψ><ψ|`.
    pub fn reduced(&self) -> DensityMatrix {
        let dim = 1usize << self.num_qubits;
        let d = self.aux_dim;
        let m = ComplexMatrix::from_fn(dim, dim, |x, y| {
            (0..d).map(|k| self.amp(x, k) * self.amp(y, k).conj()).sum()
        });
        DensityMatrix::new_unchecked(m)
    }

    /// `normalize(ψ + Δ g)` with `g` complex Gaussian, `E‖g‖² = 1`.
    pub fn propose<R: Rng + ?Sized>(&self, step: f64, rng: &mut R) -> Self {
        let variance = 1.0 / self.amplitudes.len() as f64;
        let raw: Vec<C64> =
            self.amplitudes.iter().map(|&a| a + complex_gaussian(rng, variance) * step).collect();
        Self { num_qubits: self.num_qubits, aux_dim: self.aux_dim, amplitudes: normalized(raw) }
    }
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = libm::sqrt(variance / 2.0);
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

fn normalized(mut v: Vec<C64>) -> Vec<C64> {
    let norm = libm::sqrt(v.iter().map(|a| a.norm_sqr()).sum::<f64>());
    v.iter_mut().for_each(|a| *a /= norm);
    v
}

/// Haar-induced prior sample for a given seed.
pub fn sample_prior(num_qubits: usize, aux_dim: usize, seed: u64) -> PurifiedState {
    PurifiedState::random(num_qubits, aux_dim, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Non-negative weights per (arrangement, outcome); shot counts or SPAM-corrected pseudo-counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    num_outcomes: usize,
    /// Nonzero `(outcome, weight)` entries per arrangement.
    entries: Vec<Vec<(usize, f64)>>,
}

impl Observations {
    pub fn from_record(record: &MeasurementRecord) -> Self {
        let weights: Vec<Vec<f64>> =
            record.counts().iter().map(|c| c.iter().map(|&k| k as f64).collect()).collect();
        Self::from_weights_unchecked(record.num_outcomes(), &weights)
    }

    pub fn from_weights(weights: &[Vec<f64>]) -> Result<Self> {
        let num_outcomes = weights.first().map_or(0, Vec::len);
        if weights.iter().any(|w| w.len() != num_outcomes) {
            return Err(Error::Shape("arrangements have different outcome counts".into()));
        }
        if weights.iter().flatten().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Domain("observation weights must be finite and non-negative".into()));
        }
        Ok(Self::from_weights_unchecked(num_outcomes, weights))
    }

    /// Frequencies scaled by per-arrangement shot counts.
    pub fn from_frequencies(frequencies: &[Vec<f64>], shots: &[u64]) -> Result<Self> {
        if frequencies.len() != shots.len() {
            return Err(Error::Shape(format!("{} distributions for {} shot counts", frequencies.len(), shots.len())));
        }
        let weights: Vec<Vec<f64>> =
            frequencies.iter().zip(shots).map(|(f, &s)| f.iter().map(|p| p * s as f64).collect()).collect();
        Self::from_weights(&weights)
    }

    fn from_weights_unchecked(num_outcomes: usize, weights: &[Vec<f64>]) -> Self {
        let entries = weights
            .iter()
            .map(|w| w.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(n, &v)| (n, v)).collect())
            .collect();
        Self { num_outcomes, entries }
    }

    pub fn num_arrangements(&self) -> usize {
        self.entries.len()
    }

    pub fn num_outcomes(&self) -> usize {
        self.num_outcomes
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().flatten().map(|(_, w)| w).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(Vec::is_empty)
    }

    fn check_against(&self, ens: &MeasurementEnsemble) -> Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        if self.entries.len() != ens.num_arrangements() || self.num_outcomes != ens.outcomes_per_arrangement() {
            return Err(Error::Shape(format!(
                "observations cover {}x{} outcomes, ensemble has {}x{}",
                self.entries.len(),
                self.num_outcomes,
                ens.num_arrangements(),
                ens.outcomes_per_arrangement()
            )));
        }
        Ok(())
    }
}

/// `Σ E_{m,n} ln max(P_{m,n}(ρ), 1e-12)`.
pub fn log_likelihood(rho: &DensityMatrix, obs: &Observations, ens: &MeasurementEnsemble) -> Result<f64> {
    obs.check_against(ens)?;
    if obs.is_empty() {
        return Ok(0.0);
    }
    let probs = ens.probabilities(rho.matrix())?;
    Ok(log_likelihood_from_probabilities(&probs, obs))
}

pub fn log_likelihood_from_probabilities(probs: &[Vec<f64>], obs: &Observations) -> f64 {
    obs.entries
        .iter()
        .zip(probs)
        .flat_map(|(entries, p)| entries.iter().map(move |&(n, w)| w * libm::log(p[n].max(PROB_FLOOR))))
        .sum()
}

/// Same value as [`log_likelihood`] evaluated directly on the purification:
/// `P_{m,n} = Σ_k |Σ_x W_m[n,x] ψ[x,k]|²`.
pub fn purified_log_likelihood(psi: &PurifiedState, obs: &Observations, ens: &MeasurementEnsemble) -> Result<f64> {
    obs.check_against(ens)?;
    if psi.num_qubits != ens.system_qubits() {
        return Err(Error::Shape(format!(
            "{}-qubit purification for a {}-qubit ensemble",
            psi.num_qubits,
            ens.system_qubits()
        )));
    }
    let dim = 1usize << psi.num_qubits;
    let mut total = 0.0;
    for (m, entries) in obs.entries.iter().enumerate() {
        let w = ens.isometry(m);
        for &(n, weight) in entries {
            let row = w.row(n);
            let mut p = 0.0;
            for k in 0..psi.aux_dim {
                let mut v = ZERO;
                for x in 0..dim {
                    v += row[x] * psi.amp(x, k);
                }
                p += v.norm_sqr();
            }
            total += weight * libm::log(p.max(PROB_FLOOR));
        }
    }
    Ok(total)
}

/// Chain position with its cached log-likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainPoint {
    pub psi: PurifiedState,
    pub log_likelihood: f64,
}

impl ChainPoint {
    pub fn new(psi: PurifiedState, obs: &Observations, ens: &MeasurementEnsemble) -> Result<Self> {
        let log_likelihood = purified_log_likelihood(&psi, obs, ens)?;
        Ok(Self { psi, log_likelihood })
    }
}

/// One Metropolis-Hastings transition with a symmetric proposal.
pub fn mh_step<R: Rng + ?Sized>(
    current: &ChainPoint,
    step: f64,
    obs: &Observations,
    ens: &MeasurementEnsemble,
    rng: &mut R,
) -> Result<(ChainPoint, bool)> {
    if !(step >= 0.0 && step.is_finite()) {
        return Err(Error::Domain(format!("jumping step {step} must be finite and non-negative")));
    }
    let proposal = current.psi.propose(step, rng);
    let log_likelihood = purified_log_likelihood(&proposal, obs, ens)?;
    let u: f64 = rng.random();
    if libm::log(u) < log_likelihood - current.log_likelihood {
        Ok((ChainPoint { psi: proposal, log_likelihood }, true))
    } else {
        Ok((current.clone(), false))
    }
}

/// `4π Δ₀ ⟨T(ρ, ⟨ρ⟩)⟩` over `samples`, floored at [`STEP_MIN`].
pub fn adapt_step(samples: &[DensityMatrix], delta0: f64) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Domain(format!("step adaptation needs at least 2 samples, got {}", samples.len())));
    }
    let mean = mean_state(samples);
    let mut total = 0.0;
    for s in samples {
        total += trace_distance(s, &mean)?;
    }
    let step = 4.0 * PI * delta0 * total / samples.len() as f64;
    Ok(step.max(STEP_MIN))
}

fn mean_state(samples: &[DensityMatrix]) -> DensityMatrix {
    let dim = samples[0].dim();
    let mut sum = ComplexMatrix::zeros(dim, dim);
    for s in samples {
        sum = &sum + s.matrix();
    }
    DensityMatrix::new_unchecked(sum.scale(C64::new(1.0 / samples.len() as f64, 0.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub chain_length: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub delta0: f64,
    pub initial_step: f64,
    /// Burn-in steps between step-size updates.
    pub adapt_interval: usize,
    pub aux_dim: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chain_length: 50_000,
            burn_in: 10_000,
            thinning: 10,
            delta0: 0.1,
            initial_step: 0.1,
            adapt_interval: 100,
            aux_dim: 2,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.chain_length {
            return Err(Error::Config(format!(
                "burn-in {} must be shorter than the chain length {}",
                self.burn_in, self.chain_length
            )));
        }
        if self.thinning == 0 || self.adapt_interval < 2 || self.aux_dim == 0 {
            return Err(Error::Config("thinning ≥ 1, adapt_interval ≥ 2 and aux_dim ≥ 1 required".into()));
        }
        if !(self.delta0 > 0.0 && self.initial_step > 0.0) {
            return Err(Error::Config("delta0 and initial_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl SummaryStats {
    pub fn from_values(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN, min: f64::NAN, max: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: libm::sqrt(var),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmeResult {
    pub rho_mean: DensityMatrix,
    /// Row-major sample standard deviation of the real parts.
    pub std_re: Vec<f64>,
    /// Row-major sample standard deviation of the imaginary parts.
    pub std_im: Vec<f64>,
    pub fidelity_to_mean: SummaryStats,
    /// Post-burn-in acceptance rate.
    pub acceptance_rate: f64,
    pub sample_count: usize,
    pub final_step: f64,
    pub map_log_likelihood: f64,
    /// Running maximum log-likelihood, one entry per adaptation interval.
    pub map_history: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Resumable chain: everything needed to continue bit-identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BmeChain {
    config: McmcConfig,
    #[serde(with = "rng_state")]
    rng: ChaCha8Rng,
    point: ChainPoint,
    step: f64,
    iteration: usize,
    window: Vec<DensityMatrix>,
    accepted_after_burn_in: usize,
    samples: Vec<DensityMatrix>,
    map_log_likelihood: f64,
    map_history: Vec<f64>,
}

impl BmeChain {
    /// Starts from a prior sample drawn from the config seed.
    pub fn new(obs: &Observations, ens: &MeasurementEnsemble, config: McmcConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let psi = PurifiedState::random(ens.system_qubits(), config.aux_dim, &mut rng);
        Self::start(obs, ens, config, rng, psi)
    }

    /// Starts from a given purification, e.g. a linear-inversion warm start.
    pub fn with_initial(
        obs: &Observations,
        ens: &MeasurementEnsemble,
        config: McmcConfig,
        initial: PurifiedState,
    ) -> Result<Self> {
        config.validate()?;
        if initial.aux_dim != config.aux_dim {
            return Err(Error::Config("initial purification does not match aux_dim".into()));
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::start(obs, ens, config, rng, initial)
    }

    fn start(
        obs: &Observations,
        ens: &MeasurementEnsemble,
        config: McmcConfig,
        rng: ChaCha8Rng,
        psi: PurifiedState,
    ) -> Result<Self> {
        let point = ChainPoint::new(psi, obs, ens)?;
        Ok(Self {
            step: config.initial_step,
            map_log_likelihood: point.log_likelihood,
            config,
            rng,
            point,
            iteration: 0,
            window: Vec::new(),
            accepted_after_burn_in: 0,
            samples: Vec::new(),
            map_history: Vec::new(),
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.chain_length
    }

    pub fn config(&self) -> &McmcConfig {
        &self.config
    }

    /// Runs up to `max_steps` further transitions.
    pub fn advance(&mut self, max_steps: usize, obs: &Observations, ens: &MeasurementEnsemble) -> Result<()> {
        let cfg = &self.config;
        let end = (self.iteration + max_steps).min(cfg.chain_length);
        while self.iteration < end {
            let (next, accepted) = mh_step(&self.point, self.step, obs, ens, &mut self.rng)?;
            self.point = next;
            self.map_log_likelihood = self.map_log_likelihood.max(self.point.log_likelihood);
            let it = self.iteration;
            if it < cfg.burn_in {
                self.window.push(self.point.psi.reduced());
                if self.window.len() == cfg.adapt_interval {
                    self.step = adapt_step(&self.window, cfg.delta0)?;
                    self.window.clear();
                }
            } else {
                if accepted {
                    self.accepted_after_burn_in += 1;
                }
                if (it - cfg.burn_in) % cfg.thinning == 0 {
                    self.samples.push(self.point.psi.reduced());
                }
            }
            if (it + 1) % cfg.adapt_interval == 0 {
                self.map_history.push(self.map_log_likelihood);
            }
            self.iteration += 1;
        }
        Ok(())
    }

    /// Posterior summary of the retained samples.
    pub fn finish(self) -> Result<BmeResult> {
        if !self.is_done() {
            return Err(Error::Config(format!(
                "chain stopped at {} of {} steps",
                self.iteration, self.config.chain_length
            )));
        }
        let samples = &self.samples;
        let dim = samples[0].dim();
        let n = samples.len() as f64;
        let mut sum = ComplexMatrix::zeros(dim, dim);
        for s in samples {
            sum = &sum + s.matrix();
        }
        let mut mean = sum.scale(C64::new(1.0 / n, 0.0));
        let tr = mean.trace().re;
        mean = mean.scale(C64::new(1.0 / tr, 0.0));
        let rho_mean = DensityMatrix::new_unchecked(mean);

        let mut var_re = vec![0.0; dim * dim];
        let mut var_im = vec![0.0; dim * dim];
        for s in samples {
            for (k, (a, b)) in s.matrix().as_slice().iter().zip(rho_mean.matrix().as_slice()).enumerate() {
                let d = a - b;
                var_re[k] += d.re * d.re;
                var_im[k] += d.im * d.im;
            }
        }
        let denom = (n - 1.0).max(1.0);
        let std_re = var_re.iter().map(|v| libm::sqrt(v / denom)).collect();
        let std_im = var_im.iter().map(|v| libm::sqrt(v / denom)).collect();

        let fids = samples.iter().map(|s| fidelity(s, &rho_mean)).collect::<Result<Vec<_>>>()?;
        let post = self.config.chain_length - self.config.burn_in;
        let acceptance_rate = self.accepted_after_burn_in as f64 / post as f64;
        let mut warnings = Vec::new();
        if acceptance_rate < ACCEPTANCE_BAND.0 || acceptance_rate > ACCEPTANCE_BAND.1 {
            warnings.push(format!(
                "acceptance rate {acceptance_rate:.3} outside [{}, {}]",
                ACCEPTANCE_BAND.0, ACCEPTANCE_BAND.1
            ));
        }
        Ok(BmeResult {
            rho_mean,
            std_re,
            std_im,
            fidelity_to_mean: SummaryStats::from_values(&fids),
            acceptance_rate,
            sample_count: samples.len(),
            final_step: self.step,
            map_log_likelihood: self.map_log_likelihood,
            map_history: self.map_history,
            warnings,
        })
    }
}

/// ChaCha8 position as `(seed, stream, word position)`.
mod rng_state {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct State {
        seed: [u8; 32],
        stream: u64,
        word_pos_hi: u64,
        word_pos_lo: u64,
    }

    pub fn serialize<S: Serializer>(rng: &ChaCha8Rng, s: S) -> Result<S::Ok, S::Error> {
        let pos = rng.get_word_pos();
        State { seed: rng.get_seed(), stream: rng.get_stream(), word_pos_hi: (pos >> 64) as u64, word_pos_lo: pos as u64 }
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ChaCha8Rng, D::Error> {
        let st = State::deserialize(d)?;
        let mut rng = ChaCha8Rng::from_seed(st.seed);
        rng.set_stream(st.stream);
        rng.set_word_pos(((st.word_pos_hi as u128) << 64) | st.word_pos_lo as u128);
        Ok(rng)
    }
}

pub fn run_bme(obs: &Observations, ens: &MeasurementEnsemble, config: &McmcConfig) -> Result<BmeResult> {
    let mut chain = BmeChain::new(obs, ens, config.clone())?;
    chain.advance(usize::MAX, obs, ens)?;
    chain.finish()
}
