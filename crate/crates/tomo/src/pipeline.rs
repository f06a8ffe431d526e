//! End-to-end reconstruction: prepare, measure, sample, correct, estimate.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tomo_core::bme::{run_bme, BmeChain, BmeResult, McmcConfig, Observations};
use tomo_core::linalg::{tensor, ComplexMatrix};
use tomo_core::pauli::pauli_basis;
use tomo_core::rydberg::{build_hamiltonian, evolve, trace_out_ancilla, AtomGeometry, BlockadeSubspace};
use tomo_core::state::{fidelity, psd_project, DensityMatrix};
use tomo_core::tomography::{
    correct_frequencies, least_squares_reconstruct, sample_record, spam_correct, target_state, MeasurementEnsemble,
    MeasurementRecord, RankTolerance,
};

use crate::config::ExperimentConfig;
use crate::error::{Result, TomoError};
use crate::parallel::{build_ensemble, with_parallelism};
use crate::report::{
    matrix_json, BmeRun, EnsembleDiagnostics, EstimatorSummary, LinearRun, Metadata, ReconstructionReport, References,
    SeedRun, Stats, Summary, SCHEMA_VERSION,
};

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Directory for resumable BME chain files.
    pub checkpoint_dir: Option<PathBuf>,
}

/// Everything a run produces; the report is the serializable part.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: ReconstructionReport,
    pub ensemble: MeasurementEnsemble,
    /// Model outcome distributions per arrangement, before readout errors.
    pub measured_probabilities: Vec<Vec<f64>>,
    pub records: Vec<(u64, MeasurementRecord)>,
    pub bme_results: Vec<(u64, BmeResult)>,
}

/// System state after the initialization pulse, ancillas traced out.
pub fn prepare_state(cfg: &ExperimentConfig, geom: &AtomGeometry) -> Result<DensityMatrix> {
    let opts = cfg.evolution.options();
    let subspace = opts.blockade_truncation.map(|r| BlockadeSubspace::new(geom, r));
    let start = DensityMatrix::basis_state(geom.num_atoms(), 0)?;
    let h = build_hamiltonian(geom, &cfg.init_drive())?;
    let joint = evolve(&start, &h, &cfg.noise_params(), cfg.drive.init_time_us, &opts, subspace.as_ref())?;
    Ok(trace_out_ancilla(&joint, geom.num_system(), geom.num_ancilla())?)
}

fn noisy_entangle(cfg: &ExperimentConfig) -> bool {
    cfg.noise.during_entangle && !cfg.noise_params().is_noiseless()
}

fn normalized(mut p: Vec<f64>) -> Vec<f64> {
    for x in &mut p {
        *x = x.max(0.0);
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

/// Outcome distributions the apparatus would produce for `rho_sys`.
///
/// With dephasing during the entangling pulse these come from Lindblad
/// evolution of `rho_sys ⊗ |0…0⟩⟨0…0|`; otherwise from the ideal ensemble.
pub fn measured_probabilities(
    cfg: &ExperimentConfig,
    ensemble: &MeasurementEnsemble,
    rho_sys: &DensityMatrix,
) -> Result<Vec<Vec<f64>>> {
    if !noisy_entangle(cfg) {
        return Ok(ensemble.probabilities(rho_sys.matrix())?.into_iter().map(normalized).collect());
    }
    let opts = cfg.evolution.options();
    let noise = cfg.noise_params();
    let drive = cfg.entangle_drive();
    let ancilla = DensityMatrix::basis_state(cfg.num_ancilla(), 0)?;
    let joint = DensityMatrix::new_unchecked(tensor(rho_sys.matrix(), ancilla.matrix())?);
    ensemble
        .arrangements()
        .par_iter()
        .map(|g| {
            let subspace = opts.blockade_truncation.map(|r| BlockadeSubspace::new(g, r));
            let h = build_hamiltonian(g, &drive)?;
            let out = evolve(&joint, &h, &noise, drive.duration_us, &opts, subspace.as_ref())?;
            Ok(normalized(out.populations()))
        })
        .collect()
}

fn chain_seed(cfg: &McmcConfig, run_seed: u64) -> u64 {
    cfg.seed ^ run_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("bme_chain_seed{seed}.json"))
}

fn run_chain(
    obs: &Observations,
    ens: &MeasurementEnsemble,
    config: McmcConfig,
    interval: Option<usize>,
    checkpoint: Option<PathBuf>,
) -> Result<BmeResult> {
    let (Some(interval), Some(path)) = (interval, checkpoint) else {
        return Ok(run_bme(obs, ens, &config)?);
    };
    let resumed = path
        .exists()
        .then(|| crate::report::read_json::<BmeChain>(&path))
        .transpose()?
        .filter(|c| *c.config() == config);
    let mut chain = match resumed {
        Some(c) => c,
        None => BmeChain::new(obs, ens, config)?,
    };
    while !chain.is_done() {
        chain.advance(interval, obs, ens)?;
        let text = serde_json::to_string(&chain)?;
        fs::write(&path, text).map_err(|e| TomoError::io(&path, e))?;
    }
    Ok(chain.finish()?)
}

struct SeedOutcome {
    run: SeedRun,
    record: Option<MeasurementRecord>,
    bme: Option<BmeResult>,
}

fn linear_run(ens: &MeasurementEnsemble, data: &[f64], cal: &DensityMatrix, target: &DensityMatrix) -> Result<LinearRun> {
    let est = least_squares_reconstruct(ens, data)?;
    let projected = psd_project(&est.rho_raw)?;
    Ok(LinearRun {
        fidelity_cal: fidelity(&projected.state, cal)?,
        fidelity_target: fidelity(&projected.state, target)?,
        raw_min_eigenvalue: projected.negativity.min(raw_min_eigenvalue(&est.rho_raw)?),
        clipped_weight: projected.clipped_weight,
        residual: est.residual,
        rho: matrix_json(projected.state.matrix()),
        rho_raw: matrix_json(&est.rho_raw),
    })
}

fn raw_min_eigenvalue(m: &ComplexMatrix) -> Result<f64> {
    Ok(DensityMatrix::new_unchecked(m.hermitian_part()).min_eigenvalue())
}

fn bme_run(result: &BmeResult, cal: &DensityMatrix, target: &DensityMatrix) -> Result<BmeRun> {
    let rho = &result.rho_mean;
    Ok(BmeRun {
        fidelity_cal: fidelity(rho, cal)?,
        fidelity_target: fidelity(rho, target)?,
        acceptance_rate: result.acceptance_rate,
        sample_count: result.sample_count,
        final_step: result.final_step,
        min_eigenvalue: rho.min_eigenvalue(),
        trace_error: (rho.matrix().trace().re - 1.0).abs(),
        fidelity_to_mean: result.fidelity_to_mean,
        map_log_likelihood: result.map_log_likelihood,
        warnings: result.warnings.clone(),
        rho: matrix_json(rho.matrix()),
        std_re: result.std_re.clone(),
        std_im: result.std_im.clone(),
    })
}

struct Shared<'a> {
    cfg: &'a ExperimentConfig,
    ens: &'a MeasurementEnsemble,
    probs: &'a [Vec<f64>],
    cal: &'a DensityMatrix,
    target: &'a DensityMatrix,
    checkpoint_dir: Option<&'a Path>,
}

fn run_seed(s: &Shared<'_>, seed: u64) -> Result<SeedOutcome> {
    let cfg = s.cfg;
    let shots = vec![cfg.sampling.shots; s.ens.num_arrangements()];
    let (record, corrected, clip) = if cfg.sampling.exact {
        let c = correct_frequencies(s.probs, &tomo_core::tomography::SpamModel::ideal())?;
        (None, c.frequencies, 0.0)
    } else {
        let record = sample_record(s.probs, &shots, &cfg.spam, seed)?;
        let c = spam_correct(&record, &cfg.spam)?;
        let clip = c.clip_l1.iter().sum::<f64>() / c.clip_l1.len() as f64;
        (Some(record), c.frequencies, clip)
    };
    let pseudoinverse = if cfg.estimator.linear() {
        let flat: Vec<f64> = corrected.iter().flatten().copied().collect();
        Some(linear_run(s.ens, &flat, s.cal, s.target)?)
    } else {
        None
    };
    let bme = if cfg.estimator.bayesian() {
        let obs = match &record {
            Some(r) if cfg.spam.p10 == 0.0 && cfg.spam.p01 == 0.0 => Observations::from_record(r),
            _ => Observations::from_frequencies(&corrected, &shots)?,
        };
        let chain_cfg = McmcConfig { seed: chain_seed(&cfg.bme, seed), ..cfg.bme.clone() };
        let checkpoint = s.checkpoint_dir.map(|d| checkpoint_path(d, seed));
        Some(run_chain(&obs, s.ens, chain_cfg, cfg.output.checkpoint_interval, checkpoint)?)
    } else {
        None
    };
    let run = SeedRun {
        seed,
        spam_clip_l1_mean: clip,
        pseudoinverse,
        bme: bme.as_ref().map(|b| bme_run(b, s.cal, s.target)).transpose()?,
    };
    Ok(SeedOutcome { run, record, bme })
}

fn summarize<'a>(runs: impl Iterator<Item = (f64, f64, f64)> + 'a) -> Option<EstimatorSummary> {
    let (mut cal, mut tgt, mut worst) = (Vec::new(), Vec::new(), f64::INFINITY);
    for (c, t, e) in runs {
        cal.push(c);
        tgt.push(t);
        worst = worst.min(e);
    }
    (!cal.is_empty()).then(|| EstimatorSummary {
        fidelity_cal: Stats::from_values(&cal),
        fidelity_target: Stats::from_values(&tgt),
        worst_min_eigenvalue: worst,
    })
}

/// Runs the configured experiment over every seed.
pub fn run_tomography_pipeline(cfg: &ExperimentConfig, options: &PipelineOptions) -> Result<PipelineOutput> {
    cfg.validate()?;
    if cfg.num_system() > 4 && !cfg.long_runtime {
        return Err(TomoError::Config(format!(
            "N = {} needs long_runtime = true (or --long-runtime)",
            cfg.num_system()
        )));
    }
    if let Some(dir) = &options.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| TomoError::io(dir, e))?;
    }
    with_parallelism(options.threads, || run_inner(cfg, options))?
}

fn run_inner(cfg: &ExperimentConfig, options: &PipelineOptions) -> Result<PipelineOutput> {
    let n = cfg.num_system();
    let geoms = cfg.arrangements()?;
    let basis = pauli_basis(n)?;
    let ensemble = build_ensemble(&geoms, &cfg.entangle_drive(), &basis)?;
    let rank = ensemble.rank(RankTolerance::Default);
    // BME stays well defined: the prior covers directions Q cannot see
    if rank.rank < ensemble.num_params() && cfg.estimator.linear() {
        return Err(tomo_core::Error::UnderDetermined { rank: rank.rank, required: ensemble.num_params() }.into());
    }
    let cal = prepare_state(cfg, &geoms[0])?;
    let target = target_state(cfg.target, n)?;
    let probs = measured_probabilities(cfg, &ensemble, &cal)?;

    let shared = Shared {
        cfg,
        ens: &ensemble,
        probs: &probs,
        cal: &cal,
        target: &target,
        checkpoint_dir: options.checkpoint_dir.as_deref(),
    };
    let outcomes: Vec<SeedOutcome> =
        cfg.sampling.seeds.par_iter().map(|&seed| run_seed(&shared, seed)).collect::<Result<_>>()?;

    let runs: Vec<SeedRun> = outcomes.iter().map(|o| o.run.clone()).collect();
    let summary = Summary {
        pseudoinverse: summarize(
            runs.iter().filter_map(|r| r.pseudoinverse.as_ref()).map(|l| (l.fidelity_cal, l.fidelity_target, l.raw_min_eigenvalue)),
        ),
        bme: summarize(runs.iter().filter_map(|r| r.bme.as_ref()).map(|b| (b.fidelity_cal, b.fidelity_target, b.min_eigenvalue))),
    };
    let sv = &rank.singular_values;
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    let sigma_min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = rank.condition_number();
    let report = ReconstructionReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        metadata: Metadata {
            generator: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            system_qubits: n,
            ancilla_qubits: cfg.num_ancilla(),
            outcomes_per_arrangement: ensemble.outcomes_per_arrangement(),
            angles_rad: cfg.angles()?,
            model_mismatch: noisy_entangle(cfg),
        },
        ensemble: EnsembleDiagnostics {
            rows: ensemble.num_rows(),
            params: ensemble.num_params(),
            rank: rank.rank,
            tolerance: rank.tolerance,
            sigma_max,
            sigma_min,
            condition_number: condition.is_finite().then_some(condition),
        },
        references: References {
            rho_cal: matrix_json(cal.matrix()),
            rho_target: matrix_json(target.matrix()),
            cal_target_fidelity: fidelity(&cal, &target)?,
            cal_purity: cal.purity(),
        },
        runs,
        summary,
    };
    let mut records = Vec::new();
    let mut bme_results = Vec::new();
    for o in outcomes {
        if let Some(r) = o.record {
            records.push((o.run.seed, r));
        }
        if let Some(b) = o.bme {
            bme_results.push((o.run.seed, b));
        }
    }
    Ok(PipelineOutput { report, ensemble, measured_probabilities: probs, records, bme_results })
}
