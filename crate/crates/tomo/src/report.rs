//! Report types, JSON/CSV emission and report validation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tomo_core::bme::SummaryStats;
use tomo_core::linalg::ComplexMatrix;
use tomo_core::rydberg::{AtomGeometry, DriveParams};
use tomo_core::state::DensityMatrix;
use tomo_core::tomography::{MeasurementRecord, SpamModel};

use crate::config::ExperimentConfig;
use crate::error::{Result, TomoError};
use crate::pipeline::PipelineOutput;

pub const SCHEMA_VERSION: u32 = 1;

/// Complex matrix as rows of `[re, im]` pairs.
pub type MatrixJson = Vec<Vec<[f64; 2]>>;

pub fn matrix_json(m: &ComplexMatrix) -> MatrixJson {
    (0..m.rows()).map(|r| m.row(r).iter().map(|z| [z.re, z.im]).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub metadata: Metadata,
    pub ensemble: EnsembleDiagnostics,
    pub references: References,
    pub runs: Vec<SeedRun>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub generator: String,
    pub version: String,
    pub system_qubits: usize,
    pub ancilla_qubits: usize,
    pub outcomes_per_arrangement: usize,
    pub angles_rad: Vec<f64>,
    /// Data are generated with dephasing in the entangling stage while the
    /// reconstruction model assumes ideal unitary dynamics.
    pub model_mismatch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDiagnostics {
    pub rows: usize,
    pub params: usize,
    pub rank: usize,
    pub tolerance: f64,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub condition_number: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct References {
    /// Prepared system state including dephasing.
    pub rho_cal: MatrixJson,
    pub rho_target: MatrixJson,
    pub cal_target_fidelity: f64,
    pub cal_purity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    /// Mean L1 change from clipping negative SPAM-corrected frequencies.
    pub spam_clip_l1_mean: f64,
    pub pseudoinverse: Option<LinearRun>,
    pub bme: Option<BmeRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRun {
    pub fidelity_cal: f64,
    pub fidelity_target: f64,
    /// Smallest eigenvalue of the unprojected estimate; negative values are unphysical.
    pub raw_min_eigenvalue: f64,
    pub clipped_weight: f64,
    pub residual: f64,
    pub rho: MatrixJson,
    pub rho_raw: MatrixJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmeRun {
    pub fidelity_cal: f64,
    pub fidelity_target: f64,
    pub acceptance_rate: f64,
    pub sample_count: usize,
    pub final_step: f64,
    pub min_eigenvalue: f64,
    pub trace_error: f64,
    pub fidelity_to_mean: SummaryStats,
    pub map_log_likelihood: f64,
    pub warnings: Vec<String>,
    pub rho: MatrixJson,
    pub std_re: Vec<f64>,
    pub std_im: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Stats {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let s = SummaryStats::from_values(values);
        let sample_std = if n > 1 { s.std * (n as f64 / (n - 1) as f64).sqrt() } else { 0.0 };
        Self {
            mean: s.mean,
            std: sample_std,
            stderr: sample_std / (n.max(1) as f64).sqrt(),
            min: s.min,
            max: s.max,
            count: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub fidelity_cal: Stats,
    pub fidelity_target: Stats,
    pub worst_min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub pseudoinverse: Option<EstimatorSummary>,
    pub bme: Option<EstimatorSummary>,
}

/// On-disk measurement record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFile {
    pub arrangements: Vec<ArrangementCounts>,
    pub meta: RecordMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrangementCounts {
    pub geometry: AtomGeometry,
    pub shots: u64,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub seed: u64,
    pub spam: SpamModel,
    pub drive: DriveParams,
}

impl RecordFile {
    pub fn new(record: &MeasurementRecord, geoms: &[AtomGeometry], seed: u64, spam: SpamModel, drive: DriveParams) -> Self {
        let arrangements = geoms
            .iter()
            .zip(record.counts())
            .zip(record.shots())
            .map(|((g, c), &s)| ArrangementCounts { geometry: g.clone(), shots: s, counts: c.clone() })
            .collect();
        Self { arrangements, meta: RecordMeta { seed, spam, drive } }
    }

    pub fn to_record(&self) -> Result<MeasurementRecord> {
        Ok(MeasurementRecord::new(self.arrangements.iter().map(|a| a.counts.clone()).collect())?)
    }
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| TomoError::io(path, e))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| TomoError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| TomoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| TomoError::Parse { path: path.into(), message: e.to_string() })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn finish_csv(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| TomoError::io(path, e))
}

/// `theta_rad, p0, p1, …` with one row per arrangement.
pub fn write_profiles_csv(angles: &[f64], probabilities: &[Vec<f64>], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let outcomes = probabilities.first().map_or(0, Vec::len);
    let mut header = vec!["theta_rad".to_string()];
    header.extend((0..outcomes).map(|n| format!("p{n}")));
    w.write_record(&header)?;
    for (theta, p) in angles.iter().zip(probabilities) {
        let mut row = vec![theta.to_string()];
        row.extend(p.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    finish_csv(w, path)
}

/// Long-format density-matrix entries: `state,row,col,re,im`.
pub fn write_density_bars_csv(states: &[(&str, &MatrixJson)], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["state", "row", "col", "re", "im"])?;
    for (name, m) in states {
        for (r, row) in m.iter().enumerate() {
            for (c, [re, im]) in row.iter().enumerate() {
                w.write_record([name.to_string(), r.to_string(), c.to_string(), re.to_string(), im.to_string()])?;
            }
        }
    }
    finish_csv(w, path)
}

pub fn write_q_csv(q: &tomo_core::linalg::RealMatrix, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in 0..q.rows() {
        w.write_record(q.row(r).iter().map(f64::to_string))?;
    }
    finish_csv(w, path)
}

/// Files written by [`emit_report`], relative to the run directory.
pub const REPORT_FILE: &str = "report.json";
pub const PROFILES_FILE: &str = "angular_profiles.csv";
pub const EMPIRICAL_PROFILES_FILE: &str = "empirical_profiles.csv";
pub const DENSITY_BARS_FILE: &str = "density_bars.csv";
pub const Q_FILE: &str = "q_matrix.csv";

/// Writes the JSON report and CSV plot data into `dir`.
pub fn emit_report(output: &PipelineOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| TomoError::io(dir, e))?;
    let mut written = Vec::new();
    let mut path = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    let report = &output.report;
    write_json(report, &path(REPORT_FILE))?;
    write_profiles_csv(&report.metadata.angles_rad, &output.measured_probabilities, &path(PROFILES_FILE))?;
    if let Some((_, record)) = output.records.first() {
        write_profiles_csv(&report.metadata.angles_rad, &record.frequencies(), &path(EMPIRICAL_PROFILES_FILE))?;
    }
    let mut states: Vec<(&str, &MatrixJson)> =
        vec![("cal", &report.references.rho_cal), ("target", &report.references.rho_target)];
    if let Some(run) = report.runs.first() {
        if let Some(l) = &run.pseudoinverse {
            states.push(("pseudoinverse", &l.rho));
        }
        if let Some(b) = &run.bme {
            states.push(("bme", &b.rho));
        }
    }
    write_density_bars_csv(&states, &path(DENSITY_BARS_FILE))?;
    let cfg = &report.config;
    if cfg.output.write_q_matrix {
        write_q_csv(output.ensemble.q(), &path(Q_FILE))?;
    }
    if cfg.output.write_records && !output.records.is_empty() {
        let sub = dir.join("records");
        fs::create_dir_all(&sub).map_err(|e| TomoError::io(&sub, e))?;
        for (seed, record) in &output.records {
            let file = RecordFile::new(record, output.ensemble.arrangements(), *seed, cfg.spam, cfg.entangle_drive());
            let p = sub.join(format!("record_seed{seed}.json"));
            write_json(&file, &p)?;
            written.push(p);
        }
    }
    if !output.bme_results.is_empty() {
        let sub = dir.join("bme");
        fs::create_dir_all(&sub).map_err(|e| TomoError::io(&sub, e))?;
        for (seed, result) in &output.bme_results {
            let p = sub.join(format!("bme_seed{seed}.json"));
            write_json(result, &p)?;
            written.push(p);
        }
    }
    Ok(written)
}

fn schema_error(msg: impl Into<String>) -> TomoError {
    TomoError::Parse { path: REPORT_FILE.into(), message: msg.into() }
}

fn check_matrix(v: &Value, what: &str) -> Result<usize> {
    let rows = v.as_array().ok_or_else(|| schema_error(format!("{what}: not an array")))?;
    for row in rows {
        let row = row.as_array().ok_or_else(|| schema_error(format!("{what}: row is not an array")))?;
        if row.len() != rows.len() {
            return Err(schema_error(format!("{what}: not square")));
        }
        for z in row {
            let pair = z.as_array().filter(|p| p.len() == 2 && p.iter().all(Value::is_number));
            if pair.is_none() {
                return Err(schema_error(format!("{what}: entries must be [re, im] number pairs")));
            }
        }
    }
    Ok(rows.len())
}

fn check_fidelity(v: &Value, what: &str) -> Result<()> {
    match v.as_f64() {
        Some(f) if (0.0..=1.0).contains(&f) => Ok(()),
        _ => Err(schema_error(format!("{what}: expected a fidelity in [0, 1]"))),
    }
}

/// Structural checks on a report document, independent of the Rust types.
pub fn validate_report_value(v: &Value) -> Result<()> {
    let obj = v.as_object().ok_or_else(|| schema_error("report is not an object"))?;
    for key in ["schema_version", "config", "metadata", "ensemble", "references", "runs", "summary"] {
        if !obj.contains_key(key) {
            return Err(schema_error(format!("missing key {key:?}")));
        }
    }
    if obj["schema_version"].as_u64() != Some(SCHEMA_VERSION as u64) {
        return Err(schema_error("unsupported schema_version"));
    }
    let n = obj["metadata"]["system_qubits"].as_u64().ok_or_else(|| schema_error("metadata.system_qubits"))?;
    let dim = 1usize << n;
    for key in ["rho_cal", "rho_target"] {
        if check_matrix(&obj["references"][key], key)? != dim {
            return Err(schema_error(format!("{key}: expected dimension {dim}")));
        }
    }
    let runs = obj["runs"].as_array().ok_or_else(|| schema_error("runs is not an array"))?;
    for run in runs {
        if !run["seed"].is_u64() {
            return Err(schema_error("run.seed must be an unsigned integer"));
        }
        for est in ["pseudoinverse", "bme"] {
            let e = &run[est];
            if e.is_null() {
                continue;
            }
            check_fidelity(&e["fidelity_cal"], est)?;
            check_fidelity(&e["fidelity_target"], est)?;
            if check_matrix(&e["rho"], est)? != dim {
                return Err(schema_error(format!("{est}.rho: expected dimension {dim}")));
            }
        }
    }
    Ok(())
}

/// Parses and validates `report.json` from a run directory.
pub fn load_report(dir: &Path) -> Result<ReconstructionReport> {
    let path = dir.join(REPORT_FILE);
    let value: Value = read_json(&path)?;
    validate_report_value(&value)?;
    serde_json::from_value(value).map_err(|e| TomoError::Parse { path, message: e.to_string() })
}

/// Short plain-text digest of a report.
pub fn render_summary(report: &ReconstructionReport, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "experiment      {}", report.config.name)?;
    writeln!(
        out,
        "ensemble        K={} params={} rank={} cond={}",
        report.ensemble.rows,
        report.ensemble.params,
        report.ensemble.rank,
        report.ensemble.condition_number.map_or("inf".to_string(), |c| format!("{c:.3e}"))
    )?;
    writeln!(out, "F(cal, target)  {:.4}", report.references.cal_target_fidelity)?;
    let line = |out: &mut dyn Write, name: &str, s: &Option<EstimatorSummary>| -> std::io::Result<()> {
        if let Some(s) = s {
            writeln!(
                out,
                "{name:<15} F_cal={:.4} ± {:.4}  F_target={:.4} ± {:.4}  (n={}, min eig {:.2e})",
                s.fidelity_cal.mean,
                s.fidelity_cal.std,
                s.fidelity_target.mean,
                s.fidelity_target.std,
                s.fidelity_cal.count,
                s.worst_min_eigenvalue
            )?;
        }
        Ok(())
    };
    line(out, "pseudoinverse", &report.summary.pseudoinverse)?;
    line(out, "bme", &report.summary.bme)
}

/// `DensityMatrix` from report JSON.
pub fn density_from_json(m: &MatrixJson) -> Result<DensityMatrix> {
    let dim = m.len();
    let cm = ComplexMatrix::from_fn(dim, dim, |r, c| tomo_core::C64::new(m[r][c][0], m[r][c][1]));
    Ok(DensityMatrix::new(cm)?)
}
