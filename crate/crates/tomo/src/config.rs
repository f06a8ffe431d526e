//! TOML experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tomo_core::bme::McmcConfig;
use tomo_core::rydberg::{
    ancilla_ring, regular_polygon, sweep_angles, AntiAddressing, AtomGeometry, DriveParams, EvolutionOptions,
    NoiseParams, Position, DEFAULT_C6, DEFAULT_STEPS_PER_US, MAX_ATOMS,
};
use tomo_core::tomography::{SpamModel, TargetKind};

use crate::error::{Result, TomoError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub target: TargetKind,
    /// Permit system sizes above 4.
    #[serde(default)]
    pub long_runtime: bool,
    pub system: SystemSpec,
    pub ancilla: AncillaSpec,
    pub drive: DriveSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub spam: SpamModel,
    pub sampling: SamplingSpec,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default)]
    pub bme: McmcConfig,
    #[serde(default)]
    pub evolution: EvolutionSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub count: usize,
    /// Regular polygon of this circumradius (μm), centred on the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_um: Option<f64>,
    /// Explicit 2D or 3D coordinates (μm); replaces `radius_um`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AncillaSpec {
    #[serde(default = "one")]
    pub count: usize,
    pub radius_um: f64,
    /// Evenly spaced angles `2πj/(M·N_A)`, covering the ring's symmetry period once.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrangements: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles_rad: Option<Vec<f64>>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSpec {
    pub rabi_mhz: f64,
    #[serde(default)]
    pub detuning_mhz: f64,
    #[serde(default = "default_c6")]
    pub c6: f64,
    pub init_time_us: f64,
    pub entangle_time_us: f64,
    #[serde(default)]
    pub anti_addressing: AntiAddressing,
}

fn default_c6() -> f64 {
    DEFAULT_C6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub gamma_ind: f64,
    #[serde(default)]
    pub gamma_col: f64,
    /// Also dephase during the entangling pulse when generating data.
    #[serde(default = "yes")]
    pub during_entangle: bool,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { gamma_ind: 0.0, gamma_col: 0.0, during_entangle: true }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    /// Shots per arrangement.
    pub shots: u64,
    pub seeds: Vec<u64>,
    /// Use the model probabilities directly instead of sampled counts.
    #[serde(default)]
    pub exact: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Pseudoinverse,
    Bme,
    #[default]
    Both,
}

impl Estimator {
    pub fn linear(self) -> bool {
        matches!(self, Self::Pseudoinverse | Self::Both)
    }

    pub fn bayesian(self) -> bool {
        matches!(self, Self::Bme | Self::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSpec {
    #[serde(default = "default_steps")]
    pub steps_per_us: f64,
    /// Drop states with two excitations closer than this distance (μm).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blockade_truncation_um: Option<f64>,
}

fn default_steps() -> f64 {
    DEFAULT_STEPS_PER_US
}

impl Default for EvolutionSpec {
    fn default() -> Self {
        Self { steps_per_us: DEFAULT_STEPS_PER_US, blockade_truncation_um: None }
    }
}

impl EvolutionSpec {
    pub fn options(&self) -> EvolutionOptions {
        EvolutionOptions { steps_per_us: self.steps_per_us, blockade_truncation: self.blockade_truncation_um }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Write a resumable BME chain file every this many steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_interval: Option<usize>,
    #[serde(default = "yes")]
    pub write_records: bool,
    #[serde(default = "yes")]
    pub write_q_matrix: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { checkpoint_interval: None, write_records: true, write_q_matrix: true }
    }
}

fn bad(msg: impl Into<String>) -> TomoError {
    TomoError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| TomoError::Parse { path: "<inline>".into(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TomoError::io(path, e))?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| TomoError::Parse { path: path.into(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| TomoError::Serialize(e.to_string()))
    }

    pub fn num_system(&self) -> usize {
        self.system.count
    }

    pub fn num_ancilla(&self) -> usize {
        self.ancilla.count
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(bad("name must not be empty"));
        }
        let n = self.system.count;
        if n == 0 || n + self.ancilla.count > MAX_ATOMS {
            return Err(bad(format!(
                "need 1 ≤ N and N + N_A ≤ {MAX_ATOMS}, got N={n}, N_A={}",
                self.ancilla.count
            )));
        }
        if self.ancilla.count == 0 {
            return Err(bad("at least one ancilla is required"));
        }
        if self.target == TargetKind::Bell && n != 2 {
            return Err(bad("the Bell target needs exactly 2 system atoms"));
        }
        self.system_positions()?;
        let angles = self.angles()?;
        if angles.is_empty() {
            return Err(bad("at least one ancilla arrangement is required"));
        }
        if !(self.ancilla.radius_um > 0.0 && self.ancilla.radius_um.is_finite()) {
            return Err(bad("ancilla radius must be positive"));
        }
        if self.sampling.seeds.is_empty() {
            return Err(bad("at least one seed is required"));
        }
        if self.sampling.shots == 0 && !self.sampling.exact {
            return Err(bad("shots must be positive unless sampling is exact"));
        }
        if !(self.evolution.steps_per_us > 0.0) {
            return Err(bad("steps_per_us must be positive"));
        }
        if !(self.drive.init_time_us >= 0.0 && self.drive.entangle_time_us >= 0.0) {
            return Err(bad("pulse durations must be non-negative"));
        }
        if self.output.checkpoint_interval == Some(0) {
            return Err(bad("checkpoint_interval must be positive"));
        }
        self.init_drive().validate()?;
        self.entangle_drive().validate()?;
        self.noise_params().validate()?;
        self.spam.validate()?;
        if !self.spam.is_invertible() {
            return Err(bad("SPAM model must satisfy p10 + p01 < 1"));
        }
        self.bme.validate()?;
        self.arrangements()?;
        Ok(())
    }

    pub fn system_positions(&self) -> Result<Vec<Position>> {
        let s = &self.system;
        match (&s.positions, s.radius_um) {
            (Some(_), Some(_)) => Err(bad("give either system.radius_um or system.positions, not both")),
            (None, None) => Err(bad("system.radius_um or system.positions is required")),
            (None, Some(r)) => {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(bad("system radius must be positive"));
                }
                Ok(regular_polygon(s.count, r))
            }
            (Some(ps), None) => {
                if ps.len() != s.count {
                    return Err(bad(format!("system.count = {} but {} positions given", s.count, ps.len())));
                }
                ps.iter()
                    .map(|p| match p.as_slice() {
                        [x, y] => Ok([*x, *y, 0.0]),
                        [x, y, z] => Ok([*x, *y, *z]),
                        _ => Err(bad("positions must have 2 or 3 coordinates")),
                    })
                    .collect()
            }
        }
    }

    pub fn angles(&self) -> Result<Vec<f64>> {
        match (&self.ancilla.angles_rad, self.ancilla.arrangements) {
            (Some(_), Some(_)) => Err(bad("give either ancilla.arrangements or ancilla.angles_rad, not both")),
            (None, None) => Err(bad("ancilla.arrangements or ancilla.angles_rad is required")),
            (Some(a), None) => Ok(a.clone()),
            (None, Some(m)) => {
                let period = self.ancilla.count as f64;
                Ok(sweep_angles(m).into_iter().map(|t| t / period).collect())
            }
        }
    }

    pub fn arrangements(&self) -> Result<Vec<AtomGeometry>> {
        let system = self.system_positions()?;
        self.angles()?
            .into_iter()
            .map(|theta| {
                AtomGeometry::new(system.clone(), ancilla_ring(self.ancilla.count, self.ancilla.radius_um, theta))
                    .map_err(TomoError::from)
            })
            .collect()
    }

    /// Initialization drive with every ancilla anti-addressed.
    pub fn init_drive(&self) -> DriveParams {
        let n = self.system.count;
        DriveParams {
            rabi_mhz: self.drive.rabi_mhz,
            detuning_mhz: self.drive.detuning_mhz,
            c6: self.drive.c6,
            duration_us: self.drive.init_time_us,
            anti_addressed: (n..n + self.ancilla.count).collect(),
            anti_addressing: self.drive.anti_addressing,
        }
    }

    pub fn entangle_drive(&self) -> DriveParams {
        DriveParams {
            rabi_mhz: self.drive.rabi_mhz,
            detuning_mhz: self.drive.detuning_mhz,
            c6: self.drive.c6,
            duration_us: self.drive.entangle_time_us,
            anti_addressed: Vec::new(),
            anti_addressing: self.drive.anti_addressing,
        }
    }

    pub fn noise_params(&self) -> NoiseParams {
        NoiseParams { gamma_ind: self.noise.gamma_ind, gamma_col: self.noise.gamma_col }
    }
}

const PRESETS: [(&str, &str); 4] = [
    ("bell-n2", include_str!("../presets/bell_n2.toml")),
    ("w-n3", include_str!("../presets/w_n3.toml")),
    ("w-n4", include_str!("../presets/w_n4.toml")),
    ("w-n6", include_str!("../presets/w_n6.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Bundled configuration for one of the tabulated experiments.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let src = preset_source(name).ok_or_else(|| {
        bad(format!("unknown preset {name:?}; available: {}", preset_names().join(", ")))
    })?;
    ExperimentConfig::from_toml_str(src)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_ancilla_sweep_has_no_repeated_layouts() {
        let cfg = preset("w-n6").unwrap();
        let angles = cfg.angles().unwrap();
        assert!((angles[1] - std::f64::consts::PI / 24.0).abs() < 1e-15);
        let geoms = cfg.arrangements().unwrap();
        let key = |g: &AtomGeometry| {
            let mut a: Vec<_> = g.ancilla().iter().map(|p| ((p[0] * 1e6).round() as i64, (p[1] * 1e6).round() as i64)).collect();
            a.sort();
            a
        };
        for i in 0..geoms.len() {
            for j in i + 1..geoms.len() {
                assert_ne!(key(&geoms[i]), key(&geoms[j]), "{i} and {j} coincide");
            }
        }
    }

    #[test]
    fn every_preset_parses_and_validates() {
        for name in preset_names() {
            let cfg = preset(name).unwrap();
            assert!(!cfg.arrangements().unwrap().is_empty(), "{name}");
        }
    }

    #[test]
    fn preset_values() {
        let bell = preset("bell-n2").unwrap();
        assert_eq!(bell.sampling.shots, 550);
        assert_eq!(bell.angles().unwrap().len(), 20);
        assert_eq!(bell.spam, SpamModel { p10: 0.02, p01: 0.10 });
        assert_eq!(bell.noise.gamma_col, 0.07);
        assert_eq!(preset("w-n3").unwrap().sampling.shots, 1300);
        assert_eq!(preset("w-n4").unwrap().sampling.shots, 550);
        let n6 = preset("w-n6").unwrap();
        assert_eq!((n6.sampling.shots, n6.ancilla.count), (700, 2));
    }

    #[test]
    fn init_drive_anti_addresses_ancillas() {
        let cfg = preset("w-n6").unwrap();
        assert_eq!(cfg.init_drive().anti_addressed, vec![6, 7]);
        assert!(cfg.entangle_drive().anti_addressed.is_empty());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let src = preset_source("bell-n2").unwrap().replace("[drive]", "[drive]\nrabbi_mhz = 1.0");
        assert!(matches!(ExperimentConfig::from_toml_str(&src), Err(TomoError::Parse { .. })));
    }

    #[test]
    fn inconsistent_specs_are_config_errors() {
        let mut cfg = preset("bell-n2").unwrap();
        cfg.ancilla.angles_rad = Some(vec![0.0]);
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);

        let mut cfg = preset("w-n3").unwrap();
        cfg.target = TargetKind::Bell;
        assert!(cfg.validate().is_err());

        let mut cfg = preset("bell-n2").unwrap();
        cfg.spam = SpamModel { p10: 0.6, p01: 0.5 };
        assert!(cfg.validate().is_err());

        let mut cfg = preset("bell-n2").unwrap();
        cfg.bme.burn_in = cfg.bme.chain_length;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn explicit_positions() {
        let mut cfg = preset("bell-n2").unwrap();
        cfg.system.radius_um = None;
        cfg.system.positions = Some(vec![vec![-2.5, 0.0], vec![2.5, 0.0, 0.0]]);
        assert_eq!(cfg.system_positions().unwrap(), vec![[-2.5, 0.0, 0.0], [2.5, 0.0, 0.0]]);
        cfg.system.positions = Some(vec![vec![1.0]]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = preset("w-n4").unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }
}
