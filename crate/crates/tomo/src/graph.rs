//! Random atom layouts: uniform points in a square with an exclusion radius.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tomo_core::rydberg::{AtomGeometry, Position, DEFAULT_C6};

use crate::error::{Result, TomoError};

/// Consecutive rejected draws before a packing counts as infeasible.
pub const MAX_REJECTIONS: usize = 100_000;

/// Area growth factor applied after an infeasible packing when `auto_inflate` is set.
pub const INFLATION_STEP: f64 = 1.25;

const MAX_INFLATION_ROUNDS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomGraphConfig {
    /// Atoms per μm².
    pub density: f64,
    pub exclusion_radius_um: f64,
    pub system_count: usize,
    #[serde(default = "one")]
    pub ancilla_count: usize,
    /// Arrangement counts `M` to evaluate; arrangement sets are nested prefixes.
    pub arrangements: Vec<usize>,
    pub trials: usize,
    /// Multiplies the square's area `(N + N_A)/ν`.
    #[serde(default = "unit")]
    pub area_inflation: f64,
    #[serde(default = "yes")]
    pub auto_inflate: bool,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "unit")]
    pub rabi_mhz: f64,
    /// Defaults to the single-atom quarter period `1/(4Ω)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entangle_time_us: Option<f64>,
    #[serde(default = "default_c6")]
    pub c6: f64,
    /// Permit system sizes above 4.
    #[serde(default)]
    pub long_runtime: bool,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_c6() -> f64 {
    DEFAULT_C6
}

impl RandomGraphConfig {
    /// Density 0.1 μm⁻², exclusion radius 5 μm.
    pub fn standard(system_count: usize, arrangements: Vec<usize>, trials: usize) -> Self {
        Self {
            density: 0.1,
            exclusion_radius_um: 5.0,
            system_count,
            ancilla_count: 1,
            arrangements,
            trials,
            area_inflation: 1.0,
            auto_inflate: true,
            base_seed: 0,
            rabi_mhz: 1.0,
            entangle_time_us: None,
            c6: DEFAULT_C6,
            long_runtime: false,
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TomoError::io(path, e))?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| TomoError::Parse { path: path.into(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn entangle_time(&self) -> f64 {
        self.entangle_time_us.unwrap_or(1.0 / (4.0 * self.rabi_mhz))
    }

    pub fn max_arrangements(&self) -> usize {
        self.arrangements.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TomoError::Config(m.into()));
        if !(self.density > 0.0 && self.density.is_finite()) {
            return bad("density must be positive");
        }
        if !(self.exclusion_radius_um >= 0.0 && self.exclusion_radius_um.is_finite()) {
            return bad("exclusion radius must be non-negative");
        }
        if self.system_count == 0 || self.ancilla_count == 0 {
            return bad("system and ancilla counts must be positive");
        }
        let limit = if self.long_runtime { 6 } else { 4 };
        if self.system_count > limit {
            return Err(TomoError::Config(format!(
                "N = {} exceeds {limit}; set long_runtime = true for N ≤ 6",
                self.system_count
            )));
        }
        if self.system_count + self.ancilla_count > tomo_core::rydberg::MAX_ATOMS {
            return bad("too many atoms");
        }
        if self.arrangements.is_empty() || self.arrangements.contains(&0) {
            return bad("arrangement counts must be positive");
        }
        if self.trials == 0 {
            return bad("trials must be positive");
        }
        if !(self.area_inflation >= 1.0 && self.rabi_mhz > 0.0 && self.c6 > 0.0) {
            return bad("area_inflation ≥ 1, rabi_mhz > 0 and c6 > 0 required");
        }
        if let Some(t) = self.entangle_time_us {
            if !(t >= 0.0) {
                return bad("entangle_time_us must be non-negative");
            }
        }
        Ok(())
    }

    fn side(&self, inflation: f64) -> f64 {
        (inflation * (self.system_count + self.ancilla_count) as f64 / self.density).sqrt()
    }
}

/// A generated layout plus the area inflation it needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomGraph {
    pub geometry: AtomGeometry,
    pub inflation: f64,
    pub side_um: f64,
}

fn far_enough(p: &Position, placed: &[Position], r_exc: f64) -> bool {
    placed.iter().all(|q| {
        let d2: f64 = (0..3).map(|k| (p[k] - q[k]) * (p[k] - q[k])).sum();
        d2 >= r_exc * r_exc && d2 > 0.0
    })
}

fn place(count: usize, side: f64, r_exc: f64, placed: &mut Vec<Position>, rng: &mut ChaCha8Rng) -> bool {
    let half = side / 2.0;
    for _ in 0..count {
        let mut rejections = 0;
        loop {
            let p = [rng.random_range(-half..=half), rng.random_range(-half..=half), 0.0];
            if far_enough(&p, placed, r_exc) {
                placed.push(p);
                break;
            }
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return false;
            }
        }
    }
    true
}

/// `N + N_A` points uniform in a square of area `inflation·(N + N_A)/ν`,
/// pairwise at least `r_exc` apart, system atoms first.
pub fn generate_random_graph(config: &RandomGraphConfig, seed: u64) -> Result<RandomGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with_rng(config, &mut rng)
}

fn generate_with_rng(config: &RandomGraphConfig, rng: &mut ChaCha8Rng) -> Result<RandomGraph> {
    config.validate()?;
    let total = config.system_count + config.ancilla_count;
    let mut inflation = config.area_inflation;
    for _ in 0..MAX_INFLATION_ROUNDS {
        let side = config.side(inflation);
        let mut placed = Vec::with_capacity(total);
        if place(total, side, config.exclusion_radius_um, &mut placed, rng) {
            let ancilla = placed.split_off(config.system_count);
            let geometry = AtomGeometry::new(placed, ancilla)?;
            return Ok(RandomGraph { geometry, inflation, side_um: side });
        }
        if !config.auto_inflate {
            break;
        }
        inflation *= INFLATION_STEP;
    }
    Err(TomoError::Config(format!(
        "packing infeasible: {total} atoms with exclusion radius {} μm at density {} (inflation {inflation})",
        config.exclusion_radius_um, config.density
    )))
}

/// `count` arrangements sharing the system of one generated graph, with the
/// ancillas redrawn in the same square for each. The square grows when no
/// further placement fits and `auto_inflate` is set; the largest inflation is returned.
pub fn graph_arrangements(config: &RandomGraphConfig, seed: u64, count: usize) -> Result<(Vec<AtomGeometry>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = generate_with_rng(config, &mut rng)?;
    let system = first.geometry.system().to_vec();
    let mut out = vec![first.geometry];
    let mut inflation = first.inflation;
    while out.len() < count {
        let mut rounds = 0;
        let ancilla = loop {
            let mut placed = system.clone();
            if place(config.ancilla_count, config.side(inflation), config.exclusion_radius_um, &mut placed, &mut rng) {
                break placed.split_off(system.len());
            }
            rounds += 1;
            if !config.auto_inflate || rounds >= MAX_INFLATION_ROUNDS {
                return Err(TomoError::Config("cannot place further ancillas in the generated square".into()));
            }
            inflation *= INFLATION_STEP;
        };
        out.push(AtomGeometry::new(system.clone(), ancilla)?);
    }
    Ok((out, inflation))
}
