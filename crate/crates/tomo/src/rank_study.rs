//! Numerical rank of `Q` over random layouts.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tomo_core::linalg::RealMatrix;
use tomo_core::pauli::pauli_basis;
use tomo_core::rydberg::DriveParams;
use tomo_core::tomography::{arrangement_block, numerical_rank, RankTolerance};

use crate::error::{Result, TomoError};
use crate::graph::{graph_arrangements, RandomGraphConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub n: usize,
    pub k: usize,
    pub ratio: f64,
    pub seed: u64,
    pub log4_k: f64,
    pub m: usize,
    pub rank: usize,
    pub inflation: f64,
}

impl RankRow {
    pub fn full_rank(&self) -> bool {
        self.rank == 1 << (2 * self.n)
    }
}

/// Rank ratio for every trial and every requested arrangement count.
pub fn run_rank_study(config: &RandomGraphConfig) -> Result<Vec<RankRow>> {
    config.validate()?;
    let n = config.system_count;
    let basis = pauli_basis(n)?;
    let drive = DriveParams::resonant(config.rabi_mhz, config.entangle_time()).with_c6(config.c6);
    let max_m = config.max_arrangements();
    let params = basis.len();
    let per_trial: Vec<Result<Vec<RankRow>>> = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = config.base_seed + trial as u64;
            let (geoms, inflation) = graph_arrangements(config, seed, max_m)?;
            let blocks = geoms
                .iter()
                .map(|g| arrangement_block(g, &drive, &basis).map(|b| b.q_rows))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            config
                .arrangements
                .iter()
                .map(|&m| {
                    let q = RealMatrix::vstack(&blocks[..m])?;
                    let rank = numerical_rank(&q, RankTolerance::Default).rank;
                    let k = q.rows();
                    Ok(RankRow {
                        n,
                        k,
                        ratio: rank as f64 / params as f64,
                        seed,
                        log4_k: (k as f64).ln() / 4f64.ln(),
                        m,
                        rank,
                        inflation,
                    })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_trial {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn write_rank_csv(rows: &[RankRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => TomoError::io(path, io),
        other => TomoError::Serialize(format!("{other:?}")),
    })?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| TomoError::io(path, e))?;
    Ok(())
}

/// Largest rank `K` rows from `M` arrangements can reach: every arrangement's
/// outcome rows sum to the same identity-column vector, so at most
/// `K − M + 1` rows are independent.
pub fn rank_upper_bound(k: usize, m: usize, params: usize) -> usize {
    (k + 1 - m).min(params)
}
