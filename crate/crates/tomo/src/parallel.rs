//! Bounded worker pools with order-preserving collection.

use rayon::prelude::*;
use tomo_core::pauli::OrthogonalBasis;
use tomo_core::rydberg::{AtomGeometry, DriveParams};
use tomo_core::tomography::{arrangement_block, MeasurementEnsemble};

use crate::error::{Result, TomoError};

/// Runs `f` inside a pool of `threads` workers, or the global pool for `None`.
pub fn with_parallelism<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(TomoError::Config("parallelism must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| TomoError::Config(format!("cannot start worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Measurement ensemble with arrangements evaluated concurrently.
pub fn build_ensemble(geoms: &[AtomGeometry], drive: &DriveParams, basis: &OrthogonalBasis) -> Result<MeasurementEnsemble> {
    let blocks = geoms
        .par_iter()
        .map(|g| arrangement_block(g, drive, basis))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(MeasurementEnsemble::from_blocks(geoms.to_vec(), drive.clone(), basis.clone(), blocks)?)
}
