//! Numerical core for configurable-ancilla quantum state tomography of
//! Rydberg atom arrays.
//!
//! The crate is `no_std` (it needs `alloc`) and holds no IO: dense complex
//! linear algebra and state metrics ([`linalg`], [`state`], [`pauli`]), the
//! Rydberg Ising model and its open-system dynamics ([`rydberg`]), the
//! ancilla-generated measurement ensemble with linear inversion and SPAM
//! handling ([`tomography`]), and Bayesian mean estimation ([`bme`]).
//!
//! Conventions used throughout: qubit 0 is the most significant bit of a
//! basis index, system qubits precede ancilla qubits, frequencies are linear
//! MHz and times are μs.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bme;
pub mod error;
pub mod linalg;
pub mod pauli;
pub mod rydberg;
pub mod state;
pub mod tomography;

pub use error::{Error, Result};
pub use linalg::{hermitian_eig, tensor, ComplexMatrix, HermitianEig, RealMatrix, C64};
pub use pauli::{pauli_basis, OrthogonalBasis, PauliString};
pub use rydberg::{
    blockade_radius, build_hamiltonian, evolve_lindblad, evolve_unitary, pulse_sequence, AtomGeometry,
    DriveParams, EvolutionOptions, NoiseParams,
};
pub use state::{fidelity, partial_trace, psd_project, trace_distance, DensityMatrix};
pub use tomography::{
    build_q_matrix, least_squares_reconstruct, sample_record, spam_correct, target_state, MeasurementEnsemble,
    MeasurementRecord, RankTolerance, SpamModel, TargetKind,
};
pub use bme::{run_bme, BmeChain, BmeResult, McmcConfig, Observations, PurifiedState};
