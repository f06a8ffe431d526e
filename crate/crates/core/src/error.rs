use alloc::string::String;

/// Failure modes shared by every numerical routine in the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A dimension, qubit count or atom count is outside the supported range.
    #[error("size error: {0}")]
    Size(String),
    /// Operands have incompatible shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// An input violates a mathematical precondition (non-Hermitian, non-PSD, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// Inconsistent experiment or model configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// The measurement matrix does not have full column rank.
    #[error("under-determined ensemble: rank {rank} < {required} required columns")]
    UnderDetermined { rank: usize, required: usize },
    /// The fixed-step integrator lost accuracy.
    #[error("integration error: trace drift {drift:e} exceeds tolerance; increase the step count")]
    Integration { drift: f64 },
    /// A condition that valid inputs can never produce.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = core::result::Result<T, Error>;
