use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid interaction length {l} for {n} spins (need 1 <= l <= {max})", max = n / 2)]
    InvalidInteractionLength { n: usize, l: usize },
    #[error("invalid spin count {0} (need 1 <= n <= 64)")]
    InvalidSpinCount(usize),
    #[error("invalid edge {{{0}, {1}}}")]
    InvalidEdge(usize, usize),
    #[error("size mismatch: expected {expected} spins, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("empty subspace")]
    EmptySubspace,
    #[error("amplitude vector has zero norm")]
    ZeroNorm,
    #[error("{n} spins is too large for {mode} diagonalisation (limit {limit})")]
    TooLarge { n: usize, limit: usize, mode: &'static str },
    #[error("lanczos did not converge in {iterations} iterations (best energy {energy}, residual {residual_norm:e})")]
    NotConverged { energy: f64, residual_norm: f64, iterations: usize },
    #[error("reference energy is zero")]
    ZeroReference,
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("point outside the open hypercube at coordinate {index} (value {value})")]
    OutsideCube { index: usize, value: f64 },
    #[error("region probability estimate must be positive, got {0}")]
    NonPositiveProbability(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
