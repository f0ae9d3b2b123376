use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A parameter violated its domain bound. The message names the bound,
    /// e.g. `n<1`, `m<1` or `p outside [0,1]`.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The reduced state space `(m+1)^n` exceeds the configured cap (or
    /// overflows entirely).
    #[error("state space of {states} states exceeds cap of {cap}")]
    StateCapExceeded { states: u128, cap: usize },

    /// A matrix would exceed the entry budget even though the state count
    /// is within its cap (wide binomial columns at large m).
    #[error("matrix with {nnz} entries exceeds cap of {cap}")]
    MatrixTooDense { nnz: u128, cap: usize },

    /// The full binary configuration space `2^(n*m)` is only built as a
    /// validation oracle for small systems.
    #[error("binary configuration space needs n*m <= {max}, got n*m = {got}")]
    BinarySpaceTooLarge { got: usize, max: usize },

    /// An occupation component was outside `{0, ..., m}`.
    #[error("occupation component {value} out of range 0..={max}")]
    OccupationOutOfRange { value: u32, max: u32 },

    /// Vector length does not match the state-space dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// An operation expected a matrix of a different kind.
    #[error("expected a {expected} matrix, got {got}")]
    WrongMatrixKind {
        expected: &'static str,
        got: &'static str,
    },

    /// Power iteration did not reach the requested tolerance.
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: u64, residual: f64 },

    /// The direct solve hit a (numerically) singular system, which signals a
    /// reducible chain (e.g. p = 0).
    #[error("stationary system is singular or numerically reducible{}", residual.map(|r| format!(" (residual {r:.3e})")).unwrap_or_default())]
    SingularSystem { residual: Option<f64> },

    /// The requested root is not a vertex of the graph.
    #[error("root {0} is not a vertex of the graph")]
    RootNotFound(String),

    /// Arborescence-based stationary distributions need a strongly
    /// connected transition graph.
    #[error("transition graph is not strongly connected")]
    NotStronglyConnected,

    /// Simulation configuration violated an invariant.
    #[error("invalid simulation config: {0}")]
    InvalidSimConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
