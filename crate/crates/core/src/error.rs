use thiserror::Error;

/// Errors raised by coefficient handling, the sweeps and the optimizer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PeerError {
    #[error("unknown triplet `{name}` (known: {known})")]
    UnknownTriplet { name: String, known: String },

    #[error("stepsize ratio must be positive, got {0}")]
    NonPositiveRatio(f64),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular stage system at slab {slab}, stage {stage}")]
    SingularStage { slab: usize, stage: usize },

    #[error("Newton iteration diverged at slab {slab}, stage {stage} (residual {residual:.3e})")]
    NewtonDivergence { slab: usize, stage: usize, residual: f64 },

    #[error("Newton iteration did not converge at slab {slab}, stage {stage} after {iterations} iterations (residual {residual:.3e})")]
    NewtonNoConvergence {
        slab: usize,
        stage: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("boundary iteration at slab {slab} did not converge after {sweeps} sweeps (last relative change {residual:.3e})")]
    BoundaryNoConvergence { slab: usize, sweeps: usize, residual: f64 },

    #[error("linear solver failed: {0}")]
    LinearSolver(String),

    #[error("operation not supported: {0}")]
    Unsupported(String),

    #[error("coefficient data error: {0}")]
    Coefficients(String),
}

pub type Result<T> = std::result::Result<T, PeerError>;
