use thiserror::Error;

/// Library-wide error type.
///
/// Variants are split between configuration problems (rejected before any
/// compute starts) and numerical failures (detected while solving). The CLI
/// maps the former to exit code 2 and the latter to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown name: {0}")]
    UnknownName(String),

    #[error("eigensolve failed: {0}")]
    EigensolveFailure(String),

    #[error("internal consistency violation: {0}")]
    Inconsistency(String),

    #[error("right-hand side does not decay: {0}")]
    NonDecayingInput(String),

    #[error("singular linear system: {context} (pivot ratio {pivot_ratio:.3e})")]
    SingularSystem {
        context: String,
        pivot_ratio: f64,
    },

    #[error("chart is degenerate: kernel eigenvalue {kernel_eigenvalue:.6e}")]
    DegenerateChart { kernel_eigenvalue: f64 },

    #[error(
        "epsilon {eps} is resonant: |eps^2 rho_{j} - lambda0| = {gap:.6e} below floor {floor:.6e}"
    )]
    ResonantEpsilon {
        eps: f64,
        j: usize,
        gap: f64,
        floor: f64,
    },

    #[error("solvability condition violated at column {column}: projection {projection:.6e}")]
    SolvabilityViolated { column: usize, projection: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("orthogonality precondition violated: {context} = {value:.6e}")]
    OrthogonalityViolated { context: String, value: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors that indicate bad configuration rather than a failure
    /// encountered mid-computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_) | Error::UnknownName(_) | Error::GridMismatch(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
