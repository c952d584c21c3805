use thiserror::Error;

/// Errors raised by the solvers, the model constructors and the I/O layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected} entries, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid grid or mesh: {0}")]
    Mesh(String),

    /// A model violates one of the standing assumptions.
    /// `assumption` names the violated hypothesis (e.g. "A7").
    #[error("spec rejected ({assumption}): {message}")]
    SpecRejected {
        assumption: &'static str,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stability bound violated: {0}")]
    Stability(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("W1 undefined for measures of unequal mass ({0} vs {1})")]
    MetricDomain(f64, f64),

    #[error("position {0} lies outside the grid")]
    OutsideGrid(f64),

    #[error("operation not supported for the {0} model variant")]
    UnsupportedVariant(&'static str),

    #[error("fixed-point iteration did not contract within {} iterations (last delta {:e})", history.len(), history.last().copied().unwrap_or(f64::NAN))]
    NonContraction { history: Vec<f64> },

    #[error("two distinct control fixed points detected (gap {gap:e})")]
    MonotonicityViolation { gap: f64 },

    #[error("outer iteration did not converge at scale {scale} after {iterations} sweeps (last change {:e})", residuals.last().copied().unwrap_or(f64::NAN))]
    NonConvergence {
        scale: f64,
        iterations: usize,
        residuals: Vec<f64>,
    },

    #[error("sweep {sweep}: {source}")]
    Sweep {
        sweep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("tridiagonal solve failed: zero pivot at row {0}")]
    SingularSystem(usize),

    #[error("corrupt solution data: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}
