use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {what} has {found} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("seeds {i} and {j} coincide")]
    CoincidentSeeds { i: usize, j: usize },

    #[error("no convergence after {iterations} iterations (max relative area error {max_rel_error_percent:.3e}%)")]
    MaxIterationsExceeded {
        iterations: usize,
        max_rel_error_percent: f64,
    },

    #[error("starting weights leave cell {0} empty")]
    DegenerateStart(usize),

    #[error("singular Newton system")]
    SingularSystem,

    #[error("incompatible data: {0}")]
    IncompatibleData(String),

    #[error("finite-difference step {step:e} collapses seeds {i} and {j}")]
    StepTooLarge { step: f64, i: usize, j: usize },

    #[error("infeasible start: constraint violation {violation:e}")]
    InfeasibleStart { violation: f64 },

    #[error("line search failed at iteration {iteration}")]
    LineSearchFailure { iteration: usize },

    #[error("could not draw {n} well-separated seeds in {attempts} attempts")]
    DegenerateSampling { n: usize, attempts: usize },

    #[error("perturbed centroids left the domain: {indices:?}")]
    CentroidLeftDomain { indices: Vec<usize> },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("label grid is empty")]
    EmptyGrid,

    #[error("resolution too coarse: {0}")]
    ResolutionTooCoarse(String),

    #[error("invalid anisotropy matrix {index}: {reason}")]
    InvalidMatrix { index: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the input data rather than by a solver.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::LengthMismatch { .. }
                | Error::NonFinite(_)
                | Error::InvalidDomain(_)
                | Error::IncompatibleData(_)
                | Error::CentroidLeftDomain { .. }
                | Error::Parse { .. }
                | Error::EmptyGrid
                | Error::InvalidMatrix { .. }
                | Error::InvalidArgument(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}
