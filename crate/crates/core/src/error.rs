use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("design matrix is rank deficient (reciprocal condition {rcond:.3e})")]
    RankDeficient { rcond: f64 },

    #[error("complete or quasi-complete separation: |linear predictor| reached {max_linear_predictor:.2} before the score converged")]
    Separation { max_linear_predictor: f64 },

    #[error("Newton-Raphson did not converge after {iterations} iterations (mean score sup-norm {score_norm:.3e})")]
    NonConvergence { iterations: usize, score_norm: f64 },

    #[error("weight overflow at unit {index}: linear predictor {linear_predictor:.2} exceeds 700")]
    WeightOverflow { index: usize, linear_predictor: f64 },

    #[error("empty {0} group")]
    EmptyGroup(&'static str),

    #[error("non-finite outcome at unit {index}")]
    NonFiniteOutcome { index: usize },

    #[error("bread matrix is singular (reciprocal condition {rcond:.3e})")]
    SingularBread { rcond: f64 },

    #[error("propensity information block is singular (reciprocal condition {rcond:.3e})")]
    SingularA11 { rcond: f64 },

    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),

    #[error("{attempts} consecutive draws produced a single treatment group")]
    DegenerateDraws { attempts: usize },

    #[error("replicate {index} failed: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::MissingColumn(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::InvalidData(_)
            | Error::InvalidScenario(_) => 2,
            Error::RankDeficient { .. } => 3,
            Error::Separation { .. } => 4,
            Error::SingularBread { .. } | Error::SingularA11 { .. } => 5,
            Error::QuadratureFailure(_) => 6,
            Error::NonConvergence { .. } => 7,
            Error::Replicate { source, .. } => source.exit_code(),
            Error::Io(_) => 74,
            _ => 1,
        }
    }
}
