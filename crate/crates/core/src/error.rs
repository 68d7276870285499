use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular matrix: pivot {pivot:e} below threshold at column {column}")]
    Singular { column: usize, pivot: f64 },

    #[error("rank-deficient design matrix: |R[{column},{column}]| = {value:e}")]
    RankDeficient { column: usize, value: f64 },

    #[error("simplex stalled after {iterations} basis changes in phase {phase}")]
    SolverStall { phase: u8, iterations: usize },

    #[error(
        "function class admits no Bellman subsolution for the initial policy (optimal t = {t:e})"
    )]
    NoFeasibleStart { t: f64 },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context,
                expected,
                actual,
            })
        }
    }
}
