use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("reward budget exhausted: requested {requested}, remaining {remaining}")]
    Budget { requested: u64, remaining: u64 },

    #[error(
        "reward budget exhausted during estimation: {evaluated} of {requested} evaluations done \
         ({successes} successes observed)"
    )]
    BudgetDuringEstimate {
        requested: u64,
        evaluated: u64,
        successes: u64,
    },

    #[error("parameter blob mismatch: {0}")]
    BlobMismatch(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error(
        "rejection sampling too inefficient: {accepted} accepted in {attempts} attempts \
         (acceptance rate {rate:.3e})"
    )]
    Inefficient {
        accepted: usize,
        attempts: usize,
        rate: f64,
    },

    #[error("divergent support: reference model assigns zero probability to a sampled sequence")]
    DivergentSupport,

    #[error("degenerate rejection region: mass {0} >= 1")]
    DegenerateRegion(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
