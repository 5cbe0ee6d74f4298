use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("input is empty")]
    EmptyInput,

    #[error("line {line}: expected {expected} tokens, found {found}")]
    RaggedRows {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("token {token} outside vocabulary of size {vocab}")]
    TokenOutOfRange { token: u64, vocab: usize },

    #[error("synthetic spec has no regimes")]
    EmptyRegimes,

    #[error("sequence count must be positive")]
    NoSequences,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("every token at position {0} is excluded")]
    DegeneratePosition(usize),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("Jacobi iteration did not converge in {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("no positive eigenvalues")]
    NoPositiveEigenvalues,

    #[error("all squared distances are zero; stress is undefined")]
    DegenerateMetric,

    #[error("correlation undefined: zero variance")]
    UndefinedCorrelation,

    #[error("every position pair has zero Hellinger distance")]
    AllDegenerate,

    #[error("not a permutation of 0..{0}")]
    InvalidPermutation(usize),

    #[error("kernel is not positive definite (lambda_min = {lambda_min:e})")]
    NotPositiveDefinite { lambda_min: f64 },

    #[error("matrix is singular within tolerance")]
    Singular,

    #[error("explicit Euler step too large: residual grew for {steps} consecutive steps at step {at}")]
    StepTooLarge { steps: usize, at: usize },

    #[error("forcing violates its Hellinger-Lipschitz bound: ratio {ratio} > {bound}")]
    ForcingVerification { ratio: f64, bound: f64 },
}

impl Error {
    /// True for errors caused by malformed or degenerate input data, as
    /// opposed to numerical or verification failures.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Parse { .. }
                | Error::EmptyInput
                | Error::RaggedRows { .. }
                | Error::TokenOutOfRange { .. }
                | Error::DegeneratePosition(_)
                | Error::InvalidDistribution(_)
                | Error::DimensionMismatch(_)
                | Error::NonFinite
        )
    }
}
