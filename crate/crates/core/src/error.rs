use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// The caller asked for something invalid, such as an out-of-range budget.
    Usage,
    /// Input bytes or documents are malformed or unreadable.
    Format,
    /// A numerical stage could not produce a result.
    Computation,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("bad magic {0:?}, expected \"LADF\"")]
    BadMagic([u8; 4]),

    #[error("unsupported dump version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),

    #[error("invalid dump header: {0}")]
    InvalidHeader(String),

    #[error("truncated input while reading {0}")]
    Truncated(&'static str),

    #[error("non-finite value at token {token}, layer {layer}")]
    NonFinite { token: u64, layer: usize },

    #[error("{what} mismatch: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("no tokens were accumulated")]
    EmptyAccumulator,

    #[error("invalid similarity matrix: {0}")]
    InvalidMatrix(String),

    #[error("locality undefined: off-diagonal mean {0} is not positive")]
    LocalityUndefined(f64),

    #[error("cluster count {k} out of range for {n_layers} layers (need 2 <= k <= N)")]
    InvalidClusterCount { k: usize, n_layers: usize },

    #[error("eigensolver did not converge within {0} iterations")]
    EigenNoConvergence(usize),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("budget {budget} out of range for {n_layers} layers (need 1 <= budget <= N-2)")]
    InvalidBudget { budget: usize, n_layers: usize },

    #[error("budget {budget} unreachable: only {eligible} eligible layers")]
    BudgetUnreachable { budget: usize, eligible: usize },

    #[error("no eligible layer outside the boundary set")]
    NoEligibleLayer,

    #[error("invalid planted spec: {0}")]
    InvalidSpec(String),

    #[error("infeasible similarity targets: {0}")]
    InfeasibleTargets(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidClusterCount { .. }
            | Error::InvalidBudget { .. }
            | Error::InvalidSpec(_)
            | Error::InfeasibleTargets(_) => ErrorKind::Usage,
            Error::Io(_)
            | Error::Json(_)
            | Error::BadMagic(_)
            | Error::UnsupportedVersion(_)
            | Error::UnsupportedDtype(_)
            | Error::InvalidHeader(_)
            | Error::Truncated(_)
            | Error::NonFinite { .. }
            | Error::DimensionMismatch { .. }
            | Error::InvalidMatrix(_)
            | Error::InvalidPartition(_) => ErrorKind::Format,
            Error::EmptyAccumulator
            | Error::LocalityUndefined(_)
            | Error::EigenNoConvergence(_)
            | Error::BudgetUnreachable { .. }
            | Error::NoEligibleLayer => ErrorKind::Computation,
        }
    }
}
