use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("family {family} does not support {op}")]
    UnsupportedFamily {
        family: &'static str,
        op: &'static str,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("capability error: {0}")]
    Capability(String),

    #[error("minibatch is empty")]
    EmptyMinibatch,

    #[error("degenerate importance-sampling proposal: {0}")]
    DegenerateProposal(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("tabular input rejected: {0}")]
    Tabular(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("missing cells: {0}")]
    MissingCells(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
