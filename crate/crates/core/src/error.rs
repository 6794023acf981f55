use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sync policy `{0}` requires a basis")]
    MissingBasis(&'static str),

    #[error("undefined ratio: {0}")]
    Undefined(&'static str),

    #[error("idx format: {0}")]
    Idx(String),

    #[error("config: {0}")]
    Config(String),

    #[error("round {round}: {source}")]
    AtRound {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite { context: context.into() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True when the error comes from parameters or outputs turning
    /// non-finite, possibly wrapped in round context.
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::NonFinite { .. } => true,
            Error::AtRound { source, .. } => source.is_divergence(),
            _ => false,
        }
    }

    pub(crate) fn at_round(self, round: usize) -> Self {
        match self {
            e @ Error::AtRound { .. } => e,
            e => Error::AtRound { round, source: Box::new(e) },
        }
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}
