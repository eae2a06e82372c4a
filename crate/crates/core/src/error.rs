use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Parameters or inputs outside the admissible region.
    #[error("domain error: {0}")]
    Domain(String),

    /// Floating-point breakdown (loss of positive definiteness, overflow).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Every particle received zero weight.
    #[error("particle degeneracy at period {period}")]
    Degenerate { period: usize },

    /// A failure inside one block of a Gibbs sweep.
    #[error("iteration {iteration}, block `{block}`: {source}")]
    Block {
        iteration: usize,
        block: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: line {line}: {message}")]
    Load { path: String, line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    /// Resume was asked to continue a chain under a different configuration.
    #[error("checkpoint does not match configuration:\n{0}")]
    ConfigMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn in_block(self, iteration: usize, block: &'static str) -> Self {
        Error::Block { iteration, block, source: Box::new(self) }
    }
}
