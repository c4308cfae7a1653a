use crate::noise::StreamId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke a shape or range precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A path left the finite range (or exceeded the blowup guard).
    #[error(
        "blowup at step {step}{}{}",
        stream.map(|s| format!(" on stream {s}")).unwrap_or_default(),
        iteration.map(|n| format!(" during optimizer iteration {n}")).unwrap_or_default()
    )]
    Blowup {
        step: usize,
        stream: Option<StreamId>,
        iteration: Option<usize>,
    },

    /// Zero pivot or similar; indicates a bug given the dominance invariant.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("line search exhausted {halvings} halvings at iteration {iteration}")]
    LineSearch { iteration: usize, halvings: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Attach a stream tuple to a blowup raised by a per-path routine.
    pub(crate) fn with_stream(self, id: StreamId) -> Self {
        match self {
            Error::Blowup {
                step, iteration, ..
            } => Error::Blowup {
                step,
                stream: Some(id),
                iteration,
            },
            other => other,
        }
    }

    pub(crate) fn at_iteration(self, n: usize) -> Self {
        match self {
            Error::Blowup { step, stream, .. } => Error::Blowup {
                step,
                stream,
                iteration: Some(n),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
