use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shape, range, mode).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("graph is disconnected ({components} connected components)")]
    Disconnected { components: usize },

    #[error("node {0} has no neighbours")]
    IsolatedNode(usize),

    #[error("non-finite objective at iteration {iteration} ({context})")]
    NonFinite { iteration: usize, context: String },

    #[error("propensity likelihood overflowed at iteration {iteration}; increase the ridge penalty (currently {ridge})")]
    PropensityOverflow { iteration: usize, ridge: f64 },

    #[error("no observed cells in the mask")]
    EmptyMask,

    #[error("could not draw a valid fold split after {0} attempts")]
    FoldSplit(usize),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("{step}: {source}")]
    Step {
        step: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn in_step(self, step: &'static str) -> Self {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }

    /// Innermost error once step labels are peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of an iterative solver rather than of the inputs.
    pub fn is_convergence_failure(&self) -> bool {
        matches!(
            self.root(),
            Error::NonFinite { .. } | Error::PropensityOverflow { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
