use thiserror::Error;

/// Errors produced anywhere in the emulator pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The requested operation would exceed the configured memory budget.
    #[error("resource limit: {message} (estimated nonzeros: {estimated_nnz})")]
    Resource { message: String, estimated_nnz: usize },

    /// A factorization or iterative solve broke down.
    #[error("ill-conditioned system: {message} (Gershgorin cap {gershgorin:.3e}, q_X {separation:.3e}); narrow the kernel or enable jitter")]
    Conditioning {
        message: String,
        gershgorin: f64,
        separation: f64,
    },

    /// The operation is not available for this input size or kernel.
    #[error("capability: {0}")]
    Capability(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("parameter selection failed: {0}")]
    Selection(String),

    /// Preconditions of a perturbation bound do not hold.
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("stage {stage} failed: {source}")]
    Fit {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// True when the failure stems from bad input rather than computation.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Argument(_) | Error::Format(_) | Error::Io(_) => true,
            Error::Fit { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
