use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad model or experiment configuration (unknown kind, missing parameter,
    /// inconsistent dimensions, ...).
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// An evaluator produced a non-finite value.
    #[error("numeric error: {message} at state {state:?}")]
    Numeric { message: String, state: Vec<f64> },

    /// The implicit stage solve did not converge.
    #[error("integration error at path {path}, step {step}: {message} (residual {residual:e})")]
    Integration {
        path: usize,
        step: usize,
        message: String,
        residual: f64,
    },

    /// A function was called on data that does not satisfy its preconditions.
    #[error("contract error: {0}")]
    Contract(String),

    /// A linear model has an unstable mode.
    #[error("model instability: eigenvalue with real part {real_part:e}")]
    Instability { real_part: f64 },

    /// Training diverged.
    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>, state: &[f64]) -> Self {
        Error::Numeric {
            message: message.into(),
            state: state.to_vec(),
        }
    }

    /// Attach path/step indices to an integration-level error.
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            Error::Integration { path, message, residual, .. } => Error::Integration { path, step, message, residual },
            Error::Numeric { message, state } => Error::Numeric {
                message: format!("{message} (step {step})"),
                state,
            },
            other => other,
        }
    }

    pub(crate) fn on_path(self, path: usize) -> Self {
        match self {
            Error::Integration { step, message, residual, .. } => Error::Integration { path, step, message, residual },
            Error::Numeric { message, state } => Error::Numeric {
                message: format!("{message} (path {path})"),
                state,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
