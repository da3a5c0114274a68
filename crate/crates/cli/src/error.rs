use std::fmt;

/// Failure of a command, carrying its exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or input files (exit 2).
    Validation(String),
    /// A computation failed numerically (exit 3).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<sphs_core::Error> for CliError {
    fn from(e: sphs_core::Error) -> Self {
        use sphs_core::Error as E;
        match e {
            E::Numeric { .. } | E::Integration { .. } | E::Instability { .. } | E::Training { .. } => {
                CliError::Numeric(e.to_string())
            }
            E::Config { .. } | E::Contract(_) | E::Io(_) | E::Json(_) => CliError::Validation(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}
