use flag_core::FlagError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or malformed files, mismatched dimensions.
    Input(String),
    /// A solver stopped at its iteration cap under `--strict`.
    NotConverged(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::NotConverged(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<FlagError> for CliError {
    fn from(e: FlagError) -> Self {
        match e {
            FlagError::EnvelopeViolation { .. } => CliError::Runtime(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(format!("invalid JSON: {e}"))
    }
}
