use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("invalid config: {}", .0.iter().map(|d| format!("{}: {}", d.field, d.message)).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<crate::config::Diagnostic>),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] plap_core::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Invalid(_) => "validation",
            CliError::Io(_) => "io",
            CliError::Core(_) => "solver",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Invalid(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(_) => 1,
        }
    }

    /// JSON error document written on failure.
    pub fn report(&self) -> ErrorReport<'_> {
        ErrorReport {
            error: self.kind(),
            message: self.to_string(),
            diagnostics: match self {
                CliError::Invalid(d) => d.as_slice(),
                _ => &[],
            },
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorReport<'a> {
    pub error: &'static str,
    pub message: String,
    pub diagnostics: &'a [crate::config::Diagnostic],
}
