use std::fmt;

/// Failure of a command, mapped to the process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
    Credentials(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Credentials(_) => 3,
        }
    }

    pub fn runtime(e: impl fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) | CliError::Credentials(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}
