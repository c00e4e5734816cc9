use std::fmt;

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn data(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn fit(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<splineperm::Error> for CliError {
    fn from(e: splineperm::Error) -> Self {
        if e.is_data_error() {
            Self::data(e.to_string())
        } else {
            Self::fit(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(format!("I/O error: {e}"))
    }
}
