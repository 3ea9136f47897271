use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Every failure the command line can report. The variant decides the
/// process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Conformance(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Conformance(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Conformance(_) => "conformance",
            CliError::Io { .. } => "io",
        }
    }

    /// `error: <kind>: <message>` on a single line.
    pub fn one_line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], "; ");
        format!("error: {}: {}", self.kind(), msg.trim_end_matches("; "))
    }

    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn validation(msg: impl std::fmt::Display) -> Self {
        CliError::Validation(msg.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multi_line_messages_collapse() {
        let e = CliError::Conformance("a\nb\n".into());
        assert_eq!(e.one_line(), "error: conformance: a; b");
        assert_eq!(e.exit_code(), 3);
    }
}
