use serde_json::{json, Value};
use thiserror::Error;

/// Failures surfaced to the user; the exit code depends on the kind.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad scenario file, flag or hypothesis violation (exit code 2).
    #[error("{message}")]
    Input {
        message: String,
        line: Option<usize>,
        column: Option<usize>,
    },
    /// A solver failed to converge or a run broke down (exit code 1).
    #[error("{0}")]
    Numeric(#[from] traitseir::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self::Input {
            message: message.into(),
            line: None,
            column: None,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input { .. } => 2,
            // hypothesis violations found by the core are input problems too
            Self::Numeric(traitseir::Error::Hypothesis(_))
            | Self::Numeric(traitseir::Error::InvalidDomain(_))
            | Self::Numeric(traitseir::Error::InvalidArgument(_))
            | Self::Numeric(traitseir::Error::Unsupported(_))
            | Self::Numeric(traitseir::Error::Alignment { .. }) => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> Value {
        let kind = match (self, self.exit_code()) {
            (Self::Io { .. }, _) => "io",
            (_, 2) => "input",
            _ => "numeric",
        };
        let mut err = json!({ "kind": kind, "message": self.to_string() });
        if let Self::Input { line, column, .. } = self {
            if let (Some(l), Some(c)) = (line, column) {
                err["line"] = json!(l);
                err["column"] = json!(c);
            }
        }
        json!({ "error": err })
    }
}
