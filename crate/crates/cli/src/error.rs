use std::fmt;

/// One validation problem, anchored to a line of the scenario file.
#[derive(Clone, Debug, PartialEq)]
pub struct Issue {
    pub line: Option<usize>,
    /// JSON pointer of the offending value; empty for parse errors.
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: ")?,
            None => write!(f, "line ?: ")?,
        }
        if !self.pointer.is_empty() {
            write!(f, "{}: ", self.pointer)?;
        }
        write!(f, "{}", self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{origin}: invalid scenario\n{}", issues.iter().map(|i| format!("  {origin}:{i}")).collect::<Vec<_>>().join("\n"))]
    Validation { origin: String, issues: Vec<Issue> },

    #[error("numerical failure in {module}::{op}: {source}")]
    Numerical {
        module: &'static str,
        op: &'static str,
        source: cmdf_core::Error,
    },

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation { .. } => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io { .. } => 1,
        }
    }

    pub fn issues(&self) -> &[Issue] {
        match self {
            CliError::Validation { issues, .. } => issues,
            _ => &[],
        }
    }
}

/// `map_err` adapter naming the failing core operation.
pub fn numerical(module: &'static str, op: &'static str) -> impl Fn(cmdf_core::Error) -> CliError {
    move |source| CliError::Numerical { module, op, source }
}
