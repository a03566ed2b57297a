use std::fmt;

use kinlab_core::Error;

/// A failure with its exit status: 1 for configuration and input problems,
/// 2 for failures while running.
#[derive(Debug, thiserror::Error)]
pub struct CliError {
    pub exit: i32,
    pub kind: String,
    pub stage: Option<String>,
    pub reason: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(kind: &str, reason: impl Into<String>) -> Self {
        Self {
            exit: 1,
            kind: kind.into(),
            stage: None,
            reason: reason.into(),
        }
    }

    pub fn runtime(kind: &str, reason: impl Into<String>) -> Self {
        Self {
            exit: 2,
            kind: kind.into(),
            stage: None,
            reason: reason.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.exit
    }

    pub fn at(mut self, stage: &str) -> Self {
        if self.stage.is_none() {
            self.stage = Some(stage.to_string());
        }
        self
    }

    /// The single diagnostic line printed on failure.
    pub fn diagnostic(&self) -> String {
        let reason = self.reason.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
        match &self.stage {
            Some(stage) => format!("error exit={} kind={} stage={stage} reason=\"{reason}\"", self.exit, self.kind),
            None => format!("error exit={} kind={} reason=\"{reason}\"", self.exit, self.kind),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.diagnostic())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Contract(_) => "contract",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::RetriesExhausted { .. } => "retries_exhausted",
            Error::OutOfRange { .. } => "out_of_range",
            Error::Zeno { .. } => "zeno",
            Error::Budget(_) => "budget",
            Error::SingularGram => "singular_gram",
            Error::Stability { .. } => "stability",
            Error::Divergence { .. } => "divergence",
            Error::Inconsistent(_) => "inconsistent",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        };
        let exit = match e {
            Error::InvalidParameter(_) | Error::DimensionMismatch { .. } | Error::ShapeMismatch(_) | Error::Format(_) => 1,
            _ => 2,
        };
        Self {
            exit,
            kind: kind.into(),
            stage: None,
            reason: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime("io", e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagnostic_is_one_line() {
        let e = CliError::config("shape_mismatch", "grids \"a\"\nand b").at("compare");
        let line = e.diagnostic();
        assert!(!line.contains('\n'));
        assert_eq!(line, "error exit=1 kind=shape_mismatch stage=compare reason=\"grids \\\"a\\\" and b\"");
        let core: CliError = Error::Budget("x".into()).into();
        assert_eq!(core.exit_code(), 2);
    }
}
