use std::fmt;
use std::path::PathBuf;

use crate::pipeline::Stage;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] hoopmesh_core::Error),
    #[error("stage {stage}: {source}")]
    Stage { stage: Stage, source: Box<Error> },
}

/// Process exit codes of the command-line tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Validation = 2,
    Numerical = 3,
}

impl fmt::Display for ExitCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as i32)
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }

    pub fn at_stage(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }

    /// Stage tag, if any.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// Numerical breakdowns map to 3, everything else (bad input, missing
    /// files, malformed formats) to 2.
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Error::Core(e) if e.is_numerical() => ExitCode::Numerical,
            Error::Stage { source, .. } => source.exit_code(),
            _ => ExitCode::Validation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let numerical = Error::Core(hoopmesh_core::Error::NonFinite("x"));
        assert_eq!(numerical.exit_code(), ExitCode::Numerical);
        assert_eq!(numerical.at_stage(Stage::Skin).exit_code(), ExitCode::Numerical);
        let missing = Error::io("a.json", std::io::Error::from(std::io::ErrorKind::NotFound));
        assert_eq!(missing.exit_code(), ExitCode::Validation);
        assert_eq!(Error::Config("bad".into()).exit_code(), ExitCode::Validation);
        assert_eq!(Error::format("m.pgm", "bad header").exit_code(), ExitCode::Validation);
    }

    #[test]
    fn stage_tag_is_kept_once() {
        let e = Error::Config("x".into()).at_stage(Stage::Codec).at_stage(Stage::Eval);
        assert_eq!(e.stage(), Some(Stage::Codec));
        assert_eq!(e.to_string(), "stage codec: invalid configuration: x");
    }
}
