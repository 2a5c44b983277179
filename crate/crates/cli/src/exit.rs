use std::fmt;
use std::process::ExitCode;

use wxclass::Error;

/// Process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    Config = 2,
    Io = 3,
    Data = 4,
    Internal = 5,
}

impl From<Exit> for ExitCode {
    fn from(e: Exit) -> Self {
        ExitCode::from(e as u8)
    }
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            exit: Exit::Config,
            message: message.into(),
        }
    }

    pub fn io(context: &str, err: std::io::Error) -> Self {
        Self {
            exit: Exit::Io,
            message: format!("{context}: {err}"),
        }
    }

    pub fn context(self, context: &str) -> Self {
        Self {
            message: format!("{context}: {}", self.message),
            ..self
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn exit_for(err: &Error) -> Exit {
    match err {
        Error::Config(_) => Exit::Config,
        Error::Io(_) => Exit::Io,
        Error::Parse(_)
        | Error::Validation(_)
        | Error::Degenerate(_)
        | Error::UnknownLabel(_)
        | Error::EmptyManifest
        | Error::MissingClass(_)
        | Error::Format(_)
        | Error::Version { .. }
        | Error::LabelRange { .. }
        | Error::EmptyMatrix
        | Error::Dimension(_) => Exit::Data,
        Error::Shape(_) | Error::Numeric(_) | Error::Index { .. } => Exit::Internal,
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Self {
            exit: exit_for(&err),
            message: err.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub trait Context<T> {
    fn ctx(self, context: &str) -> CliResult<T>;
}

impl<T> Context<T> for wxclass::Result<T> {
    fn ctx(self, context: &str) -> CliResult<T> {
        self.map_err(|e| Failure::from(e).context(context))
    }
}

impl<T> Context<T> for std::io::Result<T> {
    fn ctx(self, context: &str) -> CliResult<T> {
        self.map_err(|e| Failure::io(context, e))
    }
}
