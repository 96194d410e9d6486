use std::fmt;

use biasguard::Error;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

/// A failed command: usage problems are the caller's fault, everything else
/// comes from the engine.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Engine(Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Engine(Error::Config(_)) => EXIT_USAGE,
            Failure::Engine(
                Error::Numerical { .. } | Error::Cholesky { .. } | Error::TrainingAborted { .. },
            ) => EXIT_NUMERICAL,
            Failure::Engine(_) => EXIT_DATA,
        }
    }

    /// Short machine-greppable tag printed ahead of the message.
    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Engine(e) => match e {
                Error::Contract(_) => "contract",
                Error::Dimension(_) | Error::RowDimension { .. } => "dimension",
                Error::Numerical { .. } => "numerical",
                Error::Cholesky { .. } => "cholesky",
                Error::TrainingAborted { .. } => "training-aborted",
                Error::UnknownClass { .. } | Error::SemanticMismatch { .. } => "data",
                Error::Parse { .. } => "parse",
                Error::Format(_) | Error::Version { .. } | Error::Truncated(_) => "format",
                Error::Config(_) => "config",
                Error::Io(_) => "io",
            },
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Engine(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Engine(Error::Io(e))
    }
}

/// Reclassifies configuration-time engine errors as usage errors.
pub fn usage(e: Error) -> Failure {
    match e {
        Error::Contract(m) | Error::Config(m) => Failure::Usage(m),
        Error::Parse { line, detail } => Failure::Usage(format!("config line {line}: {detail}")),
        other => Failure::Engine(other),
    }
}
