use std::fmt;

use collabres::Error;

/// Command failure, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, values or paths: exit 2.
    Usage(String),
    /// Input data that cannot be used: exit 3.
    Data(String),
    /// A broken internal invariant: exit 4.
    Internal(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Internal(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (Failure::Usage(m) | Failure::Data(m) | Failure::Internal(m)) = self;
        // Diagnostics stay on one line.
        f.write_str(&m.replace('\n', " "))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidArgument(_) | Error::InvalidModel(_) | Error::Io { .. } => Failure::Usage(msg),
            Error::Parse { .. }
            | Error::Data(_)
            | Error::NoEvaluableSamples
            | Error::MissingPrincipal
            | Error::Checkpoint(_) => Failure::Data(msg),
            Error::ShapeMismatch { .. }
            | Error::IndexOutOfRange { .. }
            | Error::UnsortedIndices { .. }
            | Error::NonFinite(_) => Failure::Internal(msg),
        }
    }
}
