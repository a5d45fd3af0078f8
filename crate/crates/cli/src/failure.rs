//! Exit codes and the machine-readable error line.

use std::process::ExitCode;

use extrudekit::Error;

/// Failure category; each maps to its own exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// Unknown flag, missing argument or bad flag value.
    Usage,
    /// Input file does not exist or cannot be read or written.
    Io,
    /// Malformed input file (grid, point cloud, mesh or model).
    Parse,
    /// Malformed or out-of-range configuration file.
    Config,
    /// Inputs are well formed but inconsistent or out of range.
    Invalid,
    /// The optimization produced a non-finite loss or gradient.
    Numerical,
    /// A verification step (self-test, export check) did not pass.
    Check,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Usage => 2,
            Kind::Io => 3,
            Kind::Parse => 4,
            Kind::Config => 5,
            Kind::Invalid => 6,
            Kind::Numerical => 7,
            Kind::Check => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Io => "io",
            Kind::Parse => "parse",
            Kind::Config => "config",
            Kind::Invalid => "invalid",
            Kind::Numerical => "numerical",
            Kind::Check => "check",
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Kind::Usage, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Kind::Config, message)
    }

    pub fn check(message: impl Into<String>) -> Self {
        Self::new(Kind::Check, message)
    }

    /// Prints one JSON object on stderr and returns the exit code.
    pub fn report(&self) -> ExitCode {
        let line = serde_json::json!({
            "error": self.kind.name(),
            "exit_code": self.kind.code(),
            "message": self.message,
        });
        eprintln!("{line}");
        ExitCode::from(self.kind.code())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Io { .. } => Kind::Io,
            Error::Parse { .. } | Error::Format(_) => Kind::Parse,
            Error::NonFiniteLoss { .. } => Kind::Numerical,
            Error::InvalidParameter(_)
            | Error::Domain(_)
            | Error::DimensionMismatch(_)
            | Error::NotBinarized => Kind::Invalid,
        };
        Self::new(kind, e.to_string())
    }
}
