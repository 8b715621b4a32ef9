use std::fmt;
use std::path::Path;

use designspace::Error;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_MISSING: u8 = 4;

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Infeasible(String),
    Missing(String),
    Other(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Infeasible(_) => EXIT_INFEASIBLE,
            Failure::Missing(_) => EXIT_MISSING,
            Failure::Other(_) => EXIT_OTHER,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) | Failure::Infeasible(m) | Failure::Missing(m) | Failure::Other(m) => {
                f.write_str(m)
            }
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Infeasible { .. } => Failure::Infeasible(msg),
            Error::Config(_)
            | Error::InvalidArgument(_)
            | Error::IncompatibleGroup { .. }
            | Error::BudgetTooLarge { .. }
            | Error::EmptyBin { .. }
            | Error::RankDeficient { .. } => Failure::Config(msg),
            Error::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => Failure::Missing(msg),
            _ => Failure::Other(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

/// Fail with the missing-input code unless `path` exists.
pub fn require(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Missing(format!("input not found: {}", path.display())))
    }
}
