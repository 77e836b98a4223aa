use std::fmt;

use crowdkwh_core::Error as CoreError;
use crowdkwh_store::StoreError;

/// A command failure with its process exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Internal(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    pub fn internal(e: impl fmt::Display) -> Self {
        Failure::Internal(e.to_string())
    }

    pub fn data(e: impl fmt::Display) -> Self {
        Failure::Data(e.to_string())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            Failure::Usage(m) => ("usage error", m),
            Failure::Data(m) => ("data error", m),
            Failure::Internal(m) => ("internal error", m),
        };
        write!(f, "{kind}: {msg}")
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidParams(_) => Failure::Usage(e.to_string()),
            CoreError::InvalidAnswer(_)
            | CoreError::UnknownQuestion(_)
            | CoreError::UnknownUser(_)
            | CoreError::EmptyMatrix
            | CoreError::EmptySample
            | CoreError::NoEligibleUsers(_)
            | CoreError::InvalidWindow(_)
            | CoreError::Parse { .. }
            | CoreError::Io(_)
            | CoreError::Csv(_)
            | CoreError::Json(_) => Failure::Data(e.to_string()),
            _ => Failure::Internal(e.to_string()),
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        match e.code() {
            "internal" => Failure::Internal(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}
