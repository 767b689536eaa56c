use std::fmt;

use ivqa_core::evaluation::EvalError;
use ivqa_core::model::ModelError;
use ivqa_core::numerics::NumericsError;
use ivqa_core::textdata::DataError;
use ivqa_core::training::TrainError;

/// Error classes with distinct process exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Numeric(m) => write!(f, "numerical error: {m}"),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<NumericsError> for Failure {
    fn from(e: NumericsError) -> Self {
        match e {
            NumericsError::NonFinite(_) => Failure::Numeric(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite(_) => Failure::Numeric(e.to_string()),
            ModelError::Numerics(n) => n.into(),
            ModelError::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => Failure::Numeric(e.to_string()),
            TrainError::Config(_) => Failure::Usage(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Numerics(n) => n.into(),
            TrainError::Io { .. } => Failure::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::NonFinite(_) => Failure::Numeric(e.to_string()),
            EvalError::Model(m) => m.into(),
            _ => Failure::Data(e.to_string()),
        }
    }
}

pub fn io_failure(path: &std::path::Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}
