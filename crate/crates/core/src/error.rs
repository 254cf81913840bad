use thiserror::Error;

use crate::data::DataError;
use crate::emergence::EmergenceError;
use crate::harness::HarnessError;
use crate::nn::NnError;
use crate::pruning::PruneError;

/// Top-level error; [`Error::exit_code`] maps it to the CLI's exit status.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Emergence(#[from] EmergenceError),
    #[error(transparent)]
    Prune(#[from] PruneError),
}

/// 1 validation, 2 I/O (files, network, integrity, malformed data), 3 numeric failure.
fn nn_code(e: &NnError) -> i32 {
    match e {
        NnError::NonFinite { .. } => 3,
        _ => 1,
    }
}

fn data_code(e: &DataError) -> i32 {
    match e {
        DataError::UnknownDataset(_) => 1,
        DataError::Dataset(inner) => nn_code(inner),
        _ => 2,
    }
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Harness(h) => match h {
                HarnessError::Config(_) | HarnessError::Emergence(_) => 1,
                HarnessError::Io { .. } => 2,
                HarnessError::Numeric(_) => 3,
                HarnessError::Data(d) => data_code(d),
                HarnessError::Nn(n) => nn_code(n),
                HarnessError::Prune(PruneError::Io(_)) => 2,
                HarnessError::Prune(_) => 1,
            },
            Error::Data(d) => data_code(d),
            Error::Nn(n) => nn_code(n),
            Error::Emergence(_) => 1,
            Error::Prune(PruneError::Io(_)) => 2,
            Error::Prune(_) => 1,
        }
    }
}
