use std::io;

use thiserror::Error;

use crate::chem::SmilesError;
use crate::tensor::{CheckpointError, TensorError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("line {line}: {source}")]
    Smiles { line: usize, source: SmilesError },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
