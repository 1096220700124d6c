//! Generic code embeddings over a small three-address IR.
//!
//! A program embedding is the concatenation of a *lexical* half (subword
//! tokens, skip-gram vectors, a bidirectional LSTM per instruction, summed over
//! instructions) and a *dependence* half (graph neural network message passing
//! over control, data and call edges, pooled with gated attention). The model
//! can be pre-trained with node classification, context prediction or a
//! variational graph auto-encoder, then fine-tuned on downstream tasks.

pub mod depgraph;
pub mod gnn;
pub mod lexical;
pub mod mir;
pub mod numerics;
pub mod oracle;
pub mod pretrain;
pub mod selfcheck;
pub mod tasks;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error(transparent)]
    Parse(#[from] mir::ParseError),
    #[error(transparent)]
    Corpus(#[from] mir::CorpusError),
    #[error(transparent)]
    Checkpoint(#[from] pretrain::CheckpointError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
