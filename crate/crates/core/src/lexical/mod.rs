//! Subword tokens, skip-gram vectors and BiLSTM instruction encodings.

mod bpe;
mod lstm;
mod sgns;

pub use bpe::{atoms, pieces, split_identifier, tokenize_instruction, train_bpe, SubwordVocab, PAD, UNK};
pub use lstm::{encode_instruction, encode_sequences, hidden_size, init_bilstm, BACKWARD, FORWARD};
pub use sgns::{cosine, nearest_neighbors, sgns_loss, train_sgns, EmbeddingMatrix, PairBatch, SgnsConfig};

use crate::gnn::{Model, Scope};
use crate::numerics::{Tape, Tensor};
use crate::Result;

/// Sum of instruction encodings over a method or a whole program, as a
/// `[1, 2H]` row.
pub fn lexical_embedding(scope: Scope<'_>, model: &Model) -> Result<Tensor> {
    let prep = model.prepare(scope)?;
    let mut tape = Tape::new();
    let enc = model.encodings(&mut tape, &prep)?;
    let sum = model.lexical_sum(&mut tape, &prep, enc)?;
    Ok(tape.value(sum).clone())
}
