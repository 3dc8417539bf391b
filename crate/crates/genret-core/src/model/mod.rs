//! Encoder-decoder transformer, heads, losses and optimizer.

mod config;
mod graph;
mod loss;
mod matrix;
mod net;
mod optim;
mod params;
mod train;

use alloc::vec::Vec;

pub use config::{HeadKind, ModelConfig};
pub use graph::softmax_rows;
pub use loss::{
    consistency_loss_kl, consistency_loss_softmax, cross_entropy_loss, position_groups, sym_kl, KL_EPS, KL_WEIGHT,
    SOFTMAX_WEIGHT,
};
pub use matrix::Matrix;
pub use net::{decoder_hidden, encode_input, forward, next_token_log_probs, pawa_logits, pawa_project};
pub use optim::{Adam, LrSchedule};
pub use params::{init_model, param_count, ModelParams, Tensor};
pub use train::{loss_and_grads, train_step, Consistency, LossReport, Seq2Seq, TrainOptions};

use crate::docid::SchemeKind;
use crate::tokenizer::{EOS, NUM_SPECIAL};

/// Identifier tokens to decoder targets: shifted past the special ids and
/// closed with EOS; atomic identifiers pass through as class indices.
pub fn target_tokens(kind: SchemeKind, id: &[u32]) -> Vec<u32> {
    match kind {
        SchemeKind::Atomic => id.to_vec(),
        _ => id.iter().map(|&t| t + NUM_SPECIAL).chain(core::iter::once(EOS)).collect(),
    }
}

/// Inverse of [`target_tokens`] for a single non-special token.
pub fn scheme_token(kind: SchemeKind, t: u32) -> Option<u32> {
    match kind {
        SchemeKind::Atomic => Some(t),
        _ => t.checked_sub(NUM_SPECIAL),
    }
}
