//! Byte-level transformer training on a fixed budget and the projected AGOP of
//! its last-position logits.

mod agop;
mod checkpoint;
mod corpus;
mod model;
mod synth;
mod train;

pub use agop::{lm_agop_metrics, lm_last_input_agop, lm_nfa_alignment, LastLogits, LmInteraction, WindowSource};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use corpus::{eval_windows, load_corpus, sample_train_batch, sample_train_window, ByteCorpus, CorpusPaths};
pub use model::{ParamSpec, TinyConfig, TinyTransformer, INIT_STD};
pub use synth::synthetic_corpus;
pub use train::{split_loss, train_lm, LmTrial, MetricSpec, TrainBudget, TrialRecord, ValCheck};

use crate::error::Result;
use crate::numkernel::Tensor;

/// Logits for every position of one token sequence (`len x vocab`).
pub fn lm_forward(model: &TinyTransformer, tokens: &[u8]) -> Result<Tensor> {
    let seq = tokens.len();
    if seq == 0 || seq > model.config.context {
        return Err(crate::Error::Shape(format!(
            "sequence of {seq} tokens for context {}",
            model.config.context
        )));
    }
    model.check_tokens(tokens)?;
    let x = model.embed(tokens, 1, seq);
    let (logits, _) = model.forward_embedded(x, 1, seq);
    Tensor::matrix(seq, model.config.vocab, logits)
}
