//! Decision-conditioned recurrent acceptance model.
//!
//! Each history event is embedded as `x = E_item[i] + E_dec[d]` and folded
//! into a gated recurrent state:
//!
//! ```text
//! z = σ(W_z x + U_z h + b_z)
//! r = σ(W_r x + U_r h + b_r)
//! ĥ = tanh(W_h x + U_h (r ⊙ h) + b_h)
//! h ← (1 − z) ⊙ h + z ⊙ ĥ
//! ```
//!
//! The acceptance probability of a candidate `j` is `σ(h · E_item[j] + c[j])`.
//! Only the last `max_seq_len` events of a history are encoded; shorter
//! histories are processed as-is (no padding).

mod adam;
mod cell;
mod gradcheck;
mod params;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{sigmoid, PROB_CLIP};
use crate::sim::Event;

pub use adam::{adam_step, AdamState};
pub use cell::{backward, Objective, SequenceGrad};
pub use gradcheck::max_gradient_error;
pub use params::{Gradients, SeqModelParams, TENSOR_NAMES};
pub use train::{
    dataset_loss, ftilde_branches, train_observational, train_sequences, EpochStats, LossConfig, SeqTask,
    TrainReport,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeqError {
    #[error("unknown item {0}")]
    UnknownItem(usize),
    #[error("tensor shapes do not match: {0}")]
    ShapeMismatch(String),
    #[error("no training data")]
    EmptyData,
    #[error("invalid hyperparameter {field}: {reason}")]
    InvalidHyper { field: &'static str, reason: String },
}

pub type Result<T, E = SeqError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub embed_dim: usize,
    pub max_seq_len: usize,
    /// Target number of training examples (positions) per batch; whole
    /// sequences are packed until the target is reached.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            max_seq_len: 50,
            batch_size: 256,
            learning_rate: 0.0005,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 20,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| Err(SeqError::InvalidHyper { field, reason: reason.to_string() });
        if self.embed_dim == 0 {
            return bad("embed_dim", "must be positive");
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive and finite");
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0) {
            return bad("adam_beta1", "must lie in (0, 1)");
        }
        if !(self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0) {
            return bad("adam_beta2", "must lie in (0, 1)");
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return bad("adam_eps", "must be positive and finite");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        Ok(())
    }
}

/// Binary cross-entropy with the shared probability clip.
pub fn bce(p: f64, label: bool) -> f64 {
    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `dBCE/dlogit` for `p = σ(logit)`; zero where the clip is active.
#[inline]
pub(crate) fn bce_logit_grad(p: f64, label: bool) -> f64 {
    if !(PROB_CLIP..=1.0 - PROB_CLIP).contains(&p) {
        0.0
    } else {
        p - if label { 1.0 } else { 0.0 }
    }
}

/// Final hidden state after folding the last `max_seq_len` events of
/// `history`.
pub fn encode(params: &SeqModelParams, history: &[Event]) -> Result<Vec<f64>> {
    params.check_items(history.iter().map(|e| e.item))?;
    let window = &history[history.len().saturating_sub(params.max_seq_len)..];
    let mut h = vec![0.0; params.dim];
    let mut scratch = cell::StepScratch::new(params.dim);
    for e in window {
        cell::step(params, &mut h, e.item, e.accepted, &mut scratch);
    }
    Ok(h)
}

pub fn logit(params: &SeqModelParams, h: &[f64], candidate: usize) -> Result<f64> {
    params.check_items(std::iter::once(candidate))?;
    Ok(params.score(h, candidate))
}

pub fn accept_prob(params: &SeqModelParams, h: &[f64], candidate: usize) -> Result<f64> {
    logit(params, h, candidate).map(sigmoid)
}

/// `h · E_item[j] + c[j]` for every item.
pub fn catalog_scores(params: &SeqModelParams, h: &[f64]) -> Vec<f64> {
    (0..params.n_items).map(|j| params.score(h, j)).collect()
}

/// Acceptance probability at every position of `events`, each conditioned
/// on the truncated history before it (teacher forcing).
pub fn position_probs(params: &SeqModelParams, events: &[Event]) -> Result<Vec<f64>> {
    params.check_items(events.iter().map(|e| e.item))?;
    let fwd = cell::sequence_forward(params, events);
    Ok(cell::sequence_logits(params, events, &fwd).into_iter().map(sigmoid).collect())
}

/// Items ordered by descending score, ties broken by ascending id.
pub fn rank_by_scores(scores: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids
}
