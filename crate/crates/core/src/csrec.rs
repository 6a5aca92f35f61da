//! The interventional model `f` and its constrained training.
//!
//! `f_t` estimates the acceptance probability of the recommended item at
//! step `t` under the recommendation regime. Training adds a penalty pulling
//! `f_t` toward the recursion target built from the observational model:
//! `p(accept | prev accepted) · f_{t−1} + p(accept | prev rejected) · (1 − f_{t−1})`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seqrec::{
    self, ftilde_branches, train_sequences, EpochStats, Hyperparams, LossConfig, Objective, Result, SeqError,
    SeqModelParams, SeqTask, TrainReport,
};
use crate::rng::{self, tag};
use crate::sim::Event;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrecModel {
    pub params: SeqModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsrecHyper {
    pub train: Hyperparams,
    pub lambda: f64,
    pub detach_target: bool,
    /// Start from the observational model's weights instead of a fresh init.
    pub init_from_ftilde: bool,
}

impl Default for CsrecHyper {
    fn default() -> Self {
        Self { train: Hyperparams::default(), lambda: 1.0, detach_target: true, init_from_ftilde: true }
    }
}

impl CsrecHyper {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(SeqError::InvalidHyper { field: "lambda", reason: "must be finite and >= 0".into() });
        }
        Ok(())
    }

    fn loss_config(&self) -> LossConfig {
        LossConfig { lambda: self.lambda, detach_target: self.detach_target }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintStep {
    pub f: f64,
    pub target: f64,
    pub residual: f64,
}

/// Per-step values of one sequence; step 0 has no target and is omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintTrace {
    pub steps: Vec<ConstraintStep>,
}

impl ConstraintTrace {
    pub fn mean_squared_residual(&self) -> f64 {
        let sq: Vec<f64> = self.steps.iter().map(|s| s.residual * s.residual).collect();
        crate::num::mean(&sq)
    }
}

/// `f_t` for every step, with recorded decisions in the history.
pub fn predict_sequence(model: &CsrecModel, events: &[Event]) -> Result<Vec<f64>> {
    seqrec::position_probs(&model.params, events)
}

/// Convex mixture of the two branch probabilities.
pub fn mix_target(p_d1: f64, p_d0: f64, f_prev: f64) -> f64 {
    p_d1 * f_prev + p_d0 * (1.0 - f_prev)
}

/// Target at 0-based position `t ≥ 1`.
pub fn constraint_target(ftilde: &SeqModelParams, events: &[Event], t: usize, f_prev: f64) -> Result<f64> {
    if t == 0 || t >= events.len() {
        return Err(SeqError::ShapeMismatch(format!("position {t} has no constraint target")));
    }
    let [p1, p0] = ftilde_branches(ftilde, &events[..=t])?[t];
    Ok(mix_target(p1, p0, f_prev))
}

/// Loss of a single sequence: mean BCE plus `λ` times the mean squared
/// residual over steps `t ≥ 1`, with analytic gradients.
pub fn csrec_loss(
    model: &CsrecModel,
    ftilde: &SeqModelParams,
    events: &[Event],
    hyper: &CsrecHyper,
) -> Result<(f64, SeqModelParams, ConstraintTrace)> {
    let n = events.len();
    if n == 0 {
        return Err(SeqError::EmptyData);
    }
    let branches = ftilde_branches(ftilde, events)?;
    let mut grads = model.params.zeros_like();
    let bce_scale = 1.0 / n as f64;
    let obj = if hyper.lambda == 0.0 || n == 1 {
        Objective::Bce { scale: bce_scale }
    } else {
        Objective::Constrained {
            bce_scale,
            con_scale: hyper.lambda / (n - 1) as f64,
            detach_target: hyper.detach_target,
            branches: &branches,
        }
    };
    let stats = seqrec::backward(&model.params, events, &obj, &mut grads)?;
    let mut loss = stats.bce_sum / n as f64;
    if stats.n_residual > 0 {
        loss += hyper.lambda * (stats.residual_sq_sum / stats.n_residual as f64);
    }
    let f = predict_sequence(model, events)?;
    let steps = (1..n)
        .map(|t| {
            let target = mix_target(branches[t][0], branches[t][1], f[t - 1]);
            ConstraintStep { f: f[t], target, residual: f[t] - target }
        })
        .collect();
    Ok((loss, grads, ConstraintTrace { steps }))
}

/// Trains `f` on interventional sequences with the frozen observational
/// model supplying the constraint branches.
pub fn train_csrec(
    sequences: &[Vec<Event>],
    ftilde: &SeqModelParams,
    hyper: &CsrecHyper,
) -> Result<(CsrecModel, TrainReport)> {
    hyper.validate()?;
    if sequences.iter().all(|s| s.is_empty()) {
        return Err(SeqError::EmptyData);
    }
    let h = &hyper.train;
    let init = if hyper.init_from_ftilde {
        if ftilde.dim != h.embed_dim || ftilde.max_seq_len != h.max_seq_len {
            return Err(SeqError::ShapeMismatch(format!(
                "warm start needs embed_dim {} and max_seq_len {}",
                ftilde.dim, ftilde.max_seq_len
            )));
        }
        ftilde.clone()
    } else {
        SeqModelParams::init(ftilde.n_items, h.embed_dim, h.max_seq_len, rng::derive_seed(h.seed, tag::CSREC, 0))
    };
    let branches: Vec<Vec<[f64; 2]>> = if hyper.lambda == 0.0 {
        vec![Vec::new(); sequences.len()]
    } else {
        sequences.par_iter().map(|s| ftilde_branches(ftilde, s)).collect::<Result<_>>()?
    };
    let tasks: Vec<SeqTask> = sequences
        .iter()
        .zip(&branches)
        .map(|(s, b)| SeqTask { events: s, branches: (hyper.lambda != 0.0).then_some(b.as_slice()) })
        .collect();
    let (params, report) = train_sequences(init, &tasks, h, &hyper.loss_config())?;
    Ok((CsrecModel { params }, report))
}

/// Training-objective statistics of `model` on a dataset.
pub fn csrec_dataset_loss(
    model: &CsrecModel,
    ftilde: &SeqModelParams,
    sequences: &[Vec<Event>],
    hyper: &CsrecHyper,
) -> Result<EpochStats> {
    let branches: Vec<Vec<[f64; 2]>> = sequences.par_iter().map(|s| ftilde_branches(ftilde, s)).collect::<Result<_>>()?;
    let tasks: Vec<SeqTask> = sequences
        .iter()
        .zip(&branches)
        .map(|(s, b)| SeqTask { events: s, branches: Some(b.as_slice()) })
        .collect();
    Ok(seqrec::dataset_loss(&model.params, &tasks, &hyper.loss_config()))
}

/// Ranks the whole catalog for a purchase history in which every item is
/// taken as recommended and accepted.
pub fn rank_catalog_observational(model: &CsrecModel, purchase_history: &[usize]) -> Result<Vec<usize>> {
    let history: Vec<Event> = purchase_history.iter().map(|&item| Event { item, accepted: true }).collect();
    let h = seqrec::encode(&model.params, &history)?;
    Ok(seqrec::rank_by_scores(&seqrec::catalog_scores(&model.params, &h)))
}
