use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cell::{self, Objective, SequenceGrad, StepScratch};
use super::{adam_step, AdamState, Gradients, Hyperparams, Result, SeqError, SeqModelParams};
use crate::num::sigmoid;
use crate::rng::{self, tag};
use crate::sim::Event;

/// A training sequence, optionally with frozen constraint branches.
#[derive(Debug, Clone, Copy)]
pub struct SeqTask<'a> {
    pub events: &'a [Event],
    pub branches: Option<&'a [[f64; 2]]>,
}

/// Constraint weight and target handling; `lambda == 0` is plain BCE.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub detach_target: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub bce: f64,
    pub residual_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial: EpochStats,
    pub epochs: Vec<EpochStats>,
    pub steps: u64,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial.loss, |e| e.loss)
    }
}

fn constrained(loss: &LossConfig, task: &SeqTask) -> bool {
    loss.lambda != 0.0 && task.branches.is_some()
}

fn objective<'a>(loss: &LossConfig, task: &SeqTask<'a>, bce_scale: f64, con_scale: f64) -> Objective<'a> {
    match task.branches {
        Some(branches) if loss.lambda != 0.0 => {
            Objective::Constrained { bce_scale, con_scale, detach_target: loss.detach_target, branches }
        }
        _ => Objective::Bce { scale: bce_scale },
    }
}

fn stats_of(total: &SequenceGrad, loss: &LossConfig) -> EpochStats {
    let bce = if total.n_bce > 0 { total.bce_sum / total.n_bce as f64 } else { 0.0 };
    let residual_ms = if total.n_residual > 0 { total.residual_sq_sum / total.n_residual as f64 } else { 0.0 };
    EpochStats { loss: bce + loss.lambda * residual_ms, bce, residual_ms }
}

/// Mean per-position loss over a dataset.
pub fn dataset_loss(params: &SeqModelParams, tasks: &[SeqTask], loss: &LossConfig) -> EpochStats {
    let parts: Vec<SequenceGrad> = tasks
        .par_iter()
        .map(|task| cell::evaluate(params, task.events, &objective(loss, task, 1.0, 1.0)))
        .collect();
    let mut total = SequenceGrad::default();
    for p in &parts {
        total.add(p);
    }
    stats_of(&total, loss)
}

/// Packs shuffled sequences into batches of at least `batch_size`
/// positions (the last batch may be smaller).
fn batches(tasks: &[SeqTask], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.shuffle(&mut rng::stream(seed, tag::SHUFFLE, epoch as u64));
    let mut out = Vec::new();
    let mut cur = Vec::new();
    let mut count = 0;
    for i in order {
        cur.push(i);
        count += tasks[i].events.len();
        if count >= batch_size {
            out.push(std::mem::take(&mut cur));
            count = 0;
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Adam training from `params`. Gradients are computed per sequence in
/// parallel and summed in batch order, so results do not depend on the
/// thread count.
pub fn train_sequences(
    mut params: SeqModelParams,
    tasks: &[SeqTask],
    hyper: &Hyperparams,
    loss: &LossConfig,
) -> Result<(SeqModelParams, TrainReport)> {
    hyper.validate()?;
    let tasks: Vec<SeqTask> = tasks.iter().copied().filter(|t| !t.events.is_empty()).collect();
    if tasks.is_empty() {
        return Err(SeqError::EmptyData);
    }
    for t in &tasks {
        params.check_items(t.events.iter().map(|e| e.item))?;
        if let Some(b) = t.branches {
            if b.len() != t.events.len() {
                return Err(SeqError::ShapeMismatch(format!("{} branch pairs for {} events", b.len(), t.events.len())));
            }
        }
    }
    let mut state = AdamState::new(&params);
    let mut report = TrainReport { initial: dataset_loss(&params, &tasks, loss), ..Default::default() };
    for epoch in 0..hyper.epochs {
        for batch in batches(&tasks, hyper.batch_size, hyper.seed, epoch) {
            let n_bce: usize = batch.iter().map(|&i| tasks[i].events.len()).sum();
            let n_con: usize = batch
                .iter()
                .filter(|&&i| constrained(loss, &tasks[i]))
                .map(|&i| tasks[i].events.len() - 1)
                .sum();
            let bce_scale = 1.0 / n_bce as f64;
            let con_scale = if n_con > 0 { loss.lambda / n_con as f64 } else { 0.0 };
            let p = &params;
            let parts: Vec<Gradients> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = p.zeros_like();
                    let obj = objective(loss, &tasks[i], bce_scale, con_scale);
                    cell::backward(p, tasks[i].events, &obj, &mut g).expect("validated inputs");
                    g
                })
                .collect();
            let mut grads = parts[0].clone();
            for g in &parts[1..] {
                grads.add_assign(g);
            }
            adam_step(&mut params, &grads, &mut state, hyper)?;
            report.steps += 1;
        }
        report.epochs.push(dataset_loss(&params, &tasks, loss));
    }
    Ok((params, report))
}

/// Trains the observational model `f̃` on recorded sequences.
pub fn train_observational(
    sequences: &[Vec<Event>],
    n_items: usize,
    hyper: &Hyperparams,
) -> Result<(SeqModelParams, TrainReport)> {
    hyper.validate()?;
    let init = SeqModelParams::init(n_items, hyper.embed_dim, hyper.max_seq_len, rng::derive_seed(hyper.seed, tag::FTILDE, 0));
    let tasks: Vec<SeqTask> = sequences.iter().map(|s| SeqTask { events: s, branches: None }).collect();
    train_sequences(init, &tasks, hyper, &LossConfig::default())
}

/// For each position `t ≥ 1`, the acceptance probability of `events[t]`
/// after the history up to `t − 1` with the decision at `t − 1` set to
/// accepted and to rejected. Position 0 repeats the empty-history value.
pub fn ftilde_branches(params: &SeqModelParams, events: &[Event]) -> Result<Vec<[f64; 2]>> {
    params.check_items(events.iter().map(|e| e.item))?;
    let d = params.dim;
    let m = params.max_seq_len;
    let mut out = Vec::with_capacity(events.len());
    let mut scratch = StepScratch::new(d);
    let mut running = vec![0.0; d];
    for (t, e) in events.iter().enumerate() {
        if t == 0 {
            let p = sigmoid(params.score(&running, e.item));
            out.push([p, p]);
            continue;
        }
        // State after events[..t-1], restricted to what the window keeps once
        // event t-1 is appended.
        let base = if t - 1 < m {
            if t >= 2 {
                let prev = events[t - 2];
                cell::step(params, &mut running, prev.item, prev.accepted, &mut scratch);
            }
            running.clone()
        } else {
            let mut h = vec![0.0; d];
            for ev in &events[t - m..t - 1] {
                cell::step(params, &mut h, ev.item, ev.accepted, &mut scratch);
            }
            h
        };
        let prev_item = events[t - 1].item;
        let mut pair = [0.0; 2];
        for (slot, dec) in [(0, true), (1, false)] {
            let mut h = base.clone();
            cell::step(params, &mut h, prev_item, dec, &mut scratch);
            pair[slot] = sigmoid(params.score(&h, e.item));
        }
        out.push(pair);
    }
    Ok(out)
}
