//! Ranking and decision metrics.
//!
//! All aggregates are means over per-example values computed with pairwise
//! summation, so they do not depend on evaluation order or thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csrec::{predict_sequence, rank_catalog_observational, CsrecModel};
use crate::num::{mean, sigmoid};
use crate::seqrec::{self, bce, SeqError, SeqModelParams};
use crate::sim::Event;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("unknown item {0}")]
    UnknownItem(usize),
    #[error("alpha {0} outside (0, 1)")]
    BadAlpha(f64),
    #[error("user {user}: {len} events, need at least {need}")]
    SequenceTooShort { user: u64, len: usize, need: usize },
    #[error("malformed report: {0}")]
    BadReport(String),
    #[error(transparent)]
    Model(#[from] SeqError),
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

/// Single relevant item, so the ideal DCG is 1.
pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// 1-based rank of `candidate` under descending scores, ties by ascending id.
pub fn rank_of(scores: &[f64], candidate: usize) -> Result<usize> {
    let s = *scores.get(candidate).ok_or(MetricError::UnknownItem(candidate))?;
    let ahead = scores.iter().enumerate().filter(|&(j, &v)| v > s || (v == s && j < candidate)).count();
    Ok(ahead + 1)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(MetricError::BadAlpha(alpha))
    }
}

fn check_pairs(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(MetricError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(MetricError::EmptyInput);
    }
    Ok(())
}

fn agreement(pred: &[bool], d: &[bool]) -> f64 {
    let hits: Vec<f64> = pred.iter().zip(d).map(|(p, t)| if p == t { 1.0 } else { 0.0 }).collect();
    mean(&hits)
}

/// Predicted decision of a probability model: accept iff `z ≥ 1 − α`.
pub fn threshold_decision(z: f64, alpha: f64) -> bool {
    z >= 1.0 - alpha
}

pub fn ahr_threshold(z: &[f64], d: &[bool], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_pairs(z.len(), d.len())?;
    let pred: Vec<bool> = z.iter().map(|&v| threshold_decision(v, alpha)).collect();
    Ok(agreement(&pred, d))
}

/// Predicted decision of a score model: accept iff the candidate ranks
/// within the top `⌈α·N⌉` of the catalog.
pub fn topfrac_decision(scores: &[f64], candidate: usize, alpha: f64) -> Result<bool> {
    check_alpha(alpha)?;
    let cutoff = (alpha * scores.len() as f64).ceil() as usize;
    Ok(rank_of(scores, candidate)? <= cutoff)
}

/// Per-example predicted decisions and their agreement rate with `d`.
pub fn ahr_topfrac(scores: &[Vec<f64>], candidates: &[usize], d: &[bool], alpha: f64) -> Result<(Vec<bool>, f64)> {
    check_pairs(scores.len(), candidates.len())?;
    check_pairs(candidates.len(), d.len())?;
    let pred = scores
        .iter()
        .zip(candidates)
        .map(|(s, &c)| topfrac_decision(s, c, alpha))
        .collect::<Result<Vec<bool>>>()?;
    let ahr = agreement(&pred, d);
    Ok((pred, ahr))
}

pub fn bce_metric(z: &[f64], d: &[bool]) -> Result<f64> {
    check_pairs(z.len(), d.len())?;
    let v: Vec<f64> = z.iter().zip(d).map(|(&p, &y)| bce(p, y)).collect();
    Ok(mean(&v))
}

/// Histories during multi-step evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryMode {
    /// Recorded decisions.
    #[default]
    TeacherForcing,
    /// The model's own predicted decisions replace recorded ones inside the
    /// evaluation window (probability models threshold at 0.5).
    SelfRollout,
}

/// A model under evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    /// Probability model, thresholded.
    Csrec(&'a CsrecModel),
    /// Score model on positive-only histories, top-fraction conversion.
    Baseline(&'a SeqModelParams),
}

/// A user's sequence under evaluation.
#[derive(Debug, Clone, Copy)]
pub struct UserSequence<'a> {
    pub user_id: u64,
    pub events: &'a [Event],
}

/// Metric rows plus run metadata.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Vec<(String, f64)>,
    pub meta: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn extend(&mut self, other: EvalReport) {
        self.metrics.extend(other.metrics);
        self.meta.extend(other.meta);
    }

    /// `metric,value` rows; values use the shortest round-trip decimal form.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (name, v) in &self.metrics {
            let _ = writeln!(s, "{name},{v:?}");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("metric,value") {
            return Err(MetricError::BadReport("missing header".into()));
        }
        let mut report = EvalReport::default();
        for line in lines {
            let (name, value) =
                line.rsplit_once(',').ok_or_else(|| MetricError::BadReport(format!("bad row {line:?}")))?;
            let value = value.parse().map_err(|_| MetricError::BadReport(format!("bad value {value:?}")))?;
            report.push(name, value);
        }
        Ok(report)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(s, "- {k}: {v}");
        }
        if !self.meta.is_empty() {
            s.push('\n');
        }
        s.push_str("| metric | value |\n|---|---|\n");
        for (name, v) in &self.metrics {
            let _ = writeln!(s, "| {name} | {v:.4} |");
        }
        s
    }
}

/// Label used for α-indexed rows (`0.2` → `AHR@0.2`).
pub fn alpha_label(prefix: &str, alpha: f64) -> String {
    format!("{prefix}@{alpha}")
}

/// Per-step predictions of one user over the last `beta` events.
struct UserPreds {
    /// Per α: predicted decisions.
    decisions: Vec<Vec<bool>>,
    truth: Vec<bool>,
    /// Probabilities (CSRec) or σ(score) (baseline).
    probs: Vec<f64>,
}

fn positives(events: &[Event]) -> Vec<Event> {
    events.iter().filter(|e| e.accepted).map(|e| Event { item: e.item, accepted: true }).collect()
}

fn eval_user(scorer: Scorer, seq: &UserSequence, beta: usize, alphas: &[f64], mode: HistoryMode) -> Result<UserPreds> {
    let n = seq.events.len();
    if n < beta || beta == 0 {
        return Err(MetricError::SequenceTooShort { user: seq.user_id, len: n, need: beta.max(1) });
    }
    let start = n - beta;
    let truth: Vec<bool> = seq.events[start..].iter().map(|e| e.accepted).collect();
    let mut decisions = vec![Vec::with_capacity(beta); alphas.len()];
    let mut probs = Vec::with_capacity(beta);
    match (scorer, mode) {
        (Scorer::Csrec(model), HistoryMode::TeacherForcing) => {
            let f = predict_sequence(model, seq.events)?;
            for &z in &f[start..] {
                for (a, &alpha) in alphas.iter().enumerate() {
                    decisions[a].push(threshold_decision(z, alpha));
                }
                probs.push(z);
            }
        }
        (Scorer::Csrec(model), HistoryMode::SelfRollout) => {
            let mut hist = seq.events[..start].to_vec();
            for e in &seq.events[start..] {
                let h = seqrec::encode(&model.params, &hist)?;
                let z = seqrec::accept_prob(&model.params, &h, e.item)?;
                for (a, &alpha) in alphas.iter().enumerate() {
                    decisions[a].push(threshold_decision(z, alpha));
                }
                probs.push(z);
                hist.push(Event { item: e.item, accepted: z >= 0.5 });
            }
        }
        (Scorer::Baseline(params), mode) => {
            let mut hist = positives(&seq.events[..start]);
            for e in &seq.events[start..] {
                let h = seqrec::encode(params, &hist)?;
                let scores = seqrec::catalog_scores(params, &h);
                let s = *scores.get(e.item).ok_or(MetricError::UnknownItem(e.item))?;
                let mut first = false;
                for (a, &alpha) in alphas.iter().enumerate() {
                    let d = topfrac_decision(&scores, e.item, alpha)?;
                    decisions[a].push(d);
                    if a == 0 {
                        first = d;
                    }
                }
                probs.push(sigmoid(s));
                let accepted = match mode {
                    HistoryMode::TeacherForcing => e.accepted,
                    HistoryMode::SelfRollout => first,
                };
                if accepted {
                    hist.push(Event { item: e.item, accepted: true });
                }
            }
        }
    }
    Ok(UserPreds { decisions, truth, probs })
}

/// Evaluates the last `beta` steps of every sequence. CSRec rows:
/// `AHR@α`, `BCE`. Baseline rows: `AHR@α`, `BCE@α` on the hard decisions,
/// and `BCE_sigmoid` on `σ(score)`.
pub fn multi_step_eval(
    scorer: Scorer,
    sequences: &[UserSequence],
    beta: usize,
    alphas: &[f64],
    mode: HistoryMode,
) -> Result<EvalReport> {
    if sequences.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    for &alpha in alphas {
        check_alpha(alpha)?;
    }
    let per_user = sequences
        .par_iter()
        .map(|s| eval_user(scorer, s, beta, alphas, mode))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<bool> = per_user.iter().flat_map(|u| u.truth.iter().copied()).collect();
    let probs: Vec<f64> = per_user.iter().flat_map(|u| u.probs.iter().copied()).collect();
    let mut report = EvalReport::default();
    let decided: Vec<Vec<bool>> = (0..alphas.len())
        .map(|a| per_user.iter().flat_map(|u| u.decisions[a].iter().copied()).collect())
        .collect();
    for (a, &alpha) in alphas.iter().enumerate() {
        report.push(alpha_label("AHR", alpha), agreement(&decided[a], &truth));
    }
    match scorer {
        Scorer::Csrec(_) => report.push("BCE", bce_metric(&probs, &truth)?),
        Scorer::Baseline(_) => {
            for (a, &alpha) in alphas.iter().enumerate() {
                let hard: Vec<f64> = decided[a].iter().map(|&d| if d { 1.0 } else { 0.0 }).collect();
                report.push(alpha_label("BCE", alpha), bce_metric(&hard, &truth)?);
            }
            report.push("BCE_sigmoid", bce_metric(&probs, &truth)?);
        }
    }
    report.meta.insert("beta".into(), beta.to_string());
    report.meta.insert(
        "history".into(),
        match mode {
            HistoryMode::TeacherForcing => "teacher_forcing",
            HistoryMode::SelfRollout => "self_rollout",
        }
        .into(),
    );
    Ok(report)
}

/// Position of the last accepted event, the observational ranking target.
pub fn observational_target(events: &[Event]) -> Option<usize> {
    events.iter().rposition(|e| e.accepted)
}

/// Catalog rank of the last accepted item of each sequence given what came
/// before it; sequences without an accepted event are skipped.
pub fn observational_ranks(scorer: Scorer, sequences: &[UserSequence]) -> Result<Vec<usize>> {
    let ranks = sequences
        .par_iter()
        .filter_map(|s| observational_target(s.events).map(|t| (s, t)))
        .map(|(s, t)| {
            let target = s.events[t].item;
            let history = &s.events[..t];
            match scorer {
                Scorer::Csrec(model) => {
                    let purchases: Vec<usize> = history.iter().filter(|e| e.accepted).map(|e| e.item).collect();
                    let ranking = rank_catalog_observational(model, &purchases)?;
                    ranking.iter().position(|&i| i == target).map(|p| p + 1).ok_or(MetricError::UnknownItem(target))
                }
                Scorer::Baseline(params) => {
                    let h = seqrec::encode(params, history)?;
                    rank_of(&seqrec::catalog_scores(params, &h), target)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ranks)
}

/// `HR@k` and `NDCG@k` rows for each `k`.
pub fn ranking_report(ranks: &[usize], ks: &[usize]) -> Result<EvalReport> {
    if ranks.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut report = EvalReport::default();
    for &k in ks {
        let hr: Vec<f64> = ranks.iter().map(|&r| hr_at_k(r, k)).collect();
        report.push(format!("HR@{k}"), mean(&hr));
    }
    for &k in ks {
        let nd: Vec<f64> = ranks.iter().map(|&r| ndcg_at_k(r, k)).collect();
        report.push(format!("NDCG@{k}"), mean(&nd));
    }
    Ok(report)
}

/// `f(v | intv context) − f̃(v | obs context)` for each item.
pub fn ter_estimate(
    csrec: &CsrecModel,
    ftilde: &SeqModelParams,
    items: &[usize],
    intv_context: &[Event],
    obs_context: &[Event],
) -> Result<Vec<TerRow>> {
    let hi = seqrec::encode(&csrec.params, intv_context)?;
    let ho = seqrec::encode(ftilde, obs_context)?;
    items
        .iter()
        .map(|&v| {
            let f_intv = seqrec::accept_prob(&csrec.params, &hi, v)?;
            let f_obs = seqrec::accept_prob(ftilde, &ho, v)?;
            Ok(TerRow { item: v, f_intv, f_obs, ter: f_intv - f_obs })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerRow {
    pub item: usize,
    pub f_intv: f64,
    pub f_obs: f64,
    pub ter: f64,
}

#[cfg(test)]
mod tests;
