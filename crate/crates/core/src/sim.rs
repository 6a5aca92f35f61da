//! Parametric user simulator.
//!
//! Synthesizes a genre-structured catalog, users with genre-preference
//! distributions, and two kinds of interaction sequences that share one
//! ground-truth decision mechanism:
//!
//! * observational: the user finds items on their own (exposure drawn from a
//!   preference-tilted proposal), so exposure is confounded with preference;
//! * interventional: exposure is set by an external policy that ignores the
//!   user's preferences.
//!
//! The decision rule is a logistic stand-in for the unknown behavior of the
//! language-model agents used to build the original book dataset:
//!
//! `P(accept) = σ(w_p·prefs[genre] + w_d·m + w_r·r + b)`
//!
//! with momentum `m = 2d−1` for the previous decision `d` (0 at the first
//! step) and `r = 1` iff the item was accepted earlier.
//!
//! All generators are pure functions of their inputs and seed. Each user's
//! randomness comes from its own stream, see [`crate::rng`].

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::sigmoid;
use crate::rng::{self, tag};

/// Deepest history enumerated exactly when the repeat term is active.
pub const MAX_ENUM_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unknown item {0}")]
    UnknownItem(usize),
    #[error("exact enumeration limited to {max} steps with a repeat term, got {t}")]
    TooDeep { t: usize, max: usize },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("exposure policy assigns zero mass to every item")]
    DegenerateExposure,
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("empty recommendation sequence")]
    EmptySequence,
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: usize,
    pub genre: usize,
    pub popularity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub n_genres: usize,
    pub items: Vec<Item>,
}

impl Catalog {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item(&self, id: usize) -> Result<&Item> {
        self.items.get(id).ok_or(SimError::UnknownItem(id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: u64,
    /// Probability vector over genres.
    pub prefs: Vec<f64>,
    /// Optional per-step mixing weight toward a fresh Dirichlet draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecisionModelParams {
    /// Weight on the preference for the item's genre.
    pub w_p: f64,
    /// Weight on previous-decision momentum `2d−1`.
    pub w_d: f64,
    /// Weight on "already accepted this item".
    pub w_r: f64,
    pub b: f64,
}

impl Default for DecisionModelParams {
    fn default() -> Self {
        Self { w_p: 4.0, w_d: 0.8, w_r: -3.0, b: -2.0 }
    }
}

impl DecisionModelParams {
    pub fn markov(self) -> Self {
        Self { w_r: 0.0, ..self }
    }

    #[inline]
    fn logit(&self, pref: f64, prev: Option<bool>, repeat: bool) -> f64 {
        let m = match prev {
            None => 0.0,
            Some(true) => 1.0,
            Some(false) => -1.0,
        };
        let r = if repeat { 1.0 } else { 0.0 };
        self.w_p * pref + self.w_d * m + self.w_r * r + self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Observational,
    Interventional,
}

/// One exposure and the user's decision on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub item: usize,
    pub accepted: bool,
}

impl Event {
    pub fn new(item: usize, accepted: bool) -> Self {
        Self { item, accepted }
    }
}

// `[item, 0|1]` on the wire.
impl Serialize for Event {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        (self.item, u8::from(self.accepted)).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Event {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (item, dec): (usize, u8) = Deserialize::deserialize(d)?;
        match dec {
            0 | 1 => Ok(Event::new(item, dec == 1)),
            other => Err(serde::de::Error::custom(format!("decision must be 0 or 1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSequence {
    pub kind: Regime,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExposurePolicy {
    /// `q(i) ∝ popularity(i)·exp(κ·prefs[genre(i)])`.
    UserProposal { kappa: f64 },
    Uniform,
    Popularity,
}

/// Exposure distribution of `policy` for a user with `prefs`.
pub fn exposure_distribution(policy: ExposurePolicy, prefs: &[f64], catalog: &Catalog) -> Result<Vec<f64>> {
    let weights: Vec<f64> = match policy {
        ExposurePolicy::Uniform => vec![1.0; catalog.len()],
        ExposurePolicy::Popularity => catalog.items.iter().map(|it| it.popularity).collect(),
        ExposurePolicy::UserProposal { kappa } => {
            catalog.items.iter().map(|it| it.popularity * (kappa * prefs[it.genre]).exp()).collect()
        }
    };
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(SimError::DegenerateExposure);
    }
    Ok(weights.into_iter().map(|w| w / total).collect())
}

pub fn generate_catalog(n_genres: usize, items_per_genre: usize, seed: u64) -> Result<Catalog> {
    if n_genres == 0 {
        return Err(SimError::ZeroCount("n_genres"));
    }
    if items_per_genre == 0 {
        return Err(SimError::ZeroCount("items_per_genre"));
    }
    let mut rng = rng::stream(seed, tag::CATALOG, 0);
    let items = (0..n_genres * items_per_genre)
        .map(|id| Item { id, genre: id / items_per_genre, popularity: rng.random::<f64>() })
        .collect();
    Ok(Catalog { n_genres, items })
}

fn dirichlet_ones<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

/// Preferences `~ Dirichlet(1,…,1)`, each drawn from the user's own stream.
pub fn generate_user(user_id: u64, n_genres: usize, seed: u64) -> UserProfile {
    let mut rng = rng::stream(seed, tag::PREFS, user_id);
    UserProfile { user_id, prefs: dirichlet_ones(&mut rng, n_genres), drift_rate: None }
}

pub fn generate_users(n_users: usize, n_genres: usize, seed: u64) -> Result<Vec<UserProfile>> {
    if n_users == 0 {
        return Err(SimError::ZeroCount("n_users"));
    }
    if n_genres == 0 {
        return Err(SimError::ZeroCount("n_genres"));
    }
    Ok((0..n_users as u64).map(|u| generate_user(u, n_genres, seed)).collect())
}

/// Ground-truth acceptance probability of `item` for this user.
pub fn decision_prob(
    user: &UserProfile,
    params: &DecisionModelParams,
    catalog: &Catalog,
    item: usize,
    prev: Option<bool>,
    accepted_history: &BTreeSet<usize>,
) -> Result<f64> {
    let genre = catalog.item(item)?.genre;
    Ok(sigmoid(params.logit(user.prefs[genre], prev, accepted_history.contains(&item))))
}

fn simulate(
    user: &UserProfile,
    params: &DecisionModelParams,
    catalog: &Catalog,
    policy: ExposurePolicy,
    kind: Regime,
    length: usize,
    seed: u64,
) -> Result<EventSequence> {
    if length == 0 {
        return Err(SimError::ZeroCount("length"));
    }
    let stream_tag = match kind {
        Regime::Observational => tag::OBSERVATIONAL,
        Regime::Interventional => tag::INTERVENTIONAL,
    };
    let mut rng = rng::stream(seed, stream_tag, user.user_id);
    let mut drift_rng = rng::stream(seed, tag::DRIFT ^ stream_tag << 8, user.user_id);
    let drift = user.drift_rate.filter(|&r| r > 0.0);

    let mut prefs = user.prefs.clone();
    let mut cumulative = cumulative(&exposure_distribution(policy, &prefs, catalog)?);
    let mut prev = None;
    let mut accepted = BTreeSet::new();
    let mut events = Vec::with_capacity(length);
    for _ in 0..length {
        let u: f64 = rng.random();
        let item = cumulative.partition_point(|&c| c <= u).min(catalog.len() - 1);
        let genre = catalog.items[item].genre;
        let p = sigmoid(params.logit(prefs[genre], prev, accepted.contains(&item)));
        let accept = rng.random::<f64>() < p;
        if accept {
            accepted.insert(item);
        }
        events.push(Event::new(item, accept));
        prev = Some(accept);

        if let Some(rate) = drift {
            let fresh = dirichlet_ones(&mut drift_rng, prefs.len());
            for (p, f) in prefs.iter_mut().zip(fresh) {
                *p = (1.0 - rate) * *p + rate * f;
            }
            if matches!(policy, ExposurePolicy::UserProposal { .. }) {
                cumulative = self::cumulative(&exposure_distribution(policy, &prefs, catalog)?);
            }
        }
    }
    Ok(EventSequence { kind, events })
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
}

/// User-driven exposure (normally [`ExposurePolicy::UserProposal`]).
pub fn simulate_observational(
    user: &UserProfile,
    params: &DecisionModelParams,
    catalog: &Catalog,
    policy: ExposurePolicy,
    length: usize,
    seed: u64,
) -> Result<EventSequence> {
    simulate(user, params, catalog, policy, Regime::Observational, length, seed)
}

/// Policy-driven exposure (normally uniform or popularity).
pub fn simulate_interventional(
    user: &UserProfile,
    params: &DecisionModelParams,
    catalog: &Catalog,
    policy: ExposurePolicy,
    length: usize,
    seed: u64,
) -> Result<EventSequence> {
    simulate(user, params, catalog, policy, Regime::Interventional, length, seed)
}

/// Exact `P(D_t = 1 | do(S_1..S_t))` for the forced recommendations `s_values`
/// (t = its length).
///
/// Without a repeat term this is the two-branch recursion over the previous
/// decision; otherwise all `2^(t−1)` decision histories are enumerated.
pub fn ground_truth_interventional_prob(
    user: &UserProfile,
    params: &DecisionModelParams,
    catalog: &Catalog,
    s_values: &[usize],
) -> Result<f64> {
    if params.w_r == 0.0 {
        Ok(*interventional_marginals(user, params, catalog, s_values)?.last().expect("non-empty"))
    } else {
        interventional_prob_enumerated(user, params, catalog, s_values)
    }
}

/// Interventional acceptance marginals `f_1..f_T` via the two-branch
/// recursion. Requires `w_r = 0` to be exact (checked by the caller).
pub fn interventional_marginals(
    user: &UserProfile,
    params: &DecisionModelParams,
    catalog: &Catalog,
    s_values: &[usize],
) -> Result<Vec<f64>> {
    if s_values.is_empty() {
        return Err(SimError::EmptySequence);
    }
    let mut out = Vec::with_capacity(s_values.len());
    let mut f_prev: Option<f64> = None;
    for &s in s_values {
        let pref = user.prefs[catalog.item(s)?.genre];
        let f = match f_prev {
            None => sigmoid(params.logit(pref, None, false)),
            Some(fp) => {
                let p1 = sigmoid(params.logit(pref, Some(true), false));
                let p0 = sigmoid(params.logit(pref, Some(false), false));
                p1 * fp + p0 * (1.0 - fp)
            }
        };
        out.push(f);
        f_prev = Some(f);
    }
    Ok(out)
}

/// Brute-force sum over every decision history before step t.
pub fn interventional_prob_enumerated(
    user: &UserProfile,
    params: &DecisionModelParams,
    catalog: &Catalog,
    s_values: &[usize],
) -> Result<f64> {
    let t = s_values.len();
    if t == 0 {
        return Err(SimError::EmptySequence);
    }
    if t > MAX_ENUM_DEPTH {
        return Err(SimError::TooDeep { t, max: MAX_ENUM_DEPTH });
    }
    for &s in s_values {
        catalog.item(s)?;
    }
    let (last, history) = s_values.split_last().expect("non-empty");
    let mut total = 0.0;
    for mask in 0u32..(1u32 << history.len()) {
        let mut weight = 1.0;
        let mut prev = None;
        let mut accepted = BTreeSet::new();
        for (k, &s) in history.iter().enumerate() {
            let d = mask >> k & 1 == 1;
            let p = decision_prob(user, params, catalog, s, prev, &accepted)?;
            weight *= if d { p } else { 1.0 - p };
            if d {
                accepted.insert(s);
            }
            prev = Some(d);
        }
        total += weight * decision_prob(user, params, catalog, *last, prev, &accepted)?;
    }
    Ok(total)
}

/// Acceptance probability at every step given the recorded history: the
/// Bayes-optimal teacher-forced prediction.
pub fn conditional_accept_probs(
    user: &UserProfile,
    params: &DecisionModelParams,
    catalog: &Catalog,
    events: &[Event],
) -> Result<Vec<f64>> {
    let mut prev = None;
    let mut accepted = BTreeSet::new();
    events
        .iter()
        .map(|e| {
            let p = decision_prob(user, params, catalog, e.item, prev, &accepted)?;
            if e.accepted {
                accepted.insert(e.item);
            }
            prev = Some(e.accepted);
            Ok(p)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<u64>,
    pub valid: Vec<u64>,
    pub test: Vec<u64>,
}

/// User-level split; each part is returned in ascending id order.
pub fn split_dataset(user_ids: &[u64], ratios: [f64; 3], seed: u64) -> Result<Split> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(*r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(SimError::BadRatios(ratios));
    }
    let mut ids = user_ids.to_vec();
    ids.sort_unstable();
    ids.shuffle(&mut rng::stream(seed, tag::SPLIT, 0));
    let n = ids.len() as f64;
    let cut1 = ((ratios[0] * n).round() as usize).min(ids.len());
    let cut2 = (((ratios[0] + ratios[1]) * n).round() as usize).clamp(cut1, ids.len());
    let sorted = |s: &[u64]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(Split { train: sorted(&ids[..cut1]), valid: sorted(&ids[cut1..cut2]), test: sorted(&ids[cut2..]) })
}
