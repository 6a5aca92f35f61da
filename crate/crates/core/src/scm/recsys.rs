//! The sequential-recommendation causal graph and the identity that
//! expresses interventional acceptance through observational conditionals.
//!
//! Nodes: `P` (root indexing the user's preference vector), `S1..ST`
//! (exposed item, parent `P`), `D1..DT` (binary decision, parents `P`, `St`
//! and `D(t−1)`). There is no `Dt → S(t+1)` edge: exposure does not react to
//! decisions in the offline setting.

use std::collections::BTreeSet;

use super::{Assignment, NodeSpec, Result, Scm, ScmError, MAX_STATES};
use crate::sim::{self, Catalog, DecisionModelParams, ExposurePolicy, UserProfile};

pub const P_NODE: &str = "P";

pub fn s_node(t: usize) -> String {
    format!("S{t}")
}

pub fn d_node(t: usize) -> String {
    format!("D{t}")
}

/// Preference-tilted observational exposure rows, one per user.
pub fn default_exposure(users: &[UserProfile], catalog: &Catalog, kappa: f64) -> Result<Vec<Vec<f64>>> {
    users
        .iter()
        .map(|u| sim::exposure_distribution(ExposurePolicy::UserProposal { kappa }, &u.prefs, catalog))
        .collect::<Result<_, _>>()
        .map_err(|e| ScmError::InvalidRecsys(e.to_string()))
}

/// Builds the recommendation SCM over `steps` time steps.
///
/// `P` is uniform over `users`; `exposure[p]` is `P(S_t | P = p)`. Decision
/// CPTs are exactly the simulator's mechanism, which must have `w_r = 0` so
/// that `D_t` depends only on `(P, S_t, D_{t−1})`.
pub fn build_recsys_scm(
    steps: usize,
    params: &DecisionModelParams,
    users: &[UserProfile],
    catalog: &Catalog,
    exposure: &[Vec<f64>],
) -> Result<Scm> {
    if params.w_r != 0.0 {
        return Err(ScmError::NonMarkovConfig(params.w_r));
    }
    if steps == 0 || users.is_empty() || catalog.is_empty() {
        return Err(ScmError::InvalidRecsys("need at least one step, user and item".into()));
    }
    if exposure.len() != users.len() {
        return Err(ScmError::InvalidRecsys(format!(
            "{} exposure rows for {} users",
            exposure.len(),
            users.len()
        )));
    }
    let n = catalog.len();
    let states = (users.len() as u128)
        .saturating_mul((n as u128).saturating_pow(steps as u32))
        .saturating_mul(1u128 << steps.min(100));
    if states > MAX_STATES {
        return Err(ScmError::TooLarge { states, limit: MAX_STATES });
    }

    let no_history = BTreeSet::new();
    let prob = |u: &UserProfile, item: usize, prev: Option<bool>| {
        sim::decision_prob(u, params, catalog, item, prev, &no_history)
            .map_err(|e| ScmError::InvalidRecsys(e.to_string()))
    };

    let mut specs = vec![NodeSpec::new(P_NODE, users.len(), &[], vec![vec![1.0 / users.len() as f64; users.len()]])];
    for t in 1..=steps {
        specs.push(NodeSpec::new(s_node(t), n, &[P_NODE], exposure.to_vec()));
        let mut rows = Vec::new();
        for u in users {
            for item in 0..n {
                if t == 1 {
                    let q = prob(u, item, None)?;
                    rows.push(vec![1.0 - q, q]);
                } else {
                    for prev in [false, true] {
                        let q = prob(u, item, Some(prev))?;
                        rows.push(vec![1.0 - q, q]);
                    }
                }
            }
        }
        let s = s_node(t);
        let d_prev = d_node(t.saturating_sub(1));
        let parents: Vec<&str> = if t == 1 { vec![P_NODE, &s] } else { vec![P_NODE, &s, &d_prev] };
        specs.push(NodeSpec::new(d_node(t), 2, &parents, rows));
    }
    Scm::new(specs)
}

fn interventional(scm: &Scm, t: usize, s_values: &[usize], p_value: usize) -> Result<[f64; 2]> {
    let dos: Assignment = (1..=t).map(|k| (s_node(k), s_values[k - 1])).collect();
    let table = scm.query(&[&d_node(t)], &Assignment::new().with(P_NODE, p_value), &dos)?;
    Ok([table.probs[0], table.probs[1]])
}

/// Right-hand side of the identity at step `t`, built only from
/// observational conditionals `P(D_k | S_k, D_{k−1}, P)` on the unmutilated
/// model, recursing down to `P(D_1 | S_1, P)`.
pub fn theorem1_rhs(scm: &Scm, t: usize, s_values: &[usize], p_value: usize) -> Result<[f64; 2]> {
    assert!(t >= 1 && t <= s_values.len(), "step out of range");
    let d_t = d_node(t);
    if t == 1 {
        let given = Assignment::new().with(P_NODE, p_value).with(s_node(1), s_values[0]);
        let table = scm.query(&[&d_t], &given, &Assignment::new())?;
        return Ok([table.probs[0], table.probs[1]]);
    }
    let prev = theorem1_rhs(scm, t - 1, s_values, p_value)?;
    let mut out = [0.0; 2];
    for (d, weight) in prev.iter().enumerate() {
        let given = Assignment::new()
            .with(P_NODE, p_value)
            .with(s_node(t), s_values[t - 1])
            .with(d_node(t - 1), d);
        let cond = scm.query(&[&d_t], &given, &Assignment::new())?;
        out[0] += cond.probs[0] * weight;
        out[1] += cond.probs[1] * weight;
    }
    Ok(out)
}

/// `max_d |P(D_t=d | do(S_1..S_t), P) − RHS_d|`, the left side by direct
/// enumeration of the mutilated model.
pub fn verify_theorem1(scm: &Scm, t: usize, s_values: &[usize], p_value: usize) -> Result<f64> {
    let lhs = interventional(scm, t, s_values, p_value)?;
    let rhs = theorem1_rhs(scm, t, s_values, p_value)?;
    Ok((lhs[0] - rhs[0]).abs().max((lhs[1] - rhs[1]).abs()))
}
