//! Seeded property suites behind `csrec verify`. Each check compares an
//! implementation against an independent brute-force or closed-form oracle.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use super::Result;
use crate::metrics::{ahr_threshold, bce_metric, hr_at_k, ndcg_at_k, rank_of, topfrac_decision};
use crate::num::PROB_CLIP;
use crate::rng::derive_seed;
use crate::scm::{
    build_recsys_scm, check_docalc_rule, d_node, default_exposure, random_scm, s_node, verify_theorem1, Assignment,
    AssignmentGrid, NodeSpec, RandomScmSpec, Rule, Scm, P_NODE,
};
use crate::seqrec::{max_gradient_error, Objective, SeqModelParams};
use crate::sim::{
    decision_prob, exposure_distribution, generate_catalog, generate_users, interventional_marginals,
    interventional_prob_enumerated, simulate_interventional, Catalog, DecisionModelParams, Event, ExposurePolicy,
    Item, UserProfile,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Theorem1,
    Docalc,
    Gradcheck,
    Metrics,
    Simulator,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Theorem1, Suite::Docalc, Suite::Gradcheck, Suite::Metrics, Suite::Simulator];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Theorem1 => "theorem1",
            Suite::Docalc => "docalc",
            Suite::Gradcheck => "gradcheck",
            Suite::Metrics => "metrics",
            Suite::Simulator => "simulator",
        }
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| format!("unknown suite {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Below(f64),
    Above(f64),
    AtLeast(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, bound: Bound) -> Self {
        Self { name: name.into(), value, bound }
    }

    pub fn passed(&self) -> bool {
        match self.bound {
            Bound::Below(b) => self.value < b,
            Bound::Above(b) => self.value > b,
            Bound::AtLeast(b) => self.value >= b,
        }
    }

    pub fn line(&self) -> String {
        let (op, b) = match self.bound {
            Bound::Below(b) => ("<", b),
            Bound::Above(b) => (">", b),
            Bound::AtLeast(b) => (">=", b),
        };
        let status = if self.passed() { "PASS" } else { "FAIL" };
        format!("{status} {}: {:e} (need {op} {:e})", self.name, self.value, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "[{}] {}", self.suite.name(), c.line());
        }
        s
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport> {
    let checks = match suite {
        Suite::Theorem1 => theorem1_suite(seed, 100)?,
        Suite::Docalc => docalc_suite(seed)?,
        Suite::Gradcheck => gradcheck_suite(seed, 20)?,
        Suite::Metrics => metrics_suite(seed, 1000)?,
        Suite::Simulator => simulator_suite(seed)?,
    };
    Ok(SuiteReport { suite, checks })
}

fn case_rng(seed: u64, suite: u64, case: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(derive_seed(seed, 0x100 + suite, case))
}

/// A random small recommendation SCM with the Markov mechanism.
pub fn random_recsys_case<R: Rng>(rng: &mut R) -> Result<(Scm, usize, Vec<usize>, usize)> {
    let n_genres = rng.random_range(1..=3);
    let per_genre = rng.random_range(1..=5 / n_genres);
    let catalog = generate_catalog(n_genres, per_genre, rng.random())?;
    let users = generate_users(rng.random_range(1..=2), n_genres, rng.random())?;
    let params = DecisionModelParams {
        w_p: rng.random_range(-5.0..5.0),
        w_d: rng.random_range(-2.0..2.0),
        w_r: 0.0,
        b: rng.random_range(-3.0..3.0),
    };
    let exposure = default_exposure(&users, &catalog, rng.random_range(0.0..3.0))?;
    let steps = rng.random_range(1..=4);
    let scm = build_recsys_scm(steps, &params, &users, &catalog, &exposure)?;
    let s_values: Vec<usize> = (0..steps).map(|_| rng.random_range(0..catalog.len())).collect();
    Ok((scm, steps, s_values, rng.random_range(0..users.len())))
}

/// Max |interventional − recursion| over every step of `cases` random models.
pub fn theorem1_max_diff(seed: u64, cases: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let (scm, steps, s_values, p) = random_recsys_case(&mut case_rng(seed, 1, case))?;
        for t in 1..=steps {
            worst = worst.max(verify_theorem1(&scm, t, &s_values, p)?);
        }
    }
    Ok(worst)
}

fn theorem1_suite(seed: u64, cases: u64) -> Result<Vec<Check>> {
    Ok(vec![Check::new(format!("theorem1 max diff over {cases} models"), theorem1_max_diff(seed, cases)?, Bound::Below(1e-9))])
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocalcSweep {
    pub applicable: [usize; 3],
    pub max_diff: [f64; 3],
}

/// Random 5-node binary models with random role assignments, until each
/// rule has `target` applicable configurations (or the case budget ends).
pub fn docalc_sweep(seed: u64, target: usize) -> Result<DocalcSweep> {
    let mut out = DocalcSweep::default();
    let names: Vec<String> = (0..5).map(|i| format!("V{i}")).collect();
    for case in 0..5000 {
        if out.applicable.iter().all(|&c| c >= target) {
            break;
        }
        let mut rng = case_rng(seed, 2, case);
        let scm = random_scm(&mut rng, RandomScmSpec { nodes: 5, max_domain: 2, edge_prob: 0.4 })?;
        let roles: Vec<u8> = (0..5).map(|_| rng.random_range(0..5)).collect();
        let pick = |r: u8| names.iter().zip(&roles).filter(|(_, &x)| x == r).map(|(n, _)| n.as_str()).collect::<Vec<_>>();
        let (x, y, z, w) = (pick(1), pick(2), pick(3), pick(4));
        if y.is_empty() || z.is_empty() {
            continue;
        }
        let vars: Vec<&str> = x.iter().chain(&z).chain(&w).copied().collect();
        let grid = AssignmentGrid::full(&scm, &vars)?;
        for rule in Rule::ALL {
            let k = rule.number() as usize - 1;
            if out.applicable[k] >= target {
                continue;
            }
            let check = check_docalc_rule(&scm, rule, &x, &y, &z, &w, &grid)?;
            if check.applicable && check.points > 0 {
                out.applicable[k] += 1;
                out.max_diff[k] = out.max_diff[k].max(check.max_abs_diff);
            }
        }
    }
    Ok(out)
}

/// `U → Z`, `U → Y` with a shared binary cause: exchanging `do(Z)` for
/// observing `Z` is not licensed and the two distributions differ.
pub fn rule2_counterexample() -> Result<(bool, f64)> {
    let scm = Scm::new(vec![
        NodeSpec::new("U", 2, &[], vec![vec![0.5, 0.5]]),
        NodeSpec::new("Z", 2, &["U"], vec![vec![0.9, 0.1], vec![0.1, 0.9]]),
        NodeSpec::new("Y", 2, &["U"], vec![vec![0.9, 0.1], vec![0.1, 0.9]]),
    ])?;
    let grid = AssignmentGrid::full(&scm, &["Z"])?;
    let check = check_docalc_rule(&scm, Rule::ActionObservationExchange, &[], &["Y"], &["Z"], &[], &grid)?;
    Ok((check.applicable, check.max_abs_diff))
}

fn docalc_suite(seed: u64) -> Result<Vec<Check>> {
    let sweep = docalc_sweep(seed, 20)?;
    let mut checks = Vec::new();
    for rule in Rule::ALL {
        let k = rule.number() as usize - 1;
        checks.push(Check::new(format!("rule{} applicable configurations", k + 1), sweep.applicable[k] as f64, Bound::AtLeast(20.0)));
        checks.push(Check::new(format!("rule{} max diff", k + 1), sweep.max_diff[k], Bound::Below(1e-9)));
    }
    let (applicable, gap) = rule2_counterexample()?;
    checks.push(Check::new("rule2 counterexample flagged inapplicable", if applicable { 0.0 } else { 1.0 }, Bound::AtLeast(1.0)));
    checks.push(Check::new("rule2 counterexample gap", gap, Bound::Above(0.05)));
    Ok(checks)
}

pub const GRADCHECK_EPS: f64 = 1e-5;

fn random_tiny_model<R: Rng>(rng: &mut R) -> (SeqModelParams, Vec<Event>, Vec<[f64; 2]>) {
    let n_items = 7;
    let dim = 4;
    let max_len = rng.random_range(3..=6);
    let mut p = SeqModelParams::zeros(n_items, dim, max_len);
    for i in 0..p.num_params() {
        p.set_flat(i, rng.random_range(-0.6..0.6));
    }
    let len = rng.random_range(2..=9);
    let events = (0..len).map(|_| Event::new(rng.random_range(0..n_items), rng.random_bool(0.5))).collect();
    let branches = (0..len).map(|_| [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)]).collect();
    (p, events, branches)
}

/// Worst relative gradient error for BCE, and for the constrained loss
/// (λ = 1) with detached and live targets, over `models` random models.
pub fn gradcheck_errors(seed: u64, models: u64) -> Result<[f64; 3]> {
    let mut worst = [0.0f64; 3];
    for case in 0..models {
        let (p, events, branches) = random_tiny_model(&mut case_rng(seed, 3, case));
        let n = events.len() as f64;
        let objectives = [
            Objective::Bce { scale: 1.0 / n },
            Objective::Constrained { bce_scale: 1.0 / n, con_scale: 1.0 / (n - 1.0), detach_target: true, branches: &branches },
            Objective::Constrained { bce_scale: 1.0 / n, con_scale: 1.0 / (n - 1.0), detach_target: false, branches: &branches },
        ];
        for (k, obj) in objectives.iter().enumerate() {
            worst[k] = worst[k].max(max_gradient_error(&p, &events, obj, GRADCHECK_EPS)?);
        }
    }
    Ok(worst)
}

fn gradcheck_suite(seed: u64, models: u64) -> Result<Vec<Check>> {
    let [b, d, l] = gradcheck_errors(seed, models)?;
    Ok(vec![
        Check::new("bce gradient rel error", b, Bound::Below(1e-4)),
        Check::new("constrained gradient rel error (detached target)", d, Bound::Below(1e-4)),
        Check::new("constrained gradient rel error (live target)", l, Bound::Below(1e-4)),
    ])
}

fn oracle_rank(scores: &[f64], c: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.iter().position(|&i| i == c).expect("candidate in range") + 1
}

/// Number of random instances on which each metric disagrees with its
/// brute-force oracle: `[hr, ndcg, ahr_threshold, ahr_topfrac, bce]`.
/// BCE is compared to 1e−14 relative (summation order differs); the others
/// must match exactly.
pub fn metric_mismatches(seed: u64, instances: u64) -> Result<[usize; 5]> {
    let mut bad = [0usize; 5];
    for case in 0..instances {
        let mut rng = case_rng(seed, 4, case);
        let n = rng.random_range(1..40);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 * 0.25).collect();
        let c = rng.random_range(0..n);
        let k = rng.random_range(1..=n);
        let r = oracle_rank(&scores, c);
        let rank = rank_of(&scores, c)?;
        bad[0] += (rank != r || hr_at_k(rank, k) != if r <= k { 1.0 } else { 0.0 }) as usize;
        let nd = if r <= k { 1.0 / ((r as f64) + 1.0).log2() } else { 0.0 };
        bad[1] += (ndcg_at_k(rank, k) != nd) as usize;

        let alpha: f64 = rng.random_range(0.01..0.99);
        let m = rng.random_range(1..30);
        let z: Vec<f64> = (0..m).map(|_| rng.random_range(0..=20) as f64 / 20.0).collect();
        let d: Vec<bool> = (0..m).map(|_| rng.random_bool(0.5)).collect();
        let agree = (0..m).filter(|&i| (z[i] >= 1.0 - alpha) == d[i]).count();
        bad[2] += (ahr_threshold(&z, &d, alpha)? != agree as f64 / m as f64) as usize;

        let cutoff = (alpha * n as f64).ceil() as usize;
        bad[3] += (topfrac_decision(&scores, c, alpha)? != (r <= cutoff)) as usize;

        let mut total = 0.0;
        for i in 0..m {
            let p = z[i].clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            total += if d[i] { -p.ln() } else { -(1.0 - p).ln() };
        }
        let expect = total / m as f64;
        bad[4] += ((bce_metric(&z, &d)? - expect).abs() > 1e-14 * expect.max(1.0)) as usize;
    }
    Ok(bad)
}

fn metrics_suite(seed: u64, instances: u64) -> Result<Vec<Check>> {
    let bad = metric_mismatches(seed, instances)?;
    let names = ["hr_at_k", "ndcg_at_k", "ahr_threshold", "ahr_topfrac", "bce_metric"];
    Ok(names
        .iter()
        .zip(bad)
        .map(|(n, b)| Check::new(format!("{n} mismatches over {instances} instances"), b as f64, Bound::Below(0.5)))
        .collect())
}

fn one_item_catalog() -> Catalog {
    Catalog { n_genres: 1, items: vec![Item { id: 0, genre: 0, popularity: 1.0 }] }
}

fn simulator_suite(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let params = DecisionModelParams::default();

    // uniform exposure: chi-square statistic against its own scale
    let catalog = generate_catalog(4, 5, seed)?;
    let user = generate_users(1, 4, seed)?.remove(0);
    let draws = 100_000;
    let seq = simulate_interventional(&user, &params, &catalog, ExposurePolicy::Uniform, draws, seed)?;
    let mut counts = vec![0usize; catalog.len()];
    for e in &seq.events {
        counts[e.item] += 1;
    }
    let expected = draws as f64 / catalog.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let df = (catalog.len() - 1) as f64;
    checks.push(Check::new("uniform exposure chi-square z-score", (chi2 - df) / (2.0 * df).sqrt(), Bound::Below(5.0)));

    // first-step decision frequency vs the mechanism
    let single = one_item_catalog();
    let u1 = UserProfile { user_id: 0, prefs: vec![1.0], drift_rate: None };
    let p = decision_prob(&u1, &params, &single, 0, None, &BTreeSet::new())?;
    let n = 10_000;
    let mut accepted = 0usize;
    for s in 0..n {
        accepted += simulate_interventional(&u1, &params, &single, ExposurePolicy::Uniform, 1, derive_seed(seed, 0x1ff, s))?.events[0]
            .accepted as usize;
    }
    let sd = (p * (1.0 - p) / n as f64).sqrt();
    checks.push(Check::new("decision frequency deviation in sigmas", ((accepted as f64 / n as f64) - p).abs() / sd, Bound::Below(3.0)));

    // exposure proposal with kappa = 0 is popularity-proportional
    let q = exposure_distribution(ExposurePolicy::UserProposal { kappa: 0.0 }, &user.prefs, &catalog)?;
    let total: f64 = catalog.items.iter().map(|i| i.popularity).sum();
    let dev = q.iter().zip(&catalog.items).map(|(a, i)| (a - i.popularity / total).abs()).fold(0.0, f64::max);
    checks.push(Check::new("kappa=0 exposure vs popularity", dev, Bound::Below(1e-12)));

    // recursion vs enumeration, t = 10
    let markov = params.markov();
    let mut rng = case_rng(seed, 5, 0);
    let mut worst: f64 = 0.0;
    for user in &generate_users(5, 4, seed)? {
        let s: Vec<usize> = (0..10).map(|_| rng.random_range(0..catalog.len())).collect();
        let rec = interventional_marginals(user, &markov, &catalog, &s)?;
        let en = interventional_prob_enumerated(user, &markov, &catalog, &s)?;
        worst = worst.max((rec[9] - en).abs());
    }
    checks.push(Check::new("recursion vs enumeration (t=10)", worst, Bound::Below(1e-10)));

    // ground truth vs exact SCM query at t = 2
    let small = generate_catalog(2, 2, seed)?;
    let users = generate_users(2, 2, seed)?;
    let exposure = default_exposure(&users, &small, 3.0)?;
    let scm = build_recsys_scm(2, &markov, &users, &small, &exposure)?;
    let mut worst: f64 = 0.0;
    for (p_value, user) in users.iter().enumerate() {
        for a in 0..small.len() {
            for b in 0..small.len() {
                let dos: Assignment = [(s_node(1), a), (s_node(2), b)].into_iter().collect();
                let table = scm.query(&[&d_node(2)], &Assignment::new().with(P_NODE, p_value), &dos)?;
                let truth = interventional_marginals(user, &markov, &small, &[a, b])?[1];
                worst = worst.max((table.probs[1] - truth).abs());
            }
        }
    }
    checks.push(Check::new("ground truth vs SCM query (t=2)", worst, Bound::Below(1e-10)));
    Ok(checks)
}
