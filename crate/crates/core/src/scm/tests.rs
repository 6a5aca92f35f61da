use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

use super::*;
use crate::sim::{self, DecisionModelParams, UserProfile};

fn chain(pa: f64, pb_given_a1: f64, pb_given_a0: f64) -> Scm {
    Scm::new(vec![
        NodeSpec::new("A", 2, &[], vec![vec![1.0 - pa, pa]]),
        NodeSpec::new("B", 2, &["A"], vec![vec![1.0 - pb_given_a0, pb_given_a0], vec![1.0 - pb_given_a1, pb_given_a1]]),
    ])
    .unwrap()
}

fn all_assignments(scm: &Scm) -> Vec<Assignment> {
    let names: Vec<String> = scm.node_names().map(str::to_string).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    AssignmentGrid::full(scm, &refs).unwrap().0
}

#[test]
fn validate_chain_returns_topological_order() {
    let specs = chain(0.3, 0.9, 0.2).to_specs();
    assert_eq!(validate_scm(&specs).unwrap(), vec!["A", "B"]);
    // declaration order does not matter
    let reversed: Vec<NodeSpec> = specs.into_iter().rev().collect();
    assert_eq!(validate_scm(&reversed).unwrap(), vec!["A", "B"]);
}

#[test]
fn validate_rejects_two_cycle() {
    let specs = vec![
        NodeSpec::new("A", 2, &["B"], vec![vec![0.5, 0.5]; 2]),
        NodeSpec::new("B", 2, &["A"], vec![vec![0.5, 0.5]; 2]),
    ];
    match validate_scm(&specs) {
        Err(ScmError::CycleDetected { from, to }) => {
            assert!((from == "A" && to == "B") || (from == "B" && to == "A"));
        }
        other => panic!("expected cycle, got {other:?}"),
    }
}

#[test]
fn validate_rejects_unnormalized_row() {
    let specs = vec![NodeSpec::new("A", 2, &[], vec![vec![0.5, 0.6]])];
    match validate_scm(&specs) {
        Err(ScmError::BadCpt { node, row, sum }) => {
            assert_eq!((node.as_str(), row), ("A", 0));
            assert!((sum - 1.1).abs() < 1e-12);
        }
        other => panic!("expected BadCpt, got {other:?}"),
    }
}

#[test]
fn validate_rejects_wrong_row_count_and_unknown_parent() {
    let specs = vec![
        NodeSpec::new("A", 2, &[], vec![vec![0.5, 0.5]]),
        NodeSpec::new("B", 2, &["A"], vec![vec![0.5, 0.5]]),
    ];
    assert!(matches!(validate_scm(&specs), Err(ScmError::CptShape { .. })));
    let specs = vec![NodeSpec::new("B", 2, &["Q"], vec![vec![0.5, 0.5]; 2])];
    assert_eq!(validate_scm(&specs), Err(ScmError::UnknownNode("Q".into())));
}

#[test]
fn joint_probability_two_factor_product() {
    let scm = chain(0.3, 0.9, 0.2);
    let p = scm.joint_probability(&Assignment::new().with("A", 1).with("B", 1)).unwrap();
    assert!((p - 0.27).abs() < 1e-15);
    assert_eq!(
        scm.joint_probability(&Assignment::new().with("A", 1)),
        Err(ScmError::IncompleteAssignment("B".into()))
    );
}

#[test]
fn deterministic_row_contributes_identity_factor() {
    let scm = chain(0.3, 1.0, 0.0);
    let p = scm.joint_probability(&Assignment::new().with("A", 1).with("B", 1)).unwrap();
    assert_eq!(p, 0.3);
}

#[test]
fn joint_sums_to_one_on_random_four_node_model() {
    let mut rng = SplitMix64::seed_from_u64(4);
    let scm = random_scm(&mut rng, RandomScmSpec { nodes: 4, max_domain: 3, edge_prob: 0.6 }).unwrap();
    let total: f64 = all_assignments(&scm).iter().map(|a| scm.joint_probability(a).unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12, "{total}");
}

#[test]
fn query_root_marginal_and_exogenous_intervention() {
    let scm = chain(0.3, 0.9, 0.2);
    let marginal = scm.query(&["A"], &Assignment::new(), &Assignment::new()).unwrap();
    assert_eq!(marginal.probs, vec![0.7, 0.3]);

    let by_do = scm.query(&["B"], &Assignment::new(), &Assignment::new().with("A", 1)).unwrap();
    let by_obs = scm.query(&["B"], &Assignment::new().with("A", 1), &Assignment::new()).unwrap();
    assert!(by_do.max_abs_diff(&by_obs) < 1e-12);
    assert!((by_do.get(&[1]) - 0.9).abs() < 1e-12);
}

#[test]
fn intervention_cuts_incoming_edges() {
    // observing B is informative about A; forcing B is not
    let scm = chain(0.3, 0.9, 0.2);
    let obs = scm.query(&["A"], &Assignment::new().with("B", 1), &Assignment::new()).unwrap();
    let intv = scm.query(&["A"], &Assignment::new(), &Assignment::new().with("B", 1)).unwrap();
    let expected = 0.27 / (0.27 + 0.7 * 0.2);
    assert!((obs.get(&[1]) - expected).abs() < 1e-12);
    assert!((intv.get(&[1]) - 0.3).abs() < 1e-12);
}

#[test]
fn query_errors() {
    let scm = chain(0.3, 1.0, 0.0);
    assert_eq!(
        scm.query(&["A"], &Assignment::new().with("A", 1), &Assignment::new()),
        Err(ScmError::DisjointnessViolation("A".into()))
    );
    // B=1 is impossible when A=0
    let zero = scm.query(&[], &Assignment::new().with("B", 1), &Assignment::new().with("A", 0));
    assert_eq!(zero, Err(ScmError::ZeroProbabilityEvidence));
    assert!(matches!(
        scm.query(&["A"], &Assignment::new().with("B", 7), &Assignment::new()),
        Err(ScmError::ValueOutOfRange { .. })
    ));
    assert!(matches!(scm.query(&["Z"], &Assignment::new(), &Assignment::new()), Err(ScmError::UnknownNode(_))));
}

#[test]
fn query_refuses_oversized_enumeration() {
    let mut specs = Vec::new();
    for i in 0..24 {
        specs.push(NodeSpec::new(format!("X{i}"), 2, &[], vec![vec![0.5, 0.5]]));
    }
    let scm = Scm::new(specs).unwrap();
    let names: Vec<String> = (0..24).map(|i| format!("X{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    assert!(matches!(
        scm.query(&refs, &Assignment::new(), &Assignment::new()),
        Err(ScmError::TooLarge { .. })
    ));
}

#[test]
fn d_separation_textbook_cases_by_name() {
    let collider = Scm::new(vec![
        NodeSpec::new("A", 2, &[], vec![vec![0.5, 0.5]]),
        NodeSpec::new("B", 2, &[], vec![vec![0.5, 0.5]]),
        NodeSpec::new("C", 2, &["A", "B"], vec![vec![0.5, 0.5]; 4]),
    ])
    .unwrap();
    let plain: Mutilation<&str> = Mutilation::Plain;
    assert!(collider.d_separated(&["A"], &["B"], &[], &plain).unwrap());
    assert!(!collider.d_separated(&["A"], &["B"], &["C"], &plain).unwrap());
    let chain = Scm::new(vec![
        NodeSpec::new("A", 2, &[], vec![vec![0.5, 0.5]]),
        NodeSpec::new("B", 2, &["A"], vec![vec![0.5, 0.5]; 2]),
        NodeSpec::new("C", 2, &["B"], vec![vec![0.5, 0.5]; 2]),
    ])
    .unwrap();
    assert!(chain.d_separated(&["A"], &["C"], &["B"], &plain).unwrap());
    assert!(chain
        .d_separated(&["A"], &["C"], &[], &Mutilation::RemoveIncoming { x: vec!["B"] })
        .unwrap());
    assert!(matches!(chain.d_separated(&["Q"], &["C"], &[], &plain), Err(ScmError::UnknownNode(_))));
}

fn root_child(p_z: f64, p_y: [f64; 2]) -> Scm {
    Scm::new(vec![
        NodeSpec::new("Z", 2, &[], vec![vec![1.0 - p_z, p_z]]),
        NodeSpec::new("Y", 2, &["Z"], vec![vec![1.0 - p_y[0], p_y[0]], vec![1.0 - p_y[1], p_y[1]]]),
    ])
    .unwrap()
}

#[test]
fn rule2_on_root_cause_is_applicable_and_exact() {
    let scm = root_child(0.35, [0.2, 0.7]);
    let grid = AssignmentGrid::full(&scm, &["Z"]).unwrap();
    let check = check_docalc_rule(&scm, Rule::ActionObservationExchange, &[], &["Y"], &["Z"], &[], &grid).unwrap();
    assert!(check.applicable);
    assert_eq!(check.points, 2);
    assert!(check.max_abs_diff < 1e-9);
}

#[test]
fn rule1_with_disconnected_observation() {
    let scm = Scm::new(vec![
        NodeSpec::new("Y", 2, &[], vec![vec![0.4, 0.6]]),
        NodeSpec::new("Z", 3, &[], vec![vec![0.2, 0.3, 0.5]]),
    ])
    .unwrap();
    let grid = AssignmentGrid::full(&scm, &["Z"]).unwrap();
    let check = check_docalc_rule(&scm, Rule::InsertDeleteObservation, &[], &["Y"], &["Z"], &[], &grid).unwrap();
    assert!(check.applicable);
    assert!(check.max_abs_diff < 1e-9);
}

fn confounded(p_z: [f64; 2], p_y: [f64; 2]) -> Scm {
    Scm::new(vec![
        NodeSpec::new("U", 2, &[], vec![vec![0.5, 0.5]]),
        NodeSpec::new("Z", 2, &["U"], vec![vec![1.0 - p_z[0], p_z[0]], vec![1.0 - p_z[1], p_z[1]]]),
        NodeSpec::new("Y", 2, &["U"], vec![vec![1.0 - p_y[0], p_y[0]], vec![1.0 - p_y[1], p_y[1]]]),
    ])
    .unwrap()
}

#[test]
fn rule2_counterexample_under_confounding() {
    // brute-force search for CPTs with a visible gap
    let levels = [0.1, 0.3, 0.5, 0.7, 0.9];
    let mut found = None;
    'search: for &a in &levels {
        for &b in &levels {
            for &c in &levels {
                for &d in &levels {
                    let scm = confounded([a, b], [c, d]);
                    let grid = AssignmentGrid::full(&scm, &["Z"]).unwrap();
                    let check =
                        check_docalc_rule(&scm, Rule::ActionObservationExchange, &[], &["Y"], &["Z"], &[], &grid)
                            .unwrap();
                    assert!(!check.applicable);
                    if check.max_abs_diff > 0.05 {
                        found = Some(check.max_abs_diff);
                        break 'search;
                    }
                }
            }
        }
    }
    assert!(found.expect("some CPT exhibits a gap") > 0.05);
}

#[test]
fn rules_hold_whenever_applicable_on_random_models() {
    let mut rng = SplitMix64::seed_from_u64(99);
    let mut applicable = [0usize; 3];
    for _ in 0..400 {
        let scm = random_scm(&mut rng, RandomScmSpec { nodes: 5, max_domain: 2, edge_prob: 0.4 }).unwrap();
        let roles: Vec<u8> = (0..5).map(|_| rand::Rng::random_range(&mut rng, 0..5)).collect();
        let names: Vec<String> = (0..5).map(|i| format!("V{i}")).collect();
        let pick = |r: u8| names.iter().zip(&roles).filter(|(_, &x)| x == r).map(|(n, _)| n.as_str()).collect::<Vec<_>>();
        let (x, y, z, w) = (pick(1), pick(2), pick(3), pick(4));
        if y.is_empty() || z.is_empty() {
            continue;
        }
        let vars: Vec<&str> = x.iter().chain(&z).chain(&w).copied().collect();
        let grid = AssignmentGrid::full(&scm, &vars).unwrap();
        for rule in Rule::ALL {
            let check = check_docalc_rule(&scm, rule, &x, &y, &z, &w, &grid).unwrap();
            if check.applicable {
                applicable[rule as usize - 1] += 1;
                assert!(check.max_abs_diff < 1e-9, "{rule:?} {x:?} {y:?} {z:?} {w:?}: {}", check.max_abs_diff);
            }
        }
    }
    assert!(applicable.iter().all(|&c| c >= 10), "{applicable:?}");
}

fn tiny_world(n_genres: usize, items_per_genre: usize, n_users: usize, seed: u64) -> (sim::Catalog, Vec<UserProfile>) {
    (
        sim::generate_catalog(n_genres, items_per_genre, seed).unwrap(),
        sim::generate_users(n_users, n_genres, seed).unwrap(),
    )
}

#[test]
fn recsys_graph_shape() {
    let (catalog, users) = tiny_world(2, 2, 1, 3);
    let params = DecisionModelParams::default().markov();
    let exposure = default_exposure(&users, &catalog, 3.0).unwrap();
    let one = build_recsys_scm(1, &params, &users, &catalog, &exposure).unwrap();
    let mut names: Vec<&str> = one.node_names().collect();
    names.sort_unstable();
    assert_eq!(names, vec!["D1", "P", "S1"]);
    assert_eq!(one.parents("D1").unwrap(), vec!["P", "S1"]);

    let three = build_recsys_scm(3, &params, &users, &catalog, &exposure).unwrap();
    assert_eq!(three.parents("D3").unwrap(), vec!["P", "S3", "D2"]);
    assert_eq!(three.parents("S2").unwrap(), vec!["P"]);
    assert!(three.children_free_of_decisions());
}

impl Scm {
    /// No decision node feeds an exposure node.
    fn children_free_of_decisions(&self) -> bool {
        self.node_names()
            .filter(|n| n.starts_with('S'))
            .all(|s| self.parents(s).unwrap().iter().all(|p| !p.starts_with('D')))
    }
}

#[test]
fn recsys_rejects_repeat_term_and_huge_models() {
    let (catalog, users) = tiny_world(2, 2, 1, 3);
    let exposure = default_exposure(&users, &catalog, 3.0).unwrap();
    let params = DecisionModelParams::default();
    assert_eq!(
        build_recsys_scm(2, &params, &users, &catalog, &exposure).unwrap_err(),
        ScmError::NonMarkovConfig(-3.0)
    );
    let (big, users) = tiny_world(5, 20, 1, 3);
    let exposure = default_exposure(&users, &big, 3.0).unwrap();
    assert!(matches!(
        build_recsys_scm(5, &params.markov(), &users, &big, &exposure),
        Err(ScmError::TooLarge { .. })
    ));
}

#[test]
fn recsys_two_step_query_matches_hand_enumeration() {
    let (catalog, users) = tiny_world(2, 2, 2, 8);
    let params = DecisionModelParams::default().markov();
    let exposure = default_exposure(&users, &catalog, 3.0).unwrap();
    let scm = build_recsys_scm(2, &params, &users, &catalog, &exposure).unwrap();
    let none = BTreeSet::new();
    for p in 0..users.len() {
        for s1 in 0..catalog.len() {
            for s2 in 0..catalog.len() {
                let u = &users[p];
                let q1 = sim::decision_prob(u, &params, &catalog, s1, None, &none).unwrap();
                let q2a = sim::decision_prob(u, &params, &catalog, s2, Some(true), &none).unwrap();
                let q2r = sim::decision_prob(u, &params, &catalog, s2, Some(false), &none).unwrap();
                let hand = q1 * q2a + (1.0 - q1) * q2r;
                let dos = Assignment::new().with("S1", s1).with("S2", s2);
                let table = scm.query(&["D2"], &Assignment::new().with("P", p), &dos).unwrap();
                assert!((table.get(&[1]) - hand).abs() < 1e-12);
                let truth = sim::ground_truth_interventional_prob(u, &params, &catalog, &[s1, s2]).unwrap();
                assert!((table.get(&[1]) - truth).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn theorem1_base_case_and_two_steps() {
    let (catalog, users) = tiny_world(3, 1, 2, 21);
    let params = DecisionModelParams { w_p: 2.5, w_d: 1.3, w_r: 0.0, b: -0.4 };
    let exposure = default_exposure(&users, &catalog, 2.0).unwrap();
    let scm = build_recsys_scm(2, &params, &users, &catalog, &exposure).unwrap();
    for p in 0..2 {
        for s1 in 0..3 {
            assert!(verify_theorem1(&scm, 1, &[s1], p).unwrap() < 1e-12);
            for s2 in 0..3 {
                assert!(verify_theorem1(&scm, 2, &[s1, s2], p).unwrap() < 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn joint_normalizes(seed in any::<u64>(), nodes in 1usize..6, edge_prob in 0.0f64..1.0) {
        let mut rng = SplitMix64::seed_from_u64(seed);
        let scm = random_scm(&mut rng, RandomScmSpec { nodes, max_domain: 3, edge_prob }).unwrap();
        let total: f64 = all_assignments(&scm).iter().map(|a| scm.joint_probability(a).unwrap()).sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn do_on_root_equals_conditioning(seed in any::<u64>(), nodes in 2usize..6, value in 0usize..2) {
        let mut rng = SplitMix64::seed_from_u64(seed);
        let scm = random_scm(&mut rng, RandomScmSpec { nodes, max_domain: 3, edge_prob: 0.5 }).unwrap();
        // V0 is always a root
        let target = format!("V{}", nodes - 1);
        let a = Assignment::new().with("V0", value);
        let by_do = scm.query(&[&target], &Assignment::new(), &a).unwrap();
        let by_obs = scm.query(&[&target], &a, &Assignment::new()).unwrap();
        prop_assert!(by_do.max_abs_diff(&by_obs) < 1e-12);
        prop_assert!((by_do.probs.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
}
