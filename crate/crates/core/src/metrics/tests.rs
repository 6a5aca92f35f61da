use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use super::*;
use crate::num::PROB_CLIP;

fn ev(item: usize, accepted: bool) -> Event {
    Event { item, accepted }
}

#[test]
fn hr_and_ndcg_examples() {
    assert_eq!(hr_at_k(3, 5), 1.0);
    assert_eq!(hr_at_k(7, 5), 0.0);
    assert_eq!(hr_at_k(1, 1), 1.0);
    assert_eq!(ndcg_at_k(1, 5), 1.0);
    assert_eq!(ndcg_at_k(3, 5), 0.5);
    assert_eq!(ndcg_at_k(6, 5), 0.0);
}

#[test]
fn threshold_examples() {
    assert_eq!(ahr_threshold(&[0.9, 0.1], &[true, false], 0.2).unwrap(), 1.0);
    assert_eq!(ahr_threshold(&[0.79], &[true], 0.2).unwrap(), 0.0);
    assert_eq!(ahr_threshold(&[0.5, 0.5], &[true, true], 0.5).unwrap(), 1.0);
    assert_eq!(ahr_threshold(&[0.5], &[true, true], 0.5), Err(MetricError::LengthMismatch(1, 2)));
    assert_eq!(ahr_threshold(&[], &[], 0.5), Err(MetricError::EmptyInput));
    assert_eq!(ahr_threshold(&[0.5], &[true], 1.0), Err(MetricError::BadAlpha(1.0)));
}

#[test]
fn topfrac_examples() {
    // candidate 4 ranked second of ten
    let mut scores = vec![0.0; 10];
    scores[7] = 2.0;
    scores[4] = 1.0;
    assert!(topfrac_decision(&scores, 4, 0.2).unwrap());
    scores[1] = 1.5;
    assert!(!topfrac_decision(&scores, 4, 0.2).unwrap());
    assert_eq!(topfrac_decision(&scores, 10, 0.2), Err(MetricError::UnknownItem(10)));
    // ties: lower id wins
    assert_eq!(rank_of(&[1.0, 1.0, 1.0], 2).unwrap(), 3);
    assert_eq!(rank_of(&[1.0, 1.0, 1.0], 0).unwrap(), 1);
}

#[test]
fn bce_examples() {
    let v = bce_metric(&[1.0, 0.0], &[true, false]).unwrap();
    assert!((v - -(1.0f64 - PROB_CLIP).ln()).abs() < 1e-20);
    assert!(v > 0.0 && v < 1.1e-7);
    assert!((bce_metric(&[0.5], &[true]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(bce_metric(&[0.5], &[]), Err(MetricError::LengthMismatch(1, 0)));
}

fn oracle_rank(scores: &[f64], c: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order.iter().position(|&i| i == c).unwrap() + 1
}

#[test]
fn metrics_agree_with_brute_force_oracles() {
    let mut rng = SplitMix64::seed_from_u64(17);
    for _ in 0..1000 {
        let n = rng.random_range(1..40);
        // coarse grid so ties occur
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 * 0.25).collect();
        let c = rng.random_range(0..n);
        let k = rng.random_range(1..=n);
        let r = oracle_rank(&scores, c);
        assert_eq!(rank_of(&scores, c).unwrap(), r);
        assert_eq!(hr_at_k(r, k), if r <= k { 1.0 } else { 0.0 });
        let nd = if r <= k { 1.0 / ((r as f64) + 1.0).log2() } else { 0.0 };
        assert_eq!(ndcg_at_k(r, k), nd);
        let alpha = rng.random_range(0.01..0.99);
        let cutoff = ((alpha * n as f64).ceil()) as usize;
        assert_eq!(topfrac_decision(&scores, c, alpha).unwrap(), r <= cutoff);

        let m = rng.random_range(1..30);
        let z: Vec<f64> = (0..m).map(|_| rng.random_range(0..=20) as f64 / 20.0).collect();
        let d: Vec<bool> = (0..m).map(|_| rng.random_bool(0.5)).collect();
        let mut agree = 0usize;
        for i in 0..m {
            let pred = if z[i] >= 1.0 - alpha { 1 } else { 0 };
            if pred == d[i] as i32 {
                agree += 1;
            }
        }
        assert_eq!(ahr_threshold(&z, &d, alpha).unwrap(), agree as f64 / m as f64);
        let mut total = 0.0;
        for i in 0..m {
            let p = z[i].max(PROB_CLIP).min(1.0 - PROB_CLIP);
            total += if d[i] { -p.ln() } else { -(1.0 - p).ln() };
        }
        let expect = total / m as f64;
        let got = bce_metric(&z, &d).unwrap();
        assert!((got - expect).abs() <= 1e-14 * expect.abs().max(1.0), "{got} vs {expect}");

        let sets: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.random_range(0..5) as f64).collect()).collect();
        let cands: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
        let (pred, ahr) = ahr_topfrac(&sets, &cands, &d, alpha).unwrap();
        let mut hits = 0;
        for i in 0..m {
            let p = oracle_rank(&sets[i], cands[i]) <= cutoff;
            assert_eq!(pred[i], p);
            hits += (p == d[i]) as usize;
        }
        assert_eq!(ahr, hits as f64 / m as f64);
    }
}

#[test]
fn delta_and_chi_exhaustive() {
    for alpha in [0.2, 0.5] {
        for zi in 0..=10 {
            let z = zi as f64 / 10.0;
            for d in [false, true] {
                let chi = z >= 1.0 - alpha;
                let want = if chi == d { 1.0 } else { 0.0 };
                assert_eq!(ahr_threshold(&[z], &[d], alpha).unwrap(), want);
            }
        }
    }
}

proptest! {
    #[test]
    fn rank_metrics_monotone(rank in 1usize..50, k in 1usize..50) {
        prop_assert!(hr_at_k(rank + 1, k) <= hr_at_k(rank, k));
        prop_assert!(ndcg_at_k(rank + 1, k) <= ndcg_at_k(rank, k));
        prop_assert!(hr_at_k(rank, k + 1) >= hr_at_k(rank, k));
        prop_assert!(ndcg_at_k(rank, k + 1) >= ndcg_at_k(rank, k));
    }

    #[test]
    fn decision_metrics_permutation_invariant(
        pairs in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..40),
        alpha in 0.01f64..0.99,
        rot in 0usize..40,
    ) {
        let z: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let d: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let mut zr = z.clone();
        let mut dr = d.clone();
        zr.reverse();
        dr.reverse();
        let r = rot % z.len();
        zr.rotate_left(r);
        dr.rotate_left(r);
        let a = ahr_threshold(&z, &d, alpha).unwrap();
        prop_assert_eq!(a, ahr_threshold(&zr, &dr, alpha).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
        let b1 = bce_metric(&z, &d).unwrap();
        let b2 = bce_metric(&zr, &dr).unwrap();
        prop_assert!((b1 - b2).abs() <= 1e-12 * b1.max(1.0));
    }
}

fn toy_model(n_items: usize, seed: u64) -> SeqModelParams {
    let mut p = SeqModelParams::init(n_items, 4, 50, seed);
    for (i, x) in p.out_bias.iter_mut().enumerate() {
        *x = ((i * 7 + seed as usize) % 5) as f64 * 0.6 - 1.2;
    }
    for x in p.item_emb.iter_mut() {
        *x *= 20.0;
    }
    p
}

fn toy_sequences() -> Vec<Vec<Event>> {
    (0..6).map(|u| (0..7).map(|k| ev((u * 3 + k * 5) % 9, (u + 2 * k) % 3 != 0)).collect()).collect()
}

#[test]
fn multi_step_equals_flat_threshold() {
    let model = CsrecModel { params: toy_model(9, 1) };
    let seqs = toy_sequences();
    let users: Vec<UserSequence> = seqs.iter().enumerate().map(|(u, s)| UserSequence { user_id: u as u64, events: s }).collect();
    let report = multi_step_eval(Scorer::Csrec(&model), &users, 3, &[0.2, 0.5], HistoryMode::TeacherForcing).unwrap();
    let mut z = Vec::new();
    let mut d = Vec::new();
    for s in &seqs {
        let f = predict_sequence(&model, s).unwrap();
        z.extend_from_slice(&f[4..]);
        d.extend(s[4..].iter().map(|e| e.accepted));
    }
    assert_eq!(report.get("AHR@0.2").unwrap(), ahr_threshold(&z, &d, 0.2).unwrap());
    assert_eq!(report.get("AHR@0.5").unwrap(), ahr_threshold(&z, &d, 0.5).unwrap());
    assert_eq!(report.get("BCE").unwrap(), bce_metric(&z, &d).unwrap());

    let one = multi_step_eval(Scorer::Csrec(&model), &users, 1, &[0.2], HistoryMode::TeacherForcing).unwrap();
    let last_z: Vec<f64> = seqs.iter().map(|s| *predict_sequence(&model, s).unwrap().last().unwrap()).collect();
    let last_d: Vec<bool> = seqs.iter().map(|s| s.last().unwrap().accepted).collect();
    assert_eq!(one.get("AHR@0.2").unwrap(), ahr_threshold(&last_z, &last_d, 0.2).unwrap());

    let err = multi_step_eval(Scorer::Csrec(&model), &users, 8, &[0.2], HistoryMode::TeacherForcing).unwrap_err();
    assert_eq!(err, MetricError::SequenceTooShort { user: 0, len: 7, need: 8 });
}

#[test]
fn baseline_uses_positive_history_and_topfrac() {
    let params = toy_model(9, 2);
    let seqs = toy_sequences();
    let users: Vec<UserSequence> = seqs.iter().enumerate().map(|(u, s)| UserSequence { user_id: u as u64, events: s }).collect();
    let report = multi_step_eval(Scorer::Baseline(&params), &users, 2, &[0.2], HistoryMode::TeacherForcing).unwrap();
    let mut hits = 0;
    let mut n = 0;
    for s in &seqs {
        for t in s.len() - 2..s.len() {
            let hist: Vec<Event> = s[..t].iter().filter(|e| e.accepted).copied().collect();
            let h = seqrec::encode(&params, &hist).unwrap();
            let scores = seqrec::catalog_scores(&params, &h);
            let pred = oracle_rank(&scores, s[t].item) <= 2;
            hits += (pred == s[t].accepted) as usize;
            n += 1;
        }
    }
    assert_eq!(report.get("AHR@0.2").unwrap(), hits as f64 / n as f64);
    assert!(report.get("BCE@0.2").is_some() && report.get("BCE_sigmoid").is_some());
    let rolled = multi_step_eval(Scorer::Baseline(&params), &users, 2, &[0.2], HistoryMode::SelfRollout).unwrap();
    assert_eq!(rolled.meta["history"], "self_rollout");
}

#[test]
fn observational_ranks_follow_role_conventions() {
    let model = CsrecModel { params: SeqModelParams::zeros(9, 4, 50) };
    let seqs = toy_sequences();
    let users: Vec<UserSequence> = seqs.iter().enumerate().map(|(u, s)| UserSequence { user_id: u as u64, events: s }).collect();
    // zero model: ranking is id order, so rank = target id + 1
    let ranks = observational_ranks(Scorer::Csrec(&model), &users).unwrap();
    let expect: Vec<usize> = seqs.iter().map(|s| s[observational_target(s).unwrap()].item + 1).collect();
    assert_eq!(ranks, expect);
    let report = ranking_report(&ranks, &[5, 10, 20]).unwrap();
    let names: Vec<&str> = report.metrics.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["HR@5", "HR@10", "HR@20", "NDCG@5", "NDCG@10", "NDCG@20"]);
    assert_eq!(report.get("HR@20"), Some(1.0));
}

#[test]
fn ter_of_identical_zero_models_is_zero() {
    let p = SeqModelParams::zeros(5, 3, 50);
    let model = CsrecModel { params: p.clone() };
    let rows = ter_estimate(&model, &p, &[0, 1, 2, 3, 4], &[ev(0, false)], &[ev(2, true), ev(3, true)]).unwrap();
    assert!(rows.iter().all(|r| r.ter == 0.0 && r.f_intv == 0.5));
    let model = CsrecModel { params: toy_model(5, 3) };
    let rows = ter_estimate(&model, &p, &[0, 1, 2, 3, 4], &[ev(0, false)], &[]).unwrap();
    assert!(rows.iter().all(|r| r.ter > -1.0 && r.ter < 1.0 && r.ter == r.f_intv - r.f_obs));
    assert!(matches!(ter_estimate(&model, &p, &[5], &[], &[]), Err(MetricError::Model(SeqError::UnknownItem(5)))));
}

#[test]
fn report_csv_round_trips() {
    let mut r = EvalReport::default();
    r.push("AHR@0.2", 0.1 + 0.2);
    r.push("BCE", 1.0 / 3.0);
    let csv = r.to_csv();
    let back = EvalReport::from_csv(&csv).unwrap();
    assert_eq!(back.metrics, r.metrics);
    assert_eq!(back.to_csv(), csv);
    assert!(r.to_markdown().contains("| AHR@0.2 | 0.3000 |"));
}
