mod oracle;

use std::time::Instant;

use embryocap::labels::{EccLabel, MorphokineticVariable as Mv};
use embryocap::metric::{
    aggregate_by_variable, aggregate_model, agreement, composite, ComponentScores, MetricError, MetricWeights,
    ScoreRecord,
};
use num_rational::Ratio;
use proptest::prelude::*;

fn cs(t: (i64, i64, i64, i64)) -> ComponentScores {
    ComponentScores::new(t.0, t.1, t.2, t.3).unwrap()
}

#[test]
fn all_tuples_match_brute_force_and_exact_fraction() {
    let started = Instant::now();
    let w = MetricWeights::default();
    let tuples = oracle::all_tuples();
    assert_eq!(tuples.len(), 200);
    for t in tuples {
        let got = composite(&cs(t), &w);
        let want = oracle::brute_composite(t.0, t.1, t.2, t.3, 4.0, 2.0, 1.0);
        assert!((got.value() - want).abs() <= 1e-12, "{t:?}: {} vs {want}", got.value());
        let (num, den) = oracle::default_composite_fraction(t.0, t.1, t.2, t.3);
        assert_eq!(got.exact(), Ratio::new(num, den), "{t:?}");
        assert_eq!(got.pd_applicable(), t.3 >= 0);
    }
    assert!(started.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn gate_bounds_and_monotonicity() {
    let w = MetricWeights::default();
    let value = |t| composite(&cs(t), &w).exact();
    for t in oracle::all_tuples() {
        let v = value(t);
        assert!(v >= Ratio::from_integer(0) && v <= Ratio::from_integer(1), "{t:?}");
        if t.0 == 0 {
            assert_eq!(v, Ratio::from_integer(0));
        }
        let (er, ecc, md, pd) = t;
        let steps = [
            (er < 1).then_some((er + 1, ecc, md, pd)),
            (ecc < 3).then_some((er, ecc + 1, md, pd)),
            (md < 4).then_some((er, ecc, md + 1, pd)),
            // pd = -1 to 0 switches formula, so only steps within 0..=3 compare.
            (0..3).contains(&pd).then_some((er, ecc, md, pd + 1)),
        ];
        for up in steps.into_iter().flatten() {
            assert!(value(up) >= v, "{t:?} -> {up:?}");
        }
    }
}

#[test]
fn anchors() {
    let w = MetricWeights::default();
    assert_eq!(composite(&cs((1, 2, 2, 1)), &w).exact(), Ratio::new(4, 7));
    assert_eq!(composite(&cs((1, 1, 1, -1)), &w).exact(), Ratio::new(11, 36));
    assert_eq!(composite(&cs((1, 3, 4, 3)), &w).exact(), Ratio::from_integer(1));
    assert_eq!(composite(&cs((1, 3, 4, -1)), &w).exact(), Ratio::from_integer(1));
    assert_eq!(composite(&cs((0, 3, 4, 3)), &w).exact(), Ratio::from_integer(0));
}

fn tuple() -> impl Strategy<Value = (i64, i64, i64, i64)> {
    (0i64..=1, 0i64..=3, 0i64..=4, -1i64..=3)
}

fn record(i: usize, model: &str, rater: &str, t: (i64, i64, i64, i64)) -> ScoreRecord {
    ScoreRecord::new(
        format!("f{i}"),
        model,
        rater,
        EccLabel::Ecc2,
        Mv::ALL[i % Mv::ALL.len()],
        cs(t),
        &MetricWeights::default(),
    )
}

proptest! {
    #[test]
    fn weighted_composite_matches_oracle(t in tuple(), a in 1i64..20, b in 1i64..20, g in 1i64..20) {
        let w = MetricWeights::from_integers(a, b, g).unwrap();
        let got = composite(&cs(t), &w).value();
        let want = oracle::brute_composite(t.0, t.1, t.2, t.3, a as f64, b as f64, g as f64);
        prop_assert!((got - want).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn out_of_range_components_are_rejected(er in -3i64..5, ecc in -3i64..7, md in -3i64..8, pd in -4i64..7) {
        let valid = (0..=1).contains(&er) && (0..=3).contains(&ecc) && (0..=4).contains(&md) && (-1..=3).contains(&pd);
        prop_assert_eq!(ComponentScores::new(er, ecc, md, pd).is_ok(), valid);
    }

    #[test]
    fn model_aggregate_is_permutation_invariant(
        tuples in prop::collection::vec(tuple(), 1..60),
        seed in any::<u64>(),
    ) {
        let mut recs: Vec<ScoreRecord> = tuples.iter().enumerate().map(|(i, &t)| record(i, "m", "r", t)).collect();
        let a = aggregate_model(&recs, "m");
        embryocap::rng::SeededRng::new(seed).shuffle(&mut recs);
        let b = aggregate_model(&recs, "m");
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(&a, &b);
                let totals: Vec<f64> = recs.iter().map(|r| r.composite.value()).collect();
                prop_assert!((a.total - oracle::mean_std(&totals).0).abs() <= 1e-12);
                let pd: Vec<f64> = recs.iter().filter(|r| r.scores.pd() >= 0).map(|r| r.scores.pd() as f64).collect();
                prop_assert!((a.pd - oracle::mean_std(&pd).0).abs() <= 1e-12);
            }
            (Err(MetricError::EmptyPdCohort), Err(MetricError::EmptyPdCohort)) => {
                prop_assert!(tuples.iter().all(|t| t.3 == -1));
            }
            (a, b) => prop_assert!(false, "{:?} / {:?}", a, b),
        }
    }

    #[test]
    fn variable_stats_match_two_pass_oracle(tuples in prop::collection::vec(tuple(), 1..80)) {
        let recs: Vec<ScoreRecord> = tuples.iter().enumerate().map(|(i, &t)| record(i, "m", "r", t)).collect();
        let stats = aggregate_by_variable(&recs);
        let present: std::collections::BTreeSet<Mv> = recs.iter().map(|r| r.mv).collect();
        prop_assert_eq!(stats.keys().copied().collect::<std::collections::BTreeSet<_>>(), present);
        for (mv, s) in stats {
            let xs: Vec<f64> = recs.iter().filter(|r| r.mv == mv).map(|r| r.composite.value()).collect();
            let (mean, std) = oracle::mean_std(&xs);
            prop_assert_eq!(s.n, xs.len());
            prop_assert!((s.mean - mean).abs() <= 1e-12);
            prop_assert!((s.std - std).abs() <= 1e-9);
        }
    }

    #[test]
    fn agreement_is_symmetric(pairs in prop::collection::vec((tuple(), tuple()), 1..40)) {
        let a: Vec<ScoreRecord> = pairs.iter().enumerate().map(|(i, p)| record(i, "m", "ra", p.0)).collect();
        let b: Vec<ScoreRecord> = pairs.iter().enumerate().map(|(i, p)| record(i, "m", "rb", p.1)).collect();
        let ab = agreement(&a, &b).unwrap();
        let ba = agreement(&b, &a).unwrap();
        prop_assert_eq!(&ab, &ba);
        let same = pairs.iter().filter(|p| p.0 .1 == p.1 .1).count() as f64 / pairs.len() as f64;
        prop_assert!((ab.ecc.exact - same).abs() <= 1e-12);
        let self_agreement = agreement(&a, &a).unwrap();
        prop_assert_eq!(self_agreement.ecc.exact, 1.0);
        prop_assert_eq!(self_agreement.composite_mad, 0.0);
    }
}

#[test]
fn seven_of_ten_identical_ecc() {
    let a: Vec<ScoreRecord> = (0..10).map(|i| record(i, "m", "a", (1, 2, 2, 1))).collect();
    let b: Vec<ScoreRecord> = (0..10)
        .map(|i| record(i, "m", "b", (1, if i < 7 { 2 } else { 3 }, 2, 1)))
        .collect();
    assert_eq!(agreement(&a, &b).unwrap().ecc.exact, 0.7);
}

#[test]
fn constant_cohort_summary() {
    let recs: Vec<ScoreRecord> = (0..25).map(|i| record(i, "m", "r", (1, 3, 4, 3))).collect();
    let s = aggregate_model(&recs, "m").unwrap();
    assert_eq!(
        (s.er, s.ecc, s.md, s.pd, s.total, s.total_pd),
        (1.0, 3.0, 4.0, 3.0, 1.0, 1.0)
    );
}
