//! Property tests over the self-paced weights, metrics and penalty.

use std::sync::Arc;

use proptest::prelude::*;
use spwc::importance::{ImportanceKind, ImportanceVector, TaskSnapshot};
use spwc::metrics::{apa, ps, AccuracyMatrix, StorageLedger};
use spwc::numeric::{Matrix, ParamVector};
use spwc::selfpaced::{
    difficulty, proposed_weight, variant_weight, weight_objective, weight_vector, AgePolicy,
    RegularizerKind,
};
use spwc::stream::Dataset;
use spwc::trainer::{penalty_and_grad, PenaltyFamily};

fn kind() -> impl Strategy<Value = RegularizerKind> {
    prop::sample::select(RegularizerKind::ALL.to_vec())
}

proptest! {
    #[test]
    fn weights_stay_in_unit_interval(eta in 0.0..50.0f64, mu in 1e-6..50.0f64, k in kind()) {
        let v = variant_weight(eta, mu, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn closed_form_minimises_the_objective(
        eta in 0.0..10.0f64,
        mu in 1e-3..10.0f64,
        other in 0.0..=1.0f64,
    ) {
        let v = proposed_weight(eta, mu).unwrap();
        let best = weight_objective(v, eta, mu);
        prop_assert!(best <= weight_objective(other, eta, mu) + 1e-12 * (1.0 + best.abs()));
    }

    #[test]
    fn proposed_weight_is_monotone(
        eta in 0.0..10.0f64,
        d_eta in 0.0..5.0f64,
        mu in 1e-3..10.0f64,
        d_mu in 0.0..5.0f64,
    ) {
        let v = proposed_weight(eta, mu).unwrap();
        prop_assert!(proposed_weight(eta + d_eta, mu).unwrap() <= v);
        prop_assert!(proposed_weight(eta, mu + d_mu).unwrap() >= v);
    }

    #[test]
    fn huge_age_keeps_every_task(eta in 0.0..5.0f64, mu in 1e12..1e15f64) {
        prop_assert!(proposed_weight(eta, mu).unwrap() >= 1.0 - 1e-6);
    }

    #[test]
    fn difficulty_rises_with_accuracy(a in 1e-6..0.999f64, gap in 1e-4..1.0f64) {
        let b = (a + gap * (1.0 - a)).min(1.0 - 1e-9);
        prop_assume!(b > a);
        prop_assert!(difficulty(b).unwrap().eta() > difficulty(a).unwrap().eta());
    }

    #[test]
    fn topk_keeps_exactly_k(psis in prop::collection::vec(0.0..=1.0f64, 1..12), k in 1usize..15) {
        let w = weight_vector(&psis, AgePolicy::TopK(k), RegularizerKind::Proposed).unwrap();
        prop_assert_eq!(w.weights.active(), k.min(psis.len()));
    }

    #[test]
    fn ps_never_rises_while_storage_grows(steps in prop::collection::vec(0u64..1000, 1..20)) {
        let mut counts = vec![500u64];
        for s in &steps {
            let next = counts.last().unwrap() + s;
            counts.push(next);
        }
        let ledger = StorageLedger::from_counts(counts.clone());
        let mut prev = ps(&ledger, 1).unwrap();
        prop_assert_eq!(prev, 1.0);
        for m in 2..=counts.len() {
            let cur = ps(&ledger, m).unwrap();
            prop_assert!(cur <= prev + 1e-15);
            prev = cur;
        }
    }

    #[test]
    fn apa_ignores_task_order(row in prop::collection::vec(0.0..=1.0f64, 1..10), seed in any::<u64>()) {
        let m = row.len();
        let mut shuffled = row.clone();
        let mut rng = spwc::numeric::Rng::seed_from(seed);
        rng.shuffle(&mut shuffled);
        let build = |last: Vec<f64>| {
            let mut rows: Vec<Vec<f64>> = (1..m).map(|i| vec![0.5; i]).collect();
            rows.push(last);
            AccuracyMatrix::from_rows(rows).unwrap()
        };
        let a = apa(&build(row), m).unwrap();
        let b = apa(&build(shuffled), m).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn penalty_ignores_snapshot_order(seed in any::<u64>(), n in 1usize..30, count in 1usize..5) {
        let mut rng = spwc::numeric::Rng::seed_from(seed);
        let eval = Arc::new(
            Dataset::new(Matrix::zeros(1, 1), vec![0], 1, vec![1]).unwrap(),
        );
        let mut snaps: Vec<TaskSnapshot> = (0..count)
            .map(|t| {
                TaskSnapshot::new(
                    t,
                    t,
                    ParamVector::from_vec((0..n).map(|_| rng.normal()).collect()),
                    ImportanceVector::new((0..n).map(|_| rng.uniform()).collect(), ImportanceKind::Fisher)
                        .unwrap(),
                    Arc::clone(&eval),
                    0.5,
                )
                .unwrap()
            })
            .collect();
        let mut v: Vec<f64> = (0..count).map(|_| rng.uniform()).collect();
        let theta = ParamVector::from_vec((0..n).map(|_| rng.normal()).collect());
        let (p1, g1) = penalty_and_grad(&theta, &snaps, &v, 3.0, PenaltyFamily::Mas).unwrap();
        snaps.reverse();
        v.reverse();
        let (p2, g2) = penalty_and_grad(&theta, &snaps, &v, 3.0, PenaltyFamily::Mas).unwrap();
        prop_assert!((p1 - p2).abs() <= 1e-12 * (1.0 + p1.abs()));
        for (a, b) in g1.iter().zip(g2.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}
