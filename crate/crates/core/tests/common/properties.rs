//! Property checks driven by an explicit proptest runner, so the same checks
//! run under `cargo test` with fresh randomness and in the acceptance suite
//! with a fixed seed.

use aloe::bench::experiment::{TrialLog, TrialRow};
use aloe::bench::report::aggregate_all;
use aloe::cluster;
use aloe::matrix::{sq_dist, Matrix};
use aloe::model::{self, LinearHead, Posterior, TrainConfig};
use aloe::ood::{self, OodKind, Shrinkage};
use aloe::pool::{self, EmbeddedPool, RoundState};
use aloe::strategy::{self, StrategyConfig, StrategyKind};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng;

pub type Check = fn(&mut TestRunner) -> Result<(), String>;

pub fn runner(cases: u32, fixed_seed: bool) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    if fixed_seed {
        TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
    } else {
        TestRunner::new(config)
    }
}

fn report<T: std::fmt::Debug>(
    r: Result<(), proptest::test_runner::TestError<T>>,
) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

fn random_points(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = aloe::seed::rng(seed);
    // A few loose groups so clustering has something to find.
    let centers: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..d).map(|_| rng.random_range(-10.0..10.0)).collect())
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            centers[i % 4]
                .iter()
                .map(|c| c + rng.random_range(-3.0..3.0))
                .collect()
        })
        .collect();
    Matrix::from_rows(&rows)
}

/// Random pool plus a random labeled subset leaving at least one unlabeled example.
fn random_state(
    n: usize,
    d: usize,
    k: usize,
    n_labeled: usize,
    seed: u64,
) -> (EmbeddedPool, RoundState) {
    let m = random_points(n, d, seed);
    let mut rng = aloe::seed::rng(seed ^ 0xabc);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let p = EmbeddedPool::new(m, labels, k, Vec::new()).unwrap();
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    ids.truncate(n_labeled.clamp(1, n - 1));
    let s = RoundState::new(&p, 1, ids).unwrap();
    (p, s)
}

fn quick_train() -> TrainConfig {
    TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    }
}

pub fn kmeans_monotone_and_converged(r: &mut TestRunner) -> Result<(), String> {
    report(r.run(
        &(any::<u64>(), 5usize..80, 1usize..5, 1usize..7),
        |(seed, n, d, k)| {
            let m = random_points(n, d, seed);
            let model = cluster::kmeans(&m, k, seed, 300, 0.0).unwrap();
            for w in model.trace.windows(2) {
                prop_assert!(
                    w[1] <= w[0] * (1.0 + 1e-12) + 1e-12,
                    "objective rose {} -> {}",
                    w[0],
                    w[1]
                );
            }
            for (i, &c) in model.assignment.iter().enumerate() {
                let own = sq_dist(m.row(i), model.centroids.row(c));
                let best = (0..model.k)
                    .map(|j| sq_dist(m.row(i), model.centroids.row(j)))
                    .fold(f64::INFINITY, f64::min);
                prop_assert!(own <= best + 1e-12);
            }
            Ok(())
        },
    ))
}

pub fn em_log_likelihood_nondecreasing(r: &mut TestRunner) -> Result<(), String> {
    report(r.run(
        &(any::<u64>(), 10usize..60, 1usize..4, 1usize..5),
        |(seed, n, d, k)| {
            let m = random_points(n, d, seed);
            let model = cluster::gmm_em(&m, k, seed, 50, 0.0, 1e-6).unwrap();
            for w in model.trace.windows(2) {
                prop_assert!(
                    w[1] >= w[0] - 1e-9,
                    "log-likelihood fell {} -> {}",
                    w[0],
                    w[1]
                );
            }
            Ok(())
        },
    ))
}

pub fn kcenter_radius_nonincreasing(r: &mut TestRunner) -> Result<(), String> {
    report(
        r.run(&(any::<u64>(), 2usize..60, 1usize..4), |(seed, n, d)| {
            let m = random_points(n, d, seed);
            let picks = cluster::kcenter_greedy(&m, n, &[]).unwrap();
            let mut last = f64::INFINITY;
            for j in 1..=picks.len() {
                let radius = cluster::covering_radius(&m, &picks[..j]);
                prop_assert!(radius <= last);
                last = radius;
            }
            prop_assert_eq!(last, 0.0);
            Ok(())
        }),
    )
}

pub fn energy_shift_law(r: &mut TestRunner) -> Result<(), String> {
    report(r.run(
        &(prop::collection::vec(-20.0f64..20.0, 1..10), -20.0f64..20.0),
        |(logits, c)| {
            let base = ood::score_energy(&Posterior::from_logits(logits.clone()));
            let shifted = ood::score_energy(&Posterior::from_logits(
                logits.iter().map(|l| l + c).collect(),
            ));
            prop_assert!((shifted - (base - c)).abs() < 1e-12);
            Ok(())
        },
    ))
}

pub fn margin_in_range(r: &mut TestRunner) -> Result<(), String> {
    report(
        r.run(&prop::collection::vec(-30.0f64..30.0, 1..10), |logits| {
            let m = ood::score_margin(&Posterior::from_logits(logits));
            prop_assert!((-1.0..=0.0).contains(&m));
            Ok(())
        }),
    )
}

pub fn gradnorm_nonpositive_and_zero_at_uniform(r: &mut TestRunner) -> Result<(), String> {
    report(
        r.run(&(any::<u64>(), 1usize..6, 1usize..6), |(seed, k, d)| {
            let mut rng = aloe::seed::rng(seed);
            let w: Vec<f64> = (0..k * d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let head = LinearHead::new(Matrix::from_vec(k, d, w), b, (0..k).collect()).unwrap();
            prop_assert!(ood::score_gradnorm(&head, &x).unwrap() <= 0.0);
            let flat = LinearHead::zeros(d, (0..k).collect()).unwrap();
            prop_assert_eq!(ood::score_gradnorm(&flat, &x).unwrap(), 0.0);
            Ok(())
        }),
    )
}

pub fn threshold_guarantee(r: &mut TestRunner) -> Result<(), String> {
    let scores = prop::collection::vec(
        prop_oneof![(-5i32..5).prop_map(f64::from), -5.0f64..5.0],
        1..300,
    );
    report(r.run(&scores, |scores| {
        let tau = ood::fit_threshold(&scores).unwrap();
        let above = scores.iter().filter(|&&s| s > tau).count();
        prop_assert!(above <= scores.len() * 5 / 100);
        Ok(())
    }))
}

pub fn mahalanobis_nonincreasing_in_shrinkage(r: &mut TestRunner) -> Result<(), String> {
    report(r.run(&(any::<u64>(), 1e-4f64..1.0), |(seed, eps)| {
        let (p, s) = random_state(40, 3, 3, 25, seed);
        let z = [30.0, -30.0, 30.0];
        let small = ood::fit_class_stats(&p, &s, Shrinkage::Fixed(eps)).unwrap();
        let large = ood::fit_class_stats(&p, &s, Shrinkage::Fixed(eps * 2.0)).unwrap();
        let a = ood::score_mahalanobis(&small, &z).unwrap();
        let b = ood::score_mahalanobis(&large, &z).unwrap();
        prop_assert!(b >= 0.0);
        prop_assert!(b <= a * (1.0 + 1e-12));
        Ok(())
    }))
}

pub fn gradproj_permutation_equivariant(r: &mut TestRunner) -> Result<(), String> {
    report(r.run(&any::<u64>(), |seed| {
        let (p, s) = random_state(30, 3, 3, 10, seed);
        let head = model::train(&p, &s, &quick_train()).unwrap();
        let mut ids = s.unlabeled_ids().to_vec();
        let (a, _) = ood::score_gradproj(&head, &p, &ids).unwrap();
        ids.reverse();
        let (mut b, _) = ood::score_gradproj(&head, &p, &ids).unwrap();
        b.reverse();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-6 * (1.0 + x.abs()));
        }
        Ok(())
    }))
}

pub fn oracle_label_keeps_a_partition(r: &mut TestRunner) -> Result<(), String> {
    report(r.run(&(any::<u64>(), 0usize..30), |(seed, q)| {
        let (p, s) = random_state(40, 2, 4, 5, seed);
        let mut rng = aloe::seed::rng(seed);
        let mut query = s.unlabeled_ids().to_vec();
        query.shuffle(&mut rng);
        query.truncate(q);
        let next = pool::oracle_label(&p, &s, &query).unwrap();
        prop_assert_eq!(next.t(), s.t() + 1);
        let mut all: Vec<usize> = next
            .labeled_ids()
            .iter()
            .chain(next.unlabeled_ids())
            .copied()
            .collect();
        all.sort_unstable();
        prop_assert_eq!(all, p.train_ids().to_vec());
        let known: std::collections::BTreeSet<usize> =
            next.labeled_ids().iter().map(|&i| p.label(i)).collect();
        prop_assert_eq!(&known, next.known_classes());
        prop_assert_eq!(
            pool::class_counts(&next, &p).iter().sum::<usize>(),
            next.labeled_ids().len()
        );
        Ok(())
    }))
}

pub fn aggregation_ignores_log_order(r: &mut TestRunner) -> Result<(), String> {
    report(r.run(&(any::<u64>(), 1usize..6), |(seed, n)| {
        let mut rng = aloe::seed::rng(seed);
        let mut logs: Vec<TrialLog> = Vec::new();
        for name in ["a", "b"] {
            for s in 0..n as u64 {
                let rows = (0..4)
                    .map(|t| TrialRow {
                        t: t + 1,
                        budget: 10 * (t + 1),
                        accuracy: rng.random(),
                        n_known: rng.random_range(0..50),
                    })
                    .collect();
                logs.push(TrialLog {
                    strategy: name.into(),
                    seed: s,
                    rows,
                });
            }
        }
        let base = aggregate_all(&logs).unwrap();
        logs.shuffle(&mut rng);
        prop_assert_eq!(base, aggregate_all(&logs).unwrap());
        Ok(())
    }))
}

pub fn check_batch(
    kind: StrategyKind,
    ood: OodKind,
    seed: u64,
    n: usize,
    n_labeled: usize,
    b: usize,
) -> Result<(), TestCaseError> {
    let (p, s) = random_state(n, 3, 4, n_labeled, seed);
    let head = model::train(&p, &s, &quick_train()).unwrap();
    let cfg = StrategyConfig {
        ood,
        ..StrategyConfig::with_kind(kind)
    };
    let batch = strategy::select(&cfg, &p, &s, &head, b, seed).unwrap();
    prop_assert_eq!(batch.ids.len(), b.min(s.unlabeled_ids().len()));
    let mut sorted = batch.ids.clone();
    sorted.sort_unstable();
    sorted.dedup();
    prop_assert_eq!(sorted.len(), batch.ids.len());
    for id in &batch.ids {
        prop_assert!(s.unlabeled_ids().binary_search(id).is_ok());
    }
    Ok(())
}

/// Every strategy, each with randomized pools, labeled sets, budgets and OOD scorers.
pub fn strategy_postcondition(r: &mut TestRunner) -> Result<(), String> {
    for kind in StrategyKind::ALL {
        let inputs = (
            any::<u64>(),
            prop::sample::select(OodKind::ALL.to_vec()),
            3usize..60,
            1usize..40,
            1usize..70,
        );
        report(r.run(&inputs, |(seed, ood, n, n_labeled, b)| {
            check_batch(kind, ood, seed, n, n_labeled, b)
        }))
        .map_err(|e| format!("{}: {e}", kind.name()))?;
    }
    Ok(())
}

/// Every check with the case count the suites use.
pub const ALL: &[(&str, Check, u32)] = &[
    (
        "kmeans objective monotone and converged",
        kmeans_monotone_and_converged,
        50,
    ),
    (
        "EM log-likelihood nondecreasing",
        em_log_likelihood_nondecreasing,
        30,
    ),
    (
        "k-center radius nonincreasing",
        kcenter_radius_nonincreasing,
        30,
    ),
    ("energy shift law", energy_shift_law, 256),
    ("margin range", margin_in_range, 256),
    (
        "gradnorm nonpositive, zero at uniform",
        gradnorm_nonpositive_and_zero_at_uniform,
        256,
    ),
    ("threshold guarantee", threshold_guarantee, 256),
    (
        "mahalanobis nonincreasing in shrinkage",
        mahalanobis_nonincreasing_in_shrinkage,
        64,
    ),
    (
        "gradproj permutation equivariant",
        gradproj_permutation_equivariant,
        64,
    ),
    (
        "oracle_label keeps a partition",
        oracle_label_keeps_a_partition,
        128,
    ),
    (
        "aggregation ignores log order",
        aggregation_ignores_log_order,
        128,
    ),
    ("strategy postcondition", strategy_postcondition, 25),
];
