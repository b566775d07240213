//! Worked examples checked against independent brute-force oracles.

use super::{blobs, linear_logits, log_softmax, pool_from, state};
use aloe::bench::experiment::{balanced_accuracy, TrialLog, TrialRow};
use aloe::bench::report::{aggregate, budget_to_reach};
use aloe::cluster::{self, ClusterKind};
use aloe::matrix::{sq_dist, Matrix};
use aloe::model::{self, head_gradient, GradTarget, LinearHead, Posterior, TrainConfig};
use aloe::ood::{self, OodKind, ScoreSheet, Shrinkage};
use aloe::pool::{self, EmbeddedPool, LongTailSpec};
use aloe::strategy::{self, StrategyConfig, StrategyKind};
use rand::Rng;

fn random_head(k: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, LinearHead) {
    let mut rng = aloe::seed::rng(seed);
    let w: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let b: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let head = LinearHead::new(Matrix::from_rows(&w), b.clone(), (0..k).collect()).unwrap();
    (w, b, head)
}

// ---- pool ----

pub fn longtail_extremes() {
    assert_eq!(pool::longtail_size(500, 0.01, 0, 100), 500);
    let oracle = (500.0 * 0.01f64.powf(99.0 / 100.0)).floor() as usize;
    assert_eq!(oracle, 5);
    assert_eq!(pool::longtail_size(500, 0.01, 99, 100), oracle);
}

pub fn synthetic_counts_follow_formula() {
    let spec = LongTailSpec {
        n_classes: 10,
        n0: 20,
        alpha: 0.01,
        dim: 4,
        separation: 8.0,
        seed: 3,
    };
    let p = pool::synth_longtail(&spec).unwrap();
    let all = state(&p, p.train_ids().to_vec());
    let counts = pool::class_counts(&all, &p);
    for (i, &c) in counts.iter().enumerate() {
        let expected = ((20.0 * 0.01f64.powf(i as f64 / 10.0)).floor() as usize).max(1);
        assert_eq!(c, expected, "class {i}");
    }
}

pub fn init_label_splits_evenly() {
    let spec = LongTailSpec {
        n_classes: 10,
        n0: 40,
        alpha: 0.5,
        dim: 4,
        separation: 8.0,
        seed: 0,
    };
    let p = pool::synth_longtail(&spec).unwrap();
    let s = pool::init_label(&p, 3, 50, 11).unwrap();
    let counts = pool::class_counts(&s, &p);
    assert_eq!(&counts[..3], &[17, 17, 16]);
    assert!(counts[3..].iter().all(|&c| c == 0));
}

pub fn labeling_everything_reveals_train_classes() {
    let spec = LongTailSpec {
        n_classes: 12,
        n0: 10,
        alpha: 0.1,
        dim: 3,
        separation: 8.0,
        seed: 5,
    };
    let p = pool::synth_longtail(&spec).unwrap();
    let s = pool::init_label(&p, 2, 4, 0).unwrap();
    let rest = s.unlabeled_ids().to_vec();
    let done = pool::oracle_label(&p, &s, &rest).unwrap();
    let present: std::collections::BTreeSet<usize> =
        p.train_ids().iter().map(|&i| p.label(i)).collect();
    assert_eq!(done.known_classes(), &present);
    assert!(done.unlabeled_ids().is_empty());
}

// ---- model ----

pub fn softmax_hand_case() {
    let head = LinearHead::new(
        Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]),
        vec![0.0, 0.0],
        vec![0, 1],
    )
    .unwrap();
    let post = head.predict(&[2.0, 0.0]).unwrap();
    let e2 = 2f64.exp();
    assert!((post.probs[0] - e2 / (e2 + 1.0)).abs() < 1e-12);
    assert!((post.probs[0] - 0.8808).abs() < 1e-4);
    assert!((post.probs[1] - 0.1192).abs() < 1e-4);
}

fn loss(w: &[Vec<f64>], b: &[f64], x: &[f64], target: &[f64]) -> f64 {
    let lp = log_softmax(&linear_logits(w, b, x));
    -lp.iter().zip(target).map(|(l, t)| l * t).sum::<f64>()
}

pub fn gradient_matches_finite_differences() {
    let (k, d) = (4, 5);
    for seed in 0..5 {
        let (w, b, head) = random_head(k, d, seed);
        let mut rng = aloe::seed::rng(100 + seed);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let probs = head.predict(&x).unwrap().probs;
        let top = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let targets = [
            (GradTarget::Uniform, vec![1.0 / k as f64; k]),
            (
                GradTarget::OneHot(2),
                (0..k).map(|j| f64::from(u8::from(j == 2))).collect(),
            ),
            (
                GradTarget::Predicted,
                (0..k).map(|j| f64::from(u8::from(j == top))).collect(),
            ),
        ];
        for (target, t) in targets {
            let g = head_gradient(&head, &x, target).unwrap();
            let h = 1e-6;
            let mut numeric = Vec::new();
            for r in 0..k {
                for c in 0..d {
                    let (mut wp, mut wm) = (w.clone(), w.clone());
                    wp[r][c] += h;
                    wm[r][c] -= h;
                    numeric.push((loss(&wp, &b, &x, &t) - loss(&wm, &b, &x, &t)) / (2.0 * h));
                }
            }
            for r in 0..k {
                let (mut bp, mut bm) = (b.clone(), b.clone());
                bp[r] += h;
                bm[r] -= h;
                numeric.push((loss(&w, &bp, &x, &t) - loss(&w, &bm, &x, &t)) / (2.0 * h));
            }
            let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let err = g
                .iter()
                .zip(&numeric)
                .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
            assert!(err / scale < 1e-5, "{target:?}: rel err {}", err / scale);
        }
    }
}

pub fn trains_separable_blobs_perfectly() {
    let (m, labels) = blobs(&[&[-5.0, 0.0], &[5.0, 0.0]], 50, 1.0, 2);
    let p = EmbeddedPool::new(m, labels.clone(), 2, Vec::new()).unwrap();
    let s = state(&p, (0..100).collect());
    let head = model::train(&p, &s, &TrainConfig::default()).unwrap();
    for (i, &y) in labels.iter().enumerate() {
        assert_eq!(head.predict_class(p.embedding(i)).unwrap(), y);
    }
}

pub fn training_is_deterministic() {
    let (m, labels) = blobs(&[&[0.0, 0.0], &[1.0, 1.0], &[0.0, 2.0]], 20, 1.0, 8);
    let p = EmbeddedPool::new(m, labels, 3, Vec::new()).unwrap();
    let s = state(&p, (0..60).step_by(2).collect());
    let cfg = TrainConfig {
        seed: 42,
        ..TrainConfig::default()
    };
    let a = model::train(&p, &s, &cfg).unwrap();
    let b = model::train(&p, &s, &cfg).unwrap();
    assert_eq!(a, b);
}

// ---- ood ----

pub fn energy_hand_case() {
    let e = ood::score_energy(&Posterior::from_logits(vec![2.0, 0.0]));
    assert!((e - -(2f64.exp() + 1.0).ln()).abs() < 1e-12);
    assert!((e - -2.126928).abs() < 1e-6);
    let uniform = ood::score_energy(&Posterior::from_logits(vec![0.0; 10]));
    assert!((uniform - -(10f64).ln()).abs() < 1e-12);
}

pub fn margin_hand_cases() {
    let m = |p: Vec<f64>| {
        ood::score_margin(&Posterior {
            logits: vec![0.0; p.len()],
            probs: p,
        })
    };
    assert!((m(vec![0.6, 0.4]) - -0.2).abs() < 1e-12);
    assert_eq!(m(vec![0.25; 4]), 0.0);
    assert_eq!(m(vec![1.0, 0.0, 0.0]), -1.0);
    assert_eq!(m(vec![1.0]), -1.0);
}

pub fn gradnorm_frobenius_identity() {
    for seed in 0..10 {
        let (_, _, head) = random_head(5, 7, seed);
        let mut rng = aloe::seed::rng(seed + 1000);
        let x: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
        let probs = head.predict(&x).unwrap().probs;
        let pu: f64 = probs
            .iter()
            .map(|p| (p - 0.2) * (p - 0.2))
            .sum::<f64>()
            .sqrt();
        let xn: f64 = x.iter().map(|v| v * v).sum::<f64>();
        let raw = -ood::score_gradnorm(&head, &x).unwrap();
        assert!((raw - pu * (xn + 1.0).sqrt()).abs() < 1e-9);
    }
    let zero = LinearHead::zeros(3, vec![0, 1]).unwrap();
    assert_eq!(ood::score_gradnorm(&zero, &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    assert_eq!(ood::score_gradnorm(&zero, &[2.0, 4.0, 6.0]).unwrap(), 0.0);
}

fn two_class_fixture() -> (EmbeddedPool, aloe::pool::RoundState) {
    let rows = vec![
        vec![0.0, 0.0],
        vec![2.0, 1.0],
        vec![1.0, 3.0],
        vec![3.0, 2.5],
        vec![10.0, 10.0],
        vec![12.0, 9.0],
        vec![11.0, 13.5],
        vec![5.0, 4.0],
    ];
    let p = pool_from(&rows, vec![0, 0, 0, 0, 1, 1, 1, 0], 2);
    let s = state(&p, (0..7).collect());
    (p, s)
}

fn two_pass_cov(p: &EmbeddedPool, ids: &[usize]) -> [[f64; 2]; 2] {
    let mut cov = [[0.0; 2]; 2];
    for class in 0..2 {
        let members: Vec<&[f64]> = ids
            .iter()
            .filter(|&&i| p.label(i) == class)
            .map(|&i| p.embedding(i))
            .collect();
        let n = members.len() as f64;
        let mean = [
            members.iter().map(|x| x[0]).sum::<f64>() / n,
            members.iter().map(|x| x[1]).sum::<f64>() / n,
        ];
        for x in members {
            for a in 0..2 {
                for b in 0..2 {
                    cov[a][b] += (x[a] - mean[a]) * (x[b] - mean[b]);
                }
            }
        }
    }
    let denom = (ids.len() - 2) as f64;
    cov.map(|r| r.map(|v| v / denom))
}

pub fn class_means_by_hand() {
    let p = pool_from(
        &[
            vec![0.0, 0.0],
            vec![2.0, 0.0],
            vec![0.0, 2.0],
            vec![0.0, 4.0],
        ],
        vec![0, 0, 1, 1],
        2,
    );
    let stats = ood::fit_class_stats(&p, &state(&p, vec![0, 1, 2, 3]), Shrinkage::Auto).unwrap();
    assert_eq!(stats.means().row(0), &[1.0, 0.0]);
    assert_eq!(stats.means().row(1), &[0.0, 3.0]);
}

pub fn pooled_covariance_matches_two_pass() {
    let (p, s) = two_class_fixture();
    let stats = ood::fit_class_stats(&p, &s, Shrinkage::Auto).unwrap();
    let oracle = two_pass_cov(&p, s.labeled_ids());
    for (a, row) in oracle.iter().enumerate() {
        for (b, &o) in row.iter().enumerate() {
            assert!((stats.cov()[(a, b)] - o).abs() < 1e-12);
        }
    }
}

pub fn mahalanobis_matches_explicit_inverse() {
    let (p, s) = two_class_fixture();
    let eps = 0.1;
    let stats = ood::fit_class_stats(&p, &s, Shrinkage::Fixed(eps)).unwrap();
    let c = two_pass_cov(&p, s.labeled_ids());
    let (a, b, d) = (c[0][0] + eps, c[0][1], c[1][1] + eps);
    let det = a * d - b * b;
    let inv = [[d / det, -b / det], [-b / det, a / det]];
    let means = [[1.5, 1.625], [11.0, 32.5 / 3.0]];
    for z in [[5.0, 4.0], [0.0, 0.0], [-3.0, 7.0], [11.0, 11.0]] {
        let oracle = means
            .iter()
            .map(|m| {
                let v = [z[0] - m[0], z[1] - m[1]];
                v[0] * (inv[0][0] * v[0] + inv[0][1] * v[1])
                    + v[1] * (inv[1][0] * v[0] + inv[1][1] * v[1])
            })
            .fold(f64::INFINITY, f64::min);
        let got = ood::score_mahalanobis(&stats, &z).unwrap();
        assert!((got - oracle).abs() < 1e-9, "{z:?}: {got} vs {oracle}");
    }
}

pub fn gradproj_matches_closed_form_svd() {
    let rows = [[1.0, 2.0], [3.0, 1.0], [-1.0, 0.5]];
    let proj = ood::fit_gradproj(&Matrix::from_rows(&rows));
    let mean = [1.0, 3.5 / 3.0];
    let centered: Vec<[f64; 2]> = rows
        .iter()
        .map(|r| [r[0] - mean[0], r[1] - mean[1]])
        .collect();
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for r in &centered {
        a += r[0] * r[0];
        b += r[0] * r[1];
        c += r[1] * r[1];
    }
    let lambda = (a + c) / 2.0 + (((a - c) / 2.0).powi(2) + b * b).sqrt();
    let (vx, vy) = (b, lambda - a);
    let n = (vx * vx + vy * vy).sqrt();
    let v = [vx / n, vy / n];
    for (r, cr) in rows.iter().zip(&centered) {
        let oracle = (cr[0] * v[0] + cr[1] * v[1]).abs();
        assert!((proj.score(r) - oracle).abs() < 1e-6);
    }
}

pub fn threshold_nearest_rank() {
    let scores: Vec<f64> = (1..=100).map(f64::from).collect();
    let tau = ood::fit_threshold(&scores).unwrap();
    assert_eq!(tau, 95.0);
    assert_eq!(scores.iter().filter(|&&s| s > tau).count(), 5);
}

/// Two labeled blobs on the x axis and an unlabeled cluster far up the y axis.
fn far_cluster_fixture() -> (EmbeddedPool, aloe::pool::RoundState, LinearHead) {
    let (m, mut labels) = blobs(&[&[-4.0, 0.0], &[4.0, 0.0], &[0.0, 40.0]], 30, 0.5, 4);
    labels.iter_mut().for_each(|l| *l = (*l).min(1));
    let p = EmbeddedPool::new(m, labels, 2, Vec::new()).unwrap();
    let s = state(&p, (0..60).collect());
    let head = model::train(&p, &s, &TrainConfig::default()).unwrap();
    (p, s, head)
}

pub fn far_cluster_fully_flagged_by_energy() {
    let (p, s, head) = far_cluster_fixture();
    let sheet = ood::score_state(OodKind::Energy, &head, &p, &s).unwrap();
    let w: Vec<Vec<f64>> = head.weights().iter_rows().map(<[f64]>::to_vec).collect();
    for (&i, &score) in sheet.ids.iter().zip(&sheet.scores) {
        let lp = log_softmax(&linear_logits(&w, head.bias(), p.embedding(i)));
        let logits = linear_logits(&w, head.bias(), p.embedding(i));
        let lse = logits[0] - lp[0];
        assert!((score - -lse).abs() < 1e-12);
    }
    assert_eq!(sheet.ids.len(), 30);
    assert_eq!(sheet.flagged_count(), 30);
}

pub fn orientation_contract() {
    // Box spread 0.5 gives sigma = 0.5 / sqrt(3) per axis; the probe sits on the
    // decision midline, more than 10 sigma from both centers.
    let (m, labels) = blobs(&[&[-4.0, 0.0], &[4.0, 0.0]], 30, 0.5, 4);
    let p = EmbeddedPool::new(m, labels, 2, Vec::new()).unwrap();
    let s = state(&p, (0..60).collect());
    let head = model::train(&p, &s, &TrainConfig::default()).unwrap();
    let stats = ood::fit_class_stats(&p, &s, Shrinkage::Auto).unwrap();
    let far = [0.0, 6.0];
    let sigma = 0.5 / 3f64.sqrt();
    for c in [[-4.0, 0.0], [4.0, 0.0]] {
        assert!(sq_dist(&far, &c).sqrt() >= 10.0 * sigma);
    }
    let score = |kind: OodKind, x: &[f64]| -> f64 {
        let post = head.predict(x).unwrap();
        match kind {
            OodKind::Energy => ood::score_energy(&post),
            OodKind::Margin => ood::score_margin(&post),
            OodKind::GradNorm => ood::score_gradnorm(&head, x).unwrap(),
            OodKind::Mahalanobis => ood::score_mahalanobis(&stats, x).unwrap(),
            OodKind::GradProj => unreachable!(),
        }
    };
    for kind in [
        OodKind::Energy,
        OodKind::Margin,
        OodKind::GradNorm,
        OodKind::Mahalanobis,
    ] {
        let top = s
            .labeled_ids()
            .iter()
            .map(|&i| score(kind, p.embedding(i)))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(score(kind, &far) > top, "{kind}");
    }
}

// ---- cluster ----

fn two_blobs() -> (Matrix, Vec<usize>) {
    blobs(&[&[0.0, 0.0], &[20.0, 20.0]], 30, 1.0, 6)
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.iter()
        .zip(b)
        .all(|(&x, &y)| a.iter().zip(b).all(|(&x2, &y2)| (x == x2) == (y == y2)))
}

pub fn two_blob_partitions() {
    let (m, labels) = two_blobs();
    for kind in [
        ClusterKind::KMeans,
        ClusterKind::MiniBatchKMeans,
        ClusterKind::Gmm,
    ] {
        let model = cluster::partition(kind, &m, 2, 9).unwrap();
        assert!(same_partition(&model.assignment, &labels), "{kind:?}");
        if kind != ClusterKind::Gmm {
            for (i, &c) in model.assignment.iter().enumerate() {
                let d_own = sq_dist(m.row(i), model.centroids.row(c));
                let d_other = sq_dist(m.row(i), model.centroids.row(1 - c));
                assert!(d_own <= d_other);
            }
        }
    }
}

pub fn kcenter_line() {
    let m = Matrix::from_rows(&[[0.0], [1.0], [10.0]]);
    assert_eq!(cluster::kcenter_greedy(&m, 1, &[0]).unwrap(), vec![2]);
}

// ---- strategy ----

pub fn aloe_hand_trace() {
    // Four clusters of four; flagged counts (4, 2, 0, 3) with tau = 0.5.
    let scores = vec![
        0.9, 0.8, 0.95, 0.7, // cluster 0: all flagged, best at position 2
        0.6, 0.1, 0.7, 0.2, // cluster 1: two flagged
        0.1, 0.2, 0.3, 0.4, // cluster 2: none
        0.55, 0.99, 0.3, 0.8, // cluster 3: three flagged, best at position 13
    ];
    let assignment: Vec<usize> = (0..16).map(|p| p / 4).collect();
    let sheet = ScoreSheet {
        kind: OodKind::Energy,
        ids: (100..116).collect(),
        scores,
        tau: 0.5,
    };
    let summaries = strategy::summarize_clusters(&assignment, 4, &sheet.scores, sheet.tau);
    assert_eq!(
        summaries.iter().map(|s| s.flagged).collect::<Vec<_>>(),
        vec![4, 2, 0, 3]
    );
    assert_eq!(strategy::rank_clusters(&summaries), vec![0, 3, 1, 2]);
    let batch = strategy::aloe_pick(&sheet, &assignment, 4, 2);
    assert_eq!(batch.ids, vec![102, 113]);
}

pub fn reverse_aloe_takes_separated_candidates() {
    // Class means at (-5, 0) and (5, 0); unlabeled copies of the means score 0.
    let mut rows = vec![
        vec![-5.0, 1.0],
        vec![-5.0, -1.0],
        vec![-6.0, 0.0],
        vec![-4.0, 0.0],
        vec![5.0, 1.0],
        vec![5.0, -1.0],
        vec![6.0, 0.0],
        vec![4.0, 0.0],
    ];
    let mut labels = vec![0, 0, 0, 0, 1, 1, 1, 1];
    for _ in 0..5 {
        rows.push(vec![-5.0, 0.0]);
        rows.push(vec![5.0, 0.0]);
        labels.extend([0, 1]);
    }
    rows.extend([vec![40.0, 0.0], vec![0.0, 40.0], vec![-40.0, -40.0]]);
    labels.extend([0, 1, 0]);
    let p = pool_from(&rows, labels, 2);
    let s = state(&p, (0..8).collect());
    let head = model::train(&p, &s, &TrainConfig::default()).unwrap();
    let cfg = StrategyConfig {
        ood: OodKind::Mahalanobis,
        ..StrategyConfig::with_kind(StrategyKind::ReverseAloe)
    };
    let batch = strategy::select(&cfg, &p, &s, &head, 3, 0).unwrap();
    let mut ids = batch.ids.clone();
    ids.sort_unstable();
    assert_eq!(ids, vec![18, 19, 20]);
}

pub fn random_is_uniform() {
    let p = pool_from(
        &(0..5).map(|i| vec![f64::from(i), 0.0]).collect::<Vec<_>>(),
        vec![0; 5],
        1,
    );
    let s = state(&p, vec![0]);
    let mut counts = [0usize; 5];
    for seed in 0..10_000 {
        let b = strategy::random_select(&s, 1, seed).unwrap();
        counts[b.ids[0]] += 1;
    }
    assert_eq!(counts[0], 0);
    for &c in &counts[1..] {
        let f = c as f64 / 10_000.0;
        assert!((0.23..=0.27).contains(&f), "frequency {f}");
    }
}

pub fn margin_matches_sort_oracle() {
    let head = LinearHead::new(
        Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]),
        vec![0.0, 0.0],
        vec![0, 1],
    )
    .unwrap();
    let xs = [3.0, -2.0, 0.1, 5.0, -0.5, 1.5, -4.0];
    let mut rows = vec![vec![9.0, 0.0]];
    rows.extend(xs.iter().map(|&x| vec![x, 1.0]));
    let p = pool_from(&rows, vec![0; rows.len()], 2);
    let s = state(&p, vec![0]);
    let batch = strategy::margin_select(&p, &s, &head, 1).unwrap();
    assert_eq!(batch.ids, vec![3]);

    let w = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
    let mut oracle: Vec<(f64, usize)> = (1..rows.len())
        .map(|i| {
            let pr: Vec<f64> = log_softmax(&linear_logits(&w, &[0.0, 0.0], &rows[i]))
                .iter()
                .map(|l| l.exp())
                .collect();
            ((pr[0] - pr[1]).abs(), i)
        })
        .collect();
    oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let batch = strategy::margin_select(&p, &s, &head, 4).unwrap();
    let mut got = batch.ids.clone();
    got.sort_unstable();
    let mut want: Vec<usize> = oracle[..4].iter().map(|o| o.1).collect();
    want.sort_unstable();
    assert_eq!(got, want);
}

pub fn coreset_picks_far_point() {
    let p = pool_from(
        &[vec![0.0, 0.0], vec![1.0, 0.0], vec![10.0, 0.0]],
        vec![0, 0, 0],
        1,
    );
    let s = state(&p, vec![0]);
    assert_eq!(strategy::coreset_select(&p, &s, 1).unwrap().ids, vec![2]);
}

pub fn badge_prefers_dominant_gradient() {
    let mut rng = aloe::seed::rng(77);
    let mut rows = vec![vec![0.0, 0.0]];
    for _ in 0..20 {
        rows.push(vec![
            0.1 + rng.random_range(-0.01..0.01),
            0.1 + rng.random_range(-0.01..0.01),
        ]);
    }
    rows.push(vec![100.0, 0.0]);
    let outlier = rows.len() - 1;
    let p = pool_from(&rows, vec![0; rows.len()], 2);
    let s = state(&p, vec![0]);
    let head = LinearHead::zeros(2, vec![0, 1]).unwrap();
    let hits = (0..1000)
        .filter(|&seed| {
            strategy::badge_select(&p, &s, &head, 2, seed)
                .unwrap()
                .ids
                .contains(&outlier)
        })
        .count();
    assert!(hits as f64 / 1000.0 > 0.9, "outlier chosen {hits} times");
}

pub fn typicality_prefers_blob_center() {
    let mut rows = vec![[0.0, 0.0]];
    for k in 0..8 {
        let a = f64::from(k) * std::f64::consts::FRAC_PI_4;
        rows.push([a.cos(), a.sin()]);
    }
    rows.push([50.0, 50.0]);
    let m = Matrix::from_rows(&rows);
    let members: Vec<usize> = (0..rows.len()).collect();
    let typ = strategy::typicality(&m, &members, 3);
    let oracle = |i: usize| {
        let mut d: Vec<f64> = members
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| sq_dist(m.row(i), m.row(j)).sqrt())
            .collect();
        d.sort_by(f64::total_cmp);
        1.0 / (d[..3].iter().sum::<f64>() / 3.0)
    };
    assert!((typ[0] - oracle(0)).abs() < 1e-12);
    assert!((typ[9] - oracle(9)).abs() < 1e-12);
    assert!(typ[0] > typ[9]);
}

// ---- bench ----

pub fn balanced_accuracy_confusion() {
    let p = EmbeddedPool::new(
        Matrix::from_rows(&[[0.0], [0.0], [1.0], [1.0], [2.0], [2.0]]),
        vec![0, 0, 1, 1, 2, 2],
        3,
        (0..6).collect(),
    )
    .unwrap();
    // recalls 1.0, 0.5, 0.0
    let acc = balanced_accuracy(&[0, 0, 1, 0, 0, 1], &p).unwrap();
    assert!((acc - 0.5).abs() < 1e-12);
}

fn log(seed: u64, accs: &[f64]) -> TrialLog {
    TrialLog {
        strategy: "x".into(),
        seed,
        rows: accs
            .iter()
            .enumerate()
            .map(|(t, &a)| TrialRow {
                t: t + 1,
                budget: 100 * (t + 1),
                accuracy: a,
                n_known: t,
            })
            .collect(),
    }
}

pub fn aggregate_two_trials() {
    let table = aggregate(&[log(0, &[0.4]), log(1, &[0.6])]).unwrap();
    let r = &table.rows[0];
    assert!((r.acc_mean - 0.5).abs() < 1e-12);
    assert!((r.acc_se - 0.1).abs() < 1e-12);
}

pub fn budget_scan() {
    let table = aggregate(&[log(0, &[0.1, 0.3, 0.5, 0.7])]).unwrap();
    assert_eq!(budget_to_reach(&table, "x", 0.5), Some(300));
    assert_eq!(budget_to_reach(&table, "x", 0.8), None);
}

/// Every check, by name.
pub const ALL: &[(&str, fn())] = &[
    ("longtail_extremes", longtail_extremes),
    (
        "synthetic_counts_follow_formula",
        synthetic_counts_follow_formula,
    ),
    ("init_label_splits_evenly", init_label_splits_evenly),
    (
        "labeling_everything_reveals_train_classes",
        labeling_everything_reveals_train_classes,
    ),
    ("softmax_hand_case", softmax_hand_case),
    (
        "gradient_matches_finite_differences",
        gradient_matches_finite_differences,
    ),
    (
        "trains_separable_blobs_perfectly",
        trains_separable_blobs_perfectly,
    ),
    ("training_is_deterministic", training_is_deterministic),
    ("energy_hand_case", energy_hand_case),
    ("margin_hand_cases", margin_hand_cases),
    ("gradnorm_frobenius_identity", gradnorm_frobenius_identity),
    ("class_means_by_hand", class_means_by_hand),
    (
        "pooled_covariance_matches_two_pass",
        pooled_covariance_matches_two_pass,
    ),
    (
        "mahalanobis_matches_explicit_inverse",
        mahalanobis_matches_explicit_inverse,
    ),
    (
        "gradproj_matches_closed_form_svd",
        gradproj_matches_closed_form_svd,
    ),
    ("threshold_nearest_rank", threshold_nearest_rank),
    (
        "far_cluster_fully_flagged_by_energy",
        far_cluster_fully_flagged_by_energy,
    ),
    ("orientation_contract", orientation_contract),
    ("two_blob_partitions", two_blob_partitions),
    ("kcenter_line", kcenter_line),
    ("aloe_hand_trace", aloe_hand_trace),
    (
        "reverse_aloe_takes_separated_candidates",
        reverse_aloe_takes_separated_candidates,
    ),
    ("random_is_uniform", random_is_uniform),
    ("margin_matches_sort_oracle", margin_matches_sort_oracle),
    ("coreset_picks_far_point", coreset_picks_far_point),
    (
        "badge_prefers_dominant_gradient",
        badge_prefers_dominant_gradient,
    ),
    (
        "typicality_prefers_blob_center",
        typicality_prefers_blob_center,
    ),
    ("balanced_accuracy_confusion", balanced_accuracy_confusion),
    ("aggregate_two_trials", aggregate_two_trials),
    ("budget_scan", budget_scan),
];
