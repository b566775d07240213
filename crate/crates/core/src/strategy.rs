//! Query strategies.
//!
//! Every strategy maps `(pool, state, head, B, seed)` to
//! `min(B, |unlabeled|)` distinct unlabeled ids and is a pure function of its
//! inputs. Internally, unlabeled examples are addressed by their position in
//! `RoundState::unlabeled_ids`, which is ascending, so "lower position" and
//! "lower example id" agree for tie-breaks.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::cluster::{self, ClusterKind};
use crate::error::{Error, Result};
use crate::matrix::{sq_dist, Matrix};
use crate::model::{gradient_unchecked, softmax, GradTarget, LinearHead};
use crate::ood::{self, OodKind, ScoreSheet};
use crate::par;
use crate::pool::{EmbeddedPool, RoundState};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    Aloe,
    ReverseAloe,
    Random,
    Margin,
    Coreset,
    Badge,
    TypiClust,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::Aloe,
        StrategyKind::ReverseAloe,
        StrategyKind::Random,
        StrategyKind::Margin,
        StrategyKind::Coreset,
        StrategyKind::Badge,
        StrategyKind::TypiClust,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Aloe => "aloe",
            StrategyKind::ReverseAloe => "reverse_aloe",
            StrategyKind::Random => "random",
            StrategyKind::Margin => "margin",
            StrategyKind::Coreset => "coreset",
            StrategyKind::Badge => "badge",
            StrategyKind::TypiClust => "typiclust",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub ood: OodKind,
    pub cluster: ClusterKind,
    /// Cluster-count multiplier: `k = multiplier * max(B, |K_t|)`.
    pub multiplier: usize,
    /// Neighbours used for TypiClust typicality.
    pub knn: usize,
    /// Append head logits to the embeddings before clustering.
    pub logit_features: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::Aloe,
            ood: OodKind::GradNorm,
            cluster: ClusterKind::KMeans,
            multiplier: 2,
            knn: 20,
            logit_features: false,
        }
    }
}

impl StrategyConfig {
    pub fn with_kind(kind: StrategyKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

/// Per-pick debugging information.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub id: usize,
    pub cluster: Option<usize>,
    pub score: Option<f64>,
    pub cluster_ratio: Option<f64>,
}

impl Diagnostic {
    fn bare(id: usize) -> Self {
        Self {
            id,
            cluster: None,
            score: None,
            cluster_ratio: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOodSummary {
    pub cluster: usize,
    pub size: usize,
    pub flagged: usize,
    pub ratio: f64,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatch {
    pub ids: Vec<usize>,
    pub diagnostics: Vec<Diagnostic>,
    /// Cluster summaries for the cluster-then-filter strategy.
    pub clusters: Vec<ClusterOodSummary>,
}

impl QueryBatch {
    fn plain(ids: Vec<usize>) -> Self {
        let diagnostics = ids.iter().map(|&i| Diagnostic::bare(i)).collect();
        Self {
            ids,
            diagnostics,
            clusters: Vec::new(),
        }
    }

    /// `id,cluster,score,cluster_ratio` rows; missing fields are empty.
    pub fn to_delimited(&self) -> String {
        fn opt<T: fmt::Display>(v: Option<T>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        let mut s = String::from("id,cluster,score,cluster_ratio\n");
        for d in &self.diagnostics {
            s.push_str(&format!(
                "{},{},{},{}\n",
                d.id,
                opt(d.cluster),
                opt(d.score),
                opt(d.cluster_ratio)
            ));
        }
        s
    }
}

fn check(state: &RoundState, b: usize) -> Result<usize> {
    if b == 0 {
        return Err(Error::InvalidArgument(
            "batch size must be at least 1".into(),
        ));
    }
    if state.unlabeled_ids().is_empty() {
        return Err(Error::EmptyPool);
    }
    Ok(b.min(state.unlabeled_ids().len()))
}

/// Runs the strategy named by `cfg.kind`.
pub fn select(
    cfg: &StrategyConfig,
    pool: &EmbeddedPool,
    state: &RoundState,
    head: &LinearHead,
    b: usize,
    seed: u64,
) -> Result<QueryBatch> {
    match cfg.kind {
        StrategyKind::Aloe => aloe_select(pool, state, head, b, cfg, seed),
        StrategyKind::ReverseAloe => reverse_aloe_select(pool, state, head, b, cfg, seed),
        StrategyKind::Random => random_select(state, b, seed),
        StrategyKind::Margin => margin_select(pool, state, head, b),
        StrategyKind::Coreset => coreset_select(pool, state, b),
        StrategyKind::Badge => badge_select(pool, state, head, b, seed),
        StrategyKind::TypiClust => typiclust_select(pool, state, b, cfg.knn, seed),
    }
}

/// Per-cluster size, flagged count, OOD ratio and mean score.
pub fn summarize_clusters(
    assignment: &[usize],
    k: usize,
    scores: &[f64],
    tau: f64,
) -> Vec<ClusterOodSummary> {
    let mut size = vec![0usize; k];
    let mut flagged = vec![0usize; k];
    let mut sum = vec![0.0; k];
    for (&c, &s) in assignment.iter().zip(scores) {
        size[c] += 1;
        flagged[c] += usize::from(s > tau);
        sum[c] += s;
    }
    (0..k)
        .map(|c| ClusterOodSummary {
            cluster: c,
            size: size[c],
            flagged: flagged[c],
            ratio: if size[c] == 0 {
                0.0
            } else {
                flagged[c] as f64 / size[c] as f64
            },
            mean_score: if size[c] == 0 {
                f64::NEG_INFINITY
            } else {
                sum[c] / size[c] as f64
            },
        })
        .collect()
}

/// Nonempty clusters ordered by OOD ratio, then mean score (both descending),
/// then cluster index.
pub fn rank_clusters(summaries: &[ClusterOodSummary]) -> Vec<usize> {
    let mut ranked: Vec<&ClusterOodSummary> = summaries.iter().filter(|s| s.size > 0).collect();
    ranked.sort_by(|a, b| {
        b.ratio
            .total_cmp(&a.ratio)
            .then(b.mean_score.total_cmp(&a.mean_score))
            .then(a.cluster.cmp(&b.cluster))
    });
    ranked.into_iter().map(|s| s.cluster).collect()
}

fn by_score_desc(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Takes the best-scoring member of each ranked cluster in turn, then the
/// second best of each, and so on, until `b` positions are collected.
///
/// `members[c]` lists positions in cluster `c`; `scores` is indexed by position.
pub fn pick_round_robin(
    ranked: &[usize],
    members: &[Vec<usize>],
    scores: &[f64],
    b: usize,
) -> Vec<usize> {
    let sorted: Vec<Vec<usize>> = ranked
        .iter()
        .map(|&c| {
            let mut m = members[c].clone();
            m.sort_by(by_score_desc(scores));
            m
        })
        .collect();
    let mut picks = Vec::with_capacity(b);
    let deepest = sorted.iter().map(Vec::len).max().unwrap_or(0);
    'outer: for depth in 0..deepest {
        for m in &sorted {
            if picks.len() == b {
                break 'outer;
            }
            if let Some(&p) = m.get(depth) {
                picks.push(p);
            }
        }
    }
    picks
}

fn cluster_features(pool: &EmbeddedPool, head: &LinearHead, ids: &[usize], logits: bool) -> Matrix {
    if !logits {
        return pool.embeddings().select_rows(ids);
    }
    let rows = par::map_slice(ids, |&i| {
        let x = pool.embedding(i);
        let mut r = x.to_vec();
        r.extend(head.logits_unchecked(x));
        r
    });
    Matrix::from_rows(&rows)
}

/// Cluster-then-filter selection.
///
/// 1. Cluster the unlabeled embeddings into `multiplier * max(B, |K_t|)` clusters.
/// 2. Score the pool, fit τ on the labeled scores, and rank clusters by the
///    fraction of members scoring above τ.
/// 3. Take the highest-scoring member of each of the top `B` clusters.
pub fn aloe_select(
    pool: &EmbeddedPool,
    state: &RoundState,
    head: &LinearHead,
    b: usize,
    cfg: &StrategyConfig,
    seed: u64,
) -> Result<QueryBatch> {
    let b = check(state, b)?;
    if cfg.multiplier == 0 {
        return Err(Error::InvalidArgument(
            "multiplier must be at least 1".into(),
        ));
    }
    let unlabeled = state.unlabeled_ids();
    let k = (cfg.multiplier * b.max(state.n_known())).min(unlabeled.len());
    let features = cluster_features(pool, head, unlabeled, cfg.logit_features);
    let model = cluster::partition(cfg.cluster, &features, k, seed)?;
    let sheet = ood::score_state(cfg.ood, head, pool, state)?;
    Ok(aloe_pick(&sheet, &model.assignment, model.k, b))
}

/// Steps 2 and 3 of [`aloe_select`] on a precomputed score sheet and partition.
pub fn aloe_pick(sheet: &ScoreSheet, assignment: &[usize], k: usize, b: usize) -> QueryBatch {
    let summaries = summarize_clusters(assignment, k, &sheet.scores, sheet.tau);
    let ranked = rank_clusters(&summaries);
    let mut members = vec![Vec::new(); k];
    for (p, &c) in assignment.iter().enumerate() {
        members[c].push(p);
    }
    let picks = pick_round_robin(&ranked, &members, &sheet.scores, b.min(assignment.len()));
    let diagnostics = picks
        .iter()
        .map(|&p| Diagnostic {
            id: sheet.ids[p],
            cluster: Some(assignment[p]),
            score: Some(sheet.scores[p]),
            cluster_ratio: Some(summaries[assignment[p]].ratio),
        })
        .collect();
    QueryBatch {
        ids: picks.iter().map(|&p| sheet.ids[p]).collect(),
        diagnostics,
        clusters: summaries,
    }
}

/// Filter-then-cluster selection: keep unlabeled examples scoring above τ,
/// cluster them into `B` groups and take each group's top scorer. With fewer
/// than `B` candidates, all candidates are taken and the rest of the batch is
/// filled with the highest-scoring non-candidates.
pub fn reverse_aloe_select(
    pool: &EmbeddedPool,
    state: &RoundState,
    head: &LinearHead,
    b: usize,
    cfg: &StrategyConfig,
    seed: u64,
) -> Result<QueryBatch> {
    let b = check(state, b)?;
    let sheet = ood::score_state(cfg.ood, head, pool, state)?;
    let n = sheet.ids.len();
    let candidates: Vec<usize> = (0..n).filter(|&p| sheet.is_ood(p)).collect();

    let diag = |p: usize, cluster: Option<usize>| Diagnostic {
        id: sheet.ids[p],
        cluster,
        score: Some(sheet.scores[p]),
        cluster_ratio: None,
    };

    if candidates.len() < b {
        let mut rest: Vec<usize> = (0..n).filter(|&p| !sheet.is_ood(p)).collect();
        rest.sort_by(by_score_desc(&sheet.scores));
        let mut picks = candidates;
        picks.sort_by(by_score_desc(&sheet.scores));
        picks.extend(rest.into_iter().take(b - picks.len()));
        return Ok(QueryBatch {
            ids: picks.iter().map(|&p| sheet.ids[p]).collect(),
            diagnostics: picks.iter().map(|&p| diag(p, None)).collect(),
            clusters: Vec::new(),
        });
    }

    let cand_ids: Vec<usize> = candidates.iter().map(|&p| sheet.ids[p]).collect();
    let features = cluster_features(pool, head, &cand_ids, cfg.logit_features);
    let model = cluster::partition(cfg.cluster, &features, b, seed)?;
    let cand_scores: Vec<f64> = candidates.iter().map(|&p| sheet.scores[p]).collect();
    let members = model.members();
    // clusters in order of their best member
    let mut ranked: Vec<(usize, usize)> = members
        .iter()
        .enumerate()
        .filter_map(|(c, m)| {
            m.iter()
                .copied()
                .min_by(by_score_desc(&cand_scores))
                .map(|best| (c, best))
        })
        .collect();
    ranked.sort_by(|x, y| by_score_desc(&cand_scores)(&x.1, &y.1));
    let order: Vec<usize> = ranked.into_iter().map(|(c, _)| c).collect();
    let picks = pick_round_robin(&order, &members, &cand_scores, b);
    Ok(QueryBatch {
        ids: picks.iter().map(|&q| cand_ids[q]).collect(),
        diagnostics: picks
            .iter()
            .map(|&q| diag(candidates[q], Some(model.assignment[q])))
            .collect(),
        clusters: Vec::new(),
    })
}

/// Uniform sample without replacement.
pub fn random_select(state: &RoundState, b: usize, seed: u64) -> Result<QueryBatch> {
    let b = check(state, b)?;
    let mut rng = seed::rng(seed);
    let u = state.unlabeled_ids();
    let ids = rand::seq::index::sample(&mut rng, u.len(), b)
        .into_iter()
        .map(|p| u[p])
        .collect();
    Ok(QueryBatch::plain(ids))
}

/// Raw margin `p_max - p_second` (1 for a one-class head).
pub fn raw_margin(probs: &[f64]) -> f64 {
    let mut sorted = probs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted[0] - sorted.get(1).copied().unwrap_or(0.0)
}

/// The `B` smallest-margin unlabeled examples.
pub fn margin_select(
    pool: &EmbeddedPool,
    state: &RoundState,
    head: &LinearHead,
    b: usize,
) -> Result<QueryBatch> {
    let b = check(state, b)?;
    let u = state.unlabeled_ids();
    let margins = par::map_slice(u, |&i| {
        raw_margin(&softmax(&head.logits_unchecked(pool.embedding(i))))
    });
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &c| margins[a].total_cmp(&margins[c]).then(a.cmp(&c)));
    let picks: Vec<usize> = order.into_iter().take(b).collect();
    Ok(QueryBatch {
        diagnostics: picks
            .iter()
            .map(|&p| Diagnostic {
                score: Some(margins[p]),
                ..Diagnostic::bare(u[p])
            })
            .collect(),
        ids: picks.iter().map(|&p| u[p]).collect(),
        clusters: Vec::new(),
    })
}

/// Greedy k-center over the unlabeled embeddings with the labeled set as seed centers.
pub fn coreset_select(pool: &EmbeddedPool, state: &RoundState, b: usize) -> Result<QueryBatch> {
    let b = check(state, b)?;
    let labeled = state.labeled_ids();
    let all: Vec<usize> = labeled
        .iter()
        .chain(state.unlabeled_ids())
        .copied()
        .collect();
    let points = pool.embeddings().select_rows(&all);
    let seeds: Vec<usize> = (0..labeled.len()).collect();
    let picks = cluster::kcenter_greedy(&points, b, &seeds)?;
    Ok(QueryBatch::plain(
        picks.into_iter().map(|p| all[p]).collect(),
    ))
}

/// k-means++ sampling over hypothetical-label gradient embeddings.
pub fn badge_select(
    pool: &EmbeddedPool,
    state: &RoundState,
    head: &LinearHead,
    b: usize,
    seed: u64,
) -> Result<QueryBatch> {
    let b = check(state, b)?;
    let u = state.unlabeled_ids();
    let rows = par::map_slice(u, |&i| {
        gradient_unchecked(head, pool.embedding(i), GradTarget::Predicted)
    });
    let grads = Matrix::from_rows(&rows);
    let mut rng = seed::rng(seed);
    let picks = crate::cluster::kmeanspp_indices(&grads, b, &mut rng);
    Ok(QueryBatch::plain(picks.into_iter().map(|p| u[p]).collect()))
}

/// `1 / mean distance to the knn nearest cluster-mates`; 0 for singletons.
pub fn typicality(points: &Matrix, members: &[usize], knn: usize) -> Vec<f64> {
    let m = members.len();
    if m <= 1 {
        return vec![0.0; m];
    }
    let kk = knn.clamp(1, m - 1);
    par::map_slice(members, |&i| {
        let mut d: Vec<f64> = members
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| sq_dist(points.row(i), points.row(j)).sqrt())
            .collect();
        d.sort_by(f64::total_cmp);
        let mean = d[..kk].iter().sum::<f64>() / kk as f64;
        1.0 / mean
    })
}

/// Typical points of the largest clusters not yet covered by labels.
pub fn typiclust_select(
    pool: &EmbeddedPool,
    state: &RoundState,
    b: usize,
    knn: usize,
    seed: u64,
) -> Result<QueryBatch> {
    let b = check(state, b)?;
    if knn == 0 {
        return Err(Error::InvalidArgument("knn must be at least 1".into()));
    }
    let train = pool.train_ids();
    let points = pool.embeddings().select_rows(train);
    let k = (state.labeled_ids().len() + b).min(train.len());
    let model = cluster::kmeans(
        &points,
        k,
        seed,
        cluster::DEFAULT_MAX_ITER,
        cluster::DEFAULT_TOL,
    )?;
    let mut is_labeled = vec![false; pool.len()];
    for &i in state.labeled_ids() {
        is_labeled[i] = true;
    }
    let members = model.members();
    let mut labeled_in = vec![0usize; model.k];
    for (q, &c) in model.assignment.iter().enumerate() {
        labeled_in[c] += usize::from(is_labeled[train[q]]);
    }
    let mut ranked: Vec<usize> = (0..model.k)
        .filter(|&c| members[c].len() > labeled_in[c])
        .collect();
    ranked.sort_by(|&a, &c| {
        labeled_in[a]
            .cmp(&labeled_in[c])
            .then(members[c].len().cmp(&members[a].len()))
            .then(a.cmp(&c))
    });

    // typicality for every point (indexed by position in `train`)
    let mut typ = vec![0.0; train.len()];
    for m in &members {
        for (&q, t) in m.iter().zip(typicality(&points, m, knn)) {
            typ[q] = t;
        }
    }
    let open: Vec<Vec<usize>> = members
        .iter()
        .map(|m| {
            m.iter()
                .copied()
                .filter(|&q| !is_labeled[train[q]])
                .collect()
        })
        .collect();
    let picks = pick_round_robin(&ranked, &open, &typ, b);
    Ok(QueryBatch {
        ids: picks.iter().map(|&q| train[q]).collect(),
        diagnostics: picks
            .iter()
            .map(|&q| Diagnostic {
                id: train[q],
                cluster: Some(model.assignment[q]),
                score: Some(typ[q]),
                cluster_ratio: None,
            })
            .collect(),
        clusters: Vec::new(),
    })
}
