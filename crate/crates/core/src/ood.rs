//! OOD scoring functions and the 95%-TPR threshold.
//!
//! Every score follows one orientation: higher means more likely
//! out-of-distribution. Margin and GradNorm are negated to fit it.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, sq_dist, Matrix};
use crate::model::{gradient_unchecked, GradTarget, LinearHead, Posterior};
use crate::par;
use crate::pool::{EmbeddedPool, RoundState};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OodKind {
    Energy,
    Margin,
    GradNorm,
    Mahalanobis,
    GradProj,
}

impl OodKind {
    pub const ALL: [OodKind; 5] = [
        OodKind::Energy,
        OodKind::Margin,
        OodKind::GradNorm,
        OodKind::Mahalanobis,
        OodKind::GradProj,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OodKind::Energy => "energy",
            OodKind::Margin => "margin",
            OodKind::GradNorm => "gradnorm",
            OodKind::Mahalanobis => "mahalanobis",
            OodKind::GradProj => "gradproj",
        }
    }
}

impl fmt::Display for OodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OodKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        OodKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown OOD score `{s}`")))
    }
}

/// Scores of the unlabeled pool (in `RoundState::unlabeled_ids` order) plus the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSheet {
    pub kind: OodKind,
    pub ids: Vec<usize>,
    pub scores: Vec<f64>,
    pub tau: f64,
}

impl ScoreSheet {
    /// Whether position `i` (not example id) is flagged OOD.
    pub fn is_ood(&self, i: usize) -> bool {
        self.scores[i] > self.tau
    }

    pub fn flagged_count(&self) -> usize {
        self.scores.iter().filter(|&&s| s > self.tau).count()
    }

    /// `# kind=<kind> tau=<tau>` followed by `id,score,flagged` rows.
    pub fn to_delimited(&self) -> String {
        use std::fmt::Write;
        let mut s = format!("# kind={} tau={}\nid,score,flagged\n", self.kind, self.tau);
        for (j, (&id, &score)) in self.ids.iter().zip(&self.scores).enumerate() {
            let _ = writeln!(s, "{id},{score},{}", u8::from(self.is_ood(j)));
        }
        s
    }
}

/// `-log sum_k exp(logit_k)`, computed stably.
pub fn score_energy(post: &Posterior) -> f64 {
    -log_sum_exp(&post.logits)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|&z| (z - m).exp()).sum::<f64>().ln()
}

/// `-(p_max - p_second)`, with `p_second = 0` for a one-class head.
pub fn score_margin(post: &Posterior) -> f64 {
    let (mut first, mut second) = (f64::NEG_INFINITY, 0.0);
    for &p in &post.probs {
        if p > first {
            second = if first.is_finite() { first } else { 0.0 };
            first = p;
        } else if p > second {
            second = p;
        }
    }
    -(first - second)
}

/// Negated L2 norm of the uniform-target cross-entropy gradient over `(W, b)`.
pub fn score_gradnorm(head: &LinearHead, x: &[f64]) -> Result<f64> {
    head.logits(x)?;
    Ok(gradnorm_unchecked(head, x))
}

fn gradnorm_unchecked(head: &LinearHead, x: &[f64]) -> f64 {
    -norm(&gradient_unchecked(head, x, GradTarget::Uniform))
}

/// How much ridge to add to the pooled covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shrinkage {
    /// `1e-3 * trace(cov) / d`, floored at [`MIN_SHRINKAGE`].
    Auto,
    Fixed(f64),
}

pub const MIN_SHRINKAGE: f64 = 1e-6;

/// Per-class means and the pooled within-class covariance of the labeled set.
#[derive(Debug, Clone)]
pub struct ClassStats {
    classes: Vec<usize>,
    means: Matrix,
    cov: Matrix,
    shrinkage: f64,
    chol_lower: DMatrix<f64>,
    white_means: Matrix,
}

impl ClassStats {
    /// Global class ids, ascending; rows of [`means`](Self::means) follow this order.
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    /// Unregularized pooled covariance.
    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn shrinkage(&self) -> f64 {
        self.shrinkage
    }

    fn whiten(&self, z: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(z);
        let y = self
            .chol_lower
            .solve_lower_triangular(&v)
            .expect("cholesky factor has a positive diagonal");
        y.as_slice().to_vec()
    }
}

pub fn fit_class_stats(
    pool: &EmbeddedPool,
    state: &RoundState,
    shrinkage: Shrinkage,
) -> Result<ClassStats> {
    let classes: Vec<usize> = state.known_classes().iter().copied().collect();
    if classes.is_empty() {
        return Err(Error::InvalidArgument("no labeled classes".into()));
    }
    let d = pool.dim();
    let mut local = vec![usize::MAX; pool.n_classes()];
    for (j, &c) in classes.iter().enumerate() {
        local[c] = j;
    }
    let mut means = Matrix::zeros(classes.len(), d);
    let mut counts = vec![0usize; classes.len()];
    for &i in state.labeled_ids() {
        let j = local[pool.label(i)];
        counts[j] += 1;
        for (m, &x) in means.row_mut(j).iter_mut().zip(pool.embedding(i)) {
            *m += x;
        }
    }
    for (j, &n) in counts.iter().enumerate() {
        means.row_mut(j).iter_mut().for_each(|m| *m /= n as f64);
    }
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for &i in state.labeled_ids() {
        let mu = means.row(local[pool.label(i)]);
        for ((c, &x), &m) in centered.iter_mut().zip(pool.embedding(i)).zip(mu) {
            *c = x - m;
        }
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    let denom = (state.labeled_ids().len().saturating_sub(classes.len())).max(1) as f64;
    cov = Matrix::from_vec(
        d,
        d,
        cov.into_vec().into_iter().map(|v| v / denom).collect(),
    );

    let eps = match shrinkage {
        Shrinkage::Auto => {
            let trace: f64 = (0..d).map(|a| cov[(a, a)]).sum();
            (1e-3 * trace / d as f64).max(MIN_SHRINKAGE)
        }
        Shrinkage::Fixed(e) if e.is_finite() && e >= 0.0 => e,
        Shrinkage::Fixed(e) => {
            return Err(Error::InvalidArgument(format!("bad shrinkage {e}")));
        }
    };
    let reg = DMatrix::from_fn(d, d, |a, b| cov[(a, b)] + if a == b { eps } else { 0.0 });
    let chol = nalgebra::Cholesky::new(reg).ok_or(Error::Factorization(eps))?;
    let mut stats = ClassStats {
        classes,
        means,
        cov,
        shrinkage: eps,
        chol_lower: chol.l(),
        white_means: Matrix::zeros(0, 0),
    };
    let white: Vec<Vec<f64>> = stats.means.iter_rows().map(|m| stats.whiten(m)).collect();
    stats.white_means = Matrix::from_rows(&white);
    Ok(stats)
}

/// Minimum over known classes of the squared Mahalanobis distance to the class mean.
pub fn score_mahalanobis(stats: &ClassStats, z: &[f64]) -> Result<f64> {
    if z.len() != stats.means.cols() {
        return Err(Error::DimensionMismatch {
            expected: stats.means.cols(),
            got: z.len(),
        });
    }
    Ok(mahalanobis_unchecked(stats, z))
}

fn mahalanobis_unchecked(stats: &ClassStats, z: &[f64]) -> f64 {
    let y = stats.whiten(z);
    stats
        .white_means
        .iter_rows()
        .map(|m| sq_dist(m, &y))
        .fold(f64::INFINITY, f64::min)
}

pub const POWER_TOL: f64 = 1e-8;
pub const POWER_MAX_ITER: usize = 1000;

/// Centering vector and top right singular direction of a gradient stack.
#[derive(Debug, Clone, PartialEq)]
pub struct GradProjection {
    pub mean: Vec<f64>,
    /// `None` when the centered stack is all zeros.
    pub direction: Option<Vec<f64>>,
}

impl GradProjection {
    /// `|<g - mean, v>|`, or 0 for a degenerate stack.
    pub fn score(&self, g: &[f64]) -> f64 {
        match &self.direction {
            Some(v) => g
                .iter()
                .zip(&self.mean)
                .zip(v)
                .map(|((gi, mi), vi)| (gi - mi) * vi)
                .sum::<f64>()
                .abs(),
            None => 0.0,
        }
    }
}

/// Fits the projection on the rows of `grads` by power iteration on `AᵀA`,
/// where `A` is the row-centered stack.
pub fn fit_gradproj(grads: &Matrix) -> GradProjection {
    let n = grads.rows();
    let p = grads.cols();
    let mut mean = vec![0.0; p];
    for row in grads.iter_rows() {
        for (m, &g) in mean.iter_mut().zip(row) {
            *m += g;
        }
    }
    if n > 0 {
        mean.iter_mut().for_each(|m| *m /= n as f64);
    }
    let mut centered = grads.clone();
    for r in 0..n {
        for (c, &m) in centered.row_mut(r).iter_mut().zip(&mean) {
            *c -= m;
        }
    }
    let frob: f64 = centered.as_slice().iter().map(|v| v * v).sum();
    if n == 0 || p == 0 || frob == 0.0 {
        return GradProjection {
            mean,
            direction: None,
        };
    }

    let mut rng = seed::rng(0x6772_6164);
    let mut v: Vec<f64> = (0..p)
        .map(|_| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng))
        .collect();
    normalize(&mut v);
    let mut av = vec![0.0; n];
    let mut w = vec![0.0; p];
    for _ in 0..POWER_MAX_ITER {
        for (r, a) in av.iter_mut().enumerate() {
            *a = dot(centered.row(r), &v);
        }
        w.fill(0.0);
        for (r, &a) in av.iter().enumerate() {
            for (wi, &x) in w.iter_mut().zip(centered.row(r)) {
                *wi += a * x;
            }
        }
        let lambda = norm(&w);
        if !(lambda > 0.0 && lambda.is_finite()) {
            return GradProjection {
                mean,
                direction: None,
            };
        }
        w.iter_mut().for_each(|x| *x /= lambda);
        canonical_sign(&mut w);
        let delta = sq_dist(&w, &v).sqrt();
        std::mem::swap(&mut v, &mut w);
        if delta < POWER_TOL {
            break;
        }
    }
    GradProjection {
        mean,
        direction: Some(v),
    }
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    v.iter_mut().for_each(|x| *x /= n);
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
fn canonical_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn predicted_gradients(head: &LinearHead, pool: &EmbeddedPool, ids: &[usize]) -> Matrix {
    let rows = par::map_slice(ids, |&i| {
        gradient_unchecked(head, pool.embedding(i), GradTarget::Predicted)
    });
    let mut data = Vec::with_capacity(ids.len() * head.n_params());
    for r in rows {
        data.extend(r);
    }
    Matrix::from_vec(ids.len(), head.n_params(), data)
}

/// Gradient-projection scores for `ids` plus the fitted projection.
pub fn score_gradproj(
    head: &LinearHead,
    pool: &EmbeddedPool,
    ids: &[usize],
) -> Result<(Vec<f64>, GradProjection)> {
    if head.dim() != pool.dim() {
        return Err(Error::DimensionMismatch {
            expected: head.dim(),
            got: pool.dim(),
        });
    }
    let grads = predicted_gradients(head, pool, ids);
    let proj = fit_gradproj(&grads);
    let scores = grads.iter_rows().map(|g| proj.score(g)).collect();
    Ok((scores, proj))
}

/// Nearest-rank 95th percentile: the `ceil(0.95 m)`-th smallest score.
pub fn fit_threshold(labeled_scores: &[f64]) -> Result<f64> {
    let m = labeled_scores.len();
    if m == 0 {
        return Err(Error::InvalidArgument(
            "no labeled scores to calibrate on".into(),
        ));
    }
    if labeled_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite labeled score".into()));
    }
    let mut sorted = labeled_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (95 * m).div_ceil(100);
    Ok(sorted[rank - 1])
}

fn score_ids(
    kind: OodKind,
    head: &LinearHead,
    stats: Option<&ClassStats>,
    pool: &EmbeddedPool,
    ids: &[usize],
) -> Vec<f64> {
    par::map_slice(ids, |&i| {
        let x = pool.embedding(i);
        match kind {
            OodKind::Energy => score_energy(&Posterior::from_logits(head.logits_unchecked(x))),
            OodKind::Margin => score_margin(&Posterior::from_logits(head.logits_unchecked(x))),
            OodKind::GradNorm => gradnorm_unchecked(head, x),
            OodKind::Mahalanobis => mahalanobis_unchecked(stats.expect("checked by caller"), x),
            OodKind::GradProj => unreachable!("gradproj is scored jointly"),
        }
    })
}

/// Scores the unlabeled pool and fits τ on the labeled scores.
///
/// `stats` must be present exactly when `kind` is Mahalanobis. For gradproj the
/// projection is fit on the unlabeled gradients and labeled examples are scored
/// through the same centering and direction.
pub fn score_pool(
    kind: OodKind,
    head: &LinearHead,
    stats: Option<&ClassStats>,
    pool: &EmbeddedPool,
    state: &RoundState,
) -> Result<ScoreSheet> {
    if head.dim() != pool.dim() {
        return Err(Error::DimensionMismatch {
            expected: head.dim(),
            got: pool.dim(),
        });
    }
    match (kind, stats) {
        (OodKind::Mahalanobis, None) => {
            return Err(Error::InvalidArgument(
                "mahalanobis scoring needs class stats".into(),
            ))
        }
        (OodKind::Mahalanobis, Some(s)) if s.means.cols() != pool.dim() => {
            return Err(Error::DimensionMismatch {
                expected: pool.dim(),
                got: s.means.cols(),
            })
        }
        (OodKind::Mahalanobis, Some(_)) | (_, None) => {}
        (_, Some(_)) => {
            return Err(Error::InvalidArgument(format!(
                "{kind} scoring takes no class stats"
            )))
        }
    }
    let unlabeled = state.unlabeled_ids();
    let labeled = state.labeled_ids();
    let (scores, labeled_scores) = if kind == OodKind::GradProj {
        let (scores, proj) = score_gradproj(head, pool, unlabeled)?;
        let lab = predicted_gradients(head, pool, labeled);
        (scores, lab.iter_rows().map(|g| proj.score(g)).collect())
    } else {
        (
            score_ids(kind, head, stats, pool, unlabeled),
            score_ids(kind, head, stats, pool, labeled),
        )
    };
    let tau = fit_threshold(&labeled_scores)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite {kind} score")));
    }
    Ok(ScoreSheet {
        kind,
        ids: unlabeled.to_vec(),
        scores,
        tau,
    })
}

/// [`score_pool`] that fits Mahalanobis class stats (auto shrinkage) when needed.
pub fn score_state(
    kind: OodKind,
    head: &LinearHead,
    pool: &EmbeddedPool,
    state: &RoundState,
) -> Result<ScoreSheet> {
    if kind == OodKind::Mahalanobis {
        let stats = fit_class_stats(pool, state, Shrinkage::Auto)?;
        score_pool(kind, head, Some(&stats), pool, state)
    } else {
        score_pool(kind, head, None, pool, state)
    }
}
