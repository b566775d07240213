//! Clustering used for batch diversity: k-means (k-means++ seeding),
//! mini-batch k-means, diagonal Gaussian mixture EM and greedy k-center.
//!
//! All distances are Euclidean. `k` is clamped to the number of points.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::matrix::{nearest, sq_dist, Matrix};
use crate::par;
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Matrix,
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares (k-means family, k-center) or log-likelihood (GMM).
    pub objective: f64,
    /// Objective after every iteration.
    pub trace: Vec<f64>,
    /// Per-component diagonal variances (GMM only).
    pub variances: Option<Matrix>,
}

impl ClusterModel {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }

    /// Member indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k];
        for (i, &a) in self.assignment.iter().enumerate() {
            m[a].push(i);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClusterKind {
    KMeans,
    MiniBatchKMeans,
    Gmm,
    KCenter,
}

impl ClusterKind {
    pub const ALL: [ClusterKind; 4] = [
        ClusterKind::KMeans,
        ClusterKind::MiniBatchKMeans,
        ClusterKind::Gmm,
        ClusterKind::KCenter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClusterKind::KMeans => "kmeans",
            ClusterKind::MiniBatchKMeans => "minibatch_kmeans",
            ClusterKind::Gmm => "gmm",
            ClusterKind::KCenter => "kcenter",
        }
    }
}

impl fmt::Display for ClusterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClusterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ClusterKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown clustering method `{s}`")))
    }
}

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;
/// EM stopping threshold on the change in per-point average log-likelihood.
pub const DEFAULT_EM_TOL: f64 = 1e-3;
pub const DEFAULT_BATCH: usize = 256;
pub const DEFAULT_REG: f64 = 1e-6;

/// Partitions `points` into (at most) `k` clusters with default parameters.
/// k-center partitions by nearest greedily chosen center.
pub fn partition(kind: ClusterKind, points: &Matrix, k: usize, seed: u64) -> Result<ClusterModel> {
    match kind {
        ClusterKind::KMeans => kmeans(points, k, seed, DEFAULT_MAX_ITER, DEFAULT_TOL),
        ClusterKind::MiniBatchKMeans => {
            minibatch_kmeans(points, k, seed, DEFAULT_BATCH, DEFAULT_MAX_ITER)
        }
        ClusterKind::Gmm => gmm_em(
            points,
            k,
            seed,
            DEFAULT_MAX_ITER,
            DEFAULT_EM_TOL,
            DEFAULT_REG,
        ),
        ClusterKind::KCenter => kcenter_partition(points, k),
    }
}

fn check_points(points: &Matrix, k: usize) -> Result<usize> {
    if points.rows() == 0 {
        return Err(Error::InvalidArgument("no points to cluster".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    for (r, row) in points.iter_rows().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(r));
        }
    }
    Ok(k.min(points.rows()))
}

/// Draws an index with probability proportional to `weights`; uniform over
/// `fallback` when all weights are zero.
pub(crate) fn weighted_draw(rng: &mut Rng, weights: &[f64], fallback: &[usize]) -> usize {
    let total: f64 = weights.iter().sum();
    if total > 0.0 && total.is_finite() {
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                last = i;
                if target < acc {
                    return i;
                }
            }
        }
        return last;
    }
    fallback[rng.random_range(0..fallback.len())]
}

/// k-means++ seeding: first center uniform, then D²-weighted draws.
pub(crate) fn kmeanspp_indices(points: &Matrix, k: usize, rng: &mut Rng) -> Vec<usize> {
    let n = points.rows();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = points
        .iter_rows()
        .map(|r| sq_dist(r, points.row(first)))
        .collect();
    while chosen.len() < k {
        let open: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
        let next = weighted_draw(rng, &d2, &open);
        chosen.push(next);
        taken[next] = true;
        let c = points.row(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), c));
        }
        d2[next] = 0.0;
    }
    chosen
}

fn assign(points: &Matrix, centroids: &Matrix) -> Vec<(usize, f64)> {
    par::map_range(points.rows(), |i| nearest(centroids, points.row(i)))
}

/// Moves the farthest point of a multi-member cluster into each empty cluster.
/// Returns whether anything changed.
fn repair_empty(points: &Matrix, centroids: &mut Matrix, assignment: &mut [(usize, f64)]) -> bool {
    let k = centroids.rows();
    let mut sizes = vec![0usize; k];
    for &(a, _) in assignment.iter() {
        sizes[a] += 1;
    }
    let mut changed = false;
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut best: Option<usize> = None;
        for (i, &(a, d)) in assignment.iter().enumerate() {
            if sizes[a] > 1 && best.is_none_or(|b| d > assignment[b].1) {
                best = Some(i);
            }
        }
        let Some(i) = best else { break };
        sizes[assignment[i].0] -= 1;
        sizes[c] = 1;
        assignment[i] = (c, 0.0);
        centroids.row_mut(c).copy_from_slice(points.row(i));
        changed = true;
    }
    changed
}

fn means_of(points: &Matrix, assignment: &[(usize, f64)], old: &Matrix) -> Matrix {
    let k = old.rows();
    let mut sums = Matrix::zeros(k, points.cols());
    let mut counts = vec![0usize; k];
    for (i, &(a, _)) in assignment.iter().enumerate() {
        counts[a] += 1;
        for (s, &x) in sums.row_mut(a).iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            sums.row_mut(c).copy_from_slice(old.row(c));
        } else {
            sums.row_mut(c).iter_mut().for_each(|s| *s /= n as f64);
        }
    }
    sums
}

fn finish(points: &Matrix, mut centroids: Matrix, trace: Vec<f64>) -> ClusterModel {
    let mut a = assign(points, &centroids);
    repair_empty(points, &mut centroids, &mut a);
    let objective: f64 = a.iter().map(|&(_, d)| d).sum();
    let mut trace = trace;
    trace.push(objective);
    ClusterModel {
        k: centroids.rows(),
        centroids,
        assignment: a.into_iter().map(|(c, _)| c).collect(),
        objective,
        trace,
        variances: None,
    }
}

/// Lloyd's algorithm from k-means++ seeds.
///
/// Stops when the assignment is stable, when no centroid moves more than
/// `tol`, or after `max_iter` iterations. The returned assignment is always
/// the nearest-centroid assignment for the returned centroids.
pub fn kmeans(
    points: &Matrix,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterModel> {
    let k = check_points(points, k)?;
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    let mut rng = seed::rng(seed);
    let init = kmeanspp_indices(points, k, &mut rng);
    let mut centroids = points.select_rows(&init);
    let mut trace = Vec::new();
    let mut prev: Option<Vec<usize>> = None;
    for _ in 0..max_iter {
        let mut a = assign(points, &centroids);
        let repaired = repair_empty(points, &mut centroids, &mut a);
        trace.push(a.iter().map(|&(_, d)| d).sum());
        let labels: Vec<usize> = a.iter().map(|&(c, _)| c).collect();
        if !repaired && prev.as_ref() == Some(&labels) {
            let objective = *trace.last().unwrap();
            return Ok(ClusterModel {
                k,
                centroids,
                assignment: labels,
                objective,
                trace,
                variances: None,
            });
        }
        let next = means_of(points, &a, &centroids);
        let moved = centroids
            .iter_rows()
            .zip(next.iter_rows())
            .map(|(a, b)| sq_dist(a, b))
            .fold(0.0, f64::max)
            .sqrt();
        centroids = next;
        prev = Some(labels);
        if moved < tol {
            break;
        }
    }
    Ok(finish(points, centroids, trace))
}

/// Mini-batch k-means with per-centroid `1 / count` step sizes and a final full assignment.
pub fn minibatch_kmeans(
    points: &Matrix,
    k: usize,
    seed: u64,
    batch: usize,
    max_iter: usize,
) -> Result<ClusterModel> {
    let k = check_points(points, k)?;
    if batch == 0 || max_iter == 0 {
        return Err(Error::InvalidArgument(
            "batch and max_iter must be at least 1".into(),
        ));
    }
    let n = points.rows();
    let mut rng = seed::rng(seed);
    let init = kmeanspp_indices(points, k, &mut rng);
    let mut centroids = points.select_rows(&init);
    let mut counts = vec![0usize; k];
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(max_iter + 1);
    for _ in 0..max_iter {
        let sample: &[usize] = if batch >= n {
            &order
        } else {
            order.partial_shuffle(&mut rng, batch);
            &order[..batch]
        };
        let nearest_of: Vec<(usize, f64)> = sample
            .iter()
            .map(|&i| nearest(&centroids, points.row(i)))
            .collect();
        trace.push(nearest_of.iter().map(|&(_, d)| d).sum());
        for (&i, &(c, _)) in sample.iter().zip(&nearest_of) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            for (m, &x) in centroids.row_mut(c).iter_mut().zip(points.row(i)) {
                *m += eta * (x - *m);
            }
        }
    }
    Ok(finish(points, centroids, trace))
}

/// Diagonal-covariance Gaussian mixture fitted by EM, initialized from k-means.
///
/// Variances are the responsibility-weighted per-dimension variances floored at `reg`.
/// `trace` holds the log-likelihood before every M step and after the last one.
/// Iteration stops once the per-point average log-likelihood moves by less than `tol`.
pub fn gmm_em(
    points: &Matrix,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
    reg: f64,
) -> Result<ClusterModel> {
    if !(reg > 0.0 && reg.is_finite()) {
        return Err(Error::InvalidArgument("reg must be positive".into()));
    }
    let init = kmeans(points, k, seed, max_iter.max(1), DEFAULT_TOL)?;
    let k = init.k;
    let n = points.rows();
    let d = points.cols();
    let mut means = init.centroids.clone();
    let mut vars = Matrix::zeros(k, d);
    let mut weights = vec![0.0; k];
    {
        let sizes = init.sizes();
        for (i, &c) in init.assignment.iter().enumerate() {
            for (j, &x) in points.row(i).iter().enumerate() {
                let dx = x - means[(c, j)];
                vars[(c, j)] += dx * dx;
            }
        }
        for c in 0..k {
            weights[c] = sizes[c] as f64 / n as f64;
            for j in 0..d {
                vars[(c, j)] = (vars[(c, j)] / sizes[c].max(1) as f64).max(reg);
            }
        }
    }

    let mut trace = Vec::new();
    let mut resp = Matrix::zeros(n, k);
    for _ in 0..max_iter {
        let ll = e_step(points, &means, &vars, &weights, &mut resp);
        trace.push(ll);
        // Convergence is judged on the per-point average log-likelihood.
        if trace.len() >= 2 && (ll - trace[trace.len() - 2]).abs() < tol * n as f64 {
            break;
        }
        // Row-major accumulation; responsibilities that underflowed to zero are skipped.
        let mut nks = vec![0.0; k];
        let mut mus = Matrix::zeros(k, d);
        for i in 0..n {
            let x = points.row(i);
            for (c, &r) in resp.row(i).iter().enumerate() {
                if r == 0.0 {
                    continue;
                }
                nks[c] += r;
                for (m, &xj) in mus.row_mut(c).iter_mut().zip(x) {
                    *m += r * xj;
                }
            }
        }
        for (c, &nk) in nks.iter().enumerate() {
            mus.row_mut(c).iter_mut().for_each(|m| *m /= nk);
        }
        let mut var_acc = Matrix::zeros(k, d);
        for i in 0..n {
            let x = points.row(i);
            for (c, &r) in resp.row(i).iter().enumerate() {
                if r == 0.0 {
                    continue;
                }
                let mu = mus.row(c);
                for ((v, &xj), &m) in var_acc.row_mut(c).iter_mut().zip(x).zip(mu) {
                    *v += r * (xj - m) * (xj - m);
                }
            }
        }
        let updates: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..k)
            .map(|c| {
                let nk = nks[c];
                let var = var_acc.row(c).iter().map(|v| (v / nk).max(reg)).collect();
                (nk, mus.row(c).to_vec(), var)
            })
            .collect();
        for (c, (nk, mu, var)) in updates.into_iter().enumerate() {
            if nk.is_nan() || nk <= 1e-300 || mu.iter().any(|m| !m.is_finite()) {
                return Err(Error::Collapse(c));
            }
            weights[c] = nk / n as f64;
            means.row_mut(c).copy_from_slice(&mu);
            vars.row_mut(c).copy_from_slice(&var);
        }
    }
    let ll = e_step(points, &means, &vars, &weights, &mut resp);
    if trace.last() != Some(&ll) {
        trace.push(ll);
    }
    let assignment = (0..n).map(|i| crate::model::argmax(resp.row(i))).collect();
    Ok(ClusterModel {
        k,
        centroids: means,
        assignment,
        objective: ll,
        trace,
        variances: Some(vars),
    })
}

/// Fills `resp` with responsibilities and returns the total log-likelihood.
fn e_step(
    points: &Matrix,
    means: &Matrix,
    vars: &Matrix,
    weights: &[f64],
    resp: &mut Matrix,
) -> f64 {
    let k = means.rows();
    let d = points.cols();
    let log_norm: Vec<f64> = (0..k)
        .map(|c| {
            let log_det: f64 = vars.row(c).iter().map(|v| v.ln()).sum();
            weights[c].ln() - 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det)
        })
        .collect();
    let prec: Vec<f64> = vars.as_slice().iter().map(|v| 1.0 / v).collect();
    let rows = par::map_range(points.rows(), |i| {
        let x = points.row(i);
        let logp: Vec<f64> = (0..k)
            .map(|c| {
                let q: f64 = x
                    .iter()
                    .zip(means.row(c))
                    .zip(&prec[c * d..(c + 1) * d])
                    .map(|((xi, mi), pi)| (xi - mi) * (xi - mi) * pi)
                    .sum();
                log_norm[c] - 0.5 * q
            })
            .collect();
        let m = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logp.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        (
            logp.into_iter()
                .map(|l| (l - lse).exp())
                .collect::<Vec<_>>(),
            lse,
        )
    });
    let mut ll = 0.0;
    for (i, (r, lse)) in rows.into_iter().enumerate() {
        resp.row_mut(i).copy_from_slice(&r);
        ll += lse;
    }
    ll
}

/// Greedy farthest-first selection.
///
/// `seed_centers` count as already chosen; with none, the first pick is index 0.
/// Returns the picks in selection order. Ties go to the lower index.
pub fn kcenter_greedy(
    points: &Matrix,
    budget: usize,
    seed_centers: &[usize],
) -> Result<Vec<usize>> {
    let n = points.rows();
    if n == 0 || budget == 0 {
        return Err(Error::InvalidArgument(
            "k-center needs points and a positive budget".into(),
        ));
    }
    let mut chosen = vec![false; n];
    for &s in seed_centers {
        if s >= n {
            return Err(Error::InvalidArgument(format!(
                "seed center {s} out of range"
            )));
        }
        chosen[s] = true;
    }
    let open = chosen.iter().filter(|&&c| !c).count();
    if budget > open {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} exceeds the {open} unchosen points"
        )));
    }
    let mut min_d = vec![f64::INFINITY; n];
    let update = |min_d: &mut [f64], c: usize| {
        let center = points.row(c);
        let dists = par::map_range(n, |i| sq_dist(points.row(i), center));
        for (m, d) in min_d.iter_mut().zip(dists) {
            *m = m.min(d);
        }
    };
    for (i, &c) in chosen.iter().enumerate() {
        if c {
            update(&mut min_d, i);
        }
    }
    let mut picks = Vec::with_capacity(budget);
    for _ in 0..budget {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !chosen[i] && best.is_none_or(|b| min_d[i] > min_d[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("budget checked against open points");
        chosen[b] = true;
        picks.push(b);
        update(&mut min_d, b);
    }
    Ok(picks)
}

/// Covering radius: max over points of the distance to the nearest center.
pub fn covering_radius(points: &Matrix, centers: &[usize]) -> f64 {
    points
        .iter_rows()
        .map(|p| {
            centers
                .iter()
                .map(|&c| sq_dist(p, points.row(c)))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        .sqrt()
}

/// Partition by nearest of `k` greedily chosen k-center points.
pub fn kcenter_partition(points: &Matrix, k: usize) -> Result<ClusterModel> {
    let k = check_points(points, k)?;
    let centers = kcenter_greedy(points, k, &[])?;
    let centroids = points.select_rows(&centers);
    let a = assign(points, &centroids);
    let objective = a.iter().map(|&(_, d)| d).sum();
    Ok(ClusterModel {
        k,
        centroids,
        assignment: a.into_iter().map(|(c, _)| c).collect(),
        objective,
        trace: vec![objective],
        variances: None,
    })
}
