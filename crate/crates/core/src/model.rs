//! Linear softmax head over fixed embeddings.
//!
//! The head is retrained from zero parameters every round (cold start) on the
//! labeled set, with one output per known class. Gradients are analytic:
//! for cross-entropy against a target distribution `q`,
//! `dL/dW = (p - q) x^T` and `dL/db = p - q`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::pool::{EmbeddedPool, RoundState};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    weights: Matrix,
    bias: Vec<f64>,
    class_map: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Posterior {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probs = softmax(&logits);
        Self { logits, probs }
    }

    /// Local index of the largest probability (ties to the lower index).
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Target distribution for [`head_gradient`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    Uniform,
    /// One-hot at a local output index.
    OneHot(usize),
    /// One-hot at the head's own argmax.
    Predicted,
}

impl LinearHead {
    pub fn new(weights: Matrix, bias: Vec<f64>, class_map: Vec<usize>) -> Result<Self> {
        let k = class_map.len();
        if k == 0 {
            return Err(Error::InvalidArgument(
                "head needs at least one class".into(),
            ));
        }
        if weights.rows() != k || bias.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: if weights.rows() != k {
                    weights.rows()
                } else {
                    bias.len()
                },
            });
        }
        let mut seen = class_map.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != k {
            return Err(Error::InvalidArgument(
                "duplicate class in class map".into(),
            ));
        }
        if !weights.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("non-finite head parameters".into()));
        }
        Ok(Self {
            weights,
            bias,
            class_map,
        })
    }

    pub fn zeros(dim: usize, class_map: Vec<usize>) -> Result<Self> {
        let k = class_map.len();
        Self::new(Matrix::zeros(k, dim), vec![0.0; k], class_map)
    }

    pub fn n_outputs(&self) -> usize {
        self.class_map.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    /// Length of the flattened `(W, b)` gradient.
    pub fn n_params(&self) -> usize {
        self.n_outputs() * (self.dim() + 1)
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Local output index to global class id.
    pub fn class_map(&self) -> &[usize] {
        &self.class_map
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter_rows()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, x) + b)
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.logits_unchecked(x))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Posterior> {
        Ok(Posterior::from_logits(self.logits(x)?))
    }

    /// Predicted global class id.
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        Ok(self.class_map[self.predict(x)?.argmax()])
    }

    /// Writes the checkpoint format: `"ALOEHEAD"`, u32 version (= 1), u32 k,
    /// u32 d, k u32 class ids, then `W` row-major and `b` as little-endian `f64`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        out.extend_from_slice(b"ALOEHEAD");
        for v in [1u32, self.n_outputs() as u32, self.dim() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &c in &self.class_map {
            out.extend_from_slice(&(c as u32).to_le_bytes());
        }
        for &w in self.weights.as_slice().iter().chain(&self.bias) {
            out.extend_from_slice(&w.to_le_bytes());
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let header = |msg: &str| Error::Header {
            path: path.to_path_buf(),
            msg: msg.into(),
        };
        if !bytes.starts_with(b"ALOEHEAD") {
            return Err(header("missing ALOEHEAD magic"));
        }
        let u32_at = |p: usize| -> Option<u32> {
            Some(u32::from_le_bytes(bytes.get(p..p + 4)?.try_into().ok()?))
        };
        let (version, k, d) = match (u32_at(8), u32_at(12), u32_at(16)) {
            (Some(v), Some(k), Some(d)) => (v, k as usize, d as usize),
            _ => return Err(header("truncated")),
        };
        if version != 1 {
            return Err(header(&format!("unsupported version {version}")));
        }
        let mut pos = 20;
        let expected = pos + 4 * k + 8 * k * (d + 1);
        if bytes.len() != expected {
            return Err(header(&format!(
                "expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let class_map: Vec<usize> = (0..k)
            .map(|j| u32_at(pos + 4 * j).unwrap() as usize)
            .collect();
        pos += 4 * k;
        let floats: Vec<f64> = bytes[pos..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (w, b) = floats.split_at(k * d);
        Self::new(Matrix::from_vec(k, d, w.to_vec()), b.to_vec(), class_map)
    }
}

/// Flattened cross-entropy gradient over `(W, b)`: `W` row-major, then `b`.
pub fn head_gradient(head: &LinearHead, x: &[f64], target: GradTarget) -> Result<Vec<f64>> {
    head.check_dim(x)?;
    if let GradTarget::OneHot(j) = target {
        if j >= head.n_outputs() {
            return Err(Error::InvalidArgument(format!(
                "one-hot target {j} out of range for {} outputs",
                head.n_outputs()
            )));
        }
    }
    Ok(gradient_unchecked(head, x, target))
}

pub(crate) fn residual(probs: &[f64], target: GradTarget) -> Vec<f64> {
    let k = probs.len();
    let mut r = probs.to_vec();
    match target {
        GradTarget::Uniform => {
            let u = 1.0 / k as f64;
            r.iter_mut().for_each(|v| *v -= u);
        }
        GradTarget::OneHot(j) => r[j] -= 1.0,
        GradTarget::Predicted => r[argmax(probs)] -= 1.0,
    }
    r
}

pub(crate) fn gradient_unchecked(head: &LinearHead, x: &[f64], target: GradTarget) -> Vec<f64> {
    let probs = softmax(&head.logits_unchecked(x));
    let r = residual(&probs, target);
    let mut g = Vec::with_capacity(head.n_params());
    for &rk in &r {
        g.extend(x.iter().map(|&xi| rk * xi));
    }
    g.extend_from_slice(&r);
    g
}

/// Minibatch gradient-descent settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 100,
            minibatch: 64,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(
                "learning_rate must be positive".into(),
            ));
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return Err(Error::InvalidArgument(
                "epochs and minibatch must be at least 1".into(),
            ));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(
                "weight_decay must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Trains a fresh head on the labeled set of `state`.
///
/// Outputs follow the known classes in ascending id order. The labeled ids are
/// sorted before shuffling, so the result depends only on the labeled set.
pub fn train(pool: &EmbeddedPool, state: &RoundState, cfg: &TrainConfig) -> Result<LinearHead> {
    cfg.validate()?;
    if state.labeled_ids().is_empty() {
        return Err(Error::InvalidArgument(
            "cannot train on an empty labeled set".into(),
        ));
    }
    let class_map: Vec<usize> = state.known_classes().iter().copied().collect();
    let mut local = vec![usize::MAX; pool.n_classes()];
    for (j, &c) in class_map.iter().enumerate() {
        local[c] = j;
    }
    let k = class_map.len();
    let d = pool.dim();
    let mut w = Matrix::zeros(k, d);
    let mut b = vec![0.0; k];

    let mut order = state.labeled_ids().to_vec();
    order.sort_unstable();
    let mut rng = seed::rng(cfg.seed);
    let mut gw = Matrix::zeros(k, d);
    let mut gb = vec![0.0; k];
    let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for chunk in order.chunks(cfg.minibatch) {
            for r in 0..k {
                gw.row_mut(r).fill(0.0);
            }
            gb.fill(0.0);
            for &i in chunk {
                let x = pool.embedding(i);
                let y = local[pool.label(i)];
                let logits: Vec<f64> = w
                    .iter_rows()
                    .zip(&b)
                    .map(|(wr, br)| dot(wr, x) + br)
                    .collect();
                let mut p = softmax(&logits);
                loss -= p[y].max(f64::MIN_POSITIVE).ln();
                p[y] -= 1.0;
                for (r, &pr) in p.iter().enumerate() {
                    if pr != 0.0 {
                        for (g, &xi) in gw.row_mut(r).iter_mut().zip(x) {
                            *g += pr * xi;
                        }
                    }
                    gb[r] += pr;
                }
            }
            let step = cfg.learning_rate / chunk.len() as f64;
            for r in 0..k {
                for (wv, &g) in w.row_mut(r).iter_mut().zip(gw.row(r)) {
                    *wv = decay * *wv - step * g;
                }
                b[r] -= step * gb[r];
            }
        }
        if !loss.is_finite() || !w.is_finite() {
            return Err(Error::Diverged { epoch });
        }
    }
    LinearHead::new(w, b, class_map)
}

/// Mean cross-entropy of `head` over the given examples (labels through the class map).
pub fn mean_cross_entropy(head: &LinearHead, pool: &EmbeddedPool, ids: &[usize]) -> f64 {
    let total: f64 = ids
        .iter()
        .map(|&i| {
            let p = softmax(&head.logits_unchecked(pool.embedding(i)));
            match head.class_map.iter().position(|&c| c == pool.label(i)) {
                Some(j) => -p[j].ln(),
                None => f64::INFINITY,
            }
        })
        .sum();
    total / ids.len() as f64
}
