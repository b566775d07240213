//! Embedding pools, long-tail synthesis, initial labeling and the label oracle.

mod io;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

pub use io::{
    encode_binary, ingest, ingest_auto, read_state, write_binary, write_state, write_text,
    PoolFormat,
};

/// A fixed pool of embedded examples with hidden labels and a held-out test split.
///
/// Immutable after construction; every constructor validates the invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPool {
    embeddings: Matrix,
    labels: Vec<usize>,
    n_classes: usize,
    train_ids: Vec<usize>,
    test_ids: Vec<usize>,
}

impl EmbeddedPool {
    /// Builds a pool; `test_ids` may be in any order and is stored sorted.
    pub fn new(
        embeddings: Matrix,
        labels: Vec<usize>,
        n_classes: usize,
        mut test_ids: Vec<usize>,
    ) -> Result<Self> {
        let n = embeddings.rows();
        if labels.len() != n {
            return Err(Error::InvalidPool(format!(
                "{} labels for {} embeddings",
                labels.len(),
                n
            )));
        }
        if n_classes == 0 {
            return Err(Error::InvalidPool("K must be at least 1".into()));
        }
        for (row, &y) in labels.iter().enumerate() {
            if y >= n_classes {
                return Err(Error::InvalidPool(format!(
                    "row {row}: label {y} out of range for K={n_classes}"
                )));
            }
        }
        for (row, x) in embeddings.iter_rows().enumerate() {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(row));
            }
        }
        test_ids.sort_unstable();
        let mut is_test = vec![false; n];
        for &i in &test_ids {
            if i >= n {
                return Err(Error::InvalidPool(format!("test id {i} out of range")));
            }
            if is_test[i] {
                return Err(Error::InvalidPool(format!("duplicate test id {i}")));
            }
            is_test[i] = true;
        }
        let train_ids: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
        Ok(Self {
            embeddings,
            labels,
            n_classes,
            train_ids,
            test_ids,
        })
    }

    /// Checks that every class occurs in both splits, which experiments need
    /// for balanced accuracy to be defined. Ingested fixtures may skip this.
    pub fn check_splits(&self) -> Result<()> {
        let train = self.train_sizes();
        let test = self.test_sizes();
        match (0..self.n_classes).find(|&k| train[k] == 0 || test[k] == 0) {
            Some(k) => Err(Error::InvalidPool(format!(
                "class {k} must occur in both the train and test splits"
            ))),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        self.embeddings.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn train_ids(&self) -> &[usize] {
        &self.train_ids
    }

    pub fn test_ids(&self) -> &[usize] {
        &self.test_ids
    }

    /// Number of training examples per class.
    pub fn train_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_classes];
        for &i in &self.train_ids {
            sizes[self.labels[i]] += 1;
        }
        sizes
    }

    pub fn test_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_classes];
        for &i in &self.test_ids {
            sizes[self.labels[i]] += 1;
        }
        sizes
    }
}

/// Active-learning state at one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundState {
    t: usize,
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    known: BTreeSet<usize>,
}

impl RoundState {
    /// Builds a state from a labeled set (kept in the given order). The
    /// unlabeled set is the rest of the training split in ascending order.
    pub fn new(pool: &EmbeddedPool, t: usize, labeled: Vec<usize>) -> Result<Self> {
        let mut mark = vec![false; pool.len()];
        for &i in pool.train_ids() {
            mark[i] = true;
        }
        let mut known = BTreeSet::new();
        for &i in &labeled {
            if i >= pool.len() || !mark[i] {
                return Err(Error::BadQuery(i));
            }
            mark[i] = false;
            known.insert(pool.label(i));
        }
        let unlabeled = pool
            .train_ids()
            .iter()
            .copied()
            .filter(|&i| mark[i])
            .collect();
        Ok(Self {
            t,
            labeled,
            unlabeled,
            known,
        })
    }

    /// 1-based round index.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Labeled ids in the order they were labeled.
    pub fn labeled_ids(&self) -> &[usize] {
        &self.labeled
    }

    /// Unlabeled ids in ascending order. Score sheets and strategy internals index by this order.
    pub fn unlabeled_ids(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn known_classes(&self) -> &BTreeSet<usize> {
        &self.known
    }

    pub fn n_known(&self) -> usize {
        self.known.len()
    }
}

/// Parameters of a synthetic long-tailed pool.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTailSpec {
    pub n_classes: usize,
    pub n0: usize,
    pub alpha: f64,
    pub dim: usize,
    pub separation: f64,
    pub seed: u64,
}

impl Default for LongTailSpec {
    fn default() -> Self {
        Self {
            n_classes: 100,
            n0: 200,
            alpha: 0.01,
            dim: 32,
            separation: 8.0,
            seed: 0,
        }
    }
}

impl LongTailSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2");
        }
        if self.n0 < 1 {
            return bad("n0 must be at least 1");
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 || self.alpha > 1.0 {
            return bad("alpha must lie in (0, 1]");
        }
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if !self.separation.is_finite() || self.separation < 0.0 {
            return bad("separation must be finite and nonnegative");
        }
        Ok(())
    }

    /// Training size of class `i`.
    pub fn class_size(&self, i: usize) -> usize {
        longtail_size(self.n0, self.alpha, i, self.n_classes)
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        (0..self.n_classes).map(|i| self.class_size(i)).collect()
    }
}

/// `max(1, floor(n0 * alpha^(i/n)))`.
pub fn longtail_size(n0: usize, alpha: f64, i: usize, n: usize) -> usize {
    let size = (n0 as f64 * alpha.powf(i as f64 / n as f64)).floor();
    (size as usize).max(1)
}

/// Stratified test allotment for a class with `n` training examples: `max(1, ceil(0.2 n))`.
pub fn test_allotment(n: usize) -> usize {
    n.div_ceil(5).max(1)
}

/// Samples a long-tailed Gaussian-blob pool.
///
/// Class centers are `separation / sqrt(2 d) * z` with `z ~ N(0, I)`, so two
/// centers are `separation` apart in root-mean-square. Points are the center
/// plus unit isotropic noise, rounded to `f32` so the pool survives the binary
/// file format unchanged. Example order is shuffled.
pub fn synth_longtail(spec: &LongTailSpec) -> Result<EmbeddedPool> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(spec.seed, seed::stream::SYNTH, 0));
    let d = spec.dim;
    let scale = spec.separation / (2.0 * d as f64).sqrt();
    let centers: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect()
        })
        .collect();

    // (label, is_test)
    let mut slots = Vec::new();
    for (k, n_train) in spec.class_sizes().into_iter().enumerate() {
        slots.extend(std::iter::repeat_n((k, false), n_train));
        slots.extend(std::iter::repeat_n((k, true), test_allotment(n_train)));
    }
    slots.shuffle(&mut rng);

    let mut data = Vec::with_capacity(slots.len() * d);
    let mut labels = Vec::with_capacity(slots.len());
    let mut test_ids = Vec::new();
    for (i, &(k, is_test)) in slots.iter().enumerate() {
        for c in &centers[k] {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push((c + z) as f32 as f64);
        }
        labels.push(k);
        if is_test {
            test_ids.push(i);
        }
    }
    EmbeddedPool::new(
        Matrix::from_vec(labels.len(), d, data),
        labels,
        spec.n_classes,
        test_ids,
    )
}

/// Draws the initial labeled batch of `b` examples spread evenly over the `k1` largest classes.
///
/// Classes are ranked by training size (ties to the smaller id); each gets
/// `b / k1` examples and the first `b % k1` of them one more.
pub fn init_label(pool: &EmbeddedPool, k1: usize, b: usize, seed: u64) -> Result<RoundState> {
    let k = pool.n_classes();
    if k1 == 0 || k1 > k {
        return Err(Error::InvalidArgument(format!(
            "k1 must lie in [1, {k}], got {k1}"
        )));
    }
    if b < k1 {
        return Err(Error::InvalidArgument(format!(
            "initial batch {b} is smaller than k1 = {k1}"
        )));
    }
    let sizes = pool.train_sizes();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &c| sizes[c].cmp(&sizes[a]).then(a.cmp(&c)));

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &i in pool.train_ids() {
        by_class[pool.label(i)].push(i);
    }

    let mut rng = seed::rng(seed);
    let mut labeled = Vec::with_capacity(b);
    for (rank, &class) in order.iter().take(k1).enumerate() {
        let quota = b / k1 + usize::from(rank < b % k1);
        let members = &by_class[class];
        if members.len() < quota {
            return Err(Error::InsufficientClass {
                class,
                available: members.len(),
                required: quota,
            });
        }
        labeled.extend(
            rand::seq::index::sample(&mut rng, members.len(), quota)
                .into_iter()
                .map(|j| members[j]),
        );
    }
    RoundState::new(pool, 1, labeled)
}

/// Reveals the labels of `query` and returns the next round's state.
pub fn oracle_label(
    pool: &EmbeddedPool,
    state: &RoundState,
    query: &[usize],
) -> Result<RoundState> {
    let mut open = vec![false; pool.len()];
    for &i in state.unlabeled_ids() {
        open[i] = true;
    }
    for &i in query {
        if i >= pool.len() || !open[i] {
            return Err(Error::BadQuery(i));
        }
        open[i] = false;
    }
    let mut labeled = state.labeled.clone();
    labeled.extend_from_slice(query);
    let mut known = state.known.clone();
    known.extend(query.iter().map(|&i| pool.label(i)));
    let unlabeled = state
        .unlabeled
        .iter()
        .copied()
        .filter(|&i| open[i])
        .collect();
    Ok(RoundState {
        t: state.t + 1,
        labeled,
        unlabeled,
        known,
    })
}

/// Labeled examples per class (length K).
pub fn class_counts(state: &RoundState, pool: &EmbeddedPool) -> Vec<usize> {
    let mut counts = vec![0; pool.n_classes()];
    for &i in state.labeled_ids() {
        counts[pool.label(i)] += 1;
    }
    counts
}
