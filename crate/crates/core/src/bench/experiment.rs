//! The per-trial active-learning loop and its log format.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::bench::config::{EvalMode, ExperimentConfig, PoolSource};
use crate::error::{Error, Result};
use crate::model::{self, LinearHead, TrainConfig};
use crate::par;
use crate::pool::{self, EmbeddedPool};
use crate::seed::{self, stream};
use crate::strategy::{self, StrategyConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRow {
    pub t: usize,
    /// Labeled examples when the row's model was trained.
    pub budget: usize,
    /// NaN for rounds skipped under final-only evaluation.
    pub accuracy: f64,
    pub n_known: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialLog {
    pub strategy: String,
    pub seed: u64,
    pub rows: Vec<TrialRow>,
}

impl TrialLog {
    pub fn file_name(&self) -> String {
        format!("trial-{}-{}.csv", self.strategy, self.seed)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,budget,acc,n_known\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.t, r.budget, r.accuracy, r.n_known);
        }
        s
    }

    /// Parses a log written by [`to_csv`](Self::to_csv); strategy and seed come from the file name.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        let (strategy, seed) = name
            .strip_prefix("trial-")
            .and_then(|n| n.strip_suffix(".csv"))
            .and_then(|n| n.rsplit_once('-'))
            .and_then(|(s, seed)| Some((s.to_string(), seed.parse::<u64>().ok()?)))
            .ok_or_else(|| Error::Header {
                path: path.to_path_buf(),
                msg: "log file names look like trial-<strategy>-<seed>.csv".into(),
            })?;
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, 0, e))?;
        let mut rows = Vec::new();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(path, row, e))?;
            let field = |j: usize| rec.get(j).unwrap_or("").trim();
            let bad = |j: usize| Error::Format {
                path: path.to_path_buf(),
                row,
                msg: format!("bad field `{}`", field(j)),
            };
            rows.push(TrialRow {
                t: field(0).parse().map_err(|_| bad(0))?,
                budget: field(1).parse().map_err(|_| bad(1))?,
                accuracy: field(2).parse().map_err(|_| bad(2))?,
                n_known: field(3).parse().map_err(|_| bad(3))?,
            });
        }
        Ok(Self {
            strategy,
            seed,
            rows,
        })
    }
}

fn csv_err(path: &Path, row: usize, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        row,
        msg: e.to_string(),
    }
}

/// Every `trial-*.csv` in `dir`, sorted by file name.
pub fn read_logs(dir: impl AsRef<Path>) -> Result<Vec<TrialLog>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("trial-") && n.ends_with(".csv"))
        })
        .collect();
    paths.sort();
    paths.iter().map(TrialLog::read).collect()
}

/// Mean per-class recall over all K classes of the pool.
///
/// `predictions[j]` is the predicted global class of `pool.test_ids()[j]`.
/// A class with no test examples contributes 0.
pub fn balanced_accuracy(predictions: &[usize], pool: &EmbeddedPool) -> Result<f64> {
    let test = pool.test_ids();
    if predictions.len() != test.len() {
        return Err(Error::DimensionMismatch {
            expected: test.len(),
            got: predictions.len(),
        });
    }
    let k = pool.n_classes();
    let mut correct = vec![0usize; k];
    let mut total = vec![0usize; k];
    for (&i, &pred) in test.iter().zip(predictions) {
        let y = pool.label(i);
        total[y] += 1;
        correct[y] += usize::from(pred == y);
    }
    let recall_sum: f64 = (0..k)
        .filter(|&c| total[c] > 0)
        .map(|c| correct[c] as f64 / total[c] as f64)
        .sum();
    Ok(recall_sum / k as f64)
}

/// Predicted global class for every test example.
pub fn evaluate(head: &LinearHead, pool: &EmbeddedPool) -> Vec<usize> {
    par::map_slice(pool.test_ids(), |&i| {
        let logits = head.logits_unchecked(pool.embedding(i));
        head.class_map()[model::argmax(&logits)]
    })
}

pub fn load_pool(source: &PoolSource) -> Result<EmbeddedPool> {
    let pool = match source {
        PoolSource::Synth(spec) => pool::synth_longtail(spec)?,
        PoolSource::File(path) => pool::ingest_auto(path)?,
    };
    pool.check_splits()?;
    Ok(pool)
}

/// Runs one trial of the first configured strategy.
pub fn run_trial(cfg: &ExperimentConfig, seed: u64) -> Result<TrialLog> {
    cfg.validate()?;
    let pool = load_pool(&cfg.pool)?;
    run_trial_on(cfg, &cfg.strategies[0], &pool, seed)
}

/// One seeded trial: initial batch, then `T - 1` query rounds, evaluating
/// the cold-started head before each query. Stops early when the unlabeled
/// pool runs out.
pub fn run_trial_on(
    cfg: &ExperimentConfig,
    strategy: &StrategyConfig,
    pool: &EmbeddedPool,
    seed: u64,
) -> Result<TrialLog> {
    let mut state = pool::init_label(
        pool,
        cfg.k1,
        cfg.batch_size,
        seed::derive(seed, stream::INIT, 0),
    )?;
    let mut rows = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let train_cfg = TrainConfig {
            seed: seed::derive(seed, stream::TRAIN, round as u64),
            ..cfg.train.clone()
        };
        let head = model::train(pool, &state, &train_cfg)?;
        let last = round == cfg.rounds || state.unlabeled_ids().is_empty();
        let accuracy = if cfg.eval == EvalMode::EveryRound || last {
            balanced_accuracy(&evaluate(&head, pool), pool)?
        } else {
            f64::NAN
        };
        rows.push(TrialRow {
            t: round,
            budget: state.labeled_ids().len(),
            accuracy,
            n_known: state.n_known(),
        });
        if last {
            break;
        }
        let batch = strategy::select(
            strategy,
            pool,
            &state,
            &head,
            cfg.batch_size,
            seed::derive(seed, stream::STRATEGY, round as u64),
        )?;
        state = pool::oracle_label(pool, &state, &batch.ids)?;
    }
    Ok(TrialLog {
        strategy: strategy.kind.name().to_string(),
        seed,
        rows,
    })
}

/// Every (strategy, seed) trial of `cfg`, on up to `workers` threads
/// (0 = all cores). Output order is strategy-major, then seed, regardless of
/// the worker count.
pub fn run_all(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<TrialLog>> {
    cfg.validate()?;
    let pool = load_pool(&cfg.pool)?;
    let jobs: Vec<(&StrategyConfig, u64)> = cfg
        .strategies
        .iter()
        .flat_map(|s| cfg.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    par::with_workers(workers, || {
        par::map_slice(&jobs, |&(s, seed)| run_trial_on(cfg, s, &pool, seed))
    })
    .into_iter()
    .collect()
}
