//! Line-oriented `key = value` experiment configuration.
//!
//! ```text
//! # comments start with '#'
//! pool.source = synth          # or a path to a pool file
//! pool.n_classes = 100
//! pool.n0 = 200
//! pool.alpha = 0.01
//! pool.dim = 32
//! pool.separation = 8
//! pool.seed = 0
//! strategy.name = aloe, random # one or more strategies
//! strategy.ood = gradnorm
//! strategy.cluster = kmeans
//! strategy.multiplier = 2
//! strategy.knn = 20
//! strategy.logit_features = false
//! run.B = 50
//! run.T = 10
//! run.k1 = 3
//! run.seeds = 0..5             # or a list: 1, 2, 3
//! run.eval = every_round       # or final
//! train.learning_rate = 0.1
//! train.epochs = 100
//! train.minibatch = 64
//! train.weight_decay = 1e-4
//! ```
//!
//! Relative pool paths resolve against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::TrainConfig;
use crate::pool::LongTailSpec;
use crate::strategy::{StrategyConfig, StrategyKind};

#[derive(Debug, Clone, PartialEq)]
pub enum PoolSource {
    Synth(LongTailSpec),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    EveryRound,
    FinalOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub pool: PoolSource,
    /// One entry per strategy to run; they share every other setting.
    pub strategies: Vec<StrategyConfig>,
    pub batch_size: usize,
    pub rounds: usize,
    pub k1: usize,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub eval: EvalMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pool: PoolSource::Synth(LongTailSpec::default()),
            strategies: vec![StrategyConfig::default()],
            batch_size: 50,
            rounds: 10,
            k1: 3,
            train: TrainConfig::default(),
            seeds: vec![0],
            eval: EvalMode::EveryRound,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.rounds == 0 {
            return bad("run.T must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("run.B must be at least 1");
        }
        if self.k1 == 0 {
            return bad("run.k1 must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("run.seeds must name at least one seed");
        }
        if self.strategies.is_empty() {
            return bad("strategy.name must name at least one strategy");
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if self.strategies[..i].iter().any(|o| o.kind == s.kind) {
                return Err(Error::Config(format!(
                    "strategy.name lists `{}` twice",
                    s.kind.name()
                )));
            }
        }
        if let PoolSource::Synth(spec) = &self.pool {
            spec.validate()?;
            if self.k1 > spec.n_classes {
                return bad("run.k1 exceeds pool.n_classes");
            }
        }
        self.train.validate()
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut spec = LongTailSpec::default();
        let mut source: Option<String> = None;
        let mut names = vec![StrategyKind::Aloe];
        let mut shared = StrategyConfig::default();

        for (line, key, value) in entries(text)? {
            let err = |m: String| Error::Config(format!("line {line}: {m}"));
            match key {
                "pool.source" => source = Some(value.to_string()),
                "pool.n_classes" => spec.n_classes = val(line, value)?,
                "pool.n0" => spec.n0 = val(line, value)?,
                "pool.alpha" => spec.alpha = val(line, value)?,
                "pool.dim" => spec.dim = val(line, value)?,
                "pool.separation" => spec.separation = val(line, value)?,
                "pool.seed" => spec.seed = val(line, value)?,
                "strategy.name" => {
                    names = value
                        .split(',')
                        .map(|s| {
                            s.trim()
                                .parse::<StrategyKind>()
                                .map_err(|e| err(e.to_string()))
                        })
                        .collect::<Result<_>>()?;
                }
                "strategy.ood" => shared.ood = val(line, value)?,
                "strategy.cluster" => shared.cluster = val(line, value)?,
                "strategy.multiplier" => shared.multiplier = val(line, value)?,
                "strategy.knn" => shared.knn = val(line, value)?,
                "strategy.logit_features" => shared.logit_features = val(line, value)?,
                "run.B" => cfg.batch_size = val(line, value)?,
                "run.T" => cfg.rounds = val(line, value)?,
                "run.k1" => cfg.k1 = val(line, value)?,
                "run.seeds" => cfg.seeds = parse_seeds(value).map_err(&err)?,
                "run.eval" => {
                    cfg.eval = match value {
                        "every_round" => EvalMode::EveryRound,
                        "final" => EvalMode::FinalOnly,
                        v => return Err(err(format!("unknown eval mode `{v}`"))),
                    }
                }
                "train.learning_rate" => cfg.train.learning_rate = val(line, value)?,
                "train.epochs" => cfg.train.epochs = val(line, value)?,
                "train.minibatch" => cfg.train.minibatch = val(line, value)?,
                "train.weight_decay" => cfg.train.weight_decay = val(line, value)?,
                k => return Err(err(format!("unknown key `{k}`"))),
            }
        }
        cfg.pool = match source.as_deref() {
            None | Some("synth") => PoolSource::Synth(spec),
            Some(p) => PoolSource::File(base_dir.join(p)),
        };
        cfg.strategies = names
            .into_iter()
            .map(|kind| StrategyConfig {
                kind,
                ..shared.clone()
            })
            .collect();
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads the `pool.*` keys of a config-format file as a synthesis spec.
/// Other sections are ignored.
pub fn parse_longtail(text: &str) -> Result<LongTailSpec> {
    let mut spec = LongTailSpec::default();
    for (line, key, value) in entries(text)? {
        let err = |m: String| Error::Config(format!("line {line}: {m}"));
        match key {
            "pool.n_classes" => spec.n_classes = val(line, value)?,
            "pool.n0" => spec.n0 = val(line, value)?,
            "pool.alpha" => spec.alpha = val(line, value)?,
            "pool.dim" => spec.dim = val(line, value)?,
            "pool.separation" => spec.separation = val(line, value)?,
            "pool.seed" => spec.seed = val(line, value)?,
            "pool.source" if value == "synth" => {}
            k if k.starts_with("pool.") => return Err(err(format!("unsupported key `{k}`"))),
            _ => {}
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn entries(text: &str) -> Result<Vec<(usize, &str, &str)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        out.push((n + 1, k.trim(), v.trim()));
    }
    Ok(out)
}

fn val<T: FromStr>(line: usize, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    parse_value(v).map_err(|m| Error::Config(format!("line {line}: {m}")))
}

fn parse_value<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("bad value `{v}`: {e}"))
}

/// `a..b` (half-open) or a comma-separated list.
fn parse_seeds(v: &str) -> std::result::Result<Vec<u64>, String> {
    if let Some((a, b)) = v.split_once("..") {
        let a: u64 = parse_value(a.trim())?;
        let b: u64 = parse_value(b.trim())?;
        return Ok((a..b).collect());
    }
    v.split(',').map(|s| parse_value(s.trim())).collect()
}
