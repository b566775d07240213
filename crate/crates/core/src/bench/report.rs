//! Aggregation of trial logs into mean ± standard-error tables, and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::chart;
use super::experiment::TrialLog;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub strategy: String,
    pub budget: usize,
    pub acc_mean: f64,
    pub acc_se: f64,
    pub known_mean: f64,
    pub known_se: f64,
}

/// Rows sorted by strategy name, then budget.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    pub fn strategies(&self) -> Vec<&str> {
        let mut s: Vec<&str> = self.rows.iter().map(|r| r.strategy.as_str()).collect();
        s.dedup();
        s
    }

    pub fn series(&self, strategy: &str) -> Vec<&ReportRow> {
        self.rows
            .iter()
            .filter(|r| r.strategy == strategy)
            .collect()
    }

    /// `strategy,budget,mean,stderr` for the accuracy or n_known metric.
    pub fn to_csv(&self, metric: Metric) -> String {
        let mut s = String::from("strategy,budget,mean,stderr\n");
        for r in &self.rows {
            let (m, se) = metric.of(r);
            let _ = writeln!(s, "{},{},{},{}", r.strategy, r.budget, m, se);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    NKnown,
}

impl Metric {
    pub fn of(self, r: &ReportRow) -> (f64, f64) {
        match self {
            Metric::Accuracy => (r.acc_mean, r.acc_se),
            Metric::NKnown => (r.known_mean, r.known_se),
        }
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::NKnown => "n_known",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::Accuracy => "balanced accuracy",
            Metric::NKnown => "annotated classes",
        }
    }
}

/// Mean and standard error (sample sd / sqrt(n), 0 for n = 1). Values are
/// summed in sorted order so the result does not depend on input order.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mean = v.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    let var = dev.iter().sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Aggregates logs of a single strategy sharing one budget grid.
pub fn aggregate(logs: &[TrialLog]) -> Result<ReportTable> {
    let first = logs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no trial logs to aggregate".into()))?;
    let grid: Vec<usize> = first.rows.iter().map(|r| r.budget).collect();
    for log in logs {
        if log.strategy != first.strategy {
            return Err(Error::InvalidArgument(format!(
                "mixed strategies `{}` and `{}`",
                first.strategy, log.strategy
            )));
        }
        if log.rows.iter().map(|r| r.budget).ne(grid.iter().copied()) {
            return Err(Error::InvalidArgument(format!(
                "trial {} of `{}` has a different budget grid",
                log.seed, log.strategy
            )));
        }
    }
    let rows = grid
        .iter()
        .enumerate()
        .map(|(j, &budget)| {
            let acc: Vec<f64> = logs.iter().map(|l| l.rows[j].accuracy).collect();
            let known: Vec<f64> = logs.iter().map(|l| l.rows[j].n_known as f64).collect();
            let (acc_mean, acc_se) = mean_se(&acc);
            let (known_mean, known_se) = mean_se(&known);
            ReportRow {
                strategy: first.strategy.clone(),
                budget,
                acc_mean,
                acc_se,
                known_mean,
                known_se,
            }
        })
        .collect();
    Ok(ReportTable { rows })
}

/// Groups logs by strategy and aggregates each group.
pub fn aggregate_all(logs: &[TrialLog]) -> Result<ReportTable> {
    let mut groups: BTreeMap<&str, Vec<TrialLog>> = BTreeMap::new();
    for l in logs {
        groups
            .entry(l.strategy.as_str())
            .or_default()
            .push(l.clone());
    }
    if groups.is_empty() {
        return Err(Error::InvalidArgument("no trial logs to aggregate".into()));
    }
    let mut rows = Vec::new();
    for group in groups.values() {
        rows.extend(aggregate(group)?.rows);
    }
    Ok(ReportTable { rows })
}

/// Smallest recorded budget whose mean accuracy reaches `target`.
pub fn budget_to_reach(report: &ReportTable, strategy: &str, target: f64) -> Option<usize> {
    report
        .rows
        .iter()
        .filter(|r| r.strategy == strategy)
        .find(|r| r.acc_mean >= target)
        .map(|r| r.budget)
}

/// Writes `accuracy.csv`, `n_known.csv`, `accuracy.svg` and `n_known.svg` into `out_dir`.
pub fn emit_report(report: &ReportTable, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for metric in [Metric::Accuracy, Metric::NKnown] {
        let csv = out_dir.join(format!("{}.csv", metric.file_stem()));
        fs::write(&csv, report.to_csv(metric)).map_err(|e| Error::io(&csv, e))?;
        let svg = out_dir.join(format!("{}.svg", metric.file_stem()));
        fs::write(&svg, chart::line_chart(report, metric)).map_err(|e| Error::io(&svg, e))?;
        written.push(csv);
        written.push(svg);
    }
    Ok(written)
}
