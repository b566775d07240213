//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use aloe::bench::{self, config, ExperimentConfig};
use aloe::model::{self, TrainConfig};
use aloe::ood::{self, OodKind};
use aloe::pool;
use aloe::Error;

#[derive(Parser)]
#[command(name = "aloe", version, about = "Open-world active learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Binary,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a long-tailed pool from the `pool.*` keys of a spec file.
    GenData {
        spec: PathBuf,
        out: PathBuf,
        #[arg(long, value_enum, default_value = "binary")]
        format: Format,
    },
    /// Run every trial of a config and write logs, tables and charts.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-aggregate the trial logs in a directory.
    Report {
        log_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a head on a saved round state and print the unlabeled OOD scores.
    Score {
        pool: PathBuf,
        state: PathBuf,
        #[arg(long)]
        ood: String,
        /// Config file whose `train.*` keys set the head's training.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the score sheet here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn workers() -> Result<usize, Error> {
    match std::env::var("ALOE_WORKERS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("ALOE_WORKERS must be a count, got `{v}`"))),
        _ => Ok(0),
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData { spec, out, format } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| Error::Io {
                path: spec.clone(),
                source: e,
            })?;
            let pool = pool::synth_longtail(&config::parse_longtail(&text)?)?;
            match format {
                Format::Binary => pool::write_binary(&pool, &out),
                Format::Text => pool::write_text(&pool, &out),
            }
        }
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let logs = bench::run_all(&cfg, workers()?)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            for log in &logs {
                write(&out.join(log.file_name()), &log.to_csv())?;
            }
            bench::emit_report(&bench::aggregate_all(&logs)?, &out)?;
            Ok(())
        }
        Command::Report { log_dir, out } => {
            let logs = bench::read_logs(&log_dir)?;
            bench::emit_report(&bench::aggregate_all(&logs)?, &out)?;
            Ok(())
        }
        Command::Score {
            pool: pool_path,
            state,
            ood: kind,
            config,
            out,
            seed,
        } => {
            let kind: OodKind = kind.parse()?;
            let train = match config {
                Some(c) => ExperimentConfig::from_file(c)?.train,
                None => TrainConfig::default(),
            };
            let p = pool::ingest_auto(&pool_path)?;
            let st = pool::read_state(&p, &state)?;
            let head = model::train(&p, &st, &TrainConfig { seed, ..train })?;
            let sheet = ood::score_state(kind, &head, &p, &st)?;
            match out {
                Some(path) => write(&path, &sheet.to_delimited()),
                None => {
                    print!("{}", sheet.to_delimited());
                    Ok(())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
