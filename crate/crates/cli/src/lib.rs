//! Command-line front end for training, evaluating and analysing GHQ agents.

pub mod commands;
pub mod manifest;

use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use ghq::validate::ValidateOptions;
use ghq::AlgorithmVariant;

use crate::manifest::{resolve, ManifestFile, Overrides, OUT_DIR_ENV};

#[derive(Debug, Parser)]
#[command(name = "ghq", version, about = "Grouped hybrid Q-learning for heterogeneous multi-agent combat")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one or more seeds and write metrics, checkpoints and the resolved manifest.
    Train(TrainArgs),
    /// Run greedy test episodes from a checkpoint.
    Eval(EvalArgs),
    /// Print difficulty metrics and the group structure of a map.
    Analyze(AnalyzeArgs),
    /// Run the numerical self-checks.
    Validate(ValidateArgs),
    /// Compare win-rate curves of finished runs.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Built-in map name or path to a map TOML file.
    #[arg(long)]
    pub map: Option<String>,
    #[arg(long, value_parser = parse_variant)]
    pub algo: Option<AlgorithmVariant>,
    /// Total environment steps per seed.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Output directory; relative paths are placed under $GHQ_OUT_DIR when set.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub lambda_mi: Option<f64>,
    #[arg(long)]
    pub lambda_td: Option<f64>,
    #[arg(long)]
    pub eval_interval: Option<u64>,
    /// Run manifest; command-line flags take precedence over its values.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Map to evaluate on; defaults to the map stored in the checkpoint.
    #[arg(long)]
    pub map: Option<String>,
    #[arg(long, default_value_t = 32)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write health and action heat-maps per ally unit type.
    #[arg(long)]
    pub heatmaps: bool,
    #[arg(long, default_value = "eval_out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub map: String,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Deliberately corrupt one analytic gradient to confirm the checker notices.
    #[arg(long)]
    pub flip_gradient_sign: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Run directories produced by `ghq train`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Directory for `curves.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> std::result::Result<AlgorithmVariant, String> {
    s.parse::<AlgorithmVariant>().map_err(|e| e.to_string())
}

/// Outcome of a command that finished without an error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    ChecksFailed,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::ChecksFailed => 1,
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<Status> {
    match cli.command {
        Command::Train(a) => {
            let file = match &a.manifest {
                Some(p) => ManifestFile::load(p)?,
                None => ManifestFile::default(),
            };
            let mut o = Overrides {
                map: a.map,
                algo: a.algo,
                seeds: a.seeds.or(a.seed.map(|s| vec![s])),
                out: a.out,
                train: toml::Table::new(),
            };
            if let Some(v) = a.steps {
                o.train.insert("total_steps".into(), toml::Value::Integer(v as i64));
            }
            if let Some(v) = a.lambda_mi {
                o.train.insert("lambda_mi".into(), toml::Value::Float(v));
            }
            if let Some(v) = a.lambda_td {
                o.train.insert("lambda_td".into(), toml::Value::Float(v));
            }
            if let Some(v) = a.eval_interval {
                o.train.insert("eval_interval".into(), toml::Value::Integer(v as i64));
            }
            let root = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
            let manifest = resolve(&file, &o, root.as_deref())?;
            let runs = commands::train(&manifest, err)?;
            for r in &runs {
                writeln!(out, "seed {} final WR {:.3} -> {}", r.seed, r.final_win_rate(), r.dir.display())?;
            }
            Ok(Status::Ok)
        }
        Command::Eval(a) => {
            let report = commands::eval(&commands::EvalRequest {
                checkpoint: &a.checkpoint,
                map: a.map.as_deref(),
                episodes: a.episodes,
                seed: a.seed,
                heatmaps: a.heatmaps,
                out: &a.out,
            })?;
            writeln!(out, "WR {:.3} ({}/{} won), mean return {:.3}", report.win_rate, report.wins, report.episodes, report.mean_return)?;
            for p in &report.written {
                writeln!(out, "wrote {}", p.display())?;
            }
            Ok(Status::Ok)
        }
        Command::Analyze(a) => {
            write!(out, "{}", commands::analyze(&a.map)?)?;
            Ok(Status::Ok)
        }
        Command::Validate(a) => {
            let opts = ValidateOptions { seed: a.seed, flip_gradient_sign: a.flip_gradient_sign, ..Default::default() };
            let (report, ok) = commands::validate(&opts)?;
            write!(out, "{report}")?;
            Ok(if ok { Status::Ok } else { Status::ChecksFailed })
        }
        Command::Compare(a) => {
            let cmp = commands::Comparison::load(&a.runs)?;
            write!(out, "{}", cmp.table()?)?;
            if let Some(dir) = &a.out {
                std::fs::create_dir_all(dir)?;
                let path = dir.join("curves.csv");
                std::fs::write(&path, cmp.curves_csv())?;
                writeln!(out, "wrote {}", path.display())?;
            }
            Ok(Status::Ok)
        }
    }
}
