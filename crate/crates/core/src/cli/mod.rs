//! The `crl` command line: dataset generation, training, evaluation, trace
//! dumps and CSV export.

pub mod commands;
pub mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};

pub use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(
    name = "crl",
    version,
    about = "Compositional recursive learner for modular arithmetic"
)]
pub struct Cli {
    /// Directory under which default output locations are created.
    #[arg(long, global = true, env = "CRL_OUTPUT_ROOT", default_value = "runs")]
    pub output_root: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a dataset directory.
    Generate(GenerateArgs),
    /// Train one or more seeds and write checkpoints and eval CSVs.
    Train(TrainArgs),
    /// Evaluate a checkpoint on dataset splits or fresh longer expressions.
    Eval(EvalArgs),
    /// Dump rendered execution traces of a checkpoint.
    Trace(TraceArgs),
    /// Aggregate the seeds of a training run into percentile rows.
    Export(ExportArgs),
}

/// Experiment settings shared by `generate` and `train`. Flags override the
/// config file, which overrides the built-in defaults.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub seeds: Option<usize>,
    /// First seed; seeds run as seed, seed+1, ...
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub data_scale: Option<usize>,
    /// Expression lengths, as `2:5`.
    #[arg(long)]
    pub lengths: Option<String>,
    #[arg(long)]
    pub episodes: Option<u64>,
    #[arg(long)]
    pub no_curriculum: bool,
    /// Existing dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Any config key, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    /// The resolved config and the verbatim text of the config file, if any.
    pub fn resolve(&self) -> Result<(ExperimentConfig, Option<String>)> {
        let mut pairs = BTreeMap::new();
        let mut source = None;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            pairs = config::parse_pairs(&text)?;
            source = Some(text);
        }
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
            pairs.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut flag = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.insert(k.to_string(), v);
            }
        };
        flag("task", self.task.clone());
        flag("model", self.model.clone());
        flag("seeds", self.seeds.map(|v| v.to_string()));
        flag("seed", self.seed.map(|v| v.to_string()));
        flag("data_scale", self.data_scale.map(|v| v.to_string()));
        flag("lengths", self.lengths.clone());
        flag("episodes", self.episodes.map(|v| v.to_string()));
        flag(
            "curriculum",
            self.no_curriculum.then(|| "false".to_string()),
        );
        flag("data", self.data.as_ref().map(|p| p.display().to_string()));
        flag("output", self.out.as_ref().map(|p| p.display().to_string()));
        Ok((ExperimentConfig::from_pairs(&pairs)?, source))
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub force: bool,
    /// Seeds trained at the same time.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// No progress output on stderr.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory supplying the evaluation pools and language pairs.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Fresh expressions of these lengths (`6:100` or `6,10,20`) instead of
    /// dataset pools.
    #[arg(long)]
    pub lengths: Option<String>,
    /// Instances per (length, pair) for fresh expressions.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Only the language pairs held out from training.
    #[arg(long)]
    pub heldout_only: bool,
    /// Seed of the fresh expressions.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Seed column and evaluation rng; defaults to the checkpoint's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_per_group: Option<usize>,
    /// Output CSV; stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Restrict to these lengths, or generate fresh expressions of them when
    /// no dataset is given.
    #[arg(long)]
    pub lengths: Option<String>,
    /// Number of traces.
    #[arg(long, short, default_value_t = 5)]
    pub n: usize,
    /// Trace these expressions instead of sampling problems.
    #[arg(long)]
    pub expr: Vec<String>,
    /// Language pair for `--expr`, as `src>tgt`.
    #[arg(long)]
    pub pair: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample actions instead of taking the most likely one.
    #[arg(long)]
    pub sample: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Training run directory holding `seed_*` subdirectories.
    pub run: PathBuf,
    /// Output CSV; `<run>/aggregate.csv` when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    let root = cli.output_root;
    match cli.command {
        Command::Generate(a) => commands::generate(&a, &root),
        Command::Train(a) => commands::train(&a, &root),
        Command::Eval(a) => commands::eval(&a),
        Command::Trace(a) => commands::trace(&a),
        Command::Export(a) => commands::export(&a),
    }
}

/// Parse `args`, run, and return the process exit code. Failures print one
/// `error=<category> <message>` line on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error=usage {first}");
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!(
                "error={} {}",
                e.category(),
                e.to_string().replace('\n', " ")
            );
            1
        }
    }
}
