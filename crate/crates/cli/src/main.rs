mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Settings;

/// Bad paths, unreadable configs and schema problems; exits with status 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

#[derive(Parser)]
#[command(name = "unifake", version, about = "Unified fake-news classifier experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split datasets, build the shared vocabulary, encode every split and report lengths.
    Prep(Common),
    /// Train one model on an encoded dataset written by `prep`.
    Train(TrainArgs),
    /// Shared-configuration search across datasets, then joint training.
    Unify(Common),
    /// Joint training with retained encoder-block subsets.
    Ablate(Common),
    /// Evaluate a checkpoint on an encoded split.
    Eval(EvalArgs),
    /// Write three synthetic marker-word datasets and a config for them.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn as_str(self) -> &'static str {
        match self {
            Switch::On => "on",
            Switch::Off => "off",
        }
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training batch size; also restricts batch-size sweeps to this value.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_seq_len: Option<usize>,
    #[arg(long, value_enum)]
    preprocess: Option<Switch>,
    /// Retained encoder blocks, 1-based, like `1,5,9`.
    #[arg(long)]
    blocks: Option<String>,
    #[arg(long, value_enum)]
    freeze_encoder: Option<Switch>,
    /// Largest accepted accuracy deficit against the baselines.
    #[arg(long)]
    threshold: Option<f64>,
}

impl Common {
    /// Config file (or defaults) with flag overrides applied.
    fn settings(&self) -> anyhow::Result<Settings> {
        let mut s = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::defaults(),
        };
        let mut set = |k: &str, v: Option<String>| match v {
            Some(v) => s.set(k, &v),
            None => Ok(()),
        };
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("batch_size", self.batch_size.map(|v| v.to_string()))?;
        set("batch_sizes", self.batch_size.map(|v| v.to_string()))?;
        set("epochs", self.epochs.map(|v| v.to_string()))?;
        set("max_seq_len", self.max_seq_len.map(|v| v.to_string()))?;
        set("preprocess", self.preprocess.map(|v| v.as_str().to_string()))?;
        set("blocks", self.blocks.clone())?;
        set("freeze_encoder", self.freeze_encoder.map(|v| v.as_str().to_string()))?;
        set("threshold", self.threshold.map(|v| v.to_string()))?;
        Ok(s)
    }

    fn out_dir(&self) -> anyhow::Result<PathBuf> {
        self.out.clone().ok_or_else(|| InputError("--out is required".into()).into())
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory of `prep`.
    #[arg(long)]
    data: PathBuf,
    /// Dataset name, or `combined` for the concatenation of all datasets.
    #[arg(long)]
    dataset: String,
    /// Continue from a `last.ckpt` written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many epochs in this invocation.
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Encoded split written by `prep` or `unify`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Documents per dataset.
    #[arg(long, default_value_t = 200)]
    docs: usize,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<InputError>() || cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<unifake::Error>() {
            use unifake::Error::*;
            return match e {
                Schema { .. } | Data { .. } | EmptyCorpus { .. } | Io { .. } | Csv { .. } | Format { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}

/// The cause chain on one line, skipping causes already quoted by their parent.
fn one_line(err: &anyhow::Error) -> String {
    let mut line = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !line.contains(&text) {
            if !line.is_empty() {
                line.push_str(": ");
            }
            line.push_str(&text);
        }
    }
    line.replace('\n', " ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prep(a) => commands::prep(&a),
        Command::Train(a) => commands::train(&a),
        Command::Unify(a) => commands::unify(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
