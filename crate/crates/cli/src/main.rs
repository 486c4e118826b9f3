//! `seqgraph`: synthetic data generation, training, prediction, evaluation,
//! disconnected-reasoning probes and graph dumps.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seqgraph::corpus::{CorpusError, DatasetFormat};
use seqgraph::eval::EvalError;
use seqgraph::net::{Mode, NetError};
use seqgraph::seqcodec::PathVariant;
use seqgraph::train::TrainError;

/// A bad configuration value or a missing input.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser, Debug)]
#[command(name = "seqgraph", version, about = "Reasoning-path generation over local entity-passage graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-hop dataset.
    Gen(GenArgs),
    /// Train a model and write checkpoints.
    Train(TrainArgs),
    /// Decode predictions for a dataset.
    Predict(PredictArgs),
    /// Score predictions against a dataset.
    Eval(EvalArgs),
    /// Build disconnected-reasoning probes and score a model on them.
    Probe(ProbeArgs),
    /// Write the entity-passage graph edge list of every instance.
    GraphDump(GraphDumpArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    /// Output dataset file; entities go to `<stem>.entities.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of instances.
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated hop counts drawn per instance.
    #[arg(long, value_delimiter = ',')]
    hops: Option<Vec<usize>>,
    /// Instance seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed of the entity and word pools shared across splits.
    #[arg(long)]
    pool_seed: Option<u64>,
    /// Passages per instance, supports included.
    #[arg(long)]
    passages: Option<usize>,
    /// Sentences per passage.
    #[arg(long)]
    sentences: Option<usize>,
    /// Fraction of instances given an answer-leaking shortcut sentence.
    #[arg(long)]
    shortcut_rate: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Training dataset.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Held-out set whose loss is reported after training.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset format: hotpot or musique.
    #[arg(long)]
    format: Option<DatasetFormat>,
    /// Model: fid, pathfid or seqgraph.
    #[arg(long)]
    mode: Option<Mode>,
    /// Path variant: hotpot, da, sa, sia or dsia.
    #[arg(long)]
    variant: Option<PathVariant>,
    /// Optimiser steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Linear warmup steps.
    #[arg(long)]
    warmup: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Examples per optimiser step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initialisation and shuffling seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    common: Common,
    /// Model checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output JSONL file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset format: hotpot or musique.
    #[arg(long)]
    format: Option<DatasetFormat>,
    /// Beam width; 1 decodes greedily.
    #[arg(long)]
    beam: Option<usize>,
    /// Examples decoded together.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Maximum generated tokens.
    #[arg(long)]
    max_out_len: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Predictions JSONL file.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Predictions for the probes of `--data`; adds the DiRe block.
    #[arg(long)]
    probe_predictions: Option<PathBuf>,
    /// Report JSON; a CSV goes beside it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset format: hotpot or musique.
    #[arg(long)]
    format: Option<DatasetFormat>,
    /// Path variant: hotpot, da, sa, sia or dsia.
    #[arg(long)]
    variant: Option<PathVariant>,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model to decode the probes with.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset format: hotpot or musique.
    #[arg(long)]
    format: Option<DatasetFormat>,
    /// Beam width; 1 decodes greedily.
    #[arg(long)]
    beam: Option<usize>,
    /// Examples decoded together.
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args, Debug)]
struct GraphDumpArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output text file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset format: hotpot or musique.
    #[arg(long)]
    format: Option<DatasetFormat>,
    /// Dump only the first N instances.
    #[arg(long)]
    limit: Option<usize>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err
        .chain()
        .any(|c| matches!(c.downcast_ref::<TrainError>(), Some(TrainError::NonFinite { .. })))
    {
        return 4;
    }
    let invalid = err.chain().any(|c| {
        c.is::<Invalid>()
            || c.is::<CorpusError>()
            || c.is::<EvalError>()
            || c.is::<NetError>()
            || c.is::<toml::de::Error>()
            || matches!(
                c.downcast_ref::<TrainError>(),
                Some(TrainError::Config(_) | TrainError::EmptyDataset | TrainError::Net(_))
            )
    });
    if invalid {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Probe(a) => commands::probe(a),
        Command::GraphDump(a) => commands::graph_dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
