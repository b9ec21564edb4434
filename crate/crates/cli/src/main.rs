use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cqa_rank::corpus::DatasetFormat;
use cqa_rank::pipeline::{cmd_synth, describe, Pipeline, PipelineConfig};
use cqa_rank::synth::Signal;
use cqa_rank::{Error, Result};

#[derive(Parser)]
#[command(name = "cqa-rank", version, about = "Rank forum comments by relevance to a question")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set embedding.dim=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct Stage {
    #[command(flatten)]
    common: Common,
    /// Embedding sweep entries `dim:window:min_count:skip`, comma separated.
    #[arg(long)]
    grid: Option<String>,
    /// Recompute outputs that already exist.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SignalArg {
    Topical,
    Centroid,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubtaskArg {
    A,
    C,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize the unannotated corpus, one line per input line.
    Preprocess(Common),
    /// Train skip-gram embeddings (one model per grid entry).
    TrainEmbeddings(Stage),
    /// Cluster embedding vocabularies with k-means.
    Cluster(Stage),
    /// Train the LDA topic model (grid entries are accepted and ignored).
    TrainLda(Stage),
    /// Build train/test feature matrices.
    Extract(Common),
    /// Fit the logistic regression classifier.
    Train(Common),
    /// Score the test matrix and write predictions.
    Predict(Common),
    /// Compute MAP and accuracy of the predictions.
    Evaluate(Common),
    /// Retrain without feature groups and print the comparison table.
    Ablate(Common),
    /// Run every stage in order.
    RunAll(Common),
    /// Write a synthetic dataset, unannotated corpus and configuration.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        threads: usize,
        #[arg(long, default_value = "synth")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "topical")]
        signal: SignalArg,
        #[arg(long, value_enum, default_value = "a")]
        subtask: SubtaskArg,
    },
}

fn load(common: &Common, grid: Option<&str>) -> Result<Pipeline> {
    let mut overrides = Vec::new();
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {kv:?} is not KEY=VALUE")))?;
        overrides.push((k.trim().to_string(), v.to_string()));
    }
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(g) = grid {
        let entries: Vec<String> = g.split(',').map(|s| format!("{:?}", s.trim())).collect();
        overrides.push(("grid".into(), format!("[{}]", entries.join(","))));
    }
    Ok(Pipeline::new(PipelineConfig::load(&common.config, &overrides)?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(c) => {
            let p = load(&c, None)?.preprocess()?;
            println!("wrote {}", p.path.display());
        }
        Command::TrainEmbeddings(s) => {
            print!("{}", describe(&load(&s.common, s.grid.as_deref())?.train_embeddings(s.force)?));
        }
        Command::Cluster(s) => {
            print!("{}", describe(&load(&s.common, s.grid.as_deref())?.cluster(s.force)?));
        }
        Command::TrainLda(s) => {
            if s.grid.is_some() {
                log::info!("train-lda ignores --grid");
            }
            print!("{}", describe(&[load(&s.common, None)?.train_lda(s.force)?]));
        }
        Command::Extract(c) => {
            let (schema, n_train, n_test) = load(&c, None)?.extract()?;
            println!(
                "{} features ({} groups), {n_train} training rows, {n_test} test rows",
                schema.len(),
                schema.groups.len()
            );
        }
        Command::Train(c) => {
            let (model, cv) = load(&c, None)?.train()?;
            if let Some(cv) = cv {
                for row in &cv.table {
                    let flag = if row.degenerate_folds.is_empty() { "" } else { " (single-class folds)" };
                    println!("C={:<6} cv_acc={:.4}{flag}", row.c, row.accuracy);
                }
            }
            println!("trained with C={}", model.cost_c);
        }
        Command::Predict(c) => {
            println!("wrote {}", load(&c, None)?.predict()?.display());
        }
        Command::Evaluate(c) => {
            let r = load(&c, None)?.evaluate()?;
            println!("MAP: {:.4}", r.map);
            println!("Acc: {:.4}", r.acc);
        }
        Command::Ablate(c) => {
            let (_, table) = load(&c, None)?.ablate()?;
            print!("{table}");
        }
        Command::RunAll(c) => {
            let r = load(&c, None)?.run_all()?;
            println!("MAP: {:.4}", r.map);
            println!("Acc: {:.4}", r.acc);
        }
        Command::Synth {
            seed,
            threads,
            out,
            signal,
            subtask,
        } => {
            let signal = match signal {
                SignalArg::Topical => Signal::Topical,
                SignalArg::Centroid => Signal::Centroid,
            };
            let format = match subtask {
                SubtaskArg::A => DatasetFormat::SubtaskA,
                SubtaskArg::C => DatasetFormat::SubtaskC,
            };
            let (data, text, config) = cmd_synth(seed, threads, &out, signal, format)?;
            println!("wrote {}", data.display());
            println!("wrote {}", text.display());
            println!("wrote {}", config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
