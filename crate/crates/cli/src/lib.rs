//! Stage runner for the preference-alignment pipeline.

pub mod config;
pub mod error;
pub mod stages;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::CliError;
use crate::stages::{run_stage, Ctx, STAGES};

#[derive(Debug, Parser)]
#[command(name = "dpa", version, about = "Preference-aligned retrieval pipeline stages")]
pub struct Cli {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train_reranker.epochs=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Use the offline mock reader and NLI model.
    #[arg(long, global = true)]
    pub mock: bool,
    /// Append every gateway request and reply to this JSONL file.
    #[arg(long, global = true, value_name = "PATH")]
    pub audit: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dense top-k retrieval for the train and test queries.
    Retrieve,
    /// Label hierarchical subsets with the reader and keep preference samples.
    ExtractPref,
    /// Rewrite preference queries with one or all augmentation strategies.
    Augment {
        /// Strategy name or `all`; defaults to the configured list.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Drop rewrites the NLI model judges contradictory.
    Filter,
    /// Train the bilinear reranker on the preference samples.
    TrainReranker,
    /// Rerank retrieved documents and keep the top k.
    Rerank,
    /// Emit pre-aligned judgement records.
    EmitPrealign,
    /// Emit SFT records over the reranked documents.
    EmitSft,
    /// Answer test queries and score Hit@1 and F1.
    Eval,
    /// Category table and tag statistics.
    Report,
    /// Build the embedding store from the corpus.
    BuildStore,
    /// Run every pipeline stage in order, building the store first if it is missing.
    RunAll,
    /// Write the synthetic fixture and a mock-mode config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Retrieve => "retrieve",
            Command::ExtractPref => "extract-pref",
            Command::Augment { .. } => "augment",
            Command::Filter => "filter",
            Command::TrainReranker => "train-reranker",
            Command::Rerank => "rerank",
            Command::EmitPrealign => "emit-prealign",
            Command::EmitSft => "emit-sft",
            Command::Eval => "eval",
            Command::Report => "report",
            Command::BuildStore => "build-store",
            Command::RunAll => "run-all",
            Command::Synth { .. } => "synth",
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Command::Synth { out, seed } = &cli.command {
        let path = stages::synth(out, *seed)?;
        println!("{}", path.display());
        return Ok(());
    }
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let loaded = config::load(path, &cli.set, cli.mock)?;
    let ctx = Ctx { loaded, audit: cli.audit.clone() };
    match &cli.command {
        Command::RunAll => {
            if !ctx.loaded.resolve(&ctx.loaded.config.shared.store).exists() {
                run_stage(&ctx, "build-store", None)?;
            }
            STAGES.iter().try_for_each(|s| run_stage(&ctx, s, None))
        }
        Command::Augment { strategy } => run_stage(&ctx, "augment", strategy.as_deref()),
        c => run_stage(&ctx, c.stage(), None),
    }
}

/// Parses `args`, runs the command and returns the process exit code. Errors
/// are reported as one JSON object on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprintln!("{}", CliError::Usage(e.to_string().trim().to_string()).report(None));
            return 2;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("{}", e.report(Some(cli.command.stage())));
            e.exit_code()
        }
    }
}
