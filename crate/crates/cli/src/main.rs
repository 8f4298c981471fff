use std::path::PathBuf;

use clap::{Parser, Subcommand};

use ospg_cli::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "ospg",
    about = "Tone-task speech understanding pipeline: generate data, train the staged curriculum, run inference and evaluate",
    after_help = "Environment: OSPG_LOG={error,info,debug} controls verbosity.\n\nRun `ospg config-reference` for every config file key."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration file (flat key=value lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (manifest + waveforms)
    GenData {
        #[command(flatten)]
        common: Common,
        /// Output directory for manifest.jsonl and waveform files
        #[arg(long)]
        out: PathBuf,
        /// Embed synthesis recipes in the manifest instead of writing files
        #[arg(long)]
        inline: bool,
    },
    /// Run the three-stage curriculum and write a checkpoint
    Train {
        #[command(flatten)]
        common: Common,
        /// Corpus manifest written by gen-data
        #[arg(long)]
        corpus: PathBuf,
        /// Output checkpoint path
        #[arg(long)]
        out: PathBuf,
        /// Metrics log path (default: <out>.metrics.jsonl)
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Run one audio file + instruction through a trained checkpoint
    Infer {
        #[command(flatten)]
        common: Common,
        /// Trained checkpoint
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input waveform (.wav 16-bit mono or .f32 raw)
        #[arg(long)]
        audio: PathBuf,
        /// Instruction text; a pure tag string like "<asr>" is treated as fixed
        #[arg(long)]
        instruction: String,
    },
    /// Evaluate a checkpoint over a manifest
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluation manifest
        #[arg(long)]
        manifest: PathBuf,
        /// ifr, finl, or task
        #[arg(long)]
        mode: String,
        /// Report output path (line-delimited records)
        #[arg(long)]
        out: PathBuf,
        /// Verdict source: rule (default) or http
        #[arg(long)]
        judge: Option<String>,
        /// HTTP judge endpoint (judge=http)
        #[arg(long)]
        judge_endpoint: Option<String>,
        /// HTTP judge timeout in milliseconds
        #[arg(long)]
        judge_timeout_ms: Option<u64>,
    },
    /// Fold low-rank deltas into the base weights and drop the lora group
    MergeLora {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print every config key with its default and meaning
    ConfigReference,
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { common, out, inline } => {
            let cfg = ospg_cli::load_config(common.config.as_deref(), common.seed)?;
            ospg_cli::cmd_gen_data(&cfg, &out, inline)
        }
        Command::Train {
            common,
            corpus,
            out,
            metrics,
        } => {
            let cfg = ospg_cli::load_config(common.config.as_deref(), common.seed)?;
            ospg_cli::cmd_train(&cfg, &corpus, &out, metrics.as_deref())
        }
        Command::Infer {
            common,
            checkpoint,
            audio,
            instruction,
        } => {
            let cfg = ospg_cli::load_config(common.config.as_deref(), common.seed)?;
            ospg_cli::cmd_infer(&cfg, &checkpoint, &audio, &instruction)
        }
        Command::Eval {
            common,
            checkpoint,
            manifest,
            mode,
            out,
            judge,
            judge_endpoint,
            judge_timeout_ms,
        } => {
            let mut cfg = ospg_cli::load_config(common.config.as_deref(), common.seed)?;
            if let Some(j) = judge {
                cfg.judge = j;
            }
            if let Some(e) = judge_endpoint {
                cfg.judge_endpoint = e;
            }
            if let Some(t) = judge_timeout_ms {
                cfg.judge_timeout_ms = t;
            }
            ospg_cli::cmd_eval(&cfg, &checkpoint, &manifest, &mode, &out)
        }
        Command::MergeLora {
            common,
            checkpoint,
            out,
        } => {
            let cfg = ospg_cli::load_config(common.config.as_deref(), common.seed)?;
            ospg_cli::cmd_merge_lora(&cfg, &checkpoint, &out)
        }
        Command::ConfigReference => {
            print!("{}", RunConfig::key_reference());
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
