use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use wsdec::commands::{self, EvalMode};
use wsdec::config::RunConfig;
use wsdec::Result;

#[derive(Parser)]
#[command(name = "wsdec", version, about = "Weakly supervised dense event captioning")]
struct Cli {
    /// key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Extra `key=value` settings applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain, then run both cycle-training stages.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Dense-caption a split and localize its sentences.
    Infer {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        /// Add initial proposals and contraction ratios to the output.
        #[arg(long)]
        dump_diagnostics: bool,
    },
    /// Score predictions against annotations.
    Eval {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Captioning)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Captioning,
    Localization,
    Recall,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        cfg.apply_text(kv)?;
    }
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    match cli.command {
        Command::Synth { out } => {
            let s = commands::synth(&cfg, &out, cli.force)?;
            println!(
                "train_videos={} test_videos={} events_per_video={:.4} vocab={}",
                s.train_videos, s.test_videos, s.events_per_video, s.vocab_size
            );
        }
        Command::Train { data, out, resume } => {
            let data = commands::require(data, &cfg.paths.data, "data")?;
            let st = commands::train_cmd(&cfg, &data, &out, resume.as_deref(), cli.force)?;
            println!("trained {} steps, stage {}", st.step, st.stage.name());
        }
        Command::Infer {
            data,
            checkpoint,
            split,
            out,
            dump_diagnostics,
        } => {
            let data = commands::require(data, &cfg.paths.data, "data")?;
            let ckpt = commands::require(checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
            commands::infer_cmd(&cfg, &data, &split, &ckpt, &out, dump_diagnostics, cli.force)?;
        }
        Command::Eval {
            predictions,
            annotations,
            mode,
            out,
        } => {
            let preds = commands::require(predictions, &cfg.paths.predictions, "predictions")?;
            let ann = commands::require(annotations, &cfg.paths.annotations, "annotations")?;
            let mode = match mode {
                Mode::Captioning => EvalMode::Captioning,
                Mode::Localization => EvalMode::Localization,
                Mode::Recall => EvalMode::Recall,
            };
            print!("{}", commands::eval_cmd(&cfg, &preds, &ann, mode, &out, cli.force)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
