use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rerankmatch::experiment::{evaluate_checkpoint, export_embeddings, ExportSet, CHECKPOINT_FILE};
use rerankmatch::{run_experiment, run_sweep, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "rerankmatch", version, about = "Semi-supervised training with ranking and feature-contrast losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied in order after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.set.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        if let Some(out) = &self.out {
            overrides.push(format!("output.dir={}", out.display()));
        }
        ExperimentConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportArg {
    All,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write metrics, summary and checkpoint to the output dir.
    Train(Common),
    /// Test-split error of a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<output.dir>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write L2-normalised logits and labels as TSV.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        samples: ExportArg,
        /// TSV destination.
        #[arg(long)]
        to: PathBuf,
    },
    /// Train once per seed and report mean ± std test error.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.load()?;
            let out = run_experiment(&cfg, Some(&cfg.output_dir))?;
            println!(
                "{}: test error {:.4} after {} steps, artifacts in {}",
                out.summary.label,
                out.summary.final_test_error,
                out.summary.total_steps,
                cfg.output_dir.display()
            );
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = common.load()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.output_dir.join(CHECKPOINT_FILE));
            let err = evaluate_checkpoint(&cfg, &ckpt)?;
            println!("{{\"checkpoint\": {:?}, \"test_error\": {err}}}", ckpt.display().to_string());
        }
        Command::ExportEmbeddings {
            common,
            checkpoint,
            samples,
            to,
        } => {
            let cfg = common.load()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.output_dir.join(CHECKPOINT_FILE));
            let set = match samples {
                ExportArg::All => ExportSet::All,
                ExportArg::Test => ExportSet::Test,
            };
            let n = export_embeddings(&cfg, &ckpt, set, &to)?;
            println!("wrote {n} rows to {}", to.display());
        }
        Command::Sweep { common, seeds } => {
            let cfg = common.load()?;
            let sweep = run_sweep(&cfg, &seeds, Some(&cfg.output_dir))?;
            println!("{}", sweep.report());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
