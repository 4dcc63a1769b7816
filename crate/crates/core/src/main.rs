use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use trackgp::harness::{self, ExperimentConfig};
use trackgp::Result;

#[derive(Parser)]
#[command(
    version,
    about = "Tracked-vehicle trajectory tracking with a GP inverse model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg = cfg.with_seed(s);
        }
        if let Some(o) = &self.out {
            cfg = cfg.with_output_dir(o.clone());
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Closed-loop rollouts of the configured controller.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Trained model, required by the GP slots.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Rollouts of the configured controller and dataset extraction.
    Collect {
        #[command(flatten)]
        common: Common,
    },
    /// Fits the GP inverse model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training set [default: <out>/collect/train.csv].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Held-out set to score the fitted model on.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Nominal vs GP controller on the evaluation references.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// [default: <out>/model.json]
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Closed-loop pole magnitudes of the configured gains.
    GainsCheck {
        #[command(flatten)]
        common: Common,
    },
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn or_default(path: &Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| out.join(name))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, model } => {
            let cfg = common.load()?;
            let r = harness::simulate(&cfg, model.as_deref())?;
            print(&r.runs)
        }
        Command::Collect { common } => {
            let cfg = common.load()?;
            let r = harness::collect(&cfg)?;
            print(&serde_json::json!({
                "samples": r.samples,
                "train": r.train,
                "test": r.test,
                "runs": r.runs,
            }))
        }
        Command::Train { common, data, test } => {
            let cfg = common.load()?;
            let data = or_default(&data, &cfg.output_dir, "collect/train.csv");
            let (_, r) = harness::train(&cfg, &data, test.as_deref())?;
            print(&serde_json::json!({
                "model": r.model_file,
                "model_hash": r.model_hash,
                "held_out": r.held_out,
            }))
        }
        Command::Evaluate {
            common,
            model,
            test,
        } => {
            let cfg = common.load()?;
            let model = or_default(&model, &cfg.output_dir, "model.json");
            let r = harness::evaluate(&cfg, &model, test.as_deref())?;
            print(&r.trajectories)
        }
        Command::GainsCheck { common } => {
            let cfg = common.load()?;
            print(&harness::gains_check(&cfg)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
