use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use sparsepet::harness::{self, ExperimentConfig};
use sparsepet::Error;

#[derive(Parser)]
#[command(name = "sparsepet", version, about = "Sparse-detector PET sinogram restoration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate phantoms and write original, distorted and mask stacks
    Generate(Common),
    /// Train the restoration network on the generated dataset
    Train(Common),
    /// Restore, interpolate, reconstruct and score the test split
    Evaluate(Common),
    /// generate, train and evaluate in sequence
    All(Common),
}

#[derive(Args)]
struct Common {
    /// experiment config file
    #[arg(long)]
    config: PathBuf,
    /// output directory, overriding the config
    #[arg(long)]
    output: Option<PathBuf>,
    /// use this seed for every random component
    #[arg(long)]
    seed_override: Option<u64>,
    /// worker threads for per-plane work
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,
}

impl Common {
    fn config(&self) -> sparsepet::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(dir) = &self.output {
            cfg.output_dir = dir.clone();
        }
        if let Some(seed) = self.seed_override {
            cfg.set_seed(seed);
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> sparsepet::Result<()> {
    let (common, steps): (&Common, &[&str]) = match &cli.command {
        Command::Generate(c) => (c, &["generate"]),
        Command::Train(c) => (c, &["train"]),
        Command::Evaluate(c) => (c, &["evaluate"]),
        Command::All(c) => (c, &["generate", "train", "evaluate"]),
    };
    let cfg = common.config()?;
    let threads = common.threads as usize;
    let mut model = None;
    for &step in steps {
        match step {
            "generate" => {
                let m = harness::generate(&cfg)?;
                info!(
                    "wrote {} stacks; counts_scale {} (affected-bin mean {:.3} expected, {:.3} measured)",
                    m.entries.len(),
                    m.counts_scale,
                    m.expected_affected_mean,
                    m.measured_affected_mean
                );
            }
            "train" => {
                let (trained, history) = harness::train_model(&cfg)?;
                info!(
                    "trained {} epochs, stop: {} (best epoch {})",
                    history.epochs.len(),
                    history.stop.as_str(),
                    history.stop.best_epoch()
                );
                model = Some(trained);
            }
            _ => {
                let m = match model.take() {
                    Some(m) => m,
                    None => harness::load_trained(&cfg)?,
                };
                let report = harness::evaluate(&cfg, &m, threads)?;
                info!(
                    "evaluated {} sinogram planes, {} image slices",
                    report.sinogram.len(),
                    report.image.len()
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            error!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(3)
        }
    }
}
