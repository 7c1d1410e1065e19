//! `pudet`: dataset generation, PU-loss detector training, prior
//! sweeps, and evaluation from one declarative JSON config.
//!
//! Exit codes: 0 on success, 2 on configuration/usage errors, 3 on
//! data errors.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use pudet_core::experiment::{
    cmd_evaluate, cmd_generate, cmd_sweep_prior, cmd_train, ExperimentConfig, Method, TrainArgs,
};
use pudet_core::Result;

#[derive(Parser)]
#[command(name = "pudet", version, about = "Cell-detection experiments with positive-unlabeled losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset: train/val/test splits, train and val
    /// annotations degraded, complete copies kept for the upper bound.
    Generate {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Dataset output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one method arm for a number of independent seeded runs.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory produced by `generate`.
        #[arg(long)]
        data: PathBuf,
        /// baseline | pu | pu-naive | pu-multi | wce | focal | upper
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Fixed class prior π (overrides config and grid search).
        #[arg(long)]
        prior: Option<f64>,
        /// Base seed override; run r trains with seed + r.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for checkpoints and logs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per candidate prior and report the sensitivity
    /// table plus the validation-recall selection.
    SweepPrior {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate checkpoints on the test split; each CHECKPOINT is a
    /// method directory (run_*/checkpoint.json) or a checkpoint file.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Add paired t-tests with Benjamini-Hochberg correction.
        #[arg(long)]
        compare: bool,
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            let outcome = cmd_generate(&config, &out)?;
            println!(
                "generated {} train / {} val / {} test images under {}",
                outcome.train_count,
                outcome.val_count,
                outcome.test_count,
                out.display()
            );
        }
        Command::Train {
            config,
            data,
            method,
            runs,
            prior,
            seed,
            out,
        } => {
            let config = ExperimentConfig::load(&config)?;
            let method = Method::parse(&method)?;
            let outcome = cmd_train(&TrainArgs {
                config: &config,
                dataset: &data,
                method,
                runs,
                prior,
                seed,
                out: &out,
            })?;
            match outcome.prior {
                Some(pi) => println!(
                    "trained {} `{}` runs with prior {} -> {}",
                    outcome.checkpoints.len(),
                    method.name(),
                    pi,
                    out.join(method.name()).display()
                ),
                None => println!(
                    "trained {} `{}` runs -> {}",
                    outcome.checkpoints.len(),
                    method.name(),
                    out.join(method.name()).display()
                ),
            }
        }
        Command::SweepPrior { config, data, out } => {
            let config = ExperimentConfig::load(&config)?;
            let outcome = cmd_sweep_prior(&config, &data, &out)?;
            println!("pi,val_recall,test_f1");
            for row in &outcome.rows {
                println!("{},{},{}", row.pi, row.val_recall, row.test_f1);
            }
            println!("selected prior: {}", outcome.selected);
        }
        Command::Evaluate {
            config,
            data,
            out,
            compare,
            checkpoints,
        } => {
            let config = ExperimentConfig::load(&config)?;
            let outcome = cmd_evaluate(&config, &data, &checkpoints, compare, &out)?;
            for method in &outcome.methods {
                let f1s: Vec<f64> = method.runs.iter().map(|r| r.macro_avg.f1).collect();
                let mean = f1s.iter().sum::<f64>() / f1s.len() as f64;
                println!("{}: mean F1 {:.4} over {} runs", method.name, mean, f1s.len());
            }
            for c in &outcome.comparisons {
                println!(
                    "{} vs {}: t = {:.4}, p = {:.4} (BH-adjusted {:.4})",
                    c.method_a, c.method_b, c.t, c.p_raw, c.p_adjusted
                );
            }
            println!("reports written to {}", out.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
