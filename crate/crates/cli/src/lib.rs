//! Command-line driver: training, ablation sweeps, gradient checks and
//! decomposition checks.

pub mod checks;
pub mod config;
pub mod error;
pub mod report;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use weightcell::cells::Variant;

pub use crate::config::{KeyValues, RunConfig};
pub use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "weightcell", version, about = "Gated recurrent cell ablations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one variant with one seed.
    Train(ConfigArgs),
    /// Train every listed variant for every seed and tabulate the results.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Runs trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare BPTT gradients against central finite differences.
    Gradcheck {
        /// Variant to check; repeat for several. Defaults to all.
        #[arg(long = "variant")]
        variants: Vec<Variant>,
        #[arg(long, default_value_t = 3)]
        input_dim: usize,
        #[arg(long, default_value_t = 4)]
        hidden_dim: usize,
        #[arg(long, default_value_t = 5)]
        len: usize,
        #[arg(long, default_value_t = 10)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Check the weighted-sum decomposition of a checkpoint on one input.
    Decompose {
        checkpoint: PathBuf,
        /// Input text, encoded with the checkpoint vocabulary.
        #[arg(long, conflicts_with = "input")]
        text: Option<String>,
        /// Text file, or one comma-separated vector per line for models
        /// without a vocabulary.
        #[arg(long, required_unless_present = "text")]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-8)]
        tolerance: f64,
        /// Heatmap output; .csv, .pgm or .svg. Repeatable.
        #[arg(long = "heatmap")]
        heatmaps: Vec<PathBuf>,
    },
    /// Evaluate a checkpoint on the task stored with it.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, default_value = "valid")]
        split: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Replaces the configured seeds with this one.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn key_values(&self) -> Result<KeyValues, CliError> {
        let mut kv = match &self.config {
            Some(path) => KeyValues::load(path)?,
            None => KeyValues::default(),
        };
        for s in &self.set {
            kv.apply(s)?;
        }
        if let Some(seed) = self.seed {
            kv.set("seeds", &seed.to_string())?;
        }
        Ok(kv)
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        RunConfig::from_kv(&self.key_values()?)
    }
}

/// Runs one command, printing its report to stdout.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => {
            let config = args.resolve()?;
            let r = run::cmd_train(&config)?;
            println!(
                "{} seed {}: best held-out metric {} (epoch {}), outputs in {}",
                r.variant.name(),
                r.seed,
                r.outcome.best_metric().map_or("n/a".into(), |m| format!("{m:.6}")),
                r.outcome.best_epoch.map_or("n/a".into(), |e| e.to_string()),
                r.dir.display()
            );
            Ok(())
        }
        Command::Ablate { config, jobs } => {
            let config = config.resolve()?;
            let (report, _) = run::cmd_ablate(&config, jobs)?;
            print!("{}", report.to_table());
            println!("report written to {}", run::output_root(&config).display());
            Ok(())
        }
        Command::Gradcheck {
            variants,
            input_dim,
            hidden_dim,
            len,
            draws,
            seed,
            inject_fault,
        } => {
            let opts = checks::GradCheckOptions {
                variants: if variants.is_empty() {
                    Variant::ALL.to_vec()
                } else {
                    variants
                },
                input_dim,
                hidden_dim,
                len,
                draws,
                seed,
                inject_fault,
            };
            let (text, _) = checks::cmd_gradcheck(&opts)?;
            print!("{text}");
            Ok(())
        }
        Command::Decompose {
            checkpoint,
            text,
            input,
            tolerance,
            heatmaps,
        } => {
            let input = match (text, input) {
                (Some(t), _) => checks::DecomposeInput::Text(t),
                (None, Some(p)) => checks::DecomposeInput::File(p),
                (None, None) => return Err(CliError::Usage("pass --text or --input".into())),
            };
            let outcome = checks::cmd_decompose(&checks::DecomposeOptions {
                checkpoint,
                input,
                tolerance,
                heatmaps,
            })?;
            print!("{}", outcome.text);
            if outcome.passed {
                Ok(())
            } else {
                Err(CliError::CheckFailed(format!(
                    "decomposition FAILED: max deviation {:e} exceeds tolerance {tolerance:e}",
                    outcome.max_abs_deviation
                )))
            }
        }
        Command::Eval {
            checkpoint,
            split,
            config,
        } => {
            let overrides = config.key_values()?;
            let e = run::cmd_eval(&checkpoint, Some(overrides), &split)?;
            println!("{} loss {:.17e} {} {:.17e}", e.split, e.loss, e.metric_name, e.metric);
            Ok(())
        }
    }
}
