use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hib_mtl::experiment::{
    cmd_ablate, cmd_gauss_ib, cmd_sweep, cmd_train, load_splits, DatasetKind, ExperimentConfig, ExperimentError,
    ExperimentKind, Settings,
};

/// Experiments for multi-task learning with per-task Gaussian information filters.
#[derive(Parser, Debug)]
#[command(name = "hib-mtl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the linear Gaussian problem and stack two-task encoders.
    GaussIb(Common),
    /// Train one model and log per-epoch metrics.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        dataset: Option<Dataset>,
    },
    /// Train one model per beta and tabulate accuracies.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        dataset: Option<Dataset>,
    },
    /// Compare trainable and fixed noise on the task-clustering benchmark.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Trials per protocol and beta.
        #[arg(long)]
        trials: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config; flags take precedence over its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory holding the MNIST IDX files.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Repeat for several values.
    #[arg(long = "beta")]
    betas: Vec<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Feed the heads the noiseless representation.
    #[arg(long)]
    no_noise: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Dataset {
    Grouped,
    Multimnist,
}

impl From<Dataset> for DatasetKind {
    fn from(d: Dataset) -> Self {
        match d {
            Dataset::Grouped => DatasetKind::Grouped,
            Dataset::Multimnist => DatasetKind::Multimnist,
        }
    }
}

impl Common {
    fn flags(&self) -> ExperimentConfig {
        ExperimentConfig {
            seed: self.seed,
            out_dir: self.out.clone(),
            data_dir: self.data.clone(),
            betas: (!self.betas.is_empty()).then(|| self.betas.clone()),
            epochs: self.epochs,
            latent_dim: self.latent_dim,
            noise_enabled: self.no_noise.then_some(false),
            ..Default::default()
        }
    }
}

fn config_error(msg: String) -> ExperimentError {
    ExperimentError::Config(msg)
}

/// File values, then flags, then the kind implied by the subcommand.
fn settings(common: &Common, kind: impl FnOnce(Option<ExperimentKind>) -> Result<ExperimentKind, ExperimentError>, extra: ExperimentConfig) -> Result<Settings, ExperimentError> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    config.overlay(&common.flags());
    config.overlay(&extra);
    config.kind = Some(kind(config.kind)?);
    config.resolve()
}

fn expect_kind(want: ExperimentKind) -> impl FnOnce(Option<ExperimentKind>) -> Result<ExperimentKind, ExperimentError> {
    move |found| match found {
        None => Ok(want),
        Some(k) if k == want => Ok(want),
        Some(k) => Err(config_error(format!("config kind {k:?} does not match this subcommand ({want:?})"))),
    }
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::GaussIb(common) => {
            let s = settings(&common, expect_kind(ExperimentKind::GaussIb), ExperimentConfig::default())?;
            let report = cmd_gauss_ib(&s)?;
            for e in &report.entries {
                let retained: Vec<usize> = e.solutions.iter().map(|s| s.retained()).collect();
                match e.complementary {
                    Some(c) => println!("beta {}: retained {retained:?}, complementary masks: {c}", e.beta),
                    None => println!("beta {}: retained {retained:?}", e.beta),
                }
            }
            println!("wrote {}", s.out_dir.join("gauss_ib.json").display());
        }
        Command::Train { common, dataset } => {
            let kind = move |found: Option<ExperimentKind>| match (found, dataset) {
                (Some(k @ (ExperimentKind::Grouped | ExperimentKind::Multimnist)), None) => Ok(k),
                (None, None) => Ok(ExperimentKind::Grouped),
                (None | Some(ExperimentKind::Grouped | ExperimentKind::Multimnist), Some(Dataset::Grouped)) => {
                    Ok(ExperimentKind::Grouped)
                }
                (None | Some(ExperimentKind::Grouped | ExperimentKind::Multimnist), Some(Dataset::Multimnist)) => {
                    Ok(ExperimentKind::Multimnist)
                }
                (Some(k), _) => Err(config_error(format!("config kind {k:?} cannot be trained; use grouped or multimnist"))),
            };
            let s = settings(&common, kind, ExperimentConfig::default())?;
            let mnist = load_splits(&s.data_dir)?;
            let out = cmd_train(&s, &mnist, &|m| {
                let acc: Vec<String> = m.test_accuracy.iter().map(|a| format!("{:.4}", a)).collect();
                eprintln!("epoch {:>3}  loss {:.4}  acc [{}]", m.epoch, m.loss, acc.join(", "));
            })?;
            println!("final accuracy {:?} ({})", out.test_accuracy, out.task_names.join(", "));
            println!("wrote {}", s.out_dir.display());
        }
        Command::Sweep { common, dataset } => {
            let extra = ExperimentConfig {
                dataset: dataset.map(Into::into),
                ..Default::default()
            };
            let s = settings(&common, expect_kind(ExperimentKind::Sweep), extra)?;
            let mnist = load_splits(&s.data_dir)?;
            for row in cmd_sweep(&s, &mnist)? {
                println!("beta {}: accuracy {:?}, mean {:.4}", row.beta, row.test_accuracy, row.mean_accuracy);
            }
            println!("wrote {}", s.out_dir.join("sweep.csv").display());
        }
        Command::Ablate { common, trials } => {
            let extra = ExperimentConfig {
                n_trials: trials,
                ..Default::default()
            };
            let s = settings(&common, expect_kind(ExperimentKind::Ablation), extra)?;
            let mnist = load_splits(&s.data_dir)?;
            for row in cmd_ablate(&s, &mnist)?.rows {
                println!(
                    "beta {}: trainable noise {}%, fixed noise {}% over {} trials",
                    row.beta, row.trainable_noise_rate, row.fixed_noise_rate, row.n_trials
                );
            }
            println!("wrote {}", s.out_dir.join("ablation.json").display());
        }
    }
    Ok(())
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
