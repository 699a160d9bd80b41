//! Experiment configuration and the four runnable commands.
//!
//! A config is one JSON document whose fields are all optional. Command-line flags
//! are parsed into a second `ExperimentConfig` and laid over the file with
//! [`ExperimentConfig::overlay`]; [`ExperimentConfig::resolve`] then fills the
//! remaining gaps with kind-specific defaults and validates the result.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{load_mnist, make_grouped, make_multimnist, DataError, MultiTaskData, Split, TaskGroup};
use crate::gaussian_ib::{
    disentanglement_pattern, masks_complementary, solve_gaussian_ib, stack_two_task_encoder, GaussianIbError,
    GaussianTaskSpec, IbSolution, StackedEncoder,
};
use crate::model::{init_model, ModelDims, ModelError, MtlModel, DEFAULT_LEARNING_RATE};
use crate::similarity::{
    distance_matrix, repeated_trials, MnistSplits, Protocol, RepeatedConfig, SimilarityError, TrialReport,
};
use crate::train::{evaluate, EpochMetrics, TrainConfig, Trainer, DEFAULT_BATCH_SIZE};

pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_ABLATION_EPOCHS: usize = 25;
pub const DEFAULT_LATENT_DIM: usize = 4;
pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_TRIALS: usize = 20;
pub const DEFAULT_DATA_DIR: &str = "data/mnist";

/// JSON Schema of `ablation.json`.
pub const ABLATION_SUMMARY_SCHEMA: &str = include_str!("../schemas/ablation_summary.schema.json");

/// Test images are paired with a stream independent of the training pairing.
const TEST_PAIRING_SALT: u64 = 0x7465_7374;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl ExperimentError {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Data(_) => 3,
            ExperimentError::Numeric(_) => 4,
        }
    }

    fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        ExperimentError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<DataError> for ExperimentError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidGroup(_) => ExperimentError::Config(e.to_string()),
            _ => ExperimentError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for ExperimentError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(_) | ModelError::Format(_) => ExperimentError::Data(e.to_string()),
            _ => ExperimentError::Numeric(e.to_string()),
        }
    }
}

impl From<GaussianIbError> for ExperimentError {
    fn from(e: GaussianIbError) -> Self {
        match e {
            GaussianIbError::SingularCovariance(_) | GaussianIbError::DegenerateLambda { .. } => {
                ExperimentError::Numeric(e.to_string())
            }
            _ => ExperimentError::Config(e.to_string()),
        }
    }
}

impl From<SimilarityError> for ExperimentError {
    fn from(e: SimilarityError) -> Self {
        match e {
            SimilarityError::Model(m) => m.into(),
            SimilarityError::Data(d) => d.into(),
            SimilarityError::Export(_) => ExperimentError::Data(e.to_string()),
            _ => ExperimentError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GaussIb,
    Grouped,
    Multimnist,
    Ablation,
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Grouped,
    Multimnist,
}

/// Everything a run can be configured with. Unset fields take defaults at resolve time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,
    /// Dataset trained by `sweep`; `grouped` and `multimnist` kinds imply their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<TaskGroup>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_enabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Inline task statistics for `gauss-ib`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_tasks: Option<Vec<GaussianTaskSpec>>,
    /// JSON file holding a list of task statistics for `gauss-ib`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_spec: Option<PathBuf>,
}

macro_rules! overlay_fields {
    ($dst:ident, $src:ident; $($field:ident),*) => {
        $(if $src.$field.is_some() { $dst.$field = $src.$field.clone(); })*
    };
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Fields set in `top` replace the ones in `self`.
    pub fn overlay(&mut self, top: &ExperimentConfig) {
        overlay_fields!(self, top; kind, dataset, groups, latent_dim, betas, epochs, batch_size,
            learning_rate, seed, noise_enabled, n_trials, data_dir, out_dir, gaussian_tasks, gaussian_spec);
    }

    pub fn resolve(&self) -> Result<Settings, ExperimentError> {
        let kind = self
            .kind
            .ok_or_else(|| ExperimentError::Config("`kind` is required (gauss-ib, grouped, multimnist, ablation, sweep)".into()))?;
        let dataset = match kind {
            ExperimentKind::Grouped => Some(DatasetKind::Grouped),
            ExperimentKind::Multimnist => Some(DatasetKind::Multimnist),
            ExperimentKind::Sweep => Some(self.dataset.unwrap_or(DatasetKind::Grouped)),
            _ => None,
        };
        if self.dataset.is_some() && kind != ExperimentKind::Sweep && self.dataset != dataset {
            return Err(ExperimentError::Config(format!(
                "`dataset` conflicts with kind {kind:?}; only sweep takes a dataset"
            )));
        }
        let default_beta = if dataset == Some(DatasetKind::Multimnist) { 0.0 } else { DEFAULT_BETA };
        let settings = Settings {
            kind,
            dataset,
            groups: self.groups.clone().unwrap_or_else(default_groups),
            latent_dim: self.latent_dim.unwrap_or(DEFAULT_LATENT_DIM),
            betas: self.betas.clone().unwrap_or_else(|| vec![default_beta]),
            epochs: self.epochs.unwrap_or(if kind == ExperimentKind::Ablation {
                DEFAULT_ABLATION_EPOCHS
            } else {
                DEFAULT_EPOCHS
            }),
            batch_size: self.batch_size.unwrap_or(DEFAULT_BATCH_SIZE),
            learning_rate: self.learning_rate.unwrap_or(DEFAULT_LEARNING_RATE),
            seed: self.seed.unwrap_or(0),
            noise_enabled: self.noise_enabled.unwrap_or(true),
            n_trials: self.n_trials.unwrap_or(DEFAULT_TRIALS),
            data_dir: self.data_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR)),
            out_dir: self
                .out_dir
                .clone()
                .unwrap_or_else(|| Path::new("runs").join(kind_name(kind))),
            gaussian_tasks: self.gaussian_tasks.clone(),
            gaussian_spec: self.gaussian_spec.clone(),
        };
        settings.validate()?;
        Ok(settings)
    }
}

fn kind_name(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::GaussIb => "gauss-ib",
        ExperimentKind::Grouped => "grouped",
        ExperimentKind::Multimnist => "multimnist",
        ExperimentKind::Ablation => "ablation",
        ExperimentKind::Sweep => "sweep",
    }
}

/// Groups of the four-task Grouped-MNIST example: two pairs sharing two digits each.
pub fn default_groups() -> Vec<TaskGroup> {
    [[2, 9, 4], [2, 9, 0], [8, 7, 3], [8, 7, 5]]
        .iter()
        .map(|g| TaskGroup::new(g.to_vec()).expect("valid default group"))
        .collect()
}

/// Two tasks in four dimensions reading disjoint coordinate pairs.
pub fn default_gaussian_tasks() -> Vec<GaussianTaskSpec> {
    let c_x = DMatrix::identity(4, 4);
    [[0.1, 0.3, 1.0, 1.0], [1.0, 1.0, 0.2, 0.4]]
        .iter()
        .map(|l| GaussianTaskSpec::new(c_x.clone(), DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(l))))
        .collect::<Result<_, _>>()
        .expect("valid default spec")
}

/// A fully resolved, validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub kind: ExperimentKind,
    pub dataset: Option<DatasetKind>,
    pub groups: Vec<TaskGroup>,
    pub latent_dim: usize,
    pub betas: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub noise_enabled: bool,
    pub n_trials: usize,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub gaussian_tasks: Option<Vec<GaussianTaskSpec>>,
    pub gaussian_spec: Option<PathBuf>,
}

impl Settings {
    fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        if self.betas.is_empty() {
            return bad("`betas` must list at least one value".into());
        }
        if let Some(b) = self.betas.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return bad(format!("beta must be finite and >= 0, got {b}"));
        }
        if self.latent_dim == 0 {
            return bad("`latent_dim` must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("`batch_size` must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("`learning_rate` must be positive, got {}", self.learning_rate));
        }
        if self.groups.is_empty() {
            return bad("`groups` must contain at least one task".into());
        }
        match self.kind {
            ExperimentKind::GaussIb => {
                if self.betas.contains(&0.0) {
                    return bad("gauss-ib needs beta > 0".into());
                }
                if self.gaussian_tasks.is_some() && self.gaussian_spec.is_some() {
                    return bad("set either `gaussian_tasks` or `gaussian_spec`, not both".into());
                }
            }
            ExperimentKind::Grouped | ExperimentKind::Multimnist => {
                if self.betas.len() != 1 {
                    return bad(format!(
                        "a training run takes exactly one beta, got {}; use kind `sweep` for several",
                        self.betas.len()
                    ));
                }
            }
            ExperimentKind::Ablation => {
                if self.n_trials == 0 {
                    return bad("`n_trials` must be at least 1".into());
                }
                if !self.noise_enabled {
                    return bad("the ablation compares noise protocols and cannot run without noise".into());
                }
            }
            ExperimentKind::Sweep => {}
        }
        Ok(())
    }

    fn gaussian_problem(&self) -> Result<Vec<GaussianTaskSpec>, ExperimentError> {
        if let Some(tasks) = &self.gaussian_tasks {
            return Ok(tasks.clone());
        }
        match &self.gaussian_spec {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
            }
            None => Ok(default_gaussian_tasks()),
        }
    }

    fn train_config(&self, trainable_seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::new(self.epochs, trainable_seed);
        cfg.batch_size = self.batch_size;
        cfg.learning_rate = self.learning_rate;
        cfg
    }
}

fn create_dir(dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(|e| ExperimentError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| ExperimentError::Numeric(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Loads the MNIST train and test splits from `dir`.
pub fn load_splits(dir: &Path) -> Result<MnistSplits, ExperimentError> {
    let load = |split| {
        load_mnist(dir, split).map_err(|e| {
            ExperimentError::Data(format!(
                "{e} (looked in {}; run scripts/fetch_mnist.sh or pass --data)",
                dir.display()
            ))
        })
    };
    Ok(MnistSplits {
        train: load(Split::Train)?,
        test: load(Split::Test)?,
    })
}

/// Results for one beta of the linear Gaussian problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussIbEntry {
    pub beta: f64,
    pub solutions: Vec<IbSolution>,
    /// Present when there are exactly two tasks and both fit into `latent_dim / 2` dimensions.
    pub stacked: Option<StackedEncoder>,
    pub masks: Option<Vec<Vec<bool>>>,
    pub complementary: Option<bool>,
    pub stack_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussIbReport {
    pub latent_dim: usize,
    pub tasks: Vec<GaussianTaskSpec>,
    pub entries: Vec<GaussIbEntry>,
}

/// Solves every task at every beta and stacks two-task encoders. Writes `gauss_ib.json`.
pub fn cmd_gauss_ib(settings: &Settings) -> Result<GaussIbReport, ExperimentError> {
    let tasks = settings.gaussian_problem()?;
    if tasks.is_empty() {
        return Err(ExperimentError::Config("the Gaussian problem has no tasks".into()));
    }
    let mut entries = Vec::with_capacity(settings.betas.len());
    for &beta in &settings.betas {
        let solutions = tasks
            .iter()
            .map(|t| solve_gaussian_ib(t, beta))
            .collect::<Result<Vec<_>, _>>()?;
        let mut entry = GaussIbEntry {
            beta,
            solutions,
            stacked: None,
            masks: None,
            complementary: None,
            stack_error: None,
        };
        if let [a, b] = tasks.as_slice() {
            match stack_two_task_encoder(a, b, settings.latent_dim, beta, beta) {
                Ok(enc) => {
                    let masks = disentanglement_pattern(&enc);
                    entry.complementary = Some(masks_complementary(&masks));
                    entry.masks = Some(masks);
                    entry.stacked = Some(enc);
                }
                Err(e) => entry.stack_error = Some(e.to_string()),
            }
        }
        entries.push(entry);
    }
    let report = GaussIbReport {
        latent_dim: settings.latent_dim,
        tasks,
        entries,
    };
    create_dir(&settings.out_dir)?;
    write_json(&settings.out_dir.join("gauss_ib.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: MtlModel,
    pub history: Vec<EpochMetrics>,
    /// Accuracy after the last epoch, or of the initial model when no epoch ran.
    pub test_accuracy: Vec<f64>,
    pub task_names: Vec<String>,
}

fn train_on<D: MultiTaskData>(
    train: &D,
    test: &D,
    settings: &Settings,
    beta: f64,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome, ExperimentError> {
    let dims = ModelDims::mnist_mlp(settings.latent_dim, train.classes());
    let model = init_model(&dims, beta, settings.noise_enabled, settings.seed)?;
    let mut trainer = Trainer::new(model, settings.train_config(settings.seed));
    let history = trainer.fit(train, test, |m| on_epoch(m))?;
    let test_accuracy = match history.last() {
        Some(m) => m.test_accuracy.clone(),
        None => evaluate(&trainer.model, test, settings.seed)?,
    };
    Ok(TrainOutcome {
        model: trainer.model,
        history,
        test_accuracy,
        task_names: train.task_names(),
    })
}

/// Builds the dataset named by `settings` and trains one model per beta.
fn train_models(
    settings: &Settings,
    mnist: &MnistSplits,
    betas: &[f64],
    on_epoch: &(dyn Fn(f64, &EpochMetrics) + Sync),
) -> Result<Vec<TrainOutcome>, ExperimentError> {
    let run = |train: &(dyn Fn(f64) -> Result<TrainOutcome, ExperimentError> + Sync)| {
        betas.par_iter().map(|&b| train(b)).collect::<Result<Vec<_>, _>>()
    };
    match settings.dataset {
        Some(DatasetKind::Grouped) => {
            let train = make_grouped(&mnist.train, &settings.groups)?;
            let test = make_grouped(&mnist.test, &settings.groups)?;
            run(&|b| train_on(&train, &test, settings, b, &mut |m| on_epoch(b, m)))
        }
        Some(DatasetKind::Multimnist) => {
            let train = make_multimnist(&mnist.train, settings.seed)?;
            let test = make_multimnist(&mnist.test, settings.seed ^ TEST_PAIRING_SALT)?;
            run(&|b| train_on(&train, &test, settings, b, &mut |m| on_epoch(b, m)))
        }
        None => Err(ExperimentError::Config(format!("kind {:?} does not train a dataset", settings.kind))),
    }
}

/// Trains one model. Writes `metrics.ndjson` (one record per epoch), `timing.ndjson`,
/// `checkpoint.json` and the resolved `config.json`.
pub fn cmd_train(
    settings: &Settings,
    mnist: &MnistSplits,
    on_epoch: &(dyn Fn(&EpochMetrics) + Sync),
) -> Result<TrainOutcome, ExperimentError> {
    if !matches!(settings.kind, ExperimentKind::Grouped | ExperimentKind::Multimnist) {
        return Err(ExperimentError::Config("train needs kind grouped or multimnist".into()));
    }
    create_dir(&settings.out_dir)?;
    write_json(&settings.out_dir.join("config.json"), settings)?;

    let metrics_path = settings.out_dir.join("metrics.ndjson");
    let timing_path = settings.out_dir.join("timing.ndjson");
    let open = |p: &Path| fs::File::create(p).map_err(|e| ExperimentError::io(p, e));
    let metrics = std::sync::Mutex::new((open(&metrics_path)?, open(&timing_path)?, std::time::Instant::now(), None));
    let log = |_: f64, m: &EpochMetrics| {
        let mut guard = metrics.lock().expect("metrics log");
        let (mfile, tfile, start, err) = &mut *guard;
        let line = serde_json::to_string(m).expect("metrics serialize");
        let timing = format!("{{\"epoch\":{},\"elapsed_secs\":{:.3}}}", m.epoch, start.elapsed().as_secs_f64());
        if let Err(e) = writeln!(mfile, "{line}").and_then(|_| writeln!(tfile, "{timing}")) {
            err.get_or_insert(e.to_string());
        }
        on_epoch(m);
    };
    let outcome = train_models(settings, mnist, &settings.betas[..1], &log)?
        .pop()
        .expect("one beta");
    if let (.., Some(e)) = &*metrics.lock().expect("metrics log") {
        return Err(ExperimentError::io(&metrics_path, e));
    }
    outcome.model.save_checkpoint(&settings.out_dir.join("checkpoint.json"))?;
    Ok(outcome)
}

/// One row of the beta sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub noise_enabled: bool,
    pub task_names: Vec<String>,
    pub test_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub log_vars: Vec<Vec<f64>>,
    /// Relative path of the task distance CSV.
    pub distance_file: String,
}

/// Trains one model per beta in parallel and writes `sweep.csv` plus one distance
/// matrix per row under `distances/`. Row `i` always belongs to `betas[i]`.
pub fn cmd_sweep(settings: &Settings, mnist: &MnistSplits) -> Result<Vec<SweepRow>, ExperimentError> {
    if settings.dataset.is_none() {
        return Err(ExperimentError::Config("sweep needs a dataset".into()));
    }
    let outcomes = train_models(settings, mnist, &settings.betas, &|_, _| {})?;
    let dist_dir = settings.out_dir.join("distances");
    create_dir(&dist_dir)?;
    write_json(&settings.out_dir.join("config.json"), settings)?;

    let mut rows = Vec::with_capacity(outcomes.len());
    for (i, (outcome, &beta)) in outcomes.iter().zip(&settings.betas).enumerate() {
        let accuracy = outcome.test_accuracy.clone();
        let mut matrix = distance_matrix(&outcome.model);
        matrix.labels = outcome.task_names.clone();
        let file = format!("distances/beta_{i}.csv");
        matrix.write_csv(&settings.out_dir.join(&file))?;
        rows.push(SweepRow {
            beta,
            noise_enabled: settings.noise_enabled,
            task_names: outcome.task_names.clone(),
            mean_accuracy: mean(&accuracy),
            test_accuracy: accuracy,
            log_vars: outcome.model.filters.iter().map(|f| f.log_var.to_vec()).collect(),
            distance_file: file,
        });
    }
    write_file(&settings.out_dir.join("sweep.csv"), sweep_csv(&rows)?.as_bytes())?;
    write_json(&settings.out_dir.join("sweep.json"), &rows)?;
    Ok(rows)
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| ExperimentError::Data(e.to_string());
    let names = rows.first().map(|r| r.task_names.clone()).unwrap_or_default();
    let mut header = vec!["beta".to_string(), "noise".to_string()];
    header.extend(names.iter().map(|n| format!("acc_{n}")));
    header.extend(["mean_accuracy".to_string(), "distance_file".to_string()]);
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.beta.to_string(), r.noise_enabled.to_string()];
        rec.extend(r.test_accuracy.iter().map(f64::to_string));
        rec.extend([r.mean_accuracy.to_string(), r.distance_file.clone()]);
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// One beta of the noise-protocol comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub beta: f64,
    pub n_trials: usize,
    pub trainable_noise_successes: usize,
    pub fixed_noise_successes: usize,
    /// Percentages, as in a success-rate table.
    pub trainable_noise_rate: f64,
    pub fixed_noise_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub seed: u64,
    pub epochs: usize,
    pub latent_dim: usize,
    pub rows: Vec<AblationRow>,
    pub trials: Vec<TrialReport>,
}

/// Runs both noise protocols on the same sampled groups at every beta and writes
/// `ablation.json` and `ablation.csv`.
pub fn cmd_ablate(settings: &Settings, mnist: &MnistSplits) -> Result<AblationSummary, ExperimentError> {
    let mut rows = Vec::with_capacity(settings.betas.len());
    let mut trials = Vec::new();
    for &beta in &settings.betas {
        let cfg = RepeatedConfig {
            latent_dim: settings.latent_dim,
            beta,
            epochs: settings.epochs,
            batch_size: settings.batch_size,
            learning_rate: settings.learning_rate,
            ..RepeatedConfig::default()
        };
        let ours = repeated_trials(&cfg, Protocol::TrainableNoise, settings.n_trials, settings.seed, mnist)?;
        let fixed = repeated_trials(&cfg, Protocol::FixedNoise, settings.n_trials, settings.seed, mnist)?;
        rows.push(AblationRow {
            beta,
            n_trials: settings.n_trials,
            trainable_noise_successes: ours.successes,
            fixed_noise_successes: fixed.successes,
            trainable_noise_rate: 100.0 * ours.success_rate,
            fixed_noise_rate: 100.0 * fixed.success_rate,
        });
        trials.extend(ours.reports);
        trials.extend(fixed.reports);
    }
    let summary = AblationSummary {
        seed: settings.seed,
        epochs: settings.epochs,
        latent_dim: settings.latent_dim,
        rows,
        trials,
    };
    create_dir(&settings.out_dir)?;
    write_json(&settings.out_dir.join("config.json"), settings)?;
    write_json(&settings.out_dir.join("ablation.json"), &summary)?;
    write_file(&settings.out_dir.join("ablation.csv"), ablation_csv(&summary.rows)?.as_bytes())?;
    Ok(summary)
}

pub fn ablation_csv(rows: &[AblationRow]) -> Result<String, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| ExperimentError::Data(e.to_string());
    w.write_record(["beta", "n_trials", "ours_percent", "fixed_noise_percent"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.beta.to_string(),
            r.n_trials.to_string(),
            r.trainable_noise_rate.to_string(),
            r.fixed_noise_rate.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(json: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(json).unwrap()
    }

    #[test]
    fn defaults_depend_on_kind() {
        let s = cfg(r#"{"kind":"ablation"}"#).resolve().unwrap();
        assert_eq!((s.epochs, s.betas.clone(), s.n_trials, s.latent_dim), (25, vec![0.1], 20, 4));
        let s = cfg(r#"{"kind":"multimnist"}"#).resolve().unwrap();
        assert_eq!((s.epochs, s.betas.clone()), (100, vec![0.0]));
        assert_eq!(s.dataset, Some(DatasetKind::Multimnist));
        assert_eq!(s.learning_rate, 1e-4);
        let s = cfg(r#"{"kind":"sweep"}"#).resolve().unwrap();
        assert_eq!(s.dataset, Some(DatasetKind::Grouped));
        assert_eq!(s.groups.len(), 4);
    }

    #[test]
    fn flags_override_file_values() {
        let mut file = cfg(r#"{"kind":"grouped","epochs":7,"seed":3,"betas":[0.5]}"#);
        let flags = ExperimentConfig {
            seed: Some(11),
            betas: Some(vec![0.01]),
            ..Default::default()
        };
        file.overlay(&flags);
        let s = file.resolve().unwrap();
        assert_eq!((s.epochs, s.seed, s.betas), (7, 11, vec![0.01]));
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for json in [
            r#"{}"#,
            r#"{"kind":"grouped","betas":[-0.1]}"#,
            r#"{"kind":"grouped","betas":[]}"#,
            r#"{"kind":"grouped","betas":[0.1,0.2]}"#,
            r#"{"kind":"grouped","latent_dim":0}"#,
            r#"{"kind":"grouped","batch_size":0}"#,
            r#"{"kind":"ablation","n_trials":0}"#,
            r#"{"kind":"ablation","noise_enabled":false}"#,
            r#"{"kind":"gauss-ib","betas":[0.0]}"#,
            r#"{"kind":"grouped","dataset":"multimnist"}"#,
        ] {
            let err = cfg(json).resolve().unwrap_err();
            assert_eq!(err.exit_code(), 2, "{json}: {err}");
        }
        for json in [r#"{"kind":"nope"}"#, r#"{"kind":"grouped","typo":1}"#, r#"{"kind":"grouped","groups":[[1,1]]}"#] {
            assert_eq!(ExperimentConfig::from_json(json).unwrap_err().exit_code(), 2, "{json}");
        }
    }

    #[test]
    fn config_round_trips() {
        let c = cfg(r#"{"kind":"sweep","dataset":"multimnist","betas":[0,0.0001,0.1],"groups":[[1,2,3]],"seed":5,"data_dir":"x/y"}"#);
        let again = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.to_json(), again.to_json());
    }

    #[test]
    fn default_gaussian_problem_disentangles() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg(r#"{"kind":"gauss-ib","betas":[0.1,0.5,0.95]}"#);
        c.out_dir = Some(dir.path().to_path_buf());
        let report = cmd_gauss_ib(&c.resolve().unwrap()).unwrap();
        let first = &report.entries[0];
        assert_eq!(first.complementary, Some(true));
        assert_eq!(first.masks.as_ref().unwrap(), &vec![vec![true, true, false, false], vec![false, false, true, true]]);
        // beta = 0.95 > 1 - 0.1 discards every direction.
        let last = &report.entries[2];
        assert!(last.solutions.iter().all(|s| s.noise_variances.iter().all(|v| v.is_infinite())));
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(ExperimentError::from(DataError::Empty).exit_code(), 3);
        assert_eq!(ExperimentError::from(ModelError::NonFinite("loss".into())).exit_code(), 4);
        assert_eq!(ExperimentError::from(GaussianIbError::InvalidBeta(-1.0)).exit_code(), 2);
        assert_eq!(ExperimentError::from(GaussianIbError::SingularCovariance(1e-14)).exit_code(), 4);
    }
}
