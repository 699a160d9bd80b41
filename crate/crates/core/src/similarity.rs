//! Task similarity from learned noise log-variances.
//!
//! Two tasks are compared through the L1 distance of their log-variance vectors.
//! When tasks come in known pairs, clustering succeeds if every distance across
//! pairs is strictly larger than every distance within a pair.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{make_grouped, DataError, MnistDataset, TaskGroup};
use crate::model::{init_model, ModelDims, ModelError, MtlModel, TaskNoiseFilter, Trainable, DEFAULT_LEARNING_RATE};
use crate::rng::{stream, Purpose};
use crate::train::{evaluate, TrainConfig, Trainer, DEFAULT_BATCH_SIZE};

/// Log-variance every filter is pinned to in the fixed-noise protocol (`sigma^2 = e`).
pub const FIXED_LOG_VAR: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("log-variance vectors differ in length ({0} vs {1})")]
    ShapeMismatch(usize, usize),
    #[error("pair assignment does not match the distance matrix: {0}")]
    InconsistentLabels(String),
    #[error("invalid pair assignment: {0}")]
    InvalidPairs(String),
    #[error("invalid trial configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("export failed: {0}")]
    Export(String),
}

/// `sum_i |log sigma_a,i^2 - log sigma_b,i^2|`.
pub fn l1_logvar_distance(a: &TaskNoiseFilter, b: &TaskNoiseFilter) -> Result<f64, SimilarityError> {
    l1_distance(a.log_var.as_slice().expect("contiguous"), b.log_var.as_slice().expect("contiguous"))
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::ShapeMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    /// CSV with a header row and a leading label column.
    pub fn to_csv(&self) -> Result<String, SimilarityError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let export = |e: csv::Error| SimilarityError::Export(e.to_string());
        w.write_record(std::iter::once("task").chain(self.labels.iter().map(String::as_str)))
            .map_err(export)?;
        for (label, row) in self.labels.iter().zip(&self.values) {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            w.write_record(std::iter::once(label.as_str()).chain(cells.iter().map(String::as_str)))
                .map_err(export)?;
        }
        let bytes = w.into_inner().map_err(|e| SimilarityError::Export(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| SimilarityError::Export(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SimilarityError> {
        fs::write(path, self.to_csv()?).map_err(|e| SimilarityError::Export(format!("{}: {e}", path.display())))
    }
}

/// Pairwise distances between the filters of all tasks.
pub fn filter_distance_matrix(filters: &[TaskNoiseFilter], labels: Vec<String>) -> Result<DistanceMatrix, SimilarityError> {
    if labels.len() != filters.len() {
        return Err(SimilarityError::InconsistentLabels(format!(
            "{} labels for {} filters",
            labels.len(),
            filters.len()
        )));
    }
    let n = filters.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = l1_logvar_distance(&filters[i], &filters[j])?;
            values[i][j] = d;
            values[j][i] = d;
        }
    }
    Ok(DistanceMatrix { labels, values })
}

/// Distance matrix of a model with tasks labelled `task0, task1, ...`.
pub fn distance_matrix(model: &MtlModel) -> DistanceMatrix {
    let labels = (0..model.num_tasks()).map(|j| format!("task{j}")).collect();
    filter_distance_matrix(&model.filters, labels).expect("filters share the latent dimension")
}

/// Ground-truth pairing of tasks (by index).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairAssignment {
    pairs: Vec<(usize, usize)>,
}

impl PairAssignment {
    /// Every task in `0..num_tasks` must appear in exactly one pair.
    pub fn new(pairs: Vec<(usize, usize)>, num_tasks: usize) -> Result<Self, SimilarityError> {
        if !num_tasks.is_multiple_of(2) || pairs.len() * 2 != num_tasks {
            return Err(SimilarityError::InvalidPairs(format!(
                "{} pairs cannot cover {num_tasks} tasks",
                pairs.len()
            )));
        }
        let mut seen = vec![false; num_tasks];
        for &(a, b) in &pairs {
            for t in [a, b] {
                if t >= num_tasks || seen[t] {
                    return Err(SimilarityError::InvalidPairs(format!("task {t} repeated or out of range")));
                }
                seen[t] = true;
            }
        }
        Ok(PairAssignment { pairs })
    }

    /// Tasks `(0,1), (2,3), ...`.
    pub fn consecutive(num_tasks: usize) -> Result<Self, SimilarityError> {
        Self::new((0..num_tasks / 2).map(|p| (2 * p, 2 * p + 1)).collect(), num_tasks)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn num_tasks(&self) -> usize {
        self.pairs.len() * 2
    }

    fn pair_of(&self, task: usize) -> usize {
        self.pairs
            .iter()
            .position(|&(a, b)| a == task || b == task)
            .expect("validated assignment covers every task")
    }
}

/// True iff the smallest cross-pair distance is strictly larger than the largest
/// within-pair distance.
pub fn clustering_success(matrix: &DistanceMatrix, pairs: &PairAssignment) -> Result<bool, SimilarityError> {
    if matrix.len() != pairs.num_tasks() {
        return Err(SimilarityError::InconsistentLabels(format!(
            "matrix has {} tasks, pairs cover {}",
            matrix.len(),
            pairs.num_tasks()
        )));
    }
    let within = pairs
        .pairs()
        .iter()
        .map(|&(a, b)| matrix.get(a, b))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut cross = f64::INFINITY;
    for i in 0..matrix.len() {
        for j in i + 1..matrix.len() {
            if pairs.pair_of(i) != pairs.pair_of(j) {
                cross = cross.min(matrix.get(i, j));
            }
        }
    }
    Ok(cross > within)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Noise variances trained jointly with everything else.
    TrainableNoise,
    /// Encoder trained with `sigma^2 = e` frozen, then variances trained with the encoder frozen.
    FixedNoise,
}

/// Grouped-MNIST similarity trial settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub groups: Vec<TaskGroup>,
    pub pairs: PairAssignment,
    pub latent_dim: usize,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl TrialConfig {
    /// Four tasks from two pairs of groups, `D = 4`, `beta = 0.1`, 25 epochs.
    pub fn paired(groups: Vec<TaskGroup>) -> Result<Self, SimilarityError> {
        let pairs = PairAssignment::consecutive(groups.len())?;
        Ok(TrialConfig {
            groups,
            pairs,
            latent_dim: 4,
            beta: 0.1,
            epochs: 25,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
        })
    }

    fn validate(&self) -> Result<(), SimilarityError> {
        if self.groups.len() != self.pairs.num_tasks() {
            return Err(SimilarityError::InvalidConfig(format!(
                "{} groups but pairs cover {} tasks",
                self.groups.len(),
                self.pairs.num_tasks()
            )));
        }
        if self.latent_dim == 0 || self.batch_size == 0 || !(self.beta >= 0.0) || !(self.learning_rate > 0.0) {
            return Err(SimilarityError::InvalidConfig(format!(
                "D = {}, batch = {}, beta = {}, lr = {}",
                self.latent_dim, self.batch_size, self.beta, self.learning_rate
            )));
        }
        Ok(())
    }

    fn dims(&self) -> ModelDims {
        ModelDims::mnist_mlp(self.latent_dim, self.groups.iter().map(TaskGroup::num_classes).collect())
    }

    fn train_config(&self, epochs: usize, seed: u64, trainable: Trainable) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            trainable,
        }
    }
}

/// MNIST train and test splits shared read-only by all trials.
pub struct MnistSplits {
    pub train: MnistDataset,
    pub test: MnistDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub seed: u64,
    pub protocol: Protocol,
    pub groups: Vec<TaskGroup>,
    pub beta: f64,
    pub test_accuracy: Vec<f64>,
    pub log_vars: Vec<Vec<f64>>,
    pub distance_matrix: DistanceMatrix,
    pub success: bool,
}

impl TrialReport {
    fn from_model(
        config: &TrialConfig,
        seed: u64,
        protocol: Protocol,
        model: &MtlModel,
        test_accuracy: Vec<f64>,
    ) -> Result<Self, SimilarityError> {
        let labels = config.groups.iter().map(ToString::to_string).collect();
        let matrix = filter_distance_matrix(&model.filters, labels)?;
        let success = clustering_success(&matrix, &config.pairs)?;
        Ok(TrialReport {
            seed,
            protocol,
            groups: config.groups.clone(),
            beta: config.beta,
            test_accuracy,
            log_vars: model.filters.iter().map(|f| f.log_var.to_vec()).collect(),
            distance_matrix: matrix,
            success,
        })
    }

    pub fn mean_accuracy(&self) -> f64 {
        self.test_accuracy.iter().sum::<f64>() / self.test_accuracy.len() as f64
    }
}

/// Trains one fresh model with trainable noise and reports its task distances.
pub fn run_trial(config: &TrialConfig, seed: u64, mnist: &MnistSplits) -> Result<TrialReport, SimilarityError> {
    config.validate()?;
    let train = make_grouped(&mnist.train, &config.groups)?;
    let test = make_grouped(&mnist.test, &config.groups)?;
    let model = init_model(&config.dims(), config.beta, true, seed)?;
    let mut trainer = Trainer::new(model, config.train_config(config.epochs, seed, Trainable::ALL));
    trainer.fit(&train, &test, |_| {})?;
    let accuracy = evaluate(&trainer.model, &test, seed)?;
    TrialReport::from_model(config, seed, Protocol::TrainableNoise, &trainer.model, accuracy)
}

/// Both phases of the fixed-noise protocol, kept for inspection.
pub struct FixedNoiseRun {
    pub phase1: MtlModel,
    pub phase2: MtlModel,
    pub report: TrialReport,
}

/// Phase 1 trains encoder and heads with every `log sigma^2` pinned at 1. Phase 2
/// freezes the encoder and trains heads together with the variances, starting from
/// the phase-1 parameters with a fresh optimizer. Both phases run `config.epochs`.
pub fn run_fixed_noise_phases(config: &TrialConfig, seed: u64, mnist: &MnistSplits) -> Result<FixedNoiseRun, SimilarityError> {
    config.validate()?;
    let train = make_grouped(&mnist.train, &config.groups)?;
    let test = make_grouped(&mnist.test, &config.groups)?;
    let mut model = init_model(&config.dims(), config.beta, true, seed)?;
    for f in &mut model.filters {
        f.log_var.fill(FIXED_LOG_VAR);
    }

    let phase1_trainable = Trainable {
        log_var: false,
        ..Trainable::ALL
    };
    let mut trainer = Trainer::new(model, config.train_config(config.epochs, seed, phase1_trainable));
    trainer.fit(&train, &test, |_| {})?;
    let phase1 = trainer.model;

    let phase2_trainable = Trainable {
        encoder: false,
        ..Trainable::ALL
    };
    let phase2_seed = seed ^ 0x9e37_79b9_7f4a_7c15;
    let mut trainer = Trainer::new(phase1.clone(), config.train_config(config.epochs, phase2_seed, phase2_trainable));
    trainer.fit(&train, &test, |_| {})?;
    let phase2 = trainer.model;

    let accuracy = evaluate(&phase2, &test, seed)?;
    let report = TrialReport::from_model(config, seed, Protocol::FixedNoise, &phase2, accuracy)?;
    Ok(FixedNoiseRun {
        phase1,
        phase2,
        report,
    })
}

pub fn run_ablation_fixed_noise(config: &TrialConfig, seed: u64, mnist: &MnistSplits) -> Result<TrialReport, SimilarityError> {
    Ok(run_fixed_noise_phases(config, seed, mnist)?.report)
}

/// Shape of the randomly drawn paired groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedConfig {
    pub num_pairs: usize,
    pub digits_per_group: usize,
    pub shared_per_pair: usize,
    pub latent_dim: usize,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for RepeatedConfig {
    fn default() -> Self {
        RepeatedConfig {
            num_pairs: 2,
            digits_per_group: 3,
            shared_per_pair: 2,
            latent_dim: 4,
            beta: 0.1,
            epochs: 25,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
        }
    }
}

/// Draws paired groups: each pair shares `shared_per_pair` digits and each task adds
/// its own extras. All digits across all groups are distinct apart from the shared ones.
pub fn sample_paired_groups(config: &RepeatedConfig, seed: u64, trial: u64) -> Result<Vec<TaskGroup>, SimilarityError> {
    let extra = config
        .digits_per_group
        .checked_sub(config.shared_per_pair)
        .filter(|&e| e >= 1)
        .ok_or_else(|| SimilarityError::InvalidConfig("each task needs at least one digit of its own".into()))?;
    let needed = config.num_pairs * (config.shared_per_pair + 2 * extra);
    if config.num_pairs == 0 || needed > 10 {
        return Err(SimilarityError::InvalidConfig(format!(
            "{} pairs of {}-digit groups need {needed} distinct digits",
            config.num_pairs, config.digits_per_group
        )));
    }
    let mut digits: Vec<u8> = (0..10).collect();
    digits.shuffle(&mut stream(seed, Purpose::DigitSampler, trial));
    let mut pool = digits.into_iter();
    let mut groups = Vec::with_capacity(2 * config.num_pairs);
    for _ in 0..config.num_pairs {
        let shared: Vec<u8> = pool.by_ref().take(config.shared_per_pair).collect();
        for _ in 0..2 {
            let mut g = shared.clone();
            g.extend(pool.by_ref().take(extra));
            groups.push(TaskGroup::new(g)?);
        }
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedSummary {
    pub protocol: Protocol,
    pub beta: f64,
    pub n_trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub reports: Vec<TrialReport>,
}

/// Seed used for trial `k`; shared by both protocols so they see identical groups.
pub fn trial_seed(digit_sampler_seed: u64, trial: u64) -> u64 {
    digit_sampler_seed
        .wrapping_mul(1_000_003)
        .wrapping_add(trial)
}

/// Success fraction over completed reports; independent of their order.
pub fn success_rate(reports: &[TrialReport]) -> f64 {
    if reports.is_empty() {
        return 0.0;
    }
    reports.iter().filter(|r| r.success).count() as f64 / reports.len() as f64
}

/// Runs `n_trials` independent trials in parallel with freshly drawn groups.
pub fn repeated_trials(
    config: &RepeatedConfig,
    protocol: Protocol,
    n_trials: usize,
    digit_sampler_seed: u64,
    mnist: &MnistSplits,
) -> Result<RepeatedSummary, SimilarityError> {
    if n_trials == 0 {
        return Err(SimilarityError::InvalidConfig("n_trials must be at least 1".into()));
    }
    let reports = (0..n_trials as u64)
        .into_par_iter()
        .map(|k| {
            let groups = sample_paired_groups(config, digit_sampler_seed, k)?;
            let mut trial = TrialConfig::paired(groups)?;
            trial.latent_dim = config.latent_dim;
            trial.beta = config.beta;
            trial.epochs = config.epochs;
            trial.batch_size = config.batch_size;
            trial.learning_rate = config.learning_rate;
            let seed = trial_seed(digit_sampler_seed, k);
            match protocol {
                Protocol::TrainableNoise => run_trial(&trial, seed, mnist),
                Protocol::FixedNoise => run_ablation_fixed_noise(&trial, seed, mnist),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let successes = reports.iter().filter(|r| r.success).count();
    Ok(RepeatedSummary {
        protocol,
        beta: config.beta,
        n_trials,
        successes,
        success_rate: success_rate(&reports),
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use proptest::prelude::*;

    fn filter(log_var: &[f64]) -> TaskNoiseFilter {
        TaskNoiseFilter::new(Array1::from(log_var.to_vec()), Array1::zeros(log_var.len())).unwrap()
    }

    fn matrix(values: Vec<Vec<f64>>) -> DistanceMatrix {
        DistanceMatrix {
            labels: (0..values.len()).map(|i| format!("t{i}")).collect(),
            values,
        }
    }

    #[test]
    fn distance_examples() {
        let a = filter(&[0.0, 1.0, 2.0, 3.0]);
        let b = filter(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(l1_logvar_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(l1_logvar_distance(&a, &b).unwrap(), 4.0);
        assert_eq!(l1_logvar_distance(&b, &a).unwrap(), 4.0);
        assert!(matches!(
            l1_logvar_distance(&a, &filter(&[1.0])),
            Err(SimilarityError::ShapeMismatch(4, 1))
        ));
    }

    #[test]
    fn pinned_three_task_matrix() {
        let filters = [filter(&[0.0, 0.0]), filter(&[1.0, -1.0]), filter(&[3.0, 0.5])];
        let m = filter_distance_matrix(&filters, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        assert_eq!(m.values, vec![vec![0.0, 2.0, 3.5], vec![2.0, 0.0, 3.5], vec![3.5, 3.5, 0.0]]);
        assert_eq!(m.to_csv().unwrap(), "task,a,b,c\na,0,2,3.5\nb,2,0,3.5\nc,3.5,3.5,0\n");
    }

    #[test]
    fn two_task_and_equal_filter_models() {
        let mut model = init_model(&ModelDims::mnist_mlp(3, vec![2, 2]), 0.1, true, 1).unwrap();
        let m = distance_matrix(&model);
        assert_eq!(m.len(), 2);
        assert_eq!(m.get(0, 1), m.get(1, 0));
        assert!(m.get(0, 1) > 0.0);
        let shared = model.filters[0].clone();
        model.filters[1] = shared;
        assert!(distance_matrix(&model).values.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn success_predicate_cases() {
        let pairs = PairAssignment::consecutive(4).unwrap();
        let good = matrix(vec![
            vec![0.0, 1.0, 5.0, 6.0],
            vec![1.0, 0.0, 7.0, 5.0],
            vec![5.0, 7.0, 0.0, 1.0],
            vec![6.0, 5.0, 1.0, 0.0],
        ]);
        assert!(clustering_success(&good, &pairs).unwrap());
        let tie = matrix(vec![
            vec![0.0, 5.0, 5.0, 6.0],
            vec![5.0, 0.0, 7.0, 5.0],
            vec![5.0, 7.0, 0.0, 1.0],
            vec![6.0, 5.0, 1.0, 0.0],
        ]);
        assert!(!clustering_success(&tie, &pairs).unwrap());
        let small = matrix(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(matches!(
            clustering_success(&small, &pairs),
            Err(SimilarityError::InconsistentLabels(_))
        ));
    }

    #[test]
    fn pair_assignment_validation() {
        assert!(PairAssignment::new(vec![(0, 1)], 3).is_err());
        assert!(PairAssignment::new(vec![(0, 1), (1, 2)], 4).is_err());
        assert!(PairAssignment::new(vec![(0, 5), (1, 2)], 4).is_err());
        assert!(PairAssignment::new(vec![(0, 2), (1, 3)], 4).is_ok());
    }

    #[test]
    fn sampled_groups_respect_pairing() {
        let cfg = RepeatedConfig::default();
        for trial in 0..20 {
            let g = sample_paired_groups(&cfg, 42, trial).unwrap();
            assert_eq!(g.len(), 4);
            for p in 0..2 {
                let (a, b) = (g[2 * p].digits(), g[2 * p + 1].digits());
                assert_eq!(a[..2], b[..2]);
                assert_ne!(a[2], b[2]);
            }
            let mut all: Vec<u8> = g.iter().flat_map(|t| t.digits()[2..].to_vec()).collect();
            all.extend(g[0].digits()[..2].iter().chain(&g[2].digits()[..2]));
            all.sort_unstable();
            all.dedup();
            assert_eq!(all.len(), 8);
        }
        assert_eq!(sample_paired_groups(&cfg, 42, 3).unwrap(), sample_paired_groups(&cfg, 42, 3).unwrap());
        let too_many = RepeatedConfig {
            num_pairs: 3,
            ..cfg
        };
        assert!(sample_paired_groups(&too_many, 1, 0).is_err());
    }

    fn report(success: bool) -> TrialReport {
        TrialReport {
            seed: 0,
            protocol: Protocol::TrainableNoise,
            groups: vec![],
            beta: 0.1,
            test_accuracy: vec![],
            log_vars: vec![],
            distance_matrix: matrix(vec![]),
            success,
        }
    }

    #[test]
    fn rate_ignores_order() {
        let mut reports: Vec<_> = [true, false, true, true].into_iter().map(report).collect();
        let r = success_rate(&reports);
        reports.reverse();
        assert_eq!(r, success_rate(&reports));
        assert_eq!(r, 0.75);
        assert!([0.0, 1.0].contains(&success_rate(&[report(true)])));
    }

    /// Exhaustive check straight from the definition.
    fn brute_force(m: &DistanceMatrix, pair_of: &[usize]) -> bool {
        let n = m.len();
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let within = a != b && pair_of[a] == pair_of[b];
                        let cross = pair_of[c] != pair_of[d];
                        if within && cross && m.get(c, d) <= m.get(a, b) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    fn arb_filters() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..6).prop_flat_map(|d| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), 2..7))
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(vs in arb_filters()) {
            let filters: Vec<_> = vs.iter().map(|v| filter(v)).collect();
            let m = filter_distance_matrix(&filters, (0..vs.len()).map(|i| i.to_string()).collect()).unwrap();
            for i in 0..vs.len() {
                prop_assert_eq!(m.get(i, i), 0.0);
                for j in 0..vs.len() {
                    prop_assert!(m.get(i, j) >= 0.0);
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                    if m.get(i, j) == 0.0 {
                        prop_assert_eq!(&vs[i], &vs[j]);
                    }
                    for k in 0..vs.len() {
                        prop_assert!(m.get(i, k) <= m.get(i, j) + m.get(j, k) + 1e-12);
                    }
                }
            }
        }

        #[test]
        fn constant_shift_leaves_distances(vs in arb_filters(), c in -3.0f64..3.0) {
            let labels: Vec<String> = (0..vs.len()).map(|i| i.to_string()).collect();
            let a: Vec<_> = vs.iter().map(|v| filter(v)).collect();
            let b: Vec<_> = vs.iter().map(|v| filter(&v.iter().map(|x| x + c).collect::<Vec<_>>())).collect();
            let ma = filter_distance_matrix(&a, labels.clone()).unwrap();
            let mb = filter_distance_matrix(&b, labels).unwrap();
            for (ra, rb) in ma.values.iter().zip(&mb.values) {
                for (x, y) in ra.iter().zip(rb) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn success_matches_brute_force_and_relabeling(
            noise in prop::collection::vec(0.0f64..1.0, 16),
            separation in 0.0f64..2.0,
            perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        ) {
            // Block-structured matrix: pairs {0,1} and {2,3}.
            let mut values = vec![vec![0.0; 4]; 4];
            for i in 0..4 {
                for j in i + 1..4 {
                    let base = if i / 2 == j / 2 { 0.5 } else { 0.5 + separation };
                    values[i][j] = base + noise[i * 4 + j];
                    values[j][i] = values[i][j];
                }
            }
            let m = matrix(values.clone());
            let pairs = PairAssignment::consecutive(4).unwrap();
            let fast = clustering_success(&m, &pairs).unwrap();
            prop_assert_eq!(fast, brute_force(&m, &[0, 0, 1, 1]));

            // Relabel tasks consistently in matrix and pairs.
            let mut permuted = vec![vec![0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    permuted[perm[i]][perm[j]] = values[i][j];
                }
            }
            let relabeled = PairAssignment::new(vec![(perm[0], perm[1]), (perm[2], perm[3])], 4).unwrap();
            prop_assert_eq!(fast, clustering_success(&matrix(permuted), &relabeled).unwrap());
        }
    }
}
