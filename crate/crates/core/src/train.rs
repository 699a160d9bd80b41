//! Seeded mini-batch training and single-sample evaluation.

use serde::{Deserialize, Serialize};

use crate::data::{batches, MultiTaskData};
use crate::model::{
    adam_step, draw_noise, forward_backward, predict, AdamState, Batch, GaussianSource, LossBreakdown,
    ModelError, MtlModel, SeededGaussian, Trainable, DEFAULT_LEARNING_RATE,
};
use crate::rng::Purpose;

pub const DEFAULT_BATCH_SIZE: usize = 128;
const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Drives batch order and noise draws.
    pub seed: u64,
    pub trainable: Trainable,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed,
            trainable: Trainable::ALL,
        }
    }
}

/// Batch-averaged loss components over one epoch plus held-out accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub cross_entropy: Vec<f64>,
    pub kl: Vec<f64>,
    pub test_accuracy: Vec<f64>,
}

/// Owns the optimizer state for one model; single writer.
pub struct Trainer {
    pub model: MtlModel,
    pub state: AdamState,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(model: MtlModel, config: TrainConfig) -> Self {
        let state = AdamState::for_model(&model, config.learning_rate);
        Trainer { model, state, config }
    }

    /// One Adam step on `batch` with the given noise; returns the pre-update loss.
    pub fn step(&mut self, batch: &Batch, noise: &[ndarray::Array2<f64>]) -> Result<LossBreakdown, ModelError> {
        let (loss, grads) = forward_backward(&self.model, batch, noise, Some(self.config.trainable))?;
        let grads = grads.expect("gradients requested");
        if !loss.total.is_finite() {
            return Err(ModelError::NonFinite("training loss".into()));
        }
        adam_step(&mut self.model, &grads, &mut self.state, self.config.trainable)?;
        Ok(loss)
    }

    /// Runs epoch `epoch` (0-based) over `data`; returns averaged loss components.
    pub fn train_epoch<D: MultiTaskData + ?Sized>(&mut self, data: &D, epoch: usize) -> Result<LossBreakdown, ModelError> {
        let tasks = self.model.num_tasks();
        let dim = self.model.latent_dim();
        let mut noise_source = SeededGaussian::new(self.config.seed, Purpose::TrainNoise, epoch as u64);
        let mut sum = LossBreakdown {
            total: 0.0,
            cross_entropy: vec![0.0; tasks],
            kl: vec![0.0; tasks],
        };
        let order = batches(data.len(), self.config.batch_size, self.config.seed, epoch as u64);
        let count = order.len() as f64;
        for indices in &order {
            let batch = data.gather(indices);
            let noise = if self.model.noise_enabled {
                draw_noise(&mut noise_source, tasks, batch.len(), dim)
            } else {
                Vec::new()
            };
            let loss = self.step(&batch, &noise)?;
            sum.total += loss.total;
            for j in 0..tasks {
                sum.cross_entropy[j] += loss.cross_entropy[j];
                sum.kl[j] += loss.kl[j];
            }
        }
        sum.total /= count;
        sum.cross_entropy.iter_mut().for_each(|v| *v /= count);
        sum.kl.iter_mut().for_each(|v| *v /= count);
        Ok(sum)
    }

    /// Trains for `config.epochs`, evaluating on `test` after each epoch.
    pub fn fit<D, T>(
        &mut self,
        train: &D,
        test: &T,
        mut on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<Vec<EpochMetrics>, ModelError>
    where
        D: MultiTaskData + ?Sized,
        T: MultiTaskData + ?Sized,
    {
        let mut history = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            let loss = self.train_epoch(train, epoch)?;
            let metrics = EpochMetrics {
                epoch: epoch + 1,
                loss: loss.total,
                cross_entropy: loss.cross_entropy,
                kl: loss.kl,
                test_accuracy: evaluate(&self.model, test, self.config.seed)?,
            };
            on_epoch(&metrics);
            history.push(metrics);
        }
        Ok(history)
    }
}

/// Per-task accuracy using one noisy sample per (example, task).
pub fn evaluate<D: MultiTaskData + ?Sized>(model: &MtlModel, data: &D, seed: u64) -> Result<Vec<f64>, ModelError> {
    evaluate_with(model, data, &mut SeededGaussian::new(seed, Purpose::EvalNoise, 0))
}

pub fn evaluate_with<D, G>(model: &MtlModel, data: &D, noise_source: &mut G) -> Result<Vec<f64>, ModelError>
where
    D: MultiTaskData + ?Sized,
    G: GaussianSource + ?Sized,
{
    let tasks = model.num_tasks();
    let labels = data.task_labels();
    let mut correct = vec![0usize; tasks];
    let n = data.len();
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let x = data
            .images()
            .slice(ndarray::s![start..end, ..])
            .mapv(f64::from);
        let noise = if model.noise_enabled {
            draw_noise(noise_source, tasks, end - start, model.latent_dim())
        } else {
            Vec::new()
        };
        let preds = predict(model, x.view(), &noise)?;
        for (j, p) in preds.iter().enumerate() {
            correct[j] += p
                .iter()
                .zip(&labels[j][start..end])
                .filter(|(a, b)| a == b)
                .count();
        }
    }
    Ok(correct.iter().map(|&c| c as f64 / n.max(1) as f64).collect())
}
