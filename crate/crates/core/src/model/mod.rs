//! Shared encoder, per-task Gaussian information filters and softmax heads.
//!
//! ```text
//! x --f_theta--> z --(+ N_j, N_j ~ N(0, diag(exp(log_var_j))))--> w_j --head_j--> p(y_j | w_j)
//! ```
//!
//! The training objective per task is `CE_j + beta * KL(N(z, Sigma_j) || N(0, Xi_j))`
//! averaged over the batch. See [`loss`] for the forward/backward pass and [`adam`]
//! for the optimizer.

pub mod adam;
pub mod loss;
pub mod noise;

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, Purpose};

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, DEFAULT_LEARNING_RATE};
pub use loss::{
    backward, cross_entropy_term, encode, forward_backward, kl_term, predict, sample_task_rep,
    total_loss, Batch, LossBreakdown,
};
pub use noise::{draw_noise, GaussianSource, SeededGaussian};

/// Standard deviation of the initial log-variance parameters.
pub const FILTER_INIT_STD: f64 = 0.01;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: String,
        expected: String,
        got: String,
    },
    #[error("task {task}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        task: usize,
        label: usize,
        classes: usize,
    },
    #[error("invalid model dimensions: {0}")]
    InvalidDims(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

pub(crate) fn shape_err(what: impl Into<String>, expected: impl ToString, got: impl ToString) -> ModelError {
    ModelError::ShapeMismatch {
        what: what.into(),
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

/// Fully connected layer; `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize) -> Self {
        DenseLayer {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Uniform `+-1/sqrt(fan_in)` initialization of weights and biases.
    pub fn fan_in_uniform<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        DenseLayer {
            weight: Array2::from_shape_simple_fn((output, input), || dist.sample(rng)),
            bias: Array1::from_shape_simple_fn(output, || dist.sample(rng)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Deterministic encoder `f_theta`: rectifier after every layer but the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub layers: Vec<DenseLayer>,
}

impl EncoderParams {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self, ModelError> {
        let enc = EncoderParams { layers };
        enc.validate()?;
        Ok(enc)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers.is_empty() {
            return Err(ModelError::InvalidDims("encoder has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(shape_err(
                    format!("encoder layer {i} bias"),
                    layer.output_dim(),
                    layer.bias.len(),
                ));
            }
            if i > 0 && self.layers[i - 1].output_dim() != layer.input_dim() {
                return Err(shape_err(
                    format!("encoder layer {i} input"),
                    self.layers[i - 1].output_dim(),
                    layer.input_dim(),
                ));
            }
            if layer.weight.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(format!("encoder layer {i}")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }
}

/// Per-task additive Gaussian noise plus the variational marginal `N(0, Xi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskNoiseFilter {
    /// `log sigma^2`, one per latent dimension.
    pub log_var: Array1<f64>,
    /// `log xi^2` of the variational marginal.
    pub marginal_log_var: Array1<f64>,
    /// Mean of the variational marginal, frozen at zero.
    pub marginal_mean: Array1<f64>,
}

impl TaskNoiseFilter {
    pub fn new(log_var: Array1<f64>, marginal_log_var: Array1<f64>) -> Result<Self, ModelError> {
        if log_var.len() != marginal_log_var.len() {
            return Err(shape_err(
                "marginal_log_var",
                log_var.len(),
                marginal_log_var.len(),
            ));
        }
        let d = log_var.len();
        Ok(TaskNoiseFilter {
            log_var,
            marginal_log_var,
            marginal_mean: Array1::zeros(d),
        })
    }

    pub fn dim(&self) -> usize {
        self.log_var.len()
    }

    pub fn variances(&self) -> Array1<f64> {
        self.log_var.mapv(f64::exp)
    }
}

/// Linear softmax classifier `c_psi,j`; `weight` is `classes x D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ClassifierHead {
    pub fn num_classes(&self) -> usize {
        self.weight.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Layer widths of a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Number of classes per task; its length is the number of tasks.
    pub classes: Vec<usize>,
}

impl ModelDims {
    /// Encoder `784 -> 32 -> 32 -> D` with one linear head per task.
    pub fn mnist_mlp(latent_dim: usize, classes: Vec<usize>) -> Self {
        ModelDims {
            input_dim: 784,
            hidden: vec![32, 32],
            latent_dim,
            classes,
        }
    }
}

/// Which parameter groups receive optimizer updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trainable {
    pub encoder: bool,
    pub heads: bool,
    pub log_var: bool,
    pub marginal_log_var: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        encoder: true,
        heads: true,
        log_var: true,
        marginal_log_var: true,
    };

    pub fn includes(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Encoder => self.encoder,
            ParamGroup::Head => self.heads,
            ParamGroup::LogVar => self.log_var,
            ParamGroup::MarginalLogVar => self.marginal_log_var,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    Head,
    LogVar,
    MarginalLogVar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtlModel {
    pub encoder: EncoderParams,
    pub filters: Vec<TaskNoiseFilter>,
    pub heads: Vec<ClassifierHead>,
    pub beta: f64,
    /// `false` is the "no noise" ablation where `w_j = z`.
    pub noise_enabled: bool,
    pub seed: u64,
}

impl MtlModel {
    pub fn new(
        encoder: EncoderParams,
        filters: Vec<TaskNoiseFilter>,
        heads: Vec<ClassifierHead>,
        beta: f64,
        noise_enabled: bool,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let model = MtlModel {
            encoder,
            filters,
            heads,
            beta,
            noise_enabled,
            seed,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn num_tasks(&self) -> usize {
        self.heads.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.encoder.validate()?;
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(ModelError::InvalidDims(format!("beta = {}", self.beta)));
        }
        if self.heads.is_empty() || self.filters.len() != self.heads.len() {
            return Err(shape_err("filters per head", self.heads.len(), self.filters.len()));
        }
        let d = self.latent_dim();
        for (j, f) in self.filters.iter().enumerate() {
            if f.log_var.len() != d || f.marginal_log_var.len() != d || f.marginal_mean.len() != d {
                return Err(shape_err(format!("filter {j}"), d, f.log_var.len()));
            }
            if f.marginal_mean.iter().any(|&m| m != 0.0) {
                return Err(ModelError::InvalidDims(format!(
                    "filter {j}: marginal mean must be zero"
                )));
            }
            if f.log_var.iter().chain(f.marginal_log_var.iter()).any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(format!("filter {j}")));
            }
        }
        for (j, h) in self.heads.iter().enumerate() {
            if h.input_dim() != d || h.bias.len() != h.num_classes() {
                return Err(shape_err(format!("head {j}"), d, h.input_dim()));
            }
            if h.num_classes() < 2 {
                return Err(ModelError::InvalidDims(format!("head {j} has < 2 classes")));
            }
            if h.weight.iter().chain(h.bias.iter()).any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(format!("head {j}")));
            }
        }
        Ok(())
    }

    /// Every tensor in a fixed order, tagged with its group.
    pub fn tensors(&self) -> Vec<(ParamGroup, &[f64])> {
        let mut out = Vec::new();
        for layer in &self.encoder.layers {
            out.push((ParamGroup::Encoder, std_slice(&layer.weight)));
            out.push((ParamGroup::Encoder, layer.bias.as_slice().expect("contiguous")));
        }
        for head in &self.heads {
            out.push((ParamGroup::Head, std_slice(&head.weight)));
            out.push((ParamGroup::Head, head.bias.as_slice().expect("contiguous")));
        }
        for f in &self.filters {
            out.push((ParamGroup::LogVar, f.log_var.as_slice().expect("contiguous")));
        }
        for f in &self.filters {
            out.push((
                ParamGroup::MarginalLogVar,
                f.marginal_log_var.as_slice().expect("contiguous"),
            ));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out = Vec::new();
        for layer in &mut self.encoder.layers {
            out.push((ParamGroup::Encoder, std_slice_mut(&mut layer.weight)));
            out.push((ParamGroup::Encoder, layer.bias.as_slice_mut().expect("contiguous")));
        }
        for head in &mut self.heads {
            out.push((ParamGroup::Head, std_slice_mut(&mut head.weight)));
            out.push((ParamGroup::Head, head.bias.as_slice_mut().expect("contiguous")));
        }
        let (log_vars, marginals): (Vec<_>, Vec<_>) = self
            .filters
            .iter_mut()
            .map(|f| (&mut f.log_var, &mut f.marginal_log_var))
            .unzip();
        for lv in log_vars {
            out.push((ParamGroup::LogVar, lv.as_slice_mut().expect("contiguous")));
        }
        for mv in marginals {
            out.push((ParamGroup::MarginalLogVar, mv.as_slice_mut().expect("contiguous")));
        }
        out
    }

    /// Writes the model as JSON; f64 values round-trip exactly.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_checkpoint_json()?)?;
        Ok(())
    }

    pub fn to_checkpoint_json(&self) -> Result<String, ModelError> {
        let doc = Checkpoint {
            format: CHECKPOINT_FORMAT.to_owned(),
            latent_dim: self.latent_dim(),
            num_tasks: self.num_tasks(),
            model: self.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, ModelError> {
        Self::from_checkpoint_json(&fs::read_to_string(path)?)
    }

    pub fn from_checkpoint_json(json: &str) -> Result<Self, ModelError> {
        let doc: Checkpoint = serde_json::from_str(json)?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(ModelError::InvalidDims(format!(
                "unknown checkpoint format `{}`",
                doc.format
            )));
        }
        doc.model.validate()?;
        if doc.model.latent_dim() != doc.latent_dim || doc.model.num_tasks() != doc.num_tasks {
            return Err(shape_err(
                "checkpoint header",
                format!("D={} L={}", doc.latent_dim, doc.num_tasks),
                format!("D={} L={}", doc.model.latent_dim(), doc.model.num_tasks()),
            ));
        }
        Ok(doc.model)
    }
}

const CHECKPOINT_FORMAT: &str = "hib-mtl-checkpoint/1";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    latent_dim: usize,
    num_tasks: usize,
    model: MtlModel,
}

pub(crate) fn std_slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameters are stored in standard layout")
}

pub(crate) fn std_slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are stored in standard layout")
}

/// Builds a fresh model; every parameter is a function of `seed`.
///
/// Encoder and head weights use uniform fan-in scaling; both log-variance vectors of
/// every filter are drawn from `N(0, 0.01^2)`.
pub fn init_model(dims: &ModelDims, beta: f64, noise_enabled: bool, seed: u64) -> Result<MtlModel, ModelError> {
    if dims.input_dim == 0 || dims.latent_dim == 0 || dims.hidden.contains(&0) {
        return Err(ModelError::InvalidDims(format!("{dims:?}")));
    }
    if dims.classes.is_empty() {
        return Err(ModelError::InvalidDims("at least one task is required".into()));
    }
    let mut rng = stream(seed, Purpose::Init, 0);
    let widths: Vec<usize> = std::iter::once(dims.input_dim)
        .chain(dims.hidden.iter().copied())
        .chain(std::iter::once(dims.latent_dim))
        .collect();
    let layers = widths
        .windows(2)
        .map(|w| DenseLayer::fan_in_uniform(w[0], w[1], &mut rng))
        .collect();
    let encoder = EncoderParams::new(layers)?;

    let heads = dims
        .classes
        .iter()
        .map(|&k| {
            let layer = DenseLayer::fan_in_uniform(dims.latent_dim, k, &mut rng);
            ClassifierHead {
                weight: layer.weight,
                bias: layer.bias,
            }
        })
        .collect();

    let normal = Normal::new(0.0, FILTER_INIT_STD).expect("valid std");
    let d = dims.latent_dim;
    let filters = dims
        .classes
        .iter()
        .map(|_| {
            let log_var = Array1::from_shape_simple_fn(d, || normal.sample(&mut rng));
            let marginal = Array1::from_shape_simple_fn(d, || normal.sample(&mut rng));
            TaskNoiseFilter::new(log_var, marginal)
        })
        .collect::<Result<Vec<_>, _>>()?;

    MtlModel::new(encoder, filters, heads, beta, noise_enabled, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims::mnist_mlp(4, vec![4, 4, 10])
    }

    #[test]
    fn same_seed_same_model() {
        let a = init_model(&dims(), 0.1, true, 7).unwrap();
        let b = init_model(&dims(), 0.1, true, 7).unwrap();
        assert_eq!(a, b);
        let c = init_model(&dims(), 0.1, true, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_follow_mnist_architecture() {
        let m = init_model(&dims(), 0.1, true, 1).unwrap();
        let shapes: Vec<_> = m.encoder.layers.iter().map(|l| l.weight.dim()).collect();
        assert_eq!(shapes, vec![(32, 784), (32, 32), (4, 32)]);
        assert_eq!(m.heads[2].weight.dim(), (10, 4));
        assert_eq!(m.num_tasks(), 3);
        assert!(m.filters.iter().all(|f| f.marginal_mean.iter().all(|&x| x == 0.0)));
        let bound = 1.0 / 784f64.sqrt();
        assert!(m.encoder.layers[0].weight.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn filter_init_spread() {
        // 2500 tasks x D=4 gives 10^4 log-variance draws.
        let dims = ModelDims {
            input_dim: 1,
            hidden: vec![],
            latent_dim: 4,
            classes: vec![2; 2500],
        };
        let m = init_model(&dims, 0.0, true, 3).unwrap();
        let draws: Vec<f64> = m.filters.iter().flat_map(|f| f.log_var.to_vec()).collect();
        assert_eq!(draws.len(), 10_000);
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let std = (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 5e-4, "mean {mean}");
        assert!((std - 0.01).abs() < 5e-4, "std {std}");
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = init_model(&dims(), 0.1, false, 11).unwrap();
        let json = m.to_checkpoint_json().unwrap();
        let back = MtlModel::from_checkpoint_json(&json).unwrap();
        assert_eq!(back, m);
        for ((_, a), (_, b)) in m.tensors().iter().zip(back.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save_checkpoint(&path).unwrap();
        assert_eq!(MtlModel::load_checkpoint(&path).unwrap(), m);
    }

    #[test]
    fn invalid_models_rejected() {
        let mut m = init_model(&dims(), 0.1, true, 1).unwrap();
        m.filters[0].marginal_mean[1] = 0.5;
        assert!(m.validate().is_err());
        let mut m = init_model(&dims(), 0.1, true, 1).unwrap();
        m.filters.pop();
        assert!(matches!(m.validate(), Err(ModelError::ShapeMismatch { .. })));
        let mut m = init_model(&dims(), 0.1, true, 1).unwrap();
        m.heads[0].weight[[0, 0]] = f64::NAN;
        assert!(matches!(m.validate(), Err(ModelError::NonFinite(_))));
        assert!(init_model(&ModelDims::mnist_mlp(0, vec![3]), 0.1, true, 1).is_err());
    }

    #[test]
    fn tensor_order_is_stable() {
        let mut m = init_model(&dims(), 0.1, true, 1).unwrap();
        let groups: Vec<_> = m.tensors().iter().map(|(g, t)| (*g, t.len())).collect();
        let groups_mut: Vec<_> = m.tensors_mut().iter().map(|(g, t)| (*g, t.len())).collect();
        assert_eq!(groups, groups_mut);
        assert_eq!(groups.len(), 6 + 6 + 3 + 3);
    }
}
