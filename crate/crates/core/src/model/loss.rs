//! Forward pass, variational IB loss and its analytic gradients.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::{shape_err, ClassifierHead, DenseLayer, MtlModel, ModelError, TaskNoiseFilter, Trainable};

/// Inputs plus one label vector per task (`labels[j][b]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub labels: Vec<Vec<usize>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy: Vec<f64>,
    pub kl: Vec<f64>,
}

/// Gradients mirroring every trainable tensor of [`MtlModel`].
///
/// There is no entry for the marginal mean, which is frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: Vec<DenseLayer>,
    pub heads: Vec<ClassifierHead>,
    pub log_var: Vec<Array1<f64>>,
    pub marginal_log_var: Vec<Array1<f64>>,
}

impl ModelGrads {
    pub fn zeros_like(model: &MtlModel) -> Self {
        ModelGrads {
            encoder: model
                .encoder
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.input_dim(), l.output_dim()))
                .collect(),
            heads: model
                .heads
                .iter()
                .map(|h| ClassifierHead {
                    weight: Array2::zeros(h.weight.dim()),
                    bias: Array1::zeros(h.bias.len()),
                })
                .collect(),
            log_var: model.filters.iter().map(|f| Array1::zeros(f.dim())).collect(),
            marginal_log_var: model.filters.iter().map(|f| Array1::zeros(f.dim())).collect(),
        }
    }

    /// Same order as [`MtlModel::tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.encoder {
            out.push(super::std_slice(&layer.weight));
            out.push(layer.bias.as_slice().expect("contiguous"));
        }
        for head in &self.heads {
            out.push(super::std_slice(&head.weight));
            out.push(head.bias.as_slice().expect("contiguous"));
        }
        out.extend(self.log_var.iter().map(|g| g.as_slice().expect("contiguous")));
        out.extend(
            self.marginal_log_var
                .iter()
                .map(|g| g.as_slice().expect("contiguous")),
        );
        out
    }
}

fn dense(layer: &DenseLayer, x: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.dot(&layer.weight.t());
    out += &layer.bias;
    out
}

fn dense_head(head: &ClassifierHead, w: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = w.dot(&head.weight.t());
    out += &head.bias;
    out
}

/// Post-activation outputs of every encoder layer; the last entry is `z`.
fn encoder_activations(model: &MtlModel, x: &ArrayView2<f64>) -> Result<Vec<Array2<f64>>, ModelError> {
    if x.ncols() != model.encoder.input_dim() {
        return Err(shape_err("encoder input width", model.encoder.input_dim(), x.ncols()));
    }
    let last = model.encoder.layers.len() - 1;
    let mut acts: Vec<Array2<f64>> = Vec::with_capacity(last + 1);
    for (i, layer) in model.encoder.layers.iter().enumerate() {
        let input = if i == 0 { x.view() } else { acts[i - 1].view() };
        let mut out = dense(layer, &input);
        if i < last {
            out.mapv_inplace(|v| v.max(0.0));
        }
        acts.push(out);
    }
    Ok(acts)
}

/// `z = f_theta(x)` for a batch of inputs (rows).
pub fn encode(model: &MtlModel, x: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
    Ok(encoder_activations(model, &x)?.pop().expect("at least one layer"))
}

/// `w = z + exp(log_var / 2) * noise_draw`.
pub fn sample_task_rep(
    z: ArrayView1<f64>,
    filter: &TaskNoiseFilter,
    noise_draw: ArrayView1<f64>,
) -> Array1<f64> {
    let std = filter.log_var.mapv(|s| (0.5 * s).exp());
    &z + &(&std * &noise_draw)
}

fn task_reps(z: &Array2<f64>, filter: &TaskNoiseFilter, noise: &Array2<f64>) -> Array2<f64> {
    let std = filter.log_var.mapv(|s| (0.5 * s).exp());
    let mut w = noise * &std;
    w += z;
    w
}

/// Row-wise log-softmax.
fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn check_labels(task: usize, labels: &[usize], classes: usize, batch: usize) -> Result<(), ModelError> {
    if labels.len() != batch {
        return Err(shape_err(format!("task {task} labels"), batch, labels.len()));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(ModelError::LabelOutOfRange {
            task,
            label,
            classes,
        });
    }
    Ok(())
}

/// Mean negative log-likelihood of `labels` under `softmax(head(w))`.
pub fn cross_entropy_term(
    head: &ClassifierHead,
    w: ArrayView2<f64>,
    labels: &[usize],
) -> Result<f64, ModelError> {
    if w.ncols() != head.input_dim() {
        return Err(shape_err("head input width", head.input_dim(), w.ncols()));
    }
    check_labels(0, labels, head.num_classes(), w.nrows())?;
    let logp = log_softmax(&dense_head(head, &w));
    Ok(mean_nll(&logp, labels))
}

fn mean_nll(logp: &Array2<f64>, labels: &[usize]) -> f64 {
    let sum: f64 = labels.iter().enumerate().map(|(b, &y)| -logp[[b, y]]).sum();
    sum / labels.len() as f64
}

/// Batch mean of `KL(N(z, diag(sigma^2)) || N(0, diag(xi^2)))`.
pub fn kl_term(filter: &TaskNoiseFilter, z: ArrayView2<f64>) -> f64 {
    let batch = z.nrows() as f64;
    let mut mean_sq = Array1::<f64>::zeros(z.ncols());
    for row in z.rows() {
        Zip::from(&mut mean_sq).and(&row).for_each(|m, &v| *m += v * v);
    }
    mean_sq /= batch;
    kl_from_moments(filter, &mean_sq)
}

/// KL averaged over the batch only depends on the per-dimension mean of `z^2`.
fn kl_from_moments(filter: &TaskNoiseFilter, mean_sq: &Array1<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..filter.dim() {
        let s = filter.log_var[i];
        let m = filter.marginal_log_var[i];
        total += 0.5 * (m - s) + (s.exp() + mean_sq[i]) / (2.0 * m.exp()) - 0.5;
    }
    total
}

fn check_batch(model: &MtlModel, batch: &Batch, noise: &[Array2<f64>]) -> Result<(), ModelError> {
    let n = batch.len();
    if batch.labels.len() != model.num_tasks() {
        return Err(shape_err("label sets", model.num_tasks(), batch.labels.len()));
    }
    for (j, (labels, head)) in batch.labels.iter().zip(&model.heads).enumerate() {
        check_labels(j, labels, head.num_classes(), n)?;
    }
    if model.noise_enabled {
        if noise.len() != model.num_tasks() {
            return Err(shape_err("noise draws", model.num_tasks(), noise.len()));
        }
        let want = (n, model.latent_dim());
        if let Some(bad) = noise.iter().find(|e| e.dim() != want) {
            return Err(shape_err("noise draw", format!("{want:?}"), format!("{:?}", bad.dim())));
        }
    }
    Ok(())
}

/// Loss and (when `trainable` is given) gradients from one shared forward pass.
///
/// Gradients of frozen groups are left at zero; a frozen encoder also skips the
/// backward pass through `f_theta`.
pub fn forward_backward(
    model: &MtlModel,
    batch: &Batch,
    noise: &[Array2<f64>],
    trainable: Option<Trainable>,
) -> Result<(LossBreakdown, Option<ModelGrads>), ModelError> {
    check_batch(model, batch, noise)?;
    let acts = encoder_activations(model, &batch.inputs.view())?;
    let z = acts.last().expect("at least one layer");
    let n = batch.len() as f64;
    let beta = model.beta;

    let mut grads = trainable.map(|_| ModelGrads::zeros_like(model));
    let mut grad_z = Array2::<f64>::zeros(z.dim());
    let mut cross_entropy = Vec::with_capacity(model.num_tasks());
    let mut kl = Vec::with_capacity(model.num_tasks());

    let mut mean_sq = Array1::<f64>::zeros(z.ncols());
    if model.noise_enabled {
        for row in z.rows() {
            Zip::from(&mut mean_sq).and(&row).for_each(|m, &v| *m += v * v);
        }
        mean_sq /= n;
    }

    for (j, (head, filter)) in model.heads.iter().zip(&model.filters).enumerate() {
        let labels = &batch.labels[j];
        let w = if model.noise_enabled {
            task_reps(z, filter, &noise[j])
        } else {
            z.clone()
        };
        let logp = log_softmax(&dense_head(head, &w.view()));
        cross_entropy.push(mean_nll(&logp, labels));
        kl.push(if model.noise_enabled {
            kl_from_moments(filter, &mean_sq)
        } else {
            0.0
        });

        let Some(g) = grads.as_mut() else { continue };
        // d CE / d logits = (softmax - onehot) / n
        let mut g_logits = logp.mapv(f64::exp);
        for (b, &y) in labels.iter().enumerate() {
            g_logits[[b, y]] -= 1.0;
        }
        g_logits /= n;
        g.heads[j].weight = g_logits.t().dot(&w);
        g.heads[j].bias = g_logits.sum_axis(Axis(0));
        let g_w = g_logits.dot(&head.weight);
        grad_z += &g_w;

        if model.noise_enabled {
            let eps = &noise[j];
            for i in 0..filter.dim() {
                let s = filter.log_var[i];
                let m = filter.marginal_log_var[i];
                let half_std = 0.5 * (0.5 * s).exp();
                let pathwise: f64 = g_w.column(i).dot(&eps.column(i)) * half_std;
                let ratio = (s - m).exp();
                g.log_var[j][i] = pathwise + beta * (0.5 * ratio - 0.5);
                g.marginal_log_var[j][i] = beta * (0.5 - 0.5 * ratio - 0.5 * mean_sq[i] * (-m).exp());
            }
            if beta != 0.0 {
                let scale = filter.marginal_log_var.mapv(|m| beta * (-m).exp() / n);
                Zip::from(grad_z.rows_mut()).and(z.rows()).for_each(|mut gz, zr| {
                    Zip::from(&mut gz).and(&zr).and(&scale).for_each(|g, &zv, &c| *g += c * zv);
                });
            }
        }
    }

    let total = cross_entropy
        .iter()
        .zip(&kl)
        .map(|(ce, k)| ce + beta * k)
        .sum();
    let loss = LossBreakdown {
        total,
        cross_entropy,
        kl,
    };

    if let (Some(g), Some(t)) = (grads.as_mut(), trainable) {
        if t.encoder {
            backprop_encoder(model, &batch.inputs, &acts, grad_z, &mut g.encoder);
        }
    }
    Ok((loss, grads))
}

fn backprop_encoder(
    model: &MtlModel,
    x: &Array2<f64>,
    acts: &[Array2<f64>],
    mut upstream: Array2<f64>,
    out: &mut [DenseLayer],
) {
    for i in (0..model.encoder.layers.len()).rev() {
        let input = if i == 0 { x } else { &acts[i - 1] };
        out[i].weight = upstream.t().dot(input);
        out[i].bias = upstream.sum_axis(Axis(0));
        if i > 0 {
            let mut down = upstream.dot(&model.encoder.layers[i].weight);
            Zip::from(&mut down)
                .and(input)
                .for_each(|g, &a| if a <= 0.0 { *g = 0.0 });
            upstream = down;
        }
    }
}

/// `sum_j [CE_j + beta * KL_j]` with its per-task parts.
pub fn total_loss(model: &MtlModel, batch: &Batch, noise: &[Array2<f64>]) -> Result<LossBreakdown, ModelError> {
    Ok(forward_backward(model, batch, noise, None)?.0)
}

/// Analytic gradients of [`total_loss`] for every trainable parameter.
pub fn backward(model: &MtlModel, batch: &Batch, noise: &[Array2<f64>]) -> Result<ModelGrads, ModelError> {
    let (_, grads) = forward_backward(model, batch, noise, Some(Trainable::ALL))?;
    Ok(grads.expect("gradients requested"))
}

/// Arg-max class per task from a single noisy sample (`preds[j][b]`).
pub fn predict(model: &MtlModel, x: ArrayView2<f64>, noise: &[Array2<f64>]) -> Result<Vec<Vec<usize>>, ModelError> {
    let z = encode(model, x)?;
    if model.noise_enabled && noise.len() != model.num_tasks() {
        return Err(shape_err("noise draws", model.num_tasks(), noise.len()));
    }
    Ok(model
        .heads
        .iter()
        .zip(&model.filters)
        .enumerate()
        .map(|(j, (head, filter))| {
            let w = if model.noise_enabled {
                task_reps(&z, filter, &noise[j])
            } else {
                z.clone()
            };
            dense_head(head, &w.view())
                .rows()
                .into_iter()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                        .0
                })
                .collect()
        })
        .collect())
}
