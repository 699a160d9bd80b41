//! Fixtures and independent reference computations shared by the integration tests
//! and the acceptance runner.
#![allow(dead_code)]

use std::path::PathBuf;

use hib_mtl::data::{load_mnist, Split};
use hib_mtl::gaussian_ib::GaussianTaskSpec;
use hib_mtl::model::{
    backward, kl_term, total_loss, Batch, ClassifierHead, DenseLayer, EncoderParams, MtlModel, ParamGroup,
    TaskNoiseFilter,
};
use hib_mtl::similarity::MnistSplits;
use nalgebra::{DMatrix, DVector};
use ndarray::{array, Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Loss of [`pinned_model`] on [`pinned_batch`], from a straight-line Python evaluation.
pub const PINNED_TOTAL: f64 = 3.266775758154692;
pub const PINNED_CE: [f64; 2] = [1.0425482619718391, 1.91965697309312];
pub const PINNED_KL: [f64; 2] = [0.49140747895701153, 0.5238275980087632];
pub const PINNED_BETA: f64 = 0.3;

/// Encoder 3 -> 4 (ReLU) -> 2, two heads with 3 and 2 classes.
pub fn pinned_model() -> MtlModel {
    let encoder = EncoderParams::new(vec![
        DenseLayer {
            weight: array![[0.5, -0.3, 0.8], [-0.6, 0.9, 0.2], [0.3, 0.4, -0.7], [0.1, -0.2, 0.5]],
            bias: array![0.1, -0.05, 0.2, 0.0],
        },
        DenseLayer {
            weight: array![[0.7, -0.4, 0.3, 0.9], [-0.2, 0.6, 0.8, -0.5]],
            bias: array![0.05, -0.1],
        },
    ])
    .unwrap();
    let heads = vec![
        ClassifierHead {
            weight: array![[1.2, -0.7], [-0.4, 0.9], [0.3, 0.5]],
            bias: array![0.1, 0.0, -0.2],
        },
        ClassifierHead {
            weight: array![[-0.8, 1.1], [0.6, -0.3]],
            bias: array![0.0, 0.15],
        },
    ];
    let filters = vec![
        TaskNoiseFilter::new(array![0.2, -0.5], array![0.1, 0.3]).unwrap(),
        TaskNoiseFilter::new(array![-0.3, 0.4], array![-0.2, 0.05]).unwrap(),
    ];
    MtlModel::new(encoder, filters, heads, PINNED_BETA, true, 0).unwrap()
}

pub fn pinned_batch() -> (Batch, Vec<Array2<f64>>) {
    let batch = Batch {
        inputs: array![[0.2, 0.7, 0.1], [0.9, 0.4, 0.3], [0.5, 0.0, 0.8]],
        labels: vec![vec![2, 0, 1], vec![1, 1, 0]],
    };
    let noise = vec![
        array![[0.5, -1.2], [1.5, 0.3], [-0.7, 0.8]],
        array![[-0.4, 0.9], [0.2, -1.1], [1.3, 0.6]],
    ];
    (batch, noise)
}

/// Largest relative error between analytic and central-difference gradients, per group.
pub fn gradient_check(model: &MtlModel, batch: &Batch, noise: &[Array2<f64>], h: f64) -> Vec<(ParamGroup, f64, usize)> {
    let grads = backward(model, batch, noise).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let groups: Vec<ParamGroup> = model.tensors().iter().map(|(g, _)| *g).collect();
    let mut worst: Vec<(ParamGroup, f64, usize)> = Vec::new();
    for (t, group) in groups.iter().enumerate() {
        for i in 0..analytic[t].len() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.tensors_mut()[t].1[i] += delta;
                total_loss(&m, batch, noise).unwrap().total
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic[t][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            match worst.iter_mut().find(|(g, ..)| g == group) {
                Some(entry) => {
                    entry.1 = entry.1.max(rel);
                    entry.2 += 1;
                }
                None => worst.push((*group, rel, 1)),
            }
        }
    }
    worst
}

/// One KL case: `(log sigma^2, log xi^2, z)`.
pub type KlCase = (Vec<f64>, Vec<f64>, Vec<f64>);

pub fn kl_cases() -> Vec<KlCase> {
    vec![
        (vec![0.0], vec![0.0], vec![2.0]),
        (vec![0.5, -1.0], vec![0.0, 0.7], vec![0.3, -1.1]),
        (vec![-2.0, 0.0, 1.0], vec![-1.0, 0.5, 0.0], vec![0.5, 0.0, 2.0]),
        (vec![-3.0], vec![0.0], vec![0.0]),
        (vec![1.5, 0.2], vec![0.3, -0.4], vec![-1.5, 0.8]),
    ]
}

pub fn closed_form_kl(case: &KlCase) -> f64 {
    let (lv, mlv, z) = case;
    let filter = TaskNoiseFilter::new(Array1::from(lv.clone()), Array1::from(mlv.clone())).unwrap();
    let z = Array2::from_shape_vec((1, z.len()), z.clone()).unwrap();
    kl_term(&filter, z.view())
}

/// Monte-Carlo estimate of `E_q[log q(w) - log p(w)]` with `q = N(z, sigma^2)`, `p = N(0, xi^2)`.
pub fn monte_carlo_kl(case: &KlCase, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let (lv, mlv, z) = case;
    let log_density = |w: f64, mean: f64, var: f64| -0.5 * ((w - mean).powi(2) / var + var.ln() + (2.0 * std::f64::consts::PI).ln());
    let mut sum = 0.0;
    for _ in 0..samples {
        for i in 0..z.len() {
            let var_q = lv[i].exp();
            let var_p = mlv[i].exp();
            let e: f64 = rng.sample(StandardNormal);
            let w = z[i] + var_q.sqrt() * e;
            sum += log_density(w, z[i], var_q) - log_density(w, 0.0, var_p);
        }
    }
    sum / samples as f64
}

/// Random spec with known structure: `C_X = L L^T` and
/// `C_X|Y = L (I - U S^2 U^T) L^T`, so the eigenvalues are `1 - s_k^2` and ones.
pub fn random_spec(rng: &mut ChaCha8Rng, n: usize) -> GaussianTaskSpec {
    let b = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let c_x = &b * b.transpose() + DMatrix::identity(n, n) * 0.2;
    let l = c_x.clone().cholesky().unwrap().l();
    let k = rng.random_range(1..=n);
    let q = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q();
    let mut inner = DMatrix::identity(n, n);
    for col in 0..k {
        let s2 = rng.random_range(0.02..0.97);
        let u = q.column(col);
        inner -= u * u.transpose() * s2;
    }
    let c_x_given_y = &l * inner * l.transpose();
    GaussianTaskSpec::new(c_x, c_x_given_y).unwrap()
}

/// Two tasks reading disjoint latent coordinates of `X = Q S`, each through `rank`
/// coordinates. Returns the specs and the largest informative lambda of each task.
pub fn orthogonal_tasks(rng: &mut ChaCha8Rng, rank: usize, extra: usize) -> (GaussianTaskSpec, GaussianTaskSpec, [f64; 2]) {
    let n = 2 * rank + extra;
    let q = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q();
    let scales: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
    let c_x = &q * DMatrix::from_diagonal(&DVector::from_vec(scales.clone())) * q.transpose();
    let mut lambda_max = [0.0f64; 2];
    let mut task = |t: usize| {
        let diag: Vec<f64> = (0..n)
            .map(|i| {
                if i / rank == t && i < 2 * rank {
                    let l = rng.random_range(0.05..0.9);
                    lambda_max[t] = lambda_max[t].max(l);
                    scales[i] * l
                } else {
                    scales[i]
                }
            })
            .collect();
        let c = &q * DMatrix::from_diagonal(&DVector::from_vec(diag)) * q.transpose();
        GaussianTaskSpec::new(c_x.clone(), c).unwrap()
    };
    let a = task(0);
    let b = task(1);
    (a, b, lambda_max)
}

/// MNIST location: `$MNIST_DIR`, else `data/mnist` at the workspace root.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

pub fn mnist_splits() -> Option<MnistSplits> {
    let dir = mnist_dir();
    let train = load_mnist(&dir, Split::Train).ok()?;
    let test = load_mnist(&dir, Split::Test).ok()?;
    Some(MnistSplits { train, test })
}
