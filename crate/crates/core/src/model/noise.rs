//! Standard-normal draws for the reparameterized task representations.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::rng::{stream, Purpose};

/// Source of standard-normal vectors. One call is one draw of a `D`-vector.
pub trait GaussianSource {
    fn sample_vector(&mut self, out: &mut [f64]);
}

/// ChaCha-backed source.
#[derive(Debug, Clone)]
pub struct SeededGaussian {
    rng: ChaCha8Rng,
}

impl SeededGaussian {
    pub fn new(seed: u64, purpose: Purpose, index: u64) -> Self {
        SeededGaussian {
            rng: stream(seed, purpose, index),
        }
    }
}

impl GaussianSource for SeededGaussian {
    fn sample_vector(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.rng.sample(StandardNormal);
        }
    }
}

/// One `batch x D` matrix per task: a single posterior sample per (example, task).
pub fn draw_noise<G: GaussianSource + ?Sized>(
    source: &mut G,
    num_tasks: usize,
    batch: usize,
    dim: usize,
) -> Vec<Array2<f64>> {
    (0..num_tasks)
        .map(|_| {
            let mut m = Array2::zeros((batch, dim));
            for mut row in m.rows_mut() {
                source.sample_vector(row.as_slice_mut().expect("row-major"));
            }
            m
        })
        .collect()
}
