//! Hierarchical information-bottleneck multi-task learning.
//!
//! A deterministic encoder produces a task-agnostic representation `z`. Every task
//! sees its own noisy copy `w_j = z + N_j` whose per-dimension noise variances are
//! trained under a variational information-bottleneck penalty. Dimensions a task does
//! not need end up drowned in noise, which makes the learned log-variances a
//! fingerprint of what each task uses.
//!
//! - [`gaussian_ib`]: closed-form solution for jointly Gaussian tasks.
//! - [`model`]: encoder, information filters, heads, loss, gradients, Adam.
//! - [`data`]: MNIST ingestion plus Grouped-MNIST and MultiMNIST tasks.
//! - [`train`]: seeded training loop and evaluation.
//! - [`similarity`]: task distances from log-variances and the clustering protocol.
//! - [`experiment`]: configuration and the commands behind the CLI.

pub mod data;
pub mod experiment;
pub mod gaussian_ib;
pub mod model;
pub mod rng;
pub mod similarity;
pub mod train;
pub(crate) mod variance_serde;
