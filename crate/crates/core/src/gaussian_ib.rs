//! Analytic information bottleneck for jointly Gaussian features and targets.
//!
//! For a single task the optimal representation is `Z = A X + N` where the rows of
//! `A` are left eigenvectors `v_i` of `C_{X|Y} C_X^{-1}` and `N` is independent
//! Gaussian noise with per-dimension inverse variance
//!
//! ```text
//! alpha_i = max{0, (1 - lambda_i) / beta - 1} / (lambda_i * v_i^T C_X v_i)
//! ```
//!
//! Dimensions with `alpha_i = 0` carry infinite noise and are discarded. Two tasks
//! can share one representation by stacking their retained directions; each task
//! then sees infinite noise on the other task's block.
//!
//! Eigenvalues are sorted ascending, so retained (most informative) directions come
//! first.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Eigenvalue tolerance for the PSD/PD checks and the `[0, 1]` range of `lambda`.
pub const PSD_TOLERANCE: f64 = 1e-9;
/// Relative tolerance below which the target covariance counts as singular.
pub const SINGULAR_TOLERANCE: f64 = 1e-10;
/// Symmetry tolerance, relative to the largest absolute matrix entry.
const SYMMETRY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianIbError {
    #[error("matrix `{name}` has shape {rows}x{cols}, expected {expected}x{expected}")]
    ShapeMismatch {
        name: &'static str,
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("matrix `{0}` is not symmetric")]
    NotSymmetric(&'static str),
    #[error("c_x is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("matrix `{name}` is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite {
        name: &'static str,
        min_eigenvalue: f64,
    },
    #[error("eigenvalue {lambda} of c_x_given_y * c_x^-1 lies outside [0, 1]")]
    LambdaOutOfRange { lambda: f64 },
    #[error("target covariance is singular (eigenvalue ratio {0:e})")]
    SingularCovariance(f64),
    #[error("need at least {required} samples, got {got}")]
    InsufficientSamples { required: usize, got: usize },
    #[error("x and y sample counts differ ({x_rows} vs {y_rows})")]
    SampleCountMismatch { x_rows: usize, y_rows: usize },
    #[error("lambda {lambda:e} of dimension {dimension} is too close to zero")]
    DegenerateLambda { dimension: usize, lambda: f64 },
    #[error("beta must be positive, got {0}")]
    InvalidBeta(f64),
    #[error("latent dimension {d} must be even, positive and at most 2 * dim_x = {max}")]
    InvalidLatentDim { d: usize, max: usize },
    #[error("task specs have different feature dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error(
        "task {task}: beta = {beta} keeps dimension {dimension} (lambda = {lambda}); \
         beta must be at least 1 - lambda = {threshold} so the task needs at most D/2 dimensions"
    )]
    PreconditionViolated {
        task: usize,
        dimension: usize,
        beta: f64,
        lambda: f64,
        threshold: f64,
    },
}

/// Second-order statistics of a jointly Gaussian `(X, Y)` task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct GaussianTaskSpec {
    dim_x: usize,
    c_x: DMatrix<f64>,
    c_x_given_y: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    dim_x: usize,
    c_x: Vec<Vec<f64>>,
    c_x_given_y: Vec<Vec<f64>>,
}

impl TryFrom<RawSpec> for GaussianTaskSpec {
    type Error = GaussianIbError;

    fn try_from(raw: RawSpec) -> Result<Self, Self::Error> {
        let c_x = matrix_from_rows("c_x", &raw.c_x, raw.dim_x)?;
        let c_x_given_y = matrix_from_rows("c_x_given_y", &raw.c_x_given_y, raw.dim_x)?;
        GaussianTaskSpec::new(c_x, c_x_given_y)
    }
}

impl From<GaussianTaskSpec> for RawSpec {
    fn from(spec: GaussianTaskSpec) -> Self {
        RawSpec {
            dim_x: spec.dim_x,
            c_x: matrix_rows(&spec.c_x),
            c_x_given_y: matrix_rows(&spec.c_x_given_y),
        }
    }
}

fn matrix_from_rows(
    name: &'static str,
    rows: &[Vec<f64>],
    dim: usize,
) -> Result<DMatrix<f64>, GaussianIbError> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(GaussianIbError::ShapeMismatch {
            name,
            rows: rows.len(),
            cols,
            expected: dim,
        });
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter()
        .map(|r| r.iter().copied().collect())
        .collect()
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn check_square(name: &'static str, m: &DMatrix<f64>, dim: usize) -> Result<(), GaussianIbError> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(GaussianIbError::ShapeMismatch {
            name,
            rows: m.nrows(),
            cols: m.ncols(),
            expected: dim,
        });
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > SYMMETRY_TOLERANCE * scale {
        return Err(GaussianIbError::NotSymmetric(name));
    }
    Ok(())
}

impl GaussianTaskSpec {
    /// Validates and builds a task from `C_X` and `C_{X|Y}`.
    pub fn new(c_x: DMatrix<f64>, c_x_given_y: DMatrix<f64>) -> Result<Self, GaussianIbError> {
        let dim_x = c_x.nrows();
        if dim_x == 0 {
            return Err(GaussianIbError::ShapeMismatch {
                name: "c_x",
                rows: 0,
                cols: c_x.ncols(),
                expected: 1,
            });
        }
        check_square("c_x", &c_x, dim_x)?;
        check_square("c_x_given_y", &c_x_given_y, dim_x)?;
        // Symmetrize away round-off so the eigen solvers see exact symmetry.
        let c_x = (&c_x + c_x.transpose()) * 0.5;
        let c_x_given_y = (&c_x_given_y + c_x_given_y.transpose()) * 0.5;

        let min_cx = min_eigenvalue(&c_x);
        if min_cx <= PSD_TOLERANCE {
            return Err(GaussianIbError::NotPositiveDefinite(min_cx));
        }
        let min_cond = min_eigenvalue(&c_x_given_y);
        if min_cond < -PSD_TOLERANCE {
            return Err(GaussianIbError::NotPositiveSemidefinite {
                name: "c_x_given_y",
                min_eigenvalue: min_cond,
            });
        }
        let min_gap = min_eigenvalue(&(&c_x - &c_x_given_y));
        if min_gap < -PSD_TOLERANCE {
            return Err(GaussianIbError::NotPositiveSemidefinite {
                name: "c_x - c_x_given_y",
                min_eigenvalue: min_gap,
            });
        }
        let spec = GaussianTaskSpec {
            dim_x,
            c_x,
            c_x_given_y,
        };
        // Range of lambda is checked by the decomposition itself.
        spec.left_eigen()?;
        Ok(spec)
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn c_x(&self) -> &DMatrix<f64> {
        &self.c_x
    }

    pub fn c_x_given_y(&self) -> &DMatrix<f64> {
        &self.c_x_given_y
    }

    /// Ascending eigenvalues of `C_{X|Y} C_X^{-1}` (clamped to `[0, 1]`) with unit-norm
    /// left eigenvectors as rows.
    ///
    /// Left eigenvectors solve the symmetric-definite pencil `C_{X|Y} v = lambda C_X v`,
    /// which is reduced with the Cholesky factor `C_X = L L^T`.
    fn left_eigen(&self) -> Result<(Vec<f64>, DMatrix<f64>), GaussianIbError> {
        let n = self.dim_x;
        let chol = Cholesky::new(self.c_x.clone())
            .ok_or_else(|| GaussianIbError::NotPositiveDefinite(min_eigenvalue(&self.c_x)))?;
        let l = chol.l();
        let l_inv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| GaussianIbError::NotPositiveDefinite(min_eigenvalue(&self.c_x)))?;
        let reduced = &l_inv * &self.c_x_given_y * l_inv.transpose();
        let reduced = (&reduced + reduced.transpose()) * 0.5;
        let eig = SymmetricEigen::new(reduced);

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

        let mut lambdas = Vec::with_capacity(n);
        let mut vectors = DMatrix::zeros(n, n);
        for (row, &k) in order.iter().enumerate() {
            let lambda = eig.eigenvalues[k];
            if !(-PSD_TOLERANCE..=1.0 + PSD_TOLERANCE).contains(&lambda) {
                return Err(GaussianIbError::LambdaOutOfRange { lambda });
            }
            lambdas.push(lambda.clamp(0.0, 1.0));
            let u: DVector<f64> = eig.eigenvectors.column(k).into_owned();
            let mut v = l_inv.transpose() * u;
            v /= v.norm();
            // Fix the sign: largest-magnitude component positive.
            let pivot = v.iter().copied().fold(0.0_f64, |acc, x| {
                if x.abs() > acc.abs() {
                    x
                } else {
                    acc
                }
            });
            if pivot < 0.0 {
                v = -v;
            }
            vectors.row_mut(row).copy_from(&v.transpose());
        }
        Ok((lambdas, vectors))
    }
}

/// Optimal single-task Gaussian IB encoder at a fixed `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbSolution {
    pub beta: f64,
    /// K x dim_x; row `i` is the left eigenvector `v_i`.
    #[serde(serialize_with = "serialize_matrix", deserialize_with = "deserialize_matrix")]
    pub projection: DMatrix<f64>,
    pub lambdas: Vec<f64>,
    pub alphas: Vec<f64>,
    #[serde(with = "crate::variance_serde")]
    pub noise_variances: Vec<f64>,
}

impl IbSolution {
    /// Number of dimensions with finite noise variance.
    pub fn retained(&self) -> usize {
        self.alphas.iter().filter(|&&a| a > 0.0).count()
    }
}

pub(crate) fn serialize_matrix<S: serde::Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> Result<S::Ok, S::Error> {
    matrix_rows(m).serialize(s)
}

fn deserialize_matrix<'de, D: serde::Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    let rows = Vec::<Vec<f64>>::deserialize(d)?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(serde::de::Error::custom("ragged matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Inverse noise variance for one direction.
pub fn inverse_variance(lambda: f64, beta: f64, quad_form: f64) -> f64 {
    let gain = ((1.0 - lambda) / beta - 1.0).max(0.0);
    gain / (lambda * quad_form)
}

/// Solves the Gaussian IB problem for `spec` at trade-off `beta`.
pub fn solve_gaussian_ib(spec: &GaussianTaskSpec, beta: f64) -> Result<IbSolution, GaussianIbError> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(GaussianIbError::InvalidBeta(beta));
    }
    let (lambdas, projection) = spec.left_eigen()?;
    let mut alphas = Vec::with_capacity(lambdas.len());
    let mut noise_variances = Vec::with_capacity(lambdas.len());
    for (i, &lambda) in lambdas.iter().enumerate() {
        if lambda < PSD_TOLERANCE {
            return Err(GaussianIbError::DegenerateLambda {
                dimension: i,
                lambda,
            });
        }
        let v = projection.row(i).transpose();
        let quad_form = (v.transpose() * spec.c_x() * &v)[(0, 0)];
        let alpha = inverse_variance(lambda, beta, quad_form);
        alphas.push(alpha);
        noise_variances.push(if alpha == 0.0 { f64::INFINITY } else { 1.0 / alpha });
    }
    Ok(IbSolution {
        beta,
        projection,
        lambdas,
        alphas,
        noise_variances,
    })
}

/// Shared linear encoder for two Gaussian tasks with per-task noise variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedEncoder {
    /// D x dim_x.
    #[serde(serialize_with = "serialize_matrix", deserialize_with = "deserialize_matrix")]
    pub a_matrix: DMatrix<f64>,
    #[serde(
        serialize_with = "crate::variance_serde::serialize_nested",
        deserialize_with = "crate::variance_serde::deserialize_nested"
    )]
    pub task_noise: Vec<Vec<f64>>,
}

impl StackedEncoder {
    pub fn latent_dim(&self) -> usize {
        self.a_matrix.nrows()
    }
}

/// Stacks the `d / 2` most informative directions of each task into one encoder.
///
/// Each task must need at most `d / 2` dimensions, i.e. every direction past the first
/// `d / 2` must be discarded at its `beta`.
pub fn stack_two_task_encoder(
    spec1: &GaussianTaskSpec,
    spec2: &GaussianTaskSpec,
    d: usize,
    beta1: f64,
    beta2: f64,
) -> Result<StackedEncoder, GaussianIbError> {
    if spec1.dim_x() != spec2.dim_x() {
        return Err(GaussianIbError::DimensionMismatch(
            spec1.dim_x(),
            spec2.dim_x(),
        ));
    }
    let dim_x = spec1.dim_x();
    if d == 0 || !d.is_multiple_of(2) || d / 2 > dim_x {
        return Err(GaussianIbError::InvalidLatentDim { d, max: 2 * dim_x });
    }
    let half = d / 2;
    let solutions = [
        solve_gaussian_ib(spec1, beta1)?,
        solve_gaussian_ib(spec2, beta2)?,
    ];
    for (task, sol) in solutions.iter().enumerate() {
        if let Some(k) = (half..dim_x).find(|&k| sol.alphas[k] > 0.0) {
            let lambda = sol.lambdas[k];
            return Err(GaussianIbError::PreconditionViolated {
                task,
                dimension: k,
                beta: sol.beta,
                lambda,
                threshold: 1.0 - lambda,
            });
        }
    }

    let mut a_matrix = DMatrix::zeros(d, dim_x);
    let mut task_noise = vec![vec![f64::INFINITY; d]; 2];
    for (task, sol) in solutions.iter().enumerate() {
        let offset = task * half;
        for i in 0..half {
            a_matrix.row_mut(offset + i).copy_from(&sol.projection.row(i));
            task_noise[task][offset + i] = sol.noise_variances[i];
        }
    }
    Ok(StackedEncoder {
        a_matrix,
        task_noise,
    })
}

/// `mask[j][i]` is true when task `j` sees finite noise on dimension `i`.
pub fn disentanglement_pattern(enc: &StackedEncoder) -> Vec<Vec<bool>> {
    enc.task_noise
        .iter()
        .map(|noise| noise.iter().map(|v| v.is_finite()).collect())
        .collect()
}

/// True when every dimension is used by exactly one of the two tasks.
pub fn masks_complementary(masks: &[Vec<bool>]) -> bool {
    match masks {
        [a, b] => a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x != y),
        _ => false,
    }
}

/// Empirical Gaussian statistics from paired samples (rows are observations).
pub fn estimate_gaussian_stats(
    x_samples: &DMatrix<f64>,
    y_samples: &DMatrix<f64>,
) -> Result<GaussianTaskSpec, GaussianIbError> {
    let n = x_samples.nrows();
    if y_samples.nrows() != n {
        return Err(GaussianIbError::SampleCountMismatch {
            x_rows: n,
            y_rows: y_samples.nrows(),
        });
    }
    let (dx, dy) = (x_samples.ncols(), y_samples.ncols());
    let required = dx + dy + 1;
    if n < required {
        return Err(GaussianIbError::InsufficientSamples { required, got: n });
    }
    let center = |m: &DMatrix<f64>| {
        let mut c = m.clone();
        for mut col in c.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        c
    };
    let xc = center(x_samples);
    let yc = center(y_samples);
    let denom = (n - 1) as f64;
    let c_x = xc.transpose() * &xc / denom;
    let c_y = yc.transpose() * &yc / denom;
    let c_xy = xc.transpose() * &yc / denom;

    let eig = SymmetricEigen::new(c_y.clone()).eigenvalues;
    let max = eig.iter().copied().fold(0.0_f64, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if ratio < SINGULAR_TOLERANCE {
        return Err(GaussianIbError::SingularCovariance(ratio));
    }
    let c_y_inv = c_y
        .try_inverse()
        .ok_or(GaussianIbError::SingularCovariance(ratio))?;
    let c_x_given_y = &c_x - &c_xy * c_y_inv * c_xy.transpose();
    GaussianTaskSpec::new(c_x, c_x_given_y)
}
