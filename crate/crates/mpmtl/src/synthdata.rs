//! Synthetic multi-task regression benchmarks.
//!
//! Two families: a low-rank model matrix drawn from a matrix-variate
//! normal with block-structured task covariance, and a group-sparse model
//! matrix with a few nonzero feature rows. Sample rows are standard normal
//! rescaled to unit norm; targets add N(0, noise_sd) observation noise.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, RngExt};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelMatrix, TargetKind, TaskCollection, TaskDataset};
use crate::rng::{purpose, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticFamily {
    /// Columns correlated within equal-size task blocks; Sigma =
    /// scale^2 * C with C the unit-diagonal block-correlation matrix.
    /// Block membership cycles through task indices (i mod block_count) so
    /// any prefix of the task list spans every block.
    LowRank { block_count: usize, rho: f64, scale: f64 },
    /// Only the first support_rows feature rows are nonzero, with
    /// magnitudes uniform in [1, 50] and random signs.
    GroupSparse { support_rows: usize },
}

impl SyntheticFamily {
    pub fn default_lowrank() -> Self {
        SyntheticFamily::LowRank { block_count: 4, rho: 0.95, scale: 10.0 }
    }

    pub fn default_groupsparse() -> Self {
        SyntheticFamily::GroupSparse { support_rows: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_tasks: usize,
    pub train_per_task: usize,
    pub n_features: usize,
    pub family: SyntheticFamily,
    pub noise_sd: f64,
    pub test_multiplier: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Full-scale low-rank benchmark: m=320 tasks, 30 samples, 30 features.
    pub fn default_lowrank(seed: u64) -> Self {
        SyntheticSpec {
            n_tasks: 320,
            train_per_task: 30,
            n_features: 30,
            family: SyntheticFamily::default_lowrank(),
            noise_sd: 1.0,
            test_multiplier: 9,
            seed,
        }
    }

    pub fn default_groupsparse(seed: u64) -> Self {
        SyntheticSpec {
            family: SyntheticFamily::default_groupsparse(),
            ..SyntheticSpec::default_lowrank(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 || self.train_per_task == 0 || self.n_features == 0 {
            return Err(Error::invalid("tasks, samples, and features must be at least 1"));
        }
        if self.test_multiplier == 0 {
            return Err(Error::invalid("test_multiplier must be at least 1"));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::invalid(format!(
                "noise_sd must be non-negative, got {}",
                self.noise_sd
            )));
        }
        match self.family {
            SyntheticFamily::LowRank { block_count, rho, scale } => {
                if block_count == 0 || self.n_tasks % block_count != 0 {
                    return Err(Error::invalid(format!(
                        "{} tasks not divisible into {block_count} blocks",
                        self.n_tasks
                    )));
                }
                if !(0.0..1.0).contains(&rho) {
                    return Err(Error::invalid(format!("rho must be in [0, 1), got {rho}")));
                }
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(Error::invalid(format!("scale must be positive, got {scale}")));
                }
            }
            SyntheticFamily::GroupSparse { support_rows } => {
                if support_rows == 0 || support_rows > self.n_features {
                    return Err(Error::invalid(format!(
                        "support_rows must be in 1..={}, got {support_rows}",
                        self.n_features
                    )));
                }
            }
        }
        Ok(())
    }

    /// The task covariance Sigma targeted by the low-rank family.
    pub fn lowrank_sigma(&self) -> Result<DMatrix<f64>> {
        match self.family {
            SyntheticFamily::LowRank { block_count, rho, scale } => {
                self.validate()?;
                let m = self.n_tasks;
                Ok(DMatrix::from_fn(m, m, |i, j| {
                    if i == j {
                        scale * scale
                    } else if i % block_count == j % block_count {
                        scale * scale * rho
                    } else {
                        0.0
                    }
                }))
            }
            SyntheticFamily::GroupSparse { .. } => {
                Err(Error::invalid("lowrank_sigma only applies to the low-rank family"))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub train: TaskCollection,
    pub test: TaskCollection,
    pub w_true: ModelMatrix,
}

/// Generates train/test collections and the true model matrix; bit-identical
/// for identical specs.
pub fn generate(spec: &SyntheticSpec) -> Result<GeneratedData> {
    spec.validate()?;
    let w_true = match spec.family {
        SyntheticFamily::LowRank { .. } => gen_lowrank_models(spec)?,
        SyntheticFamily::GroupSparse { .. } => gen_groupsparse_models(spec),
    };

    let mut train = Vec::with_capacity(spec.n_tasks);
    let mut test = Vec::with_capacity(spec.n_tasks);
    for i in 0..spec.n_tasks {
        let w_i = w_true.column(i).into_owned();
        let mut rng_tr = rng_from(spec.seed, &[purpose::TRAIN_SAMPLES, i as u64]);
        train.push(gen_task(spec.train_per_task, spec.n_features, &w_i, spec.noise_sd, &mut rng_tr)?);
        let mut rng_te = rng_from(spec.seed, &[purpose::TEST_SAMPLES, i as u64]);
        let n_test = spec.train_per_task * spec.test_multiplier;
        test.push(gen_task(n_test, spec.n_features, &w_i, spec.noise_sd, &mut rng_te)?);
    }
    Ok(GeneratedData {
        train: TaskCollection::new(train)?,
        test: TaskCollection::new(test)?,
        w_true: ModelMatrix::new(w_true)?,
    })
}

fn gen_task<R: Rng>(
    n: usize,
    d: usize,
    w: &DVector<f64>,
    noise_sd: f64,
    rng: &mut R,
) -> Result<TaskDataset> {
    let mut x = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng));
    for mut row in x.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    let noise = DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        noise_sd * z
    });
    let y = &x * w + noise;
    TaskDataset::new(x, y, TargetKind::Regression)
}

fn gen_lowrank_models(spec: &SyntheticSpec) -> Result<DMatrix<f64>> {
    let sigma = spec.lowrank_sigma()?;
    // Symmetric square root of Sigma via eigendecomposition.
    let eig = SymmetricEigen::new(sigma);
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
    let mut rng = rng_from(spec.seed, &[purpose::TRUE_MODEL]);
    let z: DMatrix<f64> =
        DMatrix::from_fn(spec.n_features, spec.n_tasks, |_, _| StandardNormal.sample(&mut rng));
    Ok(z * root)
}

fn gen_groupsparse_models(spec: &SyntheticSpec) -> DMatrix<f64> {
    let support = match spec.family {
        SyntheticFamily::GroupSparse { support_rows } => support_rows,
        SyntheticFamily::LowRank { .. } => unreachable!("dispatched by family"),
    };
    let mut rng = rng_from(spec.seed, &[purpose::TRUE_MODEL]);
    DMatrix::from_fn(spec.n_features, spec.n_tasks, |r, _| {
        if r < support {
            let magnitude = rng.random_range(1.0..=50.0);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * magnitude
        } else {
            0.0
        }
    })
}
