//! Per-task losses: value, gradient, and step Lipschitz constants.
//!
//! Losses are sums over samples (no 1/n factor), optionally plus a ridge
//! term (mu/2)||w||^2 that makes the smooth part strongly convex.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TaskCollection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    LeastSquares,
    /// log(1 + exp(-y x.w)) with labels in {-1, +1}.
    Logistic,
}

#[derive(Debug, Clone, Copy)]
pub struct Loss {
    pub kind: LossKind,
    pub ridge_mu: f64,
}

impl Loss {
    pub fn least_squares() -> Self {
        Loss { kind: LossKind::LeastSquares, ridge_mu: 0.0 }
    }

    pub fn logistic() -> Self {
        Loss { kind: LossKind::Logistic, ridge_mu: 0.0 }
    }

    pub fn with_ridge(mut self, mu: f64) -> Self {
        self.ridge_mu = mu;
        self
    }

    fn check(&self, x: &DMatrix<f64>, w: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
        if !(self.ridge_mu.is_finite() && self.ridge_mu >= 0.0) {
            return Err(Error::invalid(format!(
                "ridge weight must be non-negative, got {}",
                self.ridge_mu
            )));
        }
        if x.ncols() != w.len() || x.nrows() != y.len() {
            return Err(Error::dims(format!(
                "X is {}x{}, w has {}, y has {}",
                x.nrows(),
                x.ncols(),
                w.len(),
                y.len()
            )));
        }
        Ok(())
    }

    pub fn value(&self, x: &DMatrix<f64>, w: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        self.check(x, w, y)?;
        let z = x * w;
        let data_term = match self.kind {
            LossKind::LeastSquares => 0.5 * (&z - y).norm_squared(),
            LossKind::Logistic => z
                .iter()
                .zip(y.iter())
                .map(|(&zi, &yi)| softplus(-yi * zi))
                .sum(),
        };
        Ok(data_term + 0.5 * self.ridge_mu * w.norm_squared())
    }

    pub fn gradient(
        &self,
        x: &DMatrix<f64>,
        w: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check(x, w, y)?;
        let z = x * w;
        let grad = match self.kind {
            LossKind::LeastSquares => x.transpose() * (&z - y),
            LossKind::Logistic => {
                // d/dw softplus(-y z) = -y sigmoid(-y z) x
                let coeffs = DVector::from_fn(y.len(), |i, _| -y[i] * sigmoid(-y[i] * z[i]));
                x.transpose() * coeffs
            }
        };
        Ok(grad + self.ridge_mu * w)
    }

    /// L = max over tasks of lambda_max(X_i' X_i) (divided by 4 for
    /// logistic) plus the ridge weight.
    pub fn lipschitz_constant(&self, tasks: &TaskCollection) -> Result<f64> {
        let mut max_sq = 0.0f64;
        for t in tasks.tasks() {
            max_sq = max_sq.max(spectral_norm_squared(t.x()));
        }
        if max_sq == 0.0 {
            return Err(Error::invalid(
                "all task data is zero; Lipschitz constant is undefined for step sizing",
            ));
        }
        let factor = match self.kind {
            LossKind::LeastSquares => 1.0,
            LossKind::Logistic => 0.25,
        };
        Ok(factor * max_sq + self.ridge_mu)
    }
}

/// log(1 + exp(v)) without overflow.
fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

/// 1 / (1 + exp(-v)) without overflow.
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// lambda_max(X' X) by power iteration (relative-change stop at 1e-10).
pub fn spectral_norm_squared(x: &DMatrix<f64>) -> f64 {
    let d = x.ncols();
    // Deterministic start with unequal weights so it is not orthogonal to
    // the top eigenvector for simple structured inputs.
    let mut v = DVector::from_fn(d, |i, _| 1.0 + (i as f64) / (d as f64 + 1.0));
    v /= v.norm();
    let mut lambda = 0.0f64;
    for _ in 0..10_000 {
        let mut next = x.transpose() * (x * &v);
        let norm = next.norm();
        if norm == 0.0 {
            // v is in the null space; restart from the first basis vector
            // that X does not annihilate.
            match (0..d)
                .map(|j| DVector::from_fn(d, |i, _| if i == j { 1.0 } else { 0.0 }))
                .find(|e| (x * e).norm() > 0.0)
            {
                Some(e) => {
                    v = e;
                    continue;
                }
                None => return 0.0,
            }
        }
        next /= norm;
        let new_lambda = (x * &next).norm_squared();
        if (new_lambda - lambda).abs() <= 1e-10 * new_lambda.max(f64::MIN_POSITIVE) {
            return new_lambda;
        }
        lambda = new_lambda;
        v = next;
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{TaskDataset, TargetKind};
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::RngExt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn central_diff(loss: &Loss, x: &DMatrix<f64>, w: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let h = 1e-6;
        DVector::from_fn(w.len(), |k, _| {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[k] += h;
            wm[k] -= h;
            (loss.value(x, &wp, y).unwrap() - loss.value(x, &wm, y).unwrap()) / (2.0 * h)
        })
    }

    #[test]
    fn least_squares_value_at_zero_is_half_norm() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let y = DVector::from_column_slice(&[3.0, 4.0]);
        let w = DVector::zeros(2);
        let v = Loss::least_squares().value(&x, &w, &y).unwrap();
        assert_relative_eq!(v, 12.5, max_relative = 1e-14);
    }

    #[test]
    fn logistic_value_and_gradient_at_zero() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -0.5, 0.25, 0.0, 1.0]);
        let y = DVector::from_column_slice(&[1.0, -1.0, 1.0]);
        let w = DVector::zeros(2);
        let loss = Loss::logistic();
        assert_relative_eq!(
            loss.value(&x, &w, &y).unwrap(),
            3.0 * std::f64::consts::LN_2,
            max_relative = 1e-14
        );
        let g = loss.gradient(&x, &w, &y).unwrap();
        let expected = -0.5 * x.transpose() * y;
        assert_relative_eq!((g - expected).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn logistic_is_stable_at_extreme_margins() {
        let x = DMatrix::from_row_slice(2, 1, &[1e4, -1e4]);
        let y = DVector::from_column_slice(&[1.0, 1.0]);
        let w = DVector::from_column_slice(&[1.0]);
        let loss = Loss::logistic();
        let v = loss.value(&x, &w, &y).unwrap();
        assert!(v.is_finite());
        assert_relative_eq!(v, 1e4, max_relative = 1e-10);
        let g = loss.gradient(&x, &w, &y).unwrap();
        assert!(g[0].is_finite());
    }

    #[test]
    fn ridge_contributes_to_value_and_gradient() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let y = DVector::from_column_slice(&[0.0]);
        let w = DVector::from_column_slice(&[2.0, -2.0]);
        let plain = Loss::least_squares();
        let ridged = Loss::least_squares().with_ridge(0.5);
        let dv = ridged.value(&x, &w, &y).unwrap() - plain.value(&x, &w, &y).unwrap();
        assert_relative_eq!(dv, 0.25 * 8.0, max_relative = 1e-14);
        let dg = ridged.gradient(&x, &w, &y).unwrap() - plain.gradient(&x, &w, &y).unwrap();
        assert_relative_eq!((dg - 0.5 * w).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for kind in [LossKind::LeastSquares, LossKind::Logistic] {
            let loss = Loss { kind, ridge_mu: 0.1 };
            let x = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
            let y = match kind {
                LossKind::LeastSquares => DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0)),
                LossKind::Logistic => {
                    DVector::from_fn(6, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
                }
            };
            let w = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let g = loss.gradient(&x, &w, &y).unwrap();
            let fd = central_diff(&loss, &x, &w, &y);
            assert_relative_eq!((g - fd).norm(), 0.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn lipschitz_known_cases() {
        let eye = TaskDataset::new(
            DMatrix::identity(3, 3),
            DVector::zeros(3),
            TargetKind::Regression,
        )
        .unwrap();
        let scaled = TaskDataset::new(
            2.0 * DMatrix::identity(3, 3),
            DVector::zeros(3),
            TargetKind::Regression,
        )
        .unwrap();
        let tasks = TaskCollection::new(vec![eye, scaled]).unwrap();
        assert_relative_eq!(
            Loss::least_squares().lipschitz_constant(&tasks).unwrap(),
            4.0,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            Loss::logistic().lipschitz_constant(&tasks).unwrap(),
            1.0,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            Loss::least_squares().with_ridge(0.5).lipschitz_constant(&tasks).unwrap(),
            4.5,
            max_relative = 1e-9
        );
    }

    #[test]
    fn lipschitz_rejects_all_zero_data() {
        // Zero features with nonzero targets pass dataset validation.
        let t = TaskDataset::new(
            DMatrix::zeros(2, 2),
            DVector::from_column_slice(&[1.0, 2.0]),
            TargetKind::Regression,
        )
        .unwrap();
        let tasks = TaskCollection::new(vec![t]).unwrap();
        assert!(Loss::least_squares().lipschitz_constant(&tasks).is_err());
    }

    #[test]
    fn power_iteration_matches_dense_eigensolver() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = DMatrix::from_fn(10, 6, |_, _| rng.random_range(-1.0..1.0));
            let dense = SymmetricEigen::new(x.transpose() * &x)
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let power = spectral_norm_squared(&x);
            assert_relative_eq!(power, dense, max_relative = 1e-8);
        }
    }

    #[test]
    fn power_iteration_handles_rank_deficient_input() {
        // Rank-1 matrix whose top eigenvector is the second basis vector.
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 0.0, 0.0]);
        assert_relative_eq!(spectral_norm_squared(&x), 9.0, max_relative = 1e-9);
        assert_eq!(spectral_norm_squared(&DMatrix::zeros(3, 3)), 0.0);
    }

    proptest! {
        #[test]
        fn gradient_close_to_finite_difference(
            xs in proptest::collection::vec(-2.0f64..2.0, 12),
            ws in proptest::collection::vec(-1.0f64..1.0, 3),
        ) {
            let x = DMatrix::from_row_slice(4, 3, &xs);
            let w = DVector::from_column_slice(&ws);
            let y = DVector::from_fn(4, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
            for loss in [Loss::least_squares(), Loss::logistic()] {
                let g = loss.gradient(&x, &w, &y).unwrap();
                let fd = central_diff(&loss, &x, &w, &y);
                prop_assert!((g - fd).norm() <= 1e-4 * (1.0 + x.norm()));
            }
        }
    }
}
