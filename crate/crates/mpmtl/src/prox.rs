//! Proximal operators and their privacy-preserving counterparts.
//!
//! The exact operators (singular-value and row soft-thresholding) are used
//! by the non-private baselines. The private estimators instead build a
//! projection matrix from the perturbed covariance alone, so the
//! model-transfer step never touches task data.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Linear model-transfer operator derived from a (possibly noisy)
/// covariance; application never amplifies column norms.
#[derive(Debug, Clone)]
pub struct ProjectionMatrix {
    op: ProjectionOp,
    threshold: f64,
}

#[derive(Debug, Clone)]
enum ProjectionOp {
    /// Full symmetric matrix (low-rank / trace-norm flavor).
    Dense(DMatrix<f64>),
    /// Per-feature scaling (group-sparse flavor).
    RowScaling(DVector<f64>),
}

impl ProjectionMatrix {
    /// The soft-threshold tau = eta * lambda the projection encodes.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn dim(&self) -> usize {
        match &self.op {
            ProjectionOp::Dense(m) => m.nrows(),
            ProjectionOp::RowScaling(s) => s.len(),
        }
    }

    /// M * W for a d x m model matrix.
    pub fn apply(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if w.nrows() != self.dim() {
            return Err(Error::dims(format!(
                "projection is {}-dimensional, model has {} rows",
                self.dim(),
                w.nrows()
            )));
        }
        Ok(match &self.op {
            ProjectionOp::Dense(m) => m * w,
            ProjectionOp::RowScaling(s) => {
                let mut out = w.clone();
                for (j, mut row) in out.row_iter_mut().enumerate() {
                    row *= s[j];
                }
                out
            }
        })
    }

    /// The operator materialized as a d x d matrix.
    pub fn dense(&self) -> DMatrix<f64> {
        match &self.op {
            ProjectionOp::Dense(m) => m.clone(),
            ProjectionOp::RowScaling(s) => DMatrix::from_diagonal(s),
        }
    }
}

fn check_threshold(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::invalid(format!(
            "threshold must be finite and non-negative, got {tau}"
        )));
    }
    Ok(())
}

fn check_finite(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite entry in {name}")));
    }
    Ok(())
}

/// Exact prox of tau * ||.||_* : soft-threshold the singular values.
pub fn prox_trace_exact(c: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    check_threshold(tau)?;
    check_finite("prox input", c)?;
    if tau == 0.0 {
        return Ok(c.clone());
    }
    let svd = c.clone().svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let shrunk = svd.singular_values.map(|s| (s - tau).max(0.0));
    Ok(&u * DMatrix::from_diagonal(&shrunk) * &v_t)
}

/// Exact prox of tau * sum of row l2 norms: rescale every row by
/// max(0, 1 - tau / ||row||).
pub fn prox_group_l1_exact(c: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    check_threshold(tau)?;
    check_finite("prox input", c)?;
    let mut out = c.clone();
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        if norm <= tau {
            row.fill(0.0);
        } else {
            row *= 1.0 - tau / norm;
        }
    }
    Ok(out)
}

fn check_symmetric(sigma: &DMatrix<f64>) -> Result<()> {
    if sigma.nrows() != sigma.ncols() {
        return Err(Error::dims(format!(
            "covariance must be square, got {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let mut worst = 0.0f64;
    for i in 0..sigma.nrows() {
        for j in (i + 1)..sigma.ncols() {
            worst = worst.max((sigma[(i, j)] - sigma[(j, i)]).abs());
        }
    }
    if worst > 1e-8 {
        return Err(Error::invalid(format!(
            "covariance is asymmetric (max deviation {worst:.3e})"
        )));
    }
    Ok(())
}

/// Spectral shrinkage operator from a perturbed covariance: eigenvectors of
/// sigma with eigenvalue factors max(0, 1 - tau / sqrt(lambda)), and 0 for
/// non-positive eigenvalues.
pub fn noisy_projection_lowrank(sigma: &DMatrix<f64>, tau: f64) -> Result<ProjectionMatrix> {
    check_threshold(tau)?;
    check_finite("covariance", sigma)?;
    check_symmetric(sigma)?;
    let sym = 0.5 * (sigma + sigma.transpose());
    let eig = SymmetricEigen::new(sym);
    let factors = eig.eigenvalues.map(|lam| {
        if lam <= 0.0 {
            0.0
        } else {
            (1.0 - tau / lam.sqrt()).max(0.0)
        }
    });
    let m = &eig.eigenvectors * DMatrix::from_diagonal(&factors) * eig.eigenvectors.transpose();
    let m = 0.5 * (&m + m.transpose());
    Ok(ProjectionMatrix { op: ProjectionOp::Dense(m), threshold: tau })
}

/// Per-feature shrinkage from the diagonal of a perturbed covariance:
/// factor max(0, 1 - tau / sqrt(|sigma_jj|)), and 0 for zero diagonals.
pub fn noisy_projection_groupsparse(sigma: &DMatrix<f64>, tau: f64) -> Result<ProjectionMatrix> {
    check_threshold(tau)?;
    check_finite("covariance", sigma)?;
    check_symmetric(sigma)?;
    let factors = DVector::from_fn(sigma.nrows(), |j, _| {
        let v = sigma[(j, j)].abs();
        if v == 0.0 {
            0.0
        } else {
            (1.0 - tau / v.sqrt()).max(0.0)
        }
    });
    Ok(ProjectionMatrix { op: ProjectionOp::RowScaling(factors), threshold: tau })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::RngExt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
        m.clone().svd(false, false).singular_values.iter().sum()
    }

    fn row_l21(m: &DMatrix<f64>) -> f64 {
        m.row_iter().map(|r| r.norm()).sum()
    }

    #[test]
    fn trace_prox_with_zero_threshold_is_identity() {
        let c = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.0, 3.0, -1.0]);
        assert_eq!(prox_trace_exact(&c, 0.0).unwrap(), c);
    }

    #[test]
    fn trace_prox_shrinks_diagonal_case() {
        let c = DMatrix::from_partial_diagonal(2, 2, &[3.0, 1.0]);
        let p = prox_trace_exact(&c, 0.5).unwrap();
        assert_relative_eq!(p[(0, 0)], 2.5, max_relative = 1e-12);
        assert_relative_eq!(p[(1, 1)], 0.5, max_relative = 1e-12);
        assert!(p[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn trace_prox_kills_everything_past_top_singular_value() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let c = random_matrix(4, 5, &mut rng);
        let smax = c.clone().svd(false, false).singular_values.max();
        let p = prox_trace_exact(&c, smax + 0.1).unwrap();
        assert!(p.norm() < 1e-12);
    }

    #[test]
    fn group_prox_scales_and_zeroes_rows() {
        let c = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.1, 0.0]);
        let p = prox_group_l1_exact(&c, 1.0).unwrap();
        // First row norm 5 -> factor 0.8; second row norm 0.1 <= 1 -> zero.
        assert_relative_eq!(p[(0, 0)], 2.4, max_relative = 1e-12);
        assert_relative_eq!(p[(0, 1)], 3.2, max_relative = 1e-12);
        assert_eq!(p[(1, 0)], 0.0);
        assert_eq!(p[(1, 1)], 0.0);
    }

    #[test]
    fn prox_outputs_beat_random_perturbations() {
        // prox_tau(C) minimizes 0.5||Z - C||_F^2 + tau * penalty(Z).
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let c = random_matrix(5, 4, &mut rng);
        let tau = 0.7;
        for (prox, penalty) in [
            (prox_trace_exact as fn(&DMatrix<f64>, f64) -> Result<DMatrix<f64>>, nuclear_norm as fn(&DMatrix<f64>) -> f64),
            (prox_group_l1_exact, row_l21),
        ] {
            let z = prox(&c, tau).unwrap();
            let objective = |m: &DMatrix<f64>| 0.5 * (m - &c).norm_squared() + tau * penalty(m);
            let base = objective(&z);
            for scale in [1e-3, 1e-1, 1.0] {
                for _ in 0..100 {
                    let probe = &z + scale * random_matrix(5, 4, &mut rng);
                    assert!(objective(&probe) >= base - 1e-10);
                }
            }
        }
    }

    #[test]
    fn prox_rejects_bad_input() {
        let c = DMatrix::from_element(2, 2, 1.0);
        assert!(prox_trace_exact(&c, -1.0).is_err());
        assert!(prox_trace_exact(&c, f64::NAN).is_err());
        let bad = DMatrix::from_element(2, 2, f64::INFINITY);
        assert!(prox_trace_exact(&bad, 1.0).is_err());
        assert!(prox_group_l1_exact(&bad, 1.0).is_err());
    }

    #[test]
    fn lowrank_projection_rejects_asymmetry() {
        let mut sigma = DMatrix::identity(3, 3);
        sigma[(0, 1)] = 1e-4;
        assert!(noisy_projection_lowrank(&sigma, 0.1).is_err());
        assert!(noisy_projection_lowrank(&DMatrix::zeros(2, 3), 0.1).is_err());
        // Tiny asymmetry below tolerance is accepted.
        let mut sigma = DMatrix::identity(3, 3);
        sigma[(0, 1)] = 1e-9;
        assert!(noisy_projection_lowrank(&sigma, 0.1).is_ok());
    }

    #[test]
    fn lowrank_projection_eigenvalues_stay_in_unit_interval() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..20 {
            let b = random_matrix(5, 5, &mut rng);
            // Indefinite symmetric input: factors for negative eigenvalues are 0.
            let sigma = 0.5 * (&b + b.transpose());
            let proj = noisy_projection_lowrank(&sigma, 0.3).unwrap();
            let eig = SymmetricEigen::new(proj.dense());
            for lam in eig.eigenvalues.iter() {
                assert!(*lam >= -1e-12 && *lam <= 1.0 + 1e-12, "eigenvalue {lam}");
            }
        }
    }

    #[test]
    fn zero_noise_lowrank_projection_matches_exact_prox() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let w = random_matrix(6, 8, &mut rng);
        let tau = 0.4;
        let sigma = &w * w.transpose();
        let sigma = 0.5 * (&sigma + sigma.transpose());
        let proj = noisy_projection_lowrank(&sigma, tau).unwrap();
        let via_projection = proj.apply(&w).unwrap();
        let exact = prox_trace_exact(&w, tau).unwrap();
        assert!((via_projection - exact).norm() < 1e-8);
    }

    #[test]
    fn zero_noise_groupsparse_projection_matches_exact_prox() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let w = random_matrix(6, 8, &mut rng);
        let tau = 0.4;
        let sigma = &w * w.transpose();
        let sigma = 0.5 * (&sigma + sigma.transpose());
        let proj = noisy_projection_groupsparse(&sigma, tau).unwrap();
        let via_projection = proj.apply(&w).unwrap();
        let exact = prox_group_l1_exact(&w, tau).unwrap();
        assert!((via_projection - exact).norm() < 1e-10);
    }

    #[test]
    fn groupsparse_factors_handle_zero_and_negative_diagonals() {
        let sigma = DMatrix::from_partial_diagonal(3, 3, &[4.0, 0.0, -4.0]);
        let proj = noisy_projection_groupsparse(&sigma, 1.0).unwrap();
        let d = proj.dense();
        assert_relative_eq!(d[(0, 0)], 0.5, max_relative = 1e-12);
        assert_eq!(d[(1, 1)], 0.0);
        assert_relative_eq!(d[(2, 2)], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn projection_apply_checks_dimensions() {
        let proj = noisy_projection_lowrank(&DMatrix::identity(3, 3), 0.1).unwrap();
        assert!(proj.apply(&DMatrix::zeros(4, 2)).is_err());
        assert!(proj.apply(&DMatrix::zeros(3, 2)).is_ok());
    }

    #[test]
    fn vanishing_threshold_gives_identity_on_positive_definite_input() {
        let sigma = DMatrix::from_partial_diagonal(3, 3, &[2.0, 1.0, 0.5]);
        let proj = noisy_projection_lowrank(&sigma, 0.0).unwrap();
        assert!((proj.dense() - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn trace_prox_is_nonexpansive(
            a in proptest::collection::vec(-2.0f64..2.0, 12),
            b in proptest::collection::vec(-2.0f64..2.0, 12),
            tau in 0.0f64..2.0,
        ) {
            let ma = DMatrix::from_column_slice(3, 4, &a);
            let mb = DMatrix::from_column_slice(3, 4, &b);
            let pa = prox_trace_exact(&ma, tau).unwrap();
            let pb = prox_trace_exact(&mb, tau).unwrap();
            prop_assert!((pa - pb).norm() <= (ma - mb).norm() + 1e-9);
        }

        #[test]
        fn group_prox_is_nonexpansive(
            a in proptest::collection::vec(-2.0f64..2.0, 12),
            b in proptest::collection::vec(-2.0f64..2.0, 12),
            tau in 0.0f64..2.0,
        ) {
            let ma = DMatrix::from_column_slice(3, 4, &a);
            let mb = DMatrix::from_column_slice(3, 4, &b);
            let pa = prox_group_l1_exact(&ma, tau).unwrap();
            let pb = prox_group_l1_exact(&mb, tau).unwrap();
            prop_assert!((pa - pb).norm() <= (ma - mb).norm() + 1e-9);
        }

        #[test]
        fn projections_never_amplify(
            vals in proptest::collection::vec(-2.0f64..2.0, 16),
            w in proptest::collection::vec(-3.0f64..3.0, 12),
            tau in 0.0f64..1.5,
        ) {
            let b = DMatrix::from_column_slice(4, 4, &vals);
            let sigma = 0.5 * (&b + b.transpose());
            let wm = DMatrix::from_column_slice(4, 3, &w);
            for proj in [
                noisy_projection_lowrank(&sigma, tau).unwrap(),
                noisy_projection_groupsparse(&sigma, tau).unwrap(),
            ] {
                let out = proj.apply(&wm).unwrap();
                for (pc, wc) in out.column_iter().zip(wm.column_iter()) {
                    prop_assert!(pc.norm() <= wc.norm() * (1.0 + 1e-10) + 1e-12);
                }
            }
        }
    }
}
