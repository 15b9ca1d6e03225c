//! Wishart noise for covariance perturbation.
//!
//! Sampling uses the Bartlett decomposition: E = c A A' where A is lower
//! triangular with chi distributed diagonal entries and standard normal
//! strict lower triangle. The mean is dof * c * I.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};

/// One Wishart draw together with the parameters that produced it.
#[derive(Debug, Clone)]
pub struct NoiseSample {
    matrix: DMatrix<f64>,
    dof: f64,
    scale: f64,
}

impl NoiseSample {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    /// The scalar c of the scale matrix c * I.
    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Draws from W_d(dof, scale * I); requires dof > d - 1.
pub fn sample_wishart<R: Rng + ?Sized>(
    d: usize,
    dof: f64,
    scale: f64,
    rng: &mut R,
) -> Result<NoiseSample> {
    if d == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if !(dof.is_finite() && dof > d as f64 - 1.0) {
        return Err(Error::invalid(format!(
            "Wishart needs dof > d - 1, got dof={dof}, d={d}"
        )));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid(format!("scale must be positive, got {scale}")));
    }
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(dof - i as f64)
            .map_err(|e| Error::invalid(format!("chi-squared dof invalid: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let m = &a * a.transpose();
    let sym = 0.5 * (&m + m.transpose());
    Ok(NoiseSample { matrix: scale * sym, dof, scale })
}

/// The covariance perturbation for one iteration with budget eps_t:
/// W_d(d + 1, K^2 / (2 eps_t) * I) for clip bound K.
pub fn noise_for_budget<R: Rng + ?Sized>(
    d: usize,
    k: f64,
    eps_t: f64,
    rng: &mut R,
) -> Result<NoiseSample> {
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::invalid(format!("clip bound must be positive, got {k}")));
    }
    if !(eps_t.is_finite() && eps_t > 0.0) {
        return Err(Error::invalid(format!(
            "per-iteration budget must be positive, got {eps_t}"
        )));
    }
    sample_wishart(d, d as f64 + 1.0, k * k / (2.0 * eps_t), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn rejects_invalid_parameters() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(sample_wishart(0, 3.0, 1.0, &mut rng).is_err());
        assert!(sample_wishart(3, 2.0, 1.0, &mut rng).is_err()); // dof == d - 1
        assert!(sample_wishart(3, 4.0, 0.0, &mut rng).is_err());
        assert!(sample_wishart(3, f64::NAN, 1.0, &mut rng).is_err());
        assert!(noise_for_budget(3, 0.0, 1.0, &mut rng).is_err());
        assert!(noise_for_budget(3, 1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn draws_are_symmetric_and_psd() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..50 {
            let s = sample_wishart(4, 6.5, 0.7, &mut rng).unwrap();
            let e = s.matrix();
            assert_eq!(e, &e.transpose());
            let eig = SymmetricEigen::new(e.clone());
            for lam in eig.eigenvalues.iter() {
                assert!(*lam >= -1e-10, "negative eigenvalue {lam}");
            }
        }
    }

    #[test]
    fn draws_are_deterministic_per_seed() {
        let a = sample_wishart(3, 5.0, 2.0, &mut ChaCha12Rng::seed_from_u64(7)).unwrap();
        let b = sample_wishart(3, 5.0, 2.0, &mut ChaCha12Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.matrix(), b.matrix());
        let c = sample_wishart(3, 5.0, 2.0, &mut ChaCha12Rng::seed_from_u64(8)).unwrap();
        assert_ne!(a.matrix(), c.matrix());
    }

    #[test]
    fn empirical_mean_approaches_dof_times_scale() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let (d, dof, scale, draws) = (2, 5.0, 1.0, 600);
        let mut mean = DMatrix::zeros(d, d);
        for _ in 0..draws {
            mean += sample_wishart(d, dof, scale, &mut rng).unwrap().matrix();
        }
        mean /= draws as f64;
        let target = dof * scale * DMatrix::identity(d, d);
        let rel = (&mean - &target).norm() / target.norm();
        assert!(rel < 0.15, "relative error {rel}");
    }

    #[test]
    fn budget_noise_uses_prescribed_dof_and_scale() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let s = noise_for_budget(5, 2.0, 0.25, &mut rng).unwrap();
        assert_eq!(s.dof(), 6.0);
        assert_relative_eq!(s.scale(), 4.0 / 0.5, max_relative = 1e-15);
    }

    #[test]
    fn tighter_budget_means_larger_noise() {
        // Same seed: the draw scales linearly with c, so compare norms.
        let a = noise_for_budget(4, 1.0, 0.01, &mut ChaCha12Rng::seed_from_u64(9)).unwrap();
        let b = noise_for_budget(4, 1.0, 10.0, &mut ChaCha12Rng::seed_from_u64(9)).unwrap();
        assert!(a.matrix().norm() > b.matrix().norm());
    }
}
