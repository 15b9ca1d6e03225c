//! Training loops: private MP-MTL estimators and baselines.
//!
//! The private estimators iterate a two-step scheme. A centralized
//! transfer step sees only norm-clipped models: it forms the task
//! covariance, perturbs it with Wishart noise paid for by that iteration's
//! budget, and derives a shrinkage projection. Decoupled per-task steps
//! then apply the projection, momentum, and a gradient step on the task's
//! own data. Baselines share the same skeleton with exact proximal
//! operators (non-private MTL), run tasks independently (STL), or average
//! per-task models under output perturbation (DP-AGGR).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::{mp_to_ip, PrivacySchedule};
use crate::error::{Error, Result};
use crate::losses::{spectral_norm_squared, Loss, LossKind};
use crate::model::{clip_norm, Acceleration, HyperParams, ModelMatrix, TaskCollection};
use crate::prox::{
    noisy_projection_groupsparse, noisy_projection_lowrank, prox_group_l1_exact,
    prox_trace_exact, ProjectionMatrix,
};
use crate::wishart::noise_for_budget;

/// Structure penalty coupling the tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    /// Trace norm (low-rank structure).
    Trace,
    /// Group l1: sum of feature-row l2 norms (shared sparsity).
    GroupL1,
}

/// Regularizer for the per-task baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StlRegularizer {
    None,
    L1,
    L2,
}

/// Where the covariance perturbation comes from.
///
/// Production code uses `wishart()`. The other constructors disable or fix
/// the noise and are named so a call site cannot look innocent: they are
/// for tests and diagnostics only and forfeit every privacy guarantee.
#[derive(Debug, Clone)]
pub struct NoiseSource(NoiseInner);

#[derive(Debug, Clone)]
enum NoiseInner {
    Wishart,
    Zero,
    Fixed(DMatrix<f64>),
}

impl NoiseSource {
    pub fn wishart() -> Self {
        NoiseSource(NoiseInner::Wishart)
    }

    /// No perturbation at all. Unsafe for privacy; test hook.
    pub fn unsafe_for_privacy_zero() -> Self {
        NoiseSource(NoiseInner::Zero)
    }

    /// The same fixed matrix every iteration. Unsafe for privacy; test hook.
    pub fn unsafe_for_privacy_fixed(e: DMatrix<f64>) -> Self {
        NoiseSource(NoiseInner::Fixed(e))
    }

    /// True only for the production Wishart mechanism.
    pub fn is_private(&self) -> bool {
        matches!(self.0, NoiseInner::Wishart)
    }
}

/// Per-iteration record kept by every estimator.
#[derive(Debug, Clone)]
pub struct IterationDiagnostics {
    /// 1-based iteration number.
    pub iter: usize,
    /// Budget spent this iteration (private runs only).
    pub eps_t: Option<f64>,
    /// log10(||E||_F / ||Sigma_clean||_F); -inf when E = 0, +inf when the
    /// clipped covariance is zero. None for non-private runs.
    pub noise_to_signal: Option<f64>,
    /// Sum of task losses plus lambda times the penalty, at the projected
    /// iterate.
    pub objective: f64,
}

/// Output of the iterative estimators.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Projected iterates, one per iteration.
    pub trajectory: Vec<ModelMatrix>,
    /// The deployed model: the last iterate after its gradient step.
    pub final_w: ModelMatrix,
    /// Present exactly when a private method produced the result.
    pub schedule: Option<PrivacySchedule>,
    pub diagnostics: Vec<IterationDiagnostics>,
}

/// Value of the structure penalty (without the lambda factor).
pub fn penalty_value(penalty: Penalty, w: &DMatrix<f64>) -> f64 {
    match penalty {
        Penalty::Trace => w.clone().svd(false, false).singular_values.iter().sum(),
        Penalty::GroupL1 => w.row_iter().map(|r| r.norm()).sum(),
    }
}

fn check_model_dims(tasks: &TaskCollection, w0: &ModelMatrix) -> Result<()> {
    if w0.n_features() != tasks.n_features() || w0.n_tasks() != tasks.n_tasks() {
        return Err(Error::dims(format!(
            "initial model is {}x{}, tasks need {}x{}",
            w0.n_features(),
            w0.n_tasks(),
            tasks.n_features(),
            tasks.n_tasks()
        )));
    }
    Ok(())
}

fn check_divergence(w: &DMatrix<f64>, iter: usize) -> Result<()> {
    for v in w.iter() {
        if !v.is_finite() || v.abs() > 1e12 {
            return Err(Error::Diverged {
                iter,
                detail: format!("model entry reached {v}"),
            });
        }
    }
    Ok(())
}

/// Step size and the Lipschitz constant backing it (needed again for the
/// strongly convex momentum factor).
fn resolve_step(tasks: &TaskCollection, hp: &HyperParams, loss: Loss) -> Result<(f64, f64)> {
    let needs_lipschitz = hp.step.is_none() || hp.acceleration == Acceleration::StronglyConvex;
    let lip = if needs_lipschitz {
        loss.lipschitz_constant(tasks)?
    } else {
        f64::NAN // unused
    };
    let eta = match hp.step {
        Some(s) => s,
        None => 1.0 / lip,
    };
    Ok((eta, lip))
}

/// The only routine a private iteration runs on pooled information. It
/// receives the clipped model matrix and the iteration budget, never task
/// data: covariance, Wishart perturbation, and projection all happen here.
///
/// Returns the projection and the noise-to-signal ratio
/// log10(||E||_F / ||Sigma_clean||_F).
pub fn centralized_transfer<R: Rng + ?Sized>(
    penalty: Penalty,
    w_clipped: &DMatrix<f64>,
    clip: f64,
    eps_t: f64,
    tau: f64,
    noise: &NoiseSource,
    rng: &mut R,
) -> Result<(ProjectionMatrix, f64)> {
    let d = w_clipped.nrows();
    let sigma_clean = w_clipped * w_clipped.transpose();
    let sigma_clean = 0.5 * (&sigma_clean + sigma_clean.transpose());
    let e = match &noise.0 {
        NoiseInner::Wishart => noise_for_budget(d, clip, eps_t, rng)?.into_matrix(),
        NoiseInner::Zero => DMatrix::zeros(d, d),
        NoiseInner::Fixed(m) => {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::dims(format!(
                    "fixed noise is {}x{}, need {d}x{d}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            m.clone()
        }
    };
    let e_norm = e.norm();
    let s_norm = sigma_clean.norm();
    let noise_to_signal = if e_norm == 0.0 {
        f64::NEG_INFINITY
    } else if s_norm == 0.0 {
        f64::INFINITY
    } else {
        (e_norm / s_norm).log10()
    };
    let sigma = sigma_clean + e;
    let proj = match penalty {
        Penalty::Trace => noisy_projection_lowrank(&sigma, tau)?,
        Penalty::GroupL1 => noisy_projection_groupsparse(&sigma, tau)?,
    };
    Ok((proj, noise_to_signal))
}

/// Momentum extrapolation and gradient step for every task; tasks are
/// independent here and run in parallel with a deterministic merge.
fn per_task_steps(
    tasks: &TaskCollection,
    w_hat: &DMatrix<f64>,
    w_hat_prev: &DMatrix<f64>,
    beta: f64,
    eta: f64,
    loss: Loss,
) -> Result<DMatrix<f64>> {
    let cols = (0..tasks.n_tasks())
        .into_par_iter()
        .map(|i| {
            let task = &tasks.tasks()[i];
            let wh = w_hat.column(i).into_owned();
            let z = if beta == 0.0 {
                wh
            } else {
                (1.0 + beta) * &wh - beta * w_hat_prev.column(i).into_owned()
            };
            let g = loss.gradient(task.x(), &z, task.y())?;
            Ok(z - eta * g)
        })
        .collect::<Result<Vec<DVector<f64>>>>()?;
    Ok(DMatrix::from_columns(&cols))
}

fn objective_value(
    tasks: &TaskCollection,
    w: &DMatrix<f64>,
    loss: Loss,
    lambda: f64,
    penalty: Penalty,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, task) in tasks.tasks().iter().enumerate() {
        total += loss.value(task.x(), &w.column(i).into_owned(), task.y())?;
    }
    Ok(total + lambda * penalty_value(penalty, w))
}

fn fit_mpmtl<R: Rng + ?Sized>(
    penalty: Penalty,
    tasks: &TaskCollection,
    w0: &ModelMatrix,
    hp: &HyperParams,
    sched: &PrivacySchedule,
    loss: Loss,
    noise: &NoiseSource,
    rng: &mut R,
) -> Result<FitResult> {
    hp.validate()?;
    check_model_dims(tasks, w0)?;
    if sched.iters() != hp.iters {
        return Err(Error::invalid(format!(
            "schedule covers {} iterations, hyperparameters ask for {}",
            sched.iters(),
            hp.iters
        )));
    }
    let (eta, lip) = resolve_step(tasks, hp, loss)?;
    let tau = eta * hp.lambda;

    let mut w = w0.matrix().clone();
    let mut w_hat_prev = clip_norm(&w, hp.clip)?;
    let mut trajectory = Vec::with_capacity(hp.iters);
    let mut diagnostics = Vec::with_capacity(hp.iters);

    for t in 1..=hp.iters {
        let eps_t = sched.per_iter()[t - 1];
        let w_tilde = clip_norm(&w, hp.clip)?;
        let (proj, noise_to_signal) =
            centralized_transfer(penalty, &w_tilde, hp.clip, eps_t, tau, noise, rng)?;
        let w_hat = proj.apply(&w_tilde)?;
        let beta = hp.beta(t, lip);
        w = per_task_steps(tasks, &w_hat, &w_hat_prev, beta, eta, loss)?;
        check_divergence(&w, t)?;
        diagnostics.push(IterationDiagnostics {
            iter: t,
            eps_t: Some(eps_t),
            noise_to_signal: Some(noise_to_signal),
            objective: objective_value(tasks, &w_hat, loss, hp.lambda, penalty)?,
        });
        trajectory.push(ModelMatrix::new(w_hat.clone())?);
        w_hat_prev = w_hat;
    }

    Ok(FitResult {
        trajectory,
        final_w: ModelMatrix::new(w)?,
        schedule: Some(sched.clone()),
        diagnostics,
    })
}

/// Private low-rank estimator: Wishart-perturbed covariance, spectral
/// shrinkage projection, per-task accelerated gradient steps.
pub fn fit_mpmtl_lowrank<R: Rng + ?Sized>(
    tasks: &TaskCollection,
    w0: &ModelMatrix,
    hp: &HyperParams,
    sched: &PrivacySchedule,
    loss: Loss,
    noise: &NoiseSource,
    rng: &mut R,
) -> Result<FitResult> {
    fit_mpmtl(Penalty::Trace, tasks, w0, hp, sched, loss, noise, rng)
}

/// Private group-sparse estimator: same loop with the diagonal projection.
pub fn fit_mpmtl_groupsparse<R: Rng + ?Sized>(
    tasks: &TaskCollection,
    w0: &ModelMatrix,
    hp: &HyperParams,
    sched: &PrivacySchedule,
    loss: Loss,
    noise: &NoiseSource,
    rng: &mut R,
) -> Result<FitResult> {
    fit_mpmtl(Penalty::GroupL1, tasks, w0, hp, sched, loss, noise, rng)
}

/// Non-private multi-task baseline: the same prox-then-gradient loop with
/// the exact proximal operator and no clipping or noise.
pub fn fit_nonprivate_mtl(
    tasks: &TaskCollection,
    w0: &ModelMatrix,
    hp: &HyperParams,
    penalty: Penalty,
    loss: Loss,
) -> Result<FitResult> {
    hp.validate()?;
    check_model_dims(tasks, w0)?;
    let (eta, lip) = resolve_step(tasks, hp, loss)?;
    let tau = eta * hp.lambda;

    let mut w = w0.matrix().clone();
    let mut w_hat_prev = w.clone();
    let mut trajectory = Vec::with_capacity(hp.iters);
    let mut diagnostics = Vec::with_capacity(hp.iters);

    for t in 1..=hp.iters {
        let w_hat = match penalty {
            Penalty::Trace => prox_trace_exact(&w, tau)?,
            Penalty::GroupL1 => prox_group_l1_exact(&w, tau)?,
        };
        let beta = hp.beta(t, lip);
        w = per_task_steps(tasks, &w_hat, &w_hat_prev, beta, eta, loss)?;
        check_divergence(&w, t)?;
        diagnostics.push(IterationDiagnostics {
            iter: t,
            eps_t: None,
            noise_to_signal: None,
            objective: objective_value(tasks, &w_hat, loss, hp.lambda, penalty)?,
        });
        trajectory.push(ModelMatrix::new(w_hat.clone())?);
        w_hat_prev = w_hat;
    }

    Ok(FitResult {
        trajectory,
        final_w: ModelMatrix::new(w)?,
        schedule: None,
        diagnostics,
    })
}

const STL_MAX_ITERS: usize = 10_000;
const STL_REL_TOL: f64 = 1e-10;

/// Per-task single-task learning by proximal gradient to convergence.
/// Tasks never interact: each uses its own step size 1/L_i, so the result
/// for a task is bitwise independent of the rest of the collection.
pub fn fit_stl(
    tasks: &TaskCollection,
    reg: StlRegularizer,
    reg_weight: f64,
    loss: Loss,
) -> Result<ModelMatrix> {
    if !(reg_weight.is_finite() && reg_weight >= 0.0) {
        return Err(Error::invalid(format!(
            "regularizer weight must be non-negative, got {reg_weight}"
        )));
    }
    let d = tasks.n_features();
    let cols = tasks
        .tasks()
        .par_iter()
        .map(|task| {
            let factor = match loss.kind {
                LossKind::LeastSquares => 1.0,
                LossKind::Logistic => 0.25,
            };
            let mut lip = factor * spectral_norm_squared(task.x()) + loss.ridge_mu;
            if reg == StlRegularizer::L2 {
                lip += reg_weight;
            }
            if lip == 0.0 {
                return Err(Error::invalid(
                    "task with all-zero data has no usable step size",
                ));
            }
            let eta = 1.0 / lip;
            let mut w = DVector::zeros(d);
            for iter in 1..=STL_MAX_ITERS {
                let mut g = loss.gradient(task.x(), &w, task.y())?;
                if reg == StlRegularizer::L2 {
                    g += reg_weight * &w;
                }
                let mut next = &w - eta * g;
                if reg == StlRegularizer::L1 {
                    let t = eta * reg_weight;
                    next.apply(|v| *v = v.signum() * (v.abs() - t).max(0.0));
                }
                if next.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
                    return Err(Error::Diverged {
                        iter,
                        detail: "single-task iterate exploded".to_string(),
                    });
                }
                let change = (&next - &w).norm();
                w = next;
                if change <= STL_REL_TOL * w.norm().max(1.0) {
                    break;
                }
            }
            Ok(w)
        })
        .collect::<Result<Vec<DVector<f64>>>>()?;
    ModelMatrix::new(DMatrix::from_columns(&cols))
}

/// Averaging baseline: per-task l2-regularized STL models are clipped,
/// averaged, and released under output perturbation with sensitivity
/// 2 clip / m at the instance-level budget converted from (eps, delta).
/// Every task receives the same noisy average.
pub fn fit_dp_aggr<R: Rng + ?Sized>(
    tasks: &TaskCollection,
    eps_mp: f64,
    delta_mp: f64,
    clip: f64,
    l2_weight: f64,
    loss: Loss,
    rng: &mut R,
) -> Result<ModelMatrix> {
    if !(clip.is_finite() && clip > 0.0) {
        return Err(Error::invalid(format!("clip bound must be positive, got {clip}")));
    }
    let eps_ip = if eps_mp == f64::INFINITY {
        f64::INFINITY
    } else {
        let converted = mp_to_ip(eps_mp, delta_mp, tasks.max_samples())?;
        converted.eps
    };
    if eps_ip <= 0.0 {
        return Err(Error::invalid(
            "instance-level budget underflowed to zero after conversion",
        ));
    }

    let stl = fit_stl(tasks, StlRegularizer::L2, l2_weight, loss)?;
    let clipped = clip_norm(stl.matrix(), clip)?;
    let m = tasks.n_tasks() as f64;
    let d = tasks.n_features();
    let mut avg = DVector::zeros(d);
    for col in clipped.column_iter() {
        avg += col;
    }
    avg /= m;

    let sensitivity = 2.0 * clip / m;
    let scale = sensitivity / eps_ip;
    let noise = if scale > 0.0 && scale.is_finite() {
        // Density proportional to exp(-||b|| / scale): Gamma(d, scale)
        // magnitude with a uniform direction.
        let gamma = Gamma::new(d as f64, scale)
            .map_err(|e| Error::invalid(format!("noise magnitude distribution: {e}")))?;
        let r = gamma.sample(rng);
        let mut dir: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        while dir.norm() == 0.0 {
            dir = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        }
        dir /= dir.norm();
        r * dir
    } else {
        DVector::zeros(d)
    };

    let released = &avg + noise;
    let w = DMatrix::from_fn(d, tasks.n_tasks(), |r, _| released[r]);
    ModelMatrix::new(w)
}
