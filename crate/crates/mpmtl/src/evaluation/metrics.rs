//! Evaluation metrics over per-task prediction and target vectors.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// How nMSE aggregates across tasks. `Pooled` (the reported convention)
/// treats all test samples as one pool; `PerTaskMean` normalizes each
/// task by its own target variance, then averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NmsePooling {
    #[default]
    Pooled,
    PerTaskMean,
}

fn check_pairs(predictions: &[DVector<f64>], targets: &[DVector<f64>]) -> Result<()> {
    if predictions.len() != targets.len() {
        return Err(Error::dims(format!(
            "{} prediction vectors vs {} target vectors",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("no tasks to evaluate"));
    }
    for (i, (p, t)) in predictions.iter().zip(targets).enumerate() {
        if p.len() != t.len() {
            return Err(Error::dims(format!(
                "task {i}: {} predictions vs {} targets",
                p.len(),
                t.len()
            )));
        }
        if p.len() == 0 {
            return Err(Error::invalid(format!("task {i} has no samples")));
        }
        if p.iter().chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("task {i} has non-finite values")));
        }
    }
    Ok(())
}

/// Mean of all target values pooled across tasks, in task order. Exposed
/// so a mean predictor built from it reproduces nMSE = 1 exactly.
pub fn pooled_target_mean(targets: &[DVector<f64>]) -> Result<f64> {
    let n: usize = targets.iter().map(|t| t.len()).sum();
    if n == 0 {
        return Err(Error::invalid("no target samples"));
    }
    let mut sum = 0.0;
    for t in targets {
        for &v in t.iter() {
            sum += v;
        }
    }
    Ok(sum / n as f64)
}

/// Pooled normalized mean squared error: squared error summed over every
/// test sample of every task, divided by the pooled population variance
/// of the targets.
pub fn nmse(predictions: &[DVector<f64>], targets: &[DVector<f64>]) -> Result<f64> {
    nmse_with(NmsePooling::Pooled, predictions, targets)
}

pub fn nmse_with(
    pooling: NmsePooling,
    predictions: &[DVector<f64>],
    targets: &[DVector<f64>],
) -> Result<f64> {
    check_pairs(predictions, targets)?;
    match pooling {
        NmsePooling::Pooled => {
            let mean = pooled_target_mean(targets)?;
            let mut sse = 0.0;
            let mut var_sum = 0.0;
            for (p, t) in predictions.iter().zip(targets) {
                for (pv, tv) in p.iter().zip(t.iter()) {
                    sse += (pv - tv) * (pv - tv);
                    var_sum += (mean - tv) * (mean - tv);
                }
            }
            if var_sum == 0.0 {
                return Err(Error::invalid("pooled target variance is zero"));
            }
            Ok(sse / var_sum)
        }
        NmsePooling::PerTaskMean => {
            let mut total = 0.0;
            for (i, (p, t)) in predictions.iter().zip(targets).enumerate() {
                let mean = t.iter().sum::<f64>() / t.len() as f64;
                let mut sse = 0.0;
                let mut var_sum = 0.0;
                for (pv, tv) in p.iter().zip(t.iter()) {
                    sse += (pv - tv) * (pv - tv);
                    var_sum += (mean - tv) * (mean - tv);
                }
                if var_sum == 0.0 {
                    return Err(Error::invalid(format!("task {i} target variance is zero")));
                }
                total += sse / var_sum;
            }
            Ok(total / predictions.len() as f64)
        }
    }
}

/// Unweighted task mean of the Mann–Whitney AUC (ties counted one half).
/// Tasks with a single label class are excluded with a warning; if every
/// task is single-class the metric is undefined.
pub fn average_auc(scores: &[DVector<f64>], labels: &[DVector<f64>]) -> Result<f64> {
    check_pairs(scores, labels)?;
    let mut total = 0.0;
    let mut used = 0usize;
    for (i, (s, l)) in scores.iter().zip(labels).enumerate() {
        if l.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::invalid(format!("task {i} has labels outside {{-1, +1}}")));
        }
        let pos: Vec<f64> = s
            .iter()
            .zip(l.iter())
            .filter(|(_, &lab)| lab == 1.0)
            .map(|(&sc, _)| sc)
            .collect();
        let neg: Vec<f64> = s
            .iter()
            .zip(l.iter())
            .filter(|(_, &lab)| lab == -1.0)
            .map(|(&sc, _)| sc)
            .collect();
        if pos.is_empty() || neg.is_empty() {
            warn!("task {i} has a single label class; excluded from average AUC");
            continue;
        }
        // Twice the pair contributions stays integral, keeping the
        // per-task ratio exact.
        let mut twice_wins = 0u64;
        for &p in &pos {
            for &n in &neg {
                if p > n {
                    twice_wins += 2;
                } else if p == n {
                    twice_wins += 1;
                }
            }
        }
        let pairs = (pos.len() * neg.len()) as f64;
        total += twice_wins as f64 / (2.0 * pairs);
        used += 1;
    }
    if used == 0 {
        return Err(Error::invalid("every task is single-class; AUC undefined"));
    }
    Ok(total / used as f64)
}

/// log10 of ||E||_F / ||Sigma_clean||_F. A zero noise matrix yields the
/// -inf sentinel; a zero signal matrix is an error.
pub fn noise_to_signal(e: &DMatrix<f64>, sigma_clean: &DMatrix<f64>) -> Result<f64> {
    if e.shape() != sigma_clean.shape() {
        return Err(Error::dims(format!(
            "noise is {:?}, signal is {:?}",
            e.shape(),
            sigma_clean.shape()
        )));
    }
    let s = sigma_clean.norm();
    if s == 0.0 {
        return Err(Error::invalid("clean covariance is zero; ratio undefined"));
    }
    let n = e.norm();
    if n == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok((n / s).log10())
}
