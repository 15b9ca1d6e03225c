//! Privacy-budget accounting for iterative releases.
//!
//! The total privacy cost of a sequence of per-iteration budgets eps_t is
//! the minimum of three composition bounds (basic summation and two
//! advanced-composition variants). Schedules allocate a total budget across
//! iterations along polynomial or geometric weight curves, choosing the
//! largest scale whose composed cost stays within the total.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How per-iteration budgets grow over iterations t = 1..T.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScheduleFamily {
    /// Equal budget every iteration.
    Uniform,
    /// eps_t proportional to t^alpha.
    Polynomial { alpha: f64 },
    /// eps_t proportional to q^(-t).
    Geometric { q: f64 },
}

/// A fully resolved allocation of (total_eps, total_delta) over T iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySchedule {
    family: ScheduleFamily,
    total_eps: f64,
    total_delta: f64,
    per_iter: Vec<f64>,
}

impl PrivacySchedule {
    pub fn family(&self) -> ScheduleFamily {
        self.family
    }

    pub fn total_eps(&self) -> f64 {
        self.total_eps
    }

    pub fn total_delta(&self) -> f64 {
        self.total_delta
    }

    pub fn iters(&self) -> usize {
        self.per_iter.len()
    }

    pub fn per_iter(&self) -> &[f64] {
        &self.per_iter
    }

    /// Re-checks the schedule invariants: positive budgets, composed cost
    /// within the total, and per-iteration ratios matching the family.
    pub fn validate(&self) -> Result<()> {
        if self.per_iter.is_empty() {
            return Err(Error::invalid("schedule has no iterations"));
        }
        if self.per_iter.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
            return Err(Error::invalid("schedule has a non-positive budget entry"));
        }
        let cb = composition_bound(&self.per_iter, self.total_delta)?;
        if cb > self.total_eps * (1.0 + 1e-9) {
            return Err(Error::invalid(format!(
                "composed cost {cb} exceeds total budget {}",
                self.total_eps
            )));
        }
        let t_max = self.per_iter.len();
        match self.family {
            ScheduleFamily::Uniform => {
                for (t, &e) in self.per_iter.iter().enumerate() {
                    if !close(e, self.per_iter[0]) {
                        return Err(Error::invalid(format!(
                            "uniform schedule has unequal entry at t={}",
                            t + 1
                        )));
                    }
                }
            }
            ScheduleFamily::Polynomial { alpha } => {
                for t in 1..t_max {
                    let expected = self.per_iter[0] * ((t + 1) as f64).powf(alpha);
                    if !close(self.per_iter[t], expected) {
                        return Err(Error::invalid(format!(
                            "polynomial schedule ratio off at t={}",
                            t + 1
                        )));
                    }
                }
            }
            ScheduleFamily::Geometric { q } => {
                for t in 1..t_max {
                    let expected = self.per_iter[t - 1] / q;
                    if !close(self.per_iter[t], expected) {
                        return Err(Error::invalid(format!(
                            "geometric schedule ratio off at t={}",
                            t + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta.is_finite() && (0.0..1.0).contains(&delta)) {
        return Err(Error::invalid(format!("delta must be in [0, 1), got {delta}")));
    }
    Ok(())
}

/// Total (eps, delta)-cost of composing the given per-iteration budgets:
/// the minimum of the basic sum and two advanced-composition bounds.
pub fn composition_bound(eps_seq: &[f64], delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if eps_seq.iter().any(|&e| !(e.is_finite() && e >= 0.0)) {
        return Err(Error::invalid("per-iteration budgets must be finite and non-negative"));
    }
    let sum: f64 = eps_seq.iter().sum();
    if delta == 0.0 {
        return Ok(sum);
    }
    // (e^x - 1)/(e^x + 1) = tanh(x/2), which never overflows.
    let s1: f64 = eps_seq.iter().map(|&e| e * (e / 2.0).tanh()).sum();
    let s2: f64 = eps_seq.iter().map(|&e| e * e).sum();
    let b = s1 + (2.0 * (1.0 / delta).ln() * s2).sqrt();
    let c = s1 + (2.0 * s2 * (std::f64::consts::E + s2.sqrt() / delta).ln()).sqrt();
    Ok(sum.min(b).min(c))
}

/// eps_t proportional to t^alpha; alpha = 0 is the uniform schedule.
pub fn schedule_polynomial(iters: usize, alpha: f64, eps: f64, delta: f64) -> Result<PrivacySchedule> {
    if !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be finite, got {alpha}")));
    }
    let weights = weight_curve(iters, |t| (t as f64).powf(alpha))?;
    build_schedule(ScheduleFamily::Polynomial { alpha }, weights, eps, delta)
}

/// eps_t proportional to q^(-t); q < 1 grows the budget over iterations.
pub fn schedule_geometric(iters: usize, q: f64, eps: f64, delta: f64) -> Result<PrivacySchedule> {
    if !(q.is_finite() && q > 0.0) {
        return Err(Error::invalid(format!("q must be positive, got {q}")));
    }
    let weights = weight_curve(iters, |t| q.powi(-(t as i32)))?;
    build_schedule(ScheduleFamily::Geometric { q }, weights, eps, delta)
}

/// Equal budget each iteration.
pub fn schedule_uniform(iters: usize, eps: f64, delta: f64) -> Result<PrivacySchedule> {
    let weights = weight_curve(iters, |_| 1.0)?;
    build_schedule(ScheduleFamily::Uniform, weights, eps, delta)
}

fn weight_curve(iters: usize, f: impl Fn(usize) -> f64) -> Result<Vec<f64>> {
    if iters == 0 {
        return Err(Error::invalid("schedule needs at least one iteration"));
    }
    let w: Vec<f64> = (1..=iters).map(f).collect();
    if w.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(Error::invalid(
            "schedule weights overflow or vanish for these parameters",
        ));
    }
    Ok(w)
}

/// Adjusts per[i] until the left-to-right sum equals eps exactly. The sum is
/// monotone in per[i] but moves in rounding-quantized jumps, and entries after
/// i re-round, so the jumps can step over eps; a direction flip during the ulp
/// walk detects that, restores the entry, and reports failure so the caller
/// can try another position.
fn absorb_at(per: &mut [f64], i: usize, eps: f64) -> bool {
    let saved = per[i];
    for _ in 0..8 {
        let total: f64 = per.iter().sum();
        if total == eps {
            return true;
        }
        per[i] += eps - total;
    }
    let mut dir = 0i8;
    let mut flips = 0u8;
    for _ in 0..200_000 {
        let total: f64 = per.iter().sum();
        if total == eps {
            return true;
        }
        let d = if total < eps { 1 } else { -1 };
        if dir != 0 && d != dir {
            flips += 1;
            if flips >= 2 {
                break;
            }
        }
        dir = d;
        per[i] = if d > 0 { per[i].next_up() } else { per[i].next_down() };
    }
    per[i] = saved;
    false
}

fn build_schedule(
    family: ScheduleFamily,
    weights: Vec<f64>,
    eps: f64,
    delta: f64,
) -> Result<PrivacySchedule> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::invalid(format!("total eps must be positive, got {eps}")));
    }
    check_delta(delta)?;
    let wsum: f64 = weights.iter().sum();
    if !wsum.is_finite() {
        return Err(Error::invalid("schedule weights overflow"));
    }

    let per_iter = if delta == 0.0 {
        // Composition is the plain sum, so the scale is closed-form. Rounding
        // still leaves the float fold a few ulps short of eps. The correction
        // goes into the latest entry large enough to hide it: for strongly
        // decaying schedules the tail entries sit below one ulp of eps, where
        // any correction would break the family ratio test.
        let scale = eps / wsum;
        let mut per: Vec<f64> = weights.iter().map(|w| w * scale).collect();
        let drift = (eps - per.iter().sum::<f64>()).abs();
        let thresh = 7e9 * drift;
        let mut exact = drift == 0.0;
        if !exact {
            for i in (0..per.len()).rev() {
                if per[i] >= thresh && absorb_at(&mut per, i, eps) {
                    exact = true;
                    break;
                }
            }
        }
        if !exact {
            return Err(Error::invalid("schedule could not be made to sum exactly"));
        }
        if per.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
            return Err(Error::invalid("schedule rounding produced a non-positive budget"));
        }
        per
    } else {
        // The composed cost is strictly increasing in the scale, so bisect
        // for the largest scale whose cost stays within eps.
        let cost = |s: f64| -> Option<f64> {
            let cand: Vec<f64> = weights.iter().map(|w| w * s).collect();
            if cand.iter().any(|v| !v.is_finite()) {
                return None; // treat overflow as cost beyond eps
            }
            composition_bound(&cand, delta).ok()
        };
        // lo only ever takes values whose cost was checked, so the final
        // schedule is feasible by construction.
        let mut lo = 0.0f64;
        let mut hi = eps / wsum;
        let mut doublings = 0;
        while matches!(cost(hi), Some(c) if c <= eps) {
            lo = hi;
            hi *= 2.0;
            doublings += 1;
            if doublings > 200 {
                return Err(Error::invalid("budget scale search failed to bracket"));
            }
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            match cost(mid) {
                Some(c) if c <= eps => lo = mid,
                _ => hi = mid,
            }
        }
        if lo == 0.0 {
            return Err(Error::invalid("budget scale search collapsed to zero"));
        }
        let per: Vec<f64> = weights.iter().map(|w| w * lo).collect();
        let achieved = composition_bound(&per, delta)?;
        if achieved > eps || achieved < eps * (1.0 - 1e-6) {
            return Err(Error::invalid(format!(
                "schedule search achieved {achieved}, wanted {eps}"
            )));
        }
        per
    };

    Ok(PrivacySchedule { family, total_eps: eps, total_delta: delta, per_iter })
}

/// Exponent preset for the polynomial schedule.
pub fn preset_polynomial_alpha(accelerated: bool) -> f64 {
    if accelerated {
        0.4
    } else {
        0.0
    }
}

/// Ratio preset for the geometric schedule, from the condition number.
pub fn preset_geometric_q(accelerated: bool, mu: f64, lipschitz: f64) -> Result<f64> {
    if !(mu.is_finite() && lipschitz.is_finite() && mu > 0.0 && mu < lipschitz) {
        return Err(Error::invalid(format!(
            "geometric preset needs 0 < mu < L, got mu={mu}, L={lipschitz}"
        )));
    }
    let ratio = mu / lipschitz;
    Ok(if accelerated {
        (1.0 - ratio.sqrt()).powf(0.2)
    } else {
        (1.0 - ratio).powf(0.4)
    })
}

/// Default experiment delta, 1 / (m ln m) for m tasks.
pub fn experiment_delta(n_tasks: usize) -> Result<f64> {
    if n_tasks < 2 {
        return Err(Error::invalid("experiment delta needs at least two tasks"));
    }
    let m = n_tasks as f64;
    Ok(1.0 / (m * m.ln()))
}

/// A converted budget, with a flag set when the delta computation
/// overflowed and was saturated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvertedBudget {
    pub eps: f64,
    pub delta: f64,
    pub saturated: bool,
}

/// Instance-level (eps, delta) to model-level: (n eps, n e^(n eps) delta)
/// where n is the largest per-task sample count.
pub fn ip_to_mp(eps: f64, delta: f64, n_samples: usize) -> Result<ConvertedBudget> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    check_delta(delta)?;
    if n_samples == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let n = n_samples as f64;
    let eps_mp = n * eps;
    if delta == 0.0 {
        return Ok(ConvertedBudget { eps: eps_mp, delta: 0.0, saturated: false });
    }
    let delta_mp = n * eps_mp.exp() * delta;
    if delta_mp.is_finite() {
        Ok(ConvertedBudget { eps: eps_mp, delta: delta_mp, saturated: false })
    } else {
        log::warn!("instance-to-model delta overflowed at n={n_samples}, eps={eps}; saturating");
        Ok(ConvertedBudget { eps: eps_mp, delta: f64::MAX, saturated: true })
    }
}

/// Model-level (eps, delta) back to instance-level: (eps/n, delta/(n e^eps)).
pub fn mp_to_ip(eps: f64, delta: f64, n_samples: usize) -> Result<ConvertedBudget> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::invalid(format!("delta must be non-negative, got {delta}")));
    }
    if n_samples == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let n = n_samples as f64;
    let scale = n * eps.exp();
    let (delta_ip, saturated) = if scale.is_finite() {
        (delta / scale, false)
    } else {
        (0.0, true)
    };
    Ok(ConvertedBudget { eps: eps / n, delta: delta_ip, saturated })
}
