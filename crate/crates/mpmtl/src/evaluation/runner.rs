//! Experiment driver: sweeps (method, eps, replication) cells, selects
//! hyperparameters by cross-validation on the training folds, fits, and
//! evaluates on held-out test tasks. Every random choice is derived from
//! the master seed and the cell's indices, so results do not depend on
//! scheduling or worker count.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::accountant::{
    preset_polynomial_alpha, schedule_geometric, schedule_polynomial, schedule_uniform,
    PrivacySchedule,
};
use crate::config::{
    DataKind, MethodConfig, MethodKind, NmsePoolingConfig, PrivacyConfig, RunConfig, ScheduleEcho,
    ScheduleKind,
};
use crate::error::{Error, Result};
use crate::estimators::{
    fit_dp_aggr, fit_mpmtl_groupsparse, fit_mpmtl_lowrank, fit_nonprivate_mtl, fit_stl, FitResult,
    NoiseSource, Penalty, StlRegularizer,
};
use crate::evaluation::metrics::{average_auc, nmse_with, NmsePooling};
use crate::evaluation::report::{ExperimentReport, MetricRow};
use crate::losses::Loss;
use crate::model::{Acceleration, HyperParams, ModelMatrix, TargetKind, TaskCollection};
use crate::rng::{derive_seed, purpose, rng_from};
use crate::synthdata::generate;

/// l2 weight of the warm-start single-task fit that seeds the iterative
/// estimators.
const WARM_START_L2: f64 = 0.01;

pub const METRIC_NMSE: &str = "nmse";
pub const METRIC_AAUC: &str = "aauc";
pub const METRIC_NOISE_TO_SIGNAL_MEAN: &str = "noise_to_signal_mean";
pub const METRIC_CV_SCORE: &str = "cv_score";
pub const METRIC_FAILED: &str = "failed";

struct PreparedData {
    train: Arc<TaskCollection>,
    test: Arc<TaskCollection>,
}

/// Per-iteration budget split for one private iterative method at one
/// total budget, following the configured family. Under the polynomial
/// family an omitted alpha picks the recommended exponent for the
/// method's acceleration mode.
pub fn derive_method_schedule(
    privacy: &PrivacyConfig,
    method: &MethodConfig,
    iters: usize,
    eps: f64,
    delta: f64,
) -> Result<PrivacySchedule> {
    match privacy.schedule {
        ScheduleKind::Uniform => schedule_uniform(iters, eps, delta),
        ScheduleKind::Polynomial => {
            let alpha = privacy.alpha.unwrap_or_else(|| {
                preset_polynomial_alpha(method.acceleration() != Acceleration::None)
            });
            schedule_polynomial(iters, alpha, eps, delta)
        }
        ScheduleKind::Geometric => {
            let q = privacy
                .q
                .ok_or_else(|| Error::config("geometric schedule requires q"))?;
            schedule_geometric(iters, q, eps, delta)
        }
    }
}

fn config_n_tasks(config: &RunConfig) -> Result<usize> {
    match config.data.kind {
        DataKind::Csv => Ok(config
            .data
            .train_paths
            .as_ref()
            .map(|p| p.len())
            .unwrap_or(0)),
        _ => Ok(config.data.synthetic_spec(0)?.n_tasks),
    }
}

/// All derived per-iteration schedules implied by a configuration: one
/// per (private iterative method, eps, candidate iteration count).
pub fn schedule_echoes(config: &RunConfig) -> Result<Vec<ScheduleEcho>> {
    let delta = config.privacy.delta_for(config_n_tasks(config)?)?;
    let mut out = Vec::new();
    for m in &config.methods {
        if !matches!(m.kind, MethodKind::MpMtlLowrank | MethodKind::MpMtlGroupsparse) {
            continue;
        }
        for &eps in &config.privacy.eps_grid {
            for iters in m.iters_candidates() {
                let sched = derive_method_schedule(&config.privacy, m, iters, eps, delta)?;
                out.push(ScheduleEcho {
                    method: m.name(),
                    eps,
                    delta,
                    per_iter: sched.per_iter().to_vec(),
                });
            }
        }
    }
    Ok(out)
}

/// Per-task sample indices for each fold: a seeded shuffle dealt
/// round-robin, so fold sizes differ by at most one.
fn fold_splits(
    tasks: &TaskCollection,
    folds: usize,
    master: u64,
    replication: u64,
) -> Vec<Vec<Vec<usize>>> {
    (0..tasks.n_tasks())
        .map(|i| {
            let n = tasks.tasks()[i].n_samples();
            let mut idx: Vec<usize> = (0..n).collect();
            let mut rng = rng_from(master, &[purpose::FOLDS, replication, i as u64]);
            idx.shuffle(&mut rng);
            let mut split = vec![Vec::new(); folds];
            for (pos, sample) in idx.into_iter().enumerate() {
                split[pos % folds].push(sample);
            }
            split
        })
        .collect()
}

fn split_train_validation(
    tasks: &TaskCollection,
    splits: &[Vec<Vec<usize>>],
    fold: usize,
) -> Result<(TaskCollection, Vec<Vec<usize>>)> {
    let mut train_tasks = Vec::with_capacity(tasks.n_tasks());
    let mut val_rows = Vec::with_capacity(tasks.n_tasks());
    for (i, task) in tasks.tasks().iter().enumerate() {
        let held: Vec<usize> = splits[i][fold].clone();
        let keep: Vec<usize> = (0..task.n_samples()).filter(|s| !held.contains(s)).collect();
        if keep.is_empty() {
            return Err(Error::config(format!(
                "cross-validation fold {fold} leaves task {i} without training samples"
            )));
        }
        train_tasks.push(task.select_rows(&keep)?);
        val_rows.push(held);
    }
    Ok((TaskCollection::new(train_tasks)?, val_rows))
}

fn predictions(tasks: &TaskCollection, w: &ModelMatrix) -> Vec<DVector<f64>> {
    tasks
        .tasks()
        .iter()
        .enumerate()
        .map(|(i, t)| t.x() * w.task_model(i))
        .collect()
}

fn targets(tasks: &TaskCollection) -> Vec<DVector<f64>> {
    tasks.tasks().iter().map(|t| t.y().clone()).collect()
}

/// Lower-is-better validation score on the held-out rows: nMSE for
/// regression, 1 - aAUC for binary targets. Degenerate folds (no target
/// variance, all single-class) poison the candidate with +inf rather
/// than aborting the run.
fn validation_score(
    target_kind: TargetKind,
    pooling: NmsePooling,
    preds: &[DVector<f64>],
    targs: &[DVector<f64>],
) -> f64 {
    let score = match target_kind {
        TargetKind::Regression => nmse_with(pooling, preds, targs),
        TargetKind::Binary => average_auc(preds, targs).map(|a| 1.0 - a),
    };
    score.unwrap_or(f64::INFINITY)
}

struct CellContext<'a> {
    config: &'a RunConfig,
    loss: Loss,
    pooling: NmsePooling,
    delta: f64,
    method_index: usize,
    eps_index: Option<usize>,
    replication: usize,
}

impl CellContext<'_> {
    fn method(&self) -> &MethodConfig {
        &self.config.methods[self.method_index]
    }

    fn eps(&self) -> f64 {
        match self.eps_index {
            Some(i) => self.config.privacy.eps_grid[i],
            None => f64::INFINITY,
        }
    }

    fn row_delta(&self) -> f64 {
        if self.method().kind.is_private() {
            self.delta
        } else {
            0.0
        }
    }

    fn fit_seed(&self, extra: &[u64]) -> u64 {
        let mut words = vec![
            purpose::FIT,
            self.method_index as u64,
            self.eps_index.map(|i| i as u64).unwrap_or(u64::MAX),
            self.replication as u64,
        ];
        words.extend_from_slice(extra);
        derive_seed(self.config.experiment.master_seed, &words)
    }

    fn row(&self, metric: &str, value: f64, runtime_s: f64) -> MetricRow {
        MetricRow {
            method: self.method().name(),
            eps: self.eps(),
            delta: self.row_delta(),
            seed: self.config.experiment.master_seed,
            replication: self.replication,
            metric: metric.to_string(),
            value,
            runtime_s,
        }
    }
}

/// Fit one method with fixed hyperparameters. Returns the model and the
/// iteration diagnostics when the method records them.
fn fit_method(
    ctx: &CellContext,
    tasks: &TaskCollection,
    lambda: f64,
    iters: usize,
    seed: u64,
) -> Result<(ModelMatrix, Option<FitResult>)> {
    let method = ctx.method();
    let loss = ctx.loss;
    match method.kind {
        MethodKind::MpMtlLowrank | MethodKind::MpMtlGroupsparse => {
            let w0 = fit_stl(tasks, StlRegularizer::L2, WARM_START_L2, loss)?;
            let hp = HyperParams {
                clip: method.clip(),
                step: method.step,
                lambda,
                iters,
                acceleration: method.acceleration(),
                mu: method.mu(),
            };
            let sched =
                derive_method_schedule(&ctx.config.privacy, method, iters, ctx.eps(), ctx.delta)?;
            let mut rng = rng_from(seed, &[]);
            let noise = NoiseSource::wishart();
            let fit = if method.kind == MethodKind::MpMtlLowrank {
                fit_mpmtl_lowrank(tasks, &w0, &hp, &sched, loss, &noise, &mut rng)?
            } else {
                fit_mpmtl_groupsparse(tasks, &w0, &hp, &sched, loss, &noise, &mut rng)?
            };
            Ok((fit.final_w.clone(), Some(fit)))
        }
        MethodKind::MtlTrace | MethodKind::MtlGroupL1 => {
            let w0 = fit_stl(tasks, StlRegularizer::L2, WARM_START_L2, loss)?;
            let hp = HyperParams {
                clip: 1.0,
                step: method.step,
                lambda,
                iters,
                acceleration: method.acceleration(),
                mu: method.mu(),
            };
            let penalty = if method.kind == MethodKind::MtlTrace {
                Penalty::Trace
            } else {
                Penalty::GroupL1
            };
            let fit = fit_nonprivate_mtl(tasks, &w0, &hp, penalty, loss)?;
            Ok((fit.final_w.clone(), Some(fit)))
        }
        MethodKind::Stl => Ok((fit_stl(tasks, StlRegularizer::None, 0.0, loss)?, None)),
        MethodKind::StlL1 => Ok((fit_stl(tasks, StlRegularizer::L1, lambda, loss)?, None)),
        MethodKind::StlL2 => Ok((fit_stl(tasks, StlRegularizer::L2, lambda, loss)?, None)),
        MethodKind::DpAggr => {
            let mut rng = rng_from(seed, &[]);
            let w = fit_dp_aggr(
                tasks,
                ctx.eps(),
                ctx.delta,
                method.clip(),
                lambda,
                loss,
                &mut rng,
            )?;
            Ok((w, None))
        }
    }
}

fn run_cell(ctx: &CellContext, data: &PreparedData) -> Result<Vec<MetricRow>> {
    let method = ctx.method();
    let target_kind = ctx.config.data.target_kind();
    let mut candidates = Vec::new();
    for &lambda in &method.lambda_candidates() {
        for &iters in &method.iters_candidates() {
            candidates.push((lambda, iters));
        }
    }

    // Cross-validate only when there is a choice to make.
    let mut cv_score = None;
    let mut best = candidates[0];
    if candidates.len() > 1 {
        let splits = fold_splits(
            &data.train,
            ctx.config.experiment.folds,
            ctx.config.experiment.master_seed,
            ctx.replication as u64,
        );
        let mut fold_sets = Vec::new();
        for fold in 0..ctx.config.experiment.folds {
            let (train, val_rows) = split_train_validation(&data.train, &splits, fold)?;
            fold_sets.push((train, val_rows));
        }
        let mut best_score = f64::INFINITY;
        for (ci, &(lambda, iters)) in candidates.iter().enumerate() {
            let mut total = 0.0;
            for (fold, (train, val_rows)) in fold_sets.iter().enumerate() {
                let seed = ctx.fit_seed(&[ci as u64, fold as u64]);
                let score = match fit_method(ctx, train, lambda, iters, seed) {
                    Ok((w, _)) => {
                        let mut preds = Vec::with_capacity(data.train.n_tasks());
                        let mut targs = Vec::with_capacity(data.train.n_tasks());
                        for (i, task) in data.train.tasks().iter().enumerate() {
                            if val_rows[i].is_empty() {
                                continue;
                            }
                            let val = task.select_rows(&val_rows[i])?;
                            preds.push(val.x() * w.task_model(i));
                            targs.push(val.y().clone());
                        }
                        if preds.is_empty() {
                            f64::INFINITY
                        } else {
                            validation_score(target_kind, ctx.pooling, &preds, &targs)
                        }
                    }
                    Err(Error::Diverged { .. }) => f64::INFINITY,
                    Err(e) => return Err(e),
                };
                total += score;
            }
            let mean = total / ctx.config.experiment.folds as f64;
            if mean < best_score {
                best_score = mean;
                best = (lambda, iters);
            }
        }
        cv_score = Some(best_score);
    }

    let (lambda, iters) = best;
    let seed = ctx.fit_seed(&[]);
    let started = Instant::now();
    let fitted = fit_method(ctx, &data.train, lambda, iters, seed);
    let runtime = started.elapsed().as_secs_f64();

    let mut rows = Vec::new();
    match fitted {
        Ok((w, fit)) => {
            let preds = predictions(&data.test, &w);
            let targs = targets(&data.test);
            match target_kind {
                TargetKind::Regression => {
                    let value = nmse_with(ctx.pooling, &preds, &targs)?;
                    rows.push(ctx.row(METRIC_NMSE, value, runtime));
                }
                TargetKind::Binary => {
                    let value = average_auc(&preds, &targs)?;
                    rows.push(ctx.row(METRIC_AAUC, value, runtime));
                }
            }
            if let Some(fit) = &fit {
                if method.kind.is_private() {
                    let ratios: Vec<f64> = fit
                        .diagnostics
                        .iter()
                        .filter_map(|d| d.noise_to_signal)
                        .collect();
                    if !ratios.is_empty() {
                        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
                        rows.push(ctx.row(METRIC_NOISE_TO_SIGNAL_MEAN, mean, runtime));
                    }
                }
            }
            if let Some(score) = cv_score {
                rows.push(ctx.row(METRIC_CV_SCORE, score, runtime));
            }
            rows.push(ctx.row(METRIC_FAILED, 0.0, runtime));
        }
        Err(Error::Diverged { .. }) => {
            let metric = match target_kind {
                TargetKind::Regression => METRIC_NMSE,
                TargetKind::Binary => METRIC_AAUC,
            };
            rows.push(ctx.row(metric, f64::NAN, runtime));
            if method.kind.is_private()
                && matches!(
                    method.kind,
                    MethodKind::MpMtlLowrank | MethodKind::MpMtlGroupsparse
                )
            {
                rows.push(ctx.row(METRIC_NOISE_TO_SIGNAL_MEAN, f64::NAN, runtime));
            }
            if let Some(score) = cv_score {
                rows.push(ctx.row(METRIC_CV_SCORE, score, runtime));
            }
            rows.push(ctx.row(METRIC_FAILED, 1.0, runtime));
        }
        Err(e) => return Err(e),
    }
    Ok(rows)
}

/// Execute the configured sweep. `workers` bounds rayon's parallelism
/// for this run; `None` uses the default. Output is independent of the
/// worker count.
pub fn run_experiment(config: &RunConfig, workers: Option<usize>) -> Result<ExperimentReport> {
    config.validate()?;
    let loss = config.data.loss();
    let pooling = match config.experiment.nmse_pooling {
        NmsePoolingConfig::Pooled => NmsePooling::Pooled,
        NmsePoolingConfig::PerTaskMean => NmsePooling::PerTaskMean,
    };
    let master = config.experiment.master_seed;
    let reps = config.experiment.replications;

    let datasets: Vec<PreparedData> = match config.data.kind {
        DataKind::Csv => {
            let train_paths = config.data.train_paths.as_ref().expect("validated");
            let test_paths = config.data.test_paths.as_ref().expect("validated");
            let has_header = config.data.has_header.unwrap_or(true);
            let kind = config.data.target_kind();
            let train = Arc::new(TaskCollection::from_csv_files(train_paths, has_header, kind)?);
            let test = Arc::new(TaskCollection::from_csv_files(test_paths, has_header, kind)?);
            if train.n_features() != test.n_features() {
                return Err(Error::dims(format!(
                    "train has {} features, test has {}",
                    train.n_features(),
                    test.n_features()
                )));
            }
            (0..reps)
                .map(|_| PreparedData {
                    train: Arc::clone(&train),
                    test: Arc::clone(&test),
                })
                .collect()
        }
        _ => (0..reps)
            .map(|r| {
                let seed = derive_seed(master, &[purpose::DATA, r as u64]);
                let spec = config.data.synthetic_spec(seed)?;
                let generated = generate(&spec)?;
                Ok(PreparedData {
                    train: Arc::new(generated.train),
                    test: Arc::new(generated.test),
                })
            })
            .collect::<Result<_>>()?,
    };

    let delta = config.privacy.delta_for(datasets[0].train.n_tasks())?;

    let mut cells = Vec::new();
    for mi in 0..config.methods.len() {
        let eps_indices: Vec<Option<usize>> = if config.methods[mi].kind.is_private() {
            (0..config.privacy.eps_grid.len()).map(Some).collect()
        } else {
            vec![None]
        };
        for ei in eps_indices {
            for r in 0..reps {
                cells.push((mi, ei, r));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let nested: Vec<Vec<MetricRow>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(mi, ei, r)| {
                let ctx = CellContext {
                    config,
                    loss,
                    pooling,
                    delta,
                    method_index: mi,
                    eps_index: ei,
                    replication: r,
                };
                run_cell(&ctx, &datasets[r])
            })
            .collect::<Result<_>>()
    })?;

    Ok(ExperimentReport::new(nested.into_iter().flatten().collect()))
}
