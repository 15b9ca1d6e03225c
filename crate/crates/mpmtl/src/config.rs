//! Run configuration: a TOML document with sections for data, methods,
//! privacy, experiment bookkeeping, and output. Unknown keys are rejected
//! everywhere so a typo cannot silently fall back to a default.

use std::fmt;
use std::path::PathBuf;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::accountant::composition_bound;
use crate::error::{Error, Result};
use crate::losses::Loss;
use crate::model::{Acceleration, TargetKind};
use crate::synthdata::{SyntheticFamily, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    SyntheticLowrank,
    SyntheticGroupsparse,
    Csv,
}

/// Data section. Synthetic kinds take the generator knobs; the csv kind
/// takes one train and one test file per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_tasks: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_per_task: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_features: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support_rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_sd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_multiplier: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_paths: Option<Vec<PathBuf>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_paths: Option<Vec<PathBuf>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub has_header: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_kind: Option<TargetKind>,
}

impl DataConfig {
    /// Generator spec for a synthetic kind, with the section's defaults
    /// filled in.
    pub fn synthetic_spec(&self, seed: u64) -> Result<SyntheticSpec> {
        let family = match self.kind {
            DataKind::SyntheticLowrank => SyntheticFamily::LowRank {
                block_count: self.block_count.unwrap_or(4),
                rho: self.rho.unwrap_or(0.95),
                scale: self.scale.unwrap_or(10.0),
            },
            DataKind::SyntheticGroupsparse => SyntheticFamily::GroupSparse {
                support_rows: self.support_rows.unwrap_or(4),
            },
            DataKind::Csv => {
                return Err(Error::config("csv data has no synthetic generator spec"))
            }
        };
        let spec = SyntheticSpec {
            n_tasks: self.n_tasks.unwrap_or(320),
            train_per_task: self.train_per_task.unwrap_or(30),
            n_features: self.n_features.unwrap_or(30),
            family,
            noise_sd: self.noise_sd.unwrap_or(1.0),
            test_multiplier: self.test_multiplier.unwrap_or(9),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn target_kind(&self) -> TargetKind {
        self.target_kind.unwrap_or(TargetKind::Regression)
    }

    pub fn loss(&self) -> Loss {
        match self.target_kind() {
            TargetKind::Regression => Loss::least_squares(),
            TargetKind::Binary => Loss::logistic(),
        }
    }

    fn validate(&self) -> Result<()> {
        let forbid = |cond: bool, field: &str| -> Result<()> {
            if cond {
                Err(Error::config(format!(
                    "data field `{field}` does not apply to kind {:?}",
                    self.kind
                )))
            } else {
                Ok(())
            }
        };
        match self.kind {
            DataKind::SyntheticLowrank | DataKind::SyntheticGroupsparse => {
                forbid(self.train_paths.is_some(), "train_paths")?;
                forbid(self.test_paths.is_some(), "test_paths")?;
                forbid(self.has_header.is_some(), "has_header")?;
                if self.kind == DataKind::SyntheticLowrank {
                    forbid(self.support_rows.is_some(), "support_rows")?;
                } else {
                    forbid(self.block_count.is_some(), "block_count")?;
                    forbid(self.rho.is_some(), "rho")?;
                    forbid(self.scale.is_some(), "scale")?;
                }
                if self.target_kind() != TargetKind::Regression {
                    return Err(Error::config(
                        "synthetic generators produce regression targets",
                    ));
                }
                self.synthetic_spec(0)?;
                Ok(())
            }
            DataKind::Csv => {
                for f in [
                    ("n_tasks", self.n_tasks.is_some()),
                    ("train_per_task", self.train_per_task.is_some()),
                    ("n_features", self.n_features.is_some()),
                    ("block_count", self.block_count.is_some()),
                    ("support_rows", self.support_rows.is_some()),
                    ("test_multiplier", self.test_multiplier.is_some()),
                ] {
                    forbid(f.1, f.0)?;
                }
                forbid(self.rho.is_some(), "rho")?;
                forbid(self.scale.is_some(), "scale")?;
                forbid(self.noise_sd.is_some(), "noise_sd")?;
                let train = self
                    .train_paths
                    .as_ref()
                    .ok_or_else(|| Error::config("csv data requires train_paths"))?;
                let test = self
                    .test_paths
                    .as_ref()
                    .ok_or_else(|| Error::config("csv data requires test_paths"))?;
                if train.is_empty() {
                    return Err(Error::config("train_paths must list at least one task"));
                }
                if train.len() != test.len() {
                    return Err(Error::config(format!(
                        "{} train files but {} test files; one of each per task",
                        train.len(),
                        test.len()
                    )));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    MpMtlLowrank,
    MpMtlGroupsparse,
    MtlTrace,
    MtlGroupL1,
    Stl,
    StlL1,
    StlL2,
    DpAggr,
}

impl MethodKind {
    pub fn label(&self) -> &'static str {
        match self {
            MethodKind::MpMtlLowrank => "mp_mtl_lowrank",
            MethodKind::MpMtlGroupsparse => "mp_mtl_groupsparse",
            MethodKind::MtlTrace => "mtl_trace",
            MethodKind::MtlGroupL1 => "mtl_group_l1",
            MethodKind::Stl => "stl",
            MethodKind::StlL1 => "stl_l1",
            MethodKind::StlL2 => "stl_l2",
            MethodKind::DpAggr => "dp_aggr",
        }
    }

    /// Methods that spend privacy budget and therefore sweep the eps grid.
    pub fn is_private(&self) -> bool {
        matches!(
            self,
            MethodKind::MpMtlLowrank | MethodKind::MpMtlGroupsparse | MethodKind::DpAggr
        )
    }

    fn is_iterative(&self) -> bool {
        matches!(
            self,
            MethodKind::MpMtlLowrank
                | MethodKind::MpMtlGroupsparse
                | MethodKind::MtlTrace
                | MethodKind::MtlGroupL1
        )
    }
}

const DEFAULT_LAMBDA_GRID: [f64; 8] = [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4];
const DEFAULT_ITERS_GRID: [usize; 3] = [5, 10, 20];

/// One method entry. `lambda` is the single tuning weight of every kind:
/// the structure penalty for the MTL variants, the regularizer weight for
/// stl_l1/stl_l2, and the warm-start l2 weight for dp_aggr. Give either a
/// fixed value or a grid for cross-validation; omitting both selects the
/// default grid where a grid makes sense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: MethodKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters_grid: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceleration: Option<Acceleration>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

impl MethodConfig {
    pub fn new(kind: MethodKind) -> Self {
        MethodConfig {
            kind,
            name: None,
            lambda: None,
            lambda_grid: None,
            iters: None,
            iters_grid: None,
            clip: None,
            step: None,
            acceleration: None,
            mu: None,
        }
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.label().to_string())
    }

    pub fn acceleration(&self) -> Acceleration {
        self.acceleration.unwrap_or(Acceleration::None)
    }

    pub fn clip(&self) -> f64 {
        self.clip.unwrap_or(1.0)
    }

    pub fn mu(&self) -> f64 {
        self.mu.unwrap_or(0.0)
    }

    /// Candidate penalty weights for cross-validation.
    pub fn lambda_candidates(&self) -> Vec<f64> {
        if let Some(v) = self.lambda {
            return vec![v];
        }
        if let Some(g) = &self.lambda_grid {
            return g.clone();
        }
        match self.kind {
            MethodKind::Stl => vec![0.0],
            _ => DEFAULT_LAMBDA_GRID.to_vec(),
        }
    }

    /// Candidate iteration counts for cross-validation; single entry for
    /// the non-iterative baselines.
    pub fn iters_candidates(&self) -> Vec<usize> {
        if !self.kind.is_iterative() {
            return vec![1];
        }
        if let Some(v) = self.iters {
            return vec![v];
        }
        if let Some(g) = &self.iters_grid {
            return g.clone();
        }
        DEFAULT_ITERS_GRID.to_vec()
    }

    fn validate(&self) -> Result<()> {
        let name = self.name();
        let fail = |msg: String| -> Result<()> { Err(Error::config(format!("method {name}: {msg}"))) };
        if self.lambda.is_some() && self.lambda_grid.is_some() {
            return fail("give lambda or lambda_grid, not both".into());
        }
        if self.iters.is_some() && self.iters_grid.is_some() {
            return fail("give iters or iters_grid, not both".into());
        }
        for v in self.lambda_candidates() {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("lambda {v} must be finite and non-negative"));
            }
        }
        if self.lambda_candidates().is_empty() {
            return fail("lambda_grid is empty".into());
        }
        for v in self.iters_candidates() {
            if v == 0 {
                return fail("iteration counts must be at least 1".into());
            }
        }
        if self.iters_candidates().is_empty() {
            return fail("iters_grid is empty".into());
        }
        if let Some(c) = self.clip {
            if !(c.is_finite() && c > 0.0) {
                return fail(format!("clip {c} must be positive"));
            }
        }
        if let Some(s) = self.step {
            if !(s.is_finite() && s > 0.0) {
                return fail(format!("step {s} must be positive"));
            }
        }
        if let Some(m) = self.mu {
            if !(m.is_finite() && m >= 0.0) {
                return fail(format!("mu {m} must be non-negative"));
            }
        }
        if self.acceleration() == Acceleration::StronglyConvex && self.mu() <= 0.0 {
            return fail("strongly_convex acceleration needs mu > 0".into());
        }

        let iterative = self.kind.is_iterative();
        let clip_ok = self.kind.is_private() && self.kind != MethodKind::DpAggr
            || self.kind == MethodKind::DpAggr;
        if self.clip.is_some() && !clip_ok {
            return fail("clip applies only to the private methods".into());
        }
        if !iterative {
            if self.step.is_some() {
                return fail("step applies only to the iterative methods".into());
            }
            if self.acceleration.is_some() || self.mu.is_some() {
                return fail("acceleration applies only to the iterative methods".into());
            }
            if self.iters.is_some() || self.iters_grid.is_some() {
                return fail("iteration counts apply only to the iterative methods".into());
            }
        }
        if self.kind == MethodKind::Stl
            && (self.lambda.is_some() || self.lambda_grid.is_some())
        {
            return fail("plain stl has no penalty weight; use stl_l1 or stl_l2".into());
        }
        Ok(())
    }
}

/// How delta is chosen: `"auto"` applies 1/(m ln m) with m the task
/// count, a number fixes it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaRule {
    Auto,
    Fixed(f64),
}

impl Default for DeltaRule {
    fn default() -> Self {
        DeltaRule::Auto
    }
}

impl Serialize for DeltaRule {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DeltaRule::Auto => s.serialize_str("auto"),
            DeltaRule::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for DeltaRule {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = DeltaRule;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("\"auto\" or a number")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<DeltaRule, E> {
                if v == "auto" {
                    Ok(DeltaRule::Auto)
                } else {
                    Err(E::custom(format!("unknown delta rule {v:?}, expected \"auto\"")))
                }
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<DeltaRule, E> {
                Ok(DeltaRule::Fixed(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<DeltaRule, E> {
                Ok(DeltaRule::Fixed(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<DeltaRule, E> {
                Ok(DeltaRule::Fixed(v as f64))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Uniform,
    #[default]
    Polynomial,
    Geometric,
}

/// Privacy section: the eps sweep and how each total is split across
/// iterations. `alpha = None` under the polynomial family picks the
/// recommended exponent per method (0 without acceleration, 2/5 with).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    pub eps_grid: Vec<f64>,
    #[serde(default)]
    pub delta: DeltaRule,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        PrivacyConfig {
            eps_grid: vec![0.1, 1.0, 10.0],
            delta: DeltaRule::Auto,
            schedule: ScheduleKind::Polynomial,
            alpha: None,
            q: None,
        }
    }
}

impl PrivacyConfig {
    pub fn delta_for(&self, n_tasks: usize) -> Result<f64> {
        match self.delta {
            DeltaRule::Auto => crate::accountant::experiment_delta(n_tasks),
            DeltaRule::Fixed(v) => Ok(v),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.eps_grid.is_empty() {
            return Err(Error::config("eps_grid must not be empty"));
        }
        for &e in &self.eps_grid {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::config(format!("eps {e} must be finite and positive")));
            }
        }
        let mut sorted = self.eps_grid.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("eps_grid has duplicate entries"));
        }
        if let DeltaRule::Fixed(v) = self.delta {
            if !(v.is_finite() && (0.0..1.0).contains(&v)) {
                return Err(Error::config(format!("delta {v} must lie in [0, 1)")));
            }
        }
        match self.schedule {
            ScheduleKind::Uniform => {
                if self.alpha.is_some() || self.q.is_some() {
                    return Err(Error::config("uniform schedule takes neither alpha nor q"));
                }
            }
            ScheduleKind::Polynomial => {
                if self.q.is_some() {
                    return Err(Error::config("polynomial schedule does not take q"));
                }
                if let Some(a) = self.alpha {
                    if !a.is_finite() {
                        return Err(Error::config(format!("alpha {a} must be finite")));
                    }
                }
            }
            ScheduleKind::Geometric => {
                if self.alpha.is_some() {
                    return Err(Error::config("geometric schedule does not take alpha"));
                }
                match self.q {
                    Some(q) if q.is_finite() && q > 0.0 => {}
                    Some(q) => {
                        return Err(Error::config(format!("q {q} must be finite and positive")))
                    }
                    None => return Err(Error::config("geometric schedule requires q")),
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmsePoolingConfig {
    Pooled,
    PerTaskMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub replications: usize,
    pub folds: usize,
    pub master_seed: u64,
    pub nmse_pooling: NmsePoolingConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            replications: 10,
            folds: 5,
            master_seed: 0,
            nmse_pooling: NmsePoolingConfig::Pooled,
        }
    }
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::config("replications must be at least 1"));
        }
        if self.folds < 2 {
            return Err(Error::config("cross-validation needs at least 2 folds"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// Informational echo of a derived per-iteration budget split, written
/// into the resolved-config dump and checked on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEcho {
    pub method: String,
    pub eps: f64,
    pub delta: f64,
    pub per_iter: Vec<f64>,
}

impl ScheduleEcho {
    fn validate(&self) -> Result<()> {
        if self.per_iter.is_empty() {
            return Err(Error::config("schedule echo has no per-iteration entries"));
        }
        if self.per_iter.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
            return Err(Error::config("schedule echo entries must be positive"));
        }
        let bound = composition_bound(&self.per_iter, self.delta)?;
        if bound > self.eps * (1.0 + 1e-6) {
            return Err(Error::config(format!(
                "schedule echo for {} composes to {bound}, exceeding eps {}",
                self.method, self.eps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub privacy: PrivacyConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedules: Vec<ScheduleEcho>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if self.methods.is_empty() {
            return Err(Error::config("at least one method is required"));
        }
        let mut names: Vec<String> = self.methods.iter().map(|m| m.name()).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("method names must be unique"));
        }
        for m in &self.methods {
            m.validate()?;
        }
        self.privacy.validate()?;
        self.experiment.validate()?;
        for s in &self.schedules {
            s.validate()?;
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("serialize: {e}")))
    }
}

/// Parse and validate a configuration document.
pub fn from_toml_str(text: &str) -> Result<RunConfig> {
    let config: RunConfig =
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Command-line values that supersede the file, mirrored into the
/// resolved-config echo.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub eps_grid: Option<Vec<f64>>,
    pub replications: Option<usize>,
    pub master_seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

/// Apply overrides. Any derived-schedule echoes are dropped; they are
/// recomputed from the updated privacy section.
pub fn apply_overrides(config: &mut RunConfig, ov: &Overrides) -> Result<()> {
    if let Some(grid) = &ov.eps_grid {
        config.privacy.eps_grid = grid.clone();
    }
    if let Some(r) = ov.replications {
        config.experiment.replications = r;
    }
    if let Some(s) = ov.master_seed {
        config.experiment.master_seed = s;
    }
    if let Some(dir) = &ov.output_dir {
        config.output.dir = dir.clone();
    }
    config.schedules.clear();
    config.validate()
}
