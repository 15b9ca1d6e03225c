//! Task datasets, model matrices, and shared hyperparameters.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the target column of a task means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Regression,
    /// Labels restricted to {-1, +1}.
    Binary,
}

/// One task: a design matrix (rows = samples) and its target vector.
#[derive(Debug, Clone)]
pub struct TaskDataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    target_kind: TargetKind,
}

impl TaskDataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, target_kind: TargetKind) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::invalid("task has no samples or no features"));
        }
        if x.nrows() != y.len() {
            return Err(Error::dims(format!(
                "{} sample rows but {} targets",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        match target_kind {
            TargetKind::Regression => {
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("non-finite target value"));
                }
            }
            TargetKind::Binary => {
                if y.iter().any(|&v| v != 1.0 && v != -1.0) {
                    return Err(Error::invalid("binary targets must be -1 or +1"));
                }
            }
        }
        Ok(TaskDataset { x, y, target_kind })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn target_kind(&self) -> TargetKind {
        self.target_kind
    }

    /// Same task with every sample row rescaled to unit l2 norm.
    pub fn normalized(&self) -> TaskDataset {
        TaskDataset {
            x: normalize_samples(&self.x),
            y: self.y.clone(),
            target_kind: self.target_kind,
        }
    }

    /// Sub-dataset keeping the given sample rows (used for CV folds).
    pub fn select_rows(&self, rows: &[usize]) -> Result<TaskDataset> {
        if rows.is_empty() {
            return Err(Error::invalid("row selection is empty"));
        }
        let x = DMatrix::from_fn(rows.len(), self.x.ncols(), |i, j| self.x[(rows[i], j)]);
        let y = DVector::from_fn(rows.len(), |i, _| self.y[rows[i]]);
        TaskDataset::new(x, y, self.target_kind)
    }
}

/// All tasks of one problem; every task shares the feature dimension.
#[derive(Debug, Clone)]
pub struct TaskCollection {
    tasks: Vec<TaskDataset>,
}

impl TaskCollection {
    pub fn new(tasks: Vec<TaskDataset>) -> Result<Self> {
        let first = tasks
            .first()
            .ok_or_else(|| Error::invalid("task collection is empty"))?;
        let d = first.n_features();
        if let Some((i, t)) = tasks
            .iter()
            .enumerate()
            .find(|(_, t)| t.n_features() != d)
        {
            return Err(Error::dims(format!(
                "task 0 has {} features but task {} has {}",
                d,
                i,
                t.n_features()
            )));
        }
        Ok(TaskCollection { tasks })
    }

    pub fn tasks(&self) -> &[TaskDataset] {
        &self.tasks
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn n_features(&self) -> usize {
        self.tasks[0].n_features()
    }

    /// Largest per-task sample count (the `n` of instance-level conversions).
    pub fn max_samples(&self) -> usize {
        self.tasks.iter().map(|t| t.n_samples()).max().unwrap_or(0)
    }

    /// Loads one CSV file per task. Columns: features then target last.
    pub fn from_csv_files<P: AsRef<Path>>(
        paths: &[P],
        has_header: bool,
        target_kind: TargetKind,
    ) -> Result<Self> {
        let mut tasks = Vec::with_capacity(paths.len());
        for p in paths {
            let file = std::fs::File::open(p.as_ref()).map_err(|e| {
                Error::Io(std::io::Error::new(
                    e.kind(),
                    format!("{}: {e}", p.as_ref().display()),
                ))
            })?;
            tasks.push(parse_task_csv(file, has_header, target_kind)?);
        }
        TaskCollection::new(tasks)
    }
}

/// Parses one task from CSV bytes: every row is `f_0,...,f_{d-1},target`.
///
/// Fails (never panics) on ragged rows, non-numeric fields, or fewer than
/// two columns.
pub fn parse_task_csv<R: Read>(
    reader: R,
    has_header: bool,
    target_kind: TargetKind,
) -> Result<TaskDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(false)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for rec in rdr.records() {
        let rec = rec?;
        let mut row = Vec::with_capacity(rec.len());
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::invalid(format!(
                    "row {}, column {j}: not a number: {field:?}",
                    rows.len() + 1
                ))
            })?;
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::invalid(format!(
                    "row {} has {} columns, expected {w}",
                    rows.len() + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        rows.push(row);
    }
    let width = width.ok_or_else(|| Error::invalid("csv has no data rows"))?;
    if width < 2 {
        return Err(Error::invalid(
            "csv needs at least one feature column and a target column",
        ));
    }
    let d = width - 1;
    let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let y = DVector::from_fn(rows.len(), |i, _| rows[i][d]);
    TaskDataset::new(x, y, target_kind)
}

/// Writes a task in the same CSV layout `parse_task_csv` reads.
pub fn write_task_csv<P: AsRef<Path>>(
    task: &TaskDataset,
    path: P,
    write_header: bool,
) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path.as_ref())?;
    let d = task.n_features();
    if write_header {
        let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
        header.push("target".to_string());
        wtr.write_record(&header)?;
    }
    for i in 0..task.n_samples() {
        let mut record: Vec<String> = (0..d).map(|j| format!("{}", task.x()[(i, j)])).collect();
        record.push(format!("{}", task.y()[i]));
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

/// d x m matrix of per-task model columns; entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMatrix {
    w: DMatrix<f64>,
}

impl ModelMatrix {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if w.ncols() == 0 || w.nrows() == 0 {
            return Err(Error::invalid("model matrix has zero dimension"));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite model entry"));
        }
        Ok(ModelMatrix { w })
    }

    pub fn zeros(n_features: usize, n_tasks: usize) -> Result<Self> {
        ModelMatrix::new(DMatrix::zeros(n_features, n_tasks))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.w
    }

    pub fn n_features(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_tasks(&self) -> usize {
        self.w.ncols()
    }

    pub fn task_model(&self, i: usize) -> DVector<f64> {
        self.w.column(i).into_owned()
    }
}

/// Per-column norm clipping: w_i / max(1, ||w_i|| / k).
pub fn clip_norm(w: &DMatrix<f64>, k: f64) -> Result<DMatrix<f64>> {
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::invalid(format!("clip bound must be positive, got {k}")));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite entry in matrix to clip"));
    }
    let mut out = w.clone();
    for mut col in out.column_iter_mut() {
        let norm = col.norm();
        if norm > k {
            col *= k / norm;
        }
    }
    Ok(out)
}

/// Rescales every row to unit l2 norm; all-zero rows are left unchanged.
pub fn normalize_samples(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}

/// Momentum variant used by the proximal-gradient loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acceleration {
    #[default]
    None,
    /// beta_t = (t-1)/(t+2).
    Convex,
    /// Constant beta from the condition number; requires mu > 0.
    StronglyConvex,
}

/// Shared optimizer knobs for the multi-task estimators.
#[derive(Debug, Clone, Copy)]
pub struct HyperParams {
    /// Per-task norm bound K applied before covariance sharing.
    pub clip: f64,
    /// Step size; `None` selects 1/L from the data.
    pub step: Option<f64>,
    /// Penalty weight (trace norm or group l1).
    pub lambda: f64,
    /// Number of proximal-gradient iterations T.
    pub iters: usize,
    pub acceleration: Acceleration,
    /// Strong-convexity constant (ridge weight added to the loss).
    pub mu: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            clip: 1.0,
            step: None,
            lambda: 0.0,
            iters: 50,
            acceleration: Acceleration::None,
            mu: 0.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip.is_finite() && self.clip > 0.0) {
            return Err(Error::invalid(format!("clip must be positive, got {}", self.clip)));
        }
        if let Some(s) = self.step {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::invalid(format!("step must be positive, got {s}")));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.iters == 0 {
            return Err(Error::invalid("iters must be at least 1"));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::invalid(format!("mu must be non-negative, got {}", self.mu)));
        }
        if self.acceleration == Acceleration::StronglyConvex && self.mu == 0.0 {
            return Err(Error::invalid(
                "strongly_convex acceleration requires mu > 0",
            ));
        }
        Ok(())
    }

    /// Momentum weight for iteration t (1-based); `lipschitz` is the step
    /// Lipschitz constant L of the smooth part.
    pub fn beta(&self, t: usize, lipschitz: f64) -> f64 {
        match self.acceleration {
            Acceleration::None => 0.0,
            Acceleration::Convex => (t as f64 - 1.0) / (t as f64 + 2.0),
            Acceleration::StronglyConvex => {
                let r = (self.mu / lipschitz).sqrt();
                (1.0 - r) / (1.0 + r)
            }
        }
    }
}
