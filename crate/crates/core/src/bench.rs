//! Experiment orchestration: three-way split, ball preflight, grid search by
//! stratified k-fold cross-validation, refit on the full training slice, test
//! evaluation and report files.
//!
//! Test rows are set aside right after the split and only touched by the
//! final evaluation. Universum rows come from their own slice (or from
//! averaged training balls) and are rebuilt inside every fold.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{
    accuracy, flip_labels, kfold_stratified, load_csv, split_indices, CsvOptions, DataError, Dataset, Label,
    LabelColumn, SplitSpec,
};
use crate::granular::{
    averaged_universum, generate_balls, universum_balls_split, BallGenConfig, BallLabel, BallSet, GranularError,
    RadiusMode,
};
use crate::io::write_atomic;
use crate::models::{Diagnostics, Hyperparams, Kernel, ModelError, ModelKind, PreparedProblem, TrainInputs, TrainOptions};
use crate::stats::{AccuracyMatrix, StatsError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Granular(#[from] GranularError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("no (num_min, purity) pair yields balls of both classes; {0}")]
    NoFeasiblePair(String),
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("no run records to report")]
    EmptyRecords,
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Hyperparameter candidates searched by cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub c: Vec<f64>,
    /// Use one value for `c1 = c2 = cu`; otherwise search all triples.
    pub tie_c: bool,
    pub epsilon: Vec<f64>,
    /// RBF widths; ignored by linear models.
    pub sigma: Vec<f64>,
    /// Ball thresholds; ignored by point models.
    pub num_min: Vec<usize>,
    pub purity: Vec<f64>,
    pub folds: usize,
    pub radius_mode: RadiusMode,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            c: (-4..=4).map(|i| 2f64.powi(2 * i)).collect(),
            tie_c: true,
            epsilon: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            sigma: (-3..=2).map(|i| 2f64.powi(i)).collect(),
            num_min: vec![1, 2, 5],
            purity: vec![0.9, 1.0],
            folds: 5,
            radius_mode: RadiusMode::Average,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::InvalidGrid(m));
        for (name, empty) in [
            ("c", self.c.is_empty()),
            ("epsilon", self.epsilon.is_empty()),
            ("sigma", self.sigma.is_empty()),
            ("num_min", self.num_min.is_empty()),
            ("purity", self.purity.is_empty()),
        ] {
            if empty {
                return bad(format!("{name} has no candidates"));
            }
        }
        if let Some(c) = self.c.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return bad(format!("c = {c} must be positive"));
        }
        if let Some(e) = self.epsilon.iter().find(|e| !e.is_finite()) {
            return bad(format!("epsilon = {e} is not finite"));
        }
        if let Some(s) = self.sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return bad(format!("sigma = {s} must be positive"));
        }
        if self.num_min.contains(&0) {
            return bad("num_min must be at least 1".into());
        }
        if let Some(p) = self.purity.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return bad(format!("purity = {p} must lie in (0, 1]"));
        }
        if self.folds < 2 {
            return bad("at least 2 folds are needed".into());
        }
        Ok(())
    }

    /// `(c1, c2, cu)` candidates in ascending lexicographic order.
    pub fn c_triples(&self) -> Vec<(f64, f64, f64)> {
        let mut c = self.c.clone();
        c.sort_by(f64::total_cmp);
        c.dedup();
        if self.tie_c {
            return c.iter().map(|&v| (v, v, v)).collect();
        }
        let mut out = Vec::with_capacity(c.len().pow(3));
        for &a in &c {
            for &b in &c {
                for &u in &c {
                    out.push((a, b, u));
                }
            }
        }
        out
    }
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// A model variant in a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub rbf: bool,
}

impl ModelSpec {
    pub const TSVM: ModelSpec = ModelSpec { kind: ModelKind::Tsvm, rbf: false };
    pub const UTSVM: ModelSpec = ModelSpec { kind: ModelKind::Utsvm, rbf: false };
    pub const GBUTSVM: ModelSpec = ModelSpec { kind: ModelKind::Gbutsvm, rbf: false };
    pub const GBUTSVM_RBF: ModelSpec = ModelSpec { kind: ModelKind::Gbutsvm, rbf: true };

    /// TSVM, U-TSVM, linear GBU-TSVM and RBF GBU-TSVM.
    pub fn defaults() -> Vec<ModelSpec> {
        vec![Self::GBUTSVM, Self::GBUTSVM_RBF, Self::UTSVM, Self::TSVM]
    }

    /// Report column name, e.g. `GBU-TSVM-RBF`.
    pub fn name(&self) -> String {
        let base = match self.kind {
            ModelKind::Tsvm => "TSVM",
            ModelKind::Utsvm => "U-TSVM",
            ModelKind::Gbutsvm => "GBU-TSVM",
        };
        if self.rbf {
            format!("{base}-RBF")
        } else {
            base.to_string()
        }
    }

    pub fn uses_balls(&self) -> bool {
        self.kind == ModelKind::Gbutsvm
    }

    /// Column order in reports: ball models first, then U-TSVM, then TSVM.
    fn rank(&self) -> (u8, bool) {
        let k = match self.kind {
            ModelKind::Gbutsvm => 0,
            ModelKind::Utsvm => 1,
            ModelKind::Tsvm => 2,
        };
        (k, self.rbf)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ModelSpec {
    type Err = String;
    /// `tsvm`, `utsvm`, `gbutsvm`, each optionally suffixed `-rbf`
    /// (case and inner dashes are ignored, so `GBU-TSVM-RBF` works too).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let (base, rbf) = match lower.strip_suffix("-rbf") {
            Some(b) => (b, true),
            None => match lower.strip_suffix("-linear") {
                Some(b) => (b, false),
                None => (lower.as_str(), false),
            },
        };
        let kind = base.parse::<ModelKind>().map_err(|_| format!("unknown model '{s}'"))?;
        Ok(ModelSpec { kind, rbf })
    }
}

/// Where Universum samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UniversumMethod {
    /// A dedicated slice of the data.
    #[default]
    Split,
    /// Midpoints of paired positive and negative training balls (or points).
    /// The Universum slice is then merged into the training data.
    Average,
}

impl FromStr for UniversumMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "split" => Ok(UniversumMethod::Split),
            "average" => Ok(UniversumMethod::Average),
            other => Err(format!("unknown universum method '{other}' (expected split or average)")),
        }
    }
}

impl fmt::Display for UniversumMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UniversumMethod::Split => "split",
            UniversumMethod::Average => "average",
        })
    }
}

/// Outcome of checking every `(num_min, purity)` pair on a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Preflight {
    pub feasible: Vec<(usize, f64)>,
    pub infeasible: Vec<(usize, f64, String)>,
}

fn ball_config(num_min: usize, purity: f64, grid: &GridSpec, seed: u64) -> BallGenConfig {
    BallGenConfig {
        num_min,
        purity_threshold: purity,
        radius_mode: grid.radius_mode,
        seed,
        ..Default::default()
    }
}

fn classes_present(set: &BallSet) -> Result<(), String> {
    match (set.count(BallLabel::Positive), set.count(BallLabel::Negative)) {
        (0, 0) => Err("no balls".into()),
        (0, _) => Err("no positive balls".into()),
        (_, 0) => Err("no negative balls".into()),
        _ => Ok(()),
    }
}

/// Threshold pairs for which ball generation on `train` keeps at least one
/// ball of each class. Pairs are listed in ascending `(num_min, purity)`.
pub fn preflight_balls(train: &Dataset, grid: &GridSpec, seed: u64) -> Result<Preflight, BenchError> {
    if train.n_samples() == 0 {
        return Err(GranularError::EmptyInput.into());
    }
    let mut nums = grid.num_min.clone();
    nums.sort_unstable();
    nums.dedup();
    let purities = sorted(&grid.purity);
    let pairs: Vec<(usize, f64)> = nums.iter().flat_map(|&n| purities.iter().map(move |&p| (n, p))).collect();
    let checked: Vec<Result<(), String>> = pairs
        .par_iter()
        .map(|&(n, p)| match generate_balls(train, &ball_config(n, p, grid, seed)) {
            Ok(set) => classes_present(&set),
            Err(e) => Err(e.to_string()),
        })
        .collect();
    let mut out = Preflight {
        feasible: Vec::new(),
        infeasible: Vec::new(),
    };
    for (&(n, p), r) in pairs.iter().zip(checked) {
        match r {
            Ok(()) => out.feasible.push((n, p)),
            Err(reason) => out.infeasible.push((n, p, reason)),
        }
    }
    if out.feasible.is_empty() {
        let summary: Vec<String> = out
            .infeasible
            .iter()
            .map(|(n, p, r)| format!("num_min={n} purity={p}: {r}"))
            .collect();
        return Err(BenchError::NoFeasiblePair(summary.join("; ")));
    }
    Ok(out)
}

/// One point of the search grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub c1: f64,
    pub c2: f64,
    pub cu: f64,
    pub epsilon: f64,
    pub sigma: Option<f64>,
    pub num_min: Option<usize>,
    pub purity: Option<f64>,
}

impl Candidate {
    pub fn kernel(&self) -> Kernel {
        match self.sigma {
            Some(sigma) => Kernel::Rbf { sigma },
            None => Kernel::Linear,
        }
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            c1: self.c1,
            c2: self.c2,
            cu: self.cu,
            epsilon: self.epsilon,
            kernel: self.kernel(),
        }
    }

    /// Tie-break order: `c1, c2, cu, epsilon, sigma, num_min, purity`.
    fn key(&self) -> [f64; 7] {
        [
            self.c1,
            self.c2,
            self.cu,
            self.epsilon,
            self.sigma.unwrap_or(0.0),
            self.num_min.map_or(0.0, |n| n as f64),
            self.purity.unwrap_or(0.0),
        ]
    }
}

/// Everything fixed inside one `(model, fold)` evaluation except `c` and `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Structure {
    sigma: Option<f64>,
    balls: Option<(usize, f64)>,
}

/// Result of searching and refitting one model on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub dataset: String,
    pub model: ModelSpec,
    pub universum: UniversumMethod,
    /// Selected grid point; `None` when every point failed.
    pub chosen: Option<Candidate>,
    /// Mean of `fold_accuracies`, in percent.
    pub cv_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
    pub test_accuracy: f64,
    /// Wall time of the final refit: kernel rows, factorization, dual
    /// assembly and both solves. Search and ball generation are excluded.
    pub train_seconds: f64,
    /// Wall time of ball and Universum construction for the final refit.
    pub ball_seconds: f64,
    /// Rows handed to the solver: balls for ball models, points otherwise.
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_univ: usize,
    /// Training samples behind those rows.
    pub n_train: usize,
    pub n_test: usize,
    pub grid_points: usize,
    pub failed_points: usize,
    pub diagnostics: Option<Diagnostics>,
    pub failure: Option<String>,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    /// Equality ignoring wall-clock fields.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        let strip = |r: &RunRecord| {
            let mut r = r.clone();
            r.train_seconds = 0.0;
            r.ball_seconds = 0.0;
            if let Some(d) = r.diagnostics.as_mut() {
                d.prepare_seconds = 0.0;
                d.solve_seconds = 0.0;
            }
            r
        };
        strip(self) == strip(other)
    }

    fn failure(dataset: &str, model: ModelSpec, universum: UniversumMethod, reason: String) -> RunRecord {
        RunRecord {
            dataset: dataset.to_string(),
            model,
            universum,
            chosen: None,
            cv_accuracy: 0.0,
            fold_accuracies: Vec::new(),
            test_accuracy: 0.0,
            train_seconds: 0.0,
            ball_seconds: 0.0,
            n_pos: 0,
            n_neg: 0,
            n_univ: 0,
            n_train: 0,
            n_test: 0,
            grid_points: 0,
            failed_points: 0,
            diagnostics: None,
            failure: Some(reason),
        }
    }
}

/// Settings shared by every model of an experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub models: Vec<ModelSpec>,
    pub grid: GridSpec,
    pub split: SplitSpec,
    pub universum: UniversumMethod,
    pub train: TrainOptions,
}

impl Experiment {
    pub fn new(models: &[ModelSpec], grid: &GridSpec, split: &SplitSpec, universum: UniversumMethod) -> Self {
        Experiment {
            models: models.to_vec(),
            grid: grid.clone(),
            split: *split,
            universum,
            train: TrainOptions::default(),
        }
    }
}

/// Search, refit and test every model on `d` with default training options.
pub fn run_experiment(
    d: &Dataset,
    models: &[ModelSpec],
    grid: &GridSpec,
    split: &SplitSpec,
    universum: UniversumMethod,
) -> Result<Vec<RunRecord>, BenchError> {
    run_experiment_with(d, &Experiment::new(models, grid, split, universum))
}

/// Midpoints of positive and negative rows paired in index order.
fn averaged_points(train: &Dataset) -> DMatrix<f64> {
    let a = train.class_matrix(Label::Positive);
    let b = train.class_matrix(Label::Negative);
    let n = a.nrows().min(b.nrows());
    DMatrix::from_fn(n, train.n_features(), |i, j| (a[(i, j)] + b[(i, j)]) / 2.0)
}

/// Solver inputs for one model on one training set.
fn build_inputs(
    model: ModelSpec,
    s: Structure,
    train: &Dataset,
    univ: Option<&Dataset>,
    exp: &Experiment,
) -> Result<TrainInputs, String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    if let Some((num_min, purity)) = s.balls {
        let cfg = ball_config(num_min, purity, &exp.grid, exp.split.seed);
        let balls = generate_balls(train, &cfg).map_err(|e| err(&e))?;
        classes_present(&balls)?;
        let u = match (exp.universum, univ) {
            (UniversumMethod::Average, _) => Some(averaged_universum(&balls).map_err(|e| err(&e))?),
            (UniversumMethod::Split, Some(u)) => match universum_balls_split(u, &cfg) {
                Ok(set) => Some(set),
                Err(GranularError::NoBallsSurvive { .. }) => {
                    log::warn!("no Universum balls survive num_min={num_min} purity={purity}");
                    None
                }
                Err(e) => return Err(err(&e)),
            },
            (UniversumMethod::Split, None) => None,
        };
        return TrainInputs::from_balls(&balls, u.as_ref()).map_err(|e| err(&e));
    }
    let u = match model.kind {
        ModelKind::Tsvm => None,
        _ => match (exp.universum, univ) {
            (UniversumMethod::Average, _) => Some(averaged_points(train)),
            (UniversumMethod::Split, Some(u)) => Some(u.features().clone()),
            (UniversumMethod::Split, None) => None,
        },
    };
    let mut t = TrainInputs::from_points(train, u.as_ref()).map_err(|e| err(&e))?;
    t.kind = model.kind;
    Ok(t)
}

fn model_structures(model: ModelSpec, grid: &GridSpec, feasible: &[(usize, f64)]) -> Vec<Structure> {
    let sigmas: Vec<Option<f64>> = if model.rbf {
        sorted(&grid.sigma).into_iter().map(Some).collect()
    } else {
        vec![None]
    };
    let balls: Vec<Option<(usize, f64)>> = if model.uses_balls() {
        feasible.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    sigmas
        .iter()
        .flat_map(|&sigma| balls.iter().map(move |&balls| Structure { sigma, balls }))
        .collect()
}

/// `(c1, c2, cu, eps)` candidates; models without Universum search `eps = 0`.
fn solver_grid(model: ModelSpec, grid: &GridSpec) -> Vec<(f64, f64, f64, f64)> {
    let eps = if model.kind.uses_universum() {
        sorted(&grid.epsilon)
    } else {
        vec![0.0]
    };
    grid.c_triples()
        .into_iter()
        .flat_map(|(a, b, u)| eps.iter().map(move |&e| (a, b, u, e)))
        .collect()
}

/// Accuracy of every `(c, eps)` point for one structure on one fold.
fn evaluate_unit(
    model: ModelSpec,
    s: Structure,
    fit_train: &Dataset,
    validation: &Dataset,
    univ: Option<&Dataset>,
    points: &[(f64, f64, f64, f64)],
    exp: &Experiment,
) -> Vec<Option<f64>> {
    let fail = |why: &str| {
        log::debug!("{} {:?}: {why}", model, s);
        vec![None; points.len()]
    };
    let inputs = match build_inputs(model, s, fit_train, univ, exp) {
        Ok(t) => t,
        Err(e) => return fail(&e),
    };
    let kernel = s.sigma.map_or(Kernel::Linear, |sigma| Kernel::Rbf { sigma });
    let prepared = match PreparedProblem::new(&inputs, kernel, exp.train.delta) {
        Ok(p) => p,
        Err(e) => return fail(&e.to_string()),
    };
    points
        .iter()
        .map(|&(c1, c2, cu, epsilon)| {
            let h = Hyperparams {
                c1,
                c2,
                cu,
                epsilon,
                kernel,
            };
            let model = prepared.fit(&h, &exp.train).ok()?;
            let predicted = model.predict(validation.features()).ok()?;
            accuracy(&predicted, validation.labels()).ok()
        })
        .collect()
}

struct Slices {
    train: Dataset,
    univ: Option<Dataset>,
    test: Dataset,
}

fn slices(d: &Dataset, exp: &Experiment) -> Result<Slices, BenchError> {
    let idx = split_indices(d.labels(), &exp.split)?;
    Ok(match exp.universum {
        UniversumMethod::Split => Slices {
            train: d.subset(&idx.train),
            univ: Some(d.subset(&idx.universum)),
            test: d.subset(&idx.test),
        },
        UniversumMethod::Average => {
            let mut train = idx.train.clone();
            train.extend_from_slice(&idx.universum);
            Slices {
                train: d.subset(&train),
                univ: None,
                test: d.subset(&idx.test),
            }
        }
    })
}

/// [`run_experiment`] with explicit training options.
///
/// Models whose search or refit fails everywhere yield a record with
/// `failure` set instead of an error, so the remaining models still run.
pub fn run_experiment_with(d: &Dataset, exp: &Experiment) -> Result<Vec<RunRecord>, BenchError> {
    exp.grid.validate()?;
    if exp.models.is_empty() {
        return Err(BenchError::InvalidGrid("no models requested".into()));
    }
    let sl = slices(d, exp)?;
    let folds = kfold_stratified(sl.train.labels(), exp.grid.folds, exp.split.seed)?;
    let fold_sets: Vec<(Dataset, Dataset)> = (0..exp.grid.folds)
        .map(|f| (sl.train.subset(&folds.training(f)), sl.train.subset(&folds.validation(f))))
        .collect();

    let preflight = if exp.models.iter().any(|m| m.uses_balls()) {
        Some(preflight_balls(&sl.train, &exp.grid, exp.split.seed))
    } else {
        None
    };

    // (model index, structures, solver grid) for every model that can run
    let mut plans = Vec::new();
    let mut records: Vec<Option<RunRecord>> = vec![None; exp.models.len()];
    for (mi, &model) in exp.models.iter().enumerate() {
        let feasible = match (&preflight, model.uses_balls()) {
            (Some(Ok(p)), true) => p.feasible.clone(),
            (Some(Err(e)), true) => {
                records[mi] = Some(RunRecord::failure(d.name(), model, exp.universum, e.to_string()));
                continue;
            }
            _ => Vec::new(),
        };
        plans.push((mi, model_structures(model, &exp.grid, &feasible), solver_grid(model, &exp.grid)));
    }

    let units: Vec<(usize, usize, usize)> = plans
        .iter()
        .enumerate()
        .flat_map(|(pi, (_, structs, _))| {
            (0..exp.grid.folds).flat_map(move |f| (0..structs.len()).map(move |s| (pi, f, s)))
        })
        .collect();
    let scores: Vec<Vec<Option<f64>>> = units
        .par_iter()
        .map(|&(pi, f, s)| {
            let (mi, structs, points) = &plans[pi];
            let (fit, val) = &fold_sets[f];
            evaluate_unit(exp.models[*mi], structs[s], fit, val, sl.univ.as_ref(), points, exp)
        })
        .collect();

    let mut cursor = 0;
    for (mi, structs, points) in &plans {
        let model = exp.models[*mi];
        // per_fold[f][s][p]
        let per_fold: Vec<&[Vec<Option<f64>>]> = (0..exp.grid.folds)
            .map(|f| &scores[cursor + f * structs.len()..cursor + (f + 1) * structs.len()])
            .collect();
        cursor += exp.grid.folds * structs.len();

        let mut best: Option<(f64, Candidate, Structure, Vec<f64>)> = None;
        let mut failed = 0;
        for (si, st) in structs.iter().enumerate() {
            for (pi, &(c1, c2, cu, epsilon)) in points.iter().enumerate() {
                let accs: Option<Vec<f64>> = per_fold.iter().map(|f| f[si][pi]).collect();
                let Some(accs) = accs else {
                    failed += 1;
                    continue;
                };
                let cv = accs.iter().sum::<f64>() / accs.len() as f64;
                let cand = Candidate {
                    c1,
                    c2,
                    cu,
                    epsilon,
                    sigma: st.sigma,
                    num_min: st.balls.map(|b| b.0),
                    purity: st.balls.map(|b| b.1),
                };
                let better = match &best {
                    None => true,
                    Some((bcv, bc, _, _)) => {
                        cv > *bcv || (cv == *bcv && cand.key().partial_cmp(&bc.key()) == Some(std::cmp::Ordering::Less))
                    }
                };
                if better {
                    best = Some((cv, cand, *st, accs));
                }
            }
        }
        let grid_points = structs.len() * points.len();
        let record = match best {
            None => {
                let mut r = RunRecord::failure(
                    d.name(),
                    model,
                    exp.universum,
                    format!("training failed on all {grid_points} grid points"),
                );
                r.grid_points = grid_points;
                r.failed_points = failed;
                r
            }
            Some((cv, cand, st, accs)) => refit(d.name(), model, cand, st, cv, accs, &sl, exp, grid_points, failed),
        };
        records[*mi] = Some(record);
    }
    Ok(records.into_iter().map(|r| r.expect("every model has a record")).collect())
}

#[allow(clippy::too_many_arguments)]
fn refit(
    dataset: &str,
    model: ModelSpec,
    cand: Candidate,
    st: Structure,
    cv: f64,
    fold_accuracies: Vec<f64>,
    sl: &Slices,
    exp: &Experiment,
    grid_points: usize,
    failed_points: usize,
) -> RunRecord {
    let mut rec = RunRecord::failure(dataset, model, exp.universum, String::new());
    rec.chosen = Some(cand);
    rec.cv_accuracy = cv;
    rec.fold_accuracies = fold_accuracies;
    rec.grid_points = grid_points;
    rec.failed_points = failed_points;
    rec.n_train = sl.train.n_samples();
    rec.n_test = sl.test.n_samples();

    let start = Instant::now();
    let inputs = build_inputs(model, st, &sl.train, sl.univ.as_ref(), exp);
    rec.ball_seconds = if model.uses_balls() { start.elapsed().as_secs_f64() } else { 0.0 };
    let inputs = match inputs {
        Ok(t) => t,
        Err(e) => {
            rec.failure = Some(format!("refit: {e}"));
            return rec;
        }
    };
    rec.n_pos = inputs.a.nrows();
    rec.n_neg = inputs.b.nrows();
    rec.n_univ = inputs.u.nrows();

    let start = Instant::now();
    let fitted = PreparedProblem::new(&inputs, cand.kernel(), exp.train.delta)
        .and_then(|p| p.fit(&cand.hyperparams(), &exp.train));
    rec.train_seconds = start.elapsed().as_secs_f64();
    let fitted = match fitted {
        Ok(m) => m,
        Err(e) => {
            rec.failure = Some(format!("refit: {e}"));
            return rec;
        }
    };
    rec.diagnostics = Some(fitted.diagnostics.clone());
    match fitted
        .predict(sl.test.features())
        .map_err(|e| e.to_string())
        .and_then(|p| accuracy(&p, sl.test.labels()).map_err(|e| e.to_string()))
    {
        Ok(acc) => {
            rec.test_accuracy = acc;
            rec.failure = None;
        }
        Err(e) => rec.failure = Some(format!("test evaluation: {e}")),
    }
    rec
}

fn sorted_records(records: &[RunRecord]) -> Vec<&RunRecord> {
    let mut v: Vec<&RunRecord> = records.iter().collect();
    v.sort_by(|a, b| a.dataset.cmp(&b.dataset).then(a.model.rank().cmp(&b.model.rank())));
    v
}

/// Datasets and model columns in report order, plus the datasets left out
/// of the matrix because a model failed or is missing.
fn matrix_layout(records: &[RunRecord]) -> (Vec<String>, Vec<ModelSpec>, Vec<String>) {
    let recs = sorted_records(records);
    let mut models: Vec<ModelSpec> = recs.iter().map(|r| r.model).collect();
    models.sort_by_key(|m| m.rank());
    models.dedup();
    let mut datasets: Vec<String> = recs.iter().map(|r| r.dataset.clone()).collect();
    datasets.dedup();
    let (mut complete, mut skipped) = (Vec::new(), Vec::new());
    for ds in datasets {
        let ok = models
            .iter()
            .all(|m| recs.iter().any(|r| r.dataset == ds && r.model == *m && !r.failed()));
        if ok {
            complete.push(ds);
        } else {
            skipped.push(ds);
        }
    }
    (complete, models, skipped)
}

fn lookup<'a>(records: &'a [RunRecord], ds: &str, m: ModelSpec) -> &'a RunRecord {
    records
        .iter()
        .find(|r| r.dataset == ds && r.model == m && !r.failed())
        .expect("layout only keeps complete datasets")
}

/// Test accuracies as a datasets x models CSV (`{:.2}`), in the layout read
/// by [`AccuracyMatrix::from_csv_reader`].
pub fn accuracy_matrix_csv(records: &[RunRecord]) -> String {
    let (datasets, models, _) = matrix_layout(records);
    let mut out = String::from("dataset");
    for m in &models {
        out.push(',');
        out.push_str(&m.name());
    }
    out.push('\n');
    for ds in &datasets {
        out.push_str(ds);
        for &m in &models {
            out.push_str(&format!(",{:.2}", lookup(records, ds, m).test_accuracy));
        }
        out.push('\n');
    }
    out
}

/// Test accuracies as an [`AccuracyMatrix`], for the statistics module.
pub fn accuracy_matrix(records: &[RunRecord]) -> Result<AccuracyMatrix, BenchError> {
    let (datasets, models, _) = matrix_layout(records);
    let values = datasets
        .iter()
        .map(|ds| models.iter().map(|&m| lookup(records, ds, m).test_accuracy).collect())
        .collect();
    Ok(AccuracyMatrix::new(
        datasets,
        models.iter().map(|m| m.name()).collect(),
        values,
    )?)
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

/// One row per record with the chosen grid point, accuracies, timings and
/// solver diagnostics.
pub fn runs_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(
        "dataset,model,universum,status,c1,c2,cu,epsilon,sigma,num_min,purity,cv_accuracy,fold_accuracies,\
         test_accuracy,train_seconds,ball_seconds,n_pos,n_neg,n_univ,n_train,n_test,grid_points,failed_points,\
         kkt_plus,kkt_minus,iterations_plus,iterations_minus,failure\n",
    );
    for r in sorted_records(records) {
        let c = r.chosen;
        let folds: Vec<String> = r.fold_accuracies.iter().map(|a| format!("{a:.4}")).collect();
        let diag = |f: fn(&Diagnostics) -> String| r.diagnostics.as_ref().map_or(String::new(), f);
        let fields = [
            r.dataset.clone(),
            r.model.name(),
            r.universum.to_string(),
            if r.failed() { "failed" } else { "ok" }.to_string(),
            opt(c.map(|c| c.c1)),
            opt(c.map(|c| c.c2)),
            opt(c.map(|c| c.cu)),
            opt(c.map(|c| c.epsilon)),
            opt(c.and_then(|c| c.sigma)),
            opt(c.and_then(|c| c.num_min)),
            opt(c.and_then(|c| c.purity)),
            format!("{:.4}", r.cv_accuracy),
            folds.join(";"),
            format!("{:.4}", r.test_accuracy),
            format!("{:.6}", r.train_seconds),
            format!("{:.6}", r.ball_seconds),
            r.n_pos.to_string(),
            r.n_neg.to_string(),
            r.n_univ.to_string(),
            r.n_train.to_string(),
            r.n_test.to_string(),
            r.grid_points.to_string(),
            r.failed_points.to_string(),
            diag(|d| format!("{:.3e}", d.kkt_plus)),
            diag(|d| format!("{:.3e}", d.kkt_minus)),
            diag(|d| d.iterations_plus.to_string()),
            diag(|d| d.iterations_minus.to_string()),
            r.failure.clone().unwrap_or_default(),
        ];
        let line: Vec<String> = fields.iter().map(|f| csv_field(f)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Markdown summary: per-run table, accuracy matrix and failures.
pub fn report_markdown(records: &[RunRecord]) -> String {
    let mut out = String::from("# Benchmark report\n\n## Runs\n\n");
    out.push_str(
        "| Dataset | Model | Test acc (%) | CV acc (%) | c1 | c2 | cu | eps | sigma | num | pur | \
         Rows +/-/U | Train (s) | Balls (s) |\n",
    );
    out.push_str("|---|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|---|---:|---:|\n");
    for r in sorted_records(records).into_iter().filter(|r| !r.failed()) {
        let c = r.chosen.expect("successful runs have a grid point");
        let dash = |s: String| if s.is_empty() { "-".to_string() } else { s };
        out.push_str(&format!(
            "| {} | {} | {:.2} | {:.2} | {} | {} | {} | {} | {} | {} | {} | {}/{}/{} | {:.4} | {:.4} |\n",
            r.dataset,
            r.model,
            r.test_accuracy,
            r.cv_accuracy,
            c.c1,
            c.c2,
            c.cu,
            c.epsilon,
            dash(opt(c.sigma)),
            dash(opt(c.num_min)),
            dash(opt(c.purity)),
            r.n_pos,
            r.n_neg,
            r.n_univ,
            r.train_seconds,
            r.ball_seconds,
        ));
    }
    let (datasets, models, skipped) = matrix_layout(records);
    if !datasets.is_empty() {
        out.push_str("\n## Test accuracy (%)\n\n| Dataset |");
        for m in &models {
            out.push_str(&format!(" {m} |"));
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(models.len()));
        out.push('\n');
        for ds in &datasets {
            out.push_str(&format!("| {ds} |"));
            for &m in &models {
                out.push_str(&format!(" {:.2} |", lookup(records, ds, m).test_accuracy));
            }
            out.push('\n');
        }
    }
    let failures: Vec<&RunRecord> = sorted_records(records).into_iter().filter(|r| r.failed()).collect();
    if !failures.is_empty() {
        out.push_str("\n## Failures\n\n");
        for r in failures {
            out.push_str(&format!(
                "- {} / {}: {}\n",
                r.dataset,
                r.model,
                r.failure.as_deref().unwrap_or("")
            ));
        }
    }
    if !skipped.is_empty() {
        out.push_str(&format!("\nLeft out of the accuracy matrix: {}\n", skipped.join(", ")));
    }
    out
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub accuracy_matrix: PathBuf,
    pub runs: PathBuf,
    pub report: PathBuf,
}

/// Write `accuracy_matrix.csv`, `runs.csv` and `report.md` into `dir`, each
/// atomically.
pub fn emit_report(records: &[RunRecord], dir: &Path) -> Result<ReportFiles, BenchError> {
    if records.is_empty() {
        return Err(BenchError::EmptyRecords);
    }
    std::fs::create_dir_all(dir).map_err(|source| BenchError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let files = ReportFiles {
        accuracy_matrix: dir.join("accuracy_matrix.csv"),
        runs: dir.join("runs.csv"),
        report: dir.join("report.md"),
    };
    for (path, text) in [
        (&files.accuracy_matrix, accuracy_matrix_csv(records)),
        (&files.runs, runs_csv(records)),
        (&files.report, report_markdown(records)),
    ] {
        write_atomic(path, text.as_bytes()).map_err(|source| BenchError::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(files)
}

/// A benchmark described by a `key = value` file.
///
/// Keys: `dataset` (repeatable), `data_dir`, `label_column`,
/// `positive_label`, `header`, `scale`, `models`, `c`, `tie_c`, `epsilon`,
/// `sigma`, `num_min`, `purity`, `folds`, `radius_mode`, `seed`, `split`
/// (three fractions), `universum` (`split` or `average`), `normalized`,
/// `label_noise`. Lists are comma-separated; `#` starts a comment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub datasets: Vec<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub csv: CsvOptions,
    pub models: Vec<ModelSpec>,
    pub grid: GridSpec,
    pub split: SplitSpec,
    pub universum: UniversumMethod,
    pub normalized: bool,
    /// Fraction of labels flipped before splitting.
    pub label_noise: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            datasets: Vec::new(),
            data_dir: None,
            csv: CsvOptions::default(),
            models: ModelSpec::defaults(),
            grid: GridSpec::default(),
            split: SplitSpec::default(),
            universum: UniversumMethod::Split,
            normalized: false,
            label_noise: 0.0,
        }
    }
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("'{s}': {e}")))
        .collect()
}

fn parse_one<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("'{v}': {e}"))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| BenchError::Config { line: i + 1, reason };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected 'key = value'".into()))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value).map_err(err)?;
        }
        if cfg.datasets.is_empty() {
            return Err(BenchError::Config {
                line: 0,
                reason: "no dataset given".into(),
            });
        }
        cfg.grid.validate()?;
        cfg.split.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|source| {
            BenchError::Data(DataError::Io {
                path: path.to_path_buf(),
                source,
            })
        })?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "dataset" => self.datasets.push(PathBuf::from(value)),
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "label_column" => self.csv.label_column = value.parse::<LabelColumn>().unwrap_or(LabelColumn::Last),
            "positive_label" => self.csv.positive_label = Some(value.to_string()),
            "header" => self.csv.has_header = parse_one(value)?,
            "scale" => self.csv.scale = parse_one(value)?,
            "models" => self.models = parse_list(value)?,
            "c" => self.grid.c = parse_list(value)?,
            "tie_c" => self.grid.tie_c = parse_one(value)?,
            "epsilon" => self.grid.epsilon = parse_list(value)?,
            "sigma" => self.grid.sigma = parse_list(value)?,
            "num_min" => self.grid.num_min = parse_list(value)?,
            "purity" => self.grid.purity = parse_list(value)?,
            "folds" => self.grid.folds = parse_one(value)?,
            "radius_mode" => self.grid.radius_mode = parse_one(value)?,
            "seed" => self.split.seed = parse_one(value)?,
            "split" => {
                let f: Vec<f64> = parse_list(value)?;
                let [t, u, s] = f[..] else {
                    return Err("split needs three fractions: train, universum, test".into());
                };
                self.split.train_fraction = t;
                self.split.universum_fraction = u;
                self.split.test_fraction = s;
            }
            "universum" => self.universum = parse_one(value)?,
            "normalized" => self.normalized = parse_one(value)?,
            "label_noise" => {
                let v: f64 = parse_one(value)?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(format!("label_noise = {v} must lie in [0, 1]"));
                }
                self.label_noise = v;
            }
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Dataset paths with relative entries resolved against `data_dir`, or
    /// `fallback_dir` when the config sets none.
    pub fn dataset_paths(&self, fallback_dir: Option<&Path>) -> Vec<PathBuf> {
        let base = self.data_dir.as_deref().or(fallback_dir);
        self.datasets
            .iter()
            .map(|p| match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p.clone(),
            })
            .collect()
    }

    pub fn experiment(&self) -> Experiment {
        let mut exp = Experiment::new(&self.models, &self.grid, &self.split, self.universum);
        exp.train.normalized = self.normalized;
        exp
    }

    /// Load every dataset, apply label noise, and run the experiment.
    pub fn run(&self, fallback_dir: Option<&Path>) -> Result<Vec<RunRecord>, BenchError> {
        let exp = self.experiment();
        let mut records = Vec::new();
        for path in self.dataset_paths(fallback_dir) {
            let mut d = load_csv(&path, &self.csv)?;
            if self.label_noise > 0.0 {
                d = flip_labels(&d, self.label_noise, self.split.seed)?;
            }
            log::info!("running {} ({} samples)", d.name(), d.n_samples());
            records.extend(run_experiment_with(&d, &exp)?);
        }
        Ok(records)
    }
}
