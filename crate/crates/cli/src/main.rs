//! `gbtsvm` command-line front end.
//!
//! Exit codes: 0 success, 2 infeasible ball thresholds, 3 I/O failure,
//! 4 unparsable input, 5 solver failure, 64 invalid usage.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use gbtsvm::bench::{emit_report, BenchError, ExperimentConfig, ModelSpec, UniversumMethod};
use gbtsvm::data::{accuracy, load_csv, load_features_csv, CsvOptions, DataError, Dataset, Label, LabelColumn};
use gbtsvm::granular::{
    averaged_universum, generate_balls, universum_balls_split, BallGenConfig, BallLabel, BallSet, GranularError,
    RadiusMode,
};
use gbtsvm::io::write_atomic;
use gbtsvm::models::{Hyperparams, Kernel, ModelError, ModelKind, Plane, PreparedProblem, TrainInputs, TrainOptions};
use gbtsvm::qp::{solve_box_qp, write_diagnostic_csv, QpError};
use gbtsvm::stats::{AccuracyMatrix, StatReport, StatsError};
use nalgebra::DMatrix;

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_PARSE: u8 = 4;
const EXIT_SOLVER: u8 = 5;
const EXIT_USAGE: u8 = 64;

#[derive(Debug)]
enum Failure {
    Usage(String),
    Infeasible(String),
    Io(String),
    Parse(String),
    Solver(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Infeasible(_) => EXIT_INFEASIBLE,
            Failure::Io(_) => EXIT_IO,
            Failure::Parse(_) => EXIT_PARSE,
            Failure::Solver(_) => EXIT_SOLVER,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m)
            | Failure::Infeasible(m)
            | Failure::Io(m)
            | Failure::Parse(m)
            | Failure::Solver(m) => m,
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        let m = e.to_string();
        match e {
            DataError::Io { .. } => Failure::Io(m),
            DataError::Csv(ref c) if c.is_io_error() => Failure::Io(m),
            DataError::InvalidSplit(_) | DataError::EmptyPart(_) | DataError::TooFewSamples { .. } => {
                Failure::Usage(m)
            }
            _ => Failure::Parse(m),
        }
    }
}

impl From<GranularError> for Failure {
    fn from(e: GranularError) -> Self {
        let m = e.to_string();
        match e {
            GranularError::NoBallsSurvive { .. } => Failure::Infeasible(m),
            GranularError::InvalidConfig(_) => Failure::Usage(m),
            GranularError::Io(_) => Failure::Io(m),
            GranularError::EmptyInput => Failure::Parse(m),
        }
    }
}

impl From<QpError> for Failure {
    fn from(e: QpError) -> Self {
        let m = e.to_string();
        match e {
            QpError::Io(_) => Failure::Io(m),
            _ => Failure::Solver(m),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let m = e.to_string();
        match e {
            ModelError::Qp(q) => q.into(),
            ModelError::NotConverged { .. } => Failure::Solver(m),
            ModelError::InvalidHyperparams(_) => Failure::Usage(m),
            ModelError::InvalidInput(_) | ModelError::Parse { .. } | ModelError::Dimension { .. } => {
                Failure::Parse(m)
            }
        }
    }
}

impl From<StatsError> for Failure {
    fn from(e: StatsError) -> Self {
        let m = e.to_string();
        match e {
            StatsError::Io { .. } => Failure::Io(m),
            StatsError::Csv(ref c) if c.is_io_error() => Failure::Io(m),
            StatsError::UnknownModel(_) | StatsError::InvalidTolerance => Failure::Usage(m),
            _ => Failure::Parse(m),
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        let m = e.to_string();
        match e {
            BenchError::Data(d) => d.into(),
            BenchError::Granular(g) => g.into(),
            BenchError::Model(x) => x.into(),
            BenchError::Stats(s) => s.into(),
            BenchError::InvalidGrid(_) | BenchError::EmptyRecords => Failure::Usage(m),
            BenchError::NoFeasiblePair(_) => Failure::Infeasible(m),
            BenchError::Config { .. } => Failure::Parse(m),
            BenchError::Io { .. } => Failure::Io(m),
        }
    }
}

fn write_output(path: &Path, text: &str) -> Result<(), Failure> {
    write_atomic(path, text.as_bytes()).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

/// Write to `path` atomically, or to stdout when no path is given.
fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => write_output(p, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Io(format!("cannot write to stdout: {e}"))),
    }
}

#[derive(Parser, Debug)]
#[command(name = "gbtsvm", version, about = "Granular-ball Universum twin SVM toolkit")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for every stochastic step [default: 42].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory searched for relative data paths that do not exist.
    #[arg(long, global = true, env = "GBTSVM_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate granular balls from a labeled CSV.
    GenBalls(GenBallsArgs),
    /// Train a model and write it to a file.
    Train(TrainArgs),
    /// Classify rows with a trained model.
    Predict(PredictArgs),
    /// Run a benchmark described by a config file.
    Bench(BenchArgs),
    /// Compare classifiers from an accuracy matrix.
    Stats(StatsArgs),
}

#[derive(Args, Debug, Clone)]
struct CsvArgs {
    /// Label column: `last`, a 0-based index, or a header name.
    #[arg(long, default_value = "last")]
    label_column: String,
    /// Raw label value treated as the positive class.
    #[arg(long)]
    positive_label: Option<String>,
    /// The first line is a header.
    #[arg(long)]
    header: bool,
    /// Keep raw feature values instead of min-max scaling.
    #[arg(long)]
    no_scale: bool,
}

impl CsvArgs {
    fn options(&self) -> CsvOptions {
        CsvOptions {
            label_column: self.label_column.parse().unwrap_or(LabelColumn::Last),
            positive_label: self.positive_label.clone(),
            has_header: self.header,
            scale: !self.no_scale,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RadiusArg {
    Average,
    Maximum,
}

impl From<RadiusArg> for RadiusMode {
    fn from(r: RadiusArg) -> Self {
        match r {
            RadiusArg::Average => RadiusMode::Average,
            RadiusArg::Maximum => RadiusMode::Maximum,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum UniversumArg {
    Split,
    Average,
}

impl From<UniversumArg> for UniversumMethod {
    fn from(u: UniversumArg) -> Self {
        match u {
            UniversumArg::Split => UniversumMethod::Split,
            UniversumArg::Average => UniversumMethod::Average,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum Format {
    Csv,
    Md,
}

#[derive(Args, Debug)]
struct GenBallsArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    csv: CsvArgs,
    #[arg(long, default_value_t = 1)]
    num_min: usize,
    #[arg(long, default_value_t = 1.0)]
    purity: f64,
    #[arg(long, value_enum, default_value = "average")]
    radius_mode: RadiusArg,
    /// Emit the balls unlabeled, as Universum balls.
    #[arg(long)]
    universum: bool,
    /// Ball CSV path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    csv: CsvArgs,
    /// tsvm, utsvm or gbutsvm, optionally suffixed `-rbf`.
    #[arg(long, default_value = "gbutsvm")]
    model: String,
    /// Shared penalty for c1, c2 and cu.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    #[arg(long)]
    cu: Option<f64>,
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
    /// RBF width (kernel models only) [default: 1].
    #[arg(long)]
    sigma: Option<f64>,
    /// Ball threshold (ball models only) [default: 1].
    #[arg(long)]
    num_min: Option<usize>,
    /// Ball purity threshold (ball models only) [default: 1].
    #[arg(long)]
    purity: Option<f64>,
    #[arg(long, value_enum, default_value = "average")]
    radius_mode: RadiusArg,
    /// Universum samples, same column layout as --data.
    #[arg(long)]
    universum_data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "split")]
    universum_method: UniversumArg,
    /// Divide decision values by ||w||.
    #[arg(long)]
    normalized: bool,
    /// Gram regularization (0 = scaled default).
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Keep the model even when a dual misses the tolerance.
    #[arg(long)]
    allow_unconverged: bool,
    /// Directory for per-dual diagnostic CSVs.
    #[arg(long)]
    dump_qp: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// The data file has no label column.
    #[arg(long)]
    no_labels: bool,
    #[arg(long, default_value = "last")]
    label_column: String,
    /// Overrides the positive label stored in the model.
    #[arg(long)]
    positive_label: Option<String>,
    #[arg(long)]
    header: bool,
    /// Prediction CSV path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving accuracy_matrix.csv, runs.csv and report.md.
    #[arg(long)]
    out: PathBuf,
    /// What to print: the accuracy matrix (csv) or the report (md).
    #[arg(long, value_enum, default_value = "md")]
    format: Format,
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// Accuracy CSV: `dataset,<model>,...` with one row per dataset.
    #[arg(long)]
    matrix: PathBuf,
    /// Reference model (default: first column).
    #[arg(long)]
    reference: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    tie_tol: f64,
    #[arg(long, value_enum, default_value = "md")]
    format: Format,
    /// Report path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Ctx {
    seed: Option<u64>,
    data_dir: Option<PathBuf>,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(42)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.data_dir {
            Some(dir) if p.is_relative() && !p.exists() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }
}

fn ball_summary(set: &BallSet) -> String {
    format!(
        "balls: {} (positive {}, negative {}, unlabeled {}), mean radius {:.6}",
        set.len(),
        set.count(BallLabel::Positive),
        set.count(BallLabel::Negative),
        set.count(BallLabel::Unlabeled),
        set.mean_radius()
    )
}

fn gen_balls(ctx: &Ctx, a: &GenBallsArgs) -> Result<(), Failure> {
    if !(a.purity > 0.0 && a.purity <= 1.0) {
        return Err(Failure::Usage(format!("--purity {} must lie in (0, 1]", a.purity)));
    }
    let d = load_csv(ctx.resolve(&a.data), &a.csv.options())?;
    let cfg = BallGenConfig {
        num_min: a.num_min,
        purity_threshold: a.purity,
        radius_mode: a.radius_mode.into(),
        seed: ctx.seed(),
        ..Default::default()
    };
    let set = if a.universum {
        universum_balls_split(&d, &cfg)?
    } else {
        generate_balls(&d, &cfg)?
    };
    emit(a.out.as_deref(), &set.to_csv_string())?;
    if a.out.is_some() {
        println!("{}", ball_summary(&set));
    } else {
        eprintln!("{}", ball_summary(&set));
    }
    Ok(())
}

/// Load a Universum file and map it into the training feature space.
fn load_universum(path: &Path, csv: &CsvArgs, train: &Dataset) -> Result<Dataset, Failure> {
    let opts = CsvOptions {
        positive_label: None,
        scale: false,
        ..csv.options()
    };
    let u = load_csv(path, &opts)?;
    if u.n_features() != train.n_features() {
        return Err(Failure::Parse(format!(
            "Universum file has {} features, training data has {}",
            u.n_features(),
            train.n_features()
        )));
    }
    let mut x = u.features().clone();
    if let Some(s) = train.scaler() {
        x = s.transform(&x);
    }
    Ok(Dataset::new(u.name(), x, u.labels().to_vec())?)
}

fn check_classes(set: &BallSet) -> Result<(), Failure> {
    let (p, n) = (set.count(BallLabel::Positive), set.count(BallLabel::Negative));
    if p == 0 || n == 0 {
        let missing = if p == 0 { "positive" } else { "negative" };
        return Err(Failure::Infeasible(format!(
            "no {missing} balls survive (num_min={}, purity={})",
            set.config.num_min, set.config.purity_threshold
        )));
    }
    Ok(())
}

fn train(ctx: &Ctx, a: &TrainArgs) -> Result<(), Failure> {
    let spec: ModelSpec = a.model.parse().map_err(Failure::Usage)?;
    let method: UniversumMethod = a.universum_method.into();
    if !spec.rbf && a.sigma.is_some() {
        return Err(Failure::Usage("--sigma needs a kernel model (suffix -rbf)".into()));
    }
    if !spec.uses_balls() && (a.num_min.is_some() || a.purity.is_some()) {
        return Err(Failure::Usage("--num-min and --purity apply to gbutsvm only".into()));
    }
    match (spec.kind, &a.universum_data, method) {
        (ModelKind::Tsvm, Some(_), _) => {
            return Err(Failure::Usage("tsvm takes no Universum; drop --universum-data".into()))
        }
        (ModelKind::Utsvm | ModelKind::Gbutsvm, None, UniversumMethod::Split) => {
            return Err(Failure::Usage(
                "--universum-data is required unless --universum-method average".into(),
            ))
        }
        (_, Some(_), UniversumMethod::Average) => {
            return Err(Failure::Usage("--universum-data conflicts with --universum-method average".into()))
        }
        _ => {}
    }
    let kernel = if spec.rbf {
        Kernel::Rbf {
            sigma: a.sigma.unwrap_or(1.0),
        }
    } else {
        Kernel::Linear
    };
    let hyper = Hyperparams {
        c1: a.c1.unwrap_or(a.c),
        c2: a.c2.unwrap_or(a.c),
        cu: a.cu.unwrap_or(a.c),
        epsilon: a.epsilon,
        kernel,
    };
    hyper.validate()?;
    let mut opts = TrainOptions {
        delta: a.delta,
        normalized: a.normalized,
        require_convergence: !a.allow_unconverged,
        ..Default::default()
    };
    opts.solver.tol = a.tol;
    opts.solver.max_iter = a.max_iter;

    let d = load_csv(ctx.resolve(&a.data), &a.csv.options())?;
    let univ = match &a.universum_data {
        Some(p) => Some(load_universum(&ctx.resolve(p), &a.csv, &d)?),
        None => None,
    };
    let inputs = if spec.uses_balls() {
        let cfg = BallGenConfig {
            num_min: a.num_min.unwrap_or(1),
            purity_threshold: a.purity.unwrap_or(1.0),
            radius_mode: a.radius_mode.into(),
            seed: ctx.seed(),
            ..Default::default()
        };
        let balls = generate_balls(&d, &cfg)?;
        check_classes(&balls)?;
        let u = match &univ {
            Some(u) => Some(universum_balls_split(u, &cfg)?),
            None => Some(averaged_universum(&balls)?),
        };
        eprintln!("{}", ball_summary(&balls));
        TrainInputs::from_balls(&balls, u.as_ref())?
    } else {
        let u = match (spec.kind, &univ) {
            (ModelKind::Tsvm, _) => None,
            (_, Some(u)) => Some(u.features().clone()),
            (_, None) => {
                let a_rows = d.class_matrix(Label::Positive);
                let b_rows = d.class_matrix(Label::Negative);
                let n = a_rows.nrows().min(b_rows.nrows());
                Some(DMatrix::from_fn(n, d.n_features(), |i, j| (a_rows[(i, j)] + b_rows[(i, j)]) / 2.0))
            }
        };
        let mut t = TrainInputs::from_points(&d, u.as_ref())?;
        t.kind = spec.kind;
        t
    };

    let start = Instant::now();
    let prepared = PreparedProblem::new(&inputs, kernel, opts.delta)?;
    let mut model = prepared.fit(&hyper, &opts)?;
    let seconds = start.elapsed().as_secs_f64();
    model.scaler = d.scaler().cloned();
    model.positive_label = d.positive_label().map(str::to_string);

    if let Some(dir) = &a.dump_qp {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))?;
        for (plane, name) in [(Plane::Positive, "qp_plus.csv"), (Plane::Negative, "qp_minus.csv")] {
            let qp = prepared.dual(plane, &hyper)?;
            let sol = solve_box_qp(&qp, &opts.solver)?;
            write_diagnostic_csv(&dir.join(name), &qp, &sol)?;
        }
    }

    write_output(&a.out, &model.to_text())?;
    let train_acc = accuracy(&model.predict(d.features())?, d.labels())?;
    let diag = &model.diagnostics;
    println!(
        "trained {} ({}) on {} rows: +{} -{} U{}; kkt {:.2e}/{:.2e}; {:.4} s; training accuracy {:.2}%",
        spec,
        kernel,
        d.n_samples(),
        inputs.a.nrows(),
        inputs.b.nrows(),
        inputs.u.nrows(),
        diag.kkt_plus,
        diag.kkt_minus,
        seconds,
        train_acc
    );
    Ok(())
}

fn predict(ctx: &Ctx, a: &PredictArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(ctx.resolve(&a.model))
        .map_err(|e| Failure::Io(format!("cannot read {}: {e}", a.model.display())))?;
    let model = gbtsvm::models::TrainedModel::from_text(&text)?;
    let path = ctx.resolve(&a.data);
    let (x, labels) = if a.no_labels {
        (load_features_csv(&path, a.header)?, None)
    } else {
        let opts = CsvOptions {
            label_column: a.label_column.parse().unwrap_or(LabelColumn::Last),
            positive_label: a.positive_label.clone().or_else(|| model.positive_label.clone()),
            has_header: a.header,
            scale: false,
        };
        let d = load_csv(&path, &opts)?;
        (d.features().clone(), Some(d.labels().to_vec()))
    };
    let mut out = String::from("row,label,delta_plus,delta_minus\n");
    let mut predicted = Vec::with_capacity(x.nrows());
    for (i, row) in x.row_iter().enumerate() {
        let raw: Vec<f64> = row.iter().copied().collect();
        let z = model.prepare_input(&raw);
        let (dp, dm) = model.decision_values(&z)?;
        let label = model.classify(&z)?;
        predicted.push(label);
        out.push_str(&format!("{i},{},{dp:.12e},{dm:.12e}\n", label.sign()));
    }
    emit(a.out.as_deref(), &out)?;
    if let Some(labels) = labels {
        eprintln!("accuracy: {:.2}% on {} rows", accuracy(&predicted, &labels)?, labels.len());
    }
    Ok(())
}

fn bench(ctx: &Ctx, a: &BenchArgs) -> Result<(), Failure> {
    let path = ctx.resolve(&a.config);
    let mut cfg = ExperimentConfig::from_path(&path)?;
    if let Some(seed) = ctx.seed {
        cfg.split.seed = seed;
    }
    let fallback = ctx
        .data_dir
        .clone()
        .or_else(|| path.parent().map(Path::to_path_buf));
    let records = cfg.run(fallback.as_deref())?;
    let files = emit_report(&records, &a.out)?;
    for r in records.iter().filter(|r| r.failed()) {
        log::warn!("{} / {}: {}", r.dataset, r.model, r.failure.as_deref().unwrap_or(""));
    }
    let shown = match a.format {
        Format::Csv => &files.accuracy_matrix,
        Format::Md => &files.report,
    };
    let text = std::fs::read_to_string(shown)
        .map_err(|e| Failure::Io(format!("cannot read {}: {e}", shown.display())))?;
    emit(None, &text)
}

fn stats(ctx: &Ctx, a: &StatsArgs) -> Result<(), Failure> {
    let m = AccuracyMatrix::from_path(ctx.resolve(&a.matrix))?;
    let reference = match &a.reference {
        Some(name) => m.model_index(name)?,
        None => 0,
    };
    let report = StatReport::compute(&m, reference, a.tie_tol)?;
    let text = match a.format {
        Format::Csv => report.to_csv(),
        Format::Md => report.to_markdown(),
    };
    emit(a.out.as_deref(), &text)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot size the worker pool: {e}")))?;
    }
    let ctx = Ctx {
        seed: cli.seed,
        data_dir: cli.data_dir,
    };
    match &cli.command {
        Command::GenBalls(a) => gen_balls(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Predict(a) => predict(&ctx, a),
        Command::Bench(a) => bench(&ctx, a),
        Command::Stats(a) => stats(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
