//! Twin SVM training: TSVM, Universum TSVM and the granular-ball Universum
//! TSVM, with linear or RBF kernels.
//!
//! Each model fits two nonparallel hyperplanes `f+(z) = w+'z + b+` and
//! `f-(z) = w-'z + b-`. With `H = [A e]`, `G = [B e]`, `O = [U e]` built
//! from positive, negative and Universum rows (ball centers for the
//! granular variant), the positive plane comes from the dual
//!
//! ```text
//!     max  -1/2 (G'a - O'm)' (H'H)^-1 (G'a - O'm) + (e - R-)'a + ((eps-1)e - Ru)'m
//!     s.t. 0 <= a <= c1,  0 <= m <= cu
//! ```
//!
//! and `theta+ = -(H'H)^-1 (G'a - O'm)`. The negative plane mirrors it with
//! the roles of `A` and `B` exchanged and `theta- = (G'G)^-1 (H'l - O'n)`.
//! Point-based TSVM and U-TSVM are the zero-radius special cases; an empty
//! Universum drops the `m` block entirely.
//!
//! `H'H` is singular whenever there are fewer rows than columns, so every
//! inverse is taken through a regularized Cholesky factor (see
//! [`crate::qp::gram_factor`]).

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::data::{Dataset, Label, MinMaxScaler};
use crate::granular::{BallLabel, BallSet};
use crate::qp::{gram_factor, gram_solve, solve_box_qp, BoxQp, GramFactor, QpError, QpSolution, SolverOptions};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("invalid training input: {0}")]
    InvalidInput(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("{side} dual did not converge: kkt residual {residual:e} after {iterations} iterations")]
    NotConverged {
        side: &'static str,
        residual: f64,
        iterations: usize,
    },
    #[error("model file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("dimension mismatch: model expects {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    Rbf { sigma: f64 },
}

/// `exp(-||a - b||^2 / (2 sigma^2))`.
pub fn rbf_kernel(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { sigma } => rbf_kernel(a, b, sigma),
        }
    }

    /// Matrix of `K(rows_i, reference_j)`.
    pub fn matrix(&self, rows: &DMatrix<f64>, reference: &DMatrix<f64>) -> DMatrix<f64> {
        let r: Vec<Vec<f64>> = row_vecs(rows);
        let c: Vec<Vec<f64>> = row_vecs(reference);
        DMatrix::from_fn(r.len(), c.len(), |i, j| self.eval(&r[i], &c[j]))
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Kernel::Linear)
    }
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Kernel::Linear => write!(f, "linear"),
            Kernel::Rbf { sigma } => write!(f, "rbf(sigma={sigma})"),
        }
    }
}

fn row_vecs(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Tsvm,
    Utsvm,
    Gbutsvm,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Tsvm => "tsvm",
            ModelKind::Utsvm => "utsvm",
            ModelKind::Gbutsvm => "gbutsvm",
        }
    }

    pub fn uses_universum(&self) -> bool {
        !matches!(self, ModelKind::Tsvm)
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "tsvm" => Ok(ModelKind::Tsvm),
            "utsvm" => Ok(ModelKind::Utsvm),
            "gbutsvm" => Ok(ModelKind::Gbutsvm),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub c1: f64,
    pub c2: f64,
    pub cu: f64,
    pub epsilon: f64,
    pub kernel: Kernel,
}

impl Hyperparams {
    /// `c1 = c2 = cu = c`.
    pub fn tied(c: f64, epsilon: f64, kernel: Kernel) -> Self {
        Hyperparams {
            c1: c,
            c2: c,
            cu: c,
            epsilon,
            kernel,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [("c1", self.c1), ("c2", self.c2), ("cu", self.cu)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ModelError::InvalidHyperparams(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if !self.epsilon.is_finite() {
            return Err(ModelError::InvalidHyperparams("epsilon must be finite".into()));
        }
        if let Kernel::Rbf { sigma } = self.kernel {
            if !(sigma.is_finite() && sigma > 0.0) {
                return Err(ModelError::InvalidHyperparams(format!("sigma = {sigma} must be > 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            log::warn!("epsilon = {} lies outside the usual [0, 1] range", self.epsilon);
        }
        Ok(())
    }
}

/// Rows and radii fed to a twin SVM: positive, negative and Universum.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainInputs {
    pub kind: ModelKind,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub r_plus: DVector<f64>,
    pub r_minus: DVector<f64>,
    pub r_univ: DVector<f64>,
}

impl TrainInputs {
    pub fn new(
        kind: ModelKind,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        u: DMatrix<f64>,
        r_plus: DVector<f64>,
        r_minus: DVector<f64>,
        r_univ: DVector<f64>,
    ) -> Result<Self, ModelError> {
        let t = TrainInputs {
            kind,
            a,
            b,
            u,
            r_plus,
            r_minus,
            r_univ,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidInput(m.to_string()));
        if self.a.nrows() == 0 || self.b.nrows() == 0 {
            return bad("both classes need at least one row (degenerate single-class input)");
        }
        let d = self.a.ncols();
        if self.b.ncols() != d || (self.u.nrows() > 0 && self.u.ncols() != d) {
            return bad("positive, negative and Universum rows differ in dimension");
        }
        if self.r_plus.len() != self.a.nrows()
            || self.r_minus.len() != self.b.nrows()
            || self.r_univ.len() != self.u.nrows()
        {
            return bad("radius vector length does not match its row count");
        }
        let radii = self.r_plus.iter().chain(self.r_minus.iter()).chain(self.r_univ.iter());
        for r in radii {
            if !(r.is_finite() && *r >= 0.0) {
                return bad("radii must be finite and non-negative");
            }
        }
        for m in [&self.a, &self.b, &self.u] {
            if m.iter().any(|v| !v.is_finite()) {
                return bad("non-finite feature value");
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// Point-based inputs (all radii zero). `universum = None` gives TSVM.
    pub fn from_points(train: &Dataset, universum: Option<&DMatrix<f64>>) -> Result<Self, ModelError> {
        let a = train.class_matrix(Label::Positive);
        let b = train.class_matrix(Label::Negative);
        let (kind, u) = match universum {
            Some(u) => (ModelKind::Utsvm, u.clone()),
            None => (ModelKind::Tsvm, DMatrix::zeros(0, train.n_features())),
        };
        let (m1, m2, nu) = (a.nrows(), b.nrows(), u.nrows());
        TrainInputs::new(kind, a, b, u, DVector::zeros(m1), DVector::zeros(m2), DVector::zeros(nu))
    }

    /// Ball-based inputs from labeled balls and optional Universum balls.
    pub fn from_balls(balls: &BallSet, universum: Option<&BallSet>) -> Result<Self, ModelError> {
        let (u, r_univ) = match universum {
            Some(us) => {
                let all: Vec<_> = us.balls.iter().collect();
                (
                    DMatrix::from_fn(all.len(), us.dim, |i, j| all[i].center[j]),
                    DVector::from_iterator(all.len(), all.iter().map(|b| b.radius)),
                )
            }
            None => (DMatrix::zeros(0, balls.dim), DVector::zeros(0)),
        };
        TrainInputs::new(
            ModelKind::Gbutsvm,
            balls.centers(BallLabel::Positive),
            balls.centers(BallLabel::Negative),
            u,
            balls.radii(BallLabel::Positive),
            balls.radii(BallLabel::Negative),
            r_univ,
        )
    }
}

/// Which of the two twin problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plane {
    Positive,
    Negative,
}

/// One side's dual, with what is needed to recover its hyperplane.
#[derive(Debug, Clone)]
struct PreparedSide {
    factor: GramFactor,
    /// Rows `[G; -O]` (or `[H; -O]` for the negative plane).
    coupling: DMatrix<f64>,
    quad: DMatrix<f64>,
    /// `theta = sign * (M'M + delta I)^-1 coupling' x`
    sign: f64,
}

impl PreparedSide {
    fn new(own: &DMatrix<f64>, other: &DMatrix<f64>, univ: &DMatrix<f64>, sign: f64, delta: f64) -> Result<Self, ModelError> {
        let factor = gram_factor(own, delta)?;
        let mut coupling = DMatrix::zeros(other.nrows() + univ.nrows(), own.ncols());
        coupling.rows_mut(0, other.nrows()).copy_from(other);
        if univ.nrows() > 0 {
            coupling.rows_mut(other.nrows(), univ.nrows()).copy_from(&(-univ));
        }
        let quad = factor.quadratic_form(&coupling)?;
        Ok(PreparedSide {
            factor,
            coupling,
            quad,
            sign,
        })
    }

    fn recover(&self, x: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        let rhs = self.coupling.transpose() * x;
        Ok(gram_solve(&self.factor, &rhs)? * self.sign)
    }
}

fn augment(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().insert_column(m.ncols(), 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub solver: SolverOptions,
    /// Gram regularization; `0` picks the scaled default.
    pub delta: f64,
    /// Divide decision values by `||w||`.
    pub normalized: bool,
    /// Fail when either dual misses the solver tolerance.
    pub require_convergence: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            solver: SolverOptions::default(),
            delta: 0.0,
            normalized: false,
            require_convergence: true,
        }
    }
}

/// Kernel rows, Gram factors and dual Hessians for one training set. The
/// Hessians do not depend on `c1, c2, cu, eps`, so a grid search over those
/// reuses one preparation.
#[derive(Debug, Clone)]
pub struct PreparedProblem {
    kind: ModelKind,
    kernel: Kernel,
    dim: usize,
    reference: Option<DMatrix<f64>>,
    m1: usize,
    m2: usize,
    nu: usize,
    r_plus: DVector<f64>,
    r_minus: DVector<f64>,
    r_univ: DVector<f64>,
    plus: PreparedSide,
    minus: PreparedSide,
    prepare_seconds: f64,
}

impl PreparedProblem {
    pub fn new(t: &TrainInputs, kernel: Kernel, delta: f64) -> Result<Self, ModelError> {
        let start = Instant::now();
        t.validate()?;
        let (ma, mb, mu, reference) = match kernel {
            Kernel::Linear => (t.a.clone(), t.b.clone(), t.u.clone(), None),
            Kernel::Rbf { .. } => {
                let mut c = DMatrix::zeros(t.a.nrows() + t.b.nrows(), t.dim());
                c.rows_mut(0, t.a.nrows()).copy_from(&t.a);
                c.rows_mut(t.a.nrows(), t.b.nrows()).copy_from(&t.b);
                let ku = if t.u.nrows() > 0 {
                    kernel.matrix(&t.u, &c)
                } else {
                    DMatrix::zeros(0, c.nrows())
                };
                (kernel.matrix(&t.a, &c), kernel.matrix(&t.b, &c), ku, Some(c))
            }
        };
        let (h, g) = (augment(&ma), augment(&mb));
        let o = if mu.nrows() > 0 { augment(&mu) } else { DMatrix::zeros(0, h.ncols()) };
        let (plus, minus) = rayon::join(
            || PreparedSide::new(&h, &g, &o, -1.0, delta),
            || PreparedSide::new(&g, &h, &o, 1.0, delta),
        );
        Ok(PreparedProblem {
            kind: t.kind,
            kernel,
            dim: t.dim(),
            reference,
            m1: t.a.nrows(),
            m2: t.b.nrows(),
            nu: t.u.nrows(),
            r_plus: t.r_plus.clone(),
            r_minus: t.r_minus.clone(),
            r_univ: t.r_univ.clone(),
            plus: plus?,
            minus: minus?,
            prepare_seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    /// The dual of `plane` in minimization form.
    pub fn dual(&self, plane: Plane, h: &Hyperparams) -> Result<BoxQp, ModelError> {
        let (side, main_c, main_r, n_main) = match plane {
            Plane::Positive => (&self.plus, h.c1, &self.r_minus, self.m2),
            Plane::Negative => (&self.minus, h.c2, &self.r_plus, self.m1),
        };
        let n = n_main + self.nu;
        let mut linear = DVector::zeros(n);
        let mut upper = DVector::zeros(n);
        for i in 0..n_main {
            linear[i] = -(1.0 - main_r[i]);
            upper[i] = main_c;
        }
        for k in 0..self.nu {
            linear[n_main + k] = -((h.epsilon - 1.0) - self.r_univ[k]);
            upper[n_main + k] = h.cu;
        }
        Ok(BoxQp::new(side.quad.clone(), linear, DVector::zeros(n), upper)?)
    }

    /// Solve both duals for `h` and recover the hyperplanes.
    pub fn fit(&self, h: &Hyperparams, opts: &TrainOptions) -> Result<TrainedModel, ModelError> {
        h.validate()?;
        if h.kernel != self.kernel {
            return Err(ModelError::InvalidHyperparams(format!(
                "problem was prepared for kernel {}, got {}",
                self.kernel, h.kernel
            )));
        }
        let start = Instant::now();
        let (qp_plus, qp_minus) = (self.dual(Plane::Positive, h)?, self.dual(Plane::Negative, h)?);
        let (sol_plus, sol_minus) = rayon::join(
            || solve_box_qp(&qp_plus, &opts.solver),
            || solve_box_qp(&qp_minus, &opts.solver),
        );
        let (sol_plus, sol_minus) = (sol_plus?, sol_minus?);
        if opts.require_convergence {
            for (side, s) in [("positive", &sol_plus), ("negative", &sol_minus)] {
                if !s.converged {
                    return Err(ModelError::NotConverged {
                        side,
                        residual: s.kkt_residual,
                        iterations: s.iterations,
                    });
                }
            }
        }
        let theta_plus = self.plus.recover(&sol_plus.x)?;
        let theta_minus = self.minus.recover(&sol_minus.x)?;
        if theta_plus.iter().chain(theta_minus.iter()).any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidInput("recovered hyperplane is not finite".into()));
        }
        let solve_seconds = start.elapsed().as_secs_f64();

        let split = |x: &DVector<f64>, n_main: usize| {
            (
                DVector::from_iterator(n_main, x.iter().take(n_main).copied()),
                DVector::from_iterator(self.nu, x.iter().skip(n_main).copied()),
            )
        };
        let (alpha, mu) = split(&sol_plus.x, self.m2);
        let (lambda, nu) = split(&sol_minus.x, self.m1);
        Ok(TrainedModel {
            kind: self.kind,
            kernel: self.kernel,
            dim: self.dim,
            reference: self.reference.clone(),
            theta_plus,
            theta_minus,
            alpha,
            mu,
            lambda,
            nu,
            hyper: *h,
            normalized: opts.normalized,
            scaler: None,
            positive_label: None,
            diagnostics: Diagnostics::from_solutions(
                &sol_plus,
                &sol_minus,
                self.plus.factor.delta(),
                self.minus.factor.delta(),
                self.prepare_seconds,
                solve_seconds,
            ),
        })
    }

    /// `(M'M + delta I) theta + coupling' x`, which is zero at the recovered
    /// hyperplane (with the sign convention of each plane).
    pub fn stationarity_residual(&self, plane: Plane, theta: &DVector<f64>, x: &DVector<f64>) -> f64 {
        let side = match plane {
            Plane::Positive => &self.plus,
            Plane::Negative => &self.minus,
        };
        let l = side.factor.lower();
        let lhs = &l * (l.transpose() * theta);
        let coupling = side.coupling.transpose() * x;
        (lhs - coupling * side.sign).amax()
    }
}

/// Dual of the positive-plane problem in minimization form: variables
/// `(alpha, mu)`, bounds `[0, c1]` and `[0, cu]`.
pub fn assemble_dual_positive(t: &TrainInputs, h: &Hyperparams) -> Result<BoxQp, ModelError> {
    PreparedProblem::new(t, h.kernel, 0.0)?.dual(Plane::Positive, h)
}

/// Dual of the negative-plane problem: variables `(lambda, nu)`, bounds
/// `[0, c2]` and `[0, cu]`.
pub fn assemble_dual_negative(t: &TrainInputs, h: &Hyperparams) -> Result<BoxQp, ModelError> {
    PreparedProblem::new(t, h.kernel, 0.0)?.dual(Plane::Negative, h)
}

pub fn train(t: &TrainInputs, h: &Hyperparams, opts: &TrainOptions) -> Result<TrainedModel, ModelError> {
    h.validate()?;
    PreparedProblem::new(t, h.kernel, opts.delta)?.fit(h, opts)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub kkt_plus: f64,
    pub kkt_minus: f64,
    pub iterations_plus: usize,
    pub iterations_minus: usize,
    pub converged: bool,
    pub delta_plus: f64,
    pub delta_minus: f64,
    /// Kernel rows, factorization and dual assembly.
    pub prepare_seconds: f64,
    /// Both dual solves plus hyperplane recovery.
    pub solve_seconds: f64,
}

impl Diagnostics {
    fn from_solutions(p: &QpSolution, m: &QpSolution, dp: f64, dm: f64, prepare: f64, solve: f64) -> Self {
        Diagnostics {
            kkt_plus: p.kkt_residual,
            kkt_minus: m.kkt_residual,
            iterations_plus: p.iterations,
            iterations_minus: m.iterations,
            converged: p.converged && m.converged,
            delta_plus: dp,
            delta_minus: dm,
            prepare_seconds: prepare,
            solve_seconds: solve,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub kernel: Kernel,
    /// Input dimension.
    pub dim: usize,
    /// Kernel reference rows `C = [A; B]` (kernel models only).
    pub reference: Option<DMatrix<f64>>,
    /// `(w+, b+)`
    pub theta_plus: DVector<f64>,
    /// `(w-, b-)`
    pub theta_minus: DVector<f64>,
    pub alpha: DVector<f64>,
    pub mu: DVector<f64>,
    pub lambda: DVector<f64>,
    pub nu: DVector<f64>,
    pub hyper: Hyperparams,
    pub normalized: bool,
    /// Scaling to apply to raw inputs before prediction.
    pub scaler: Option<MinMaxScaler>,
    /// Raw label value that training mapped to `+1`.
    pub positive_label: Option<String>,
    pub diagnostics: Diagnostics,
}

impl TrainedModel {
    fn split_theta(theta: &DVector<f64>) -> (&[f64], f64) {
        let s = theta.as_slice();
        (&s[..s.len() - 1], s[s.len() - 1])
    }

    /// Feature-space representation of `z`: `z` itself or `K(z, C)`.
    fn features(&self, z: &[f64]) -> Vec<f64> {
        match &self.reference {
            None => z.to_vec(),
            Some(c) => c
                .row_iter()
                .map(|r| {
                    let r: Vec<f64> = r.iter().copied().collect();
                    self.kernel.eval(z, &r)
                })
                .collect(),
        }
    }

    /// Signed plane values `(f+(z), f-(z))`.
    pub fn plane_values(&self, z: &[f64]) -> Result<(f64, f64), ModelError> {
        if z.len() != self.dim {
            return Err(ModelError::Dimension {
                expected: self.dim,
                got: z.len(),
            });
        }
        let phi = self.features(z);
        let eval = |theta: &DVector<f64>| {
            let (w, b) = Self::split_theta(theta);
            w.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>() + b
        };
        Ok((eval(&self.theta_plus), eval(&self.theta_minus)))
    }

    /// Distances `(delta+, delta-)` of `z` to the two planes: `|w'z + b|`,
    /// divided by `||w||` when the model is normalized.
    pub fn decision_values(&self, z: &[f64]) -> Result<(f64, f64), ModelError> {
        let (fp, fm) = self.plane_values(z)?;
        if !self.normalized {
            return Ok((fp.abs(), fm.abs()));
        }
        let norm = |theta: &DVector<f64>| {
            let (w, _) = Self::split_theta(theta);
            w.iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        Ok((fp.abs() / norm(&self.theta_plus), fm.abs() / norm(&self.theta_minus)))
    }

    /// Label of the nearer plane; exact ties go to `+1`.
    pub fn classify(&self, z: &[f64]) -> Result<Label, ModelError> {
        let (dp, dm) = self.decision_values(z)?;
        Ok(nearer_plane(dp, dm, Label::Positive))
    }

    /// Classify every row of `x` (already in model space).
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<Label>, ModelError> {
        x.row_iter()
            .map(|r| {
                let z: Vec<f64> = r.iter().copied().collect();
                self.classify(&z)
            })
            .collect()
    }

    /// Apply the stored scaler to a raw input row.
    pub fn prepare_input(&self, raw: &[f64]) -> Vec<f64> {
        let mut z = raw.to_vec();
        if let Some(s) = &self.scaler {
            s.transform_row(&mut z);
        }
        z
    }
}

/// `+1` when `delta_plus < delta_minus`, `-1` when greater, `tie` otherwise.
pub fn nearer_plane(delta_plus: f64, delta_minus: f64, tie: Label) -> Label {
    if delta_plus < delta_minus {
        Label::Positive
    } else if delta_minus < delta_plus {
        Label::Negative
    } else {
        tie
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HingeSide {
    /// Loss against the positive plane, `max(0, -1 + eps - f - r)`.
    Plus,
    /// Loss against the negative plane, `max(0, -1 + eps + f - r)`.
    Minus,
}

/// Radius-shifted Universum hinge loss of a ball with plane value `f_value`.
pub fn universum_hinge(f_value: f64, radius: f64, epsilon: f64, side: HingeSide) -> f64 {
    let signed = match side {
        HingeSide::Plus => -f_value,
        HingeSide::Minus => f_value,
    };
    (-1.0 + epsilon + signed - radius).max(0.0)
}

/// Mean feature-space distance of the members to their feature-space mean:
/// `(1/k) sum_i sqrt(K(z_i,z_i) - (2/k) sum_j K(z_i,z_j) + (1/k^2) sum_jl K(z_j,z_l))`.
pub fn kernel_ball_radius(members: &[usize], kernel: &Kernel, source: &Dataset) -> f64 {
    if members.len() <= 1 {
        return 0.0;
    }
    let rows: Vec<Vec<f64>> = members.iter().map(|&i| source.row(i)).collect();
    let k = rows.len();
    let gram = DMatrix::from_fn(k, k, |i, j| kernel.eval(&rows[i], &rows[j]));
    let total = gram.sum() / (k * k) as f64;
    let kf = k as f64;
    (0..k)
        .map(|i| {
            let row_sum: f64 = gram.row(i).sum();
            (gram[(i, i)] - 2.0 * row_sum / kf + total).max(0.0).sqrt()
        })
        .sum::<f64>()
        / kf
}

const MODEL_MAGIC: &str = "gbtsvm-model";
const MODEL_VERSION: u32 = 1;

fn push_reals(out: &mut String, tag: &str, values: &[f64]) {
    let _ = write!(out, "{tag} {}", values.len());
    for v in values {
        let _ = write!(out, " {v:.16e}");
    }
    out.push('\n');
}

/// Percent-escape whitespace and `%` so a label fits in one token.
fn escape_token(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        if ch == '%' || ch.is_whitespace() {
            let mut buf = [0u8; 4];
            for b in ch.encode_utf8(&mut buf).bytes() {
                let _ = write!(out, "%{b:02X}");
            }
        } else {
            out.push(ch);
        }
    }
    if out.is_empty() {
        out.push_str("%00");
    }
    out
}

fn unescape_token(s: &str) -> Option<String> {
    if s == "%00" {
        return Some(String::new());
    }
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = s.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, tag: &str) -> Result<(usize, Vec<&'a str>), ModelError> {
        loop {
            let Some((i, line)) = self.iter.next() else {
                return Err(ModelError::Parse {
                    line: 0,
                    reason: format!("missing `{tag}` line"),
                });
            };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts: Vec<&str> = line.split_whitespace().collect();
            if parts[0] != tag {
                return Err(ModelError::Parse {
                    line: i + 1,
                    reason: format!("expected `{tag}`, found `{}`", parts[0]),
                });
            }
            parts.remove(0);
            return Ok((i + 1, parts));
        }
    }

    fn reals(&mut self, tag: &str) -> Result<Vec<f64>, ModelError> {
        let (line, parts) = self.next(tag)?;
        let n: usize = parse_at(line, parts.first().copied())?;
        if parts.len() != n + 1 {
            return Err(ModelError::Parse {
                line,
                reason: format!("`{tag}` declares {n} values but has {}", parts.len() - 1),
            });
        }
        parts[1..].iter().map(|s| parse_at(line, Some(*s))).collect()
    }
}

fn parse_at<T: FromStr>(line: usize, s: Option<&str>) -> Result<T, ModelError> {
    let s = s.ok_or_else(|| ModelError::Parse {
        line,
        reason: "missing value".into(),
    })?;
    s.parse().map_err(|_| ModelError::Parse {
        line,
        reason: format!("cannot parse {s:?}"),
    })
}

impl TrainedModel {
    /// Versioned plain-text model file. Reals are written with 17
    /// significant digits and read back bit-exactly.
    pub fn to_text(&self) -> String {
        let mut out = format!("{MODEL_MAGIC} {MODEL_VERSION}\n");
        let _ = writeln!(out, "kind {}", self.kind.as_str());
        match self.kernel {
            Kernel::Linear => out.push_str("kernel linear\n"),
            Kernel::Rbf { sigma } => {
                let _ = writeln!(out, "kernel rbf {sigma:.16e}");
            }
        }
        let _ = writeln!(out, "dim {}", self.dim);
        let _ = writeln!(out, "normalized {}", u8::from(self.normalized));
        let h = &self.hyper;
        push_reals(&mut out, "hyper", &[h.c1, h.c2, h.cu, h.epsilon]);
        match &self.scaler {
            Some(s) => {
                push_reals(&mut out, "scaler_min", &s.min);
                push_reals(&mut out, "scaler_max", &s.max);
            }
            None => {
                push_reals(&mut out, "scaler_min", &[]);
                push_reals(&mut out, "scaler_max", &[]);
            }
        }
        match &self.positive_label {
            Some(l) => {
                let _ = writeln!(out, "positive_label {}", escape_token(l));
            }
            None => out.push_str("positive_label\n"),
        }
        push_reals(&mut out, "theta_plus", self.theta_plus.as_slice());
        push_reals(&mut out, "theta_minus", self.theta_minus.as_slice());
        push_reals(&mut out, "alpha", self.alpha.as_slice());
        push_reals(&mut out, "mu", self.mu.as_slice());
        push_reals(&mut out, "lambda", self.lambda.as_slice());
        push_reals(&mut out, "nu", self.nu.as_slice());
        match &self.reference {
            Some(c) => {
                let _ = writeln!(out, "reference_rows {}", c.nrows());
                let row_major: Vec<f64> = c.transpose().iter().copied().collect();
                push_reals(&mut out, "reference", &row_major);
            }
            None => {
                out.push_str("reference_rows 0\n");
                push_reals(&mut out, "reference", &[]);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut lines = Lines {
            iter: text.lines().enumerate(),
        };
        let (line, header) = lines.next(MODEL_MAGIC)?;
        let version: u32 = parse_at(line, header.first().copied())?;
        if version != MODEL_VERSION {
            return Err(ModelError::Parse {
                line,
                reason: format!("unsupported model version {version}"),
            });
        }
        let (line, kind) = lines.next("kind")?;
        let kind: ModelKind = kind
            .first()
            .ok_or_else(|| ModelError::Parse { line, reason: "missing kind".into() })?
            .parse()
            .map_err(|reason| ModelError::Parse { line, reason })?;
        let (line, k) = lines.next("kernel")?;
        let kernel = match k.first().copied() {
            Some("linear") => Kernel::Linear,
            Some("rbf") => Kernel::Rbf {
                sigma: parse_at(line, k.get(1).copied())?,
            },
            other => {
                return Err(ModelError::Parse {
                    line,
                    reason: format!("unknown kernel {other:?}"),
                })
            }
        };
        let (line, d) = lines.next("dim")?;
        let dim: usize = parse_at(line, d.first().copied())?;
        let (line, nm) = lines.next("normalized")?;
        let normalized = parse_at::<u8>(line, nm.first().copied())? != 0;
        let hyper = lines.reals("hyper")?;
        if hyper.len() != 4 {
            return Err(ModelError::Parse {
                line,
                reason: "hyper needs 4 values".into(),
            });
        }
        let smin = lines.reals("scaler_min")?;
        let smax = lines.reals("scaler_max")?;
        let scaler = (!smin.is_empty()).then_some(MinMaxScaler { min: smin, max: smax });
        let (line, pl) = lines.next("positive_label")?;
        let positive_label = match pl.as_slice() {
            [] => None,
            [l] => Some(unescape_token(l).ok_or_else(|| ModelError::Parse {
                line,
                reason: format!("bad escape in {l:?}"),
            })?),
            _ => {
                return Err(ModelError::Parse {
                    line,
                    reason: "positive_label takes one token".into(),
                })
            }
        };
        let vec = |v: Vec<f64>| DVector::from_vec(v);
        let theta_plus = vec(lines.reals("theta_plus")?);
        let theta_minus = vec(lines.reals("theta_minus")?);
        let alpha = vec(lines.reals("alpha")?);
        let mu = vec(lines.reals("mu")?);
        let lambda = vec(lines.reals("lambda")?);
        let nu = vec(lines.reals("nu")?);
        let (line, rr) = lines.next("reference_rows")?;
        let rows: usize = parse_at(line, rr.first().copied())?;
        let reference = lines.reals("reference")?;
        let reference = if rows > 0 {
            if reference.len() != rows * dim {
                return Err(ModelError::Parse {
                    line,
                    reason: "reference size does not match rows x dim".into(),
                });
            }
            Some(DMatrix::from_row_slice(rows, dim, &reference))
        } else {
            None
        };
        let expected = reference.as_ref().map_or(dim, |c| c.nrows()) + 1;
        if theta_plus.len() != expected || theta_minus.len() != expected {
            return Err(ModelError::Parse {
                line: 0,
                reason: format!("hyperplane vectors must have {expected} entries"),
            });
        }
        Ok(TrainedModel {
            kind,
            kernel,
            dim,
            reference,
            theta_plus,
            theta_minus,
            alpha,
            mu,
            lambda,
            nu,
            hyper: Hyperparams {
                c1: hyper[0],
                c2: hyper[1],
                cu: hyper[2],
                epsilon: hyper[3],
                kernel,
            },
            normalized,
            scaler,
            positive_label,
            diagnostics: Diagnostics::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn model_with(theta_plus: Vec<f64>, theta_minus: Vec<f64>, normalized: bool) -> TrainedModel {
        TrainedModel {
            kind: ModelKind::Tsvm,
            kernel: Kernel::Linear,
            dim: theta_plus.len() - 1,
            reference: None,
            theta_plus: DVector::from_vec(theta_plus),
            theta_minus: DVector::from_vec(theta_minus),
            alpha: DVector::zeros(0),
            mu: DVector::zeros(0),
            lambda: DVector::zeros(0),
            nu: DVector::zeros(0),
            hyper: Hyperparams::tied(1.0, 0.2, Kernel::Linear),
            normalized,
            scaler: None,
            positive_label: None,
            diagnostics: Diagnostics::default(),
        }
    }

    #[test]
    fn positive_label_survives_the_text_format() {
        for label in ["yes", "a b%c", "", "tab\there"] {
            let mut m = model_with(vec![1.0, 0.0], vec![0.0, 1.0], false);
            m.positive_label = Some(label.to_string());
            let back = TrainedModel::from_text(&m.to_text()).unwrap();
            assert_eq!(back.positive_label.as_deref(), Some(label));
        }
        let m = model_with(vec![1.0, 0.0], vec![0.0, 1.0], false);
        assert_eq!(TrainedModel::from_text(&m.to_text()).unwrap().positive_label, None);
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(universum_hinge(-1.0 + 0.3, 0.0, 0.3, HingeSide::Plus), 0.0);
        assert_abs_diff_eq!(universum_hinge(-1.0, 0.1, 0.2, HingeSide::Plus), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(universum_hinge(1.0, 0.1, 0.2, HingeSide::Minus), 0.1, epsilon = 1e-15);
        assert_eq!(universum_hinge(5.0, 0.0, 0.2, HingeSide::Plus), 0.0);
    }

    #[test]
    fn rbf_examples() {
        assert_eq!(rbf_kernel(&[1.0, 2.0], &[1.0, 2.0], 0.7), 1.0);
        let sigma: f64 = 1.3;
        // ||a - b||^2 = 2 sigma^2
        let a = [0.0, 0.0];
        let b = [sigma, sigma];
        assert_abs_diff_eq!(rbf_kernel(&a, &b, sigma), (-1.0f64).exp(), epsilon = 1e-15);
        assert_eq!(rbf_kernel(&a, &[0.3, -2.0], 0.5), rbf_kernel(&[0.3, -2.0], &a, 0.5));
    }

    #[test]
    fn distance_examples() {
        let m = model_with(vec![1.0, 0.0, -1.0], vec![0.0, 1.0, 0.0], false);
        assert_eq!(m.decision_values(&[3.0, 5.0]).unwrap().0, 2.0);
        // on the positive plane, off the negative one
        assert_eq!(m.decision_values(&[1.0, 4.0]).unwrap().0, 0.0);
        assert_eq!(m.classify(&[1.0, 4.0]).unwrap(), Label::Positive);
        assert!(m.decision_values(&[1.0]).is_err());
    }

    #[test]
    fn scaling_and_normalization() {
        let z = [0.4, -1.7];
        let m = model_with(vec![1.5, -0.5, 0.25], vec![0.3, 1.0, 0.0], false);
        let m2 = model_with(vec![3.0, -1.0, 0.5], vec![0.3, 1.0, 0.0], false);
        assert_abs_diff_eq!(m2.decision_values(&z).unwrap().0, 2.0 * m.decision_values(&z).unwrap().0, epsilon = 1e-14);
        let n = TrainedModel { normalized: true, ..m };
        let n2 = TrainedModel { normalized: true, ..m2 };
        assert_abs_diff_eq!(n.decision_values(&z).unwrap().0, n2.decision_values(&z).unwrap().0, epsilon = 1e-14);
    }

    #[test]
    fn tie_goes_positive() {
        assert_eq!(nearer_plane(0.5, 0.5, Label::Positive), Label::Positive);
        let m = model_with(vec![1.0, 0.0], vec![-1.0, 0.0], false);
        assert_eq!(m.classify(&[2.0]).unwrap(), Label::Positive);
    }

    #[test]
    fn kernel_radius_degenerate_members() {
        let d = Dataset::from_rows(
            "t",
            &[vec![1.0, 2.0], vec![1.0, 2.0], vec![5.0, 5.0]],
            vec![Label::Positive; 3],
        )
        .unwrap();
        let k = Kernel::Rbf { sigma: 1.0 };
        assert_eq!(kernel_ball_radius(&[2], &k, &d), 0.0);
        assert!(kernel_ball_radius(&[0, 1], &k, &d) < 1e-7);
    }

    #[test]
    fn input_validation() {
        let a = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let err = TrainInputs::new(
            ModelKind::Tsvm,
            a.clone(),
            DMatrix::zeros(0, 2),
            DMatrix::zeros(0, 2),
            DVector::zeros(1),
            DVector::zeros(0),
            DVector::zeros(0),
        );
        assert!(matches!(err, Err(ModelError::InvalidInput(_))));
        let err = TrainInputs::new(
            ModelKind::Gbutsvm,
            a.clone(),
            a.clone(),
            DMatrix::zeros(0, 2),
            DVector::from_element(1, -0.5),
            DVector::zeros(1),
            DVector::zeros(0),
        );
        assert!(err.is_err());
        let h = Hyperparams::tied(1.0, 0.2, Kernel::Rbf { sigma: 0.0 });
        assert!(h.validate().is_err());
    }

    #[test]
    fn model_file_rejects_garbage() {
        assert!(TrainedModel::from_text("nonsense").is_err());
        let m = model_with(vec![1.0, 0.0, -1.0], vec![0.0, 1.0, 0.0], false);
        let text = m.to_text().replace("gbtsvm-model 1", "gbtsvm-model 9");
        assert!(TrainedModel::from_text(&text).is_err());
    }
}
