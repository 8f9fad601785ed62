//! Box-constrained convex quadratic programming and regularized Gram solves.
//!
//! Problems are always in minimization form:
//!
//! ```text
//!     minimize    1/2 x' Q x + q' x
//!     subject to  lower <= x <= upper
//! ```
//!
//! with `Q` symmetric positive semidefinite. The main solver is a primal
//! active-set method with dense solves on the free block; a projected
//! gradient method with Barzilai-Borwein steps covers very large free sets.
//! Both only take steps that lower the objective.

use std::io::Write;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("lower bound exceeds upper bound at index {0}")]
    InvalidBounds(usize),
    #[error("quadratic term is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("tolerance must be positive and finite")]
    InvalidTolerance,
    #[error("regularization must be positive and finite (got {0})")]
    InvalidDelta(f64),
    #[error("cholesky factorization failed with delta = {delta:e}")]
    FactorizationFailed { delta: f64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxQp {
    quad: DMatrix<f64>,
    linear: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxQp {
    pub fn new(
        quad: DMatrix<f64>,
        linear: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = linear.len();
        if quad.nrows() != n || quad.ncols() != n || lower.len() != n || upper.len() != n {
            return Err(QpError::Dimension(format!(
                "Q is {}x{}, q has {n}, bounds have {} and {}",
                quad.nrows(),
                quad.ncols(),
                lower.len(),
                upper.len()
            )));
        }
        if quad.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("Q"));
        }
        if linear.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("q"));
        }
        if lower.iter().chain(upper.iter()).any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("bounds"));
        }
        if let Some(i) = (0..n).find(|&i| lower[i] > upper[i]) {
            return Err(QpError::InvalidBounds(i));
        }
        let scale = 1.0 + quad.amax();
        for i in 0..n {
            for j in i + 1..n {
                if (quad[(i, j)] - quad[(j, i)]).abs() > 1e-10 * scale {
                    return Err(QpError::Asymmetric(i, j));
                }
            }
        }
        Ok(BoxQp {
            quad,
            linear,
            lower,
            upper,
        })
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn quad(&self) -> &DMatrix<f64> {
        &self.quad
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.quad * x)) + self.linear.dot(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.quad * x + &self.linear
    }

    pub fn project(&self, x: &mut DVector<f64>) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn is_feasible(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim() && (0..x.len()).all(|i| self.lower[i] <= x[i] && x[i] <= self.upper[i])
    }

    /// `|| x - clip(x - grad f(x)) ||_inf`, zero exactly at a KKT point.
    pub fn kkt_residual(&self, x: &DVector<f64>) -> f64 {
        residual_with(self, x, &self.gradient(x))
    }
}

fn residual_with(p: &BoxQp, x: &DVector<f64>, g: &DVector<f64>) -> f64 {
    (0..x.len())
        .map(|i| (x[i] - (x[i] - g[i]).clamp(p.lower[i], p.upper[i])).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Keep the objective value after every iteration.
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 10_000,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective per iteration, starting with the initial point (empty
    /// unless requested).
    pub trace: Vec<f64>,
}

/// Upper bound on the largest eigenvalue (Gershgorin).
fn gershgorin_bound(q: &DMatrix<f64>) -> f64 {
    q.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest `t >= 0` keeping `x + t d` inside the box on the coordinates in `idx`.
fn max_feasible_step(p: &BoxQp, x: &DVector<f64>, d: &[f64], idx: &[usize]) -> f64 {
    let mut t = f64::INFINITY;
    for (k, &i) in idx.iter().enumerate() {
        if d[k] > 0.0 {
            t = t.min((p.upper[i] - x[i]) / d[k]);
        } else if d[k] < 0.0 {
            t = t.min((p.lower[i] - x[i]) / d[k]);
        }
    }
    t.max(0.0)
}

/// Conjugate gradient on the face where `free` variables move and the rest
/// stay fixed. Stops at the first bound it hits; every accepted step lowers
/// the objective.
fn face_cg(p: &BoxQp, x: &mut DVector<f64>, g: &DVector<f64>, free: &[usize], tol: f64) {
    let q = &p.quad;
    let mut r: Vec<f64> = free.iter().map(|&i| -g[i]).collect();
    let mut dir = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let curvature_floor = 1e-14 * (1.0 + q.amax());
    for _ in 0..free.len().min(500) + 1 {
        if rr.sqrt() <= 1e-3 * tol {
            break;
        }
        let qd: Vec<f64> = free
            .iter()
            .map(|&i| free.iter().zip(&dir).map(|(&j, dj)| q[(i, j)] * dj).sum())
            .collect();
        let dqd: f64 = dir.iter().zip(&qd).map(|(a, b)| a * b).sum();
        let dd: f64 = dir.iter().map(|v| v * v).sum();
        let t_max = max_feasible_step(p, x, &dir, free);
        let t_exact = if dqd > curvature_floor * dd { rr / dqd } else { f64::INFINITY };
        let t = t_exact.min(t_max);
        if !t.is_finite() {
            break;
        }
        for (k, &i) in free.iter().enumerate() {
            x[i] = (x[i] + t * dir[k]).clamp(p.lower[i], p.upper[i]);
        }
        if t < t_exact {
            break;
        }
        for (rk, qk) in r.iter_mut().zip(&qd) {
            *rk -= t * qk;
        }
        let rr_next: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_next / rr;
        for (dk, rk) in dir.iter_mut().zip(&r) {
            *dk = rk + beta * *dk;
        }
        rr = rr_next;
    }
}

fn free_set(p: &BoxQp, x: &DVector<f64>) -> Vec<usize> {
    (0..x.len())
        .filter(|&i| p.lower[i] < x[i] && x[i] < p.upper[i])
        .collect()
}

/// Free-set size above which the solver switches from active-set steps to
/// gradient projection with conjugate gradients on the face.
const ACTIVE_SET_MAX_FREE: usize = 2500;

/// Newton direction on the free block, `(Q_FF + tau I) d = -g_F`, with a tiny
/// shift so that singular blocks yield long steps along their null space.
fn free_block_direction(p: &BoxQp, g: &DVector<f64>, free: &[usize]) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let qff = p.quad.select_rows(free).select_columns(free);
    let scale = 1.0 + qff.diagonal().amax();
    let mut tau = 1e-14 * scale;
    loop {
        let shifted = &qff + DMatrix::identity(free.len(), free.len()) * tau;
        if let Some(c) = Cholesky::new(shifted) {
            let neg_gf = DVector::from_iterator(free.len(), free.iter().map(|&i| -g[i]));
            return Some((c.solve(&neg_gf), qff));
        }
        tau *= 100.0;
        if tau > 1e-4 * scale {
            return None;
        }
    }
}

/// Primal active-set iterations from a feasible `x`. Each iteration either
/// moves the free block toward its minimizer (stopping at the first bound
/// met, which joins the active set) or, once the free block is optimal,
/// releases the bound with the largest multiplier violation.
///
/// Returns `false` if it cannot make progress; the caller then falls back
/// to gradient projection.
fn active_set_phase(
    p: &BoxQp,
    x: &mut DVector<f64>,
    opts: &SolverOptions,
    iterations: &mut usize,
    trace: &mut Vec<f64>,
) -> bool {
    let n = x.len();
    let mut g = p.gradient(x);
    while *iterations < opts.max_iter {
        if residual_with(p, x, &g) <= opts.tol {
            return true;
        }
        *iterations += 1;
        let mut free = free_set(p, x);
        if free.len() > ACTIVE_SET_MAX_FREE {
            return false;
        }
        let free_grad = free.iter().map(|&i| g[i].abs()).fold(0.0, f64::max);
        // worst multiplier violation among variables held at a bound
        let violator = (0..n)
            .filter(|&i| p.lower[i] < p.upper[i])
            .filter_map(|i| {
                if x[i] <= p.lower[i] && g[i] < 0.0 {
                    Some((i, -g[i]))
                } else if x[i] >= p.upper[i] && g[i] > 0.0 {
                    Some((i, g[i]))
                } else {
                    None
                }
            })
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let mut released = None;
        if let Some((i, v)) = violator {
            if free_grad <= opts.tol || free_grad <= 1e-2 * v {
                let pos = free.partition_point(|&j| j < i);
                free.insert(pos, i);
                released = Some(i);
            }
        }
        if free.is_empty() {
            return false;
        }
        let Some((d, qff)) = free_block_direction(p, &g, &free) else {
            return false;
        };
        if let Some(i) = released {
            // the released variable has to move off its bound
            let k = free.partition_point(|&j| j < i);
            let inward = if x[i] <= p.lower[i] { d[k] > 0.0 } else { d[k] < 0.0 };
            if !inward {
                return false;
            }
        }
        let slope: f64 = free.iter().zip(d.iter()).map(|(&i, dk)| g[i] * dk).sum();
        if !(slope < 0.0) {
            return false;
        }
        let curvature = d.dot(&(&qff * &d));
        let t_exact = if curvature > 0.0 { -slope / curvature } else { f64::INFINITY };
        let t_max = max_feasible_step(p, x, d.as_slice(), &free);
        let t = t_exact.min(t_max);
        if !(t.is_finite() && t > 0.0) {
            return false;
        }
        for (k, &i) in free.iter().enumerate() {
            let to_bound = if d[k] > 0.0 {
                (p.upper[i] - x[i]) / d[k]
            } else if d[k] < 0.0 {
                (p.lower[i] - x[i]) / d[k]
            } else {
                f64::INFINITY
            };
            x[i] = if t_max <= t_exact && to_bound <= t * (1.0 + 1e-12) {
                // blocking variable lands exactly on its bound
                if d[k] > 0.0 { p.upper[i] } else { p.lower[i] }
            } else {
                (x[i] + t * d[k]).clamp(p.lower[i], p.upper[i])
            };
        }
        g = p.gradient(x);
        if opts.record_trace {
            trace.push(p.objective(x));
        }
    }
    false
}

/// Gradient projection steps (Barzilai-Borwein length, exact line search on
/// the projected segment), with conjugate gradients on the face whenever
/// the free set repeats. Used for very large free sets and as a fallback.
fn projection_phase(p: &BoxQp, x: &mut DVector<f64>, opts: &SolverOptions, iterations: &mut usize, trace: &mut Vec<f64>) -> bool {
    let n = x.len();
    let lip = gershgorin_bound(&p.quad);
    let (alpha_min, alpha_max) = (1e-12, 1e12);
    let mut alpha = if lip > 0.0 { 1.0 / lip } else { 1.0 };
    let mut prev_free: Option<Vec<usize>> = None;
    let mut d = DVector::zeros(n);
    let mut g = p.gradient(x);
    while *iterations < opts.max_iter {
        if residual_with(p, x, &g) <= opts.tol {
            return true;
        }
        *iterations += 1;
        for i in 0..n {
            d[i] = (x[i] - alpha * g[i]).clamp(p.lower[i], p.upper[i]) - x[i];
        }
        let gd = g.dot(&d);
        if gd < 0.0 {
            let qd = &p.quad * &d;
            let dqd = d.dot(&qd);
            let t = if dqd > 0.0 { (-gd / dqd).min(1.0) } else { 1.0 };
            x.axpy(t, &d, 1.0);
            p.project(x);
            let sy = t * t * dqd;
            let ss = t * t * d.norm_squared();
            alpha = if sy > 0.0 { (ss / sy).clamp(alpha_min, alpha_max) } else { alpha_max };
        } else {
            // d = 0 or numerically flat: fall back to the safe step
            alpha = if lip > 0.0 { 1.0 / lip } else { 1.0 };
        }
        g = p.gradient(x);
        let free = free_set(p, x);
        if !free.is_empty() && prev_free.as_ref() == Some(&free) {
            face_cg(p, x, &g, &free, opts.tol);
            g = p.gradient(x);
        }
        prev_free = Some(free);
        if opts.record_trace {
            trace.push(p.objective(x));
        }
    }
    false
}

/// Minimize a box-constrained convex quadratic.
///
/// A primal active-set method with exact (lightly regularized) solves on
/// the free block does the work; gradient projection with
/// Barzilai-Borwein steps takes over for very large free sets or if the
/// active-set iteration stalls numerically. Returns the final iterate even
/// when the iteration limit is hit, with `converged = false`. The iterate is
/// always feasible and the objective never increases.
pub fn solve_box_qp(p: &BoxQp, opts: &SolverOptions) -> Result<QpSolution, QpError> {
    if !(opts.tol > 0.0 && opts.tol.is_finite()) {
        return Err(QpError::InvalidTolerance);
    }
    let n = p.dim();
    let mut x = DVector::zeros(n);
    p.project(&mut x);
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(p.objective(&x));
    }
    let mut iterations = 0;
    let mut converged = active_set_phase(p, &mut x, opts, &mut iterations, &mut trace);
    if !converged {
        converged = projection_phase(p, &mut x, opts, &mut iterations, &mut trace);
    }
    let kkt_residual = p.kkt_residual(&x);
    converged = converged || kkt_residual <= opts.tol;
    Ok(QpSolution {
        objective: p.objective(&x),
        x,
        kkt_residual,
        iterations,
        converged,
        trace,
    })
}

/// Cholesky factor of `M'M + delta I`.
#[derive(Debug, Clone)]
pub struct GramFactor {
    rows: usize,
    cols: usize,
    delta: f64,
    chol: Cholesky<f64, Dyn>,
}

/// Default regularization `1e-6 * (1 + trace(M'M) / cols)`.
pub fn default_delta(gram: &DMatrix<f64>) -> f64 {
    let n = gram.ncols().max(1) as f64;
    1e-6 * (1.0 + gram.trace() / n)
}

/// Factor `M'M + delta I`.
///
/// `delta == 0` selects the default regularization and escalates it tenfold
/// on failure, up to `1e-2` times the trace scale. An explicit positive
/// `delta` is used as given.
pub fn gram_factor(m: &DMatrix<f64>, delta: f64) -> Result<GramFactor, QpError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(QpError::NonFinite("M"));
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(QpError::InvalidDelta(delta));
    }
    let gram = m.transpose() * m;
    let factor = |d: f64| {
        let mut a = gram.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += d;
        }
        Cholesky::new(a).map(|chol| GramFactor {
            rows: m.nrows(),
            cols: m.ncols(),
            delta: d,
            chol,
        })
    };
    if delta > 0.0 {
        return factor(delta).ok_or(QpError::FactorizationFailed { delta });
    }
    let base = default_delta(&gram);
    let mut d = base;
    loop {
        if let Some(f) = factor(d) {
            return Ok(f);
        }
        if d >= base * 1e4 {
            return Err(QpError::FactorizationFailed { delta: d });
        }
        d *= 10.0;
    }
}

impl GramFactor {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Shape of the matrix `M` that was factored.
    pub fn source_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn dim(&self) -> usize {
        self.cols
    }

    /// The lower-triangular factor `L` with `L L' = M'M + delta I`.
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `L^-1 V'` for a matrix `V` with `cols` columns.
    pub fn whiten(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>, QpError> {
        if v.ncols() != self.cols {
            return Err(QpError::Dimension(format!(
                "V has {} columns, factor has dimension {}",
                v.ncols(),
                self.cols
            )));
        }
        let mut w = v.transpose();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut w);
        Ok(w)
    }

    /// `V (M'M + delta I)^-1 V'`, assembled as `W'W` with `W = L^-1 V'`.
    pub fn quadratic_form(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>, QpError> {
        let w = self.whiten(v)?;
        let q = w.transpose() * &w;
        Ok((&q + q.transpose()) * 0.5)
    }
}

/// `(M'M + delta I)^-1 rhs` by two triangular solves.
pub fn gram_solve(f: &GramFactor, rhs: &DVector<f64>) -> Result<DVector<f64>, QpError> {
    if rhs.len() != f.cols {
        return Err(QpError::Dimension(format!(
            "rhs has {} entries, factor has dimension {}",
            rhs.len(),
            f.cols
        )));
    }
    Ok(f.chol.solve(rhs))
}

/// Write `(Q, q, bounds, x)` as CSV rows `i,q,lower,upper,x,Q_i0..Q_i(n-1)`.
pub fn write_diagnostic_csv(path: &Path, p: &BoxQp, sol: &QpSolution) -> Result<(), QpError> {
    let mut out = Vec::new();
    write!(out, "i,q,lower,upper,x")?;
    for j in 0..p.dim() {
        write!(out, ",Q{j}")?;
    }
    writeln!(out)?;
    for i in 0..p.dim() {
        write!(out, "{i},{},{},{},{}", p.linear[i], p.lower[i], p.upper[i], sol.x[i])?;
        for j in 0..p.dim() {
            write!(out, ",{}", p.quad[(i, j)])?;
        }
        writeln!(out)?;
    }
    crate::io::write_atomic(path, &out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn qp1(q: f64, c: f64, lo: f64, hi: f64) -> BoxQp {
        BoxQp::new(
            DMatrix::from_element(1, 1, q),
            DVector::from_element(1, c),
            DVector::from_element(1, lo),
            DVector::from_element(1, hi),
        )
        .unwrap()
    }

    #[test]
    fn interior_optimum() {
        let s = solve_box_qp(&qp1(1.0, -1.0, 0.0, 10.0), &SolverOptions::default()).unwrap();
        assert!(s.converged);
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.objective, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn clamped_at_upper() {
        let s = solve_box_qp(&qp1(1.0, -4.0, 0.0, 2.0), &SolverOptions::default()).unwrap();
        assert!(s.converged);
        assert_eq!(s.x[0], 2.0);
    }

    #[test]
    fn zero_quadratic_goes_to_bounds() {
        let p = BoxQp::new(
            DMatrix::zeros(2, 2),
            DVector::from_vec(vec![1.0, -1.0]),
            DVector::from_vec(vec![-1.0, -1.0]),
            DVector::from_vec(vec![3.0, 3.0]),
        )
        .unwrap();
        let s = solve_box_qp(&p, &SolverOptions::default()).unwrap();
        assert!(s.converged);
        assert_eq!(s.x.as_slice(), &[-1.0, 3.0]);
    }

    #[test]
    fn validation_errors() {
        let bad = BoxQp::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            DVector::zeros(2),
            DVector::zeros(2),
            DVector::from_element(2, 1.0),
        );
        assert!(matches!(bad, Err(QpError::Asymmetric(0, 1))));
        let bad = BoxQp::new(
            DMatrix::identity(1, 1),
            DVector::from_element(1, f64::NAN),
            DVector::zeros(1),
            DVector::zeros(1),
        );
        assert!(matches!(bad, Err(QpError::NonFinite("q"))));
        assert!(matches!(
            BoxQp::new(DMatrix::identity(1, 1), DVector::zeros(1), DVector::from_element(1, 1.0), DVector::zeros(1)),
            Err(QpError::InvalidBounds(0))
        ));
        let tol = SolverOptions { tol: 0.0, ..Default::default() };
        assert!(solve_box_qp(&qp1(1.0, 0.0, 0.0, 1.0), &tol).is_err());
    }

    #[test]
    fn iteration_limit_reports_unconverged() {
        // every coordinate has to leave its bound, one per active-set step
        let q = DMatrix::from_fn(8, 8, |i, j| if i == j { 2.0 } else { 0.1 });
        let p = BoxQp::new(q, DVector::from_element(8, -1.0), DVector::zeros(8), DVector::from_element(8, 1e6)).unwrap();
        let s = solve_box_qp(&p, &SolverOptions { max_iter: 1, ..Default::default() }).unwrap();
        assert!(!s.converged);
        assert!(p.is_feasible(&s.x));
    }

    #[test]
    fn gram_identity_uses_default_delta() {
        let f = gram_factor(&DMatrix::identity(2, 2), 0.0).unwrap();
        let expected = 1e-6 * (1.0 + 1.0);
        assert_abs_diff_eq!(f.delta(), expected, epsilon = 1e-18);
        let l = f.lower();
        assert_abs_diff_eq!(l[(0, 0)], (1.0 + expected).sqrt(), epsilon = 1e-15);
        assert_eq!(l[(1, 0)], 0.0);
    }

    #[test]
    fn gram_rescues_rank_deficiency() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        assert!(gram_factor(&m, 1e-6).is_ok());
        assert!(matches!(gram_factor(&m, -1.0), Err(QpError::InvalidDelta(_))));
    }

    #[test]
    fn gram_solve_zero_and_mismatch() {
        let f = gram_factor(&DMatrix::identity(3, 3), 0.0).unwrap();
        assert_eq!(gram_solve(&f, &DVector::zeros(3)).unwrap(), DVector::zeros(3));
        assert!(gram_solve(&f, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn orthonormal_columns_return_rhs() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let m = DMatrix::from_row_slice(2, 2, &[s, s, s, -s]);
        let f = gram_factor(&m, 1e-12).unwrap();
        let rhs = DVector::from_vec(vec![0.3, -2.0]);
        let x = gram_solve(&f, &rhs).unwrap();
        assert_abs_diff_eq!(x, rhs, epsilon = 1e-10);
    }
}
