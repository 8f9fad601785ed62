//! Nonparametric comparison of classifiers over a datasets x models accuracy
//! matrix.
//!
//! Ranks are 1 for the highest accuracy, with average ranks for ties.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("accuracy matrix needs at least {need} {what}, got {got}")]
    TooSmall {
        what: &'static str,
        need: usize,
        got: usize,
    },
    #[error("accuracy {value} for {dataset}/{model} is outside [0, 100]")]
    OutOfRange {
        dataset: String,
        model: String,
        value: f64,
    },
    #[error("accuracy matrix row {row}: {reason}")]
    Parse { row: usize, reason: String },
    #[error("samples have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("tie tolerance must be >= 0")]
    InvalidTolerance,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Accuracies in percent, one row per dataset and one column per model.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    datasets: Vec<String>,
    models: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(datasets: Vec<String>, models: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        if models.len() < 2 {
            return Err(StatsError::TooSmall {
                what: "models",
                need: 2,
                got: models.len(),
            });
        }
        if datasets.len() < 2 {
            return Err(StatsError::TooSmall {
                what: "datasets",
                need: 2,
                got: datasets.len(),
            });
        }
        if values.len() != datasets.len() {
            return Err(StatsError::Parse {
                row: values.len(),
                reason: "row count does not match dataset names".into(),
            });
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != models.len() {
                return Err(StatsError::Parse {
                    row: i + 1,
                    reason: format!("expected {} values, found {}", models.len(), row.len()),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=100.0).contains(&v) {
                    return Err(StatsError::OutOfRange {
                        dataset: datasets[i].clone(),
                        model: models[j].clone(),
                        value: v,
                    });
                }
            }
        }
        Ok(AccuracyMatrix {
            datasets,
            models,
            values,
        })
    }

    /// CSV with a header `dataset,<model>,...` and one row per dataset.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self, StatsError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 {
            return Err(StatsError::TooSmall {
                what: "models",
                need: 2,
                got: header.len().saturating_sub(1),
            });
        }
        let models: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut datasets = Vec::new();
        let mut values = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(StatsError::Parse {
                    row: i + 1,
                    reason: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            datasets.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.parse::<f64>().map_err(|_| StatsError::Parse {
                        row: i + 1,
                        reason: format!("not a number: {s:?}"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            values.push(row);
        }
        AccuracyMatrix::new(datasets, models, values)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, StatsError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| StatsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        AccuracyMatrix::from_csv_reader(file)
    }

    /// Inverse of [`AccuracyMatrix::from_csv_reader`]; values keep two decimals.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("dataset");
        for m in &self.models {
            out.push(',');
            out.push_str(&csv_field(m));
        }
        out.push('\n');
        for (d, row) in self.datasets.iter().zip(&self.values) {
            out.push_str(&csv_field(d));
            for v in row {
                let _ = write!(out, ",{v:.2}");
            }
            out.push('\n');
        }
        out
    }

    pub fn datasets(&self) -> &[String] {
        &self.datasets
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn n_datasets(&self) -> usize {
        self.datasets.len()
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    pub fn model_index(&self, name: &str) -> Result<usize, StatsError> {
        self.models
            .iter()
            .position(|m| m == name)
            .ok_or_else(|| StatsError::UnknownModel(name.to_string()))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Ascending ranks (1 = smallest) with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Sizes of the groups of tied values.
fn tie_sizes(values: &[f64]) -> Vec<usize> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        out.push(j - i + 1);
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FriedmanResult {
    pub average_ranks: Vec<f64>,
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Friedman test: `chi2 = 12 n / (k (k+1)) sum_j R_j^2 - 3 n (k+1)` over the
/// average ranks `R_j`, with `k - 1` degrees of freedom.
pub fn friedman(m: &AccuracyMatrix) -> FriedmanResult {
    let (n, k) = (m.n_datasets(), m.n_models());
    let mut sums = vec![0.0; k];
    for row in m.values() {
        let neg: Vec<f64> = row.iter().map(|v| -v).collect();
        for (s, r) in sums.iter_mut().zip(average_ranks(&neg)) {
            *s += r;
        }
    }
    let average_ranks: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let (nf, kf) = (n as f64, k as f64);
    let sum_sq: f64 = average_ranks.iter().map(|r| r * r).sum();
    let chi2 = (12.0 * nf / (kf * (kf + 1.0)) * sum_sq - 3.0 * nf * (kf + 1.0)).max(0.0);
    FriedmanResult {
        average_ranks,
        chi2,
        df: k - 1,
        p_value: chi2_sf(chi2, (k - 1) as f64),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonResult {
    /// Signed rank sum `sum sign(d_i) R_i`.
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Number of nonzero differences.
    pub n_effective: usize,
    pub p_value: f64,
    pub exact: bool,
    /// Every difference was zero.
    pub degenerate: bool,
}

/// Largest effective sample size that uses the exact null distribution.
pub const WILCOXON_EXACT_MAX: usize = 20;

/// Two-sided Wilcoxon signed-rank test of `x - y`.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            w: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            n_effective: 0,
            p_value: 1.0,
            exact: true,
            degenerate: true,
        });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let w_minus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v < 0.0).map(|(_, r)| r).sum();
    let w = w_plus - w_minus;
    let (p_value, exact) = if n <= WILCOXON_EXACT_MAX {
        (exact_signed_rank_p(&ranks, w), true)
    } else {
        let var: f64 = ranks.iter().map(|r| r * r).sum();
        ((2.0 * normal_sf(w.abs() / var.sqrt())).min(1.0), false)
    };
    Ok(WilcoxonResult {
        w,
        w_plus,
        w_minus,
        n_effective: n,
        p_value,
        exact,
        degenerate: false,
    })
}

/// `P(|W| >= |w|)` over all sign assignments of `ranks`, counted by dynamic
/// programming over doubled (integer) ranks.
fn exact_signed_rank_p(ranks: &[f64], w: f64) -> f64 {
    let r2: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = r2.iter().sum();
    // counts[s] = number of subsets whose doubled rank sum is s
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &r2 {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    // W = (2 s - total) / 2 when the positive set has doubled sum s
    let w2 = (2.0 * w).round().abs() as i64;
    let extreme: u64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (2 * *s as i64 - total as i64).abs() >= w2)
        .map(|(_, c)| c)
        .sum();
    extreme as f64 / 2f64.powi(ranks.len() as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KruskalWallisResult {
    /// `12 / (N (N+1)) sum_j R_j^2 / n_j - 3 (N+1)`.
    pub h_raw: f64,
    /// `h_raw / (1 - sum (t^3 - t) / (N^3 - N))`.
    pub h_corrected: f64,
    pub df: usize,
    /// From the tie-corrected statistic.
    pub p_value: f64,
}

pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallisResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooSmall {
            what: "groups",
            need: 2,
            got: groups.len(),
        });
    }
    if let Some(i) = groups.iter().position(Vec::is_empty) {
        return Err(StatsError::Parse {
            row: i + 1,
            reason: "empty group".into(),
        });
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let ranks = average_ranks(&pooled);
    let nf = pooled.len() as f64;
    let mut offset = 0;
    let mut term = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        term += r * r / g.len() as f64;
        offset += g.len();
    }
    let h_raw = (12.0 / (nf * (nf + 1.0)) * term - 3.0 * (nf + 1.0)).max(0.0);
    let ties: f64 = tie_sizes(&pooled).iter().map(|&t| (t * t * t - t) as f64).sum();
    let c = 1.0 - ties / (nf * nf * nf - nf);
    let h_corrected = if c > 0.0 { h_raw / c } else { 0.0 };
    let df = groups.len() - 1;
    Ok(KruskalWallisResult {
        h_raw,
        h_corrected,
        df,
        p_value: chi2_sf(h_corrected, df as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WinTieLoss {
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

/// Counts of `reference[i]` beating, tying (within `tie_tol`) or losing to
/// `other[i]`.
pub fn win_tie_loss_pair(reference: &[f64], other: &[f64], tie_tol: f64) -> Result<WinTieLoss, StatsError> {
    if reference.len() != other.len() {
        return Err(StatsError::LengthMismatch(reference.len(), other.len()));
    }
    if !(tie_tol >= 0.0) {
        return Err(StatsError::InvalidTolerance);
    }
    let mut out = WinTieLoss::default();
    for (a, b) in reference.iter().zip(other) {
        if (a - b).abs() <= tie_tol {
            out.ties += 1;
        } else if a > b {
            out.wins += 1;
        } else {
            out.losses += 1;
        }
    }
    Ok(out)
}

/// Win-tie-loss of model `reference` against every model (itself included).
pub fn win_tie_loss(m: &AccuracyMatrix, reference: usize, tie_tol: f64) -> Result<Vec<(String, WinTieLoss)>, StatsError> {
    if reference >= m.n_models() {
        return Err(StatsError::UnknownModel(format!("index {reference}")));
    }
    let r = m.column(reference);
    (0..m.n_models())
        .map(|j| Ok((m.models()[j].clone(), win_tie_loss_pair(&r, &m.column(j), tie_tol)?)))
        .collect()
}

/// Lanczos approximation (g = 7, 9 terms) of `ln Gamma(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let prefix = (a * x.ln() - x - ln_gamma(a)).exp();
    if x < a + 1.0 {
        // series for P(a, x)
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (1.0 - sum * prefix).clamp(0.0, 1.0)
    } else {
        // modified Lentz continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (prefix * h).clamp(0.0, 1.0)
    }
}

/// Chi-square survival function `P(X > x)` with `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    gamma_q(df / 2.0, x / 2.0)
}

/// Standard normal survival function.
pub fn normal_sf(z: f64) -> f64 {
    if z < 0.0 {
        1.0 - normal_sf(-z)
    } else {
        0.5 * gamma_q(0.5, z * z / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseWilcoxon {
    pub model: String,
    pub result: WilcoxonResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatReport {
    pub models: Vec<String>,
    pub reference: String,
    pub friedman: FriedmanResult,
    pub wilcoxon: Vec<PairwiseWilcoxon>,
    pub kruskal_wallis: KruskalWallisResult,
    pub win_tie_loss: Vec<(String, WinTieLoss)>,
    pub tie_tol: f64,
}

impl StatReport {
    /// Full comparison of `reference` against every other model.
    pub fn compute(m: &AccuracyMatrix, reference: usize, tie_tol: f64) -> Result<Self, StatsError> {
        if reference >= m.n_models() {
            return Err(StatsError::UnknownModel(format!("index {reference}")));
        }
        let r = m.column(reference);
        let mut wilcoxon = Vec::new();
        for j in (0..m.n_models()).filter(|&j| j != reference) {
            wilcoxon.push(PairwiseWilcoxon {
                model: m.models()[j].clone(),
                result: wilcoxon_signed_rank(&r, &m.column(j))?,
            });
        }
        let groups: Vec<Vec<f64>> = (0..m.n_models()).map(|j| m.column(j)).collect();
        let wtl = win_tie_loss(m, reference, tie_tol)?
            .into_iter()
            .enumerate()
            .filter(|(j, _)| *j != reference)
            .map(|(_, x)| x)
            .collect();
        Ok(StatReport {
            models: m.models().to_vec(),
            reference: m.models()[reference].clone(),
            friedman: friedman(m),
            wilcoxon,
            kruskal_wallis: kruskal_wallis(&groups)?,
            win_tie_loss: wtl,
            tie_tol,
        })
    }

    /// Long-format CSV: `section,model,statistic,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,model,statistic,value\n");
        let mut row = |section: &str, model: &str, stat: &str, value: String| {
            let _ = writeln!(out, "{section},{},{stat},{value}", csv_field(model));
        };
        for (m, r) in self.models.iter().zip(&self.friedman.average_ranks) {
            row("rank", m, "average_rank", format!("{r:.4}"));
        }
        row("friedman", "", "chi2", format!("{:.4}", self.friedman.chi2));
        row("friedman", "", "df", self.friedman.df.to_string());
        row("friedman", "", "p", format!("{:.6}", self.friedman.p_value));
        for w in &self.wilcoxon {
            row("wilcoxon", &w.model, "w", format!("{:.1}", w.result.w));
            row("wilcoxon", &w.model, "p", format!("{:.6}", w.result.p_value));
            row("wilcoxon", &w.model, "exact", w.result.exact.to_string());
        }
        let kw = &self.kruskal_wallis;
        row("kruskal_wallis", "", "h_raw", format!("{:.4}", kw.h_raw));
        row("kruskal_wallis", "", "h_corrected", format!("{:.4}", kw.h_corrected));
        row("kruskal_wallis", "", "df", kw.df.to_string());
        row("kruskal_wallis", "", "p", format!("{:.6}", kw.p_value));
        for (m, w) in &self.win_tie_loss {
            row("win_tie_loss", m, "wins", w.wins.to_string());
            row("win_tie_loss", m, "ties", w.ties.to_string());
            row("win_tie_loss", m, "losses", w.losses.to_string());
        }
        row("win_tie_loss", "", "tie_tol", format!("{}", self.tie_tol));
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("## Average ranks\n\n| Model | Rank |\n|---|---|\n");
        for (m, r) in self.models.iter().zip(&self.friedman.average_ranks) {
            let _ = writeln!(out, "| {m} | {r:.2} |");
        }
        let f = &self.friedman;
        let _ = write!(
            out,
            "\n## Friedman test\n\nchi2 = {:.2}, df = {}, p = {:.4}\n",
            f.chi2, f.df, f.p_value
        );
        let _ = write!(
            out,
            "\n## Wilcoxon signed-rank ({} vs others)\n\n| Model | W | p | exact |\n|---|---|---|---|\n",
            self.reference
        );
        for w in &self.wilcoxon {
            let _ = writeln!(out, "| {} | {:.1} | {:.4} | {} |", w.model, w.result.w, w.result.p_value, w.result.exact);
        }
        let kw = &self.kruskal_wallis;
        let _ = write!(
            out,
            "\n## Kruskal-Wallis\n\nH = {:.2} (tie-corrected {:.2}), df = {}, p = {:.4}\n",
            kw.h_raw, kw.h_corrected, kw.df, kw.p_value
        );
        let _ = write!(
            out,
            "\n## Win-tie-loss ({}, tie tolerance {})\n\n| Model | Wins | Ties | Losses |\n|---|---|---|---|\n",
            self.reference, self.tie_tol
        );
        for (m, w) in &self.win_tie_loss {
            let _ = writeln!(out, "| {m} | {} | {} | {} |", w.wins, w.ties, w.losses);
        }
        out
    }
}
