//! Granular-ball generation.
//!
//! Balls are produced by recursive splitting: the whole dataset starts as one
//! ball, and any ball whose purity is below the threshold is split in two by
//! 2-means. Once every ball is pure enough, a delete pass drops balls with
//! fewer than `num_min` members.
//!
//! Each split draws from its own RNG stream, seeded from the parent's seed and
//! the child side. The split of a given ball therefore does not depend on the
//! order in which other balls were processed, which keeps generation
//! reproducible and makes the set of splits monotone in the purity threshold.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{Dataset, Label};

#[derive(Debug, Error)]
pub enum GranularError {
    #[error("cannot generate balls from an empty dataset")]
    EmptyInput,
    #[error("invalid ball configuration: {0}")]
    InvalidConfig(String),
    #[error("no balls survive the delete pass ({generated} generated, num_min={num_min}, purity={purity})")]
    NoBallsSurvive {
        generated: usize,
        num_min: usize,
        purity: f64,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RadiusMode {
    /// Mean member distance to the center.
    #[default]
    Average,
    /// Largest member distance to the center.
    Maximum,
}

impl std::str::FromStr for RadiusMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "average" | "avg" => Ok(RadiusMode::Average),
            "maximum" | "max" => Ok(RadiusMode::Maximum),
            other => Err(format!("unknown radius mode {other:?} (expected average|maximum)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BallLabel {
    Positive,
    Negative,
    Unlabeled,
}

impl BallLabel {
    fn code(self) -> &'static str {
        match self {
            BallLabel::Positive => "1",
            BallLabel::Negative => "-1",
            BallLabel::Unlabeled => "0",
        }
    }
}

impl From<Label> for BallLabel {
    fn from(l: Label) -> Self {
        match l {
            Label::Positive => BallLabel::Positive,
            Label::Negative => BallLabel::Negative,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GranularBall {
    pub center: Vec<f64>,
    pub radius: f64,
    pub label: BallLabel,
    /// Row indices into the source dataset.
    pub members: Vec<usize>,
    /// Fraction of members carrying the majority label.
    pub purity: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_of(rows: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let d = rows[members[0]].len();
    let mut c = vec![0.0; d];
    for &i in members {
        for (cj, v) in c.iter_mut().zip(&rows[i]) {
            *cj += v;
        }
    }
    let k = members.len() as f64;
    c.iter_mut().for_each(|v| *v /= k);
    c
}

/// Majority label and its share; ties go to `+1`.
fn majority(labels: &[Label], members: &[usize]) -> (Label, f64) {
    let pos = members.iter().filter(|&&i| labels[i] == Label::Positive).count();
    let neg = members.len() - pos;
    if pos >= neg {
        (Label::Positive, pos as f64 / members.len() as f64)
    } else {
        (Label::Negative, neg as f64 / members.len() as f64)
    }
}

pub fn radius_of(rows: &[Vec<f64>], members: &[usize], center: &[f64], mode: RadiusMode) -> f64 {
    let ds = members.iter().map(|&i| dist(&rows[i], center));
    match mode {
        RadiusMode::Average => ds.sum::<f64>() / members.len() as f64,
        RadiusMode::Maximum => ds.fold(0.0, f64::max),
    }
}

impl GranularBall {
    /// Summarize `members` of `rows`: center is the member mean, label the
    /// member majority.
    pub fn from_members(rows: &[Vec<f64>], labels: &[Label], members: Vec<usize>, mode: RadiusMode) -> Self {
        assert!(!members.is_empty(), "a granular ball needs at least one member");
        let center = mean_of(rows, &members);
        let radius = radius_of(rows, &members, &center, mode);
        let (label, purity) = majority(labels, &members);
        GranularBall {
            center,
            radius,
            label: label.into(),
            members,
            purity,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn qualifies(&self, cfg: &BallGenConfig) -> bool {
        self.members.len() >= cfg.num_min && self.purity >= cfg.purity_threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallGenConfig {
    /// Minimum members a ball needs to survive the delete pass.
    pub num_min: usize,
    /// Balls below this purity are split; survivors must meet it.
    pub purity_threshold: f64,
    pub radius_mode: RadiusMode,
    pub seed: u64,
    /// 2-means iteration cap per split.
    pub max_iter: usize,
}

impl Default for BallGenConfig {
    fn default() -> Self {
        BallGenConfig {
            num_min: 1,
            purity_threshold: 1.0,
            radius_mode: RadiusMode::Average,
            seed: 42,
            max_iter: 100,
        }
    }
}

impl BallGenConfig {
    pub fn new(num_min: usize, purity_threshold: f64) -> Self {
        BallGenConfig {
            num_min,
            purity_threshold,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), GranularError> {
        if self.num_min < 1 {
            return Err(GranularError::InvalidConfig("num_min must be at least 1".into()));
        }
        if !(self.purity_threshold > 0.5 && self.purity_threshold <= 1.0) {
            return Err(GranularError::InvalidConfig(format!(
                "purity threshold {} outside (0.5, 1]",
                self.purity_threshold
            )));
        }
        if self.max_iter == 0 {
            return Err(GranularError::InvalidConfig("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BallSet {
    pub balls: Vec<GranularBall>,
    pub config: BallGenConfig,
    pub dim: usize,
    pub source_name: String,
    pub source_len: usize,
    /// Splits performed before the delete pass.
    pub splits: usize,
    /// Mixed-label balls of identical points, dropped because no split can
    /// separate them.
    pub degenerate_dropped: usize,
}

impl BallSet {
    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }

    pub fn with_label(&self, label: BallLabel) -> impl Iterator<Item = &GranularBall> {
        self.balls.iter().filter(move |b| b.label == label)
    }

    pub fn count(&self, label: BallLabel) -> usize {
        self.with_label(label).count()
    }

    /// Centers of balls with `label`, one per row.
    pub fn centers(&self, label: BallLabel) -> DMatrix<f64> {
        let balls: Vec<&GranularBall> = self.with_label(label).collect();
        DMatrix::from_fn(balls.len(), self.dim, |i, j| balls[i].center[j])
    }

    pub fn radii(&self, label: BallLabel) -> DVector<f64> {
        DVector::from_iterator(self.count(label), self.with_label(label).map(|b| b.radius))
    }

    pub fn mean_radius(&self) -> f64 {
        if self.balls.is_empty() {
            return 0.0;
        }
        self.balls.iter().map(|b| b.radius).sum::<f64>() / self.balls.len() as f64
    }

    /// Mark every ball unlabeled (Universum use).
    pub fn into_unlabeled(mut self) -> Self {
        for b in &mut self.balls {
            b.label = BallLabel::Unlabeled;
        }
        self
    }

    /// CSV with `ball_id,label,radius,purity,member_count,c0..c{D-1}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let coords: Vec<String> = (0..self.dim).map(|j| format!("c{j}")).collect();
        let mut header = String::from("ball_id,label,radius,purity,member_count");
        for c in &coords {
            header.push(',');
            header.push_str(c);
        }
        writeln!(w, "{header}")?;
        for (id, b) in self.balls.iter().enumerate() {
            write!(w, "{id},{},{},{},{}", b.label.code(), b.radius, b.purity, b.members.len())?;
            for v in &b.center {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the child on `side` (0 or 1) of a split seeded with `seed`.
pub fn child_seed(seed: u64, side: u64) -> u64 {
    splitmix64(seed.wrapping_mul(2).wrapping_add(side + 1))
}

/// 2-means split of an impure ball. Centroids start at one random member of
/// the majority label and one of the minority label. Returns the two member
/// lists in ascending index order; neither is empty.
pub fn two_means_split(
    rows: &[Vec<f64>],
    labels: &[Label],
    members: &[usize],
    seed: u64,
    max_iter: usize,
) -> (Vec<usize>, Vec<usize>) {
    let (maj, _) = majority(labels, members);
    let maj_members: Vec<usize> = members.iter().copied().filter(|&i| labels[i] == maj).collect();
    let min_members: Vec<usize> = members.iter().copied().filter(|&i| labels[i] != maj).collect();
    debug_assert!(!min_members.is_empty(), "split requested on a pure ball");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = maj_members[rng.random_range(0..maj_members.len())];
    let b = min_members[rng.random_range(0..min_members.len())];
    let mut centroids = [rows[a].clone(), rows[b].clone()];

    let mut assign: Vec<u8> = Vec::new();
    for _ in 0..max_iter {
        let next: Vec<u8> = members
            .iter()
            .map(|&i| {
                let d0 = sq_dist(&rows[i], &centroids[0]);
                let d1 = sq_dist(&rows[i], &centroids[1]);
                u8::from(d1 < d0)
            })
            .collect();
        if next == assign {
            break;
        }
        assign = next;
        for (side, centroid) in centroids.iter_mut().enumerate() {
            let part: Vec<usize> = members
                .iter()
                .zip(&assign)
                .filter(|(_, &s)| s as usize == side)
                .map(|(&i, _)| i)
                .collect();
            if !part.is_empty() {
                *centroid = mean_of(rows, &part);
            }
        }
    }

    let mut sides: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (&i, &s) in members.iter().zip(&assign) {
        sides[s as usize].push(i);
    }
    if let Some(empty) = sides.iter().position(Vec::is_empty) {
        let full = 1 - empty;
        let c = mean_of(rows, &sides[full]);
        let mut far = 0;
        let mut far_d = f64::NEG_INFINITY;
        for (pos, &i) in sides[full].iter().enumerate() {
            let d = sq_dist(&rows[i], &c);
            if d > far_d {
                far_d = d;
                far = pos;
            }
        }
        let moved = sides[full].remove(far);
        sides[empty].push(moved);
    }
    let [left, right] = sides;
    (left, right)
}

fn all_identical(rows: &[Vec<f64>], members: &[usize]) -> bool {
    let first = &rows[members[0]];
    members.iter().all(|&i| rows[i] == *first)
}

/// Recursive splitting without the delete pass.
pub fn split_until_pure(d: &Dataset, cfg: &BallGenConfig) -> Result<BallSet, GranularError> {
    cfg.validate()?;
    if d.n_samples() == 0 {
        return Err(GranularError::EmptyInput);
    }
    let rows = d.rows();
    let labels = d.labels();

    let mut balls = Vec::new();
    let mut splits = 0;
    let mut degenerate = 0;
    // depth-first, left child first
    let mut stack: Vec<(Vec<usize>, u64)> = vec![((0..d.n_samples()).collect(), cfg.seed)];
    while let Some((members, seed)) = stack.pop() {
        let (_, purity) = majority(labels, &members);
        if purity >= cfg.purity_threshold {
            balls.push(GranularBall::from_members(&rows, labels, members, cfg.radius_mode));
            continue;
        }
        if all_identical(&rows, &members) {
            degenerate += 1;
            continue;
        }
        let (left, right) = two_means_split(&rows, labels, &members, seed, cfg.max_iter);
        splits += 1;
        stack.push((right, child_seed(seed, 1)));
        stack.push((left, child_seed(seed, 0)));
    }

    Ok(BallSet {
        balls,
        config: *cfg,
        dim: d.n_features(),
        source_name: d.name().to_string(),
        source_len: d.n_samples(),
        splits,
        degenerate_dropped: degenerate,
    })
}

/// Keep exactly the balls meeting both the size and purity thresholds.
pub fn delete_unqualified(mut set: BallSet) -> BallSet {
    let cfg = set.config;
    set.balls.retain(|b| b.qualifies(&cfg));
    set
}

/// Generate granular balls: split until pure, then delete unqualified balls.
///
/// Fails if nothing survives, which means the thresholds do not suit the data.
pub fn generate_balls(d: &Dataset, cfg: &BallGenConfig) -> Result<BallSet, GranularError> {
    let raw = split_until_pure(d, cfg)?;
    let generated = raw.len();
    let set = delete_unqualified(raw);
    if set.is_empty() {
        return Err(GranularError::NoBallsSurvive {
            generated,
            num_min: cfg.num_min,
            purity: cfg.purity_threshold,
        });
    }
    Ok(set)
}

/// Universum balls from a Universum slice. Purity is measured against the
/// slice's original labels; the resulting balls are unlabeled.
pub fn universum_balls_split(u: &Dataset, cfg: &BallGenConfig) -> Result<BallSet, GranularError> {
    Ok(generate_balls(u, cfg)?.into_unlabeled())
}

/// Universum balls from pairs of positive and negative balls: each pair
/// yields a ball at the midpoint of the two centers with the mean radius.
///
/// Both sides are sorted by member count (descending, then input position)
/// and paired in that order, giving `min(|pos|, |neg|)` balls.
pub fn universum_balls_average(
    pos: &[GranularBall],
    neg: &[GranularBall],
) -> Result<Vec<GranularBall>, GranularError> {
    if pos.is_empty() || neg.is_empty() {
        return Err(GranularError::EmptyInput);
    }
    let order = |balls: &[GranularBall]| {
        let mut idx: Vec<usize> = (0..balls.len()).collect();
        idx.sort_by(|&a, &b| balls[b].len().cmp(&balls[a].len()).then(a.cmp(&b)));
        idx
    };
    let (po, no) = (order(pos), order(neg));
    Ok(po
        .iter()
        .zip(&no)
        .map(|(&i, &j)| {
            let (p, n) = (&pos[i], &neg[j]);
            let center = p.center.iter().zip(&n.center).map(|(a, b)| (a + b) / 2.0).collect();
            let mut members = p.members.clone();
            members.extend_from_slice(&n.members);
            members.sort_unstable();
            members.dedup();
            let total = (p.len() + n.len()).max(1) as f64;
            GranularBall {
                center,
                radius: (p.radius + n.radius) / 2.0,
                label: BallLabel::Unlabeled,
                members,
                purity: p.len().max(n.len()) as f64 / total,
            }
        })
        .collect())
}

/// Averaged Universum balls built from the labeled balls of `set`.
pub fn averaged_universum(set: &BallSet) -> Result<BallSet, GranularError> {
    let pos: Vec<GranularBall> = set.with_label(BallLabel::Positive).cloned().collect();
    let neg: Vec<GranularBall> = set.with_label(BallLabel::Negative).cloned().collect();
    let balls = universum_balls_average(&pos, &neg)?;
    Ok(BallSet {
        balls,
        splits: 0,
        degenerate_dropped: 0,
        ..set.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: &[Vec<f64>], labels: &[f64]) -> Dataset {
        Dataset::from_rows("t", rows, labels.iter().map(|&s| Label::from_sign(s)).collect()).unwrap()
    }

    #[test]
    fn pure_data_is_one_ball() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let set = generate_balls(&ds(&rows, &[1.0; 10]), &BallGenConfig::new(1, 0.9)).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.balls[0].members.len(), 10);
        assert_eq!(set.balls[0].purity, 1.0);
        assert_eq!(set.splits, 0);
    }

    #[test]
    fn two_point_radius() {
        let d = ds(&[vec![0.0, 0.0], vec![2.0, 0.0]], &[1.0, 1.0]);
        for mode in [RadiusMode::Average, RadiusMode::Maximum] {
            let cfg = BallGenConfig { radius_mode: mode, ..BallGenConfig::new(1, 1.0) };
            let b = &generate_balls(&d, &cfg).unwrap().balls[0];
            assert_eq!(b.center, vec![1.0, 0.0]);
            assert_eq!(b.radius, 1.0);
        }
    }

    #[test]
    fn delete_pass() {
        let rows: Vec<Vec<f64>> = vec![vec![0.0], vec![0.1], vec![0.2], vec![10.0], vec![10.1], vec![10.2], vec![10.3]];
        let d = ds(&rows, &[1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0]);
        let raw = split_until_pure(&d, &BallGenConfig::new(4, 1.0)).unwrap();
        assert_eq!(raw.len(), 2);
        let kept = delete_unqualified(raw.clone());
        assert_eq!(kept.len(), 1);
        assert_eq!(kept.balls[0].members.len(), 4);
        // identity when everything qualifies
        let all = BallSet { config: BallGenConfig::new(1, 1.0), ..raw.clone() };
        assert_eq!(delete_unqualified(all.clone()), all);
    }

    #[test]
    fn no_survivors_is_an_error() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let err = generate_balls(&ds(&rows, &[1.0; 10]), &BallGenConfig::new(999, 0.9)).unwrap_err();
        assert!(matches!(err, GranularError::NoBallsSurvive { .. }));
    }

    #[test]
    fn identical_mixed_points_are_dropped() {
        let rows = vec![vec![1.0, 1.0]; 4];
        let d = ds(&rows, &[1.0, -1.0, 1.0, -1.0]);
        let raw = split_until_pure(&d, &BallGenConfig::new(1, 0.9)).unwrap();
        assert!(raw.is_empty());
        assert_eq!(raw.degenerate_dropped, 1);
    }

    #[test]
    fn singleton_universum() {
        let d = ds(&[vec![3.0, 4.0]], &[1.0]);
        let set = universum_balls_split(&d, &BallGenConfig::new(1, 0.9)).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.balls[0].radius, 0.0);
        assert_eq!(set.balls[0].label, BallLabel::Unlabeled);
    }

    fn ball(center: Vec<f64>, radius: f64, n: usize) -> GranularBall {
        GranularBall {
            center,
            radius,
            label: BallLabel::Positive,
            members: (0..n).collect(),
            purity: 1.0,
        }
    }

    #[test]
    fn averaged_universum_examples() {
        let u = universum_balls_average(&[ball(vec![0.0, 0.0], 1.0, 3)], &[ball(vec![2.0, 0.0], 3.0, 3)]).unwrap();
        assert_eq!(u.len(), 1);
        assert_eq!(u[0].center, vec![1.0, 0.0]);
        assert_eq!(u[0].radius, 2.0);

        let pos: Vec<GranularBall> = (0..3).map(|i| ball(vec![i as f64], 1.0, 2 + i)).collect();
        let neg: Vec<GranularBall> = (0..5).map(|i| ball(vec![-(i as f64)], 1.0, 2 + i)).collect();
        assert_eq!(universum_balls_average(&pos, &neg).unwrap().len(), 3);

        // mirrored inputs pair up by size, so midpoints land on the origin
        let mirror: Vec<GranularBall> = pos.iter().map(|b| ball(vec![-b.center[0]], b.radius, b.len())).collect();
        for b in universum_balls_average(&pos, &mirror).unwrap() {
            assert_eq!(b.center, vec![0.0]);
        }
        assert!(universum_balls_average(&pos, &[]).is_err());
    }

    #[test]
    fn csv_layout() {
        let d = ds(&[vec![0.0, 0.0], vec![2.0, 0.0]], &[1.0, 1.0]);
        let set = generate_balls(&d, &BallGenConfig::new(1, 1.0)).unwrap();
        assert_eq!(
            set.to_csv_string(),
            "ball_id,label,radius,purity,member_count,c0,c1\n0,1,1,1,2,1,0\n"
        );
    }

    #[test]
    fn config_validation() {
        assert!(BallGenConfig::new(0, 0.9).validate().is_err());
        assert!(BallGenConfig::new(1, 0.5).validate().is_err());
        assert!(BallGenConfig::new(1, 1.01).validate().is_err());
        assert!(BallGenConfig::new(1, 1.0).validate().is_ok());
    }
}
