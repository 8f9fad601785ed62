//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use gbtsvm::data::{Dataset, Label};
use gbtsvm::granular::{BallLabel, BallSet, RadiusMode};
use gbtsvm::qp::BoxQp;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimizer of a box QP by enumerating all 3^n patterns of
/// (at lower, at upper, free). Free blocks are solved densely; a pattern
/// counts when its point is feasible and its multipliers have the right sign.
pub fn enumerate_box_qp(p: &BoxQp) -> (DVector<f64>, f64) {
    let n = p.dim();
    let (q, lin, lo, up) = (p.quad(), p.linear(), p.lower(), p.upper());
    let mut best: Option<(DVector<f64>, f64)> = None;
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut pattern = vec![0u8; n];
        let mut c = code;
        for v in pattern.iter_mut() {
            *v = (c % 3) as u8;
            c /= 3;
        }
        let mut x = DVector::zeros(n);
        let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == 2).collect();
        for i in 0..n {
            match pattern[i] {
                0 => x[i] = lo[i],
                1 => x[i] = up[i],
                _ => {}
            }
        }
        if !free.is_empty() {
            let k = free.len();
            let qff = DMatrix::from_fn(k, k, |a, b| q[(free[a], free[b])]);
            let rhs = DVector::from_fn(k, |a, _| {
                let i = free[a];
                -lin[i] - (0..n).filter(|j| pattern[*j] != 2).map(|j| q[(i, j)] * x[j]).sum::<f64>()
            });
            let Some(sol) = qff.lu().solve(&rhs) else { continue };
            for (a, &i) in free.iter().enumerate() {
                x[i] = sol[a];
            }
        }
        let feasible = (0..n).all(|i| x[i] >= lo[i] - 1e-10 && x[i] <= up[i] + 1e-10);
        if !feasible {
            continue;
        }
        let g = q * &x + lin;
        let kkt = (0..n).all(|i| match pattern[i] {
            0 => g[i] >= -1e-9,
            1 => g[i] <= 1e-9,
            _ => true,
        });
        if !kkt {
            continue;
        }
        let f = 0.5 * x.dot(&(q * &x)) + lin.dot(&x);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((x, f));
        }
    }
    best.expect("a convex box QP always has a KKT pattern")
}

/// Random strictly convex box QP with bounds in `[-1, 0] x [0.5, 2]`.
pub fn random_box_qp(rng: &mut ChaCha8Rng, n: usize) -> BoxQp {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = a.transpose() * &a + DMatrix::identity(n, n) * rng.random_range(0.01..0.5);
    let q = (&q + q.transpose()) * 0.5;
    let lin = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let lo = DVector::from_fn(n, |_, _| rng.random_range(-1.0..0.0));
    let up = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
    BoxQp::new(q, lin, lo, up).unwrap()
}

/// Two-sided Wilcoxon p by listing all 2^n sign patterns of the ranked
/// nonzero differences.
pub fn wilcoxon_by_enumeration(x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    // average ranks of |d|
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|&v| {
            let below = abs.iter().filter(|&&w| w < v).count() as f64;
            let equal = abs.iter().filter(|&&w| w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = d.iter().zip(&ranks).map(|(v, r)| v.signum() * r).sum();
    let mut extreme = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = ranks
            .iter()
            .enumerate()
            .map(|(i, r)| if mask >> i & 1 == 1 { *r } else { -*r })
            .sum();
        if w.abs() >= observed.abs() - 1e-9 {
            extreme += 1;
        }
    }
    extreme as f64 / (1u64 << n) as f64
}

/// Check every ball of `set` against `d`: thresholds, stored fields
/// recomputed from members, majority label, and disjoint membership.
pub fn check_ball_invariants(set: &BallSet, d: &Dataset) -> Result<(), String> {
    let cfg = set.config;
    let mut seen = vec![false; d.n_samples()];
    for (k, b) in set.balls.iter().enumerate() {
        if b.members.is_empty() {
            return Err(format!("ball {k} is empty"));
        }
        if b.members.len() < cfg.num_min || b.purity < cfg.purity_threshold {
            return Err(format!("ball {k} misses thresholds ({} members, purity {})", b.members.len(), b.purity));
        }
        for &i in &b.members {
            if i >= d.n_samples() || seen[i] {
                return Err(format!("index {i} repeated or out of range"));
            }
            seen[i] = true;
        }
        let rows: Vec<Vec<f64>> = b.members.iter().map(|&i| d.row(i)).collect();
        let dim = d.n_features();
        let center: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect();
        let dists: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().zip(&center).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt())
            .collect();
        let r_avg = dists.iter().sum::<f64>() / dists.len() as f64;
        let r_max = dists.iter().cloned().fold(0.0, f64::max);
        let radius = match cfg.radius_mode {
            RadiusMode::Average => r_avg,
            RadiusMode::Maximum => r_max,
        };
        if r_max < r_avg - 1e-12 {
            return Err(format!("ball {k}: max radius below average radius"));
        }
        let pos = b.members.iter().filter(|&&i| d.labels()[i] == Label::Positive).count();
        let neg = b.members.len() - pos;
        let purity = pos.max(neg) as f64 / b.members.len() as f64;
        let label = if pos >= neg { BallLabel::Positive } else { BallLabel::Negative };
        let close = |a: f64, e: f64| (a - e).abs() <= 1e-12;
        if !center.iter().zip(&b.center).all(|(a, e)| close(*a, *e)) {
            return Err(format!("ball {k}: center does not match members"));
        }
        if !close(radius, b.radius) || !close(purity, b.purity) {
            return Err(format!("ball {k}: radius or purity does not match members"));
        }
        if b.label != BallLabel::Unlabeled && b.label != label {
            return Err(format!("ball {k}: label is not the member majority"));
        }
    }
    Ok(())
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Straightforward recursive version of the purity-driven 2-means splitter.
/// Returns the member lists of every ball before the delete pass, in
/// left-to-right leaf order.
pub fn reference_split(d: &Dataset, purity: f64, seed: u64, max_iter: usize) -> Vec<Vec<usize>> {
    let rows = d.rows();
    let labels = d.labels();
    let mut out = Vec::new();
    recurse(&rows, labels, (0..d.n_samples()).collect(), purity, seed, max_iter, &mut out);
    out
}

fn recurse(
    rows: &[Vec<f64>],
    labels: &[Label],
    members: Vec<usize>,
    purity: f64,
    seed: u64,
    max_iter: usize,
    out: &mut Vec<Vec<usize>>,
) {
    let pos = members.iter().filter(|&&i| labels[i] == Label::Positive).count();
    let neg = members.len() - pos;
    if pos.max(neg) as f64 / members.len() as f64 >= purity {
        out.push(members);
        return;
    }
    if members.iter().all(|&i| rows[i] == rows[members[0]]) {
        return;
    }
    let major = if pos >= neg { Label::Positive } else { Label::Negative };
    let maj: Vec<usize> = members.iter().copied().filter(|&i| labels[i] == major).collect();
    let min: Vec<usize> = members.iter().copied().filter(|&i| labels[i] != major).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c0 = rows[maj[rng.random_range(0..maj.len())]].clone();
    let c1 = rows[min[rng.random_range(0..min.len())]].clone();
    let mut cents = [c0, c1];
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mean = |idx: &[usize]| -> Vec<f64> {
        let dim = rows[idx[0]].len();
        (0..dim).map(|j| idx.iter().map(|&i| rows[i][j]).sum::<f64>() / idx.len() as f64).collect()
    };
    let mut assign: Vec<usize> = vec![];
    for _ in 0..max_iter {
        let next: Vec<usize> = members
            .iter()
            .map(|&i| if sq(&rows[i], &cents[1]) < sq(&rows[i], &cents[0]) { 1 } else { 0 })
            .collect();
        if next == assign {
            break;
        }
        assign = next;
        for (s, cent) in cents.iter_mut().enumerate() {
            let part: Vec<usize> = members.iter().zip(&assign).filter(|(_, &a)| a == s).map(|(&i, _)| i).collect();
            if !part.is_empty() {
                *cent = mean(&part);
            }
        }
    }
    let mut left: Vec<usize> = members.iter().zip(&assign).filter(|(_, &a)| a == 0).map(|(&i, _)| i).collect();
    let mut right: Vec<usize> = members.iter().zip(&assign).filter(|(_, &a)| a == 1).map(|(&i, _)| i).collect();
    if left.is_empty() || right.is_empty() {
        let (full, empty) = if left.is_empty() { (&mut right, &mut left) } else { (&mut left, &mut right) };
        let c = mean(full);
        let mut far = 0;
        for k in 1..full.len() {
            if sq(&rows[full[k]], &c) > sq(&rows[full[far]], &c) {
                far = k;
            }
        }
        empty.push(full.remove(far));
    }
    let child = |side: u64| splitmix(seed.wrapping_mul(2).wrapping_add(side + 1));
    recurse(rows, labels, left, purity, child(0), max_iter, out);
    recurse(rows, labels, right, purity, child(1), max_iter, out);
}

/// Random labeled dataset: a few Gaussian clusters with mixed labels.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, dim: usize, noise: f64) -> Dataset {
    let k = rng.random_range(2..5);
    let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        let row: Vec<f64> = centers[c].iter().map(|v| v + rng.random_range(-1.5..1.5)).collect();
        let mut label = if c % 2 == 0 { Label::Positive } else { Label::Negative };
        if rng.random_bool(noise) {
            label = -label;
        }
        rows.push(row);
        labels.push(label);
    }
    Dataset::from_rows("random", &rows, labels).unwrap()
}
