//! Acceptance criteria, each checked at its stated tolerance. Prints one
//! PASS/FAIL line per criterion and fails if any criterion fails.

mod common;

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use gbtsvm::bench::{run_experiment, GridSpec, ModelSpec, UniversumMethod};
use gbtsvm::data::{flip_labels, separable_blobs, Dataset, SplitSpec};
use gbtsvm::granular::{generate_balls, split_until_pure, BallGenConfig};
use gbtsvm::models::{train, universum_hinge, HingeSide, Hyperparams, Kernel, ModelKind, TrainInputs, TrainOptions, TrainedModel};
use gbtsvm::qp::{solve_box_qp, SolverOptions};
use gbtsvm::stats::{friedman, kruskal_wallis, win_tie_loss, wilcoxon_signed_rank, AccuracyMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

/// Name, check, optional runtime limit.
type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn published() -> AccuracyMatrix {
    AccuracyMatrix::from_path(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/published_accuracy.csv")).unwrap()
}

fn within(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{name} = {got} not within {tol} of {want}"))
    }
}

fn c1_friedman() -> Outcome {
    let m = published();
    let f = friedman(&m);
    let rounded: Vec<f64> = f.average_ranks.iter().map(|r| (r * 100.0).round() / 100.0).collect();
    if rounded != [1.2, 2.8, 2.8, 3.2] {
        return Err(format!("average ranks {rounded:?}"));
    }
    within("chi2", f.chi2, 14.16, 0.01)?;
    within("p", f.p_value, 0.0027, 0.0005)?;
    Ok(format!("ranks {rounded:?}, chi2 = {:.4}, p = {:.5}", f.chi2, f.p_value))
}

fn c2_wilcoxon() -> Outcome {
    let m = published();
    let r = m.column(m.model_index("GBU-TSVM").unwrap());
    let mut parts = Vec::new();
    for (name, want, tol) in [("TSVM", 0.00195, 0.0003), ("U-TSVM", 0.0039, 0.0005), ("Pin-GTSVM", 0.0039, 0.0005)] {
        let w = wilcoxon_signed_rank(&r, &m.column(m.model_index(name).unwrap())).map_err(|e| e.to_string())?;
        if !w.exact {
            return Err(format!("vs {name}: p not exact"));
        }
        within(&format!("p vs {name}"), w.p_value, want, tol)?;
        parts.push(format!("{name} p = {:.5}", w.p_value));
    }
    Ok(parts.join(", "))
}

fn c3_kruskal() -> Outcome {
    let m = published();
    let groups: Vec<Vec<f64>> = (0..m.n_models()).map(|j| m.column(j)).collect();
    let kw = kruskal_wallis(&groups).map_err(|e| e.to_string())?;
    within("H", kw.h_raw, 10.63, 0.05)?;
    within("p", kw.p_value, 0.0139, 0.003)?;
    Ok(format!("H = {:.4}, p = {:.5}", kw.h_raw, kw.p_value))
}

fn c4_win_tie_loss() -> Outcome {
    let m = published();
    let wtl = win_tie_loss(&m, m.model_index("GBU-TSVM").unwrap(), 0.0).map_err(|e| e.to_string())?;
    let get = |name: &str| wtl.iter().find(|(n, _)| n == name).map(|(_, w)| (w.wins, w.ties, w.losses));
    let mut parts = Vec::new();
    for (name, want) in [("U-TSVM", (9, 0, 1)), ("Pin-GTSVM", (9, 0, 1)), ("TSVM", (10, 0, 0))] {
        let got = get(name).ok_or(format!("{name} missing"))?;
        if got != want {
            return Err(format!("vs {name}: {got:?}, expected {want:?}"));
        }
        parts.push(format!("{name} {}/{}/{}", got.0, got.1, got.2));
    }
    Ok(parts.join(", "))
}

fn max_gap(m1: &TrainedModel, m2: &TrainedModel, x: &DMatrix<f64>) -> f64 {
    x.row_iter()
        .map(|r| {
            let z: Vec<f64> = r.iter().copied().collect();
            let (a, b) = m1.decision_values(&z).unwrap();
            let (c, d) = m2.decision_values(&z).unwrap();
            (a - c).abs().max((b - d).abs())
        })
        .fold(0.0, f64::max)
}

fn c5_reduction() -> Outcome {
    let opts = TrainOptions::default();
    let mut worst_t: f64 = 0.0;
    let mut worst_u: f64 = 0.0;
    for seed in 0..5u64 {
        let d = separable_blobs(100, 2, 0.0, 1.0, seed).map_err(|e| e.to_string())?;
        let u = separable_blobs(30, 2, 0.0, 1.0, seed + 100).unwrap().features().clone();
        for kernel in [Kernel::Linear, Kernel::Rbf { sigma: 1.5 }] {
            let h = Hyperparams::tied(1.0, 0.3, kernel);
            // singleton balls, Universum present with cu = 0, against TSVM
            let tsvm = train(&TrainInputs::from_points(&d, None).unwrap(), &h, &opts).map_err(|e| e.to_string())?;
            let mut gb = TrainInputs::from_points(&d, Some(&u)).unwrap();
            gb.kind = ModelKind::Gbutsvm;
            let off = train(&gb, &Hyperparams { cu: 0.0, ..h }, &opts).map_err(|e| e.to_string())?;
            worst_t = worst_t.max(max_gap(&tsvm, &off, d.features()));
            // singleton balls with Universum points, against U-TSVM
            let ut = train(&TrainInputs::from_points(&d, Some(&u)).unwrap(), &h, &opts).map_err(|e| e.to_string())?;
            let on = train(&gb, &h, &opts).map_err(|e| e.to_string())?;
            worst_u = worst_u.max(max_gap(&ut, &on, d.features()));
        }
    }
    let detail = format!("max |gap| vs TSVM {worst_t:.2e}, vs U-TSVM {worst_u:.2e}");
    if worst_t <= 1e-6 && worst_u <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c6_qp() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let opts = SolverOptions::default();
    let (mut worst_f, mut worst_x, mut worst_kkt, mut converged): (f64, f64, f64, usize) = (0.0, 0.0, 0.0, 0);
    for _ in 0..1000 {
        let p = common::random_box_qp(&mut rng, 6);
        let (x_ref, f_ref) = common::enumerate_box_qp(&p);
        let sol = solve_box_qp(&p, &opts).map_err(|e| e.to_string())?;
        worst_f = worst_f.max((sol.objective - f_ref).abs());
        worst_x = worst_x.max((&sol.x - &x_ref).amax());
        if sol.converged {
            converged += 1;
            worst_kkt = worst_kkt.max(sol.kkt_residual);
        }
    }
    let detail = format!(
        "objective gap {worst_f:.2e}, iterate gap {worst_x:.2e}, kkt {worst_kkt:.2e}, {converged}/1000 converged"
    );
    if worst_f <= 1e-6 && worst_x <= 1e-4 && worst_kkt <= 1e-8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c7_balls() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut total = 0;
    for k in 0..50 {
        let n = rng.random_range(20..400);
        let dim = rng.random_range(1..6);
        let noise = rng.random_range(0.0..0.3);
        let d = common::random_dataset(&mut rng, n, dim, noise);
        let cfg = BallGenConfig {
            seed: k,
            ..BallGenConfig::new(rng.random_range(1..8), rng.random_range(0.5..=1.0))
        };
        // partition before the delete pass
        let raw = split_until_pure(&d, &cfg).map_err(|e| e.to_string())?;
        let mut seen = vec![0usize; n];
        for b in &raw.balls {
            for &i in &b.members {
                seen[i] += 1;
            }
        }
        if seen.iter().any(|&c| c > 1) {
            return Err(format!("dataset {k}: a sample sits in two balls"));
        }
        let covered = seen.iter().filter(|&&c| c == 1).count();
        if raw.degenerate_dropped == 0 && covered != n {
            return Err(format!("dataset {k}: {covered} of {n} samples covered"));
        }
        match generate_balls(&d, &cfg) {
            Ok(set) => {
                common::check_ball_invariants(&set, &d).map_err(|e| format!("dataset {k}: {e}"))?;
                total += set.len();
            }
            Err(gbtsvm::granular::GranularError::NoBallsSurvive { .. }) => {}
            Err(e) => return Err(e.to_string()),
        }
    }
    Ok(format!("{total} surviving balls checked over 50 datasets"))
}

fn blobs_500(seed: u64) -> Dataset {
    // margin 4 sigma with sigma = 1
    separable_blobs(500, 2, 4.0, 1.0, seed).unwrap().min_max_scaled()
}

fn c8_end_to_end() -> Outcome {
    let grid = GridSpec::default();
    let split = SplitSpec::default();
    let mut worst = 100.0f64;
    let mut lines = Vec::new();
    for seed in [42u64, 43, 44] {
        let d = blobs_500(seed);
        let recs = run_experiment(&d, &ModelSpec::defaults(), &grid, &SplitSpec { seed, ..split }, UniversumMethod::Split)
            .map_err(|e| e.to_string())?;
        for r in &recs {
            if r.failed() {
                return Err(format!("seed {seed} {}: {}", r.model, r.failure.as_deref().unwrap_or("")));
            }
            worst = worst.min(r.test_accuracy);
            if r.test_accuracy < 99.0 {
                lines.push(format!("seed {seed} {} {:.2}%", r.model, r.test_accuracy));
            }
        }
    }
    if !lines.is_empty() {
        return Err(format!("below 99%: {}", lines.join(", ")));
    }

    // label noise: GBU-TSVM at purity 0.9 against point TSVM
    let noisy_grid = GridSpec {
        purity: vec![0.9],
        ..GridSpec::default()
    };
    let mut ok = 0;
    let mut diffs = Vec::new();
    for seed in 0..10u64 {
        let d = flip_labels(&blobs_500(1000 + seed), 0.1, seed).map_err(|e| e.to_string())?;
        let recs = run_experiment(
            &d,
            &[ModelSpec::GBUTSVM, ModelSpec::TSVM],
            &noisy_grid,
            &SplitSpec { seed, ..split },
            UniversumMethod::Split,
        )
        .map_err(|e| e.to_string())?;
        if recs.iter().any(|r| r.failed()) {
            diffs.push("fail".to_string());
            continue;
        }
        let diff = recs[0].test_accuracy - recs[1].test_accuracy;
        diffs.push(format!("{diff:+.1}"));
        if diff >= -2.0 {
            ok += 1;
        }
    }
    let detail = format!("clean min {worst:.2}%; noisy GBU-TSVM minus TSVM [{}], {ok}/10 within 2 points", diffs.join(" "));
    if ok >= 8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c9_timing() -> Outcome {
    let d = separable_blobs(1000, 2, 4.0, 1.0, 9).unwrap().min_max_scaled();
    let recs = run_experiment(
        &d,
        &[ModelSpec::GBUTSVM, ModelSpec::UTSVM],
        &GridSpec::default(),
        &SplitSpec::default(),
        UniversumMethod::Split,
    )
    .map_err(|e| e.to_string())?;
    let (gb, ut) = (&recs[0], &recs[1]);
    if gb.failed() || ut.failed() {
        return Err(format!("run failed: {:?} {:?}", gb.failure, ut.failure));
    }
    let compression = gb.n_train as f64 / (gb.n_pos + gb.n_neg) as f64;
    if compression < 5.0 {
        return Err(format!("compression only {compression:.1}x"));
    }
    let detail = format!(
        "compression {compression:.1}x; refit GBU-TSVM {:.2e} s vs U-TSVM {:.2e} s (ratio {:.1})",
        gb.train_seconds,
        ut.train_seconds,
        ut.train_seconds / gb.train_seconds.max(1e-12)
    );
    if gb.train_seconds < ut.train_seconds {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c10_hinge() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..1000 {
        let f = rng.random_range(-5.0..5.0);
        let r = rng.random_range(0.0..2.0);
        let eps = rng.random_range(0.0..1.0);
        let plus = -1.0 + eps - f - r;
        let minus = -1.0 + eps + f - r;
        let want_plus = if plus > 0.0 { plus } else { 0.0 };
        let want_minus = if minus > 0.0 { minus } else { 0.0 };
        if universum_hinge(f, r, eps, HingeSide::Plus) != want_plus
            || universum_hinge(f, r, eps, HingeSide::Minus) != want_minus
        {
            return Err(format!("mismatch at f = {f}, r = {r}, eps = {eps}"));
        }
    }
    Ok("1000 points, exact".into())
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("1 Friedman ranks and statistic", c1_friedman, Some(Duration::from_secs(1))),
        ("2 Wilcoxon exact p-values", c2_wilcoxon, Some(Duration::from_secs(1))),
        ("3 Kruskal-Wallis", c3_kruskal, None),
        ("4 win-tie-loss", c4_win_tie_loss, None),
        ("5 reduction to TSVM and U-TSVM", c5_reduction, Some(Duration::from_secs(10))),
        ("6 QP solver vs enumeration", c6_qp, Some(Duration::from_secs(60))),
        ("7 granular-ball invariants", c7_balls, None),
        ("8 synthetic end-to-end", c8_end_to_end, None),
        ("9 refit timing trend", c9_timing, None),
        ("10 Universum hinge", c10_hinge, None),
    ];
    let mut failed = Vec::new();
    let mut out = std::io::stdout().lock();
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let mut result = check();
        let elapsed = start.elapsed();
        if let (Ok(detail), Some(limit)) = (&result, limit) {
            if elapsed > limit {
                result = Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}"));
            }
        }
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        writeln!(out, "{tag} [{name}] {detail} ({elapsed:.2?})").unwrap();
        if result.is_err() {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
