mod common;

use common::{check_ball_invariants, random_dataset, reference_split};
use gbtsvm::data::{flip_labels, separable_blobs, Dataset, Label};
use gbtsvm::granular::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_reference_splitter_on_noisy_mixture() {
    let d = flip_labels(&separable_blobs(200, 2, 0.5, 1.0, 3).unwrap(), 0.05, 4).unwrap();
    let cfg = BallGenConfig { seed: 17, ..BallGenConfig::new(4, 0.95) };
    let raw = split_until_pure(&d, &cfg).unwrap();
    let expected = reference_split(&d, 0.95, 17, cfg.max_iter);
    let got: Vec<Vec<usize>> = raw.balls.iter().map(|b| b.members.clone()).collect();
    assert_eq!(got, expected);

    let survivors = generate_balls(&d, &cfg).unwrap();
    let filtered: Vec<Vec<usize>> = expected.into_iter().filter(|m| {
        let pos = m.iter().filter(|&&i| d.labels()[i] == Label::Positive).count();
        m.len() >= 4 && pos.max(m.len() - pos) as f64 / m.len() as f64 >= 0.95
    }).collect();
    let got: Vec<Vec<usize>> = survivors.balls.iter().map(|b| b.members.clone()).collect();
    assert_eq!(got, filtered);
}

#[test]
fn universum_slice_matches_reference_splitter() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let u = random_dataset(&mut rng, 100, 3, 0.1);
    let cfg = BallGenConfig::new(2, 0.9);
    let set = universum_balls_split(&u, &cfg).unwrap();
    assert!(set.balls.iter().all(|b| b.label == BallLabel::Unlabeled));
    let expected: Vec<Vec<usize>> = reference_split(&u, 0.9, cfg.seed, cfg.max_iter)
        .into_iter()
        .filter(|m| {
            let pos = m.iter().filter(|&&i| u.labels()[i] == Label::Positive).count();
            m.len() >= 2 && pos.max(m.len() - pos) as f64 / m.len() as f64 >= 0.9
        })
        .collect();
    let got: Vec<Vec<usize>> = set.balls.iter().map(|b| b.members.clone()).collect();
    assert_eq!(got, expected);
    check_ball_invariants(&set, &u).unwrap();
}

#[test]
fn delete_pass_is_a_predicate_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = random_dataset(&mut rng, 150, 2, 0.2);
    let cfg = BallGenConfig::new(5, 0.8);
    let raw = split_until_pure(&d, &cfg).unwrap();
    let kept = delete_unqualified(raw.clone());
    let expected: Vec<_> = raw.balls.iter().filter(|b| b.members.len() >= 5 && b.purity >= 0.8).cloned().collect();
    assert_eq!(kept.balls, expected);
}

#[test]
fn single_sample_universum() {
    let u = Dataset::from_rows("u", &[vec![0.3, 0.7]], vec![Label::Negative]).unwrap();
    let set = universum_balls_split(&u, &BallGenConfig::new(1, 0.9)).unwrap();
    assert_eq!(set.len(), 1);
    assert_eq!(set.balls[0].radius, 0.0);
}

#[test]
fn separable_pure_balls_are_single_label() {
    let d = separable_blobs(120, 3, 2.0, 1.0, 5).unwrap();
    let set = generate_balls(&d, &BallGenConfig::new(1, 1.0)).unwrap();
    for b in &set.balls {
        let first = d.labels()[b.members[0]];
        assert!(b.members.iter().all(|&i| d.labels()[i] == first));
    }
}

#[test]
fn average_mode_pairing() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let d = random_dataset(&mut rng, 120, 2, 0.0);
    let set = generate_balls(&d, &BallGenConfig::new(1, 1.0)).unwrap();
    let avg = averaged_universum(&set).unwrap();
    let (np, nn) = (set.count(BallLabel::Positive), set.count(BallLabel::Negative));
    assert_eq!(avg.len(), np.min(nn));
    let mut pos: Vec<_> = set.with_label(BallLabel::Positive).collect();
    let mut neg: Vec<_> = set.with_label(BallLabel::Negative).collect();
    pos.sort_by_key(|b| std::cmp::Reverse(b.len()));
    neg.sort_by_key(|b| std::cmp::Reverse(b.len()));
    for (k, u) in avg.balls.iter().enumerate() {
        assert_eq!(u.label, BallLabel::Unlabeled);
        assert_eq!(u.radius, (pos[k].radius + neg[k].radius) / 2.0);
        for j in 0..2 {
            assert_eq!(u.center[j], (pos[k].center[j] + neg[k].center[j]) / 2.0);
        }
    }
}

#[test]
fn csv_matches_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = random_dataset(&mut rng, 40, 2, 0.1);
    let set = generate_balls(&d, &BallGenConfig::new(1, 0.9)).unwrap();
    let text = set.to_csv_string();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), vec!["ball_id", "label", "radius", "purity", "member_count", "c0", "c1"]);
    for (rec, b) in rdr.records().zip(&set.balls) {
        let rec = rec.unwrap();
        assert_eq!(rec[2].parse::<f64>().unwrap(), b.radius);
        assert_eq!(rec[4].parse::<usize>().unwrap(), b.members.len());
        assert_eq!(rec[5].parse::<f64>().unwrap(), b.center[0]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn invariants_hold_on_random_data(seed in 0u64..100_000, num_min in 1usize..6, purity in 0.6f64..=1.0, max_mode in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_dataset(&mut rng, 60, 2, 0.15);
        let cfg = BallGenConfig {
            seed,
            radius_mode: if max_mode { RadiusMode::Maximum } else { RadiusMode::Average },
            ..BallGenConfig::new(num_min, purity)
        };
        match generate_balls(&d, &cfg) {
            Ok(set) => prop_assert!(check_ball_invariants(&set, &d).is_ok(), "{:?}", check_ball_invariants(&set, &d)),
            Err(GranularError::NoBallsSurvive { .. }) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn raising_purity_never_reduces_splits(seed in 0u64..100_000, p1 in 0.55f64..1.0, p2 in 0.55f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_dataset(&mut rng, 50, 2, 0.2);
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        let a = split_until_pure(&d, &BallGenConfig { seed, ..BallGenConfig::new(1, lo) }).unwrap();
        let b = split_until_pure(&d, &BallGenConfig { seed, ..BallGenConfig::new(1, hi) }).unwrap();
        prop_assert!(b.splits >= a.splits);
    }
}
