use proptest::prelude::*;
use rand::Rng;

use scenmine_matcher::loss::{global_infonce, infonce_from_scaled, mil_loss, total_loss};
use scenmine_matcher::model::{batch_loss_value, evidence_score, Matcher};
use scenmine_matcher::tensor::norm;
use scenmine_matcher::{EvidencePooling, LossConfig, Mat, MatcherConfig};
use scenmine_testkit::rng;

fn unit_rows(r: &mut impl Rng, n: usize, d: usize) -> Mat {
    let mut m = Mat::from_vec(n, d, (0..n * d).map(|_| r.gen_range(-1.0..1.0)).collect());
    for i in 0..n {
        let k = norm(m.row(i));
        m.row_mut(i).iter_mut().for_each(|x| *x /= k);
    }
    m
}

fn naive_infonce(s: &Mat) -> f64 {
    let n = s.rows;
    let mut rows = 0.0;
    let mut cols = 0.0;
    for i in 0..n {
        let r: f64 = (0..n).map(|j| s.at(i, j).exp()).sum();
        let c: f64 = (0..n).map(|j| s.at(j, i).exp()).sum();
        rows -= (s.at(i, i).exp() / r).ln();
        cols -= (s.at(i, i).exp() / c).ln();
    }
    (rows + cols) / (2.0 * n as f64)
}

#[test]
fn single_pair_is_zero() {
    let mut r = rng(1);
    for d in 1..8 {
        let b = unit_rows(&mut r, 1, d);
        let a = unit_rows(&mut r, 1, d);
        assert_eq!(global_infonce(&b, &a, 0.07).unwrap(), 0.0);
    }
    assert_eq!(infonce_from_scaled(&Mat::scalar(-40.0)).unwrap(), 0.0);
}

#[test]
fn equal_similarities_give_log_n() {
    for n in 1..=64 {
        for v in [-3.0, 0.0, 0.5, 14.0] {
            let l = infonce_from_scaled(&Mat::filled(n, n, v)).unwrap();
            assert!((l - (n as f64).ln()).abs() < 1e-12, "n={n} v={v}: {l}");
            let z = vec![v; n];
            let neg = vec![vec![v; n - 1]; n];
            let m = mil_loss(&z, &neg, 0.1).unwrap();
            assert!((m - (n as f64).ln()).abs() < 1e-12);
        }
    }
}

#[test]
fn no_negatives_is_zero() {
    for z in [-5.0, 0.0, 0.3, 9.0] {
        assert_eq!(
            mil_loss(&[z, z + 1.0], &[vec![], vec![]], 0.1).unwrap(),
            0.0
        );
    }
}

#[test]
fn rejects_bad_inputs() {
    assert!(mil_loss(&[1.0], &[], 0.1).is_err());
    assert!(mil_loss(&[], &[], 0.1).is_err());
    assert!(mil_loss(&[1.0], &[vec![0.0]], 0.0).is_err());
    assert!(infonce_from_scaled(&Mat::zeros(2, 3)).is_err());
    assert!(infonce_from_scaled(&Mat::filled(2, 2, f64::INFINITY)).is_err());
    let mut r = rng(2);
    let b = unit_rows(&mut r, 3, 4);
    assert!(global_infonce(&b, &unit_rows(&mut r, 2, 4), 0.07).is_err());
    assert!(global_infonce(&b, &b, 0.0).is_err());
}

#[test]
fn weighted_sum() {
    assert_eq!(total_loss(1.5, 2.0, 1.0, 1.0), 3.5);
    assert_eq!(total_loss(1.5, 2.0, 0.0, 0.0), 0.0);
}

/// The tape objective equals the reference losses evaluated on the encoder
/// outputs.
#[test]
fn graph_objective_matches_reference() {
    for (seed, pooling) in [
        (0, EvidencePooling::Max),
        (1, EvidencePooling::LogSumExp { temperature: 0.3 }),
    ] {
        let mut cfg = MatcherConfig::tiny();
        cfg.evidence = pooling;
        let model = Matcher::new(cfg.clone(), seed).unwrap();
        let mut r = rng(seed + 10);
        let n = 5;
        let tracks: Vec<Mat> = (0..n)
            .map(|_| {
                let len = r.gen_range(4..12);
                Mat::from_vec(
                    len,
                    10,
                    (0..len * 10).map(|_| r.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let texts: Vec<Mat> = (0..n)
            .map(|_| {
                let len = r.gen_range(1..5);
                Mat::from_vec(
                    len,
                    5,
                    (0..len * 5).map(|_| r.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let loss = LossConfig {
            lambda_mil: 0.7,
            lambda_global: 1.3,
            ..LossConfig::default()
        };
        let got = batch_loss_value(&cfg, &model.params, &tracks, &texts, &loss).unwrap();

        let et: Vec<_> = tracks
            .iter()
            .map(|t| model.encode_features(t).unwrap())
            .collect();
        let ex: Vec<_> = texts
            .iter()
            .map(|t| model.encode_text(t).unwrap())
            .collect();
        let z = |i: usize, j: usize| evidence_score(&model.alignment(&et[i], &ex[j]), pooling);
        let pos: Vec<f64> = (0..n).map(|i| z(i, i)).collect();
        let neg: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).map(|j| z(i, j)).collect())
            .collect();
        let mil = mil_loss(&pos, &neg, loss.gamma).unwrap();
        let b = Mat::from_rows(&et.iter().map(|e| e.pooled.clone()).collect::<Vec<_>>());
        let a = Mat::from_rows(&ex.iter().map(|e| e.pooled.clone()).collect::<Vec<_>>());
        let global = global_infonce(&b, &a, loss.tau).unwrap();
        assert!((got.mil - mil).abs() < 1e-10, "{} vs {mil}", got.mil);
        assert!(
            (got.global - global).abs() < 1e-10,
            "{} vs {global}",
            got.global
        );
        assert!((got.total - total_loss(mil, global, 0.7, 1.3)).abs() < 1e-10);
    }
}

fn scaled(n: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-30.0f64..30.0, n * n).prop_map(move |v| Mat::from_vec(n, n, v))
}

fn batch() -> impl Strategy<Value = (usize, u64, f64)> {
    (1usize..9, any::<u64>(), 0.02f64..2.0)
}

proptest! {
    #[test]
    fn infonce_matches_naive_sum(s in (1usize..7).prop_flat_map(scaled)) {
        let got = infonce_from_scaled(&s).unwrap();
        prop_assert!((got - naive_infonce(&s)).abs() < 1e-9 * (1.0 + got.abs()));
    }

    #[test]
    fn infonce_symmetric_in_modalities((n, seed, tau) in batch()) {
        let mut r = rng(seed);
        let b = unit_rows(&mut r, n, 6);
        let a = unit_rows(&mut r, n, 6);
        let x = global_infonce(&b, &a, tau).unwrap();
        let y = global_infonce(&a, &b, tau).unwrap();
        prop_assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn infonce_permutation_invariant((n, seed, tau) in batch()) {
        let mut r = rng(seed);
        let b = unit_rows(&mut r, n, 6);
        let a = unit_rows(&mut r, n, 6);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut r);
        let pb = Mat::from_rows(&perm.iter().map(|&i| b.row(i).to_vec()).collect::<Vec<_>>());
        let pa = Mat::from_rows(&perm.iter().map(|&i| a.row(i).to_vec()).collect::<Vec<_>>());
        let x = global_infonce(&b, &a, tau).unwrap();
        let y = global_infonce(&pb, &pa, tau).unwrap();
        prop_assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn infonce_bounds((n, seed, tau) in batch()) {
        let mut r = rng(seed);
        let b = unit_rows(&mut r, n, 6);
        let a = unit_rows(&mut r, n, 6);
        let l = global_infonce(&b, &a, tau).unwrap();
        let s = b.matmul_t(&a).scale(1.0 / tau);
        let t = s.transpose();
        let margin = |m: &Mat| {
            (0..n).map(|i| m.row(i).iter().copied().fold(f64::MIN, f64::max) - m.at(i, i)).sum::<f64>() / n as f64
        };
        let bound = (n as f64).ln() + 0.5 * (margin(&s) + margin(&t));
        prop_assert!(l >= 0.0);
        prop_assert!(l <= bound + 1e-12, "{l} > {bound}");
    }

    #[test]
    fn infonce_row_shift_invariant(s in (1usize..7).prop_flat_map(scaled), c in -50.0f64..50.0, row in 0usize..7) {
        // one-directional cross entropy over rows only
        let n = s.rows;
        let row = row % n;
        let ce = |m: &Mat| (0..n)
            .map(|i| {
                let mx = m.row(i).iter().copied().fold(f64::MIN, f64::max);
                mx + m.row(i).iter().map(|x| (x - mx).exp()).sum::<f64>().ln() - m.at(i, i)
            })
            .sum::<f64>();
        let mut shifted = s.clone();
        shifted.row_mut(row).iter_mut().for_each(|x| *x += c);
        prop_assert!((ce(&s) - ce(&shifted)).abs() < 1e-10);
        // the symmetric loss moves only through the column terms
        let a = infonce_from_scaled(&s).unwrap();
        let b = infonce_from_scaled(&shifted).unwrap();
        let cols = |m: &Mat| ce(&m.transpose());
        prop_assert!(((b - a) - 0.5 * (cols(&shifted) - cols(&s)) / n as f64).abs() < 1e-9);
    }

    #[test]
    fn mil_shift_and_permutation(
        rows in prop::collection::vec((-3.0f64..3.0, prop::collection::vec(-3.0f64..3.0, 0..6)), 1..7),
        c in -10.0f64..10.0,
        gamma in 0.05f64..2.0,
    ) {
        let pos: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let neg: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
        let base = mil_loss(&pos, &neg, gamma).unwrap();
        prop_assert!(base >= 0.0);
        let mut pos2 = pos.clone();
        let mut neg2 = neg.clone();
        pos2[0] += c;
        neg2[0].iter_mut().for_each(|x| *x += c);
        prop_assert!((mil_loss(&pos2, &neg2, gamma).unwrap() - base).abs() < 1e-10);
        let mut rev_pos = pos.clone();
        let mut rev_neg = neg.clone();
        rev_pos.reverse();
        rev_neg.reverse();
        prop_assert!((mil_loss(&rev_pos, &rev_neg, gamma).unwrap() - base).abs() < 1e-12);
    }
}
