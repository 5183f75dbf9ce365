use proptest::prelude::*;
use scenmine_core::smeb::{EmbeddingMatrix, EmbeddingStore, SmebError};
use scenmine_core::traj::{
    fit_norm_stats, normalize_features, read_log, wrap_angle, write_log, yaw_from_quaternion,
    Quaternion,
};
use scenmine_testkit::gen::{random_log, random_vec};
use scenmine_testkit::rng;

#[test]
fn log_round_trips_through_jsonl() {
    let mut r = rng(1);
    for i in 0..20 {
        let log = random_log(&mut r, &format!("rt{i}"), 6, 30);
        let mut buf = Vec::new();
        write_log(&log, &mut buf).unwrap();
        assert_eq!(read_log(buf.as_slice()).unwrap(), log);
    }
}

#[test]
fn normalized_features_have_zero_mean_unit_spread() {
    let log = random_log(&mut rng(2), "n", 10, 50);
    let stats = fit_norm_stats(&log.tracks).unwrap();
    let rows: Vec<[f64; 10]> = log
        .tracks
        .iter()
        .flat_map(|t| {
            t.states
                .iter()
                .map(|s| normalize_features(&stats, &s.features()))
        })
        .collect();
    let n = rows.len() as f64;
    for d in [0, 1, 6, 7] {
        let mean = rows.iter().map(|x| x[d]).sum::<f64>() / n;
        let var = rows.iter().map(|x| (x[d] - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9, "dim {d} mean {mean}");
        if stats.std[d] > 1e-6 {
            assert!((var - 1.0).abs() < 1e-9, "dim {d} var {var}");
        }
    }
}

#[test]
fn store_round_trip_is_byte_exact() {
    let mut r = rng(3);
    let mut store = EmbeddingStore::new(16);
    for k in 0..50 {
        store
            .add_frame("log", "cam", k * 100_000_000, &random_vec(&mut r, 16))
            .unwrap();
    }
    store.add_text("q0", &random_vec(&mut r, 16)).unwrap();
    for p in 0..4 {
        store.add_token("q0", p, &random_vec(&mut r, 16)).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let (bin, idx) = (dir.path().join("e.smeb"), dir.path().join("e.index.jsonl"));
    store.save(&bin, &idx).unwrap();
    let back = EmbeddingStore::load(&bin, &idx).unwrap();
    let (bin2, idx2) = (dir.path().join("f.smeb"), dir.path().join("f.index.jsonl"));
    back.save(&bin2, &idx2).unwrap();
    assert_eq!(std::fs::read(&bin).unwrap(), std::fs::read(&bin2).unwrap());
    assert_eq!(std::fs::read(&idx).unwrap(), std::fs::read(&idx2).unwrap());
    assert_eq!(back.tokens("q0").unwrap().len(), 4);
    assert_eq!(back.frames_of("log", "cam").len(), 50);
    assert_eq!(back.text("q0"), store.text("q0"));
}

#[test]
fn malformed_files_are_rejected() {
    let mut m = EmbeddingMatrix::new(3);
    m.push(&[1.0, 2.0, 3.0]).unwrap();
    let bytes = m.to_bytes();
    assert!(matches!(
        EmbeddingMatrix::read_from(&bytes[..bytes.len() - 1]),
        Err(SmebError::Truncated { .. })
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        EmbeddingMatrix::read_from(bad.as_slice()),
        Err(SmebError::BadMagic)
    ));
    assert!(matches!(m.push(&[1.0]), Err(SmebError::DimMismatch { .. })));
    let empty = EmbeddingMatrix::new(7);
    assert_eq!(
        EmbeddingMatrix::read_from(empty.to_bytes().as_slice())
            .unwrap()
            .rows(),
        0
    );
}

proptest! {
    #[test]
    fn yaw_survives_quaternion_sign(yaw in -3.14f64..3.14) {
        let q = Quaternion::from_yaw(yaw);
        let a = yaw_from_quaternion(q).unwrap();
        let b = yaw_from_quaternion(-q).unwrap();
        prop_assert!(wrap_angle(a - yaw).abs() < 1e-9);
        prop_assert!(wrap_angle(a - b).abs() < 1e-12);
    }

    #[test]
    fn wrapped_angles_stay_in_range(a in -100.0f64..100.0) {
        let w = wrap_angle(a);
        prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        prop_assert!(((a - w) / std::f64::consts::TAU - ((a - w) / std::f64::consts::TAU).round()).abs() < 1e-9);
    }

    #[test]
    fn matrix_bytes_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e6f32..1e6, 5), 0..20)) {
        let mut m = EmbeddingMatrix::new(5);
        for r in &rows {
            m.push(r).unwrap();
        }
        let back = EmbeddingMatrix::read_from(m.to_bytes().as_slice()).unwrap();
        prop_assert_eq!(back.to_bytes(), m.to_bytes());
    }
}
