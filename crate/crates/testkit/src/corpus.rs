//! Toy behaviour corpus: eight motion classes, each paired with a short
//! caption whose tokens come from a seeded random word table.

use std::collections::BTreeMap;

use rand::Rng;
use scenmine_core::traj::{Track, TrackState};

use crate::rng;

pub const CLASS_CAPTIONS: [&str; 8] = [
    "vehicle parked still",
    "vehicle driving slowly straight",
    "vehicle driving fast straight",
    "vehicle turning left",
    "vehicle turning right",
    "vehicle speeding up straight",
    "vehicle braking to stop",
    "vehicle changing lane left",
];

#[derive(Debug, Clone)]
pub struct ToySample {
    pub class: usize,
    pub track: Track,
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub samples: Vec<ToySample>,
    /// Token rows per class caption.
    pub captions: Vec<Vec<Vec<f64>>>,
}

/// Word vectors of dimension `dim`, one per distinct caption word.
pub fn word_table(dim: usize, seed: u64) -> BTreeMap<String, Vec<f64>> {
    let mut r = rng(seed);
    let mut words: Vec<&str> = CLASS_CAPTIONS.iter().flat_map(|c| c.split(' ')).collect();
    words.sort_unstable();
    words.dedup();
    words
        .into_iter()
        .map(|w| {
            (
                w.to_string(),
                (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect(),
            )
        })
        .collect()
}

fn motion<R: Rng>(r: &mut R, class: usize, len: usize, dt: f64) -> Vec<TrackState> {
    let jitter = |r: &mut R, s: f64| r.gen_range(-s..s);
    let (mut x, mut y) = (jitter(r, 1.0), jitter(r, 1.0));
    let mut yaw = jitter(r, 0.1);
    let base_speed = match class {
        0 => 0.0,
        1 => 3.0,
        2 => 12.0,
        3 | 4 | 7 => 6.0,
        5 => 2.0,
        _ => 12.0,
    } * (1.0 + jitter(r, 0.15));
    let mut speed: f64 = base_speed;
    let turn = 0.35 * (1.0 + jitter(r, 0.2));
    let dims = [
        4.5 + jitter(r, 0.3),
        1.9 + jitter(r, 0.1),
        1.6 + jitter(r, 0.1),
    ];
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let t = i as f64 * dt;
        let (px, py) = (x + jitter(r, 0.02), y + jitter(r, 0.02));
        out.push(TrackState::planar((t * 1e9).round() as i64, px, py, yaw, dims).unwrap());
        let yaw_rate = match class {
            3 => turn,
            4 => -turn,
            7 => {
                let period = len as f64 * dt;
                0.25 * (std::f64::consts::TAU * t / period).sin()
            }
            _ => 0.0,
        };
        let accel = match class {
            5 => 2.5,
            6 => -2.0,
            _ => 0.0,
        };
        x += speed * yaw.cos() * dt;
        y += speed * yaw.sin() * dt;
        yaw += yaw_rate * dt;
        speed = (speed + accel * dt).max(0.0);
    }
    out
}

/// `per_class` tracks of `len` states at 10 Hz for each of the eight
/// classes. Token rows have dimension `token_dim`.
pub fn toy_corpus(per_class: usize, len: usize, token_dim: usize, seed: u64) -> ToyCorpus {
    let table = word_table(token_dim, seed ^ 0x7ab1e);
    let captions = CLASS_CAPTIONS
        .iter()
        .map(|c| c.split(' ').map(|w| table[w].clone()).collect())
        .collect();
    let mut r = rng(seed);
    let mut samples = Vec::with_capacity(per_class * 8);
    for i in 0..per_class {
        for class in 0..8 {
            let states = motion(&mut r, class, len, 0.1);
            let track = Track::new(format!("c{class}_{i:02}"), "REGULAR_VEHICLE", states).unwrap();
            samples.push(ToySample { class, track });
        }
    }
    ToyCorpus { samples, captions }
}
