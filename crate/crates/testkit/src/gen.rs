//! Random logs and random DSL programs.

use rand::seq::SliceRandom;
use rand::Rng;
use scenmine_core::traj::{secs_to_ns, LogManifest, Track, TrackState};

/// Categories drawn for random tracks.
pub const CATEGORIES: &[&str] = &[
    "REGULAR_VEHICLE",
    "BUS",
    "PEDESTRIAN",
    "BICYCLIST",
    "BOX_TRUCK",
    "DOG",
];

/// Categories that may appear as literals in random programs.
pub const QUERY_CATEGORIES: &[&str] = &[
    "VEHICLE",
    "ANY",
    "REGULAR_VEHICLE",
    "PEDESTRIAN",
    "BICYCLIST",
    "BUS",
];

pub const FRAME_RATE: f64 = 10.0;

/// A log of at most `max_tracks` tracks on a shared `max_steps` frame grid.
/// Tracks cover random sub-ranges of the grid and drop some frames, so
/// timestamps only partly overlap. Objects stay within a 30 m square so
/// relational predicates fire often.
pub fn random_log<R: Rng>(
    rng: &mut R,
    log_id: &str,
    max_tracks: usize,
    max_steps: usize,
) -> LogManifest {
    let steps = rng.gen_range(2..=max_steps.max(2));
    let dt = 1.0 / FRAME_RATE;
    let n_tracks = rng.gen_range(1..=max_tracks.max(1));
    let mut tracks = Vec::with_capacity(n_tracks);
    for k in 0..n_tracks {
        let a = rng.gen_range(0..steps);
        let b = rng.gen_range(a..steps);
        let mut x = rng.gen_range(-15.0..15.0);
        let mut y = rng.gen_range(-15.0..15.0);
        let mut yaw: f64 = rng.gen_range(-3.1..3.1);
        let mut speed: f64 = rng.gen_range(0.0..6.0);
        let yaw_rate = rng.gen_range(-0.6..0.6);
        let accel = rng.gen_range(-2.0..2.0);
        let dims = [
            rng.gen_range(0.5..5.0),
            rng.gen_range(0.5..2.5),
            rng.gen_range(1.0..3.0),
        ];
        let drop = rng.gen_bool(0.3);
        let mut states = Vec::new();
        for i in a..=b {
            let skipped = drop && i != a && rng.gen_bool(0.15);
            if !skipped {
                states
                    .push(TrackState::planar(secs_to_ns(i as f64 * dt), x, y, yaw, dims).unwrap());
            }
            x += speed * yaw.cos() * dt;
            y += speed * yaw.sin() * dt;
            yaw += yaw_rate * dt;
            speed = (speed + accel * dt).max(0.0);
        }
        let cat = CATEGORIES.choose(rng).unwrap();
        tracks.push(Track::new(format!("t{k}"), *cat, states).unwrap());
    }
    let duration = ((steps - 1) as f64 * dt).max(dt);
    LogManifest::new(
        log_id,
        duration,
        vec!["ring_front_center".into()],
        FRAME_RATE,
        tracks,
    )
    .unwrap()
}

fn num<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> String {
    format!("{:.2}", rng.gen_range(lo..hi))
}

fn leaf<R: Rng>(rng: &mut R) -> String {
    match rng.gen_range(0..8) {
        0 | 1 => format!("category(\"{}\")", QUERY_CATEGORIES.choose(rng).unwrap()),
        2 => format!("stationary(max_speed={})", num(rng, 0.1, 3.0)),
        3 => format!("moving({})", num(rng, 0.1, 4.0)),
        4 => {
            let dir = if rng.gen_bool(0.5) { "left" } else { "right" };
            format!(
                "turning(\"{dir}\", min_yaw_rate={}, min_frames={})",
                num(rng, 0.05, 0.5),
                rng.gen_range(1..4)
            )
        }
        5 => format!("accelerating(min_accel={})", num(rng, 0.2, 2.0)),
        6 => format!("braking({})", num(rng, 0.2, 2.0)),
        _ => {
            let lo = rng.gen_range(0.0..3.0);
            format!(
                "speed_between(min={lo:.2}, max={:.2})",
                lo + rng.gen_range(0.0..4.0)
            )
        }
    }
}

/// Source of a random query expression of depth at most `depth`.
pub fn random_expr<R: Rng>(rng: &mut R, depth: usize) -> String {
    if depth <= 1 || rng.gen_bool(0.25) {
        return leaf(rng);
    }
    let d = depth - 1;
    match rng.gen_range(0..10) {
        0 | 1 => {
            let n = rng.gen_range(2..=3);
            let args: Vec<String> = (0..n).map(|_| random_expr(rng, d)).collect();
            format!("and({})", args.join(", "))
        }
        2 | 3 => {
            let n = rng.gen_range(2..=3);
            let args: Vec<String> = (0..n).map(|_| random_expr(rng, d)).collect();
            format!("or({})", args.join(", "))
        }
        4 => format!("not({})", random_expr(rng, d)),
        5 => format!(
            "heading_toward({}, max_angle={}, min_speed={})",
            random_expr(rng, d),
            num(rng, 5.0, 90.0),
            num(rng, 0.0, 2.0)
        ),
        6 => format!(
            "near({}, {}, distance={})",
            random_expr(rng, d),
            random_expr(rng, d),
            num(rng, 1.0, 12.0)
        ),
        7 => format!(
            "being_crossed_by({}, {}, forward={})",
            random_expr(rng, d),
            random_expr(rng, d),
            num(rng, 2.0, 20.0)
        ),
        _ => {
            let name = ["has_in_front", "has_behind", "has_to_left", "has_to_right"]
                .choose(rng)
                .unwrap();
            let tol = if name.starts_with("has_to") {
                "longitudinal_tolerance"
            } else {
                "lateral_tolerance"
            };
            format!(
                "{name}({}, {}, within={}, {tol}={})",
                random_expr(rng, d),
                random_expr(rng, d),
                num(rng, 2.0, 20.0),
                num(rng, 0.5, 6.0)
            )
        }
    }
}

/// A complete random program of depth at most `depth` (the `output` wrapper
/// does not count).
pub fn random_program<R: Rng>(rng: &mut R, depth: usize) -> String {
    format!("output({})", random_expr(rng, depth))
}

/// Random unit-free embedding with entries in `[-1, 1)`.
pub fn random_vec<R: Rng>(rng: &mut R, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}
