//! Mini-dataset with planted "vehicle with a pedestrian in front" events and
//! frame embeddings built so the event windows score highest.

use rand::Rng;
use scenmine_core::dsl::ScenarioMask;
use scenmine_core::smeb::EmbeddingStore;
use scenmine_core::traj::{secs_to_ns, LogManifest, Track, TrackState};

use crate::gen::random_vec;
use crate::rng;

pub const PLANTED_QUERY: &str = "vehicle with a pedestrian in front";
pub const PLANTED_PROGRAM: &str =
    "output(has_in_front(category(\"VEHICLE\"), category(\"PEDESTRIAN\"), within=10.0))";
pub const CAMERAS: [&str; 2] = ["ring_front_center", "ring_front_left"];

pub struct PlantedLog {
    pub log: LogManifest,
    pub truth: ScenarioMask,
    /// Event span in seconds, if planted.
    pub event: Option<(f64, f64)>,
}

pub struct PlantedDataset {
    pub logs: Vec<PlantedLog>,
    pub store: EmbeddingStore,
    pub query_id: String,
    pub query_embedding: Vec<f32>,
}

fn state(t: f64, x: f64, y: f64, yaw: f64, dims: [f64; 3]) -> TrackState {
    TrackState::planar(secs_to_ns(t), x, y, yaw, dims).unwrap()
}

/// `n_logs` logs of `duration` seconds at 10 Hz. Logs with index below
/// `n_positive` carry a 3 s event; the rest are negatives with the same
/// distractors. Embedding dimension is `dim`.
pub fn planted_dataset(
    n_logs: usize,
    n_positive: usize,
    duration: f64,
    dim: usize,
    seed: u64,
) -> PlantedDataset {
    let mut r = rng(seed);
    let mut q = random_vec(&mut r, dim);
    let qn = q.iter().map(|x| x * x).sum::<f32>().sqrt();
    q.iter_mut().for_each(|x| *x /= qn);
    let mut store = EmbeddingStore::new(dim);
    let query_id = "q_planted".to_string();
    store.add_text(&query_id, &q).unwrap();

    let steps = (duration * 10.0).round() as usize;
    let car = [4.6, 1.9, 1.6];
    let person = [0.6, 0.6, 1.7];
    let mut logs = Vec::with_capacity(n_logs);
    for li in 0..n_logs {
        let log_id = format!("log_{li:02}");
        let speed = r.gen_range(1.0..4.0);
        let ego_like = |t: f64| (t * speed, 0.0);
        let event = if li < n_positive {
            let start = r.gen_range(3..(duration as usize - 6)) as f64;
            Some((start, start + 3.0))
        } else {
            None
        };

        let mut tracks = Vec::new();
        let veh: Vec<TrackState> = (0..=steps)
            .map(|i| {
                let t = i as f64 / 10.0;
                let (x, y) = ego_like(t);
                state(t, x, y, 0.0, car)
            })
            .collect();
        tracks.push(Track::new("veh", "REGULAR_VEHICLE", veh).unwrap());
        let behind: Vec<TrackState> = (0..=steps)
            .map(|i| {
                let t = i as f64 / 10.0;
                let (x, _) = ego_like(t);
                state(t, x - 6.0, 0.2, 0.0, person)
            })
            .collect();
        tracks.push(Track::new("ped_behind", "PEDESTRIAN", behind).unwrap());
        let bus: Vec<TrackState> = (0..=steps)
            .map(|i| {
                let t = i as f64 / 10.0;
                state(
                    t,
                    60.0 - 5.0 * t,
                    40.0,
                    std::f64::consts::PI,
                    [12.0, 2.6, 3.2],
                )
            })
            .collect();
        tracks.push(Track::new("bus", "BUS", bus).unwrap());
        let mut truth = ScenarioMask::new(&log_id);
        if let Some((a, b)) = event {
            let (ia, ib) = ((a * 10.0).round() as usize, (b * 10.0).round() as usize);
            let ped: Vec<TrackState> = (ia..=ib)
                .map(|i| {
                    let t = i as f64 / 10.0;
                    let (x, _) = ego_like(t);
                    state(t, x + 5.0, 0.3, std::f64::consts::FRAC_PI_2, person)
                })
                .collect();
            tracks.push(Track::new("ped_front", "PEDESTRIAN", ped).unwrap());
            for i in ia..=ib {
                truth.insert("veh", secs_to_ns(i as f64 / 10.0));
            }
        }
        let log = LogManifest::new(
            &log_id,
            duration,
            CAMERAS.iter().map(|c| c.to_string()).collect(),
            10.0,
            tracks,
        )
        .unwrap();

        for cam in CAMERAS {
            for i in 0..=steps {
                let t = i as f64 / 10.0;
                let mut v = random_vec(&mut r, dim);
                if event.is_some_and(|(a, b)| t >= a - 1e-9 && t <= b + 1e-9) {
                    for (x, qx) in v.iter_mut().zip(&q) {
                        *x = 0.3 * *x + 3.0 * qx;
                    }
                }
                store.add_frame(&log_id, cam, secs_to_ns(t), &v).unwrap();
            }
        }
        logs.push(PlantedLog { log, truth, event });
    }
    PlantedDataset {
        logs,
        store,
        query_id,
        query_embedding: q,
    }
}
