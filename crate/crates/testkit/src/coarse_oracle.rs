//! Brute-force window scoring, full sort and interval merge.

use std::collections::BTreeMap;

use rand::Rng;
use scenmine_core::smeb::EmbeddingStore;
use scenmine_core::traj::{secs_to_ns, LogManifest};

use crate::gen::random_vec;
use crate::rng;

/// Frame embeddings of one log keyed by camera, each list sorted by time.
pub type CameraFrames = BTreeMap<String, Vec<(i64, Vec<f32>)>>;

pub struct OracleLog {
    pub log_id: String,
    pub duration: f64,
    pub cameras: Vec<String>,
    pub frames: CameraFrames,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleWindow {
    pub log_id: String,
    pub start: f64,
    pub end: f64,
    pub score: f64,
}

/// Window starts by stepping until the window would overrun, then a clipped
/// tail if the end is not reached.
pub fn windows(duration: f64, w: f64, s: f64) -> Vec<(f64, f64)> {
    let w = w.min(duration);
    let mut out = Vec::new();
    let mut i = 0usize;
    loop {
        let start = i as f64 * s;
        if start + w > duration + 1e-9 {
            break;
        }
        out.push((start, start + w));
        i += 1;
    }
    if out.last().is_none_or(|x| duration - x.1 > 1e-9) {
        out.push((duration - w, duration));
    }
    out
}

fn sample(m: usize, n: usize) -> Vec<usize> {
    if m <= n {
        return (0..m).collect();
    }
    let mut picks: Vec<usize> = Vec::new();
    for k in 0..n {
        let pos = if n == 1 {
            (m - 1) / 2
        } else {
            ((k * (m - 1)) as f64 / (n - 1) as f64).round() as usize
        };
        if !picks.contains(&pos) {
            picks.push(pos);
        }
    }
    picks
}

fn cos(a: &[f64], b: &[f64]) -> Option<f64> {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub fn score_all(
    logs: &[OracleLog],
    query: &[f64],
    w: f64,
    s: f64,
    per_view: usize,
) -> Vec<OracleWindow> {
    let mut out = Vec::new();
    for log in logs {
        for (start, end) in windows(log.duration, w, s) {
            let lo = (start * 1e9).round() as i64;
            let hi = (end * 1e9).round() as i64;
            let mut total = 0.0;
            for cam in &log.cameras {
                let inside: Vec<&Vec<f32>> = log
                    .frames
                    .get(cam)
                    .map(|f| {
                        f.iter()
                            .filter(|(t, _)| *t >= lo && *t <= hi)
                            .map(|(_, v)| v)
                            .collect()
                    })
                    .unwrap_or_default();
                if inside.is_empty() {
                    continue;
                }
                let picks = sample(inside.len(), per_view);
                let mut mean = vec![0.0f64; query.len()];
                for &p in &picks {
                    for (m, x) in mean.iter_mut().zip(inside[p]) {
                        *m += f64::from(*x);
                    }
                }
                for m in &mut mean {
                    *m /= picks.len() as f64;
                }
                total += cos(query, &mean).unwrap_or(0.0);
            }
            out.push(OracleWindow {
                log_id: log.log_id.clone(),
                start,
                end,
                score: total,
            });
        }
    }
    out
}

/// Best `k` windows after a full sort.
pub fn select(mut all: Vec<OracleWindow>, k: usize) -> Vec<OracleWindow> {
    all.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.start.partial_cmp(&b.start).unwrap())
            .then(a.log_id.cmp(&b.log_id))
    });
    all.truncate(k);
    all
}

/// Per-log union of the selected windows as disjoint sorted intervals.
pub fn merge(selected: &[OracleWindow]) -> BTreeMap<String, Vec<(f64, f64)>> {
    let mut per: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for w in selected {
        per.entry(w.log_id.clone())
            .or_default()
            .push((w.start, w.end));
    }
    for iv in per.values_mut() {
        iv.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for &(s, e) in iv.iter() {
            if let Some(last) = merged.last_mut() {
                if s <= last.1 {
                    if e > last.1 {
                        last.1 = e;
                    }
                    continue;
                }
            }
            merged.push((s, e));
        }
        *iv = merged;
    }
    per
}

/// `n_logs` logs of random length with 1 to 3 cameras at mixed rates,
/// about a tenth of frames dropped, random frame embeddings and a random
/// query.
pub fn synthetic_logs(
    seed: u64,
    n_logs: usize,
    dim: usize,
) -> (EmbeddingStore, Vec<LogManifest>, Vec<OracleLog>, Vec<f64>) {
    let mut r = rng(seed);
    let mut store = EmbeddingStore::new(dim);
    let mut logs = Vec::new();
    let mut oracle = Vec::new();
    for i in 0..n_logs {
        let id = format!("log{i:03}");
        let duration = (r.gen_range(20..=300) as f64) / 10.0;
        let n_cams = r.gen_range(1..=3);
        let cams: Vec<String> = (0..n_cams).map(|c| format!("cam{c}")).collect();
        let mut frames = CameraFrames::new();
        for cam in &cams {
            let hz = [2.0, 5.0, 10.0][r.gen_range(0..3)];
            let n = (duration * hz).floor() as usize;
            let mut list = Vec::new();
            for k in 0..=n {
                if r.gen_bool(0.1) {
                    continue;
                }
                let ts = secs_to_ns(k as f64 / hz);
                let v = random_vec(&mut r, dim);
                store.add_frame(&id, cam, ts, &v).unwrap();
                list.push((ts, v));
            }
            frames.insert(cam.clone(), list);
        }
        logs.push(LogManifest::new(&id, duration, cams.clone(), 10.0, vec![]).unwrap());
        oracle.push(OracleLog {
            log_id: id,
            duration,
            cameras: cams,
            frames,
        });
    }
    let q: Vec<f64> = random_vec(&mut r, dim).into_iter().map(f64::from).collect();
    (store, logs, oracle, q)
}
