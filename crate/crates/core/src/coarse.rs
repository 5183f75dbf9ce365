//! Embedding-similarity window selection.
//!
//! Each log is cut into overlapping windows. Per camera, a fixed number of
//! frames is sampled uniformly from the window, averaged and compared to the
//! query embedding; the per-camera cosines are summed. The best `k` windows
//! across all logs are merged into a [`TimeRegion`] which then restricts the
//! tracks handed to the symbolic stage.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smeb::EmbeddingStore;
use crate::traj::{secs_to_ns, LogManifest};

#[derive(Debug, Error, PartialEq)]
pub enum CoarseError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("cosine similarity undefined for a zero vector")]
    UndefinedSimilarity,
}

pub type Result<T> = std::result::Result<T, CoarseError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QueryTextMode {
    #[default]
    Terms,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarseConfig {
    pub window: f64,
    pub stride: f64,
    pub frames_per_view: usize,
    pub top_k: usize,
    /// Windows separated by at most this many seconds are merged.
    pub merge_slack: f64,
    pub query_text: QueryTextMode,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self {
            window: 3.0,
            stride: 1.0,
            frames_per_view: 5,
            top_k: 5,
            merge_slack: 0.0,
            query_text: QueryTextMode::Terms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub log_id: String,
    pub start: f64,
    pub end: f64,
    pub score: f64,
}

/// Disjoint sorted intervals (seconds) per log.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimeRegion {
    pub intervals: BTreeMap<String, Vec<(f64, f64)>>,
}

impl TimeRegion {
    pub fn whole(log: &LogManifest) -> Self {
        let mut r = Self::default();
        r.intervals
            .insert(log.log_id.clone(), vec![(0.0, log.duration)]);
        r
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.values().all(Vec::is_empty)
    }

    pub fn for_log(&self, log_id: &str) -> &[(f64, f64)] {
        self.intervals.get(log_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn logs(&self) -> impl Iterator<Item = &str> {
        self.intervals
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, _)| k.as_str())
    }

    pub fn contains(&self, log_id: &str, t: f64) -> bool {
        self.for_log(log_id).iter().any(|&(a, b)| a <= t && t <= b)
    }

    /// Intervals of one log in nanoseconds, usable as an evaluation domain.
    pub fn domain_ns(&self, log_id: &str) -> Vec<(i64, i64)> {
        self.for_log(log_id)
            .iter()
            .map(|&(a, b)| (secs_to_ns(a), secs_to_ns(b)))
            .collect()
    }

    pub fn covered_seconds(&self) -> f64 {
        self.intervals.values().flatten().map(|(a, b)| b - a).sum()
    }
}

/// Sliding windows `[i*stride, i*stride + window]`, plus a clipped tail
/// window ending at `duration` when the regular ones stop short of it.
pub fn partition_windows(duration: f64, window: f64, stride: f64) -> Result<Vec<(f64, f64)>> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(CoarseError::InvalidInput(format!(
            "window length {window} must be positive"
        )));
    }
    if !(stride > 0.0 && stride.is_finite()) {
        return Err(CoarseError::InvalidInput(format!(
            "stride {stride} must be positive"
        )));
    }
    if !duration.is_finite() || window > duration {
        return Err(CoarseError::InvalidInput(format!(
            "window length {window} exceeds log duration {duration}"
        )));
    }
    let last = ((duration - window) / stride + 1e-9).floor() as usize;
    let mut out: Vec<(f64, f64)> = (0..=last)
        .map(|i| {
            let s = i as f64 * stride;
            (s, s + window)
        })
        .collect();
    let end = out.last().map(|w| w.1).unwrap_or(0.0);
    if duration - end > 1e-9 {
        out.push((duration - window, duration));
    }
    Ok(out)
}

/// Elementwise mean.
pub fn pool_window<V: AsRef<[f32]>>(frames: &[V]) -> Result<Vec<f64>> {
    let first = frames
        .first()
        .ok_or_else(|| CoarseError::InvalidInput("cannot pool an empty frame list".into()))?;
    let dim = first.as_ref().len();
    let mut acc = vec![0.0f64; dim];
    for f in frames {
        let f = f.as_ref();
        if f.len() != dim {
            return Err(CoarseError::InvalidInput(format!(
                "frame dim {} differs from {dim}",
                f.len()
            )));
        }
        for (a, &x) in acc.iter_mut().zip(f) {
            *a += f64::from(x);
        }
    }
    let n = frames.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoarseError::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(CoarseError::UndefinedSimilarity);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity between a query embedding and a pooled window.
pub fn score_window(text: &[f64], window: &[f64]) -> Result<f64> {
    cosine(text, window)
}

/// Indices of `n` frames spread evenly over `m` candidates (all if `m <= n`).
pub fn uniform_sample(m: usize, n: usize) -> Vec<usize> {
    if m <= n {
        return (0..m).collect();
    }
    if n == 1 {
        return vec![(m - 1) / 2];
    }
    let mut out: Vec<usize> = (0..n)
        .map(|k| ((k * (m - 1)) as f64 / (n - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

/// Scores every window of one log. Cameras without frames in a window add 0.
pub fn score_log(
    store: &EmbeddingStore,
    log_id: &str,
    duration: f64,
    camera_ids: &[String],
    query: &[f64],
    cfg: &CoarseConfig,
) -> Result<Vec<WindowScore>> {
    if cfg.frames_per_view == 0 {
        return Err(CoarseError::InvalidInput(
            "frames_per_view must be at least 1".into(),
        ));
    }
    let windows = partition_windows(duration, cfg.window, cfg.stride)?;
    let mut out = Vec::with_capacity(windows.len());
    for (start, end) in windows {
        let (lo, hi) = (secs_to_ns(start), secs_to_ns(end));
        let mut score = 0.0;
        for cam in camera_ids {
            let frames = store.frames_of(log_id, cam);
            let a = frames.partition_point(|(t, _)| *t < lo);
            let b = frames.partition_point(|(t, _)| *t <= hi);
            if a == b {
                continue;
            }
            let picked: Vec<&[f32]> = uniform_sample(b - a, cfg.frames_per_view)
                .into_iter()
                .map(|i| store.row(frames[a + i].1))
                .collect();
            let pooled = pool_window(&picked)?;
            match score_window(query, &pooled) {
                Ok(s) => score += s,
                Err(CoarseError::UndefinedSimilarity) if pooled.iter().all(|x| *x == 0.0) => {}
                Err(e) => return Err(e),
            }
        }
        out.push(WindowScore {
            log_id: log_id.to_string(),
            start,
            end,
            score,
        });
    }
    Ok(out)
}

fn rank_order(a: &WindowScore, b: &WindowScore) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start.total_cmp(&b.start))
        .then_with(|| a.log_id.cmp(&b.log_id))
}

/// The `k` best windows, best first.
pub fn top_k(scores: &[WindowScore], k: usize) -> Vec<WindowScore> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(rank_order);
    sorted.truncate(k);
    sorted
}

/// Merges sorted intervals whose gap is at most `slack`.
pub fn merge_intervals(mut iv: Vec<(f64, f64)>, slack: f64) -> Vec<(f64, f64)> {
    iv.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
    for (s, e) in iv {
        match out.last_mut() {
            Some(last) if s - last.1 <= slack => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

pub fn rank_and_merge(scores: &[WindowScore], k: usize) -> TimeRegion {
    rank_and_merge_with(scores, k, 0.0)
}

pub fn rank_and_merge_with(scores: &[WindowScore], k: usize, slack: f64) -> TimeRegion {
    let mut per_log: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for w in top_k(scores, k) {
        per_log.entry(w.log_id).or_default().push((w.start, w.end));
    }
    TimeRegion {
        intervals: per_log
            .into_iter()
            .map(|(log, iv)| (log, merge_intervals(iv, slack)))
            .collect(),
    }
}

/// A log cut down to the tracks that touch a region, with the region's
/// intervals kept as an evaluation domain.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedLog {
    pub log: LogManifest,
    pub domain: Vec<(i64, i64)>,
}

pub fn restrict_tracks(log: &LogManifest, region: &TimeRegion) -> RestrictedLog {
    let domain = region.domain_ns(&log.log_id);
    let inside = |t: i64| domain.iter().any(|&(a, b)| a <= t && t <= b);
    let tracks = log
        .tracks
        .iter()
        .filter(|tr| tr.states.iter().any(|s| inside(s.ts_ns)))
        .cloned()
        .collect();
    RestrictedLog {
        log: LogManifest {
            tracks,
            ..log.clone()
        },
        domain,
    }
}

pub fn coarse_filter<'a, I>(
    store: &EmbeddingStore,
    logs: I,
    query: &[f64],
    cfg: &CoarseConfig,
) -> Result<(Vec<WindowScore>, TimeRegion)>
where
    I: IntoIterator<Item = &'a LogManifest>,
{
    if cfg.top_k == 0 {
        return Err(CoarseError::InvalidInput("top_k must be at least 1".into()));
    }
    let mut scores = Vec::new();
    for log in logs {
        if log.duration < cfg.window {
            // Too short to window: treat the whole log as one window.
            let one = CoarseConfig {
                window: log.duration,
                ..cfg.clone()
            };
            if log.duration > 0.0 {
                scores.extend(score_log(
                    store,
                    &log.log_id,
                    log.duration,
                    &log.camera_ids,
                    query,
                    &one,
                )?);
            }
            continue;
        }
        scores.extend(score_log(
            store,
            &log.log_id,
            log.duration,
            &log.camera_ids,
            query,
            cfg,
        )?);
    }
    let region = rank_and_merge_with(&scores, cfg.top_k, cfg.merge_slack);
    Ok((scores, region))
}

/// Colour, entity and spatial-relation vocabularies for query term extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicons {
    pub colors: Vec<String>,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
}

const DEFAULT_COLORS: &[&str] = &[
    "red", "orange", "yellow", "green", "blue", "purple", "pink", "brown", "black", "white",
    "gray", "grey", "silver", "gold",
];

const DEFAULT_ENTITIES: &[&str] = &[
    "vehicle",
    "car",
    "truck",
    "box truck",
    "bus",
    "school bus",
    "van",
    "suv",
    "trailer",
    "pedestrian",
    "person",
    "people",
    "cyclist",
    "bicyclist",
    "bicycle",
    "bike",
    "motorcycle",
    "motorcyclist",
    "scooter",
    "stroller",
    "wheelchair",
    "dog",
    "animal",
    "cone",
    "bollard",
    "barrel",
    "sign",
    "stop sign",
];

const DEFAULT_RELATIONS: &[&str] = &[
    "in front of",
    "ahead",
    "behind",
    "left",
    "right",
    "to the left of",
    "to the right of",
    "near",
    "beside",
    "next to",
    "crossing",
    "following",
    "passing",
    "approaching",
    "toward",
    "towards",
    "between",
    "oncoming",
    "adjacent",
];

impl Default for Lexicons {
    fn default() -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            colors: own(DEFAULT_COLORS),
            entities: own(DEFAULT_ENTITIES),
            relations: own(DEFAULT_RELATIONS),
        }
    }
}

/// Parses a lexicon file: one term per line, `#` starts a comment.
pub fn parse_lexicon(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

impl Lexicons {
    pub fn load(colors: &Path, entities: &Path, relations: &Path) -> std::io::Result<Self> {
        Ok(Self {
            colors: parse_lexicon(&std::fs::read_to_string(colors)?),
            entities: parse_lexicon(&std::fs::read_to_string(entities)?),
            relations: parse_lexicon(&std::fs::read_to_string(relations)?),
        })
    }

    fn terms(&self) -> Vec<Vec<String>> {
        self.colors
            .iter()
            .chain(&self.entities)
            .chain(&self.relations)
            .map(|t| words(t))
            .filter(|w| !w.is_empty())
            .collect()
    }
}

fn words(s: &str) -> Vec<String> {
    s.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn word_matches(term: &str, word: &str) -> bool {
    word == term || word.strip_suffix('s') == Some(term) || word.strip_suffix("es") == Some(term)
}

/// Lexicon terms found in `query`, left to right, longest match first,
/// lowercased and deduplicated. A plural suffix (`s`/`es`) on the last word
/// of a term still matches.
pub fn extract_query_terms(query: &str, lex: &Lexicons) -> Vec<String> {
    let ws = words(query);
    let terms = lex.terms();
    let mut out: Vec<String> = Vec::new();
    let mut i = 0;
    while i < ws.len() {
        let best = terms
            .iter()
            .filter(|t| {
                t.len() <= ws.len() - i
                    && t.iter().enumerate().all(|(j, tw)| {
                        if j + 1 == t.len() {
                            word_matches(tw, &ws[i + j])
                        } else {
                            *tw == ws[i + j]
                        }
                    })
            })
            .max_by_key(|t| t.len());
        match best {
            Some(t) => {
                let joined = t.join(" ");
                if !out.contains(&joined) {
                    out.push(joined);
                }
                i += t.len();
            }
            None => i += 1,
        }
    }
    out
}

/// The text whose embedding stands for `query`.
pub fn query_text(query: &str, lex: &Lexicons, mode: QueryTextMode) -> String {
    match mode {
        QueryTextMode::Raw => query.trim().to_string(),
        QueryTextMode::Terms => {
            let terms = extract_query_terms(query, lex);
            if terms.is_empty() {
                query.trim().to_string()
            } else {
                terms.join(" ")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_partitions() {
        let w = partition_windows(15.0, 3.0, 1.0).unwrap();
        assert_eq!(w.len(), 13);
        assert_eq!(w[12], (12.0, 15.0));
        assert_eq!(partition_windows(3.0, 3.0, 1.0).unwrap(), vec![(0.0, 3.0)]);
        let w = partition_windows(15.0, 4.0, 3.0).unwrap();
        assert_eq!(
            w,
            vec![
                (0.0, 4.0),
                (3.0, 7.0),
                (6.0, 10.0),
                (9.0, 13.0),
                (11.0, 15.0)
            ]
        );
        assert!(partition_windows(2.0, 3.0, 1.0).is_err());
        assert!(partition_windows(5.0, 3.0, 0.0).is_err());
    }

    #[test]
    fn pooling_and_scoring() {
        assert_eq!(
            pool_window(&[[1.0f32, 0.0], [0.0, 1.0]]).unwrap(),
            vec![0.5, 0.5]
        );
        assert_eq!(pool_window(&[[3.0f32, 4.0]]).unwrap(), vec![3.0, 4.0]);
        assert!(pool_window::<[f32; 2]>(&[]).is_err());
        assert_eq!(score_window(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(score_window(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = score_window(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(
            score_window(&[0.0, 0.0], &[1.0, 0.0]),
            Err(CoarseError::UndefinedSimilarity)
        );
    }

    #[test]
    fn sampling_is_uniform() {
        assert_eq!(uniform_sample(3, 5), vec![0, 1, 2]);
        assert_eq!(uniform_sample(31, 5), vec![0, 8, 15, 23, 30]);
        assert_eq!(uniform_sample(9, 1), vec![4]);
    }

    fn ws(log: &str, s: f64, e: f64, score: f64) -> WindowScore {
        WindowScore {
            log_id: log.into(),
            start: s,
            end: e,
            score,
        }
    }

    #[test]
    fn merge_overlapping_and_abutting() {
        let r = rank_and_merge(&[ws("a", 2.0, 5.0, 1.0), ws("a", 4.0, 7.0, 0.9)], 5);
        assert_eq!(r.for_log("a"), &[(2.0, 7.0)]);
        let r = rank_and_merge(
            &[
                ws("a", 0.0, 3.0, 1.0),
                ws("a", 3.0, 6.0, 0.9),
                ws("a", 7.0, 9.0, 0.5),
            ],
            10,
        );
        assert_eq!(r.for_log("a"), &[(0.0, 6.0), (7.0, 9.0)]);
        assert!(rank_and_merge(&[], 3).is_empty());
    }

    #[test]
    fn ties_prefer_earlier_then_log_id() {
        let scores = vec![
            ws("b", 1.0, 4.0, 0.5),
            ws("a", 1.0, 4.0, 0.5),
            ws("a", 0.0, 3.0, 0.5),
        ];
        let top = top_k(&scores, 2);
        assert_eq!((top[0].log_id.as_str(), top[0].start), ("a", 0.0));
        assert_eq!((top[1].log_id.as_str(), top[1].start), ("a", 1.0));
    }

    #[test]
    fn term_extraction() {
        let lex = Lexicons::default();
        assert_eq!(
            extract_query_terms("a red truck in front of the ego vehicle", &lex),
            vec!["red", "truck", "in front of", "vehicle"]
        );
        assert!(extract_query_terms("something happens", &lex).is_empty());
        assert_eq!(
            query_text("something happens", &lex, QueryTextMode::Terms),
            "something happens"
        );
        assert_eq!(
            extract_query_terms("pedestrian crossing left", &lex),
            vec!["pedestrian", "crossing", "left"]
        );
        assert_eq!(
            extract_query_terms("Two Pedestrians, two pedestrian", &lex),
            vec!["pedestrian"]
        );
        assert_eq!(extract_query_terms("a stop sign", &lex), vec!["stop sign"]);
    }

    #[test]
    fn lexicon_file_format() {
        assert_eq!(
            parse_lexicon("# colors\nRed\n\n blue # cool\n"),
            vec!["red", "blue"]
        );
    }
}
