//! Benchmark metrics over predicted and ground-truth scenario masks:
//! timestamp F1, log F1, HOTA over whole logs and HOTA restricted to the
//! scenario time ranges (HOTA-Temporal).
//!
//! Conventions: empty against empty scores 1 for every metric; for HOTA an
//! empty side against a non-empty one scores 0.

pub mod assignment;
pub mod hota;
pub mod iou;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assignment::max_weight_assignment;
pub use hota::{default_alphas, hota_counts, FrameSim, HotaCounts};
pub use iou::{iou_3d, Box3d};

use crate::dsl::ScenarioMask;
use crate::traj::LogManifest;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Raw confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn add(&mut self, o: Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            if self.fn_ == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            if self.fp == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    /// `2TP / (2TP + FP + FN)`, 1 in the vacuous case.
    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / d as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<Confusion> for Prf {
    fn from(c: Confusion) -> Self {
        Self {
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        }
    }
}

pub fn timestamp_confusion(pred: &BTreeSet<i64>, gt: &BTreeSet<i64>) -> Confusion {
    let tp = pred.intersection(gt).count();
    Confusion {
        tp,
        fp: pred.len() - tp,
        fn_: gt.len() - tp,
    }
}

pub fn timestamp_f1(pred: &BTreeSet<i64>, gt: &BTreeSet<i64>) -> Prf {
    timestamp_confusion(pred, gt).into()
}

pub fn log_confusion(decisions: &[(bool, bool)]) -> Confusion {
    let mut c = Confusion::default();
    for &(p, g) in decisions {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    c
}

pub fn log_f1(decisions: &[(bool, bool)]) -> f64 {
    log_confusion(decisions).f1()
}

/// A mask whose entries carry boxes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxedMask {
    pub log_id: String,
    pub boxes: BTreeMap<(String, i64), Box3d>,
}

impl BoxedMask {
    pub fn new(log_id: impl Into<String>) -> Self {
        Self {
            log_id: log_id.into(),
            boxes: BTreeMap::new(),
        }
    }

    /// Looks up the box of every mask entry in `log`.
    pub fn from_mask(mask: &ScenarioMask, log: &LogManifest) -> Result<Self> {
        let mut out = Self::new(mask.log_id.clone());
        for (id, ts) in &mask.entries {
            let state = log
                .track(id)
                .and_then(|t| t.index_of(*ts).map(|i| &t.states[i]))
                .ok_or_else(|| {
                    MetricsError::InvalidInput(format!(
                        "no box for ({id}, {ts}) in log {}",
                        log.log_id
                    ))
                })?;
            out.boxes
                .insert((id.clone(), *ts), Box3d::from_state(state));
        }
        Ok(out)
    }

    pub fn timestamps(&self) -> BTreeSet<i64> {
        self.boxes.keys().map(|(_, t)| *t).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn restricted(&self, ranges: &[(i64, i64)]) -> Self {
        Self {
            log_id: self.log_id.clone(),
            boxes: self
                .boxes
                .iter()
                .filter(|((_, t), _)| ranges.iter().any(|&(a, b)| a <= *t && *t <= b))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }
}

/// Per-frame similarity tables for HOTA, with track ids mapped to indices.
pub fn frames_from_masks(pred: &BoxedMask, gt: &BoxedMask) -> Vec<FrameSim> {
    fn ids(m: &BoxedMask) -> BTreeMap<&str, usize> {
        let set: BTreeSet<&str> = m.boxes.keys().map(|(id, _)| id.as_str()).collect();
        set.into_iter().enumerate().map(|(i, s)| (s, i)).collect()
    }
    let (gid, pid) = (ids(gt), ids(pred));
    let mut per_ts: BTreeMap<i64, (Vec<(usize, Box3d)>, Vec<(usize, Box3d)>)> = BTreeMap::new();
    for ((id, t), b) in &gt.boxes {
        per_ts.entry(*t).or_default().0.push((gid[id.as_str()], *b));
    }
    for ((id, t), b) in &pred.boxes {
        per_ts.entry(*t).or_default().1.push((pid[id.as_str()], *b));
    }
    per_ts
        .into_values()
        .map(|(g, p)| {
            let mut sim = Vec::with_capacity(g.len() * p.len());
            for (_, gb) in &g {
                for (_, pb) in &p {
                    sim.push(iou_3d(gb, pb));
                }
            }
            FrameSim {
                gt_ids: g.iter().map(|x| x.0).collect(),
                pred_ids: p.iter().map(|x| x.0).collect(),
                sim,
            }
        })
        .collect()
}

pub fn hota(pred: &BoxedMask, gt: &BoxedMask, alphas: &[f64]) -> HotaCounts {
    hota_counts(&frames_from_masks(pred, gt), alphas)
}

/// HOTA over the entries inside `ranges` only.
pub fn hota_temporal(
    pred: &BoxedMask,
    gt: &BoxedMask,
    ranges: &[(i64, i64)],
    alphas: &[f64],
) -> HotaCounts {
    hota(&pred.restricted(ranges), &gt.restricted(ranges), alphas)
}

/// Default scenario time range: the span of the ground-truth mask.
pub fn scenario_ranges(gt: &BoxedMask) -> Vec<(i64, i64)> {
    let ts = gt.timestamps();
    match (ts.first(), ts.last()) {
        (Some(&a), Some(&b)) => vec![(a, b)],
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEvalInput {
    pub log_id: String,
    pub pred: BoxedMask,
    pub gt: BoxedMask,
    pub ranges: Vec<(i64, i64)>,
}

impl LogEvalInput {
    pub fn new(pred: BoxedMask, gt: BoxedMask) -> Self {
        let ranges = scenario_ranges(&gt);
        Self {
            log_id: gt.log_id.clone(),
            pred,
            gt,
            ranges,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMetrics {
    pub log_id: String,
    pub hota_temporal: f64,
    pub hota: f64,
    pub timestamp: Prf,
    pub pred_positive: bool,
    pub gt_positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub hota_temporal: f64,
    pub hota: f64,
    pub timestamp_f1: f64,
    pub log_f1: f64,
}

/// Scores every log and the whole set. Dataset HOTA pools the counts of all
/// logs; timestamp F1 pools the per-frame counts.
pub fn evaluate_logs(
    inputs: &[LogEvalInput],
    alphas: &[f64],
) -> Result<(Vec<LogMetrics>, MetricSummary)> {
    if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
        return Err(MetricsError::InvalidInput(
            "thresholds must lie in (0, 1]".into(),
        ));
    }
    let mut per_log = Vec::with_capacity(inputs.len());
    let mut all_t = HotaCounts::empty(alphas);
    let mut all = HotaCounts::empty(alphas);
    let mut ts = Confusion::default();
    let mut decisions = Vec::with_capacity(inputs.len());
    for inp in inputs {
        if inp.pred.log_id != inp.gt.log_id {
            return Err(MetricsError::InvalidInput(format!(
                "prediction for log {} paired with ground truth of log {}",
                inp.pred.log_id, inp.gt.log_id
            )));
        }
        let ht = hota_temporal(&inp.pred, &inp.gt, &inp.ranges, alphas);
        let h = hota(&inp.pred, &inp.gt, alphas);
        let c = timestamp_confusion(&inp.pred.timestamps(), &inp.gt.timestamps());
        all_t.merge(&ht);
        all.merge(&h);
        ts.add(c);
        let (p, g) = (!inp.pred.is_empty(), !inp.gt.is_empty());
        decisions.push((p, g));
        per_log.push(LogMetrics {
            log_id: inp.log_id.clone(),
            hota_temporal: ht.score(),
            hota: h.score(),
            timestamp: c.into(),
            pred_positive: p,
            gt_positive: g,
        });
    }
    let summary = MetricSummary {
        hota_temporal: all_t.score(),
        hota: all.score(),
        timestamp_f1: ts.f1(),
        log_f1: log_f1(&decisions),
    };
    Ok((per_log, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[i64]) -> BTreeSet<i64> {
        xs.iter().copied().collect()
    }

    #[test]
    fn timestamp_examples() {
        let p = timestamp_f1(&set(&[1, 2]), &set(&[1, 2]));
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        let p = timestamp_f1(&set(&[3, 4, 5]), &set(&[2, 3, 4]));
        assert_eq!(
            (p.precision, p.recall, p.f1),
            (2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0)
        );
        let p = timestamp_f1(&set(&[]), &set(&[2]));
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        let p = timestamp_f1(&set(&[]), &set(&[]));
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn log_examples() {
        assert_eq!(log_f1(&[(true, true), (true, true)]), 1.0);
        assert_eq!(log_f1(&[(true, true), (true, false)]), 2.0 / 3.0);
        assert_eq!(log_f1(&[(false, false)]), 1.0);
    }

    #[test]
    fn hota_temporal_ignores_frames_outside_ranges() {
        let b = Box3d {
            center: [0.0; 3],
            yaw: 0.0,
            length: 2.0,
            width: 2.0,
            height: 2.0,
        };
        let mut gt = BoxedMask::new("l");
        let mut pred = BoxedMask::new("l");
        for t in 0..5 {
            gt.boxes.insert(("a".into(), t), b);
            pred.boxes.insert(("x".into(), t), b);
        }
        pred.boxes.insert(("x".into(), 9), b);
        let alphas = default_alphas();
        assert!((hota_temporal(&pred, &gt, &[(0, 4)], &alphas).score() - 1.0).abs() < 1e-15);
        assert!(hota(&pred, &gt, &alphas).score() < 1.0);
        assert_eq!(
            hota_temporal(&BoxedMask::new("l"), &gt, &[(0, 4)], &alphas).score(),
            0.0
        );
    }
}
