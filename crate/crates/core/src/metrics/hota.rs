//! Higher Order Tracking Accuracy.
//!
//! For every frame the similarity between ground-truth and predicted objects
//! is weighted by a sequence-level alignment score, one optimal assignment is
//! solved per frame, and each localization threshold then keeps the matched
//! pairs whose similarity reaches it. Detection and association accuracies
//! follow from the resulting counts and the HOTA score is their geometric
//! mean, averaged over thresholds.

use std::collections::BTreeMap;

use super::assignment::max_weight_assignment;

const EPS: f64 = f64::EPSILON;

/// Thresholds `0.05, 0.10, ..., 0.95`.
pub fn default_alphas() -> Vec<f64> {
    (1..=19).map(|i| f64::from(i) / 20.0).collect()
}

/// Objects of one frame with their pairwise similarity (row-major, gt rows).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSim {
    pub gt_ids: Vec<usize>,
    pub pred_ids: Vec<usize>,
    pub sim: Vec<f64>,
}

impl FrameSim {
    fn at(&self, g: usize, p: usize) -> f64 {
        self.sim[g * self.pred_ids.len() + p]
    }
}

/// Counts at one threshold. `ass_sum` is the sum of association scores over
/// true positives, so counts from several sequences simply add up.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AlphaCounts {
    pub tp: f64,
    pub fn_: f64,
    pub fp: f64,
    pub ass_sum: f64,
}

impl AlphaCounts {
    pub fn det_a(&self) -> f64 {
        self.tp / (self.tp + self.fn_ + self.fp).max(1.0)
    }

    pub fn ass_a(&self) -> f64 {
        self.ass_sum / self.tp.max(1.0)
    }

    pub fn hota(&self) -> f64 {
        (self.det_a() * self.ass_a()).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HotaCounts {
    pub alphas: Vec<f64>,
    pub per_alpha: Vec<AlphaCounts>,
    pub gt_dets: usize,
    pub pred_dets: usize,
}

impl HotaCounts {
    pub fn empty(alphas: &[f64]) -> Self {
        Self {
            alphas: alphas.to_vec(),
            per_alpha: vec![AlphaCounts::default(); alphas.len()],
            gt_dets: 0,
            pred_dets: 0,
        }
    }

    pub fn merge(&mut self, other: &HotaCounts) {
        assert_eq!(self.alphas, other.alphas, "threshold grids differ");
        for (a, b) in self.per_alpha.iter_mut().zip(&other.per_alpha) {
            a.tp += b.tp;
            a.fn_ += b.fn_;
            a.fp += b.fp;
            a.ass_sum += b.ass_sum;
        }
        self.gt_dets += other.gt_dets;
        self.pred_dets += other.pred_dets;
    }

    /// HOTA averaged over thresholds: 1 when both sides are empty, 0 when
    /// exactly one is.
    pub fn score(&self) -> f64 {
        match (self.gt_dets, self.pred_dets) {
            (0, 0) => 1.0,
            (0, _) | (_, 0) => 0.0,
            _ => {
                self.per_alpha.iter().map(AlphaCounts::hota).sum::<f64>()
                    / self.per_alpha.len() as f64
            }
        }
    }

    pub fn det_a(&self) -> f64 {
        self.per_alpha.iter().map(AlphaCounts::det_a).sum::<f64>()
            / self.per_alpha.len().max(1) as f64
    }

    pub fn ass_a(&self) -> f64 {
        self.per_alpha.iter().map(AlphaCounts::ass_a).sum::<f64>()
            / self.per_alpha.len().max(1) as f64
    }
}

/// Accumulates the counts of one sequence.
pub fn hota_counts(frames: &[FrameSim], alphas: &[f64]) -> HotaCounts {
    let mut gt_count: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pred_count: BTreeMap<usize, f64> = BTreeMap::new();
    let mut potential: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut out = HotaCounts::empty(alphas);
    for f in frames {
        let (ng, np) = (f.gt_ids.len(), f.pred_ids.len());
        assert_eq!(f.sim.len(), ng * np, "similarity matrix shape");
        out.gt_dets += ng;
        out.pred_dets += np;
        let row_sum: Vec<f64> = (0..ng).map(|g| (0..np).map(|p| f.at(g, p)).sum()).collect();
        let col_sum: Vec<f64> = (0..np).map(|p| (0..ng).map(|g| f.at(g, p)).sum()).collect();
        for g in 0..ng {
            for p in 0..np {
                let s = f.at(g, p);
                let denom = row_sum[g] + col_sum[p] - s;
                let v = if denom > EPS { s / denom } else { 0.0 };
                *potential.entry((f.gt_ids[g], f.pred_ids[p])).or_default() += v;
            }
        }
        for &g in &f.gt_ids {
            *gt_count.entry(g).or_default() += 1.0;
        }
        for &p in &f.pred_ids {
            *pred_count.entry(p).or_default() += 1.0;
        }
    }
    let alignment = |g: usize, p: usize| -> f64 {
        let pm = potential.get(&(g, p)).copied().unwrap_or(0.0);
        pm / (gt_count[&g] + pred_count[&p] - pm)
    };

    let mut matches: Vec<BTreeMap<(usize, usize), f64>> = vec![BTreeMap::new(); alphas.len()];
    for f in frames {
        let (ng, np) = (f.gt_ids.len(), f.pred_ids.len());
        if ng == 0 || np == 0 {
            for c in &mut out.per_alpha {
                c.fn_ += ng as f64;
                c.fp += np as f64;
            }
            continue;
        }
        let mut score = vec![0.0; ng * np];
        for g in 0..ng {
            for p in 0..np {
                score[g * np + p] = alignment(f.gt_ids[g], f.pred_ids[p]) * f.at(g, p);
            }
        }
        let assigned = max_weight_assignment(&score, ng, np);
        for (a, &alpha) in alphas.iter().enumerate() {
            let mut n = 0usize;
            for &(g, p) in &assigned {
                if f.at(g, p) >= alpha - EPS {
                    n += 1;
                    *matches[a].entry((f.gt_ids[g], f.pred_ids[p])).or_default() += 1.0;
                }
            }
            let c = &mut out.per_alpha[a];
            c.tp += n as f64;
            c.fn_ += (ng - n) as f64;
            c.fp += (np - n) as f64;
        }
    }
    for (a, m) in matches.iter().enumerate() {
        out.per_alpha[a].ass_sum = m
            .iter()
            .map(|(&(g, p), &cnt)| cnt * cnt / (gt_count[&g] + pred_count[&p] - cnt).max(1.0))
            .sum();
    }
    out
}
