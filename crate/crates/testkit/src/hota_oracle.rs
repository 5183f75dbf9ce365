//! HOTA with the per-frame assignment found by enumerating every matching.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use scenmine_core::metrics::{iou_3d, Box3d, BoxedMask};

/// One frame: ground-truth ids, predicted ids and the similarity of each
/// (gt, pred) pair, gt-major.
#[derive(Debug, Clone)]
pub struct Frame {
    pub gt: Vec<usize>,
    pub pred: Vec<usize>,
    pub sim: Vec<Vec<f64>>,
}

/// All partial injective maps gt -> pred, as `Some(pred index)` per gt row.
fn matchings(ng: usize, np: usize) -> Vec<Vec<Option<usize>>> {
    fn rec(
        g: usize,
        ng: usize,
        np: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<Option<usize>>,
        out: &mut Vec<Vec<Option<usize>>>,
    ) {
        if g == ng {
            out.push(cur.clone());
            return;
        }
        cur.push(None);
        rec(g + 1, ng, np, used, cur, out);
        cur.pop();
        for p in 0..np {
            if !used[p] {
                used[p] = true;
                cur.push(Some(p));
                rec(g + 1, ng, np, used, cur, out);
                cur.pop();
                used[p] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(0, ng, np, &mut vec![false; np], &mut Vec::new(), &mut out);
    out
}

/// Per-threshold `(tp, fn, fp, sum of association scores over tp)` and the
/// final HOTA score (1 if both sides are empty, 0 if one is).
pub fn hota_oracle(frames: &[Frame], alphas: &[f64]) -> (Vec<(f64, f64, f64, f64)>, f64) {
    let mut gt_n: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pr_n: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pot: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let (mut total_g, mut total_p) = (0usize, 0usize);
    for f in frames {
        total_g += f.gt.len();
        total_p += f.pred.len();
        for &g in &f.gt {
            *gt_n.entry(g).or_default() += 1.0;
        }
        for &p in &f.pred {
            *pr_n.entry(p).or_default() += 1.0;
        }
        for (gi, &g) in f.gt.iter().enumerate() {
            for (pi, &p) in f.pred.iter().enumerate() {
                let row: f64 = f.sim[gi].iter().sum();
                let col: f64 = f.sim.iter().map(|r| r[pi]).sum();
                let d = row + col - f.sim[gi][pi];
                if d > f64::EPSILON {
                    *pot.entry((g, p)).or_default() += f.sim[gi][pi] / d;
                }
            }
        }
    }
    let align = |g: usize, p: usize| {
        let m = pot.get(&(g, p)).copied().unwrap_or(0.0);
        m / (gt_n[&g] + pr_n[&p] - m)
    };

    let mut counts = vec![(0.0, 0.0, 0.0, 0.0); alphas.len()];
    let mut pair_hits: Vec<BTreeMap<(usize, usize), f64>> = vec![BTreeMap::new(); alphas.len()];
    for f in frames {
        let (ng, np) = (f.gt.len(), f.pred.len());
        let mut best: Option<(f64, Vec<Option<usize>>)> = None;
        for m in matchings(ng, np) {
            let v: f64 = m
                .iter()
                .enumerate()
                .filter_map(|(g, p)| p.map(|p| align(f.gt[g], f.pred[p]) * f.sim[g][p]))
                .sum();
            if best.as_ref().is_none_or(|b| v > b.0 + 1e-12) {
                best = Some((v, m));
            }
        }
        let m = best.map(|b| b.1).unwrap_or_default();
        for (a, &alpha) in alphas.iter().enumerate() {
            let mut tp = 0.0;
            for (g, p) in m.iter().enumerate() {
                if let Some(p) = p {
                    if f.sim[g][*p] >= alpha - f64::EPSILON && f.sim[g][*p] > 0.0 {
                        tp += 1.0;
                        *pair_hits[a].entry((f.gt[g], f.pred[*p])).or_default() += 1.0;
                    }
                }
            }
            counts[a].0 += tp;
            counts[a].1 += ng as f64 - tp;
            counts[a].2 += np as f64 - tp;
        }
    }
    for (a, hits) in pair_hits.iter().enumerate() {
        counts[a].3 = hits
            .iter()
            .map(|(&(g, p), &c)| c * c / (gt_n[&g] + pr_n[&p] - c))
            .sum();
    }
    let score = match (total_g, total_p) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => {
            counts
                .iter()
                .map(|&(tp, fn_, fp, ass)| {
                    let det = if tp + fn_ + fp > 0.0 {
                        tp / (tp + fn_ + fp)
                    } else {
                        0.0
                    };
                    let ass = if tp > 0.0 { ass / tp } else { 0.0 };
                    (det * ass).sqrt()
                })
                .sum::<f64>()
                / alphas.len() as f64
        }
    };
    (counts, score)
}

pub fn random_box<R: Rng>(r: &mut R) -> Box3d {
    Box3d {
        center: [
            r.gen_range(-2.0..2.0),
            r.gen_range(-2.0..2.0),
            r.gen_range(-0.3..0.3),
        ],
        yaw: r.gen_range(-3.1..3.1),
        length: r.gen_range(1.0..4.0),
        width: r.gen_range(0.8..2.0),
        height: r.gen_range(1.0..2.0),
    }
}

/// Random pair of masks with at most 3 tracks each over at most 10 frames;
/// predictions are perturbed copies of ground truth plus stray boxes.
pub fn random_masks<R: Rng>(r: &mut R) -> (BoxedMask, BoxedMask) {
    let frames = r.gen_range(1..=10);
    let mut gt = BoxedMask::new("m");
    let mut pred = BoxedMask::new("m");
    for g in 0..r.gen_range(0..=3) {
        let b = random_box(r);
        for t in 0..frames {
            if r.gen_bool(0.8) {
                let mut bt = b;
                bt.center[0] += t as f64 * 0.3;
                gt.boxes.insert((format!("g{g}"), t), bt);
            }
        }
    }
    let gt_entries: Vec<_> = gt.boxes.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let n_pred = r.gen_range(0..=3);
    for ((_, t), b) in gt_entries {
        if n_pred > 0 && r.gen_bool(0.7) {
            let p = r.gen_range(0..n_pred);
            let mut pb = b;
            pb.center[0] += r.gen_range(-0.8..0.8);
            pb.center[1] += r.gen_range(-0.8..0.8);
            pb.yaw += r.gen_range(-0.4..0.4);
            let key = (format!("p{p}"), t);
            pred.boxes.entry(key).or_insert(pb);
        }
    }
    for p in 0..n_pred {
        for t in 0..frames {
            let key = (format!("p{p}"), t);
            if r.gen_bool(0.1) && !pred.boxes.contains_key(&key) {
                pred.boxes.insert(key, random_box(r));
            }
        }
    }
    (pred, gt)
}

/// Oracle frames for a pair of masks, ids numbered per side.
pub fn oracle_frames(pred: &BoxedMask, gt: &BoxedMask) -> Vec<Frame> {
    let ids = |m: &BoxedMask| -> BTreeMap<String, usize> {
        let s: BTreeSet<String> = m.boxes.keys().map(|k| k.0.clone()).collect();
        s.into_iter().enumerate().map(|(i, k)| (k, i)).collect()
    };
    let (gi, pi) = (ids(gt), ids(pred));
    let times: BTreeSet<i64> = gt
        .boxes
        .keys()
        .chain(pred.boxes.keys())
        .map(|k| k.1)
        .collect();
    times
        .into_iter()
        .map(|t| {
            let g: Vec<(&String, &Box3d)> = gt
                .boxes
                .iter()
                .filter(|(k, _)| k.1 == t)
                .map(|(k, b)| (&k.0, b))
                .collect();
            let p: Vec<(&String, &Box3d)> = pred
                .boxes
                .iter()
                .filter(|(k, _)| k.1 == t)
                .map(|(k, b)| (&k.0, b))
                .collect();
            Frame {
                gt: g.iter().map(|x| gi[x.0]).collect(),
                pred: p.iter().map(|x| pi[x.0]).collect(),
                sim: g
                    .iter()
                    .map(|gb| p.iter().map(|pb| iou_3d(gb.1, pb.1)).collect())
                    .collect(),
            }
        })
        .collect()
}
