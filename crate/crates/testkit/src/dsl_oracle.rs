//! Brute-force set semantics for checked queries.
//!
//! Every node denotes a set of `(track_id, timestamp)` points. Combinators
//! are plain set operations, relational nodes scan every pair of points, and
//! atomic predicates are taken from the catalog entries themselves.

use std::collections::BTreeSet;

use scenmine_core::dsl::catalog::TrackView;
use scenmine_core::dsl::{Kinematics, LogicOp, Query, Semantics};
use scenmine_core::traj::LogManifest;

pub type PointSet = BTreeSet<(String, i64)>;

/// Every point of the log whose timestamp lies in `domain` (all when `None`).
pub fn universe(log: &LogManifest, domain: Option<&[(i64, i64)]>) -> PointSet {
    let mut out = PointSet::new();
    for t in &log.tracks {
        for s in &t.states {
            if domain.is_none_or(|d| d.iter().any(|&(a, b)| a <= s.ts_ns && s.ts_ns <= b)) {
                out.insert((t.track_id.clone(), s.ts_ns));
            }
        }
    }
    out
}

pub fn oracle_eval(query: &Query, log: &LogManifest, domain: Option<&[(i64, i64)]>) -> PointSet {
    let kin: Vec<Kinematics> = log.tracks.iter().map(Kinematics::of).collect();
    let all = universe(log, domain);
    go(query, log, &kin, &all)
}

fn locate(log: &LogManifest, id: &str, ts: i64) -> (usize, usize) {
    let k = log.tracks.iter().position(|t| t.track_id == id).unwrap();
    let i = log.tracks[k]
        .states
        .iter()
        .position(|s| s.ts_ns == ts)
        .unwrap();
    (k, i)
}

fn go(q: &Query, log: &LogManifest, kin: &[Kinematics], all: &PointSet) -> PointSet {
    match q {
        Query::Logic { op, args } => {
            let sets: Vec<PointSet> = args.iter().map(|a| go(a, log, kin, all)).collect();
            match op {
                LogicOp::Not => all.difference(&sets[0]).cloned().collect(),
                LogicOp::And => {
                    let mut acc = sets[0].clone();
                    for s in &sets[1..] {
                        acc = acc.intersection(s).cloned().collect();
                    }
                    acc
                }
                LogicOp::Or => {
                    let mut acc = PointSet::new();
                    for s in &sets {
                        acc.extend(s.iter().cloned());
                    }
                    acc
                }
            }
        }
        Query::State { spec, params } => {
            let Semantics::State(f) = &spec.semantics else {
                panic!("not a state predicate")
            };
            let mut out = PointSet::new();
            for (k, t) in log.tracks.iter().enumerate() {
                let hits = f(
                    &TrackView {
                        track: t,
                        kin: &kin[k],
                    },
                    params,
                );
                for (s, h) in t.states.iter().zip(hits) {
                    let p = (t.track_id.clone(), s.ts_ns);
                    if h && all.contains(&p) {
                        out.insert(p);
                    }
                }
            }
            out
        }
        Query::Pair {
            spec,
            subject,
            related,
            params,
        } => {
            let Semantics::Pair { f, .. } = &spec.semantics else {
                panic!("not a pair predicate")
            };
            let subj = match subject {
                Some(s) => go(s, log, kin, all),
                None => all.clone(),
            };
            let rel = go(related, log, kin, all);
            let mut out = PointSet::new();
            for (sid, ts) in &subj {
                let (sk, si) = locate(log, sid, *ts);
                let sv = TrackView {
                    track: &log.tracks[sk],
                    kin: &kin[sk],
                };
                let hit = rel.iter().any(|(rid, rts)| {
                    if rts != ts || rid == sid {
                        return false;
                    }
                    let (rk, ri) = locate(log, rid, *rts);
                    let rv = TrackView {
                        track: &log.tracks[rk],
                        kin: &kin[rk],
                    };
                    f(&sv, si, &rv, ri, params)
                });
                if hit {
                    out.insert((sid.clone(), *ts));
                }
            }
            out
        }
    }
}
