//! Set-valued evaluation of checked queries over a log.
//!
//! Every node evaluates to a per-track boolean table indexed by state. An
//! optional time domain restricts which timestamps are evaluated at all;
//! points outside it are false and cost nothing.

use std::collections::HashMap;

use super::catalog::{Kinematics, LogicOp, Semantics, TrackView};
use super::{check, Arg, Call, Catalog, DslError, Query, ScenarioMask, ScenarioProgram, Span};
use crate::traj::LogManifest;

/// Evaluation controls.
#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Inclusive `[start, end]` nanosecond intervals. `None` means the whole log.
    pub domain: Option<Vec<(i64, i64)>>,
}

/// Work counters for one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalStats {
    /// `(node, track, timestamp)` points evaluated.
    pub point_evaluations: u64,
    /// Pairwise geometry checks made by relational predicates.
    pub pair_checks: u64,
}

impl EvalStats {
    pub fn total(&self) -> u64 {
        self.point_evaluations + self.pair_checks
    }
}

type Table = Vec<Vec<bool>>;

struct Evaluator<'a> {
    log: &'a LogManifest,
    kin: Vec<Kinematics>,
    domain: Table,
    domain_points: u64,
    stats: EvalStats,
}

impl<'a> Evaluator<'a> {
    fn new(log: &'a LogManifest, opts: &EvalOptions) -> Self {
        let domain: Table = log
            .tracks
            .iter()
            .map(|t| {
                t.states
                    .iter()
                    .map(|s| match &opts.domain {
                        None => true,
                        Some(iv) => iv.iter().any(|&(a, b)| s.ts_ns >= a && s.ts_ns <= b),
                    })
                    .collect()
            })
            .collect();
        let domain_points = domain.iter().flatten().filter(|&&b| b).count() as u64;
        Self {
            log,
            kin: log.tracks.iter().map(Kinematics::of).collect(),
            domain,
            domain_points,
            stats: EvalStats::default(),
        }
    }

    fn view(&self, i: usize) -> TrackView<'_> {
        TrackView {
            track: &self.log.tracks[i],
            kin: &self.kin[i],
        }
    }

    fn eval(&mut self, q: &Query) -> Table {
        self.stats.point_evaluations += self.domain_points;
        match q {
            Query::Logic { op, args } => {
                let mut tables = args.iter().map(|a| self.eval(a));
                let first = tables.next().expect("checked arity");
                match op {
                    LogicOp::Not => zip_map(&first, &self.domain, |x, d| !x && d),
                    LogicOp::And => tables.fold(first, |acc, t| zip_map(&acc, &t, |a, b| a && b)),
                    LogicOp::Or => tables.fold(first, |acc, t| zip_map(&acc, &t, |a, b| a || b)),
                }
            }
            Query::State { spec, params } => {
                let Semantics::State(f) = &spec.semantics else {
                    unreachable!("checked state node")
                };
                (0..self.log.tracks.len())
                    .map(|i| {
                        let mut row = f(&self.view(i), params);
                        for (x, d) in row.iter_mut().zip(&self.domain[i]) {
                            *x = *x && *d;
                        }
                        row
                    })
                    .collect()
            }
            Query::Pair {
                spec,
                subject,
                related,
                params,
            } => {
                let Semantics::Pair { f, .. } = &spec.semantics else {
                    unreachable!("checked pair node")
                };
                let subj = match subject {
                    Some(s) => self.eval(s),
                    None => self.domain.clone(),
                };
                let rel = self.eval(related);
                // Related points bucketed by timestamp.
                let mut by_ts: HashMap<i64, Vec<(usize, usize)>> = HashMap::new();
                for (r, row) in rel.iter().enumerate() {
                    for (j, &hit) in row.iter().enumerate() {
                        if hit {
                            by_ts
                                .entry(self.log.tracks[r].states[j].ts_ns)
                                .or_default()
                                .push((r, j));
                        }
                    }
                }
                let mut out: Table = subj.iter().map(|row| vec![false; row.len()]).collect();
                let mut checks = 0u64;
                for (s, row) in subj.iter().enumerate() {
                    let sv = self.view(s);
                    for (i, &hit) in row.iter().enumerate() {
                        if !hit {
                            continue;
                        }
                        let ts = sv.track.states[i].ts_ns;
                        let Some(cands) = by_ts.get(&ts) else {
                            continue;
                        };
                        for &(r, j) in cands {
                            if r == s {
                                continue;
                            }
                            checks += 1;
                            if f(&sv, i, &self.view(r), j, params) {
                                out[s][i] = true;
                                break;
                            }
                        }
                    }
                }
                self.stats.pair_checks += checks;
                out
            }
        }
    }
}

fn zip_map(a: &Table, b: &Table, f: impl Fn(bool, bool) -> bool) -> Table {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(&x, &y)| f(x, y)).collect())
        .collect()
}

/// Evaluates `program` over the whole log.
pub fn evaluate(program: &ScenarioProgram, log: &LogManifest) -> ScenarioMask {
    evaluate_with(program, log, &EvalOptions::default()).0
}

/// Evaluates with options and returns work counters alongside the mask.
pub fn evaluate_with(
    program: &ScenarioProgram,
    log: &LogManifest,
    opts: &EvalOptions,
) -> (ScenarioMask, EvalStats) {
    evaluate_query(&program.query, log, opts)
}

pub fn evaluate_query(
    query: &Query,
    log: &LogManifest,
    opts: &EvalOptions,
) -> (ScenarioMask, EvalStats) {
    let mut ev = Evaluator::new(log, opts);
    let table = ev.eval(query);
    let mut mask = ScenarioMask::new(log.log_id.clone());
    for (t, row) in log.tracks.iter().zip(&table) {
        for (s, &hit) in t.states.iter().zip(row) {
            if hit {
                mask.insert(t.track_id.clone(), s.ts_ns);
            }
        }
    }
    (mask, ev.stats)
}

/// Evaluates a single predicate call at one state of one track.
///
/// `args` are written exactly as in program source; sub-query arguments are
/// evaluated over the whole log first.
pub fn evaluate_predicate(
    catalog: &Catalog,
    name: &str,
    args: &[Arg],
    log: &LogManifest,
    track_id: &str,
    index: usize,
) -> Result<bool, DslError> {
    let call = Call {
        name: name.to_string(),
        args: args.to_vec(),
        span: Span { line: 1, col: 1 },
    };
    let query = check(&call, catalog)?;
    let ti = log
        .tracks
        .iter()
        .position(|t| t.track_id == track_id)
        .ok_or_else(|| DslError::Target(format!("no track {track_id} in log {}", log.log_id)))?;
    if index >= log.tracks[ti].len() {
        return Err(DslError::Target(format!(
            "index {index} out of range for track {track_id}"
        )));
    }
    let mut ev = Evaluator::new(log, &EvalOptions::default());
    Ok(ev.eval(&query)[ti][index])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse, Literal};
    use crate::traj::{secs_to_ns, Track, TrackState};

    const CAR: [f64; 3] = [4.5, 1.9, 1.6];
    const PED: [f64; 3] = [0.6, 0.6, 1.7];

    fn track(id: &str, cat: &str, pts: &[(f64, f64, f64)], dims: [f64; 3]) -> Track {
        let states = pts
            .iter()
            .enumerate()
            .map(|(i, &(x, y, yaw))| {
                TrackState::planar(secs_to_ns(i as f64 * 0.1), x, y, yaw, dims).unwrap()
            })
            .collect();
        Track::new(id, cat, states).unwrap()
    }

    fn log(tracks: Vec<Track>) -> LogManifest {
        LogManifest::new("log", 15.0, vec!["ring_front_center".into()], 10.0, tracks).unwrap()
    }

    #[test]
    fn category_filter() {
        let l = log(vec![
            track("v", "VEHICLE", &[(0.0, 0.0, 0.0); 5], CAR),
            track("p", "PEDESTRIAN", &[(9.0, 9.0, 0.0); 5], PED),
        ]);
        let m = evaluate(&parse(r#"output(category("VEHICLE"))"#).unwrap(), &l);
        assert_eq!(m.len(), 5);
        assert!(m.entries.iter().all(|(id, _)| id == "v"));
    }

    #[test]
    fn contradiction_is_empty() {
        let l = log(vec![
            track(
                "v",
                "VEHICLE",
                &[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (2.0, 0.0, 0.0)],
                CAR,
            ),
            track("p", "PEDESTRIAN", &[(5.0, 0.0, 0.0); 3], PED),
        ]);
        for p in [
            r#"category("VEHICLE")"#,
            r#"moving()"#,
            r#"has_in_front(category("ANY"), category("ANY"))"#,
        ] {
            let src = format!("output(and({p}, not({p})))");
            assert!(evaluate(&parse(&src).unwrap(), &l).is_empty(), "{src}");
        }
    }

    #[test]
    fn planted_pedestrian_in_front() {
        // Vehicle at the origin heading +x; pedestrian at (5, 0) during the
        // middle three frames, far away otherwise.
        let peds: Vec<(f64, f64, f64)> = (0..8)
            .map(|i| {
                if (3..6).contains(&i) {
                    (5.0, 0.0, 0.0)
                } else {
                    (-30.0, 20.0, 0.0)
                }
            })
            .collect();
        let l = log(vec![
            track("v", "VEHICLE", &[(0.0, 0.0, 0.0); 8], CAR),
            track("p", "PEDESTRIAN", &peds, PED),
        ]);
        let prog = parse(
            r#"output(has_in_front(category("VEHICLE"), category("PEDESTRIAN"), within=10.0))"#,
        )
        .unwrap();
        let m = evaluate(&prog, &l);
        // Brute-force geometric oracle: all pairs, all timestamps.
        let mut want = ScenarioMask::new("log");
        for s in l.tracks.iter().filter(|t| t.category == "VEHICLE") {
            for st in &s.states {
                let hit = l
                    .tracks
                    .iter()
                    .filter(|t| t.category == "PEDESTRIAN")
                    .any(|o| {
                        o.states.iter().any(|os| {
                            let (dx, dy) = (os.tx - st.tx, os.ty - st.ty);
                            let (sn, cs) = st.yaw().sin_cos();
                            let (x, y) = (cs * dx + sn * dy, -sn * dx + cs * dy);
                            os.ts_ns == st.ts_ns && x > 0.0 && x <= 10.0 && y.abs() <= 2.0
                        })
                    });
                if hit {
                    want.insert(s.track_id.clone(), st.ts_ns);
                }
            }
        }
        assert_eq!(m, want);
        assert_eq!(m.timestamps().len(), 3);
    }

    #[test]
    fn stationary_on_constant_track() {
        let l = log(vec![track("v", "VEHICLE", &[(3.0, 1.0, 0.2); 6], CAR)]);
        for i in 0..6 {
            let arg = Arg::Named {
                name: "max_speed".into(),
                value: Literal::Num(0.5),
                span: Span::default(),
            };
            assert!(evaluate_predicate(
                crate::dsl::default_catalog(),
                "stationary",
                &[arg],
                &l,
                "v",
                i
            )
            .unwrap());
        }
    }

    #[test]
    fn turning_false_on_straight_track() {
        let pts: Vec<(f64, f64, f64)> = (0..20).map(|i| (i as f64, 0.0, 0.0)).collect();
        let l = log(vec![track("v", "VEHICLE", &pts, CAR)]);
        for dir in ["left", "right"] {
            let src = format!(r#"output(turning("{dir}"))"#);
            assert!(evaluate(&parse(&src).unwrap(), &l).is_empty());
        }
    }

    #[test]
    fn turning_left_on_arc() {
        // Constant speed 5 m/s, yaw rate +0.3 rad/s, dt = 0.1 s.
        let (v, w, dt) = (5.0, 0.3, 0.1);
        let pts: Vec<(f64, f64, f64)> = (0..30)
            .map(|i| {
                let th = w * dt * i as f64;
                ((v / w) * th.sin(), (v / w) * (1.0 - th.cos()), th)
            })
            .collect();
        let l = log(vec![track("v", "VEHICLE", &pts, CAR)]);
        // Yaw-rate oracle: finite differences of the planted headings.
        let rates: Vec<f64> = (1..29)
            .map(|i| (pts[i + 1].2 - pts[i - 1].2) / (2.0 * dt))
            .collect();
        assert!(rates.iter().all(|r| (r - w).abs() < 1e-9 && *r >= 0.15));
        let m = evaluate(&parse(r#"output(turning("left"))"#).unwrap(), &l);
        for i in 1..29 {
            assert!(m.contains("v", secs_to_ns(i as f64 * dt)), "index {i}");
        }
        assert!(evaluate(&parse(r#"output(turning("right"))"#).unwrap(), &l).is_empty());
    }

    #[test]
    fn derivative_predicates_false_on_short_tracks() {
        let l = log(vec![
            track("a", "VEHICLE", &[(0.0, 0.0, 0.0)], CAR),
            track("b", "VEHICLE", &[(0.0, 0.0, 0.0), (0.0, 0.0, 0.0)], CAR),
        ]);
        for src in [
            "output(stationary())",
            "output(moving(min_speed=-1.0))",
            "output(speed_between(min=-1.0, max=100.0))",
            "output(braking(min_decel=-5.0))",
        ] {
            assert!(evaluate(&parse(src).unwrap(), &l).is_empty(), "{src}");
        }
        // Non-derivative predicates still work.
        let m = evaluate(&parse(r#"output(category("VEHICLE"))"#).unwrap(), &l);
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn domain_restricts_points_and_work() {
        let pts = [(0.0, 0.0, 0.0); 10];
        let l = log(vec![track("v", "VEHICLE", &pts, CAR)]);
        let prog = parse(r#"output(category("VEHICLE"))"#).unwrap();
        let (full, fs) = evaluate_with(&prog, &l, &EvalOptions::default());
        let opts = EvalOptions {
            domain: Some(vec![(secs_to_ns(0.2), secs_to_ns(0.4))]),
        };
        let (part, ps) = evaluate_with(&prog, &l, &opts);
        assert_eq!(full.len(), 10);
        assert_eq!(part.len(), 3);
        assert_eq!(fs.point_evaluations, 10);
        assert_eq!(ps.point_evaluations, 3);
    }
}
