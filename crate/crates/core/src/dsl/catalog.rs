//! Predicate catalog: names, parameter signatures, defaults and semantics.
//!
//! Three groups of predicates exist:
//!
//! * state predicates map every state of a track to a boolean;
//! * pair predicates hold for a subject track at a timestamp when some
//!   *other* track of a related sub-query, at the same timestamp, satisfies a
//!   geometric relation (existential quantification);
//! * logic combinators (`and`, `or`, `not`) apply pointwise boolean algebra.
//!
//! Relational geometry is evaluated in the subject's local frame: origin at
//! the box centre, `+x` along its heading, `+y` to its left.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use super::ast::Literal;
use crate::traj::{estimate_velocity, ns_to_secs, wrap_angle, CategoryVocabulary, Track};

/// Derived per-state kinematics of one track.
#[derive(Debug, Clone)]
pub struct Kinematics {
    /// Whether derivative quantities are defined (at least 3 states).
    pub derivatives: bool,
    pub velocity: Vec<[f64; 3]>,
    /// Planar speed, m/s.
    pub speed: Vec<f64>,
    /// Rate of change of planar speed, m/s².
    pub accel: Vec<f64>,
    pub yaw: Vec<f64>,
    /// rad/s, positive counter-clockwise (left).
    pub yaw_rate: Vec<f64>,
}

/// Minimum number of states for derivative predicates.
pub const MIN_DERIVATIVE_STATES: usize = 3;

fn central_diff(values: &[f64], track: &Track) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                i if i == n - 1 => (n - 2, n - 1),
                i => (i - 1, i + 1),
            };
            let dt = ns_to_secs(track.states[b].ts_ns - track.states[a].ts_ns);
            (values[b] - values[a]) / dt
        })
        .collect()
}

impl Kinematics {
    pub fn of(track: &Track) -> Self {
        let n = track.len();
        let yaw: Vec<f64> = track.states.iter().map(|s| s.yaw()).collect();
        if n < MIN_DERIVATIVE_STATES {
            return Self {
                derivatives: false,
                velocity: vec![[0.0; 3]; n],
                speed: vec![0.0; n],
                accel: vec![0.0; n],
                yaw,
                yaw_rate: vec![0.0; n],
            };
        }
        let velocity: Vec<[f64; 3]> = (0..n)
            .map(|i| estimate_velocity(track, i).expect("length checked above"))
            .collect();
        let speed: Vec<f64> = velocity.iter().map(|v| v[0].hypot(v[1])).collect();
        let accel = central_diff(&speed, track);
        let mut unwrapped = Vec::with_capacity(n);
        let mut acc = yaw[0];
        unwrapped.push(acc);
        for w in yaw.windows(2) {
            acc += wrap_angle(w[1] - w[0]);
            unwrapped.push(acc);
        }
        let yaw_rate = central_diff(&unwrapped, track);
        Self {
            derivatives: true,
            velocity,
            speed,
            accel,
            yaw,
            yaw_rate,
        }
    }
}

/// A track together with its precomputed kinematics.
#[derive(Debug, Clone, Copy)]
pub struct TrackView<'a> {
    pub track: &'a Track,
    pub kin: &'a Kinematics,
}

/// Position of `other`'s state `oi` expressed in the local frame of
/// `subject`'s state `si`.
pub fn local_xy(subject: &Track, si: usize, other: &Track, oi: usize) -> (f64, f64) {
    let s = &subject.states[si];
    let o = &other.states[oi];
    let yaw = s.yaw();
    let (dx, dy) = (o.tx - s.tx, o.ty - s.ty);
    let (sin, cos) = yaw.sin_cos();
    (cos * dx + sin * dy, -sin * dx + cos * dy)
}

/// Resolved scalar parameter values, in signature order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    pub values: Vec<(String, Literal)>,
}

impl Params {
    pub fn get(&self, name: &str) -> Option<&Literal> {
        self.values.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    /// Numeric parameter. Panics if absent: the static checker guarantees
    /// presence and type.
    pub fn num(&self, name: &str) -> f64 {
        match self.get(name) {
            Some(Literal::Num(v)) => *v,
            other => panic!("parameter `{name}` is not a resolved number: {other:?}"),
        }
    }

    pub fn text(&self, name: &str) -> &str {
        match self.get(name) {
            Some(Literal::Str(s)) => s,
            other => panic!("parameter `{name}` is not a resolved string: {other:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ParamKind {
    /// A nested sub-query.
    Query,
    Number,
    Text {
        choices: Option<Vec<String>>,
    },
    /// A name from the category vocabulary.
    Category,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParamKind,
    #[serde(serialize_with = "ser_default")]
    pub default: Option<Literal>,
    pub doc: String,
}

fn ser_default<S: serde::Serializer>(v: &Option<Literal>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        None => s.serialize_none(),
        Some(Literal::Num(x)) => s.serialize_f64(*x),
        Some(Literal::Str(x)) => s.serialize_str(x),
    }
}

impl ParamSpec {
    fn new(name: &str, kind: ParamKind, default: Option<Literal>, doc: &str) -> Self {
        Self {
            name: name.into(),
            kind,
            default,
            doc: doc.into(),
        }
    }

    pub fn query(name: &str, doc: &str) -> Self {
        Self::new(name, ParamKind::Query, None, doc)
    }

    pub fn number(name: &str, default: Option<f64>, doc: &str) -> Self {
        Self::new(name, ParamKind::Number, default.map(Literal::Num), doc)
    }

    pub fn choice(name: &str, choices: &[&str], default: Option<&str>, doc: &str) -> Self {
        Self::new(
            name,
            ParamKind::Text {
                choices: Some(choices.iter().map(|s| s.to_string()).collect()),
            },
            default.map(|s| Literal::Str(s.into())),
            doc,
        )
    }

    pub fn category(name: &str, doc: &str) -> Self {
        Self::new(name, ParamKind::Category, None, doc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    State,
    Relational,
    Logic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogicOp {
    And,
    Or,
    Not,
}

pub type StateFn = dyn Fn(&TrackView<'_>, &Params) -> Vec<bool> + Send + Sync;

/// `(subject, subject_index, other, other_index, params) -> holds`.
/// Both indices refer to states at the same timestamp.
pub type PairFn =
    dyn Fn(&TrackView<'_>, usize, &TrackView<'_>, usize, &Params) -> bool + Send + Sync;

#[derive(Clone)]
pub enum Semantics {
    Logic(LogicOp),
    State(Arc<StateFn>),
    /// `has_subject`: whether the first query parameter restricts the
    /// subject set (otherwise every track is a subject).
    Pair {
        has_subject: bool,
        f: Arc<PairFn>,
    },
}

impl std::fmt::Debug for Semantics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Semantics::Logic(op) => write!(f, "Logic({op:?})"),
            Semantics::State(_) => f.write_str("State(..)"),
            Semantics::Pair { has_subject, .. } => write!(f, "Pair(subject={has_subject})"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PredicateSpec {
    pub name: String,
    pub group: Group,
    pub params: Vec<ParamSpec>,
    /// For variadic combinators: minimum number of sub-queries.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variadic_min: Option<usize>,
    pub doc: String,
    #[serde(skip)]
    pub semantics: Semantics,
}

impl PredicateSpec {
    pub fn signature(&self) -> String {
        let mut parts: Vec<String> = self
            .params
            .iter()
            .map(|p| {
                let ty = match &p.kind {
                    ParamKind::Query => "query".to_string(),
                    ParamKind::Number => "number".to_string(),
                    ParamKind::Category => "category".to_string(),
                    ParamKind::Text { choices: Some(c) } => c
                        .iter()
                        .map(|s| format!("\"{s}\""))
                        .collect::<Vec<_>>()
                        .join("|"),
                    ParamKind::Text { choices: None } => "string".to_string(),
                };
                match &p.default {
                    Some(d) => format!("{}: {ty} = {d}", p.name),
                    None => format!("{}: {ty}", p.name),
                }
            })
            .collect();
        if let Some(min) = self.variadic_min {
            parts = vec![format!("query, ... ({min} or more)")];
        }
        format!("{}({})", self.name, parts.join(", "))
    }
}

/// Registered predicates plus the category vocabulary they validate against.
#[derive(Debug, Clone)]
pub struct Catalog {
    predicates: BTreeMap<String, Arc<PredicateSpec>>,
    pub vocabulary: CategoryVocabulary,
}

#[derive(Debug, thiserror::Error)]
#[error("predicate `{0}` is already registered")]
pub struct DuplicatePredicate(pub String);

pub const CATALOG_VERSION: u32 = 1;

impl Default for Catalog {
    fn default() -> Self {
        Self::builtin(CategoryVocabulary::default())
    }
}

impl Catalog {
    /// Empty catalog (no predicates at all).
    pub fn empty(vocabulary: CategoryVocabulary) -> Self {
        Self {
            predicates: BTreeMap::new(),
            vocabulary,
        }
    }

    /// The v1 catalog: 14 trajectory predicates plus `and`, `or`, `not`.
    pub fn builtin(vocabulary: CategoryVocabulary) -> Self {
        let mut c = Self::empty(vocabulary);
        for spec in builtin_specs() {
            c.register(spec).expect("builtin names are unique");
        }
        c
    }

    pub fn register(&mut self, spec: PredicateSpec) -> Result<(), DuplicatePredicate> {
        if self.predicates.contains_key(&spec.name) {
            return Err(DuplicatePredicate(spec.name));
        }
        self.predicates.insert(spec.name.clone(), Arc::new(spec));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Arc<PredicateSpec>> {
        self.predicates.get(name)
    }

    pub fn predicates(&self) -> impl Iterator<Item = &Arc<PredicateSpec>> {
        self.predicates.values()
    }

    pub fn len(&self) -> usize {
        self.predicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    /// Machine-readable description of every predicate.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            version: u32,
            frame: &'static str,
            predicates: Vec<&'a PredicateSpec>,
            categories: &'a [String],
        }
        let mut order: Vec<&PredicateSpec> = self.predicates.values().map(|p| p.as_ref()).collect();
        order.sort_by_key(|p| (group_rank(p.group), p.name.clone()));
        let doc = Doc {
            version: CATALOG_VERSION,
            frame: "subject-local: origin at box centre, +x along heading, +y to the left; metres, seconds, degrees for angles",
            predicates: order,
            categories: &self.vocabulary.categories,
        };
        serde_json::to_string_pretty(&doc).expect("catalog serializes") + "\n"
    }

    /// Human-readable reference for prompts.
    pub fn render_doc(&self) -> String {
        let mut order: Vec<&PredicateSpec> = self.predicates.values().map(|p| p.as_ref()).collect();
        order.sort_by_key(|p| (group_rank(p.group), p.name.clone()));
        let mut out = String::new();
        let mut last = None;
        for p in order {
            if last != Some(p.group) {
                let title = match p.group {
                    Group::State => "State predicates",
                    Group::Relational => "Relational predicates",
                    Group::Logic => "Logic",
                };
                if last.is_some() {
                    out.push('\n');
                }
                out.push_str(&format!("{title}:\n"));
                last = Some(p.group);
            }
            out.push_str(&format!("- {}\n    {}\n", p.signature(), p.doc));
        }
        out
    }
}

fn group_rank(g: Group) -> u8 {
    match g {
        Group::State => 0,
        Group::Relational => 1,
        Group::Logic => 2,
    }
}

fn state(
    name: &str,
    params: Vec<ParamSpec>,
    doc: &str,
    f: impl Fn(&TrackView<'_>, &Params) -> Vec<bool> + Send + Sync + 'static,
) -> PredicateSpec {
    PredicateSpec {
        name: name.into(),
        group: Group::State,
        params,
        variadic_min: None,
        doc: doc.into(),
        semantics: Semantics::State(Arc::new(f)),
    }
}

fn pair(
    name: &str,
    group: Group,
    has_subject: bool,
    params: Vec<ParamSpec>,
    doc: &str,
    f: impl Fn(&TrackView<'_>, usize, &TrackView<'_>, usize, &Params) -> bool + Send + Sync + 'static,
) -> PredicateSpec {
    PredicateSpec {
        name: name.into(),
        group,
        params,
        variadic_min: None,
        doc: doc.into(),
        semantics: Semantics::Pair {
            has_subject,
            f: Arc::new(f),
        },
    }
}

fn logic(
    name: &str,
    op: LogicOp,
    params: Vec<ParamSpec>,
    min: Option<usize>,
    doc: &str,
) -> PredicateSpec {
    PredicateSpec {
        name: name.into(),
        group: Group::Logic,
        params,
        variadic_min: min,
        doc: doc.into(),
        semantics: Semantics::Logic(op),
    }
}

/// Applies `f` to each state when derivatives are available, else all false.
fn per_state(v: &TrackView<'_>, f: impl Fn(usize) -> bool) -> Vec<bool> {
    let n = v.track.len();
    if !v.kin.derivatives {
        return vec![false; n];
    }
    (0..n).map(f).collect()
}

/// Marks indices belonging to a run of at least `min_len` consecutive hits.
pub fn sustained(hits: &[bool], min_len: usize) -> Vec<bool> {
    let mut out = vec![false; hits.len()];
    let mut i = 0;
    while i < hits.len() {
        if !hits[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < hits.len() && hits[i] {
            i += 1;
        }
        if i - start >= min_len.max(1) {
            out[start..i].iter_mut().for_each(|x| *x = true);
        }
    }
    out
}

fn builtin_specs() -> Vec<PredicateSpec> {
    let subject = || ParamSpec::query("subject", "tracks to test");
    let related = || ParamSpec::query("related", "tracks to look for");
    let within = || {
        ParamSpec::number(
            "within",
            Some(10.0),
            "maximum distance along the relation axis, m",
        )
    };
    let lateral = || {
        ParamSpec::number(
            "lateral_tolerance",
            Some(2.0),
            "maximum |local y| offset, m",
        )
    };
    let longitudinal = || {
        ParamSpec::number(
            "longitudinal_tolerance",
            Some(2.0),
            "maximum |local x| offset, m",
        )
    };

    vec![
        state(
            "category",
            vec![ParamSpec::category("name", "category name, `VEHICLE` or `ANY`")],
            "Tracks whose category equals `name`. `VEHICLE` also matches every vehicle class; `ANY` matches all tracks. Holds at every timestamp of a matching track.",
            |v, p| {
                let hit = CategoryVocabulary::matches(p.text("name"), &v.track.category);
                vec![hit; v.track.len()]
            },
        ),
        state(
            "stationary",
            vec![ParamSpec::number("max_speed", Some(0.5), "m/s")],
            "Planar speed at most `max_speed`. False on tracks with fewer than 3 states.",
            |v, p| {
                let m = p.num("max_speed");
                per_state(v, |i| v.kin.speed[i] <= m)
            },
        ),
        state(
            "moving",
            vec![ParamSpec::number("min_speed", Some(0.5), "m/s")],
            "Planar speed strictly above `min_speed`. False on tracks with fewer than 3 states.",
            |v, p| {
                let m = p.num("min_speed");
                per_state(v, |i| v.kin.speed[i] > m)
            },
        ),
        state(
            "turning",
            vec![
                ParamSpec::choice("direction", &["left", "right"], None, "turn direction"),
                ParamSpec::number("min_yaw_rate", Some(0.15), "rad/s"),
                ParamSpec::number("min_frames", Some(3.0), "consecutive frames the rate must be sustained"),
            ],
            "Yaw rate of at least `min_yaw_rate` toward `direction` (left is counter-clockwise) sustained over at least `min_frames` consecutive states. False on tracks with fewer than 3 states.",
            |v, p| {
                let rate = p.num("min_yaw_rate");
                let sign = if p.text("direction") == "left" { 1.0 } else { -1.0 };
                let hits = per_state(v, |i| sign * v.kin.yaw_rate[i] >= rate);
                sustained(&hits, p.num("min_frames").max(1.0) as usize)
            },
        ),
        state(
            "accelerating",
            vec![ParamSpec::number("min_accel", Some(1.0), "m/s²")],
            "Rate of change of speed at least `min_accel`. False on tracks with fewer than 3 states.",
            |v, p| {
                let m = p.num("min_accel");
                per_state(v, |i| v.kin.accel[i] >= m)
            },
        ),
        state(
            "braking",
            vec![ParamSpec::number("min_decel", Some(1.0), "m/s², positive")],
            "Rate of change of speed at most `-min_decel`. False on tracks with fewer than 3 states.",
            |v, p| {
                let m = p.num("min_decel");
                per_state(v, |i| v.kin.accel[i] <= -m)
            },
        ),
        state(
            "speed_between",
            vec![
                ParamSpec::number("min", None, "m/s, inclusive"),
                ParamSpec::number("max", None, "m/s, inclusive"),
            ],
            "Planar speed within [`min`, `max`]. False on tracks with fewer than 3 states.",
            |v, p| {
                let (lo, hi) = (p.num("min"), p.num("max"));
                per_state(v, |i| v.kin.speed[i] >= lo && v.kin.speed[i] <= hi)
            },
        ),
        pair(
            "heading_toward",
            Group::State,
            false,
            vec![
                related(),
                ParamSpec::number("max_angle", Some(22.5), "degrees"),
                ParamSpec::number("min_speed", Some(0.5), "m/s"),
            ],
            "Tracks moving faster than `min_speed` whose velocity direction points within `max_angle` of the bearing to some other track of `related`. False on tracks with fewer than 3 states.",
            |s, si, o, oi, p| {
                if !s.kin.derivatives || s.kin.speed[si] <= p.num("min_speed") {
                    return false;
                }
                let v = s.kin.velocity[si];
                let (a, b) = (&s.track.states[si], &o.track.states[oi]);
                let bearing = (b.ty - a.ty).atan2(b.tx - a.tx);
                let heading = v[1].atan2(v[0]);
                wrap_angle(bearing - heading).abs() <= p.num("max_angle").to_radians()
            },
        ),
        pair(
            "has_in_front",
            Group::Relational,
            true,
            vec![subject(), related(), within(), lateral()],
            "Subjects with some other `related` track ahead: local x in (0, within] and |local y| <= lateral_tolerance.",
            |s, si, o, oi, p| {
                let (x, y) = local_xy(s.track, si, o.track, oi);
                x > 0.0 && x <= p.num("within") && y.abs() <= p.num("lateral_tolerance")
            },
        ),
        pair(
            "has_behind",
            Group::Relational,
            true,
            vec![subject(), related(), within(), lateral()],
            "Subjects with some other `related` track behind: local x in [-within, 0) and |local y| <= lateral_tolerance.",
            |s, si, o, oi, p| {
                let (x, y) = local_xy(s.track, si, o.track, oi);
                x < 0.0 && x >= -p.num("within") && y.abs() <= p.num("lateral_tolerance")
            },
        ),
        pair(
            "has_to_left",
            Group::Relational,
            true,
            vec![subject(), related(), within(), longitudinal()],
            "Subjects with some other `related` track on their left: local y in (0, within] and |local x| <= longitudinal_tolerance.",
            |s, si, o, oi, p| {
                let (x, y) = local_xy(s.track, si, o.track, oi);
                y > 0.0 && y <= p.num("within") && x.abs() <= p.num("longitudinal_tolerance")
            },
        ),
        pair(
            "has_to_right",
            Group::Relational,
            true,
            vec![subject(), related(), within(), longitudinal()],
            "Subjects with some other `related` track on their right: local y in [-within, 0) and |local x| <= longitudinal_tolerance.",
            |s, si, o, oi, p| {
                let (x, y) = local_xy(s.track, si, o.track, oi);
                y < 0.0 && y >= -p.num("within") && x.abs() <= p.num("longitudinal_tolerance")
            },
        ),
        pair(
            "near",
            Group::Relational,
            true,
            vec![subject(), related(), ParamSpec::number("distance", Some(3.0), "m, centre to centre")],
            "Subjects with some other `related` track whose centre lies within `distance` (3D).",
            |s, si, o, oi, p| {
                let (a, b) = (&s.track.states[si], &o.track.states[oi]);
                let d = ((a.tx - b.tx).powi(2) + (a.ty - b.ty).powi(2) + (a.tz - b.tz).powi(2)).sqrt();
                d <= p.num("distance")
            },
        ),
        pair(
            "being_crossed_by",
            Group::Relational,
            true,
            vec![subject(), related(), ParamSpec::number("forward", Some(10.0), "m ahead of the subject")],
            "Subjects whose forward axis is crossed by some other `related` track: between that track's previous state and the current one its local y changes side while local x is in (0, forward]. Both positions are taken in the subject's current frame.",
            |s, si, o, oi, p| {
                if oi == 0 {
                    return false;
                }
                let (x, y) = local_xy(s.track, si, o.track, oi);
                let (_, y_prev) = local_xy(s.track, si, o.track, oi - 1);
                let crossed = y_prev * y < 0.0 || (y == 0.0 && y_prev != 0.0);
                crossed && x > 0.0 && x <= p.num("forward")
            },
        ),
        logic("and", LogicOp::And, vec![], Some(2), "Intersection: holds where every sub-query holds."),
        logic("or", LogicOp::Or, vec![], Some(2), "Union: holds where any sub-query holds."),
        logic(
            "not",
            LogicOp::Not,
            vec![ParamSpec::query("query", "query to complement")],
            None,
            "Complement within each track's own timestamps.",
        ),
    ]
}
