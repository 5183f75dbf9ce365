//! Sandboxed scenario-query language.
//!
//! Programs compose catalog predicates with boolean combinators under a
//! single `output(...)` root, e.g.
//!
//! ```text
//! output(has_in_front(category("VEHICLE"), category("PEDESTRIAN"), within=10.0))
//! ```
//!
//! [`parse`] runs the syntax pass and then resolves every call against a
//! [`Catalog`], so a returned [`ScenarioProgram`] always evaluates without
//! error. [`evaluate`] maps a program over a log to a [`ScenarioMask`].

pub mod ast;
pub mod catalog;
pub mod eval;
pub mod parser;

use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ast::{Arg, Ast, Call, Literal, Span};
pub use catalog::{Catalog, Kinematics, LogicOp, ParamKind, Params, PredicateSpec, Semantics};
pub use eval::{evaluate, evaluate_predicate, evaluate_with, EvalOptions, EvalStats};
pub use parser::parse_syntax;

use crate::traj::{LogManifest, Track};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DslError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("unknown predicate `{name}` at {line}:{col}")]
    UnknownPredicate {
        name: String,
        line: usize,
        col: usize,
    },
    #[error("arity error in `{name}` at {line}:{col}: {message}")]
    Arity {
        name: String,
        line: usize,
        col: usize,
        message: String,
    },
    #[error("type error at {line}:{col}: {message}")]
    TypeMismatch {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("invalid evaluation target: {0}")]
    Target(String),
}

/// Resolved, type-checked query tree.
#[derive(Debug, Clone)]
pub enum Query {
    Logic {
        op: LogicOp,
        args: Vec<Query>,
    },
    State {
        spec: Arc<PredicateSpec>,
        params: Params,
    },
    Pair {
        spec: Arc<PredicateSpec>,
        subject: Option<Box<Query>>,
        related: Box<Query>,
        params: Params,
    },
}

impl Query {
    pub fn depth(&self) -> usize {
        match self {
            Query::Logic { args, .. } => 1 + args.iter().map(Query::depth).max().unwrap_or(0),
            Query::State { .. } => 1,
            Query::Pair {
                subject, related, ..
            } => {
                1 + related
                    .depth()
                    .max(subject.as_ref().map_or(0, |s| s.depth()))
            }
        }
    }
}

/// A parsed and checked program.
#[derive(Debug, Clone)]
pub struct ScenarioProgram {
    pub source: String,
    pub ast: Ast,
    pub query: Query,
}

impl ScenarioProgram {
    /// Canonical source for this program.
    pub fn pretty(&self) -> String {
        self.ast.pretty()
    }
}

/// Set of `(track_id, timestamp)` pairs selected in one log.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioMask {
    pub log_id: String,
    pub entries: BTreeSet<(String, i64)>,
}

impl ScenarioMask {
    pub fn new(log_id: impl Into<String>) -> Self {
        Self {
            log_id: log_id.into(),
            entries: BTreeSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, track_id: impl Into<String>, ts_ns: i64) -> bool {
        self.entries.insert((track_id.into(), ts_ns))
    }

    pub fn contains(&self, track_id: &str, ts_ns: i64) -> bool {
        self.entries.contains(&(track_id.to_string(), ts_ns))
    }

    /// Size of the symmetric difference of the entry sets.
    pub fn diff_size(&self, other: &ScenarioMask) -> usize {
        self.entries.symmetric_difference(&other.entries).count()
    }

    pub fn timestamps(&self) -> BTreeSet<i64> {
        self.entries.iter().map(|(_, t)| *t).collect()
    }

    pub fn track_ids(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|(id, _)| id.as_str()).collect()
    }

    /// Checks that every entry names an existing track and one of its timestamps.
    pub fn validate_against(&self, log: &LogManifest) -> Result<(), DslError> {
        if self.log_id != log.log_id {
            return Err(DslError::Target(format!(
                "mask belongs to log {} but log {} was given",
                self.log_id, log.log_id
            )));
        }
        for (id, ts) in &self.entries {
            let ok = log
                .track(id)
                .map(|t: &Track| t.index_of(*ts).is_some())
                .unwrap_or(false);
            if !ok {
                return Err(DslError::Target(format!(
                    "mask entry ({id}, {ts}) does not reference a track state in log {}",
                    log.log_id
                )));
            }
        }
        Ok(())
    }
}

/// The process-wide default catalog.
pub fn default_catalog() -> &'static Catalog {
    static CATALOG: OnceLock<Catalog> = OnceLock::new();
    CATALOG.get_or_init(Catalog::default)
}

/// Parses and checks `source` against the default catalog.
pub fn parse(source: &str) -> Result<ScenarioProgram, DslError> {
    parse_with(source, default_catalog())
}

pub fn parse_with(source: &str, catalog: &Catalog) -> Result<ScenarioProgram, DslError> {
    let ast = parse_syntax(source)?;
    let query = check(&ast.root, catalog)?;
    Ok(ScenarioProgram {
        source: source.to_string(),
        ast,
        query,
    })
}

/// Resolves a call tree against the catalog.
pub fn check(call: &Call, catalog: &Catalog) -> Result<Query, DslError> {
    let Span { line, col } = call.span;
    let spec = catalog
        .get(&call.name)
        .ok_or_else(|| DslError::UnknownPredicate {
            name: call.name.clone(),
            line,
            col,
        })?
        .clone();
    let arity = |message: String| DslError::Arity {
        name: call.name.clone(),
        line,
        col,
        message,
    };

    if let Some(min) = spec.variadic_min {
        let mut args = Vec::with_capacity(call.args.len());
        for a in &call.args {
            match a {
                Arg::Call(c) => args.push(check(c, catalog)?),
                Arg::Named { name, .. } => {
                    return Err(arity(format!(
                        "`{}` takes no named argument `{name}`",
                        call.name
                    )))
                }
                Arg::Lit(l, s) => {
                    return Err(type_err(
                        *s,
                        format!(
                            "{} where sub-query expected in `{}`",
                            l.kind_name(),
                            call.name
                        ),
                    ))
                }
            }
        }
        if args.len() < min {
            return Err(arity(format!(
                "expected at least {min} sub-queries, found {}",
                args.len()
            )));
        }
        let op = match spec.semantics {
            Semantics::Logic(op) => op,
            _ => {
                return Err(arity(
                    "variadic predicates must be logic combinators".into(),
                ))
            }
        };
        return Ok(Query::Logic { op, args });
    }

    let n = spec.params.len();
    let mut bound: Vec<Option<&Arg>> = vec![None; n];
    let mut next_positional = 0usize;
    let mut seen_named = false;
    for a in &call.args {
        let slot = match a {
            Arg::Named { name, .. } => {
                seen_named = true;
                spec.params
                    .iter()
                    .position(|p| &p.name == name)
                    .ok_or_else(|| arity(format!("unknown parameter `{name}`")))?
            }
            _ => {
                if seen_named {
                    return Err(arity("positional argument after named argument".into()));
                }
                if next_positional >= n {
                    return Err(arity(format!(
                        "too many arguments: takes at most {n}, found {}",
                        call.args.len()
                    )));
                }
                next_positional += 1;
                next_positional - 1
            }
        };
        if bound[slot].is_some() {
            return Err(arity(format!(
                "parameter `{}` given more than once",
                spec.params[slot].name
            )));
        }
        bound[slot] = Some(a);
    }

    let mut queries = Vec::new();
    let mut params = Params::default();
    for (p, arg) in spec.params.iter().zip(&bound) {
        match (&p.kind, arg) {
            (ParamKind::Query, Some(Arg::Call(c))) => queries.push(check(c, catalog)?),
            (ParamKind::Query, Some(a)) => {
                return Err(type_err(
                    a.span(),
                    format!(
                        "scalar where sub-query expected for `{}` of `{}`",
                        p.name, call.name
                    ),
                ))
            }
            (ParamKind::Query, None) => {
                return Err(arity(format!("missing sub-query `{}`", p.name)))
            }
            (_, Some(Arg::Call(c))) => {
                return Err(type_err(
                    c.span,
                    format!(
                        "sub-query where {} expected for `{}` of `{}`",
                        kind_label(&p.kind),
                        p.name,
                        call.name
                    ),
                ))
            }
            (kind, Some(Arg::Lit(v, s)))
            | (
                kind,
                Some(Arg::Named {
                    value: v, span: s, ..
                }),
            ) => {
                check_literal(kind, v, *s, &p.name, catalog)?;
                params.values.push((p.name.clone(), v.clone()));
            }
            (_, None) => match &p.default {
                Some(d) => params.values.push((p.name.clone(), d.clone())),
                None => return Err(arity(format!("missing argument `{}`", p.name))),
            },
        }
    }

    match &spec.semantics {
        Semantics::State(_) if queries.is_empty() => Ok(Query::State { spec, params }),
        Semantics::Pair { has_subject, .. } => {
            let want = if *has_subject { 2 } else { 1 };
            if queries.len() != want {
                return Err(arity(format!(
                    "catalog entry declares {} sub-queries, semantics need {want}",
                    queries.len()
                )));
            }
            let related = Box::new(queries.pop().expect("length checked"));
            let subject = queries.pop().map(Box::new);
            Ok(Query::Pair {
                spec,
                subject,
                related,
                params,
            })
        }
        Semantics::Logic(LogicOp::Not) if queries.len() == 1 => Ok(Query::Logic {
            op: LogicOp::Not,
            args: queries,
        }),
        _ => Err(arity(
            "catalog entry is inconsistent with its semantics".into(),
        )),
    }
}

fn kind_label(kind: &ParamKind) -> &'static str {
    match kind {
        ParamKind::Query => "sub-query",
        ParamKind::Number => "number",
        ParamKind::Text { .. } => "string",
        ParamKind::Category => "category string",
    }
}

fn type_err(span: Span, message: String) -> DslError {
    DslError::TypeMismatch {
        line: span.line,
        col: span.col,
        message,
    }
}

fn check_literal(
    kind: &ParamKind,
    v: &Literal,
    span: Span,
    pname: &str,
    catalog: &Catalog,
) -> Result<(), DslError> {
    match (kind, v) {
        (ParamKind::Number, Literal::Num(_)) => Ok(()),
        (ParamKind::Text { choices }, Literal::Str(s)) => match choices {
            Some(c) if !c.iter().any(|x| x == s) => Err(type_err(
                span,
                format!("`{pname}` must be one of {c:?}, found \"{s}\""),
            )),
            _ => Ok(()),
        },
        (ParamKind::Category, Literal::Str(s)) => {
            if catalog.vocabulary.contains(s) {
                Ok(())
            } else {
                Err(type_err(span, format!("unknown category \"{s}\"")))
            }
        }
        (k, l) => Err(type_err(
            span,
            format!(
                "`{pname}` expects a {}, found {}",
                kind_label(k),
                l.kind_name()
            ),
        )),
    }
}
