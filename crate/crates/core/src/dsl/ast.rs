use std::fmt;

/// 1-based source position.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Span {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone)]
pub enum Literal {
    Str(String),
    Num(f64),
}

impl PartialEq for Literal {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Literal::Str(a), Literal::Str(b)) => a == b,
            (Literal::Num(a), Literal::Num(b)) => a.to_bits() == b.to_bits(),
            _ => false,
        }
    }
}

impl Literal {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Literal::Str(_) => "string",
            Literal::Num(_) => "number",
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Str(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        '\t' => f.write_str("\\t")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
            // Debug formatting of f64 is shortest round-trip and always
            // carries a decimal point or exponent.
            Literal::Num(v) => write!(f, "{v:?}"),
        }
    }
}

/// A call argument as written in the source.
#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    Call(Call),
    Lit(Literal, Span),
    Named {
        name: String,
        value: Literal,
        span: Span,
    },
}

impl Arg {
    pub fn span(&self) -> Span {
        match self {
            Arg::Call(c) => c.span,
            Arg::Lit(_, s) => *s,
            Arg::Named { span, .. } => *span,
        }
    }
}

/// Predicate or combinator call. Equality ignores source positions.
#[derive(Debug, Clone)]
pub struct Call {
    pub name: String,
    pub args: Vec<Arg>,
    pub span: Span,
}

impl PartialEq for Call {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.args.len() == other.args.len() && {
            self.args
                .iter()
                .zip(&other.args)
                .all(|(a, b)| match (a, b) {
                    (Arg::Call(x), Arg::Call(y)) => x == y,
                    (Arg::Lit(x, _), Arg::Lit(y, _)) => x == y,
                    (
                        Arg::Named {
                            name: n1,
                            value: v1,
                            ..
                        },
                        Arg::Named {
                            name: n2,
                            value: v2,
                            ..
                        },
                    ) => n1 == n2 && v1 == v2,
                    _ => false,
                })
        }
    }
}

impl fmt::Display for Call {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            match a {
                Arg::Call(c) => write!(f, "{c}")?,
                Arg::Lit(l, _) => write!(f, "{l}")?,
                Arg::Named { name, value, .. } => write!(f, "{name}={value}")?,
            }
        }
        f.write_str(")")
    }
}

/// Syntax tree of a whole program: the single expression under `output(...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ast {
    pub root: Call,
}

impl fmt::Display for Ast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "output({})", self.root)
    }
}

impl Ast {
    /// Canonical source text. Parsing it yields an equal tree.
    pub fn pretty(&self) -> String {
        self.to_string()
    }

    pub fn node_count(&self) -> usize {
        fn count(c: &Call) -> usize {
            1 + c
                .args
                .iter()
                .map(|a| match a {
                    Arg::Call(c) => count(c),
                    _ => 0,
                })
                .sum::<usize>()
        }
        count(&self.root)
    }
}
