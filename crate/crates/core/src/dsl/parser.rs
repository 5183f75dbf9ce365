//! Hand-written lexer and recursive-descent parser.
//!
//! ```text
//! program := "output" "(" expr ")"
//! expr    := call
//! call    := IDENT "(" [arg {"," arg}] ")"
//! arg     := expr | STRING | NUMBER | IDENT "=" (STRING | NUMBER)
//! ```
//!
//! `#` starts a comment that runs to the end of the line.

use super::ast::{Arg, Ast, Call, Literal, Span};
use super::DslError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    LParen,
    RParen,
    Comma,
    Eq,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Str(_) => "string literal".into(),
            Tok::Num(_) => "number".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            chars: src.chars().peekable(),
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn pos(&self) -> Span {
        Span {
            line: self.line,
            col: self.col,
        }
    }

    fn err(span: Span, message: impl Into<String>) -> DslError {
        DslError::Syntax {
            line: span.line,
            col: span.col,
            message: message.into(),
        }
    }

    fn tokenize(mut self) -> Result<Vec<(Tok, Span)>, DslError> {
        let mut out = Vec::new();
        loop {
            while let Some(&c) = self.chars.peek() {
                if c.is_whitespace() {
                    self.bump();
                } else if c == '#' {
                    while let Some(&c) = self.chars.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                } else {
                    break;
                }
            }
            let start = self.pos();
            let Some(&c) = self.chars.peek() else {
                out.push((Tok::Eof, start));
                return Ok(out);
            };
            let tok = match c {
                '(' => {
                    self.bump();
                    Tok::LParen
                }
                ')' => {
                    self.bump();
                    Tok::RParen
                }
                ',' => {
                    self.bump();
                    Tok::Comma
                }
                '=' => {
                    self.bump();
                    Tok::Eq
                }
                '"' => self.string(start)?,
                c if c == '-' || c == '+' || c.is_ascii_digit() || c == '.' => {
                    self.number(start)?
                }
                c if c.is_alphabetic() || c == '_' => {
                    let mut s = String::new();
                    while let Some(&c) = self.chars.peek() {
                        if c.is_alphanumeric() || c == '_' {
                            s.push(c);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    Tok::Ident(s)
                }
                other => return Err(Self::err(start, format!("unexpected character `{other}`"))),
            };
            out.push((tok, start));
        }
    }

    fn string(&mut self, start: Span) -> Result<Tok, DslError> {
        self.bump();
        let mut s = String::new();
        loop {
            match self.bump() {
                None => return Err(Self::err(self.pos(), "unterminated string literal")),
                Some('"') => return Ok(Tok::Str(s)),
                Some('\\') => match self.bump() {
                    Some('"') => s.push('"'),
                    Some('\\') => s.push('\\'),
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    Some(c) => return Err(Self::err(start, format!("unknown escape `\\{c}`"))),
                    None => return Err(Self::err(self.pos(), "unterminated string literal")),
                },
                Some(c) => s.push(c),
            }
        }
    }

    fn number(&mut self, start: Span) -> Result<Tok, DslError> {
        let mut s = String::new();
        if let Some(&c) = self.chars.peek() {
            if c == '-' || c == '+' {
                s.push(c);
                self.bump();
            }
        }
        let mut prev = ' ';
        while let Some(&c) = self.chars.peek() {
            let exp_sign = (c == '-' || c == '+') && (prev == 'e' || prev == 'E');
            if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                s.push(c);
                prev = c;
                self.bump();
            } else {
                break;
            }
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() && s.bytes().any(|b| b.is_ascii_digit()) => Ok(Tok::Num(v)),
            _ => Err(Self::err(start, format!("malformed number `{s}`"))),
        }
    }
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &(Tok, Span) {
        &self.toks[self.pos]
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)].0
    }

    fn next(&mut self) -> (Tok, Span) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<Span, DslError> {
        let (tok, span) = self.next();
        if tok == want {
            Ok(span)
        } else {
            Err(unexpected(&tok, span, what))
        }
    }

    fn program(&mut self) -> Result<Ast, DslError> {
        let (tok, span) = self.next();
        match tok {
            Tok::Ident(ref s) if s == "output" => {}
            other => return Err(unexpected(&other, span, "`output`")),
        }
        self.expect(Tok::LParen, "`(` after `output`")?;
        let root = match self.peek().clone() {
            (Tok::Ident(_), _) if *self.peek2() == Tok::LParen => self.call()?,
            (tok, span) => return Err(unexpected(&tok, span, "a predicate call")),
        };
        self.expect(Tok::RParen, "`)` closing `output`")?;
        let (tok, span) = self.next();
        if tok != Tok::Eof {
            return Err(unexpected(&tok, span, "end of input after `output(...)`"));
        }
        Ok(Ast { root })
    }

    fn call(&mut self) -> Result<Call, DslError> {
        let (tok, span) = self.next();
        let name = match tok {
            Tok::Ident(s) => s,
            other => return Err(unexpected(&other, span, "a predicate name")),
        };
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek().0 == Tok::RParen {
            self.next();
            return Ok(Call { name, args, span });
        }
        loop {
            args.push(self.arg()?);
            let (tok, sp) = self.next();
            match tok {
                Tok::Comma => continue,
                Tok::RParen => break,
                other => return Err(unexpected(&other, sp, "`,` or `)`")),
            }
        }
        Ok(Call { name, args, span })
    }

    fn arg(&mut self) -> Result<Arg, DslError> {
        let (tok, span) = self.peek().clone();
        match tok {
            Tok::Str(s) => {
                self.next();
                Ok(Arg::Lit(Literal::Str(s), span))
            }
            Tok::Num(v) => {
                self.next();
                Ok(Arg::Lit(Literal::Num(v), span))
            }
            Tok::Ident(name) => match self.peek2() {
                Tok::LParen => Ok(Arg::Call(self.call()?)),
                Tok::Eq => {
                    self.next();
                    self.next();
                    let (vt, vs) = self.next();
                    let value = match vt {
                        Tok::Str(s) => Literal::Str(s),
                        Tok::Num(v) => Literal::Num(v),
                        other => return Err(unexpected(&other, vs, "a string or number value")),
                    };
                    Ok(Arg::Named { name, value, span })
                }
                _ => {
                    self.next();
                    let (t2, s2) = self.peek().clone();
                    Err(unexpected(&t2, s2, &format!("`(` or `=` after `{name}`")))
                }
            },
            other => Err(unexpected(&other, span, "an argument")),
        }
    }
}

fn unexpected(tok: &Tok, span: Span, expected: &str) -> DslError {
    let message = if *tok == Tok::Eof {
        format!("unexpected end of input, expected {expected}")
    } else {
        format!("expected {expected}, found {}", tok.describe())
    };
    DslError::Syntax {
        line: span.line,
        col: span.col,
        message,
    }
}

/// Parses source text into a syntax tree without resolving predicates.
pub fn parse_syntax(source: &str) -> Result<Ast, DslError> {
    let toks = Lexer::new(source).tokenize()?;
    Parser { toks, pos: 0 }.program()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let ast = parse_syntax(r#"output(category("VEHICLE"))"#).unwrap();
        assert_eq!(ast.node_count(), 1);
        assert_eq!(ast.root.name, "category");
    }

    #[test]
    fn nested_program() {
        let ast = parse_syntax(r#"output(and(category("VEHICLE"), turning("left")))"#).unwrap();
        assert_eq!(ast.node_count(), 3);
    }

    #[test]
    fn unterminated_call_reports_eof() {
        let src = r#"output(near(category("PEDESTRIAN"), distance=3.0,"#;
        match parse_syntax(src) {
            Err(DslError::Syntax { line, col, message }) => {
                assert_eq!(line, 1);
                assert_eq!(col, src.chars().count() + 1);
                assert!(message.contains("end of input"), "{message}");
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn positions_are_tracked_across_lines() {
        let src = "# comment\noutput(\n  category(\"VEHICLE\") )";
        let ast = parse_syntax(src).unwrap();
        assert_eq!(ast.root.span, Span { line: 3, col: 3 });
        let err = parse_syntax("output(\n  and(,))").unwrap_err();
        assert!(
            matches!(
                err,
                DslError::Syntax {
                    line: 2,
                    col: 7,
                    ..
                }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn rejects_trailing_tokens_and_bare_identifiers() {
        assert!(parse_syntax(r#"output(category("A")) output(category("B"))"#).is_err());
        assert!(parse_syntax(r#"output(and(left, category("B")))"#).is_err());
        assert!(parse_syntax(r#"category("A")"#).is_err());
        assert!(parse_syntax(r#"output("A")"#).is_err());
    }

    #[test]
    fn numbers_and_strings() {
        let ast =
            parse_syntax(r#"output(speed_between(min=-1.5e-1, max=2, note="a\"b"))"#).unwrap();
        match &ast.root.args[0] {
            Arg::Named {
                value: Literal::Num(v),
                ..
            } => assert_eq!(*v, -0.15),
            a => panic!("{a:?}"),
        }
        assert!(parse_syntax("output(x(1.2.3))").is_err());
        assert!(parse_syntax("output(x(-))").is_err());
    }

    #[test]
    fn pretty_print_roundtrip() {
        let src = r#"output(and(category("VEHICLE"),  has_in_front(category("VEHICLE"), category("PEDESTRIAN"), within=10.0), not(turning("left", min_yaw_rate=1e-7)), note("q\"\\")))"#;
        let ast = parse_syntax(src).unwrap();
        let printed = ast.pretty();
        let again = parse_syntax(&printed).unwrap();
        assert_eq!(again, ast);
        assert_eq!(again.pretty(), printed);
    }
}
