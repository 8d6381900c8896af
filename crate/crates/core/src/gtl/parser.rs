//! Recursive-descent parser for the textual GTL syntax.
//!
//! ```text
//! formula  := conj ("|" conj)*
//! conj     := unary ("&" unary)*
//! unary    := "!" unary
//!           | ("F" | "G") "[" INT "," INT "]" unary
//!           | "E" INT "{" edgeprop ("," edgeprop)* "}" unary
//!           | "(" IDENT op NUMBER ")"
//!           | "(" formula ")"
//! op       := ">=" | ">" | "<" | "<=" | "="
//! edgeprop := "true" | IDENT [op NUMBER]
//! ```
//!
//! `(X = 1)` is sugar for `X >= 0.5`, `(X = 0)` for `!(X >= 0.5)`, and
//! `(X < c)` for `!(X >= c)`. A bare edge feature `conn` means `conn > 0`.

use std::fmt;

use super::formula::{CmpOp, EdgeProp, Formula};

/// Threshold used by the `= 0` / `= 1` sugar for boolean features embedded as reals.
pub const BOOLEAN_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    Syntax(String),
    Unbounded(&'static str),
    InvertedBounds { a: usize, b: usize },
    NegativeBound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: ", self.line, self.column)?;
        match &self.kind {
            ParseErrorKind::Syntax(msg) => write!(f, "syntax error: {msg}"),
            ParseErrorKind::Unbounded(op) => {
                write!(f, "unbounded temporal operator `{op}` is not supported")
            }
            ParseErrorKind::InvertedBounds { a, b } => {
                write!(f, "inverted interval bounds [{a},{b}]")
            }
            ParseErrorKind::NegativeBound => write!(f, "interval bounds must be non-negative"),
        }
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Replace an inverted interval `[a,b]` (a > b) by `[a,a]` instead of failing.
    pub clamp_inverted: bool,
}

pub fn parse_formula(text: &str) -> Result<Formula, ParseError> {
    parse_formula_with(text, ParseOptions::default())
}

pub fn parse_formula_with(text: &str, options: ParseOptions) -> Result<Formula, ParseError> {
    let mut p = Parser {
        chars: text.chars().collect(),
        pos: 0,
        options,
    };
    let f = p.formula()?;
    p.skip_ws();
    if p.pos < p.chars.len() {
        return Err(p.error(ParseErrorKind::Syntax(format!(
            "unexpected `{}` after end of formula",
            p.chars[p.pos]
        ))));
    }
    Ok(f)
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
    options: ParseOptions,
}

impl Parser {
    fn error_at(&self, pos: usize, kind: ParseErrorKind) -> ParseError {
        let mut line = 1;
        let mut column = 1;
        for &c in &self.chars[..pos.min(self.chars.len())] {
            if c == '\n' {
                line += 1;
                column = 1;
            } else {
                column += 1;
            }
        }
        ParseError { line, column, kind }
    }

    fn error(&self, kind: ParseErrorKind) -> ParseError {
        self.error_at(self.pos, kind)
    }

    fn syntax(&self, msg: impl Into<String>) -> ParseError {
        self.error(ParseErrorKind::Syntax(msg.into()))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn peek_raw(&self, offset: usize) -> Option<char> {
        self.chars.get(self.pos + offset).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            let found = self
                .peek()
                .map_or("end of input".to_string(), |c| format!("`{c}`"));
            Err(self.syntax(format!("expected `{c}`, found {found}")))
        }
    }

    fn formula(&mut self) -> Result<Formula, ParseError> {
        let mut left = self.conj()?;
        while self.eat('|') {
            let right = self.conj()?;
            left = Formula::or(left, right);
        }
        Ok(left)
    }

    fn conj(&mut self) -> Result<Formula, ParseError> {
        let mut left = self.unary()?;
        loop {
            if self.eat('&') {
                let right = self.unary()?;
                left = Formula::and(left, right);
            } else if self.peek() == Some('U') && !self.ident_continues(1) {
                return Err(self.error(ParseErrorKind::Unbounded("U")));
            } else {
                return Ok(left);
            }
        }
    }

    fn ident_continues(&self, offset: usize) -> bool {
        self.peek_raw(offset)
            .is_some_and(|c| c.is_alphanumeric() || c == '_')
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        match self.peek() {
            Some('!') => {
                self.pos += 1;
                Ok(Formula::not(self.unary()?))
            }
            Some('(') => {
                self.pos += 1;
                let f = if self.atom_follows() {
                    self.atom_body()?
                } else {
                    self.formula()?
                };
                self.expect(')')?;
                Ok(f)
            }
            Some(c) if c.is_alphabetic() => {
                let start = self.pos;
                let word = self.ident();
                match word.as_str() {
                    "F" | "G" => {
                        if self.peek() != Some('[') {
                            let op = if word == "F" { "F" } else { "G" };
                            return Err(self.error_at(start, ParseErrorKind::Unbounded(op)));
                        }
                        let (a, b) = self.interval()?;
                        let inner = self.unary()?;
                        Ok(if word == "F" {
                            Formula::eventually(a, b, inner)
                        } else {
                            Formula::always(a, b, inner)
                        })
                    }
                    "X" => Err(self.error_at(start, ParseErrorKind::Unbounded("X"))),
                    "U" => Err(self.error_at(start, ParseErrorKind::Unbounded("U"))),
                    w if w.starts_with('E')
                        && w.len() > 1
                        && w[1..].chars().all(|c| c.is_ascii_digit()) =>
                    {
                        let n: usize = w[1..].parse().map_err(|_| {
                            self.error_at(start, ParseErrorKind::Syntax("bad count".into()))
                        })?;
                        if n == 0 {
                            return Err(self.error_at(
                                start,
                                ParseErrorKind::Syntax("neighbor count must be at least 1".into()),
                            ));
                        }
                        self.expect('{')?;
                        let mut props = vec![self.edge_prop()?];
                        while self.eat(',') {
                            props.push(self.edge_prop()?);
                        }
                        self.expect('}')?;
                        let inner = self.unary()?;
                        Ok(Formula::exists(n, props, inner))
                    }
                    other => Err(self.error_at(
                        start,
                        ParseErrorKind::Syntax(format!("unexpected identifier `{other}`")),
                    )),
                }
            }
            Some(c) => Err(self.syntax(format!("unexpected `{c}`"))),
            None => Err(self.syntax("unexpected end of input")),
        }
    }

    /// After `(`: is this `IDENT op ...`?
    fn atom_follows(&mut self) -> bool {
        let save = self.pos;
        let result = match self.peek() {
            Some(c) if c.is_alphabetic() || c == '_' => {
                self.ident();
                matches!(self.peek(), Some('>' | '<' | '='))
            }
            _ => false,
        };
        self.pos = save;
        result
    }

    fn ident(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len()
            && (self.chars[self.pos].is_alphanumeric() || self.chars[self.pos] == '_')
        {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn op(&mut self) -> Result<&'static str, ParseError> {
        let op = match (self.peek(), self.peek_raw(1)) {
            (Some('>'), Some('=')) => ">=",
            (Some('<'), Some('=')) => "<=",
            (Some('>'), _) => ">",
            (Some('<'), _) => "<",
            (Some('='), _) => "=",
            _ => return Err(self.syntax("expected comparison operator")),
        };
        self.pos += op.len();
        Ok(op)
    }

    fn atom_body(&mut self) -> Result<Formula, ParseError> {
        let feature = self.ident();
        let op_pos = self.pos;
        let op = self.op()?;
        let value = self.number()?;
        Ok(match op {
            ">=" | ">" => Formula::atomic(feature, value),
            "<" | "<=" => Formula::not(Formula::atomic(feature, value)),
            _ => {
                if value == 1.0 {
                    Formula::atomic(feature, BOOLEAN_THRESHOLD)
                } else if value == 0.0 {
                    Formula::not(Formula::atomic(feature, BOOLEAN_THRESHOLD))
                } else {
                    return Err(self.error_at(
                        op_pos,
                        ParseErrorKind::Syntax("equality is only defined against 0 or 1".into()),
                    ));
                }
            }
        })
    }

    fn edge_prop(&mut self) -> Result<EdgeProp, ParseError> {
        let feature = self.ident();
        if feature.is_empty() {
            return Err(self.syntax("expected edge proposition"));
        }
        if feature == "true" {
            return Ok(EdgeProp::True);
        }
        if !matches!(self.peek(), Some('>' | '<' | '=')) {
            return Ok(EdgeProp::Compare {
                feature,
                op: CmpOp::Gt,
                value: 0.0,
            });
        }
        let op = match self.op()? {
            ">=" => CmpOp::Ge,
            ">" => CmpOp::Gt,
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            _ => return Err(self.syntax("edge propositions use >, >=, < or <=")),
        };
        let value = self.number()?;
        Ok(EdgeProp::Compare { feature, op, value })
    }

    fn interval(&mut self) -> Result<(usize, usize), ParseError> {
        self.expect('[')?;
        let a = self.bound()?;
        self.expect(',')?;
        let b = self.bound()?;
        let close = self.pos;
        self.expect(']')?;
        if a > b {
            if self.options.clamp_inverted {
                return Ok((a, a));
            }
            return Err(self.error_at(close, ParseErrorKind::InvertedBounds { a, b }));
        }
        Ok((a, b))
    }

    fn bound(&mut self) -> Result<usize, ParseError> {
        if self.peek() == Some('-') {
            return Err(self.error(ParseErrorKind::NegativeBound));
        }
        let start = self.pos;
        while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse().map_err(|_| {
            self.error_at(
                start,
                ParseErrorKind::Syntax("expected integer bound".into()),
            )
        })
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let is_num = |c: char| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '-' | '+');
        if matches!(self.peek_raw(0), Some('-' | '+')) {
            self.pos += 1;
        }
        while self.pos < self.chars.len() && is_num(self.chars[self.pos]) {
            // a sign is only valid right after an exponent marker
            let c = self.chars[self.pos];
            if matches!(c, '-' | '+') && !matches!(self.chars[self.pos - 1], 'e' | 'E') {
                break;
            }
            self.pos += 1;
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                self.error_at(
                    start,
                    ParseErrorKind::Syntax(format!("invalid number `{text}`")),
                )
            })
    }
}
