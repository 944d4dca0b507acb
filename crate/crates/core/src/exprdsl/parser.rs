use std::fmt;

use thiserror::Error;

use super::{BinOp, Expr, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    DimensionMismatch,
    NonIntegerExponent,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseErrorKind::Syntax => "syntax error",
            ParseErrorKind::DimensionMismatch => "dimension mismatch",
            ParseErrorKind::NonIntegerExponent => "non-integer exponent",
        })
    }
}

/// A parse failure. `line` and `column` are one-based; `line` is 0 when the
/// error is not tied to a line (e.g. a missing section).
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} at {line}:{column}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(kind: ParseErrorKind, line: usize, column: usize, message: impl Into<String>) -> Self {
        Self {
            kind,
            line,
            column,
            message: message.into(),
        }
    }

    pub(crate) fn at_line(mut self, line: usize, column_offset: usize) -> Self {
        self.line = line;
        self.column += column_offset;
        self
    }
}

/// Variables an expression may reference: `x1..xn` and `u1..um`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarScope {
    pub n: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(c) => write!(f, "`{c}`"),
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Op(c) => write!(f, "`{c}`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        while let Some(t) = lx.next()? {
            out.push(t);
        }
        Ok(out)
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn next(&mut self) -> Result<Option<(Tok, usize)>, ParseError> {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        let start = self.pos;
        let Some(c) = self.peek() else { return Ok(None) };
        let tok = match c {
            '+' | '-' | '*' | '/' | '^' => {
                self.pos += 1;
                Tok::Op(c)
            }
            '(' => {
                self.pos += 1;
                Tok::LParen
            }
            ')' => {
                self.pos += 1;
                Tok::RParen
            }
            '0'..='9' | '.' => self.number(start)?,
            c if c.is_ascii_alphabetic() => {
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
                    self.pos += 1;
                }
                Tok::Ident(self.src[start..self.pos].to_string())
            }
            other => {
                return Err(ParseError::new(
                    ParseErrorKind::Syntax,
                    1,
                    start + 1,
                    format!("unexpected character `{other}`"),
                ))
            }
        };
        Ok(Some((tok, start)))
    }

    fn number(&mut self, start: usize) -> Result<Tok, ParseError> {
        let bytes = self.src.as_bytes();
        let digits = |lx: &mut Self| {
            let s = lx.pos;
            while lx.pos < bytes.len() && bytes[lx.pos].is_ascii_digit() {
                lx.pos += 1;
            }
            lx.pos - s
        };
        let mut count = digits(self);
        if self.pos < bytes.len() && bytes[self.pos] == b'.' {
            self.pos += 1;
            count += digits(self);
        }
        if count == 0 {
            return Err(ParseError::new(
                ParseErrorKind::Syntax,
                1,
                start + 1,
                "malformed number",
            ));
        }
        if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < bytes.len() && (bytes[self.pos] == b'+' || bytes[self.pos] == b'-') {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
            }
        }
        let text = &self.src[start..self.pos];
        text.parse::<f64>().map(Tok::Num).map_err(|_| {
            ParseError::new(
                ParseErrorKind::Syntax,
                1,
                start + 1,
                format!("malformed number `{text}`"),
            )
        })
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    idx: usize,
    end: usize,
    scope: VarScope,
}

impl Parser {
    fn col(&self) -> usize {
        self.toks.get(self.idx).map_or(self.end, |t| t.1) + 1
    }

    fn err(&self, kind: ParseErrorKind, msg: impl Into<String>) -> ParseError {
        ParseError::new(kind, 1, self.col(), msg)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|t| &t.0)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.idx).map(|t| t.0.clone());
        self.idx += 1;
        t
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op('+')) => BinOp::Add,
                Some(Tok::Op('-')) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::bin(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op('*')) => BinOp::Mul,
                Some(Tok::Op('/')) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::bin(op, lhs, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.bump();
            return Ok(Expr::neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let mut base = self.primary()?;
        while let Some(Tok::Op('^')) = self.peek() {
            self.bump();
            let col = self.col();
            let exponent = self.unary()?;
            let k = match exponent {
                Expr::Num(c) if c >= 0.0 && c.fract() == 0.0 && c <= u32::MAX as f64 => c as u32,
                other => {
                    return Err(ParseError::new(
                        ParseErrorKind::NonIntegerExponent,
                        1,
                        col,
                        format!("exponent `{other}` is not a non-negative integer literal"),
                    ))
                }
            };
            base = Expr::pow(base, k);
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let col = self.col();
        match self.bump() {
            Some(Tok::Num(c)) => Ok(Expr::Num(c)),
            Some(Tok::Ident(name)) => self.variable(&name, col),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                match self.bump() {
                    Some(Tok::RParen) => Ok(e),
                    _ => Err(ParseError::new(ParseErrorKind::Syntax, 1, col, "unclosed parenthesis")),
                }
            }
            Some(t) => Err(ParseError::new(
                ParseErrorKind::Syntax,
                1,
                col,
                format!("expected an operand, found {t}"),
            )),
            None => Err(ParseError::new(
                ParseErrorKind::Syntax,
                1,
                col,
                "unexpected end of expression",
            )),
        }
    }

    fn variable(&self, name: &str, col: usize) -> Result<Expr, ParseError> {
        let (kind, digits) = name.split_at(1);
        let index: Option<usize> = digits.parse().ok().filter(|&i| i >= 1 && !digits.starts_with('0'));
        let (var, limit) = match (kind, index) {
            ("x", Some(i)) => (Var::State(i - 1), self.scope.n),
            ("u", Some(r)) => (Var::Control(r - 1), self.scope.m),
            _ => {
                return Err(ParseError::new(
                    ParseErrorKind::Syntax,
                    1,
                    col,
                    format!("unknown identifier `{name}`"),
                ))
            }
        };
        let i = match var {
            Var::State(i) | Var::Control(i) => i,
        };
        if i >= limit {
            return Err(ParseError::new(
                ParseErrorKind::DimensionMismatch,
                1,
                col,
                format!("variable `{name}` exceeds declared dimension {limit}"),
            ));
        }
        Ok(Expr::Var(var))
    }
}

/// Parses a single expression. Column numbers in errors are one-based
/// offsets into `src`, reported on line 1.
pub fn parse_expr(src: &str, scope: VarScope) -> Result<Expr, ParseError> {
    let toks = Lexer::tokens(src)?;
    let mut p = Parser {
        toks,
        idx: 0,
        end: src.len(),
        scope,
    };
    let e = p.expr()?;
    if p.idx < p.toks.len() {
        return Err(p.err(ParseErrorKind::Syntax, "unexpected trailing input"));
    }
    Ok(e)
}
