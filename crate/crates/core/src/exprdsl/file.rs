use std::fmt;

use super::parser::{parse_expr, ParseError, ParseErrorKind, VarScope};
use super::Expr;

/// A system definition: `dims n m`, then `f1..fn`, optionally `finv1..finvn`
/// (the inverse step, with `x1..xn` naming the image point) and `ubox<r>`
/// control bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemFile {
    pub n: usize,
    pub m: usize,
    pub dynamics: Vec<Expr>,
    pub inverse: Option<Vec<Expr>>,
    /// Per-control closed bounds; `None` means unbounded.
    pub u_box: Vec<Option<(f64, f64)>>,
}

/// A system file extended with an optimal control problem: `phi = <expr>`
/// over `x1..xn` and an optional running cost `c = <expr>` over `x`, `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemFile {
    pub system: SystemFile,
    pub phi: Option<Expr>,
    pub running_cost: Option<Expr>,
}

impl SystemFile {
    pub fn new(n: usize, m: usize, dynamics: Vec<Expr>) -> Result<Self, ParseError> {
        let file = Self {
            n,
            m,
            dynamics,
            inverse: None,
            u_box: vec![None; m],
        };
        file.validate()?;
        Ok(file)
    }

    pub fn with_inverse(mut self, inverse: Vec<Expr>) -> Result<Self, ParseError> {
        self.inverse = Some(inverse);
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), ParseError> {
        let mismatch = |msg: String| Err(ParseError::new(ParseErrorKind::DimensionMismatch, 0, 0, msg));
        if self.dynamics.len() != self.n {
            return mismatch(format!(
                "expected {} dynamics components, found {}",
                self.n,
                self.dynamics.len()
            ));
        }
        if let Some(inv) = &self.inverse {
            if inv.len() != self.n {
                return mismatch(format!("expected {} inverse components, found {}", self.n, inv.len()));
            }
        }
        if self.u_box.len() != self.m {
            return mismatch(format!(
                "expected {} control bounds, found {}",
                self.m,
                self.u_box.len()
            ));
        }
        for e in self.dynamics.iter().chain(self.inverse.iter().flatten()) {
            let (xs, us) = e.var_extent();
            if xs > self.n || us > self.m {
                return mismatch(format!(
                    "expression `{e}` references variables outside dims {} {}",
                    self.n, self.m
                ));
            }
        }
        Ok(())
    }

    /// Parses a plain system file; `phi`/`c` sections are rejected.
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let problem = ProblemFile::parse(text)?;
        if problem.phi.is_some() || problem.running_cost.is_some() {
            return Err(ParseError::new(
                ParseErrorKind::Syntax,
                0,
                0,
                "cost sections are only allowed in problem files",
            ));
        }
        Ok(problem.system)
    }
}

fn syntax(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::new(ParseErrorKind::Syntax, line, 1, msg)
}

fn parse_index(name: &str, prefix: &str) -> Option<usize> {
    let digits = name.strip_prefix(prefix)?;
    if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        });

        let (dims_line, header) = lines.next().ok_or_else(|| syntax(0, "empty system file"))?;
        let words: Vec<&str> = header.split_whitespace().collect();
        let (n, m) = match words.as_slice() {
            ["dims", n, m] => match (n.parse::<usize>(), m.parse::<usize>()) {
                (Ok(n), Ok(m)) if n > 0 && m > 0 => (n, m),
                _ => return Err(syntax(dims_line, "`dims` needs two positive integers")),
            },
            _ => return Err(syntax(dims_line, "first line must be `dims <n> <m>`")),
        };
        let full = VarScope { n, m };

        let mut dynamics: Vec<Option<Expr>> = vec![None; n];
        let mut inverse: Vec<Option<Expr>> = vec![None; n];
        let mut u_box = vec![None; m];
        let mut phi = None;
        let mut running_cost = None;

        for (no, raw) in lines {
            let Some(eq) = raw.find('=') else {
                return Err(syntax(no, "expected `<name> = <value>`"));
            };
            let name = raw[..eq].trim();
            let rhs = &raw[eq + 1..];
            let offset = eq + 1;
            let expr = |scope: VarScope| parse_expr(rhs, scope).map_err(|e| e.at_line(no, offset));
            let duplicate = || syntax(no, format!("`{name}` defined twice"));

            if let Some(i) = parse_index(name, "finv") {
                let slot = inverse.get_mut(i - 1).ok_or_else(|| {
                    ParseError::new(
                        ParseErrorKind::DimensionMismatch,
                        no,
                        1,
                        format!("`{name}` exceeds n = {n}"),
                    )
                })?;
                if slot.is_some() {
                    return Err(duplicate());
                }
                *slot = Some(expr(full)?);
            } else if let Some(i) = parse_index(name, "f") {
                let slot = dynamics.get_mut(i - 1).ok_or_else(|| {
                    ParseError::new(
                        ParseErrorKind::DimensionMismatch,
                        no,
                        1,
                        format!("`{name}` exceeds n = {n}"),
                    )
                })?;
                if slot.is_some() {
                    return Err(duplicate());
                }
                *slot = Some(expr(full)?);
            } else if let Some(r) = parse_index(name, "ubox") {
                let slot = u_box.get_mut(r - 1).ok_or_else(|| {
                    ParseError::new(
                        ParseErrorKind::DimensionMismatch,
                        no,
                        1,
                        format!("`{name}` exceeds m = {m}"),
                    )
                })?;
                let bounds: Vec<f64> = rhs
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| syntax(no, "bounds must be two numbers"))?;
                match bounds.as_slice() {
                    [lo, hi] if lo < hi => *slot = Some((*lo, *hi)),
                    _ => return Err(syntax(no, "bounds must be `<lo> <hi>` with lo < hi")),
                }
            } else if name == "phi" {
                if phi.is_some() {
                    return Err(duplicate());
                }
                phi = Some(expr(VarScope { n, m: 0 })?);
            } else if name == "c" {
                if running_cost.is_some() {
                    return Err(duplicate());
                }
                running_cost = Some(expr(full)?);
            } else {
                return Err(syntax(no, format!("unknown section `{name}`")));
            }
        }

        let missing = |what: &str, i: usize| {
            ParseError::new(
                ParseErrorKind::DimensionMismatch,
                0,
                0,
                format!("missing `{what}{}`", i + 1),
            )
        };
        let dynamics = dynamics
            .into_iter()
            .enumerate()
            .map(|(i, e)| e.ok_or_else(|| missing("f", i)))
            .collect::<Result<Vec<_>, _>>()?;
        let inverse = if inverse.iter().all(Option::is_none) {
            None
        } else {
            Some(
                inverse
                    .into_iter()
                    .enumerate()
                    .map(|(i, e)| e.ok_or_else(|| missing("finv", i)))
                    .collect::<Result<Vec<_>, _>>()?,
            )
        };

        Ok(Self {
            system: SystemFile {
                n,
                m,
                dynamics,
                inverse,
                u_box,
            },
            phi,
            running_cost,
        })
    }
}

impl fmt::Display for SystemFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dims {} {}", self.n, self.m)?;
        for (i, e) in self.dynamics.iter().enumerate() {
            writeln!(f, "f{} = {e}", i + 1)?;
        }
        for (i, e) in self.inverse.iter().flatten().enumerate() {
            writeln!(f, "finv{} = {e}", i + 1)?;
        }
        for (r, b) in self.u_box.iter().enumerate() {
            if let Some((lo, hi)) = b {
                writeln!(f, "ubox{} = {lo} {hi}", r + 1)?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for ProblemFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.system)?;
        if let Some(phi) = &self.phi {
            writeln!(f, "phi = {phi}")?;
        }
        if let Some(c) = &self.running_cost {
            writeln!(f, "c = {c}")?;
        }
        Ok(())
    }
}
