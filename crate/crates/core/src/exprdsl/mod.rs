//! A small arithmetic language for writing dynamics componentwise.
//!
//! Expressions use `+ - * /`, integer powers `^k` with a literal `k >= 0`,
//! parentheses, decimal literals, and the variables `x1..xn`, `u1..um`.
//! Keeping the operator set polynomial-rational means every parsed map is
//! smooth wherever it is defined.

mod file;
mod parser;

use std::fmt;

pub use file::{ProblemFile, SystemFile};
pub use parser::{parse_expr, ParseError, ParseErrorKind, VarScope};

use crate::diffnum::{DiffError, Scalar};

/// A variable reference, stored zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    State(usize),
    Control(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::State(i) => write!(f, "x{}", i + 1),
            Var::Control(r) => write!(f, "u{}", r + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
}

const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

impl Expr {
    pub fn num(c: f64) -> Self {
        Expr::Num(c)
    }

    pub fn state(i: usize) -> Self {
        Expr::Var(Var::State(i))
    }

    pub fn control(r: usize) -> Self {
        Expr::Var(Var::Control(r))
    }

    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Bin(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn pow(base: Expr, exponent: u32) -> Self {
        Expr::Pow(Box::new(base), exponent)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(e: Expr) -> Self {
        Expr::Neg(Box::new(e))
    }

    /// Evaluates under any scalar type; the same operation order is used for
    /// plain floats and hyper-duals, so their values agree bit for bit.
    ///
    /// Panics if a variable index is outside `x` or `u`; parsed expressions
    /// are range-checked against their scope.
    pub fn eval<S: Scalar>(&self, x: &[S], u: &[S]) -> Result<S, DiffError> {
        Ok(match self {
            Expr::Num(c) => S::constant(*c),
            Expr::Var(Var::State(i)) => x[*i],
            Expr::Var(Var::Control(r)) => u[*r],
            Expr::Neg(e) => -e.eval(x, u)?,
            Expr::Bin(op, l, r) => {
                let a = l.eval(x, u)?;
                let b = r.eval(x, u)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a.checked_div(b)?,
                }
            }
            Expr::Pow(base, k) => base.eval(x, u)?.powi(*k),
        })
    }

    /// Largest state and control index referenced (one-based counts).
    pub fn var_extent(&self) -> (usize, usize) {
        match self {
            Expr::Num(_) => (0, 0),
            Expr::Var(Var::State(i)) => (i + 1, 0),
            Expr::Var(Var::Control(r)) => (0, r + 1),
            Expr::Neg(e) | Expr::Pow(e, _) => e.var_extent(),
            Expr::Bin(_, l, r) => {
                let (a, b) = l.var_extent();
                let (c, d) = r.var_extent();
                (a.max(c), b.max(d))
            }
        }
    }

    /// Replaces every variable by the expression `map` returns for it.
    pub fn substitute(&self, map: &impl Fn(Var) -> Expr) -> Expr {
        match self {
            Expr::Num(c) => Expr::Num(*c),
            Expr::Var(v) => map(*v),
            Expr::Neg(e) => Expr::neg(e.substitute(map)),
            Expr::Bin(op, l, r) => Expr::bin(*op, l.substitute(map), r.substitute(map)),
            Expr::Pow(b, k) => Expr::pow(b.substitute(map), *k),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Num(c) if c.is_sign_negative() => PREC_NEG,
            Expr::Num(_) | Expr::Var(_) => PREC_ATOM,
            Expr::Neg(_) => PREC_NEG,
            Expr::Bin(op, _, _) => op.precedence(),
            Expr::Pow(_, _) => PREC_POW,
        }
    }

    fn write_operand(&self, f: &mut fmt::Formatter<'_>, parens: bool) -> fmt::Result {
        if parens {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // negative literals print as negation so the text parses back
            Expr::Num(c) if c.is_sign_negative() => {
                write!(f, "-")?;
                Expr::Num(-c).write_operand(f, false)
            }
            Expr::Num(c) => write!(f, "{c}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(e) => {
                write!(f, "-")?;
                e.write_operand(f, e.precedence() < PREC_NEG)
            }
            Expr::Bin(op, l, r) => {
                let p = op.precedence();
                l.write_operand(f, l.precedence() < p)?;
                write!(f, " {} ", op.symbol())?;
                r.write_operand(f, r.precedence() <= p)
            }
            Expr::Pow(b, k) => {
                b.write_operand(f, b.precedence() <= PREC_POW)?;
                write!(f, "^{k}")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnum::{HyperDual, Slot};

    fn scope(n: usize, m: usize) -> VarScope {
        VarScope { n, m }
    }

    #[test]
    fn eval_example_component() {
        let e = parse_expr("-x1 + x3 + u1^2/2", scope(3, 1)).unwrap();
        let x: Vec<HyperDual> = [1.0, 2.0, 3.0].iter().map(|&c| HyperDual::lift_const(c)).collect();
        let u = [HyperDual::lift_const(2.0)];
        assert_eq!(e.eval(&x, &u).unwrap().value, 4.0);
    }

    #[test]
    fn eval_at_origin() {
        let e = parse_expr("x1*x3 - x2", scope(3, 1)).unwrap();
        assert_eq!(e.eval(&[0.0; 3], &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn eval_control_derivative() {
        let e = parse_expr("u1^2/2", scope(0, 1)).unwrap();
        let v = e.eval::<HyperDual>(&[], &[HyperDual::seed(2.0, Slot::First)]).unwrap();
        assert_eq!(v.value, 2.0);
        assert_eq!(v.d1, 2.0);
    }

    #[test]
    fn division_by_zero_propagates() {
        let e = parse_expr("1 / (x1 - x1)", scope(1, 0)).unwrap();
        assert_eq!(e.eval(&[3.0], &[]), Err(DiffError::DivisionByZero));
    }

    #[test]
    fn printing_uses_minimal_parentheses() {
        let cases = [
            ("-x1 + x3 + u1^2/2", "-x1 + x3 + u1^2 / 2"),
            ("x1 - (x2 - x3)", "x1 - (x2 - x3)"),
            ("(x1 - x2) - x3", "x1 - x2 - x3"),
            ("(-x1)^2", "(-x1)^2"),
            ("-x1^2", "-x1^2"),
            ("x1 / (x2 * x3)", "x1 / (x2 * x3)"),
            ("x1 * -x2", "x1 * -x2"),
            ("(x1^2)^3", "(x1^2)^3"),
        ];
        for (src, want) in cases {
            let e = parse_expr(src, scope(3, 1)).unwrap();
            assert_eq!(e.to_string(), want, "{src}");
            assert_eq!(parse_expr(want, scope(3, 1)).unwrap(), e);
        }
    }

    #[test]
    fn negative_literal_prints_as_negation() {
        let e = Expr::bin(BinOp::Mul, Expr::num(-3.0), Expr::state(0));
        assert_eq!(e.to_string(), "-3 * x1");
        let back = parse_expr(&e.to_string(), scope(1, 0)).unwrap();
        assert_eq!(back.to_string(), e.to_string());
    }

    #[test]
    fn substitution_shifts_variables() {
        let e = parse_expr("x1 * u1 + x2", scope(2, 1)).unwrap();
        let shifted = e.substitute(&|v| match v {
            Var::State(i) => Expr::state(i + 1),
            c => Expr::Var(c),
        });
        assert_eq!(shifted.to_string(), "x2 * u1 + x3");
        assert_eq!(shifted.var_extent(), (3, 1));
    }
}
