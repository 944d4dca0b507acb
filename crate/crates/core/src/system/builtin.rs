//! Built-in systems and a generator of random invertible polynomial systems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DiscreteSystem;
use crate::error::{Error, Result};
use crate::exprdsl::{BinOp, Expr, SystemFile};

/// The three-state, single-input example with a rank drop along a
/// codimension-two family of initial points.
pub const EXAMPLE_R3: &str = "\
dims 3 1
f1 = -x1 + x3 + u1^2/2
f2 = x1*x3 - x2
f3 = x3 + u1^2/2
finv1 = -x1 + x3
finv2 = (-x1 + x3)*(x3 - u1^2/2) - x2
finv3 = x3 - u1^2/2
";

/// A controllable linear chain `x⁺ = A x + B u` on ℝ³.
pub const LINEAR_GENERIC: &str = "\
dims 3 1
f1 = x1 + x2
f2 = x2 + x3
f3 = x3 + u1
finv1 = x1 - (x2 - (x3 - u1))
finv2 = x2 - (x3 - u1)
finv3 = x3 - u1
";

/// `x⁺ = 2x + u` on ℝ.
pub const LINEAR_SCALAR: &str = "\
dims 1 1
f1 = 2*x1 + u1
finv1 = (x1 - u1)/2
";

pub const REGISTRY: &[(&str, &str, &str)] = &[
    (
        "example-r3",
        EXAMPLE_R3,
        "3-state scalar-input polynomial system whose first variations drop rank on special controls",
    ),
    ("linear-generic", LINEAR_GENERIC, "controllable linear chain on R^3"),
    ("linear-scalar", LINEAR_SCALAR, "x+ = 2x + u on R"),
];

pub fn by_name(name: &str) -> Result<DiscreteSystem> {
    REGISTRY
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|(n, text, _)| DiscreteSystem::parse(*n, text))
        .unwrap_or_else(|| Err(Error::UnknownSystem(name.to_string())))
}

pub fn example_r3() -> DiscreteSystem {
    by_name("example-r3").expect("built-in parses")
}

pub fn linear_generic() -> DiscreteSystem {
    by_name("linear-generic").expect("built-in parses")
}

fn coefficient(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let c: f64 = rng.random_range(-scale..scale);
    (c * 100.0).round() / 100.0
}

fn sum(terms: Vec<Expr>) -> Expr {
    terms
        .into_iter()
        .reduce(|a, b| Expr::bin(BinOp::Add, a, b))
        .unwrap_or(Expr::num(0.0))
}

fn scaled(c: f64, e: Expr) -> Expr {
    Expr::bin(BinOp::Mul, Expr::num(c), e)
}

/// A random invertible polynomial system on ℝⁿ with m inputs.
///
/// Built as `f = M g` where `g_i = a_i x_i + p_i(x_1..x_{i-1}, u)` is
/// triangular with `|a_i| ≥ 0.5` and `M` is unit upper triangular, so every
/// `f_u` is a polynomial diffeomorphism of ℝⁿ. The inverse is left to
/// Newton iteration.
pub fn random_polynomial(seed: u64, n: usize, m: usize) -> DiscreteSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let control = |rng: &mut ChaCha8Rng| Expr::control(rng.random_range(0..m));
    let mut g = Vec::with_capacity(n);
    for i in 0..n {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let a = sign * ((rng.random_range(0.5..1.5f64) * 100.0).round() / 100.0);
        let mut terms = vec![scaled(a, Expr::state(i))];
        // every component depends on some control, linearly and quadratically
        terms.push(scaled(coefficient(&mut rng, 1.0), control(&mut rng)));
        terms.push(scaled(coefficient(&mut rng, 0.5), Expr::pow(control(&mut rng), 2)));
        for _ in 0..2 {
            let factor = if i > 0 && rng.random_bool(0.7) {
                Expr::state(rng.random_range(0..i))
            } else {
                control(&mut rng)
            };
            let other = if i > 0 && rng.random_bool(0.5) {
                Expr::state(rng.random_range(0..i))
            } else {
                control(&mut rng)
            };
            terms.push(scaled(coefficient(&mut rng, 0.5), Expr::bin(BinOp::Mul, factor, other)));
        }
        g.push(sum(terms));
    }
    let mut dynamics = Vec::with_capacity(n);
    for i in 0..n {
        let mut terms = vec![g[i].clone()];
        for gj in g.iter().skip(i + 1) {
            if rng.random_bool(0.5) {
                terms.push(scaled(coefficient(&mut rng, 0.5), gj.clone()));
            }
        }
        dynamics.push(sum(terms));
    }
    let file = SystemFile::new(n, m, dynamics).expect("generated expressions are in scope");
    DiscreteSystem::new(format!("random-poly-{seed}-{n}x{m}"), file)
}
