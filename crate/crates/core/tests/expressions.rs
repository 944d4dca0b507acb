use dtctrl_core::diffnum::{HyperDual, Slot};
use dtctrl_core::exprdsl::{parse_expr, BinOp, VarScope};
use dtctrl_core::Expr;
use proptest::prelude::*;

const SCOPE: VarScope = VarScope { n: 2, m: 1 };
const FD_STEP: f64 = 1e-3;

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0.1f64..3.0).prop_map(|c| Expr::num((c * 100.0).round() / 100.0)),
        (0usize..2).prop_map(Expr::state),
        Just(Expr::control(0)),
    ]
}

/// Expressions without poles: divisors are always `1 + e²`.
fn smooth_expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::bin(BinOp::Add, a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::bin(BinOp::Sub, a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::bin(BinOp::Mul, a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::bin(
                BinOp::Div,
                a,
                Expr::bin(BinOp::Add, Expr::num(1.0), Expr::pow(b, 2))
            )),
            (inner.clone(), 0u32..4).prop_map(|(a, k)| Expr::pow(a, k)),
            inner.prop_map(Expr::neg),
        ]
    })
}

/// Any expression the grammar can express, including raw division.
fn any_expr() -> impl Strategy<Value = Expr> {
    let ops = prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul), Just(BinOp::Div)];
    let leaf = prop_oneof![
        (0.0f64..1e6).prop_map(Expr::num),
        (0usize..2).prop_map(Expr::state),
        Just(Expr::control(0)),
    ];
    leaf.prop_recursive(5, 32, 2, move |inner| {
        prop_oneof![
            (ops.clone(), inner.clone(), inner.clone()).prop_map(|(op, a, b)| Expr::bin(op, a, b)),
            (inner.clone(), 0u32..5).prop_map(|(a, k)| Expr::pow(a, k)),
            inner.prop_map(Expr::neg),
        ]
    })
}

/// Variables 0 and 1 are states, variable 2 is the control.
fn value(e: &Expr, q: [f64; 3]) -> f64 {
    e.eval(&q[..2], &q[2..]).unwrap()
}

fn seeded(point: [f64; 3], p: usize, q: usize) -> [HyperDual; 3] {
    let mut out = point.map(HyperDual::lift_const);
    if p == q {
        out[p] = HyperDual::seed(point[p], Slot::Both);
    } else {
        out[p] = HyperDual::seed(point[p], Slot::First);
        out[q] = HyperDual::seed(point[q], Slot::Second);
    }
    out
}

fn richardson(d: impl Fn(f64) -> f64) -> f64 {
    (4.0 * d(FD_STEP / 2.0) - d(FD_STEP)) / 3.0
}

fn shifted(e: &Expr, point: [f64; 3], p: usize, dp: f64, q: usize, dq: f64) -> f64 {
    let mut z = point;
    z[p] += dp;
    z[q] += dq;
    value(e, z)
}

fn fd_first(e: &Expr, point: [f64; 3], p: usize) -> f64 {
    richardson(|h| (shifted(e, point, p, h, p, 0.0) - shifted(e, point, p, -h, p, 0.0)) / (2.0 * h))
}

fn fd_mixed(e: &Expr, point: [f64; 3], p: usize, q: usize) -> f64 {
    let shifted = |dp: f64, dq: f64| shifted(e, point, p, dp, q, dq);
    if p == q {
        richardson(|h| (shifted(h, 0.0) - 2.0 * value(e, point) + shifted(-h, 0.0)) / (h * h))
    } else {
        richardson(|h| (shifted(h, h) - shifted(h, -h) - shifted(-h, h) + shifted(-h, -h)) / (4.0 * h * h))
    }
}

fn close(got: f64, want: f64) -> bool {
    (got - want).abs() <= 1e-6 * want.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn hyper_dual_derivatives_match_finite_differences(
        e in smooth_expr(),
        point in prop::array::uniform3(-1.0f64..1.0),
        p in 0usize..3,
        q in 0usize..3,
    ) {
        let hd = e.eval(&seeded(point, p, q)[..2], &seeded(point, p, q)[2..]).unwrap();
        prop_assert_eq!(hd.value, value(&e, point));
        let d1 = fd_first(&e, point, p);
        let d2 = fd_first(&e, point, q);
        let d12 = fd_mixed(&e, point, p, q);
        prop_assert!(close(hd.d1, d1), "d1 of {}: {} vs {}", e, hd.d1, d1);
        prop_assert!(close(hd.d2, d2), "d2 of {}: {} vs {}", e, hd.d2, d2);
        prop_assert!(close(hd.d12, d12), "d12 of {}: {} vs {}", e, hd.d12, d12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn printed_expressions_parse_back(e in any_expr()) {
        let text = e.to_string();
        let back = parse_expr(&text, SCOPE).unwrap();
        prop_assert_eq!(&back, &e, "{}", text);
        prop_assert_eq!(back.to_string(), text);
    }
}
