#![allow(dead_code)]

use dtctrl_core::system::builtin::example_r3;
use dtctrl_core::{ControlSequence, DiscreteSystem};
use nalgebra::{dvector, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn example() -> DiscreteSystem {
    example_r3()
}

/// Nonzero control component with magnitude in [0.3, 2].
pub fn nonzero(rng: &mut ChaCha8Rng) -> f64 {
    let mag = rng.random_range(0.3..2.0);
    if rng.random_bool(0.5) {
        mag
    } else {
        -mag
    }
}

pub fn random_controls(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| nonzero(rng)).collect()
}

/// Closed-form first variations of the example system at `(x, y, z)`.
pub fn y_closed(p: &[f64; 3], u: &[f64; 4]) -> Vec<DVector<f64>> {
    let [x, _, z] = *p;
    let [u1, u2, u3, u4] = *u;
    vec![
        dvector![0.0, x, 1.0] * u1,
        dvector![1.0, 2.0 * x - 0.5 * u1 * u1, 1.0] * u2,
        dvector![0.0, 3.0 * x - 2.0 * z + 0.5 * u2 * u2 - u1 * u1, 1.0] * u3,
        dvector![1.0, 4.0 * x - 0.5 * u1 * u1 + u2 * u2 - 0.5 * u3 * u3, 1.0] * u4,
    ]
}

/// Closed-form second variations `Z^{ij}` (zero-based indices).
pub fn z_closed(p: &[f64; 3], u: &[f64; 4], i: usize, j: usize) -> DVector<f64> {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    let [x, _, z] = *p;
    let [u1, u2, u3, _] = *u;
    let diag = |k: usize| match k {
        0 => dvector![0.0, x, 1.0],
        1 => dvector![1.0, 2.0 * x - 0.5 * u1 * u1, 1.0],
        2 => dvector![0.0, 3.0 * x - 2.0 * z - u1 * u1 + 0.5 * u2 * u2, 1.0],
        _ => dvector![1.0, 4.0 * x - 0.5 * u1 * u1 + u2 * u2 - 0.5 * u3 * u3, 1.0],
    };
    if i == j {
        return diag(i);
    }
    let c = match (i, j) {
        (0, 1) => -1.0,
        (0, 2) => -2.0,
        (0, 3) => -1.0,
        (1, 2) => 1.0,
        (1, 3) => 2.0,
        _ => -1.0,
    };
    dvector![0.0, 0.5 * c * u[i] * u[j], 0.0]
}

/// A point where the first variations span only a plane (all controls
/// nonzero).
pub fn rank_drop_point(rng: &mut ChaCha8Rng) -> ([f64; 3], [f64; 4]) {
    let u = [nonzero(rng), nonzero(rng), nonzero(rng), nonzero(rng)];
    let x = 0.25 * u[2] * u[2] - 0.5 * u[1] * u[1];
    let z = 0.25 * u[2] * u[2] - 0.25 * u[1] * u[1] - 0.5 * u[0] * u[0];
    ([x, rng.random_range(-2.0..2.0), z], u)
}

pub fn as_inputs(p: &[f64; 3], u: &[f64]) -> (DVector<f64>, ControlSequence) {
    (DVector::from_column_slice(p), ControlSequence::scalar(u))
}
