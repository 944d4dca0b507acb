//! Shared fixtures for the benchmarks.

use dtctrl_core::system::builtin::{example_r3, random_polynomial};
use dtctrl_core::{ControlSequence, DiscreteSystem};
use nalgebra::{dvector, DVector};

pub struct Fixture {
    pub name: &'static str,
    pub sys: DiscreteSystem,
    pub x0: DVector<f64>,
    pub ubar: ControlSequence,
}

/// Example system at a point where the first variations span a plane.
pub fn rank_drop() -> Fixture {
    Fixture {
        name: "rank-drop",
        sys: example_r3(),
        x0: dvector![-0.25, 0.0, -0.5],
        ubar: ControlSequence::scalar(&[1.0, 1.0, 1.0, 1.0]),
    }
}

/// Example system under alternating controls, where the verdict is negative.
pub fn alternating() -> Fixture {
    Fixture {
        name: "alternating",
        sys: example_r3(),
        x0: dvector![1.0, 0.0, 0.0],
        ubar: ControlSequence::scalar(&[0.0, 1.0, 0.0, 1.0]),
    }
}

/// Random cubic system with `n` states, two controls and `steps` steps.
pub fn random(n: usize, steps: usize) -> Fixture {
    let flat: Vec<f64> = (0..2 * steps).map(|i| 0.3 + 0.1 * (i % 5) as f64).collect();
    Fixture {
        name: "random",
        sys: random_polynomial(n as u64, n, 2),
        x0: DVector::from_fn(n, |i, _| 0.1 * i as f64 - 0.2),
        ubar: ControlSequence::from_flat(2, &flat).expect("flat controls match m"),
    }
}
