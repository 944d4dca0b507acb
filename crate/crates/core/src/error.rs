use thiserror::Error;

use crate::analysis::Inertia;
use crate::diffnum::DiffError;
use crate::exprdsl::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite result in {0}")]
    NonFiniteResult(&'static str),
    #[error("Newton inversion did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64 },
    #[error("singular Jacobian (condition number {condition:e})")]
    SingularJacobian { condition: f64 },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("covector is not in the annihilator of L (relative residual {residual:e})")]
    LambdaNotInAnnihilator { residual: f64 },
    #[error("condition (III) fails: restricted form has inertia {inertia}")]
    ConditionIIIFails { inertia: Inertia },
    #[error("direction is not in the kernel of dF (first-order term {first_order:e})")]
    KernelViolation { first_order: f64 },
    #[error("control u_{step} component {component} is not strictly inside the control box")]
    ControlNotInterior { step: usize, component: usize },
    #[error("control sequence is empty")]
    EmptyControlSequence,
    #[error("unknown built-in system `{0}`")]
    UnknownSystem(String),
    #[error("problem has no final cost `phi`")]
    MissingFinalCost,
}
