//! Second-order controllability and optimality analysis for invertible
//! discrete-time control systems `x(t) = f(x(t-1), u(t))`.

pub mod analysis;
pub mod diffnum;
pub mod error;
pub mod exprdsl;
pub mod linalg;
pub mod optimal;
pub mod oracle;
pub mod system;
pub mod variation;

pub use analysis::{ControllabilityVerdict, Inertia, SpanKernel, VerdictOptions, VerdictStatus};
pub use diffnum::{HyperDual, Scalar};
pub use error::{Error, Result};
pub use exprdsl::{Expr, ProblemFile, SystemFile};
pub use system::{ControlSequence, DiscreteSystem, Trajectory};
pub use variation::{HessianForm, VariationData};
