//! Executable model of an invertible discrete-time system
//! `x_i = f(x_{i-1}, u_i)`: forward and inverse steps, exact Jacobians and
//! second derivatives by hyper-dual seeding, and trajectory rollout.

pub mod builtin;

use nalgebra::{DMatrix, DVector};

use crate::diffnum::{HyperDual, Scalar, Slot};
use crate::error::{Error, Result};
use crate::exprdsl::{ProblemFile, SystemFile};
use crate::linalg::condition_number;

/// Jacobians with a condition number above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;
pub const NEWTON_MAX_ITERATIONS: usize = 50;
pub const NEWTON_TOLERANCE: f64 = 1e-10;
const MIN_NEWTON_STEP: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InverseMode {
    Analytic,
    Newton,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSystem {
    name: String,
    file: SystemFile,
    inverse_mode: InverseMode,
}

/// Control sequence `(u_1, ..., u_N)`, each `u_i ∈ ℝ^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    m: usize,
    steps: Vec<DVector<f64>>,
}

impl ControlSequence {
    pub fn new(steps: Vec<DVector<f64>>) -> Result<Self> {
        let m = steps.first().map_or(0, |u| u.len());
        if steps.iter().any(|u| u.len() != m) {
            return Err(Error::DimensionMismatch("controls have differing lengths".into()));
        }
        Ok(Self { m, steps })
    }

    /// Splits a flat vector `(u_1^1..u_1^m, u_2^1, ...)` into steps of size `m`.
    pub fn from_flat(m: usize, values: &[f64]) -> Result<Self> {
        if m == 0 || !values.len().is_multiple_of(m) {
            return Err(Error::DimensionMismatch(format!(
                "{} control values do not split into steps of size {m}",
                values.len()
            )));
        }
        Ok(Self {
            m,
            steps: values.chunks(m).map(DVector::from_column_slice).collect(),
        })
    }

    pub fn scalar(values: &[f64]) -> Self {
        Self::from_flat(1, values).expect("m = 1 always divides")
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn steps(&self) -> &[DVector<f64>] {
        &self.steps
    }

    /// One-based step access, matching `u_i`.
    pub fn step(&self, i: usize) -> &DVector<f64> {
        &self.steps[i - 1]
    }

    pub fn flatten(&self) -> DVector<f64> {
        DVector::from_iterator(self.m * self.len(), self.steps.iter().flat_map(|u| u.iter().copied()))
    }

    /// The initial part `(u_1, ..., u_t)`.
    pub fn prefix(&self, t: usize) -> Self {
        Self {
            m: self.m,
            steps: self.steps[..t].to_vec(),
        }
    }

    /// The shifted sequence `(u_2, ..., u_N)`.
    pub fn shifted(&self) -> Self {
        Self {
            m: self.m,
            steps: self.steps[1..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory holds at least x0")
    }
}

/// Value, Jacobians and second derivatives of `f` at one `(x, u)`.
///
/// Second derivatives are stored per output component as an
/// `(n+m) × (n+m)` symmetric matrix over the stacked variable `(x, u)`.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub value: DVector<f64>,
    pub jac_x: DMatrix<f64>,
    pub jac_u: DMatrix<f64>,
    hessians: Vec<DMatrix<f64>>,
    n: usize,
}

impl LocalModel {
    /// `∂²f_a / ∂x_k ∂x_l`
    pub fn f_xx(&self, a: usize, k: usize, l: usize) -> f64 {
        self.hessians[a][(k, l)]
    }

    /// `∂²f_a / ∂x_k ∂u_r`
    pub fn f_xu(&self, a: usize, k: usize, r: usize) -> f64 {
        self.hessians[a][(k, self.n + r)]
    }

    /// `∂²f_a / ∂u_r ∂u_s`
    pub fn f_uu(&self, a: usize, r: usize, s: usize) -> f64 {
        self.hessians[a][(self.n + r, self.n + s)]
    }

    pub fn hessian(&self, a: usize) -> &DMatrix<f64> {
        &self.hessians[a]
    }

    /// `(∂J/∂x_k) v`, the derivative of `J(x) v` along `x_k` for fixed `v`.
    pub fn dj_dx(&self, k: usize, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n, |a, _| (0..self.n).map(|l| self.f_xx(a, l, k) * v[l]).sum())
    }

    /// `(∂J/∂u_r) v`.
    pub fn dj_du(&self, r: usize, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n, |a, _| (0..self.n).map(|l| self.f_xu(a, l, r) * v[l]).sum())
    }
}

fn lift(v: &[f64]) -> Vec<HyperDual> {
    v.iter().map(|&c| HyperDual::lift_const(c)).collect()
}

fn check_finite(v: &DVector<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteResult(what))
    }
}

impl DiscreteSystem {
    /// Wraps a parsed system; the inverse mode is analytic when the file
    /// provides `finv` components.
    pub fn new(name: impl Into<String>, file: SystemFile) -> Self {
        let inverse_mode = if file.inverse.is_some() {
            InverseMode::Analytic
        } else {
            InverseMode::Newton
        };
        Self {
            name: name.into(),
            file,
            inverse_mode,
        }
    }

    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self> {
        Ok(Self::new(name, SystemFile::parse(text)?))
    }

    pub fn from_problem(name: impl Into<String>, problem: &ProblemFile) -> Self {
        Self::new(name, problem.system.clone())
    }

    pub fn with_inverse_mode(mut self, mode: InverseMode) -> Result<Self> {
        if mode == InverseMode::Analytic && self.file.inverse.is_none() {
            return Err(Error::DegenerateInput(
                "analytic inverse requested but no finv given".into(),
            ));
        }
        self.inverse_mode = mode;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.file.n
    }

    pub fn m(&self) -> usize {
        self.file.m
    }

    pub fn file(&self) -> &SystemFile {
        &self.file
    }

    pub fn inverse_mode(&self) -> InverseMode {
        self.inverse_mode
    }

    pub fn u_box(&self) -> &[Option<(f64, f64)>] {
        &self.file.u_box
    }

    fn check_dims(&self, x: usize, u: usize) -> Result<()> {
        if x != self.n() || u != self.m() {
            return Err(Error::DimensionMismatch(format!(
                "expected x in R^{} and u in R^{}, got {x} and {u}",
                self.n(),
                self.m()
            )));
        }
        Ok(())
    }

    /// Evaluates `f` over any scalar type.
    pub fn eval<S: Scalar>(&self, x: &[S], u: &[S]) -> Result<Vec<S>> {
        self.check_dims(x.len(), u.len())?;
        self.file
            .dynamics
            .iter()
            .map(|e| e.eval(x, u).map_err(Error::from))
            .collect()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if !x.iter().chain(u.iter()).all(|c| c.is_finite()) {
            return Err(Error::NonFiniteResult("step input"));
        }
        let y = DVector::from_vec(self.eval::<f64>(x.as_slice(), u.as_slice())?);
        check_finite(&y, "step")?;
        Ok(y)
    }

    /// `∂f/∂x` by seeding one state coordinate at a time.
    pub fn jac_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dims(x.len(), u.len())?;
        let n = self.n();
        let hu = lift(u.as_slice());
        let mut jac = DMatrix::zeros(n, n);
        for k in 0..n {
            let mut hx = lift(x.as_slice());
            hx[k] = HyperDual::seed(x[k], Slot::First);
            for (a, v) in self.eval(&hx, &hu)?.into_iter().enumerate() {
                jac[(a, k)] = v.d1;
            }
        }
        if !jac.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFiniteResult("jac_x"));
        }
        Ok(jac)
    }

    /// `∂f/∂u` by seeding one control coordinate at a time.
    pub fn jac_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dims(x.len(), u.len())?;
        let (n, m) = (self.n(), self.m());
        let hx = lift(x.as_slice());
        let mut jac = DMatrix::zeros(n, m);
        for r in 0..m {
            let mut hu = lift(u.as_slice());
            hu[r] = HyperDual::seed(u[r], Slot::First);
            for (a, v) in self.eval(&hx, &hu)?.into_iter().enumerate() {
                jac[(a, r)] = v.d1;
            }
        }
        if !jac.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFiniteResult("jac_u"));
        }
        Ok(jac)
    }

    /// Full first- and second-order data of `f` at `(x, u)`, one hyper-dual
    /// pass per unordered pair of variables.
    pub fn local_model(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<LocalModel> {
        self.check_dims(x.len(), u.len())?;
        let (n, m) = (self.n(), self.m());
        let dim = n + m;
        let point: Vec<f64> = x.iter().chain(u.iter()).copied().collect();
        let mut value = DVector::zeros(n);
        let mut first = DMatrix::zeros(n, dim);
        let mut hessians = vec![DMatrix::zeros(dim, dim); n];
        for p in 0..dim {
            for q in p..dim {
                let mut vars = lift(&point);
                if p == q {
                    vars[p] = HyperDual::seed(point[p], Slot::Both);
                } else {
                    vars[p] = HyperDual::seed(point[p], Slot::First);
                    vars[q] = HyperDual::seed(point[q], Slot::Second);
                }
                let out = self.eval(&vars[..n], &vars[n..])?;
                for (a, v) in out.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::NonFiniteResult("local model"));
                    }
                    hessians[a][(p, q)] = v.d12;
                    hessians[a][(q, p)] = v.d12;
                    if q == p {
                        first[(a, p)] = v.d1;
                        value[a] = v.value;
                    }
                }
            }
        }
        Ok(LocalModel {
            value,
            jac_x: first.columns(0, n).into_owned(),
            jac_u: first.columns(n, m).into_owned(),
            hessians,
            n,
        })
    }

    /// Condition number of `df_u(x)`; errors when above [`MAX_CONDITION`].
    pub fn check_nonsingular(&self, jac: &DMatrix<f64>) -> Result<f64> {
        let condition = condition_number(jac);
        if !condition.is_finite() || condition > MAX_CONDITION {
            return Err(Error::SingularJacobian { condition });
        }
        Ok(condition)
    }

    /// Solves `f_u(x) = y` for `x`. Analytic mode evaluates `finv`; Newton
    /// mode iterates from `x_hint` (default: `y`) on the local branch.
    pub fn inverse_step(
        &self,
        y: &DVector<f64>,
        u: &DVector<f64>,
        x_hint: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        self.check_dims(y.len(), u.len())?;
        match (&self.inverse_mode, &self.file.inverse) {
            (InverseMode::Analytic, Some(inv)) => {
                let x = inv
                    .iter()
                    .map(|e| e.eval::<f64>(y.as_slice(), u.as_slice()))
                    .collect::<Result<Vec<_>, _>>()?;
                let x = DVector::from_vec(x);
                check_finite(&x, "inverse step")?;
                Ok(x)
            }
            _ => self.newton_inverse(y, u, x_hint),
        }
    }

    pub fn newton_inverse(
        &self,
        y: &DVector<f64>,
        u: &DVector<f64>,
        x_hint: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        let mut x = x_hint.cloned().unwrap_or_else(|| y.clone());
        let tol = NEWTON_TOLERANCE * y.norm().max(1.0);
        let residual_at = |x: &DVector<f64>| -> Result<DVector<f64>> { Ok(self.step(x, u)? - y) };
        let mut r = residual_at(&x)?;
        for _ in 0..NEWTON_MAX_ITERATIONS {
            let rn = r.norm();
            if rn <= tol {
                return Ok(x);
            }
            let jac = self.jac_x(&x, u)?;
            self.check_nonsingular(&jac)?;
            let dx = jac.lu().solve(&r).ok_or(Error::SingularJacobian {
                condition: f64::INFINITY,
            })?;
            // halve the step until the residual decreases
            let mut t = 1.0;
            let (next, next_r) = loop {
                let cand = &x - &dx * t;
                match residual_at(&cand) {
                    Ok(rc) if rc.norm() < rn || t <= MIN_NEWTON_STEP => break (cand, rc),
                    Err(e) if t <= MIN_NEWTON_STEP => return Err(e),
                    _ => t *= 0.5,
                }
            };
            x = next;
            r = next_r;
        }
        let residual = r.norm();
        if residual <= tol {
            Ok(x)
        } else {
            Err(Error::NewtonDivergence {
                iterations: NEWTON_MAX_ITERATIONS,
                residual,
            })
        }
    }

    pub fn rollout(&self, x0: &DVector<f64>, ubar: &ControlSequence) -> Result<Trajectory> {
        let mut states = Vec::with_capacity(ubar.len() + 1);
        states.push(x0.clone());
        for u in ubar.steps() {
            let next = self.step(states.last().unwrap(), u)?;
            states.push(next);
        }
        Ok(Trajectory { states })
    }

    /// Errors unless every control lies strictly inside the control box.
    pub fn check_interior(&self, ubar: &ControlSequence) -> Result<()> {
        if ubar.m() != self.m() && !ubar.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "controls have {} components, system has m = {}",
                ubar.m(),
                self.m()
            )));
        }
        for (i, u) in ubar.steps().iter().enumerate() {
            for (r, b) in self.u_box().iter().enumerate() {
                if let Some((lo, hi)) = b {
                    if !(u[r] > *lo && u[r] < *hi) {
                        return Err(Error::ControlNotInterior {
                            step: i + 1,
                            component: r + 1,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn r3() -> DiscreteSystem {
        builtin::example_r3()
    }

    fn linear_scalar() -> DiscreteSystem {
        DiscreteSystem::parse("lin", "dims 1 1\nf1 = 2*x1 + u1\n").unwrap()
    }

    #[test]
    fn step_examples() {
        let s = r3();
        assert_eq!(
            s.step(&dvector![1.0, 2.0, 3.0], &dvector![2.0]).unwrap(),
            dvector![4.0, 1.0, 5.0]
        );
        assert_eq!(
            s.step(&dvector![0.0, 0.0, 0.0], &dvector![0.0]).unwrap(),
            dvector![0.0, 0.0, 0.0]
        );
        assert_eq!(
            linear_scalar().step(&dvector![1.0], &dvector![3.0]).unwrap(),
            dvector![5.0]
        );
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let err = r3().step(&dvector![f64::NAN, 0.0, 0.0], &dvector![0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteResult(_)));
        let err = r3().step(&dvector![0.0, 0.0], &dvector![0.0]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn inverse_examples() {
        let s = r3();
        let x = dvector![1.0, 2.0, 3.0];
        let u = dvector![2.0];
        let y = s.step(&x, &u).unwrap();
        assert_eq!(s.inverse_step(&y, &u, None).unwrap(), x);
        let newton = s.clone().with_inverse_mode(InverseMode::Newton).unwrap();
        let xn = newton.inverse_step(&y, &u, Some(&x)).unwrap();
        assert!((xn - &x).norm() < 1e-9);
        let lin = linear_scalar();
        assert!((lin.inverse_step(&dvector![5.0], &dvector![3.0], None).unwrap()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn analytic_mode_needs_finv() {
        assert!(linear_scalar().with_inverse_mode(InverseMode::Analytic).is_err());
    }

    #[test]
    fn newton_reports_divergence() {
        // x^3 + x + u has a unique real preimage, but y = 1e30 is far out of
        // reach of 50 damped steps from the default hint
        let s = DiscreteSystem::parse("cubic", "dims 1 1\nf1 = x1^3 + x1 + u1\n").unwrap();
        let err = s
            .inverse_step(&dvector![1e30], &dvector![0.0], Some(&dvector![0.0]))
            .unwrap_err();
        assert!(matches!(err, Error::NewtonDivergence { .. }), "{err:?}");
    }

    #[test]
    fn singular_jacobian_is_refused() {
        let s = DiscreteSystem::parse("fold", "dims 1 1\nf1 = x1^2 + u1\n").unwrap();
        let jac = s.jac_x(&dvector![0.0], &dvector![0.0]).unwrap();
        assert!(matches!(s.check_nonsingular(&jac), Err(Error::SingularJacobian { .. })));
    }

    #[test]
    fn jacobians_of_example() {
        let s = r3();
        let (x, y, z, u) = (0.3, -1.2, 0.7, 1.5);
        let jx = s.jac_x(&dvector![x, y, z], &dvector![u]).unwrap();
        let want = DMatrix::from_row_slice(3, 3, &[-1.0, 0.0, 1.0, z, -1.0, x, 0.0, 0.0, 1.0]);
        assert!((jx - want).norm() < 1e-15);
        let ju = s.jac_u(&dvector![x, y, z], &dvector![u]).unwrap();
        assert!((ju - dvector![u, 0.0, u]).norm() < 1e-15);
        let id = DiscreteSystem::parse("id", "dims 2 1\nf1 = x1\nf2 = x2\n").unwrap();
        assert_eq!(
            id.jac_x(&dvector![3.0, 4.0], &dvector![1.0]).unwrap(),
            DMatrix::identity(2, 2)
        );
    }

    #[test]
    fn local_model_second_derivatives() {
        let s = r3();
        let lm = s.local_model(&dvector![0.3, -1.2, 0.7], &dvector![1.5]).unwrap();
        // f2 = x1 x3 - x2, f1/f3 carry u^2/2
        assert_eq!(lm.f_xx(1, 0, 2), 1.0);
        assert_eq!(lm.f_xx(1, 2, 0), 1.0);
        assert_eq!(lm.f_uu(0, 0, 0), 1.0);
        assert_eq!(lm.f_uu(2, 0, 0), 1.0);
        assert_eq!(lm.f_uu(1, 0, 0), 0.0);
        assert_eq!(lm.f_xu(0, 0, 0), 0.0);
        assert_eq!(lm.jac_x, s.jac_x(&dvector![0.3, -1.2, 0.7], &dvector![1.5]).unwrap());
        assert_eq!(lm.value, s.step(&dvector![0.3, -1.2, 0.7], &dvector![1.5]).unwrap());
    }

    #[test]
    fn rollout_examples() {
        let s = r3();
        let x0 = dvector![0.0, 0.0, 0.0];
        let t = s.rollout(&x0, &ControlSequence::scalar(&[])).unwrap();
        assert_eq!(t.states, vec![x0.clone()]);
        let t = s.rollout(&x0, &ControlSequence::scalar(&[1.0, 1.0])).unwrap();
        assert_eq!(t.states[1], dvector![0.5, 0.0, 0.5]);
        assert_eq!(t.states[2], dvector![0.5, 0.25, 1.0]);
        let lin = linear_scalar();
        let t = lin
            .rollout(&dvector![1.0], &ControlSequence::scalar(&[1.0, 1.0]))
            .unwrap();
        let xs: Vec<f64> = t.states.iter().map(|v| v[0]).collect();
        assert_eq!(xs, vec![1.0, 3.0, 7.0]);
    }

    #[test]
    fn control_sequence_shapes() {
        let u = ControlSequence::from_flat(2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(u.len(), 2);
        assert_eq!(u.step(2), &dvector![3.0, 4.0]);
        assert_eq!(u.flatten(), dvector![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(u.prefix(1).flatten(), dvector![1.0, 2.0]);
        assert_eq!(u.shifted().flatten(), dvector![3.0, 4.0]);
        assert!(ControlSequence::from_flat(2, &[1.0]).is_err());
    }

    #[test]
    fn interior_check() {
        let s = DiscreteSystem::parse("b", "dims 1 1\nf1 = x1 + u1\nubox1 = -1 1\n").unwrap();
        assert!(s.check_interior(&ControlSequence::scalar(&[0.0, 0.5])).is_ok());
        assert_eq!(
            s.check_interior(&ControlSequence::scalar(&[0.0, 1.0])).unwrap_err(),
            Error::ControlNotInterior { step: 2, component: 1 }
        );
    }
}
