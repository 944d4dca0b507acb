//! Control-dependent vector fields of an invertible system and the first and
//! second variations built from them.
//!
//! Conventions, for `f_u(x) = f(x, u)` and `J = df_u(x)`:
//!
//! * `X⁺_{u,r}(x) = J⁻¹ ∂f/∂u^r (x, u)`
//! * `(Ad_u W)(x) = J⁻¹ W(f_u(x))`, so `Ad_{u_1}⋯Ad_{u_k}` pulls a field at
//!   `x_k` back to `x_0` along the trajectory
//! * `[V, W](x) = dW(x) V(x) − dV(x) W(x)`
//! * `Y^{ir} = Ad_{u_1}⋯Ad_{u_{i-1}} X⁺_{u_i,r}`
//! * `Z^{ir,js} = ½ [Y^{ir}, Y^{js}]` for `i < j`, and
//!   `Z^{ir,is} = Ad_{u_1}⋯Ad_{u_{i-1}} ∂/∂u_i^r X⁺_{u_i,s}` (symmetrised in `r, s`)
//!
//! Coefficient vectors `a ∈ ℝ^{Nm}` are laid out step-major: index
//! `(i - 1) m + (r - 1)` holds `a_i^r`.
//!
//! Fields are never formed symbolically. A field is a map returning its
//! value and Jacobian ([`FieldJet`]); Jacobians of pulled-back fields are
//! propagated exactly from the second derivatives of `f`.

use nalgebra::{DMatrix, DVector};

use crate::diffnum::{HyperDual, Slot};
use crate::error::{Error, Result};
use crate::exprdsl::Expr;
use crate::system::{ControlSequence, DiscreteSystem, LocalModel, Trajectory};

/// Step for the finite-difference reference fields (`y_plus` and friends).
pub const REFERENCE_FD_STEP: f64 = 1e-5;

/// Value and Jacobian of a vector field at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldJet {
    pub value: DVector<f64>,
    pub jac: DMatrix<f64>,
}

pub trait VectorField {
    fn jet(&self, x: &DVector<f64>) -> Result<FieldJet>;

    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.jet(x)?.value)
    }
}

/// A polynomial-rational field written in the expression language over
/// `x1..xn`.
#[derive(Debug, Clone)]
pub struct ExprField {
    components: Vec<Expr>,
}

impl ExprField {
    pub fn new(components: Vec<Expr>) -> Self {
        Self { components }
    }
}

impl VectorField for ExprField {
    fn jet(&self, x: &DVector<f64>) -> Result<FieldJet> {
        let n = x.len();
        let dim = self.components.len();
        let mut value = DVector::zeros(dim);
        let mut jac = DMatrix::zeros(dim, n);
        for k in 0..n {
            let hx: Vec<HyperDual> = x
                .iter()
                .enumerate()
                .map(|(l, &c)| {
                    if l == k {
                        HyperDual::seed(c, Slot::First)
                    } else {
                        HyperDual::lift_const(c)
                    }
                })
                .collect();
            for (a, e) in self.components.iter().enumerate() {
                let v = e.eval(&hx, &[])?;
                value[a] = v.value;
                jac[(a, k)] = v.d1;
            }
        }
        Ok(FieldJet { value, jac })
    }
}

/// A field given only by its values. The Jacobian is a central difference
/// with step [`FnField::JACOBIAN_STEP`], so jets of this field are
/// approximate.
pub struct FnField<F> {
    f: F,
}

impl<F: Fn(&DVector<f64>) -> Result<DVector<f64>>> FnField<F> {
    pub const JACOBIAN_STEP: f64 = 1e-6;

    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F: Fn(&DVector<f64>) -> Result<DVector<f64>>> VectorField for FnField<F> {
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        (self.f)(x)
    }

    fn jet(&self, x: &DVector<f64>) -> Result<FieldJet> {
        let value = (self.f)(x)?;
        let h = Self::JACOBIAN_STEP;
        let mut jac = DMatrix::zeros(value.len(), x.len());
        for k in 0..x.len() {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[k] += h;
            minus[k] -= h;
            jac.set_column(k, &(((self.f)(&plus)? - (self.f)(&minus)?) / (2.0 * h)));
        }
        Ok(FieldJet { value, jac })
    }
}

fn unit_control(m: usize, r: usize, scale: f64) -> DVector<f64> {
    let mut e = DVector::zeros(m);
    e[r] = scale;
    e
}

fn solve(model: &LocalModel, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    model.jac_x.clone().lu().solve(rhs).ok_or(Error::SingularJacobian {
        condition: f64::INFINITY,
    })
}

fn checked_model(sys: &DiscreteSystem, x: &DVector<f64>, u: &DVector<f64>) -> Result<LocalModel> {
    let model = sys.local_model(x, u)?;
    sys.check_nonsingular(&model.jac_x)?;
    Ok(model)
}

/// `X⁺_{u,r}(x)` by one linear solve with `df_u(x)`.
pub fn x_plus(sys: &DiscreteSystem, x: &DVector<f64>, u: &DVector<f64>, r: usize) -> Result<DVector<f64>> {
    let jac = sys.jac_x(x, u)?;
    sys.check_nonsingular(&jac)?;
    let b = sys.jac_u(x, u)?.column(r).into_owned();
    jac.lu().solve(&b).ok_or(Error::SingularJacobian {
        condition: f64::INFINITY,
    })
}

/// Value and Jacobian of `X⁺_{u,r}` from the local model at `(x, u)`.
///
/// Differentiating `J v = ∂f/∂u^r` along `x_k` gives
/// `∂v/∂x_k = J⁻¹ (∂²f/∂x_k∂u^r − (∂J/∂x_k) v)`.
pub fn x_plus_jet(model: &LocalModel, r: usize) -> Result<FieldJet> {
    let n = model.value.len();
    let lu = model.jac_x.clone().lu();
    let fail = || Error::SingularJacobian {
        condition: f64::INFINITY,
    };
    let value = lu.solve(&model.jac_u.column(r).into_owned()).ok_or_else(fail)?;
    let mut rhs = DMatrix::zeros(n, n);
    for k in 0..n {
        let djv = model.dj_dx(k, &value);
        for a in 0..n {
            rhs[(a, k)] = model.f_xu(a, k, r) - djv[a];
        }
    }
    let jac = lu.solve(&rhs).ok_or_else(fail)?;
    Ok(FieldJet { value, jac })
}

/// `∂/∂u^r X⁺_{u,s}` at the model point:
/// `J⁻¹ (∂²f/∂u^r∂u^s − (∂J/∂u^r) X⁺_{u,s})`.
pub fn x_plus_du(model: &LocalModel, r: usize, s: usize) -> Result<DVector<f64>> {
    let n = model.value.len();
    let xs = solve(model, &model.jac_u.column(s).into_owned())?;
    let djv = model.dj_du(r, &xs);
    let rhs = DVector::from_fn(n, |a, _| model.f_uu(a, r, s) - djv[a]);
    solve(model, &rhs)
}

/// `(Ad_u W)(x) = df_u(x)⁻¹ W(f_u(x))`.
pub fn ad(sys: &DiscreteSystem, u: &DVector<f64>, field: &dyn VectorField, x: &DVector<f64>) -> Result<DVector<f64>> {
    let jac = sys.jac_x(x, u)?;
    sys.check_nonsingular(&jac)?;
    let w = field.eval(&sys.step(x, u)?)?;
    jac.lu().solve(&w).ok_or(Error::SingularJacobian {
        condition: f64::INFINITY,
    })
}

/// Jet of `Ad_u W` at `x`, given the local model at `(x, u)` and the jet of
/// `W` at `f_u(x)`:
/// `∂v/∂x_k = J⁻¹ (dW J e_k − (∂J/∂x_k) v)`.
pub fn ad_jet(model: &LocalModel, inner_at_image: &FieldJet) -> Result<FieldJet> {
    let n = model.value.len();
    let value = solve(model, &inner_at_image.value)?;
    let transported = &inner_at_image.jac * &model.jac_x;
    let mut rhs = DMatrix::zeros(n, n);
    for k in 0..n {
        let djv = model.dj_dx(k, &value);
        for a in 0..n {
            rhs[(a, k)] = transported[(a, k)] - djv[a];
        }
    }
    let jac = model.jac_x.clone().lu().solve(&rhs).ok_or(Error::SingularJacobian {
        condition: f64::INFINITY,
    })?;
    Ok(FieldJet { value, jac })
}

/// `[V, W] = dW V − dV W` from the jets of both fields at the same point.
pub fn lie_bracket(v: &FieldJet, w: &FieldJet) -> DVector<f64> {
    &w.jac * &v.value - &v.jac * &w.value
}

/// The field `X⁺_{u,r}` as a [`VectorField`].
pub struct XPlusField<'a> {
    pub sys: &'a DiscreteSystem,
    pub u: DVector<f64>,
    pub r: usize,
}

impl VectorField for XPlusField<'_> {
    fn jet(&self, x: &DVector<f64>) -> Result<FieldJet> {
        x_plus_jet(&checked_model(self.sys, x, &self.u)?, self.r)
    }
}

/// The field `Ad_u W` as a [`VectorField`].
pub struct AdField<'a> {
    pub sys: &'a DiscreteSystem,
    pub u: DVector<f64>,
    pub inner: Box<dyn VectorField + 'a>,
}

impl VectorField for AdField<'_> {
    fn jet(&self, x: &DVector<f64>) -> Result<FieldJet> {
        let model = checked_model(self.sys, x, &self.u)?;
        let inner = self.inner.jet(&model.value)?;
        ad_jet(&model, &inner)
    }
}

/// `Y^{ir}` as a composed field (one-based `i`, zero-based `r`). Used as an
/// independent route to the trajectory sweep in [`variation_data`].
pub fn first_variation_field<'a>(
    sys: &'a DiscreteSystem,
    ubar: &ControlSequence,
    i: usize,
    r: usize,
) -> Box<dyn VectorField + 'a> {
    let mut field: Box<dyn VectorField + 'a> = Box::new(XPlusField {
        sys,
        u: ubar.step(i).clone(),
        r,
    });
    for k in (1..i).rev() {
        field = Box::new(AdField {
            sys,
            u: ubar.step(k).clone(),
            inner: field,
        });
    }
    field
}

/// Central difference with one Richardson extrapolation.
pub fn richardson_derivative(g: impl Fn(f64) -> Result<DVector<f64>>, h: f64) -> Result<DVector<f64>> {
    let central = |h: f64| -> Result<DVector<f64>> { Ok((g(h)? - g(-h)?) / (2.0 * h)) };
    let coarse = central(h)?;
    let fine = central(h / 2.0)?;
    Ok((fine * 4.0 - coarse) / 3.0)
}

/// Reference `X⁺_{u,r}(x)` from its defining curve `ε ↦ f_u⁻¹ f_{u+ε e_r}(x)`.
pub fn x_plus_reference(sys: &DiscreteSystem, x: &DVector<f64>, u: &DVector<f64>, r: usize) -> Result<DVector<f64>> {
    let e = |eps: f64| unit_control(sys.m(), r, eps);
    richardson_derivative(
        |eps| sys.inverse_step(&sys.step(x, &(u + e(eps)))?, u, Some(x)),
        REFERENCE_FD_STEP,
    )
}

/// `Y⁺_{u,r}(x)` from `ε ↦ f_{u+ε e_r}⁻¹ f_u(x)`.
pub fn y_plus(sys: &DiscreteSystem, x: &DVector<f64>, u: &DVector<f64>, r: usize) -> Result<DVector<f64>> {
    let y = sys.step(x, u)?;
    let e = |eps: f64| unit_control(sys.m(), r, eps);
    richardson_derivative(|eps| sys.inverse_step(&y, &(u + e(eps)), Some(x)), REFERENCE_FD_STEP)
}

/// `X⁻_{u,r}(x)` from `ε ↦ f_u f_{u+ε e_r}⁻¹(x)`.
///
/// Only meaningful where `x` lies in the image of every nearby `f_{u+ε}`;
/// the tool cannot decide surjectivity, so treat results away from sampled
/// images as uncertified.
pub fn x_minus(sys: &DiscreteSystem, x: &DVector<f64>, u: &DVector<f64>, r: usize) -> Result<DVector<f64>> {
    let pre = sys.inverse_step(x, u, None)?;
    let e = |eps: f64| unit_control(sys.m(), r, eps);
    richardson_derivative(
        |eps| sys.step(&sys.inverse_step(x, &(u + e(eps)), Some(&pre))?, u),
        REFERENCE_FD_STEP,
    )
}

/// `Y⁻_{u,r}(x)` from `ε ↦ f_{u+ε e_r} f_u⁻¹(x)`; same caveat as [`x_minus`].
pub fn y_minus(sys: &DiscreteSystem, x: &DVector<f64>, u: &DVector<f64>, r: usize) -> Result<DVector<f64>> {
    let pre = sys.inverse_step(x, u, None)?;
    let e = |eps: f64| unit_control(sys.m(), r, eps);
    richardson_derivative(|eps| sys.step(&pre, &(u + e(eps))), REFERENCE_FD_STEP)
}

/// Per-step local models along a rolled-out trajectory.
struct Sweep {
    trajectory: Trajectory,
    /// `models[i - 1]` is the model of `f` at `(x_{i-1}, u_i)`.
    models: Vec<LocalModel>,
}

impl Sweep {
    fn new(sys: &DiscreteSystem, x0: &DVector<f64>, ubar: &ControlSequence) -> Result<Self> {
        if ubar.is_empty() {
            return Err(Error::EmptyControlSequence);
        }
        if ubar.m() != sys.m() || x0.len() != sys.n() {
            return Err(Error::DimensionMismatch(format!(
                "system is {}x{}, got x0 of length {} and controls of length {}",
                sys.n(),
                sys.m(),
                x0.len(),
                ubar.m()
            )));
        }
        let trajectory = sys.rollout(x0, ubar)?;
        let models = ubar
            .steps()
            .iter()
            .zip(&trajectory.states)
            .map(|(u, x)| checked_model(sys, x, u))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { trajectory, models })
    }

    /// Pulls a tangent vector at `x_k` back to `x_0`: `J_1⁻¹ ⋯ J_k⁻¹ v`.
    fn pull_back(&self, mut v: DVector<f64>, k: usize) -> Result<DVector<f64>> {
        for model in self.models[..k].iter().rev() {
            v = solve(model, &v)?;
        }
        Ok(v)
    }

    fn composed_jacobian(&self) -> DMatrix<f64> {
        let n = self.trajectory.states[0].len();
        self.models
            .iter()
            .fold(DMatrix::identity(n, n), |acc, m| &m.jac_x * acc)
    }
}

/// Symmetric array of vectors indexed by pairs of coefficient indices,
/// stored once per unordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondVariations {
    dim: usize,
    n: usize,
    packed: Vec<DVector<f64>>,
}

fn packed_index(dim: usize, a: usize, b: usize) -> usize {
    let (i, j) = if a <= b { (a, b) } else { (b, a) };
    i * dim - i * (i + 1) / 2 + j
}

impl SecondVariations {
    fn zeros(dim: usize, n: usize) -> Self {
        Self {
            dim,
            n,
            packed: vec![DVector::zeros(n); dim * (dim + 1) / 2],
        }
    }

    /// Number of coefficient indices (`Nm`).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, a: usize, b: usize) -> &DVector<f64> {
        &self.packed[packed_index(self.dim, a, b)]
    }

    fn set(&mut self, a: usize, b: usize, v: DVector<f64>) {
        let k = packed_index(self.dim, a, b);
        self.packed[k] = v;
    }
}

/// `Y^{ir}(x_0)` for all steps and inputs, step-major.
pub fn first_variations(sys: &DiscreteSystem, x0: &DVector<f64>, ubar: &ControlSequence) -> Result<Vec<DVector<f64>>> {
    let sweep = Sweep::new(sys, x0, ubar)?;
    sweep_first(&sweep, sys.m())
}

fn sweep_first(sweep: &Sweep, m: usize) -> Result<Vec<DVector<f64>>> {
    let mut ys = Vec::with_capacity(sweep.models.len() * m);
    for (i, model) in sweep.models.iter().enumerate() {
        let lu = model.jac_x.clone().lu();
        for r in 0..m {
            let xp = lu
                .solve(&model.jac_u.column(r).into_owned())
                .ok_or(Error::SingularJacobian {
                    condition: f64::INFINITY,
                })?;
            ys.push(sweep.pull_back(xp, i)?);
        }
    }
    Ok(ys)
}

/// `Z^{ir,js}(x_0)` for all index pairs.
///
/// Off-diagonal blocks use `½ Ad_{u_1}⋯Ad_{u_{i-1}} [X⁺_{u_i,r}, G]` with
/// `G = Ad_{u_i}⋯Ad_{u_{j-1}} X⁺_{u_j,s}` evaluated with its Jacobian at
/// `x_{i-1}` by a backward sweep; diagonal blocks use `∂X⁺/∂u` at
/// `x_{i-1}`. Both are then pulled back to `x_0`.
pub fn second_variations(sys: &DiscreteSystem, x0: &DVector<f64>, ubar: &ControlSequence) -> Result<SecondVariations> {
    let sweep = Sweep::new(sys, x0, ubar)?;
    sweep_second(&sweep, sys.n(), sys.m())
}

fn sweep_second(sweep: &Sweep, n: usize, m: usize) -> Result<SecondVariations> {
    let steps = sweep.models.len();
    let dim = steps * m;
    let mut z = SecondVariations::zeros(dim, n);
    let x_plus_jets: Vec<Vec<FieldJet>> = sweep
        .models
        .iter()
        .map(|model| (0..m).map(|r| x_plus_jet(model, r)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;

    for i in 0..steps {
        let model = &sweep.models[i];
        for r in 0..m {
            for s in r..m {
                let d = if r == s {
                    x_plus_du(model, r, r)?
                } else {
                    (x_plus_du(model, r, s)? + x_plus_du(model, s, r)?) * 0.5
                };
                z.set(i * m + r, i * m + s, sweep.pull_back(d, i)?);
            }
        }
    }

    for j in 1..steps {
        for s in 0..m {
            // G at x_{j-1} is X⁺_{u_j,s}; step it back one Ad at a time
            let mut g = x_plus_jets[j][s].clone();
            for i in (0..j).rev() {
                g = ad_jet(&sweep.models[i], &g)?;
                for r in 0..m {
                    let bracket = lie_bracket(&x_plus_jets[i][r], &g);
                    z.set(i * m + r, j * m + s, sweep.pull_back(bracket * 0.5, i)?);
                }
            }
        }
    }
    Ok(z)
}

/// The vector-valued quadratic form `H(a) = Σ a_I a_J Z^{IJ}(x_0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianForm {
    z: SecondVariations,
}

impl HessianForm {
    pub fn dim(&self) -> usize {
        self.z.dim
    }

    pub fn state_dim(&self) -> usize {
        self.z.n
    }

    pub fn entry(&self, a: usize, b: usize) -> &DVector<f64> {
        self.z.get(a, b)
    }

    /// `Σ_{I,J} a_I b_J Z^{IJ}`, the symmetric bilinear form behind `H`.
    pub fn bilinear(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.z.n);
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let w = a[i] * b[j];
                if w != 0.0 {
                    out += self.z.get(i, j) * w;
                }
            }
        }
        out
    }

    /// `H(a)`; off-diagonal pairs count twice, once per ordered pair.
    pub fn eval(&self, a: &DVector<f64>) -> DVector<f64> {
        self.bilinear(a, a)
    }

    /// The real symmetric matrix of `λ H`: entries `λ · Z^{IJ}`.
    pub fn contract(&self, lambda: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| lambda.dot(self.z.get(i, j)))
    }

    /// The leading `dim × dim` sub-tensor (the form of a prefix sequence).
    pub fn leading(&self, dim: usize) -> HessianForm {
        let mut z = SecondVariations::zeros(dim, self.z.n);
        for i in 0..dim {
            for j in i..dim {
                z.set(i, j, self.z.get(i, j).clone());
            }
        }
        HessianForm { z }
    }
}

pub fn assemble_hessian(y: &[DVector<f64>], z: SecondVariations) -> Result<HessianForm> {
    if y.len() != z.dim || y.iter().any(|v| v.len() != z.n) {
        return Err(Error::DimensionMismatch(format!(
            "{} first variations against a {}-index second variation array",
            y.len(),
            z.dim
        )));
    }
    Ok(HessianForm { z })
}

/// Everything the analyses need at one `(x_0, ū)`.
#[derive(Debug, Clone)]
pub struct VariationData {
    pub x0: DVector<f64>,
    pub ubar: ControlSequence,
    pub trajectory: Trajectory,
    /// `Y^{ir}(x_0)`, step-major.
    pub y: Vec<DVector<f64>>,
    pub hessian: HessianForm,
    /// `d f_ū(x_0) = J_N ⋯ J_1`.
    pub df_ubar: DMatrix<f64>,
    /// `J_i = df_{u_i}(x_{i-1})`, one per step.
    pub step_jacobians: Vec<DMatrix<f64>>,
    /// `∂f/∂u (x_{i-1}, u_i)`, one per step.
    pub control_jacobians: Vec<DMatrix<f64>>,
}

impl VariationData {
    pub fn n(&self) -> usize {
        self.x0.len()
    }

    pub fn m(&self) -> usize {
        self.ubar.m()
    }

    /// Columns `Y^{ir}(x_0)` as an `n × Nm` matrix.
    pub fn y_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.y)
    }

    /// Data of the prefix `(u_1, ..., u_t)`: first `t m` variations and
    /// the leading block of the Hessian.
    pub fn prefix(&self, t: usize) -> VariationData {
        let dim = t * self.m();
        let n = self.n();
        VariationData {
            x0: self.x0.clone(),
            ubar: self.ubar.prefix(t),
            trajectory: Trajectory {
                states: self.trajectory.states[..=t].to_vec(),
            },
            y: self.y[..dim].to_vec(),
            hessian: self.hessian.leading(dim),
            df_ubar: self.step_jacobians[..t]
                .iter()
                .fold(DMatrix::identity(n, n), |acc, j| j * acc),
            step_jacobians: self.step_jacobians[..t].to_vec(),
            control_jacobians: self.control_jacobians[..t].to_vec(),
        }
    }
}

pub fn variation_data(sys: &DiscreteSystem, x0: &DVector<f64>, ubar: &ControlSequence) -> Result<VariationData> {
    let sweep = Sweep::new(sys, x0, ubar)?;
    let y = sweep_first(&sweep, sys.m())?;
    let z = sweep_second(&sweep, sys.n(), sys.m())?;
    let hessian = assemble_hessian(&y, z)?;
    Ok(VariationData {
        x0: x0.clone(),
        ubar: ubar.clone(),
        df_ubar: sweep.composed_jacobian(),
        step_jacobians: sweep.models.iter().map(|m| m.jac_x.clone()).collect(),
        control_jacobians: sweep.models.iter().map(|m| m.jac_u.clone()).collect(),
        trajectory: sweep.trajectory,
        y,
        hessian,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::builtin::{example_r3, linear_generic};
    use nalgebra::dvector;

    const TOL: f64 = 1e-12;

    #[test]
    fn x_plus_on_example() {
        let s = example_r3();
        let x = dvector![0.4, -0.7, 1.3];
        let u = dvector![1.7];
        let v = x_plus(&s, &x, &u, 0).unwrap();
        assert!((v - dvector![0.0, 0.4, 1.0] * 1.7).norm() < TOL);
        let zero = x_plus(&s, &x, &dvector![0.0], 0).unwrap();
        assert!(zero.norm() < TOL);
    }

    #[test]
    fn x_plus_on_linear_system_is_constant() {
        let s = linear_generic();
        let a = s.jac_x(&dvector![0.0, 0.0, 0.0], &dvector![0.0]).unwrap();
        let b = s.jac_u(&dvector![0.0, 0.0, 0.0], &dvector![0.0]).unwrap();
        let want = a.lu().solve(&b.column(0).into_owned()).unwrap();
        for x in [dvector![1.0, 2.0, 3.0], dvector![-4.0, 0.5, 9.0]] {
            let v = x_plus(&s, &x, &dvector![0.3], 0).unwrap();
            assert!((v - &want).norm() < TOL);
        }
    }

    #[test]
    fn ad_of_example_matches_closed_form() {
        let s = example_r3();
        let (x, y, z) = (0.4, -0.7, 1.3);
        let (u1, u2) = (1.1, -0.6);
        let inner = XPlusField {
            sys: &s,
            u: dvector![u2],
            r: 0,
        };
        let v = ad(&s, &dvector![u1], &inner, &dvector![x, y, z]).unwrap();
        let want = dvector![1.0, 2.0 * x - 0.5 * u1 * u1, 1.0] * u2;
        assert!((v - want).norm() < TOL);
    }

    #[test]
    fn ad_on_identity_and_linear() {
        let id = DiscreteSystem::parse("id", "dims 2 1\nf1 = x1\nf2 = x2\n").unwrap();
        let field = ExprField::new(vec![
            crate::exprdsl::parse_expr("x1*x2", crate::exprdsl::VarScope { n: 2, m: 0 }).unwrap(),
            crate::exprdsl::parse_expr("1 - x1", crate::exprdsl::VarScope { n: 2, m: 0 }).unwrap(),
        ]);
        let x = dvector![0.5, 2.0];
        let v = ad(&id, &dvector![0.0], &field, &x).unwrap();
        assert!((v - field.eval(&x).unwrap()).norm() < TOL);

        let lin = DiscreteSystem::parse("lin", "dims 2 1\nf1 = 2*x1 + x2\nf2 = x2 + u1\n").unwrap();
        let c = ExprField::new(vec![Expr::num(1.0), Expr::num(3.0)]);
        let v = ad(&lin, &dvector![0.0], &c, &x).unwrap();
        // A⁻¹ c with A = [[2,1],[0,1]]
        assert!((v - dvector![-1.0, 3.0]).norm() < TOL);
    }

    #[test]
    fn bracket_is_antisymmetric() {
        let s = example_r3();
        let x = dvector![0.2, 0.1, -0.4];
        let a = XPlusField {
            sys: &s,
            u: dvector![0.9],
            r: 0,
        }
        .jet(&x)
        .unwrap();
        let b = first_variation_field(&s, &ControlSequence::scalar(&[0.3, 1.2]), 2, 0)
            .jet(&x)
            .unwrap();
        assert_eq!(lie_bracket(&a, &b), -lie_bracket(&b, &a));
    }

    #[test]
    fn single_step_variation_is_x_plus() {
        let s = example_r3();
        let x0 = dvector![0.3, 0.2, 0.1];
        let ubar = ControlSequence::scalar(&[0.8]);
        let y = first_variations(&s, &x0, &ubar).unwrap();
        assert_eq!(y.len(), 1);
        assert!((&y[0] - x_plus(&s, &x0, &dvector![0.8], 0).unwrap()).norm() < TOL);
    }

    #[test]
    fn linear_system_has_vanishing_second_variations() {
        let s = linear_generic();
        let ubar = ControlSequence::scalar(&[0.3, -1.0, 2.0, 0.5]);
        let data = variation_data(&s, &dvector![1.0, -2.0, 0.5], &ubar).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!(data.hessian.entry(i, j).norm() < TOL);
            }
        }
        assert!(data.hessian.eval(&dvector![1.0, 2.0, 3.0, 4.0]).norm() < TOL);
    }

    #[test]
    fn one_hot_contraction_picks_diagonal() {
        let s = example_r3();
        let ubar = ControlSequence::scalar(&[0.5, -1.0, 1.5, 0.7]);
        let data = variation_data(&s, &dvector![0.1, 0.2, 0.3], &ubar).unwrap();
        for i in 0..4 {
            let mut e = DVector::zeros(4);
            e[i] = 1.0;
            assert_eq!(data.hessian.eval(&e), data.hessian.entry(i, i).clone());
        }
    }

    #[test]
    fn hessian_is_quadratic() {
        let s = example_r3();
        let ubar = ControlSequence::scalar(&[0.5, -1.0, 1.5, 0.7]);
        let data = variation_data(&s, &dvector![0.1, 0.2, 0.3], &ubar).unwrap();
        let a = dvector![0.3, -1.1, 0.4, 2.0];
        for t in [-2.0, 0.5, 3.0] {
            let lhs = data.hessian.eval(&(&a * t));
            let rhs = data.hessian.eval(&a) * (t * t);
            assert!((lhs - rhs).norm() < 1e-12 * (1.0 + t * t));
        }
    }

    #[test]
    fn leading_block_is_prefix_form() {
        let s = example_r3();
        let ubar = ControlSequence::scalar(&[0.5, -1.0, 1.5, 0.7]);
        let x0 = dvector![0.1, 0.2, 0.3];
        let full = variation_data(&s, &x0, &ubar).unwrap();
        let short = variation_data(&s, &x0, &ubar.prefix(2)).unwrap();
        let lead = full.hessian.leading(2);
        for i in 0..2 {
            for j in 0..2 {
                assert!((lead.entry(i, j) - short.hessian.entry(i, j)).norm() < TOL);
            }
        }
        let p = full.prefix(2);
        assert!((p.df_ubar - short.df_ubar).norm() < TOL);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let s = example_r3();
        let err = first_variations(&s, &dvector![0.0, 0.0, 0.0], &ControlSequence::scalar(&[])).unwrap_err();
        assert_eq!(err, Error::EmptyControlSequence);
    }

    #[test]
    fn assemble_checks_dimensions() {
        let s = example_r3();
        let ubar = ControlSequence::scalar(&[0.5, -1.0]);
        let x0 = dvector![0.1, 0.2, 0.3];
        let z = second_variations(&s, &x0, &ubar).unwrap();
        let y = first_variations(&s, &x0, &ubar).unwrap();
        assert!(assemble_hessian(&y[..1], z.clone()).is_err());
        assert!(assemble_hessian(&y, z).is_ok());
    }
}
