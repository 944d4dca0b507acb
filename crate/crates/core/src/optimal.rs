//! Terminal-cost (Meyer) optimal control: the covector `λ`, first- and
//! second-order necessary and sufficient conditions, the Q-form, the
//! running-cost (Bolza) reduction and the adjoint (Hamiltonian) checks.

use nalgebra::{DMatrix, DVector};

use crate::analysis::{
    restrict_form_unchecked, span_kernel, sphere_points, Inertia, RestrictedForm, SpanKernel, VerdictOptions,
};
use crate::diffnum::{HyperDual, Scalar, Slot};
use crate::error::{Error, Result};
use crate::exprdsl::{BinOp, Expr, ProblemFile, SystemFile, Var};
use crate::linalg::{null_space, orthogonal_complement, sorted_svd, symmetric_eigen, symmetric_eigenvalues};
use crate::system::{ControlSequence, DiscreteSystem};
use crate::variation::{variation_data, VariationData};

/// Relative tolerance for condition (I): `max |λ·Yⁱʳ| ≤ tol · max(1, ‖λ‖ max‖Yⁱʳ‖)`.
pub const FIRST_ORDER_TOL: f64 = 1e-7;

/// Final cost `φ` on the state space.
#[derive(Debug, Clone, PartialEq)]
pub enum FinalCost {
    Expr(Expr),
    /// `g·x + ½ (x − c)ᵀ M (x − c)` with `M` symmetric.
    Quadratic {
        linear: DVector<f64>,
        hessian: DMatrix<f64>,
        center: DVector<f64>,
    },
}

impl FinalCost {
    pub fn eval<S: Scalar>(&self, x: &[S]) -> Result<S> {
        match self {
            FinalCost::Expr(e) => Ok(e.eval(x, &[])?),
            FinalCost::Quadratic {
                linear,
                hessian,
                center,
            } => {
                let n = linear.len();
                if x.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "final cost on R^{n}, got R^{}",
                        x.len()
                    )));
                }
                let d: Vec<S> = (0..n).map(|i| x[i] - S::constant(center[i])).collect();
                let mut acc = S::constant(0.0);
                for i in 0..n {
                    acc = acc + S::constant(linear[i]) * x[i];
                    for j in 0..n {
                        acc = acc + S::constant(0.5 * hessian[(i, j)]) * d[i] * d[j];
                    }
                }
                Ok(acc)
            }
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.eval::<f64>(x.as_slice())
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let n = x.len();
        let mut g = DVector::zeros(n);
        for k in 0..n {
            let hx = seeded(x.as_slice(), &[(k, Slot::First)]);
            g[k] = self.eval(&hx)?.d1;
        }
        Ok(g)
    }

    pub fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = x.len();
        let mut h = DMatrix::zeros(n, n);
        for k in 0..n {
            for l in k..n {
                let hx = seeded(x.as_slice(), &[(k, Slot::First), (l, Slot::Second)]);
                let v = self.eval(&hx)?.d12;
                h[(k, l)] = v;
                h[(l, k)] = v;
            }
        }
        Ok(h)
    }

    /// The same cost on the augmented state `(x⁰, x)`, plus `x⁰`.
    fn augmented(&self) -> FinalCost {
        match self {
            FinalCost::Expr(e) => FinalCost::Expr(Expr::bin(
                BinOp::Add,
                Expr::state(0),
                e.substitute(&|v| match v {
                    Var::State(i) => Expr::state(i + 1),
                    Var::Control(r) => Expr::control(r),
                }),
            )),
            FinalCost::Quadratic {
                linear,
                hessian,
                center,
            } => {
                let n = linear.len();
                let mut lin = DVector::zeros(n + 1);
                lin[0] = 1.0;
                lin.rows_mut(1, n).copy_from(linear);
                let mut hes = DMatrix::zeros(n + 1, n + 1);
                hes.view_mut((1, 1), (n, n)).copy_from(hessian);
                let mut cen = DVector::zeros(n + 1);
                cen.rows_mut(1, n).copy_from(center);
                FinalCost::Quadratic {
                    linear: lin,
                    hessian: hes,
                    center: cen,
                }
            }
        }
    }
}

/// Lifts `x` to hyper-duals, seeding the listed coordinates. A coordinate
/// listed in both slots is seeded in both.
fn seeded(x: &[f64], seeds: &[(usize, Slot)]) -> Vec<HyperDual> {
    let mut out: Vec<HyperDual> = x.iter().map(|&c| HyperDual::lift_const(c)).collect();
    for &(k, slot) in seeds {
        match slot {
            Slot::First => out[k].d1 = 1.0,
            Slot::Second => out[k].d2 = 1.0,
            Slot::Both => {
                out[k].d1 = 1.0;
                out[k].d2 = 1.0;
            }
        }
    }
    out
}

/// Minimize `φ(x_N)` over control sequences from a fixed `x_0`.
#[derive(Debug, Clone)]
pub struct MeyerProblem {
    pub sys: DiscreteSystem,
    pub x0: DVector<f64>,
    pub phi: FinalCost,
}

/// Minimize `φ(x_N) + Σ c(x_{t−1}, u_t)`.
#[derive(Debug, Clone)]
pub struct BolzaProblem {
    pub sys: DiscreteSystem,
    pub x0: DVector<f64>,
    pub phi: FinalCost,
    pub running_cost: Expr,
}

impl MeyerProblem {
    pub fn new(sys: DiscreteSystem, x0: DVector<f64>, phi: FinalCost) -> Result<Self> {
        if x0.len() != sys.n() {
            return Err(Error::DimensionMismatch(format!(
                "x0 has length {}, system has n = {}",
                x0.len(),
                sys.n()
            )));
        }
        Ok(Self { sys, x0, phi })
    }

    /// `ψ(ū) = φ(f_ū(x_0))`.
    pub fn objective(&self, ubar: &ControlSequence) -> Result<f64> {
        let traj = self.sys.rollout(&self.x0, ubar)?;
        self.phi.value(traj.final_state())
    }
}

/// Builds a Meyer problem from a problem file, applying the running-cost
/// reduction when `c` is present. Returns the (possibly augmented) initial
/// state along with the problem.
pub fn problem_from_file(name: &str, file: &ProblemFile, x0: DVector<f64>) -> Result<MeyerProblem> {
    let phi = FinalCost::Expr(file.phi.clone().ok_or(Error::MissingFinalCost)?);
    let sys = DiscreteSystem::from_problem(name, file);
    match &file.running_cost {
        None => MeyerProblem::new(sys, x0, phi),
        Some(c) => bolza_reduce(&BolzaProblem {
            sys,
            x0,
            phi,
            running_cost: c.clone(),
        }),
    }
}

fn shift_states(e: &Expr) -> Expr {
    e.substitute(&|v| match v {
        Var::State(i) => Expr::state(i + 1),
        Var::Control(r) => Expr::control(r),
    })
}

/// Augments the state with the accumulated running cost `x⁰` so that
/// `φ̂(x̂_N) = φ(x_N) + x⁰_N` reproduces the Bolza objective from `x⁰_0 = 0`.
pub fn bolza_reduce(bp: &BolzaProblem) -> Result<MeyerProblem> {
    let file = bp.sys.file();
    let n = file.n;
    let (cx, cu) = bp.running_cost.var_extent();
    if cx > n || cu > file.m {
        return Err(Error::DimensionMismatch(format!(
            "running cost `{}` references variables outside dims {n} {}",
            bp.running_cost, file.m
        )));
    }
    let mut dynamics = Vec::with_capacity(n + 1);
    dynamics.push(Expr::bin(BinOp::Add, Expr::state(0), shift_states(&bp.running_cost)));
    dynamics.extend(file.dynamics.iter().map(shift_states));

    let inverse = file.inverse.as_ref().map(|inv| {
        let shifted: Vec<Expr> = inv.iter().map(shift_states).collect();
        // x⁰_{t−1} = x⁰_t − c(x_{t−1}, u_t) with x_{t−1} from the inverse step
        let prev = shifted.clone();
        let c_prev = bp.running_cost.substitute(&|v| match v {
            Var::State(i) => prev[i].clone(),
            Var::Control(r) => Expr::control(r),
        });
        let mut out = vec![Expr::bin(BinOp::Sub, Expr::state(0), c_prev)];
        out.extend(shifted);
        out
    });
    let augmented = SystemFile {
        n: n + 1,
        m: file.m,
        dynamics,
        inverse,
        u_box: file.u_box.clone(),
    };
    let sys = DiscreteSystem::new(format!("{}+cost", bp.sys.name()), augmented);
    let mut x0 = DVector::zeros(n + 1);
    x0.rows_mut(1, n).copy_from(&bp.x0);
    MeyerProblem::new(sys, x0, bp.phi.augmented())
}

/// `λ = dφ(x_N) · df_{u_N}(x_{N−1}) ⋯ df_{u_1}(x_0)`, as a column vector.
pub fn lambda_covector(
    sys: &DiscreteSystem,
    x0: &DVector<f64>,
    ubar: &ControlSequence,
    dphi: &DVector<f64>,
) -> Result<DVector<f64>> {
    let traj = sys.rollout(x0, ubar)?;
    let mut p = dphi.clone();
    for (x, u) in traj.states.iter().zip(ubar.steps()).rev() {
        p = sys.jac_x(x, u)?.tr_mul(&p);
    }
    Ok(p)
}

/// Value, Jacobian and per-component Hessians of the endpoint map
/// `F(ū) = f_ū(x_0)` with respect to the flattened controls.
#[derive(Debug, Clone)]
pub struct EndpointDerivatives {
    pub value: DVector<f64>,
    /// `n × Nm`.
    pub jacobian: DMatrix<f64>,
    /// One `Nm × Nm` matrix per state component.
    pub hessians: Vec<DMatrix<f64>>,
}

impl EndpointDerivatives {
    /// `Σ_a w_a ∇²F_a`.
    pub fn contract(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let dim = self.jacobian.ncols();
        self.hessians
            .iter()
            .zip(w.iter())
            .fold(DMatrix::zeros(dim, dim), |acc, (h, &c)| acc + h * c)
    }
}

fn rollout_scalar<S: Scalar>(sys: &DiscreteSystem, x0: &[S], controls: &[S], m: usize) -> Result<Vec<S>> {
    let mut x = x0.to_vec();
    for u in controls.chunks(m) {
        x = sys.eval(&x, u)?;
    }
    Ok(x)
}

/// First derivatives of `F` by one hyper-dual rollout per control
/// coordinate.
pub fn endpoint_jacobian(
    sys: &DiscreteSystem,
    x0: &DVector<f64>,
    ubar: &ControlSequence,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let flat = ubar.flatten();
    let dim = flat.len();
    let n = sys.n();
    let hx0: Vec<HyperDual> = x0.iter().map(|&c| HyperDual::lift_const(c)).collect();
    let mut value = DVector::zeros(n);
    let mut jac = DMatrix::zeros(n, dim);
    for p in 0..dim {
        let hu = seeded(flat.as_slice(), &[(p, Slot::First)]);
        let out = rollout_scalar(sys, &hx0, &hu, ubar.m())?;
        for a in 0..n {
            value[a] = out[a].value;
            jac[(a, p)] = out[a].d1;
        }
    }
    Ok((value, jac))
}

/// Full second-order derivatives of `F`; `Nm(Nm+1)/2` hyper-dual rollouts.
pub fn endpoint_derivatives(
    sys: &DiscreteSystem,
    x0: &DVector<f64>,
    ubar: &ControlSequence,
) -> Result<EndpointDerivatives> {
    let flat = ubar.flatten();
    let dim = flat.len();
    let n = sys.n();
    let hx0: Vec<HyperDual> = x0.iter().map(|&c| HyperDual::lift_const(c)).collect();
    let mut value = DVector::zeros(n);
    let mut jacobian = DMatrix::zeros(n, dim);
    let mut hessians = vec![DMatrix::zeros(dim, dim); n];
    for p in 0..dim {
        for q in p..dim {
            let seeds = if p == q {
                vec![(p, Slot::Both)]
            } else {
                vec![(p, Slot::First), (q, Slot::Second)]
            };
            let hu = seeded(flat.as_slice(), &seeds);
            let out = rollout_scalar(sys, &hx0, &hu, ubar.m())?;
            for a in 0..n {
                hessians[a][(p, q)] = out[a].d12;
                hessians[a][(q, p)] = out[a].d12;
                if p == q {
                    value[a] = out[a].value;
                    jacobian[(a, p)] = out[a].d1;
                }
            }
        }
    }
    Ok(EndpointDerivatives {
        value,
        jacobian,
        hessians,
    })
}

/// `∇ψ(ū)` for `ψ = φ ∘ F`, by hyper-dual rollouts through `φ`.
pub fn psi_gradient(prob: &MeyerProblem, ubar: &ControlSequence) -> Result<DVector<f64>> {
    let flat = ubar.flatten();
    let hx0: Vec<HyperDual> = prob.x0.iter().map(|&c| HyperDual::lift_const(c)).collect();
    let mut g = DVector::zeros(flat.len());
    for p in 0..flat.len() {
        let hu = seeded(flat.as_slice(), &[(p, Slot::First)]);
        let xn = rollout_scalar(&prob.sys, &hx0, &hu, ubar.m())?;
        g[p] = prob.phi.eval(&xn)?.d1;
    }
    Ok(g)
}

/// `∇²ψ(ū)` for `ψ = φ ∘ F`.
pub fn psi_hessian(prob: &MeyerProblem, ubar: &ControlSequence) -> Result<DMatrix<f64>> {
    let flat = ubar.flatten();
    let dim = flat.len();
    let hx0: Vec<HyperDual> = prob.x0.iter().map(|&c| HyperDual::lift_const(c)).collect();
    let mut h = DMatrix::zeros(dim, dim);
    for p in 0..dim {
        for q in p..dim {
            let seeds = if p == q {
                vec![(p, Slot::Both)]
            } else {
                vec![(p, Slot::First), (q, Slot::Second)]
            };
            let hu = seeded(flat.as_slice(), &seeds);
            let xn = rollout_scalar(&prob.sys, &hx0, &hu, ubar.m())?;
            let v = prob.phi.eval(&xn)?.d12;
            h[(p, q)] = v;
            h[(q, p)] = v;
        }
    }
    Ok(h)
}

#[derive(Debug, Clone)]
pub struct NecessaryReport {
    pub x_final: DVector<f64>,
    pub dphi: DVector<f64>,
    pub lambda: DVector<f64>,
    /// `max_{i,r} |λ·Yⁱʳ(x_0)|`.
    pub cond_i_residual: f64,
    pub cond_i_tol: f64,
    pub cond_i: bool,
    /// `(λH)|_K`.
    pub form: RestrictedForm,
    pub cond_ii_inertia: Inertia,
    pub cond_ii: bool,
    pub span: SpanKernel,
}

impl NecessaryReport {
    pub fn holds(&self) -> bool {
        self.cond_i && self.cond_ii
    }
}

struct Prepared {
    data: VariationData,
    x_final: DVector<f64>,
    dphi: DVector<f64>,
    lambda: DVector<f64>,
}

fn prepare(prob: &MeyerProblem, ubar: &ControlSequence) -> Result<Prepared> {
    prob.sys.check_interior(ubar)?;
    let data = variation_data(&prob.sys, &prob.x0, ubar)?;
    let x_final = data.trajectory.final_state().clone();
    let dphi = prob.phi.gradient(&x_final)?;
    let lambda = data.df_ubar.tr_mul(&dphi);
    Ok(Prepared {
        data,
        x_final,
        dphi,
        lambda,
    })
}

/// Span/kernel of a prefix; an all-zero set of variations gives `L = {0}`
/// and `K = ℝ^{tm}`.
fn span_kernel_allowing_zero(y: &[DVector<f64>], n: usize, rank_tol: f64) -> Result<SpanKernel> {
    match span_kernel(y, rank_tol) {
        Err(Error::DegenerateInput(_)) if !y.is_empty() => Ok(SpanKernel {
            l_basis: DMatrix::zeros(n, 0),
            k_basis: DMatrix::identity(y.len(), y.len()),
            lperp_basis: DMatrix::identity(n, n),
            rank: 0,
            tol_used: 0.0,
            singular_values: vec![0.0; n.min(y.len())],
            well_separated: true,
        }),
        other => other,
    }
}

fn necessary_from(p: &Prepared, opts: &VerdictOptions) -> Result<NecessaryReport> {
    let y = &p.data.y;
    let cond_i_residual = y.iter().map(|v| p.lambda.dot(v).abs()).fold(0.0, f64::max);
    let ymax = y.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let cond_i_tol = FIRST_ORDER_TOL * (p.lambda.norm() * ymax).max(1.0);
    let span = span_kernel_allowing_zero(y, p.data.n(), opts.rank_tol)?;
    let form = restrict_form_unchecked(&p.data.hessian, &span, &p.lambda);
    let cond_ii_inertia = Inertia::from_eigenvalues(&form.eigenvalues, opts.eig_tol);
    Ok(NecessaryReport {
        x_final: p.x_final.clone(),
        dphi: p.dphi.clone(),
        lambda: p.lambda.clone(),
        cond_i_residual,
        cond_i_tol,
        cond_i: cond_i_residual <= cond_i_tol,
        cond_ii: cond_ii_inertia.minus == 0,
        cond_ii_inertia,
        form,
        span,
    })
}

/// First-order condition `λYⁱʳ = 0` and second-order condition
/// `(λH)|_K ≥ 0`.
pub fn check_meyer_necessary(
    prob: &MeyerProblem,
    ubar: &ControlSequence,
    opts: &VerdictOptions,
) -> Result<NecessaryReport> {
    necessary_from(&prepare(prob, ubar)?, opts)
}

/// The decomposition `ℝ^{Nm} = K ⊕ K⊥ ⊕ ker A` and the quadratic form
/// `Q̃` on the state space with `SᵀQ̃S = B̃`.
#[derive(Debug, Clone)]
pub struct QForm {
    /// `S = dF(ū)`.
    pub s: DMatrix<f64>,
    /// `A = Σ_a ∂φ/∂x_a ∇²F_a`.
    pub a: DMatrix<f64>,
    pub k_basis: DMatrix<f64>,
    /// `A`-orthogonal complement of `K` inside `E = K ⊕ (K + ker A)^⊥`.
    pub kperp_basis: DMatrix<f64>,
    pub ker_a_basis: DMatrix<f64>,
    pub b_tilde: DMatrix<f64>,
    /// Minimum-norm solution; zero on the orthogonal complement of `Im S`.
    pub q_tilde: DMatrix<f64>,
    /// Orthonormal basis of `L = Im S`.
    pub l_basis: DMatrix<f64>,
    /// `Q̃` in the coordinates of `l_basis`.
    pub q_l: DMatrix<f64>,
    /// `max |SᵀQ̃S − B̃|`.
    pub residual: f64,
    pub min_eig_a_plus_b: f64,
}

fn relative_threshold(m: &DMatrix<f64>, rel: f64) -> f64 {
    rel * m.amax().max(f64::MIN_POSITIVE)
}

fn qform_from(prob: &MeyerProblem, p: &Prepared, opts: &VerdictOptions) -> Result<QForm> {
    let nec = necessary_from(p, opts)?;
    let min_form = nec.form.min_eigenvalue().unwrap_or(f64::INFINITY);
    if !(min_form > opts.eig_tol) {
        return Err(Error::ConditionIIIFails {
            inertia: Inertia::from_eigenvalues(&nec.form.eigenvalues, opts.eig_tol),
        });
    }
    let derivs = endpoint_derivatives(&prob.sys, &prob.x0, &p.data.ubar)?;
    let s = derivs.jacobian.clone();
    let dim = s.ncols();
    let a = {
        let a = derivs.contract(&p.dphi);
        (&a + a.transpose()) * 0.5
    };

    let svd = sorted_svd(&s);
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    let thr = opts.rank_tol * smax.max(f64::MIN_POSITIVE);
    let rank = svd.sigma.iter().filter(|&&v| v > thr).count();
    let k = null_space(&s, thr);

    let (eigs, vecs) = symmetric_eigen(&a);
    let eig_thr = opts.eig_tol.max(relative_threshold(&a, 1e-12));
    let ker_cols: Vec<DVector<f64>> = eigs
        .iter()
        .enumerate()
        .filter(|(_, e)| e.abs() <= eig_thr)
        .map(|(i, _)| vecs.column(i).into_owned())
        .collect();
    let ker_a = if ker_cols.is_empty() {
        DMatrix::zeros(dim, 0)
    } else {
        DMatrix::from_columns(&ker_cols)
    };

    let joined = DMatrix::from_fn(dim, k.ncols() + ker_a.ncols(), |i, j| {
        if j < k.ncols() {
            k[(i, j)]
        } else {
            ker_a[(i, j - k.ncols())]
        }
    });
    let c = orthogonal_complement(&joined, 1e-10);
    let kak = k.transpose() * &a * &k;
    let kperp = if k.ncols() == 0 {
        c.clone()
    } else {
        let solve = kak
            .clone()
            .cholesky()
            .ok_or(Error::ConditionIIIFails {
                inertia: Inertia::from_eigenvalues(&symmetric_eigenvalues(&kak), opts.eig_tol),
            })?
            .solve(&(k.transpose() * &a * &c));
        &c - &k * solve
    };

    let (nk, nc, nz) = (k.ncols(), kperp.ncols(), ker_a.ncols());
    let t = DMatrix::from_fn(dim, nk + nc + nz, |i, j| {
        if j < nk {
            k[(i, j)]
        } else if j < nk + nc {
            kperp[(i, j - nk)]
        } else {
            ker_a[(i, j - nk - nc)]
        }
    });
    if t.ncols() != dim {
        return Err(Error::DegenerateInput(format!(
            "decomposition K ⊕ K⊥ ⊕ ker A has dimension {} instead of {dim}",
            t.ncols()
        )));
    }
    let t_inv = t.clone().try_inverse().ok_or(Error::DegenerateInput(
        "decomposition K ⊕ K⊥ ⊕ ker A is singular".into(),
    ))?;
    let a22 = kperp.transpose() * &a * &kperp;
    let mut b_prime = DMatrix::zeros(dim, dim);
    b_prime.view_mut((nk, nk), (nc, nc)).copy_from(&(-a22));
    let b_tilde = {
        let b = t_inv.transpose() * b_prime * &t_inv;
        (&b + b.transpose()) * 0.5
    };

    let u_r = svd.u.columns(0, rank).into_owned();
    let v_r = svd.v.columns(0, rank).into_owned();
    let sigma_inv = DMatrix::from_diagonal(&DVector::from_iterator(rank, svd.sigma[..rank].iter().map(|s| 1.0 / s)));
    let core = &sigma_inv * v_r.transpose() * &b_tilde * &v_r * &sigma_inv;
    let q_l = (&core + core.transpose()) * 0.5;
    let q_tilde = &u_r * &q_l * u_r.transpose();

    let residual = (s.transpose() * &q_tilde * &s - &b_tilde).amax();
    let min_eig_a_plus_b = symmetric_eigenvalues(&(&a + &b_tilde)).first().copied().unwrap_or(0.0);
    Ok(QForm {
        s,
        a,
        k_basis: k,
        kperp_basis: kperp,
        ker_a_basis: ker_a,
        b_tilde,
        q_tilde,
        l_basis: u_r,
        q_l,
        residual,
        min_eig_a_plus_b,
    })
}

/// Builds the Q-form; requires `(λH)|_K` positive definite.
pub fn qform_construct(prob: &MeyerProblem, ubar: &ControlSequence, opts: &VerdictOptions) -> Result<QForm> {
    qform_from(prob, &prepare(prob, ubar)?, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimalityVerdict {
    LocallyOptimal,
    NotCertified,
}

impl OptimalityVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimalityVerdict::LocallyOptimal => "LocallyOptimal",
            OptimalityVerdict::NotCertified => "NotCertified",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SufficientReport {
    pub necessary: NecessaryReport,
    pub cond_iii_inertia: Inertia,
    /// Smallest eigenvalue of `(λH)|_K`; `None` when `K = {0}`.
    pub cond_iii_min: Option<f64>,
    pub cond_iii: bool,
    /// Smallest eigenvalue of `d²φ(x_N)|_L − Q`.
    pub cond_iv_min: Option<f64>,
    pub cond_iv: bool,
    pub qform: Option<QForm>,
    /// Smallest eigenvalue of `∇²ψ(ū)` by direct differentiation.
    pub psi_hessian_min: f64,
    pub psi_gradient_norm: f64,
    pub verdict: OptimalityVerdict,
    /// Whether a necessary condition, (I) or (II), fails.
    pub necessary_violated: bool,
    pub reason: String,
}

fn form_shape(inertia: &Inertia) -> &'static str {
    if inertia.dim() == 0 {
        "empty"
    } else if inertia.plus > 0 && inertia.minus > 0 {
        "indefinite"
    } else if inertia.minus > 0 {
        if inertia.zero > 0 {
            "negative semidefinite"
        } else {
            "negative definite"
        }
    } else if inertia.zero > 0 {
        // (II) holds but (III) does not
        "marginal"
    } else {
        "positive definite"
    }
}

/// Conditions (III) and (IV) on top of (I), with the direct derivative
/// checks of `ψ`.
pub fn check_meyer_sufficient(
    prob: &MeyerProblem,
    ubar: &ControlSequence,
    opts: &VerdictOptions,
) -> Result<SufficientReport> {
    let prepared = prepare(prob, ubar)?;
    let necessary = necessary_from(&prepared, opts)?;
    let cond_iii_inertia = necessary.cond_ii_inertia;
    let cond_iii_min = necessary.form.min_eigenvalue();
    let cond_iii = cond_iii_min.is_none_or(|e| e > opts.eig_tol);
    let psi_gradient_norm = psi_gradient(prob, ubar)?.norm();
    let psi_hessian_min = symmetric_eigenvalues(&psi_hessian(prob, ubar)?)
        .first()
        .copied()
        .unwrap_or(0.0);

    let mut report = SufficientReport {
        cond_iii_inertia,
        cond_iii_min,
        cond_iii,
        cond_iv_min: None,
        cond_iv: false,
        qform: None,
        psi_hessian_min,
        psi_gradient_norm,
        verdict: OptimalityVerdict::NotCertified,
        necessary_violated: !necessary.holds(),
        reason: String::new(),
        necessary,
    };

    if !report.necessary.cond_i {
        report.reason = format!(
            "(I) fails: max |λ·Y| = {:.3e} exceeds {:.3e}",
            report.necessary.cond_i_residual, report.necessary.cond_i_tol
        );
        return Ok(report);
    }
    if !cond_iii {
        let shape = form_shape(&cond_iii_inertia);
        report.reason = if report.necessary.cond_ii {
            format!("(III) fails: form {shape} (inertia {cond_iii_inertia}); (II) holds")
        } else {
            format!("(III) fails: form {shape} (inertia {cond_iii_inertia}); (II) fails too")
        };
        return Ok(report);
    }

    let qform = qform_from(prob, &prepared, opts)?;
    let d2phi = prob.phi.hessian(&prepared.x_final)?;
    let on_l = qform.l_basis.transpose() * d2phi * &qform.l_basis - &qform.q_l;
    let cond_iv_min = symmetric_eigenvalues(&on_l).first().copied();
    report.cond_iv = cond_iv_min.is_none_or(|e| e > opts.eig_tol);
    report.cond_iv_min = cond_iv_min;
    report.qform = Some(qform);
    if report.cond_iv {
        report.verdict = OptimalityVerdict::LocallyOptimal;
        report.reason = "(I), (III) and (IV) hold".into();
        if !(psi_hessian_min > 0.0) {
            report.reason.push_str(&format!(
                "; direct Hessian of the objective has smallest eigenvalue {psi_hessian_min:e}"
            ));
        }
    } else {
        report.reason = format!(
            "(IV) fails: smallest eigenvalue of d²φ|_L − Q is {:.3e}",
            cond_iv_min.unwrap_or(f64::NAN)
        );
    }
    Ok(report)
}

/// Costate trajectory `p_N = dφ(x_N)`, `p_{t−1} = p_t ∂f/∂x(x_{t−1}, u_t)`
/// with the per-step checks.
#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    pub xs: Vec<DVector<f64>>,
    pub ps: Vec<DVector<f64>>,
    /// `‖p_t ∂f/∂u(x_{t−1}, u_t)‖` for `t = 1..N`.
    pub cc_residuals: Vec<f64>,
    /// Inertia of `p_0 Hᵗ` on `Kᵗ` for `t = 1..N`.
    pub so_results: Vec<Inertia>,
    /// `codim Lᵗ` for `t = 1..N`.
    pub codims: Vec<usize>,
    pub lambda: DVector<f64>,
}

impl AdjointTrajectory {
    /// Whether `Ind⁻(p_0 Hᵗ)|_{Kᵗ} < codim Lᵗ` at prefix `t` (one-based).
    pub fn index_condition(&self, t: usize) -> bool {
        self.so_results[t - 1].minus < self.codims[t - 1]
    }
}

/// Per-prefix span/kernel data `t = 1..N`.
pub fn prefix_spans(data: &VariationData, rank_tol: f64) -> Result<Vec<(VariationData, SpanKernel)>> {
    (1..=data.ubar.len())
        .map(|t| {
            let d = data.prefix(t);
            let sk = span_kernel_allowing_zero(&d.y, d.n(), rank_tol)?;
            Ok((d, sk))
        })
        .collect()
}

pub fn adjoint_chain(prob: &MeyerProblem, ubar: &ControlSequence, opts: &VerdictOptions) -> Result<AdjointTrajectory> {
    let data = variation_data(&prob.sys, &prob.x0, ubar)?;
    let xs = data.trajectory.states.clone();
    let steps = ubar.len();
    let mut ps = vec![DVector::zeros(prob.sys.n()); steps + 1];
    ps[steps] = prob.phi.gradient(&xs[steps])?;
    for t in (1..=steps).rev() {
        ps[t - 1] = data.step_jacobians[t - 1].tr_mul(&ps[t]);
    }
    let cc_residuals = (1..=steps)
        .map(|t| data.control_jacobians[t - 1].tr_mul(&ps[t]).norm())
        .collect();
    let lambda = ps[0].clone();
    let prefixes = prefix_spans(&data, opts.rank_tol)?;
    let so_results = prefixes
        .iter()
        .map(|(d, sk)| {
            let rf = restrict_form_unchecked(&d.hessian, sk, &lambda);
            Inertia::from_eigenvalues(&rf.eigenvalues, opts.eig_tol)
        })
        .collect();
    Ok(AdjointTrajectory {
        xs,
        ps,
        cc_residuals,
        so_results,
        codims: prefixes.iter().map(|(_, sk)| sk.codim()).collect(),
        lambda,
    })
}

/// Per-prefix `(Ind⁻(λHᵗ)|_{Kᵗ}, codim Lᵗ)` for one sampled covector.
#[derive(Debug, Clone)]
pub struct IndexCodimSample {
    pub lambda: DVector<f64>,
    pub pairs: Vec<(usize, usize)>,
    /// First prefix `t` (one-based) where `Ind⁻ ≥ codim`.
    pub first_failure: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct GeometricReport {
    pub codims: Vec<usize>,
    pub samples: Vec<IndexCodimSample>,
    /// First prefix whose first variations span the state space.
    pub full_rank_prefix: Option<usize>,
    /// Some sampled covector satisfies the index condition at every prefix.
    pub consistent: bool,
}

/// The index-codimension test on every prefix for covectors sampled from
/// the unit sphere of `(L^N)⊥`.
pub fn check_geometric_hamiltonian(
    sys: &DiscreteSystem,
    x0: &DVector<f64>,
    ubar: &ControlSequence,
    opts: &VerdictOptions,
) -> Result<GeometricReport> {
    sys.check_interior(ubar)?;
    let data = variation_data(sys, x0, ubar)?;
    let prefixes = prefix_spans(&data, opts.rank_tol)?;
    let codims: Vec<usize> = prefixes.iter().map(|(_, sk)| sk.codim()).collect();
    let full_rank_prefix = codims.iter().position(|&c| c == 0).map(|t| t + 1);
    if full_rank_prefix.is_some() {
        return Ok(GeometricReport {
            codims,
            samples: Vec::new(),
            full_rank_prefix,
            consistent: false,
        });
    }
    let last = &prefixes.last().expect("nonempty sequence").1;
    let samples: Vec<IndexCodimSample> = sphere_points(last.codim(), opts)
        .iter()
        .map(|c| {
            let lambda = &last.lperp_basis * c;
            let pairs: Vec<(usize, usize)> = prefixes
                .iter()
                .map(|(d, sk)| {
                    let rf = restrict_form_unchecked(&d.hessian, sk, &lambda);
                    (
                        Inertia::from_eigenvalues(&rf.eigenvalues, opts.eig_tol).minus,
                        sk.codim(),
                    )
                })
                .collect();
            let first_failure = pairs.iter().position(|(ind, codim)| ind >= codim).map(|t| t + 1);
            IndexCodimSample {
                lambda,
                pairs,
                first_failure,
            }
        })
        .collect();
    let consistent = samples.iter().any(|s| s.first_failure.is_none());
    Ok(GeometricReport {
        codims,
        samples,
        full_rank_prefix,
        consistent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprdsl::{parse_expr, VarScope};
    use crate::system::builtin::{example_r3, linear_generic};
    use nalgebra::dvector;

    fn phi(src: &str, n: usize) -> FinalCost {
        FinalCost::Expr(parse_expr(src, VarScope { n, m: 0 }).unwrap())
    }

    #[test]
    fn final_cost_derivatives() {
        let f = phi("x1^2*x2 + 3*x2", 2);
        let x = dvector![2.0, -1.0];
        assert_eq!(f.value(&x).unwrap(), -7.0);
        assert_eq!(f.gradient(&x).unwrap(), dvector![-4.0, 7.0]);
        assert_eq!(
            f.hessian(&x).unwrap(),
            DMatrix::from_row_slice(2, 2, &[-2.0, 4.0, 4.0, 0.0])
        );
        let q = FinalCost::Quadratic {
            linear: dvector![1.0, 0.0],
            hessian: DMatrix::identity(2, 2) * 2.0,
            center: dvector![0.0, 1.0],
        };
        assert_eq!(q.value(&x).unwrap(), 2.0 + 4.0 + 4.0);
        assert_eq!(q.gradient(&x).unwrap(), dvector![5.0, -4.0]);
        assert_eq!(q.hessian(&x).unwrap(), DMatrix::identity(2, 2) * 2.0);
    }

    #[test]
    fn lambda_on_identity_and_linear() {
        let id = DiscreteSystem::parse("id", "dims 2 1\nf1 = x1\nf2 = x2 + 0*u1\n").unwrap();
        let dphi = dvector![0.3, -2.0];
        let l = lambda_covector(&id, &dvector![1.0, 1.0], &ControlSequence::scalar(&[0.5, 0.1]), &dphi).unwrap();
        assert_eq!(l, dphi);

        let sys = linear_generic();
        let a = sys.jac_x(&dvector![0.0, 0.0, 0.0], &dvector![0.0]).unwrap();
        let l = lambda_covector(
            &sys,
            &dvector![0.1, 0.2, 0.3],
            &ControlSequence::scalar(&[1.0, 2.0, 3.0]),
            &dphi.push(1.0),
        )
        .unwrap();
        let want = (a.transpose() * a.transpose() * a.transpose()) * dvector![0.3, -2.0, 1.0];
        assert!((l - want).amax() < 1e-14);
    }

    #[test]
    fn endpoint_derivatives_match_gradients() {
        let sys = example_r3();
        let ubar = ControlSequence::scalar(&[0.4, -1.0, 0.7]);
        let x0 = dvector![0.2, 0.5, -0.3];
        let d = endpoint_derivatives(&sys, &x0, &ubar).unwrap();
        let (v, j) = endpoint_jacobian(&sys, &x0, &ubar).unwrap();
        assert_eq!(v, d.value);
        assert_eq!(j, d.jacobian);
        let data = variation_data(&sys, &x0, &ubar).unwrap();
        assert!((j - &data.df_ubar * data.y_matrix()).amax() < 1e-12);
    }

    #[test]
    fn constant_cost_is_degenerate() {
        let prob = MeyerProblem::new(example_r3(), dvector![1.0, 0.0, 0.0], phi("3", 3)).unwrap();
        let ubar = ControlSequence::scalar(&[0.0, 1.0, 0.0, 1.0]);
        let opts = VerdictOptions::default();
        let nec = check_meyer_necessary(&prob, &ubar, &opts).unwrap();
        assert!(nec.holds());
        assert_eq!(nec.lambda, DVector::zeros(3));
        let suf = check_meyer_sufficient(&prob, &ubar, &opts).unwrap();
        assert_eq!(suf.verdict, OptimalityVerdict::NotCertified);
        assert!(!suf.necessary_violated);
        assert!(suf.reason.starts_with("(III) fails"));
    }

    #[test]
    fn full_rank_linear_qform_is_zero() {
        let prob = MeyerProblem::new(linear_generic(), dvector![0.0, 0.0, 0.0], phi("5", 3)).unwrap();
        let ubar = ControlSequence::scalar(&[0.1, 0.2, 0.3]);
        let q = qform_construct(&prob, &ubar, &VerdictOptions::default()).unwrap();
        assert_eq!(q.k_basis.ncols(), 0);
        assert!(q.b_tilde.amax() < 1e-14 && q.q_tilde.amax() < 1e-14);
    }

    #[test]
    fn bolza_constant_and_zero_costs() {
        let base = example_r3();
        let x0 = dvector![0.3, -0.2, 0.5];
        let ubar = ControlSequence::scalar(&[0.5, 1.0, -0.25]);
        let cost = phi("x1*x2 + x3^2", 3);
        let meyer = MeyerProblem::new(base.clone(), x0.clone(), cost.clone()).unwrap();
        let plain = meyer.objective(&ubar).unwrap();
        for (c, extra) in [("0", 0.0), ("1", 3.0)] {
            let bp = BolzaProblem {
                sys: base.clone(),
                x0: x0.clone(),
                phi: cost.clone(),
                running_cost: parse_expr(c, VarScope { n: 3, m: 1 }).unwrap(),
            };
            let reduced = bolza_reduce(&bp).unwrap();
            assert_eq!(reduced.sys.n(), 4);
            assert!((reduced.objective(&ubar).unwrap() - plain - extra).abs() < 1e-12);
        }
    }

    #[test]
    fn bolza_inverse_recovers_running_cost() {
        let bp = BolzaProblem {
            sys: example_r3(),
            x0: dvector![0.3, -0.2, 0.5],
            phi: phi("x1", 3),
            running_cost: parse_expr("x1*u1 + x3^2", VarScope { n: 3, m: 1 }).unwrap(),
        };
        let reduced = bolza_reduce(&bp).unwrap();
        let x = dvector![1.5, 0.3, -0.2, 0.5];
        let u = dvector![0.7];
        let y = reduced.sys.step(&x, &u).unwrap();
        assert!((reduced.sys.inverse_step(&y, &u, None).unwrap() - x).amax() < 1e-12);
    }
}
