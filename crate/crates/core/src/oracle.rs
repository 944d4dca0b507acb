//! Independent checks: finite differences of the endpoint map, Monte-Carlo
//! probing of the reachable set, and a gradient-descent minimizer used to
//! produce critical points for the optimality checks.
//!
//! None of these override an analytic verdict; they only cross-check one.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::analysis::VerdictOptions;
use crate::error::{Error, Result};
use crate::optimal::{lambda_covector, psi_gradient, qform_construct, FinalCost, MeyerProblem};
use crate::system::{ControlSequence, DiscreteSystem};

pub const FD_JACOBIAN_STEP: f64 = 1e-5;
pub const FD_HESSIAN_STEP: f64 = 1e-4;
/// Lower bound on the first-difference norm (relative to `‖a‖`) that is
/// always tolerated by [`fd_hessian_on_kernel`].
pub const KERNEL_FLOOR: f64 = 1e-6;
/// Default number of random unit directions added to `±eᵢ`.
pub const DEFAULT_RANDOM_DIRECTIONS: usize = 50;
/// `coverage_floor = COVERAGE_FLOOR_FACTOR · radius²` unless overridden.
pub const COVERAGE_FLOOR_FACTOR: f64 = 1e-4;
/// A direction counts as well covered at this multiple of the floor.
pub const WELL_COVERED_FACTOR: f64 = 10.0;
/// Level-set values down to this are treated as one-sided.
pub const LEVEL_SET_TOL: f64 = 1e-6;
/// Default `ε` added to `Q̃` in [`level_set_certificate`].
pub const LEVEL_SET_EPSILON: f64 = 1.0;

/// `F(ū) = f_ū(x_0)` on flattened control vectors.
#[derive(Debug, Clone)]
pub struct EndpointMap<'a> {
    pub sys: &'a DiscreteSystem,
    pub x0: DVector<f64>,
    pub steps: usize,
}

impl<'a> EndpointMap<'a> {
    pub fn new(sys: &'a DiscreteSystem, x0: DVector<f64>, steps: usize) -> Self {
        Self { sys, x0, steps }
    }

    pub fn dim(&self) -> usize {
        self.steps * self.sys.m()
    }

    pub fn eval(&self, flat: &DVector<f64>) -> Result<DVector<f64>> {
        if flat.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "endpoint map takes {} controls, got {}",
                self.dim(),
                flat.len()
            )));
        }
        let ubar = ControlSequence::from_flat(self.sys.m(), flat.as_slice())?;
        Ok(self.sys.rollout(&self.x0, &ubar)?.final_state().clone())
    }
}

fn central(f: &EndpointMap, base: &DVector<f64>, dir: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    Ok((f.eval(&(base + dir * h))? - f.eval(&(base - dir * h))?) / (2.0 * h))
}

/// Central differences with one Richardson extrapolation, column per
/// control coordinate.
pub fn fd_jacobian(f: &EndpointMap, ubar: &ControlSequence) -> Result<DMatrix<f64>> {
    let base = ubar.flatten();
    let dim = f.dim();
    let mut jac = DMatrix::zeros(f.sys.n(), dim);
    for p in 0..dim {
        let mut e = DVector::zeros(dim);
        e[p] = 1.0;
        let coarse = central(f, &base, &e, FD_JACOBIAN_STEP)?;
        let fine = central(f, &base, &e, FD_JACOBIAN_STEP / 2.0)?;
        jac.set_column(p, &((fine * 4.0 - coarse) / 3.0));
    }
    Ok(jac)
}

/// Second derivative of `ε ↦ F(ū + εa)` at zero. Fails with
/// `KernelViolation` when the first-order term dominates, i.e. `a` is not
/// in the kernel of `dF(ū)`.
pub fn fd_hessian_on_kernel(f: &EndpointMap, ubar: &ControlSequence, a: &DVector<f64>) -> Result<DVector<f64>> {
    let base = ubar.flatten();
    if a.len() != base.len() {
        return Err(Error::DimensionMismatch(format!(
            "direction of length {} for {} controls",
            a.len(),
            base.len()
        )));
    }
    let n = f.sys.n();
    if a.amax() == 0.0 {
        return Ok(DVector::zeros(n));
    }
    let center = f.eval(&base)?;
    let second = |h: f64| -> Result<(DVector<f64>, DVector<f64>)> {
        let plus = f.eval(&(&base + a * h))?;
        let minus = f.eval(&(&base - a * h))?;
        Ok(((&plus - &minus) / (2.0 * h), (plus + minus - &center * 2.0) / (h * h)))
    };
    let h = FD_HESSIAN_STEP;
    let (first, coarse) = second(h)?;
    let (_, fine) = second(h / 2.0)?;
    let d2 = (fine * 4.0 - coarse) / 3.0;
    let first_order = first.norm();
    if first_order > (h * d2.norm()).max(KERNEL_FLOOR * a.norm()) {
        return Err(Error::KernelViolation { first_order });
    }
    Ok(d2)
}

/// One-sidedness test for a covector with a quadratic correction:
/// `λ̃·Δ + ½ ΔᵀMΔ` on `Δ = F(v) − F(ū)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    pub lambda: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl LevelSet {
    pub fn value(&self, delta: &DVector<f64>) -> f64 {
        self.lambda.dot(delta) + 0.5 * delta.dot(&(&self.hessian * delta))
    }
}

/// Builds the level set of the cost `φ̃(x) = λ̃x + ½(x − x_N)ᵀ(Q̃ + εI)(x − x_N)`
/// for a covector `λ` at `x_0` whose restricted form is positive definite:
/// `λ̃ = λ (df_ū(x_0))⁻¹`, and `Q̃` is the Q-form of the linear cost `λ̃x`.
pub fn level_set_certificate(
    sys: &DiscreteSystem,
    x0: &DVector<f64>,
    ubar: &ControlSequence,
    lambda: &DVector<f64>,
    epsilon: f64,
    opts: &VerdictOptions,
) -> Result<LevelSet> {
    let n = sys.n();
    let traj = sys.rollout(x0, ubar)?;
    let mut chain = DMatrix::identity(n, n);
    for (x, u) in traj.states.iter().zip(ubar.steps()) {
        chain = sys.jac_x(x, u)? * chain;
    }
    let lambda_tilde = chain.transpose().lu().solve(lambda).ok_or(Error::SingularJacobian {
        condition: f64::INFINITY,
    })?;
    let linear = MeyerProblem::new(
        sys.clone(),
        x0.clone(),
        FinalCost::Quadratic {
            linear: lambda_tilde.clone(),
            hessian: DMatrix::zeros(n, n),
            center: DVector::zeros(n),
        },
    )?;
    let q = qform_construct(&linear, ubar, opts)?;
    Ok(LevelSet {
        lambda: lambda_tilde,
        hessian: q.q_tilde + DMatrix::identity(n, n) * epsilon,
    })
}

/// The final cost whose level set is `level` around `x_final`.
pub fn level_set_cost(level: &LevelSet, x_final: &DVector<f64>) -> FinalCost {
    FinalCost::Quadratic {
        linear: level.lambda.clone(),
        hessian: level.hessian.clone(),
        center: x_final.clone(),
    }
}

#[derive(Debug, Clone)]
pub struct ReachProbe {
    /// Half-width of the control box around `ū`.
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
    pub random_directions: usize,
    /// Defaults to `COVERAGE_FLOOR_FACTOR · radius²`.
    pub coverage_floor: Option<f64>,
    pub level_set: Option<LevelSet>,
}

impl ReachProbe {
    pub fn new(radius: f64, samples: usize, seed: u64) -> Self {
        Self {
            radius,
            samples,
            seed,
            random_directions: DEFAULT_RANDOM_DIRECTIONS,
            coverage_floor: None,
            level_set: None,
        }
    }

    pub fn with_level_set(mut self, level: LevelSet) -> Self {
        self.level_set = Some(level);
        self
    }

    pub fn floor(&self) -> f64 {
        self.coverage_floor
            .unwrap_or(COVERAGE_FLOOR_FACTOR * self.radius * self.radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmpiricalVerdict {
    InteriorLikely,
    BoundaryLikely,
    Ambiguous,
}

impl EmpiricalVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            EmpiricalVerdict::InteriorLikely => "InteriorLikely",
            EmpiricalVerdict::BoundaryLikely => "BoundaryLikely",
            EmpiricalVerdict::Ambiguous => "Ambiguous",
        }
    }
}

impl fmt::Display for EmpiricalVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub directions: Vec<DVector<f64>>,
    /// Per direction, the largest `d·(F(v) − F(ū))` over samples.
    pub coverage: Vec<f64>,
    pub min_directional_coverage: f64,
    pub coverage_floor: f64,
    /// Smallest level-set value over samples, when a level set was given.
    pub level_set_min: Option<f64>,
    /// Samples that evaluated successfully.
    pub samples_used: usize,
    pub verdict: EmpiricalVerdict,
}

fn probe_directions(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let mut dirs = Vec::with_capacity(2 * n + count);
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut e = DVector::zeros(n);
            e[i] = s;
            dirs.push(e);
        }
    }
    while dirs.len() < 2 * n + count {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-12 {
            dirs.push(v / norm);
        }
    }
    dirs
}

/// Samples `v` uniformly in `ū ± radius` (clipped to the control box) and
/// records how far `F(v)` moves along each direction.
pub fn probe_interior(f: &EndpointMap, ubar: &ControlSequence, probe: &ReachProbe) -> Result<ProbeReport> {
    let base = ubar.flatten();
    let center = f.eval(&base)?;
    let n = center.len();
    let m = f.sys.m();
    let mut rng = ChaCha8Rng::seed_from_u64(probe.seed);
    let directions = probe_directions(n, probe.random_directions, &mut rng);
    let bounds: Vec<(f64, f64)> = (0..base.len())
        .map(|p| {
            let (mut lo, mut hi) = (base[p] - probe.radius, base[p] + probe.radius);
            if let Some((blo, bhi)) = f.sys.u_box()[p % m] {
                lo = lo.max(blo);
                hi = hi.min(bhi);
            }
            (lo, hi)
        })
        .collect();

    let mut coverage = vec![f64::NEG_INFINITY; directions.len()];
    let mut level_min = probe.level_set.as_ref().map(|_| f64::INFINITY);
    let mut used = 0;
    for _ in 0..probe.samples {
        let v = DVector::from_iterator(
            base.len(),
            bounds
                .iter()
                .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..hi) } else { lo }),
        );
        // samples where the rollout fails are skipped, not counted
        let Ok(x) = f.eval(&v) else { continue };
        used += 1;
        let delta = x - &center;
        for (c, d) in coverage.iter_mut().zip(&directions) {
            *c = c.max(d.dot(&delta));
        }
        if let (Some(level), Some(min)) = (&probe.level_set, level_min.as_mut()) {
            *min = min.min(level.value(&delta));
        }
    }

    let floor = probe.floor();
    let min_cov = coverage.iter().copied().fold(f64::INFINITY, f64::min);
    let verdict = if level_min.is_some_and(|v| v >= -LEVEL_SET_TOL) {
        EmpiricalVerdict::BoundaryLikely
    } else if min_cov >= floor {
        EmpiricalVerdict::InteriorLikely
    } else {
        let one_sided = directions.iter().enumerate().any(|(i, d)| {
            coverage[i] < floor
                && directions
                    .iter()
                    .zip(&coverage)
                    .any(|(e, &c)| (e + d).amax() < 1e-12 && c >= WELL_COVERED_FACTOR * floor)
        });
        if one_sided {
            EmpiricalVerdict::BoundaryLikely
        } else {
            EmpiricalVerdict::Ambiguous
        }
    };
    Ok(ProbeReport {
        directions,
        coverage,
        min_directional_coverage: min_cov,
        coverage_floor: floor,
        level_set_min: level_min,
        samples_used: used,
        verdict,
    })
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub ubar: ControlSequence,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const MINIMIZE_GRADIENT_TOL: f64 = 1e-10;
pub const MINIMIZE_MAX_ITERATIONS: usize = 10_000;

/// Gradient descent with Barzilai–Borwein steps safeguarded by Armijo
/// backtracking, until `‖∇ψ‖ < 1e-10` or the iteration cap. Not converging
/// is reported through `converged`, not as an error.
pub fn minimize_psi(prob: &MeyerProblem, u_init: &ControlSequence) -> Result<MinimizeResult> {
    let m = u_init.m();
    let objective = |u: &DVector<f64>| -> Result<f64> { prob.objective(&ControlSequence::from_flat(m, u.as_slice())?) };
    let gradient = |u: &DVector<f64>| -> Result<DVector<f64>> {
        psi_gradient(prob, &ControlSequence::from_flat(m, u.as_slice())?)
    };

    let mut u = u_init.flatten();
    let mut value = objective(&u)?;
    let mut grad = gradient(&u)?;
    let mut step = 1.0 / grad.amax().max(1.0);
    let mut iterations = 0;
    while grad.norm() >= MINIMIZE_GRADIENT_TOL && iterations < MINIMIZE_MAX_ITERATIONS {
        iterations += 1;
        let gg = grad.norm_squared();
        let mut t = step;
        let (next, next_value) = loop {
            let cand = &u - &grad * t;
            match objective(&cand) {
                Ok(v) if v <= value - 1e-4 * t * gg => break (cand, v),
                _ if t < 1e-20 => break (u.clone(), value),
                _ => t *= 0.5,
            }
        };
        if next == u {
            break;
        }
        let next_grad = gradient(&next)?;
        let s = &next - &u;
        let y = &next_grad - &grad;
        let sy = s.dot(&y);
        step = if sy > 0.0 { s.norm_squared() / sy } else { t * 2.0 };
        u = next;
        value = next_value;
        grad = next_grad;
    }
    let gradient_norm = grad.norm();
    Ok(MinimizeResult {
        ubar: ControlSequence::from_flat(m, u.as_slice())?,
        value,
        gradient_norm,
        iterations,
        converged: gradient_norm < MINIMIZE_GRADIENT_TOL,
    })
}

/// `λ` of a minimizer, for convenience in reports.
pub fn minimizer_lambda(prob: &MeyerProblem, result: &MinimizeResult) -> Result<DVector<f64>> {
    let x_final = prob.sys.rollout(&prob.x0, &result.ubar)?.final_state().clone();
    lambda_covector(&prob.sys, &prob.x0, &result.ubar, &prob.phi.gradient(&x_final)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::builtin::linear_generic;
    use nalgebra::dvector;

    #[test]
    fn jacobian_of_linear_chain() {
        let sys = linear_generic();
        let f = EndpointMap::new(&sys, dvector![0.1, -0.2, 0.3], 3);
        let ubar = ControlSequence::scalar(&[0.5, -1.0, 2.0]);
        let jac = fd_jacobian(&f, &ubar).unwrap();
        let a = sys.jac_x(&dvector![0.0, 0.0, 0.0], &dvector![0.0]).unwrap();
        let b = dvector![0.0, 0.0, 1.0];
        for i in 0..3 {
            let mut col = b.clone();
            for _ in 0..(2 - i) {
                col = &a * col;
            }
            assert!((jac.column(i) - col).amax() < 1e-9);
        }
    }

    #[test]
    fn jacobian_of_shift() {
        let sys = DiscreteSystem::parse("shift", "dims 2 1\nf1 = x1 + 2*u1\nf2 = x2 - u1\n").unwrap();
        let f = EndpointMap::new(&sys, dvector![0.0, 0.0], 1);
        let jac = fd_jacobian(&f, &ControlSequence::scalar(&[0.3])).unwrap();
        assert!((jac.column(0) - dvector![2.0, -1.0]).amax() < 1e-10);
    }

    #[test]
    fn hessian_on_kernel_edge_cases() {
        let sys = linear_generic();
        let f = EndpointMap::new(&sys, dvector![0.1, -0.2, 0.3], 4);
        let ubar = ControlSequence::scalar(&[0.5, -1.0, 2.0, 0.1]);
        assert_eq!(
            fd_hessian_on_kernel(&f, &ubar, &DVector::zeros(4)).unwrap(),
            DVector::zeros(3)
        );
        // columns are A³b, A²b, Ab, b and (A − I)³ = 0 for this chain
        let a = dvector![1.0, -3.0, 3.0, -1.0];
        assert!(fd_hessian_on_kernel(&f, &ubar, &a).unwrap().amax() < 1e-6);
        let err = fd_hessian_on_kernel(&f, &ubar, &dvector![1.0, 0.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::KernelViolation { .. }));
    }

    #[test]
    fn linear_controllable_system_is_interior() {
        let sys = linear_generic();
        let f = EndpointMap::new(&sys, dvector![0.0, 0.0, 0.0], 3);
        let ubar = ControlSequence::scalar(&[0.1, 0.2, 0.3]);
        let report = probe_interior(&f, &ubar, &ReachProbe::new(0.05, 2000, 1)).unwrap();
        assert_eq!(report.verdict, EmpiricalVerdict::InteriorLikely);
        assert_eq!(report.samples_used, 2000);
        let again = probe_interior(&f, &ubar, &ReachProbe::new(0.05, 2000, 1)).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn samples_respect_control_box() {
        let sys = DiscreteSystem::parse("boxed", "dims 1 1\nf1 = x1 + u1\nubox1 = -1 0.02\n").unwrap();
        let f = EndpointMap::new(&sys, dvector![0.0], 1);
        let ubar = ControlSequence::scalar(&[0.0]);
        let report = probe_interior(&f, &ubar, &ReachProbe::new(0.05, 500, 3)).unwrap();
        // the +e direction is limited by the box edge at 0.02
        assert!(report.coverage[0] <= 0.02);
        assert!(report.coverage[1] > 0.04);
    }

    #[test]
    fn minimizes_convex_quadratic_on_linear_system() {
        let sys = linear_generic();
        let target = dvector![1.0, -0.5, 0.25];
        let prob = MeyerProblem::new(
            sys,
            dvector![0.0, 0.0, 0.0],
            FinalCost::Quadratic {
                linear: DVector::zeros(3),
                hessian: DMatrix::identity(3, 3),
                center: target.clone(),
            },
        )
        .unwrap();
        let res = minimize_psi(&prob, &ControlSequence::scalar(&[0.0, 0.0, 0.0])).unwrap();
        assert!(res.converged, "{res:?}");
        let reached = prob.sys.rollout(&prob.x0, &res.ubar).unwrap();
        assert!((reached.final_state() - target).amax() < 1e-8);
    }
}
