//! Span, kernel and annihilator of the first variations, restriction of the
//! Hessian form to the kernel, and the controllability verdict.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{null_space, sorted_svd, symmetric_eigenvalues};
use crate::system::{ControlSequence, DiscreteSystem};
use crate::variation::{variation_data, HessianForm, VariationData};

pub const DEFAULT_RANK_TOL: f64 = 1e-8;
pub const DEFAULT_EIG_TOL: f64 = 1e-9;
/// Retained singular values must exceed the rank threshold by this factor
/// (and dropped ones sit below it by the same factor) before a rank is
/// trusted for certification.
pub const SPECTRAL_GAP_FACTOR: f64 = 1e3;
/// Relative residual allowed when checking that a covector annihilates L.
pub const ANNIHILATOR_TOL: f64 = 1e-6;

/// Eigenvalue counts `(n₊, n₀, n₋)` of a symmetric form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub plus: usize,
    pub zero: usize,
    pub minus: usize,
}

impl Inertia {
    pub fn from_eigenvalues(eigenvalues: &[f64], eig_tol: f64) -> Self {
        let mut out = Inertia::default();
        for &e in eigenvalues {
            if e > eig_tol {
                out.plus += 1;
            } else if e < -eig_tol {
                out.minus += 1;
            } else {
                out.zero += 1;
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.plus + self.zero + self.minus
    }

    pub fn is_positive_definite(&self) -> bool {
        self.zero == 0 && self.minus == 0
    }
}

impl fmt::Display for Inertia {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.plus, self.zero, self.minus)
    }
}

/// Orthonormal bases of `L = span{Yⁱʳ}`, of the kernel `K ⊂ ℝ^{Nm}` of
/// `a ↦ Σ aᵢʳ Yⁱʳ`, and of the annihilator `L⊥` (covectors as columns).
#[derive(Debug, Clone)]
pub struct SpanKernel {
    pub l_basis: DMatrix<f64>,
    pub k_basis: DMatrix<f64>,
    pub lperp_basis: DMatrix<f64>,
    pub rank: usize,
    /// Absolute singular-value threshold, `rel_tol · σ_max`.
    pub tol_used: f64,
    pub singular_values: Vec<f64>,
    /// Whether the retained and dropped singular values are separated by
    /// [`SPECTRAL_GAP_FACTOR`] on either side of the threshold.
    pub well_separated: bool,
}

impl SpanKernel {
    pub fn n(&self) -> usize {
        self.l_basis.nrows()
    }

    pub fn codim(&self) -> usize {
        self.n() - self.rank
    }

    pub fn kernel_dim(&self) -> usize {
        self.k_basis.ncols()
    }

    /// `σ_rank / threshold`, or infinity when nothing is dropped.
    pub fn spectral_gap(&self) -> f64 {
        match (self.rank, self.singular_values.get(self.rank)) {
            (0, _) => 0.0,
            (r, Some(&next)) if next > 0.0 => self.singular_values[r - 1] / next,
            _ => f64::INFINITY,
        }
    }
}

pub fn span_kernel(y: &[DVector<f64>], rel_tol: f64) -> Result<SpanKernel> {
    if y.is_empty() {
        return Err(Error::DegenerateInput("no first variations".into()));
    }
    let n = y[0].len();
    let ymat = DMatrix::from_columns(y);
    let svd = sorted_svd(&ymat);
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Err(Error::DegenerateInput("all first variations vanish".into()));
    }
    let tol_used = rel_tol * smax;
    let rank = svd.sigma.iter().filter(|&&s| s > tol_used).count();
    let well_separated = svd.sigma[rank - 1] >= SPECTRAL_GAP_FACTOR * tol_used
        && svd.sigma.get(rank).is_none_or(|&s| s * SPECTRAL_GAP_FACTOR <= tol_used);
    let l_basis = svd.u.columns(0, rank).into_owned();
    let k_basis = null_space(&ymat, tol_used);
    let lperp_basis = null_space(&ymat.transpose(), tol_used);
    debug_assert_eq!(rank + k_basis.ncols(), y.len());
    debug_assert_eq!(rank + lperp_basis.ncols(), n);
    Ok(SpanKernel {
        l_basis,
        k_basis,
        lperp_basis,
        rank,
        tol_used,
        singular_values: svd.sigma,
        well_separated,
    })
}

/// The symmetric matrix of `λH` in the coordinates of `basis` (columns).
pub fn restrict_to_basis(h: &HessianForm, basis: &DMatrix<f64>, lambda: &DVector<f64>) -> DMatrix<f64> {
    let c = h.contract(lambda);
    let m = basis.transpose() * c * basis;
    (&m + m.transpose()) * 0.5
}

#[derive(Debug, Clone)]
pub struct RestrictedForm {
    pub lambda: DVector<f64>,
    pub matrix: DMatrix<f64>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
}

impl RestrictedForm {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn min_eigenvalue(&self) -> Option<f64> {
        self.eigenvalues.first().copied()
    }

    /// Value of the form at `K_basis · c`.
    pub fn eval(&self, c: &DVector<f64>) -> f64 {
        c.dot(&(&self.matrix * c))
    }
}

/// Relative distance of `lambda` from the span of `L⊥`.
pub fn annihilator_residual(sk: &SpanKernel, lambda: &DVector<f64>) -> f64 {
    let norm = lambda.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let p = &sk.lperp_basis;
    (lambda - p * (p.transpose() * lambda)).norm() / norm
}

/// `(λH)|_K` without checking that `λ ∈ L⊥`.
pub fn restrict_form_unchecked(h: &HessianForm, sk: &SpanKernel, lambda: &DVector<f64>) -> RestrictedForm {
    let matrix = restrict_to_basis(h, &sk.k_basis, lambda);
    let eigenvalues = symmetric_eigenvalues(&matrix);
    RestrictedForm {
        lambda: lambda.clone(),
        matrix,
        eigenvalues,
    }
}

pub fn restrict_form(h: &HessianForm, sk: &SpanKernel, lambda: &DVector<f64>) -> Result<RestrictedForm> {
    let residual = annihilator_residual(sk, lambda);
    if residual > ANNIHILATOR_TOL {
        return Err(Error::LambdaNotInAnnihilator { residual });
    }
    Ok(restrict_form_unchecked(h, sk, lambda))
}

pub fn index_pair(rf: &RestrictedForm, eig_tol: f64) -> Inertia {
    Inertia::from_eigenvalues(&rf.eigenvalues, eig_tol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerdictOptions {
    pub rank_tol: f64,
    pub eig_tol: f64,
    /// Points on the unit circle of `L⊥` when `k = 2`.
    pub circle_samples: usize,
    /// Points on the unit sphere of `L⊥` when `k ≥ 3`.
    pub sphere_samples: usize,
    /// Seed for the random sphere samples used when `k > 3`.
    pub seed: u64,
}

impl Default for VerdictOptions {
    fn default() -> Self {
        Self {
            rank_tol: DEFAULT_RANK_TOL,
            eig_tol: DEFAULT_EIG_TOL,
            circle_samples: 64,
            sphere_samples: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerdictStatus {
    CertifiedControllable,
    CertifiedNotControllable,
    FullRankControllable,
    Inconclusive,
}

impl VerdictStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            VerdictStatus::CertifiedControllable => "CertifiedControllable",
            VerdictStatus::CertifiedNotControllable => "CertifiedNotControllable",
            VerdictStatus::FullRankControllable => "FullRankControllable",
            VerdictStatus::Inconclusive => "Inconclusive",
        }
    }
}

impl fmt::Display for VerdictStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One sampled covector with its restricted-form spectrum summary.
#[derive(Debug, Clone)]
pub struct LambdaSample {
    /// Unit covector in `L⊥`.
    pub lambda: DVector<f64>,
    pub inertia: Inertia,
    pub min_eigenvalue: f64,
    /// `−μ_k` for the k-th smallest eigenvalue `μ_k`; positive when the
    /// form has `k` eigenvalues below zero. `−∞` when `dim K < k`.
    pub index_margin: f64,
}

#[derive(Debug, Clone)]
pub struct Witness {
    pub lambda: DVector<f64>,
    pub inertia: Inertia,
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct ControllabilityVerdict {
    pub status: VerdictStatus,
    pub span: SpanKernel,
    pub witness: Option<Witness>,
    pub samples: Vec<LambdaSample>,
    /// Smallest `index_margin` over the samples.
    pub worst_margin: Option<f64>,
    pub notes: Vec<String>,
}

/// Deterministic points on the unit sphere of ℝᵏ.
pub fn sphere_points(k: usize, opts: &VerdictOptions) -> Vec<DVector<f64>> {
    match k {
        0 => Vec::new(),
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => (0..opts.circle_samples.max(4))
            .map(|j| {
                let t = std::f64::consts::TAU * j as f64 / opts.circle_samples.max(4) as f64;
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect(),
        3 => {
            let count = opts.sphere_samples.max(8);
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|j| {
                    let z = 1.0 - 2.0 * (j as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let t = golden * j as f64;
                    DVector::from_vec(vec![r * t.cos(), r * t.sin(), z])
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut out = Vec::with_capacity(opts.sphere_samples);
            while out.len() < opts.sphere_samples.max(2 * k) {
                let v = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
                let norm = v.norm();
                if norm > 1e-12 {
                    out.push(v / norm);
                }
            }
            out
        }
    }
}

fn sample(h: &HessianForm, sk: &SpanKernel, coords: &DVector<f64>, eig_tol: f64) -> LambdaSample {
    let lambda = &sk.lperp_basis * coords;
    let rf = restrict_form_unchecked(h, sk, &lambda);
    let k = sk.codim();
    let index_margin = rf.eigenvalues.get(k - 1).map_or(f64::NEG_INFINITY, |&mu| -mu);
    LambdaSample {
        inertia: index_pair(&rf, eig_tol),
        min_eigenvalue: rf.min_eigenvalue().unwrap_or(0.0),
        index_margin,
        lambda,
    }
}

fn smallest_eigenvalue(h: &HessianForm, sk: &SpanKernel, coords: &DVector<f64>) -> f64 {
    let lambda = &sk.lperp_basis * (coords / coords.norm());
    restrict_form_unchecked(h, sk, &lambda)
        .min_eigenvalue()
        .unwrap_or(f64::NEG_INFINITY)
}

/// Maximizes the smallest eigenvalue of `(λH)|_K` over the unit sphere of
/// `L⊥`, starting from the best of `seeds`, by coordinate ascent on
/// unnormalized coordinates. Returns the coordinates and the value.
pub fn search_positive_definite(
    h: &HessianForm,
    sk: &SpanKernel,
    seeds: &[DVector<f64>],
) -> Option<(DVector<f64>, f64)> {
    let (mut best, mut value) = seeds
        .iter()
        .map(|c| (c.clone(), smallest_eigenvalue(h, sk, c)))
        .max_by(|a, b| a.1.total_cmp(&b.1))?;
    let k = best.len();
    let mut step = 0.25;
    let mut iterations = 0;
    while step > 1e-9 && iterations < 2000 {
        iterations += 1;
        let mut improved = false;
        for i in 0..k {
            for sign in [1.0, -1.0] {
                let mut cand = best.clone();
                cand[i] += sign * step;
                if cand.norm() < 1e-12 {
                    continue;
                }
                cand.normalize_mut();
                let v = smallest_eigenvalue(h, sk, &cand);
                if v > value {
                    best = cand;
                    value = v;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Some((best, value))
}

/// Verdict from precomputed variation data.
pub fn verdict_from_data(data: &VariationData, opts: &VerdictOptions) -> Result<ControllabilityVerdict> {
    let sk = span_kernel(&data.y, opts.rank_tol)?;
    let n = sk.n();
    let k = sk.codim();
    let mut notes = Vec::new();
    let out = |status, witness, samples: Vec<LambdaSample>, worst_margin, notes| ControllabilityVerdict {
        status,
        span: sk.clone(),
        witness,
        samples,
        worst_margin,
        notes,
    };

    if !sk.well_separated {
        notes.push(format!(
            "singular values are not separated from the rank threshold {:e} by a factor {:e}; rank {} is not trusted",
            sk.tol_used, SPECTRAL_GAP_FACTOR, sk.rank
        ));
        return Ok(out(VerdictStatus::Inconclusive, None, Vec::new(), None, notes));
    }
    if sk.rank == n {
        notes.push("first variations span the state space".into());
        return Ok(out(VerdictStatus::FullRankControllable, None, Vec::new(), None, notes));
    }
    if sk.kernel_dim() == 0 {
        notes.push(format!(
            "kernel is trivial while codim L = {k}; the index condition cannot hold"
        ));
        return Ok(out(VerdictStatus::Inconclusive, None, Vec::new(), None, notes));
    }

    let coords = sphere_points(k, opts);
    let samples: Vec<LambdaSample> = coords
        .iter()
        .map(|c| sample(&data.hessian, &sk, c, opts.eig_tol))
        .collect();
    let worst = samples
        .iter()
        .min_by(|a, b| a.index_margin.total_cmp(&b.index_margin))
        .expect("at least two samples");
    let worst_margin = worst.index_margin;
    if k == 1 {
        notes.push("codim L = 1: covector is unique up to scale, check is exact".into());
    } else {
        notes.push(format!(
            "codim L = {k}: {} sampled covectors, worst index margin {worst_margin:e}",
            samples.len()
        ));
    }

    if worst_margin > opts.eig_tol {
        // a positive definite λ would contradict the sampled index condition
        debug_assert!(samples.iter().all(|s| !s.inertia.is_positive_definite()));
        let witness = Witness {
            lambda: worst.lambda.clone(),
            inertia: worst.inertia,
            margin: worst_margin,
        };
        return Ok(out(
            VerdictStatus::CertifiedControllable,
            Some(witness),
            samples,
            Some(worst_margin),
            notes,
        ));
    }

    if let Some((c, value)) = search_positive_definite(&data.hessian, &sk, &coords) {
        if value > opts.eig_tol {
            let s = sample(&data.hessian, &sk, &c, opts.eig_tol);
            let witness = Witness {
                lambda: s.lambda,
                inertia: s.inertia,
                margin: value,
            };
            notes.push("found a covector whose restricted form is positive definite".into());
            return Ok(out(
                VerdictStatus::CertifiedNotControllable,
                Some(witness),
                samples,
                Some(worst_margin),
                notes,
            ));
        }
        notes.push(format!("largest smallest-eigenvalue found over the sphere: {value:e}"));
    }
    notes.push("index condition fails for some sampled covector and no positive definite covector was found".into());
    Ok(out(
        VerdictStatus::Inconclusive,
        None,
        samples,
        Some(worst_margin),
        notes,
    ))
}

pub fn verdict(
    sys: &DiscreteSystem,
    x0: &DVector<f64>,
    ubar: &ControlSequence,
    opts: &VerdictOptions,
) -> Result<ControllabilityVerdict> {
    sys.check_interior(ubar)?;
    let data = variation_data(sys, x0, ubar)?;
    verdict_from_data(&data, opts)
}
