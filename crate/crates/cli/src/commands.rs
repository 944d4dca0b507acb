//! The subcommands. Each returns an exit code and a report; errors are
//! mapped to exit code 1 by the caller.

use std::path::PathBuf;

use dtctrl_core::analysis::{verdict, verdict_from_data, VerdictStatus};
use dtctrl_core::exprdsl::{parse_expr, VarScope};
use dtctrl_core::linalg::{null_space, sorted_svd, subspace_distance};
use dtctrl_core::optimal::{
    adjoint_chain, bolza_reduce, check_meyer_sufficient, problem_from_file, BolzaProblem, FinalCost, MeyerProblem,
    OptimalityVerdict,
};
use dtctrl_core::oracle::{
    fd_hessian_on_kernel, fd_jacobian, level_set_certificate, probe_interior, EmpiricalVerdict, EndpointMap,
    ReachProbe, LEVEL_SET_EPSILON,
};
use dtctrl_core::system::builtin;
use dtctrl_core::variation::variation_data;
use dtctrl_core::{ControlSequence, DiscreteSystem, Error};
use nalgebra::DVector;

use crate::config::{file_stem, load_problem, RunConfig};
use crate::report::{columns, num, opt_num, slice, vector, Report, Section};
use crate::{CliError, EXIT_DISCREPANCY, EXIT_INCONCLUSIVE, EXIT_NEGATIVE, EXIT_OK};

/// Relative agreement required between analytic and finite-difference
/// first derivatives.
pub const JACOBIAN_AGREEMENT: f64 = 1e-6;
/// Largest principal-angle sine between the analytic and numerical kernels.
pub const KERNEL_AGREEMENT: f64 = 1e-5;
/// Relative agreement of second derivatives along kernel directions.
pub const HESSIAN_AGREEMENT: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub code: i32,
    pub report: Report,
}

fn input_section(label: &str, sys: &DiscreteSystem, x0: &DVector<f64>, ubar: &ControlSequence) -> Section {
    let steps: Vec<String> = ubar.steps().iter().map(vector).collect();
    Section::new("input")
        .entry("system", label)
        .entry("n", sys.n())
        .entry("m", sys.m())
        .entry("steps", ubar.len())
        .entry("x0", vector(x0))
        .entry("u", format!("[{}]", steps.join(", ")))
}

pub fn analyze(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let sys = cfg.system()?;
    let x0 = cfg.x0(sys.n())?;
    let ubar = cfg.controls(sys.m())?;
    let v = verdict(&sys, &x0, &ubar, &cfg.verdict_options())?;
    let sk = &v.span;

    let mut report = Report::new("analyze");
    report.sections.push(input_section(&label(cfg), &sys, &x0, &ubar));
    report.sections.push(
        Section::new("span")
            .entry("rank", sk.rank)
            .entry("codim", sk.codim())
            .entry("kernel_dim", sk.kernel_dim())
            .entry("tol_used", num(sk.tol_used))
            .entry("well_separated", sk.well_separated)
            .entry("singular_values", slice(&sk.singular_values))
            .entry("annihilator_basis", columns(&sk.lperp_basis)),
    );
    let rows = v
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            vec![
                (i + 1).to_string(),
                vector(&s.lambda),
                s.inertia.to_string(),
                num(s.min_eigenvalue),
                num(s.index_margin),
            ]
        })
        .collect();
    report
        .sections
        .push(Section::new("covectors").table(&["sample", "lambda", "inertia", "min_eig", "index_margin"], rows));

    let mut verdict_section = Section::new("verdict")
        .entry("status", v.status)
        .entry("worst_margin", opt_num(v.worst_margin));
    if let Some(w) = &v.witness {
        verdict_section.push("witness_lambda", vector(&w.lambda));
        verdict_section.push("witness_inertia", w.inertia);
        verdict_section.push("witness_margin", num(w.margin));
    }
    for (i, note) in v.notes.iter().enumerate() {
        verdict_section.push(&format!("note.{}", i + 1), note);
    }
    report.sections.push(verdict_section);

    let code = match v.status {
        VerdictStatus::CertifiedControllable | VerdictStatus::FullRankControllable => EXIT_OK,
        VerdictStatus::CertifiedNotControllable => EXIT_NEGATIVE,
        VerdictStatus::Inconclusive => EXIT_INCONCLUSIVE,
    };
    Ok(Outcome { code, report })
}

fn label(cfg: &RunConfig) -> String {
    cfg.system.as_ref().map_or_else(String::new, |s| s.label())
}

/// Where the cost of an optimality run comes from.
#[derive(Debug, Clone, Default)]
pub struct CostSpec {
    pub problem: Option<PathBuf>,
    pub phi: Option<String>,
    pub running_cost: Option<String>,
}

fn meyer_problem(cfg: &RunConfig, cost: &CostSpec) -> Result<(MeyerProblem, String), CliError> {
    if let Some(path) = &cost.problem {
        if cost.phi.is_some() || cost.running_cost.is_some() || cfg.system.is_some() {
            return Err(CliError::Usage(
                "--problem cannot be combined with --system, --phi or --running-cost".into(),
            ));
        }
        let file = load_problem(path)?;
        let x0 = cfg.x0(file.system.n)?;
        let prob = problem_from_file(&file_stem(path), &file, x0).map_err(|e| match e {
            Error::MissingFinalCost => CliError::Usage(format!("{}: no `phi` line", path.display())),
            other => other.into(),
        })?;
        return Ok((prob, path.display().to_string()));
    }
    let sys = cfg.system()?;
    let phi_src = cost
        .phi
        .as_ref()
        .ok_or_else(|| CliError::Usage("optimal needs --problem or --phi".into()))?;
    let phi = parse_expr(phi_src, VarScope { n: sys.n(), m: 0 }).map_err(|e| CliError::Usage(format!("--phi: {e}")))?;
    let x0 = cfg.x0(sys.n())?;
    let prob = match &cost.running_cost {
        None => MeyerProblem::new(sys, x0, FinalCost::Expr(phi))?,
        Some(c) => {
            let running = parse_expr(c, VarScope { n: sys.n(), m: sys.m() })
                .map_err(|e| CliError::Usage(format!("--running-cost: {e}")))?;
            bolza_reduce(&BolzaProblem {
                sys,
                x0,
                phi: FinalCost::Expr(phi),
                running_cost: running,
            })?
        }
    };
    Ok((prob, label(cfg)))
}

pub fn optimal(cfg: &RunConfig, cost: &CostSpec) -> Result<Outcome, CliError> {
    let (prob, source) = meyer_problem(cfg, cost)?;
    let ubar = cfg.controls(prob.sys.m())?;
    let opts = cfg.verdict_options();
    let suf = check_meyer_sufficient(&prob, &ubar, &opts)?;
    let adj = adjoint_chain(&prob, &ubar, &opts)?;
    let nec = &suf.necessary;

    let mut report = Report::new("optimal");
    report.sections.push(input_section(&source, &prob.sys, &prob.x0, &ubar));
    report.sections.push(
        Section::new("covector")
            .entry("x_final", vector(&nec.x_final))
            .entry("dphi", vector(&nec.dphi))
            .entry("lambda", vector(&nec.lambda))
            .entry("rank", nec.span.rank)
            .entry("kernel_dim", nec.span.kernel_dim()),
    );
    let mut conditions = Section::new("conditions")
        .entry("first_order_residual", num(nec.cond_i_residual))
        .entry("first_order_tol", num(nec.cond_i_tol))
        .entry("first_order", nec.cond_i)
        .entry("kernel_form_inertia", nec.cond_ii_inertia)
        .entry("kernel_form_nonnegative", nec.cond_ii)
        .entry("kernel_form_min", opt_num(suf.cond_iii_min))
        .entry("kernel_form_positive", suf.cond_iii)
        .entry("cost_above_q_min", opt_num(suf.cond_iv_min))
        .entry("cost_above_q", suf.cond_iv);
    if let Some(q) = &suf.qform {
        conditions.push("qform_residual", num(q.residual));
        conditions.push("qform_min_eig_a_plus_b", num(q.min_eig_a_plus_b));
        conditions.push("qform_completion", "zero on the orthogonal complement of L");
    }
    conditions.push("objective_gradient_norm", num(suf.psi_gradient_norm));
    conditions.push("objective_hessian_min", num(suf.psi_hessian_min));
    report.sections.push(conditions);

    let mut rows = vec![vec![
        "0".into(),
        vector(&adj.xs[0]),
        vector(&adj.ps[0]),
        "-".into(),
        "-".into(),
        "-".into(),
        "-".into(),
    ]];
    for t in 1..adj.xs.len() {
        rows.push(vec![
            t.to_string(),
            vector(&adj.xs[t]),
            vector(&adj.ps[t]),
            num(adj.cc_residuals[t - 1]),
            adj.so_results[t - 1].to_string(),
            adj.codims[t - 1].to_string(),
            if adj.index_condition(t) { "holds" } else { "fails" }.to_string(),
        ]);
    }
    report.sections.push(Section::new("adjoint").table(
        &[
            "t",
            "x_t",
            "p_t",
            "cc_residual",
            "so_inertia",
            "codim",
            "index_condition",
        ],
        rows,
    ));
    report.sections.push(
        Section::new("verdict")
            .entry("status", suf.verdict.as_str())
            .entry("necessary_violated", suf.necessary_violated)
            .entry("reason", &suf.reason),
    );

    let code = if suf.verdict == OptimalityVerdict::LocallyOptimal {
        EXIT_OK
    } else if suf.necessary_violated {
        EXIT_NEGATIVE
    } else {
        EXIT_INCONCLUSIVE
    };
    Ok(Outcome { code, report })
}

fn status(ok: bool) -> String {
    if ok { "pass" } else { "FAIL" }.to_string()
}

pub fn oracle(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let sys = cfg.system()?;
    let x0 = cfg.x0(sys.n())?;
    let ubar = cfg.controls(sys.m())?;
    sys.check_interior(&ubar)?;
    let opts = cfg.verdict_options();
    let data = variation_data(&sys, &x0, &ubar)?;
    let v = verdict_from_data(&data, &opts)?;
    let f = EndpointMap::new(&sys, x0.clone(), ubar.len());

    let mut rows = Vec::new();
    let mut all_pass = true;
    let mut record = |check: String, err: f64, tol: f64| {
        let ok = err <= tol;
        all_pass &= ok;
        rows.push(vec![check, num(err), num(tol), status(ok)]);
    };

    let fd = fd_jacobian(&f, &ubar)?;
    let analytic = &data.df_ubar * data.y_matrix();
    for j in 0..fd.ncols() {
        let a = analytic.column(j);
        let err = (fd.column(j) - a).norm() / a.norm().max(1.0);
        record(format!("jacobian column {}", j + 1), err, JACOBIAN_AGREEMENT);
    }
    let sigma_max = sorted_svd(&fd).sigma.first().copied().unwrap_or(0.0);
    let fd_kernel = null_space(&fd, opts.rank_tol * sigma_max);
    record(
        "kernel subspace distance".into(),
        subspace_distance(&v.span.k_basis, &fd_kernel),
        KERNEL_AGREEMENT,
    );
    for (j, c) in v.span.k_basis.column_iter().enumerate() {
        let a = c.into_owned();
        let want = &data.df_ubar * data.hessian.eval(&a);
        let err = match fd_hessian_on_kernel(&f, &ubar, &a) {
            Ok(got) => (got - &want).norm() / want.norm().max(1.0),
            Err(Error::KernelViolation { .. }) => f64::INFINITY,
            Err(e) => return Err(e.into()),
        };
        record(format!("hessian on kernel direction {}", j + 1), err, HESSIAN_AGREEMENT);
    }

    let mut probe = ReachProbe::new(cfg.oracle.radius, cfg.oracle.samples, cfg.oracle.seed);
    let mut level_set = None;
    if v.status == VerdictStatus::CertifiedNotControllable {
        if let Some(w) = &v.witness {
            let level = level_set_certificate(&sys, &x0, &ubar, &w.lambda, LEVEL_SET_EPSILON, &opts)?;
            level_set = Some(level.clone());
            probe = probe.with_level_set(level);
        }
    }
    let pr = probe_interior(&f, &ubar, &probe)?;
    let consistent = match v.status {
        VerdictStatus::CertifiedControllable | VerdictStatus::FullRankControllable => {
            pr.verdict != EmpiricalVerdict::BoundaryLikely
        }
        VerdictStatus::CertifiedNotControllable => pr.verdict != EmpiricalVerdict::InteriorLikely,
        VerdictStatus::Inconclusive => true,
    };
    all_pass &= consistent;

    let mut report = Report::new("oracle");
    report.sections.push(input_section(&label(cfg), &sys, &x0, &ubar));
    report
        .sections
        .push(Section::new("agreement").table(&["check", "error", "tolerance", "status"], rows));
    let mut probe_section = Section::new("probe")
        .entry("seed", cfg.oracle.seed)
        .entry("radius", num(cfg.oracle.radius))
        .entry("samples", cfg.oracle.samples)
        .entry("samples_used", pr.samples_used)
        .entry("directions", pr.directions.len())
        .entry("coverage_floor", num(pr.coverage_floor))
        .entry("min_directional_coverage", num(pr.min_directional_coverage));
    if let Some(level) = &level_set {
        probe_section.push("level_set_epsilon", num(LEVEL_SET_EPSILON));
        probe_section.push("level_set_lambda", vector(&level.lambda));
        probe_section.push("level_set_min", opt_num(pr.level_set_min));
    }
    report.sections.push(probe_section);
    report.sections.push(
        Section::new("verdict")
            .entry("analytic", v.status)
            .entry("empirical", pr.verdict)
            .entry("consistent", consistent)
            .entry("all_checks_pass", all_pass),
    );
    let code = if all_pass { EXIT_OK } else { EXIT_DISCREPANCY };
    Ok(Outcome { code, report })
}

pub fn list_systems() -> Outcome {
    let rows = builtin::REGISTRY
        .iter()
        .map(|(name, text, about)| {
            let sys = DiscreteSystem::parse(*name, text).expect("built-in parses");
            vec![
                name.to_string(),
                sys.n().to_string(),
                sys.m().to_string(),
                about.to_string(),
            ]
        })
        .collect();
    let mut report = Report::new("list-systems");
    report
        .sections
        .push(Section::new("systems").table(&["name", "n", "m", "description"], rows));
    Outcome { code: EXIT_OK, report }
}
