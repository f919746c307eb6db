use std::path::Path;

use graph_vortex::continuation::{
    lambda_c_bisect, linspace, monotone_family, sensitivity, BisectOptions, ContinuationError, ContinuationResult,
    LambdaCResult, OracleOptions, Probe, SolvabilityOracle,
};
use graph_vortex::mountain_pass::{hessian_spectrum, mountain_pass, MountainPassOptions, MountainPassStatus};
use graph_vortex::solver::{constant_subsolution, monotone_iterate, newton_solve, obstacle_minimize, ObstacleOptions};
use graph_vortex::verify::{verify_suite, Check, VerifyOptions};
use graph_vortex::{parse_instance, Instance, ReducedEquation, SolveReport, SolverOptions, VertexFunction};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::error::CliError;
use crate::report::{num, to_csv, vertex_cells, vertex_rows, SolutionBlock, VERTEX_HEADER};

/// Bracket tolerance used when a command needs `λ_c` internally.
const INTERNAL_BRACKET_TOL: f64 = 1e-3;

#[derive(Clone)]
pub struct Context {
    pub instance: Instance,
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub seed: u64,
    pub csv: bool,
}

/// What a command produced: the report body, its CSV form and whether it
/// counts as a numerical success.
pub struct Outcome {
    pub command: &'static str,
    pub config: serde_json::Value,
    pub result: serde_json::Value,
    pub csv: Option<String>,
    pub failure: Option<CliError>,
}

impl Context {
    pub fn load(path: &Path, tol: Option<f64>, max_iter: usize, seed: u64, csv: bool) -> Result<Self, CliError> {
        if let Some(t) = tol {
            if !(t.is_finite() && t > 0.0) {
                return Err(CliError::validation("BAD_TOLERANCE", format!("--tol must be positive, got {t}")));
            }
        }
        if max_iter == 0 {
            return Err(CliError::validation("BAD_MAX_ITER", "--max-iter must be at least 1"));
        }
        let instance = parse_instance(path)?;
        Ok(Self { instance, tol, max_iter, seed, csv })
    }

    fn solver(&self) -> SolverOptions {
        SolverOptions { tol: self.tol.unwrap_or(1e-10), max_iter: self.max_iter, ..Default::default() }
    }

    fn oracle(&self) -> OracleOptions {
        OracleOptions { solver: self.solver(), seed: self.seed, ..Default::default() }
    }

    fn equation(&self, lambda: f64) -> Result<ReducedEquation, CliError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(CliError::validation("BAD_COUPLING", format!("λ must be positive and finite, got {lambda}")));
        }
        Ok(ReducedEquation::new(self.instance.problem(lambda)?)?)
    }

    fn verify_options(&self) -> VerifyOptions {
        VerifyOptions { residual_tol: self.tol.unwrap_or(1e-10).max(1e-10), seed: self.seed, ..Default::default() }
    }

    fn base_config(&self) -> serde_json::Map<String, serde_json::Value> {
        let mut m = serde_json::Map::new();
        m.insert("tol".into(), json!(self.tol));
        m.insert("max_iter".into(), json!(self.max_iter));
        m.insert("seed".into(), json!(self.seed));
        m
    }
}

fn value<T: Serialize>(x: &T) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(x).map_err(|e| CliError::internal("SERIALIZE", e.to_string()))
}

fn failed_checks(checks: &[Check]) -> Vec<&str> {
    checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    /// Monotone iteration from the constant subsolution when one exists, else Newton.
    Auto,
    Monotone,
    Newton,
    Obstacle,
}

pub fn solve(ctx: &Context, lambda: f64, method: MethodArg) -> Result<Outcome, CliError> {
    let eq = ctx.equation(lambda)?;
    let opts = ctx.solver();
    let need_sub = || {
        constant_subsolution(&eq).ok_or_else(|| {
            CliError::validation(
                "NO_SUBSOLUTION",
                format!("no constant subsolution below λ = {}", eq.instance().constant_subsolution_lambda()),
            )
        })
    };
    let rep = match method {
        MethodArg::Auto => graph_vortex::solver::solve(&eq, &opts)?,
        MethodArg::Monotone => monotone_iterate(&eq, &need_sub()?, &opts)?,
        MethodArg::Newton => {
            let start = eq.reduced(&VertexFunction::constant(eq.dim(), graph_vortex::nonlinearity::DENSITY_ARGMAX));
            newton_solve(&eq, &start, &opts)?
        }
        MethodArg::Obstacle => {
            let o = ObstacleOptions { pg_tol: opts.tol, max_iter: ctx.max_iter.max(ObstacleOptions::default().max_iter), ..Default::default() };
            obstacle_minimize(&eq, &need_sub()?, &o)?
        }
    };
    let block = SolutionBlock::new(&eq, &rep)?;
    let cross_check = match (method, constant_subsolution(&eq)) {
        (MethodArg::Auto, Some(sub)) => Some(cross_check(ctx, &eq, &rep, &sub)?),
        _ => None,
    };
    let checks = verify_suite(&eq, &rep.v, None, &ctx.verify_options())?;
    let failure = if !rep.converged {
        Some(CliError::numerical("NO_CONVERGENCE", format!("residual {:e} after {} iterations", rep.residual_inf, rep.iterations)))
    } else if !checks.all_passed() {
        Some(CliError::numerical("VERIFY_FAILED", format!("failed checks: {}", failed_checks(&checks.checks).join(", "))))
    } else {
        None
    };
    let mut config = ctx.base_config();
    config.insert("lambda".into(), json!(lambda));
    config.insert("method".into(), value(&method)?);
    let csv = if ctx.csv { Some(to_csv(&VERTEX_HEADER, block.vertices.iter().map(vertex_cells))?) } else { None };
    Ok(Outcome {
        command: "solve",
        config: config.into(),
        result: json!({ "solution": block, "checks": checks.checks, "cross_check": cross_check }),
        csv,
        failure,
    })
}

/// Agreement between two engines; the alternative is kept only when they differ.
#[derive(Serialize)]
struct CrossCheck {
    engine: &'static str,
    converged: bool,
    max_abs_diff: f64,
    agree: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    candidate: Option<SolutionBlock>,
}

/// Agreement threshold between the monotone and obstacle minimizers.
const ENGINE_AGREEMENT: f64 = 1e-8;

fn cross_check(ctx: &Context, eq: &ReducedEquation, rep: &SolveReport, sub: &VertexFunction) -> Result<CrossCheck, CliError> {
    let o = ObstacleOptions { pg_tol: ctx.solver().tol, ..Default::default() };
    let alt = obstacle_minimize(eq, sub, &o)?;
    let diff = graph_vortex::solver::max_abs_diff(&rep.v, &alt.v);
    let agree = alt.converged && diff <= ENGINE_AGREEMENT;
    Ok(CrossCheck {
        engine: "obstacle",
        converged: alt.converged,
        max_abs_diff: diff,
        agree,
        candidate: if agree { None } else { Some(SolutionBlock::new(eq, &alt)?) },
    })
}

#[derive(Serialize)]
struct BracketBlock<'a> {
    lower: f64,
    upper: f64,
    width: f64,
    bracket_tol: f64,
    necessary_bound: f64,
    subsolution_bound: f64,
    evaluations: usize,
    endpoint_evaluations: usize,
    trace: &'a [Probe],
    witness: SolutionBlock,
}

fn bracket_block<'a>(eq: &ReducedEquation, res: &'a LambdaCResult, tol: f64) -> Result<BracketBlock<'a>, CliError> {
    let eq_up = eq.with_lambda(res.upper)?;
    Ok(BracketBlock {
        lower: res.lower,
        upper: res.upper,
        width: res.width(),
        bracket_tol: tol,
        necessary_bound: res.necessary_bound,
        subsolution_bound: res.subsolution_bound,
        evaluations: res.evaluations,
        endpoint_evaluations: res.endpoint_evaluations,
        trace: &res.trace,
        witness: SolutionBlock::new(&eq_up, &res.witness_at_upper)?,
    })
}

fn bisect(ctx: &Context, eq: &ReducedEquation, tol: f64) -> Result<LambdaCResult, CliError> {
    let opts = BisectOptions { bracket_tol: tol, oracle: ctx.oracle(), ..Default::default() };
    Ok(lambda_c_bisect(eq, &opts)?)
}

pub fn lambda_c(ctx: &Context) -> Result<Outcome, CliError> {
    // here `--tol` is the bracket width; the solver keeps its own default
    let tol = ctx.tol.unwrap_or(INTERNAL_BRACKET_TOL);
    let solver_ctx = Context { tol: None, ..ctx.clone() };
    let eq = solver_ctx.equation(1.0)?;
    let res = bisect(&solver_ctx, &eq, tol)?;
    let block = bracket_block(&eq, &res, tol)?;
    let mut config = ctx.base_config();
    config.insert("bracket_tol".into(), json!(tol));
    let csv = if ctx.csv {
        let header = ["lambda", "solvable", "engine", "low_confidence"];
        Some(to_csv(
            &header,
            res.trace.iter().map(|p| {
                vec![num(p.lambda), p.solvable.to_string(), p.engine.clone().unwrap_or_default(), p.low_confidence.to_string()]
            }),
        )?)
    } else {
        None
    };
    Ok(Outcome { command: "lambda-c", config: config.into(), result: value(&block)?, csv, failure: None })
}

#[derive(Serialize)]
struct BranchPoint {
    solution: SolutionBlock,
    checks: Vec<Check>,
    /// `∂v/∂λ`, absent where the Hessian is not positive definite.
    sensitivity: Option<Vec<f64>>,
    sensitivity_residual: Option<f64>,
}

fn branch_points(ctx: &Context, eq: &ReducedEquation, fam: &ContinuationResult) -> Result<Vec<BranchPoint>, CliError> {
    let vopts = ctx.verify_options();
    fam.lambdas
        .par_iter()
        .zip(fam.solutions.par_iter())
        .map(|(&lambda, sol)| {
            let eqi = eq.with_lambda(lambda)?;
            let checks = verify_suite(&eqi, &sol.v, None, &vopts)?.checks;
            let sens = match sensitivity(&eqi, &sol.v) {
                Ok(s) => Some(s),
                Err(ContinuationError::Indefinite(_)) => None,
                Err(e) => return Err(e.into()),
            };
            Ok(BranchPoint {
                solution: SolutionBlock::new(&eqi, sol)?,
                checks,
                sensitivity: sens.as_ref().map(|s| s.vbar.to_vec()),
                sensitivity_residual: sens.map(|s| s.residual_inf),
            })
        })
        .collect()
}

pub fn continuation(ctx: &Context, lambda_min: f64, lambda_max: f64, steps: usize) -> Result<Outcome, CliError> {
    if !(lambda_min.is_finite() && lambda_max.is_finite() && lambda_min > 0.0 && lambda_min <= lambda_max) {
        return Err(CliError::validation("BAD_RANGE", format!("need 0 < --lambda-min ≤ --lambda-max, got [{lambda_min}, {lambda_max}]")));
    }
    if steps < 2 && lambda_min < lambda_max {
        return Err(CliError::validation("BAD_RANGE", "--steps must be at least 2 for a nontrivial range"));
    }
    let grid = linspace(lambda_min, lambda_max, steps.max(1));
    let eq = ctx.equation(lambda_min)?;
    let (fam, failure) = match monotone_family(&eq, &grid, None, &ctx.solver()) {
        Ok(f) => (f, None),
        Err(ContinuationError::StepFailed { index, lambda, reason, partial }) => {
            let msg = format!("branch stopped at step {index} (λ = {lambda}): {reason}");
            (*partial, Some(CliError::numerical("BRANCH_STEP_FAILED", msg)))
        }
        Err(e) => return Err(e.into()),
    };
    let points = branch_points(ctx, &eq, &fam)?;
    let failure = failure.or_else(|| {
        let bad: Vec<String> = points
            .iter()
            .filter(|p| p.checks.iter().any(|c| !c.passed))
            .map(|p| format!("λ = {}", p.solution.lambda))
            .collect();
        (!bad.is_empty()).then(|| CliError::numerical("VERIFY_FAILED", format!("failed checks at {}", bad.join(", "))))
    });
    let csv = if ctx.csv {
        let header = ["lambda", "id", "mu", "u0", "v", "u", "residual", "vbar"];
        let rows = points.iter().flat_map(|p| {
            p.solution.vertices.iter().enumerate().map(move |(x, r)| {
                let mut row = vec![num(p.solution.lambda)];
                row.extend(vertex_cells(r));
                row.push(p.sensitivity.as_ref().map(|s| num(s[x])).unwrap_or_default());
                row
            })
        });
        Some(to_csv(&header, rows)?)
    } else {
        None
    };
    let mut config = ctx.base_config();
    config.insert("lambda_min".into(), json!(lambda_min));
    config.insert("lambda_max".into(), json!(lambda_max));
    config.insert("steps".into(), json!(steps));
    let result = json!({
        "grid": grid,
        "completed": fam.lambdas.len(),
        "min_monotone_certificate": if fam.monotone_certificate.is_empty() { None } else { Some(fam.min_certificate()) },
        "monotone_certificate": fam.monotone_certificate,
        "points": value(&points)?,
    });
    Ok(Outcome { command: "continuation", config: config.into(), result, csv, failure })
}

/// The minimal solution at `λ`: monotone iteration from the constant
/// subsolution, or the branch continued from the `λ_c` witness.
fn minimal_solution(ctx: &Context, eq: &ReducedEquation) -> Result<(SolveReport, Option<LambdaCResult>), CliError> {
    let opts = ctx.solver();
    let lambda = eq.lambda();
    if let Some(sub) = constant_subsolution(eq) {
        let rep = monotone_iterate(eq, &sub, &opts.accelerated())?;
        return Ok((rep, None));
    }
    let res = bisect(ctx, eq, INTERNAL_BRACKET_TOL)?;
    let rep = if lambda >= res.upper {
        let fam = monotone_family(eq, &[res.upper, lambda], Some(&res.witness_at_upper), &opts)?;
        fam.solutions.last().cloned()
    } else if lambda > res.lower {
        let mut oracle = SolvabilityOracle::new(eq.clone(), ctx.oracle());
        oracle.query_with(lambda, true)?.witness
    } else {
        None
    };
    match rep {
        Some(r) if r.converged => Ok((r, Some(res))),
        _ => Err(CliError::numerical(
            "NO_SOLUTION",
            format!("no solution found at λ = {lambda}; critical coupling lies in [{}, {}]", res.lower, res.upper),
        )),
    }
}

pub fn mountain(ctx: &Context, lambda: f64, points: usize) -> Result<Outcome, CliError> {
    let eq = ctx.equation(lambda)?;
    let (minimal, bracket) = minimal_solution(ctx, &eq)?;
    let opts = MountainPassOptions { n_points: points, ..Default::default() };
    let mp = mountain_pass(&eq, &minimal.v, &opts)?;
    let failure = (mp.status != MountainPassStatus::Separated)
        .then(|| CliError::numerical("NO_SECOND_SOLUTION", format!("mountain pass ended {:?}: {}", mp.status, mp.notes.join("; "))));
    let first = SolutionBlock::new(&eq, &minimal)?;
    let second = SolutionBlock::new(&eq, &mp.second_solution)?;
    let negative = mp.spectrum_at_second.iter().filter(|&&e| e < 0.0).count();
    let csv = if ctx.csv {
        let mut header = vec!["solution"];
        header.extend(VERTEX_HEADER);
        let rows = [("minimal", &first), ("second", &second)].into_iter().flat_map(|(tag, b)| {
            b.vertices.iter().map(move |r| {
                let mut row = vec![tag.to_string()];
                row.extend(vertex_cells(r));
                row
            })
        });
        Some(to_csv(&header, rows)?)
    } else {
        None
    };
    let mut config = ctx.base_config();
    config.insert("lambda".into(), json!(lambda));
    config.insert("n_points".into(), json!(points));
    let bracket = match &bracket {
        Some(r) => Some(value(&bracket_block(&eq, r, INTERNAL_BRACKET_TOL)?)?),
        None => None,
    };
    let result = json!({
        "minimal": first,
        "second": second,
        "status": mp.status,
        "minimax_value": mp.minimax_value,
        "j_min": mp.j_min,
        "j_endpoint": mp.j_endpoint,
        "q0": mp.q0,
        "distinct_gap": mp.distinct_gap,
        "path_points": mp.path_points,
        "iterations": mp.iterations,
        "grad_at_max": mp.grad_at_max,
        "spectrum_at_min": mp.spectrum_at_min,
        "spectrum_at_second": mp.spectrum_at_second,
        "negative_eigenvalues_at_second": negative,
        "max_trace": mp.max_trace,
        "notes": mp.notes,
        "lambda_c": bracket,
    });
    Ok(Outcome { command: "mountain-pass", config: config.into(), result, csv, failure })
}

pub fn spectrum(ctx: &Context, lambda: f64) -> Result<Outcome, CliError> {
    let eq = ctx.equation(lambda)?;
    let (minimal, _) = minimal_solution(ctx, &eq)?;
    let spec = hessian_spectrum(&eq, &minimal.v)?;
    let block = SolutionBlock::new(&eq, &minimal)?;
    let mu1 = spec.eigenvalues[0];
    let csv = if ctx.csv {
        let mut header = VERTEX_HEADER.to_vec();
        header.extend(["theta1", "eigenvalue"]);
        let rows = block.vertices.iter().enumerate().map(|(x, r)| {
            let mut row = vertex_cells(r);
            row.push(num(spec.first_eigvec[x]));
            row.push(num(spec.eigenvalues[x]));
            row
        });
        Some(to_csv(&header, rows)?)
    } else {
        None
    };
    let failure = (!block.converged).then(|| CliError::numerical("NO_CONVERGENCE", format!("residual {:e}", block.residual_inf)));
    let mut config = ctx.base_config();
    config.insert("lambda".into(), json!(lambda));
    let result = json!({
        "solution": block,
        "eigenvalues": spec.eigenvalues,
        "mu1": mu1,
        "strict_minimum": mu1 > 0.0,
        "theta1": spec.first_eigvec.to_vec(),
        "theta1_min": spec.first_eigvec.min_value(),
    });
    Ok(Outcome { command: "spectrum", config: config.into(), result, csv, failure })
}

pub fn verify(ctx: &Context, report: &Path) -> Result<Outcome, CliError> {
    let text = std::fs::read_to_string(report)
        .map_err(|e| CliError::validation("REPORT_IO", format!("cannot read {}: {e}", report.display())))?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::validation("REPORT_PARSE", format!("{}: {e}", report.display())))?;
    let (pointer, raw) = ["/result/solution", "/result/second", ""]
        .into_iter()
        .find_map(|p| doc.pointer(p).filter(|v| v.get("vertices").is_some()).map(|v| (p, v.clone())))
        .ok_or_else(|| CliError::validation("REPORT_PARSE", "no solution block with `vertices` found"))?;
    let block: SolutionBlock =
        serde_json::from_value(raw).map_err(|e| CliError::validation("REPORT_PARSE", format!("solution block: {e}")))?;
    let eq = ctx.equation(block.lambda)?;
    let g = eq.graph();
    if block.vertices.len() != g.len() {
        return Err(CliError::validation(
            "REPORT_MISMATCH",
            format!("report has {} vertices, instance has {}", block.vertices.len(), g.len()),
        ));
    }
    let mut v = VertexFunction::zeros(g.len());
    let mut seen = vec![false; g.len()];
    for row in &block.vertices {
        let x = g
            .index_of(&row.id)
            .ok_or_else(|| CliError::validation("REPORT_MISMATCH", format!("vertex `{}` is not in the instance", row.id)))?;
        if std::mem::replace(&mut seen[x], true) {
            return Err(CliError::validation("REPORT_MISMATCH", format!("vertex `{}` appears twice", row.id)));
        }
        v[x] = row.v;
    }
    let checks = verify_suite(&eq, &v, Some(block.residual_inf), &ctx.verify_options())?;
    let failure = (!checks.all_passed())
        .then(|| CliError::numerical("VERIFY_FAILED", format!("failed checks: {}", failed_checks(&checks.checks).join(", "))));
    let csv = if ctx.csv {
        let header = ["check", "passed", "measured", "threshold", "detail"];
        Some(to_csv(
            &header,
            checks.checks.iter().map(|c| vec![c.name.clone(), c.passed.to_string(), num(c.measured), num(c.threshold), c.detail.clone()]),
        )?)
    } else {
        None
    };
    let mut config = ctx.base_config();
    config.insert("report".into(), json!(report.display().to_string()));
    let result = json!({
        "lambda": block.lambda,
        "source": if pointer.is_empty() { "/" } else { pointer },
        "all_passed": checks.all_passed(),
        "checks": checks.checks,
        "vertices": vertex_rows(&eq, &v)?,
    });
    Ok(Outcome { command: "verify", config: config.into(), result, csv, failure })
}
