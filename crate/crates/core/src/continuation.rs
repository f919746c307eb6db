//! The solvable set in `λ`: an operational solvability oracle, bisection for
//! the critical coupling, the increasing minimal branch, and its derivative
//! `v̄ = dṽ/dλ`.

use nalgebra::{Cholesky, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::VertexFunction;
use crate::nonlinearity::DENSITY_ARGMAX;
use crate::poisson::BadCoupling;
use crate::solver::{
    constant_subsolution, monotone_descend, monotone_iterate, newton_solve, ReducedEquation, SolveReport,
    SolverError, SolverOptions,
};

/// Constant starting levels `u ≡ c` for the Newton multi-start.
pub const MULTISTART_LEVELS: [f64; 4] = [-0.1, DENSITY_ARGMAX, -2.0, -5.0];

#[derive(Debug, Clone, Error)]
pub enum ContinuationError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Coupling(#[from] BadCoupling),
    #[error("bracket tolerance must be positive and finite, got {0}")]
    BadTolerance(f64),
    #[error("coupling grid must be nonempty, finite, positive and nondecreasing")]
    BadGrid,
    #[error("oracle inconsistency: solvable at λ = {solvable_at} but not at λ = {unsolvable_at}")]
    Inconsistent { solvable_at: f64, unsolvable_at: f64 },
    #[error("no solution found up to λ = {0}")]
    NoWitness(f64),
    #[error("branch step {index} at λ = {lambda} failed: {reason}")]
    StepFailed { index: usize, lambda: f64, reason: String, partial: Box<ContinuationResult> },
    #[error("Hessian is not positive definite at λ = {0}")]
    Indefinite(f64),
}

impl ContinuationError {
    pub fn code(&self) -> &'static str {
        match self {
            ContinuationError::Solver(_) => "SOLVER_FAULT",
            ContinuationError::Coupling(_) => "BAD_COUPLING",
            ContinuationError::BadTolerance(_) => "BAD_TOLERANCE",
            ContinuationError::BadGrid => "BAD_GRID",
            ContinuationError::Inconsistent { .. } => "ORACLE_INCONSISTENT",
            ContinuationError::NoWitness(_) => "NO_WITNESS",
            ContinuationError::StepFailed { .. } => "BRANCH_STEP_FAILED",
            ContinuationError::Indefinite(_) => "HESSIAN_INDEFINITE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub solver: SolverOptions,
    /// Seed for the randomized Newton starts.
    pub seed: u64,
    pub random_starts: usize,
    /// Cap multiplier used close to the critical coupling.
    pub cap_factor: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::default(), seed: 0, random_starts: 2, cap_factor: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Attempt {
    pub engine: String,
    pub converged: bool,
    pub residual_inf: f64,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleAnswer {
    pub lambda: f64,
    pub solvable: bool,
    pub witness: Option<SolveReport>,
    /// Engine that produced the witness.
    pub engine: Option<String>,
    pub low_confidence: bool,
    pub attempts: Vec<Attempt>,
}

/// Operational solvability test: `λ` is solvable when some engine converges.
///
/// Converged solutions are remembered and used as warm starts. A solution at
/// `λ' < λ` is a subsolution at `λ`; one at `λ' > λ` is a supersolution.
#[derive(Debug, Clone)]
pub struct SolvabilityOracle {
    eq: ReducedEquation,
    opts: OracleOptions,
    solved: Vec<SolveReport>,
}

impl SolvabilityOracle {
    pub fn new(eq: ReducedEquation, opts: OracleOptions) -> Self {
        Self { eq, opts, solved: Vec::new() }
    }

    pub fn equation(&self) -> &ReducedEquation {
        &self.eq
    }

    /// Keep a converged solution for later warm starts.
    pub fn remember(&mut self, report: SolveReport) {
        if report.converged {
            let at = self.solved.partition_point(|r| r.lambda < report.lambda);
            self.solved.insert(at, report);
        }
    }

    pub fn query(&mut self, lambda: f64) -> Result<OracleAnswer, ContinuationError> {
        self.query_with(lambda, false)
    }

    /// `enlarged` multiplies the iteration caps and marks the answer low-confidence.
    pub fn query_with(&mut self, lambda: f64, enlarged: bool) -> Result<OracleAnswer, ContinuationError> {
        let eq = self.eq.with_lambda(lambda)?;
        let mut opts = self.opts.solver.accelerated();
        if enlarged {
            opts.max_iter *= self.opts.cap_factor;
            opts.newton_max_iter *= self.opts.cap_factor;
        }
        let mut attempts = Vec::new();
        let mut record = |engine: &str, res: Result<SolveReport, SolverError>| -> Option<SolveReport> {
            match res {
                Ok(rep) => {
                    attempts.push(Attempt {
                        engine: engine.to_string(),
                        converged: rep.converged,
                        residual_inf: rep.residual_inf,
                        iterations: rep.iterations,
                        note: rep.notes.last().cloned(),
                    });
                    rep.converged.then_some(rep)
                }
                Err(e) => {
                    attempts.push(Attempt {
                        engine: engine.to_string(),
                        converged: false,
                        residual_inf: f64::NAN,
                        iterations: 0,
                        note: Some(e.to_string()),
                    });
                    None
                }
            }
        };

        let below = self.solved.iter().rev().find(|r| r.lambda <= lambda).cloned();
        let above = self.solved.iter().find(|r| r.lambda > lambda).cloned();

        let mut found: Option<(String, SolveReport)> = None;
        if let Some(sub) = constant_subsolution(&eq) {
            found = record("constant-subsolution", monotone_iterate(&eq, &sub, &opts)).map(|r| ("constant-subsolution".into(), r));
        }
        if found.is_none() {
            if let Some(prev) = &below {
                found = record("warm-ascending", monotone_iterate(&eq, &prev.v, &opts)).map(|r| ("warm-ascending".into(), r));
            }
        }
        if found.is_none() {
            if let Some(next) = &above {
                let res = monotone_descend(&eq, &next.v, &opts).map(|out| out.report);
                found = record("warm-descending", res).map(|r| ("warm-descending".into(), r));
            }
        }
        if found.is_none() {
            for prev in below.iter().chain(above.iter()) {
                found = record("warm-newton", newton_solve(&eq, &prev.v, &opts)).map(|r| ("warm-newton".into(), r));
                if found.is_some() {
                    break;
                }
            }
        }
        let mut certified = false;
        if found.is_none() {
            // u ≡ 0 bounds every solution from above
            match monotone_descend(&eq, &eq.barrier(), &opts) {
                Ok(out) => {
                    certified = out.no_solution_below;
                    found = record("barrier-descending", Ok(out.report)).map(|r| ("barrier-descending".into(), r));
                }
                Err(e) => {
                    record("barrier-descending", Err(e));
                }
            }
        }
        if found.is_none() && !certified {
            let n = eq.dim();
            let mut starts: Vec<VertexFunction> =
                MULTISTART_LEVELS.iter().map(|&c| VertexFunction::constant(n, c)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed ^ lambda.to_bits());
            for _ in 0..self.opts.random_starts {
                let level = MULTISTART_LEVELS[rng.gen_range(0..MULTISTART_LEVELS.len())];
                starts.push(VertexFunction::from_fn(n, |_| level + rng.gen_range(-0.5..0.0) * level.abs().max(0.1)));
            }
            for u_start in starts {
                let v_start = eq.reduced(&u_start);
                if let Some(r) = record("newton-multistart", newton_solve(&eq, &v_start, &opts)) {
                    found = Some(("newton-multistart".into(), r));
                    break;
                }
            }
        }

        let answer = match found {
            Some((engine, witness)) => {
                self.remember(witness.clone());
                OracleAnswer { lambda, solvable: true, witness: Some(witness), engine: Some(engine), low_confidence: enlarged, attempts }
            }
            None => OracleAnswer { lambda, solvable: false, witness: None, engine: None, low_confidence: enlarged, attempts },
        };
        Ok(answer)
    }
}

/// One-shot oracle at the equation's own coupling.
pub fn solvability_oracle(eq: &ReducedEquation, opts: &OracleOptions) -> Result<OracleAnswer, ContinuationError> {
    SolvabilityOracle::new(eq.clone(), *opts).query(eq.lambda())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectOptions {
    pub bracket_tol: f64,
    pub oracle: OracleOptions,
    /// How often the upper start may be doubled before giving up.
    pub max_doublings: usize,
}

impl Default for BisectOptions {
    fn default() -> Self {
        Self { bracket_tol: 1e-3, oracle: OracleOptions::default(), max_doublings: 30 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Probe {
    pub lambda: f64,
    pub solvable: bool,
    pub engine: Option<String>,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaCResult {
    pub lower: f64,
    pub upper: f64,
    pub witness_at_upper: SolveReport,
    /// Oracle calls at bisection midpoints.
    pub evaluations: usize,
    /// Oracle calls spent establishing the upper start.
    pub endpoint_evaluations: usize,
    /// `27πM/|V|`.
    pub necessary_bound: f64,
    /// `27π / min_j μ(p_j)`.
    pub subsolution_bound: f64,
    pub trace: Vec<Probe>,
}

impl LambdaCResult {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// `true` answers above `false` answers, as the interval structure demands.
fn check_interval_structure(trace: &[Probe]) -> Result<(), ContinuationError> {
    let lowest_true = trace.iter().filter(|p| p.solvable).map(|p| p.lambda).fold(f64::INFINITY, f64::min);
    let highest_false = trace.iter().filter(|p| !p.solvable).map(|p| p.lambda).fold(f64::NEG_INFINITY, f64::max);
    if highest_false > lowest_true {
        return Err(ContinuationError::Inconsistent { solvable_at: lowest_true, unsolvable_at: highest_false });
    }
    Ok(())
}

/// Bisect for the critical coupling between `27πM/|V|` and `27π/min μ(p_j)`.
///
/// The coupling stored in `eq` is ignored.
pub fn lambda_c_bisect(eq: &ReducedEquation, opts: &BisectOptions) -> Result<LambdaCResult, ContinuationError> {
    if !(opts.bracket_tol.is_finite() && opts.bracket_tol > 0.0) {
        return Err(ContinuationError::BadTolerance(opts.bracket_tol));
    }
    let inst = eq.instance();
    let necessary_bound = inst.necessary_lambda();
    let subsolution_bound = inst.constant_subsolution_lambda();
    let mut oracle = SolvabilityOracle::new(eq.clone(), opts.oracle);
    let mut trace = Vec::new();

    let mut lower = necessary_bound;
    let mut upper = subsolution_bound;
    let mut endpoint_evaluations = 0;
    let mut witness = None;
    for _ in 0..=opts.max_doublings {
        let ans = oracle.query(upper)?;
        endpoint_evaluations += 1;
        trace.push(Probe { lambda: upper, solvable: ans.solvable, engine: ans.engine.clone(), low_confidence: false });
        if let Some(w) = ans.witness {
            witness = Some(w);
            break;
        }
        lower = lower.max(upper);
        upper *= 2.0;
    }
    let mut witness = witness.ok_or(ContinuationError::NoWitness(upper / 2.0))?;

    let mut evaluations = 0;
    while upper - lower > opts.bracket_tol {
        let mid = 0.5 * (lower + upper);
        let enlarged = upper - lower <= 2.0 * opts.bracket_tol;
        let ans = oracle.query_with(mid, enlarged)?;
        evaluations += 1;
        trace.push(Probe { lambda: mid, solvable: ans.solvable, engine: ans.engine.clone(), low_confidence: enlarged });
        match ans.witness {
            Some(w) => {
                upper = mid;
                witness = w;
            }
            None => lower = mid,
        }
    }
    check_interval_structure(&trace)?;
    Ok(LambdaCResult {
        lower,
        upper,
        witness_at_upper: witness,
        evaluations,
        endpoint_evaluations,
        necessary_bound,
        subsolution_bound,
        trace,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuationResult {
    pub lambdas: Vec<f64>,
    pub solutions: Vec<SolveReport>,
    /// `min_x (u_{i+1} − u_i)` for consecutive grid points.
    pub monotone_certificate: Vec<f64>,
}

impl ContinuationResult {
    pub fn min_certificate(&self) -> f64 {
        self.monotone_certificate.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest `∞`-distance between solutions at couplings both results share.
    pub fn refinement_gap(&self, other: &ContinuationResult) -> Option<f64> {
        let mut gap: Option<f64> = None;
        for (i, &l) in self.lambdas.iter().enumerate() {
            let matched = other.lambdas.iter().position(|&m| (m - l).abs() <= 1e-12 * l.abs().max(1.0));
            if let Some(j) = matched {
                let d = crate::solver::max_abs_diff(&self.solutions[i].u, &other.solutions[j].u);
                gap = Some(gap.map_or(d, |g| g.max(d)));
            }
        }
        gap
    }
}

/// `n` evenly spaced couplings with exact endpoints.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// Follow the minimal branch along an increasing grid by subsolution chaining.
///
/// The first point is reached from `seed` (a converged solution at a coupling
/// not above `grid[0]`) when given, else from the constant subsolution, else
/// through the oracle.
pub fn monotone_family(
    eq: &ReducedEquation,
    grid: &[f64],
    seed: Option<&SolveReport>,
    opts: &SolverOptions,
) -> Result<ContinuationResult, ContinuationError> {
    let ok = !grid.is_empty()
        && grid.iter().all(|l| l.is_finite() && *l > 0.0)
        && grid.windows(2).all(|w| w[0] <= w[1]);
    if !ok {
        return Err(ContinuationError::BadGrid);
    }
    let opts = opts.accelerated();
    let mut out = ContinuationResult { lambdas: Vec::new(), solutions: Vec::new(), monotone_certificate: Vec::new() };

    let eq0 = eq.with_lambda(grid[0])?;
    let first = match (seed, constant_subsolution(&eq0)) {
        (Some(s), _) if s.converged && s.lambda <= grid[0] => monotone_iterate(&eq0, &s.v, &opts),
        (_, Some(sub)) => monotone_iterate(&eq0, &sub, &opts),
        _ => {
            let ans = solvability_oracle(&eq0, &OracleOptions { solver: opts, ..Default::default() })?;
            match ans.witness {
                Some(w) => Ok(w),
                None => {
                    return Err(ContinuationError::StepFailed {
                        index: 0,
                        lambda: grid[0],
                        reason: "no engine converged".into(),
                        partial: Box::new(out),
                    })
                }
            }
        }
    };
    let mut prev = step_result(first, 0, grid[0], &out)?;
    out.lambdas.push(grid[0]);
    out.solutions.push(prev.clone());

    for (i, &lambda) in grid.iter().enumerate().skip(1) {
        let eqi = eq.with_lambda(lambda)?;
        let next = step_result(monotone_iterate(&eqi, &prev.v, &opts), i, lambda, &out)?;
        let cert = (0..next.u.len()).map(|x| next.u[x] - prev.u[x]).fold(f64::INFINITY, f64::min);
        out.monotone_certificate.push(cert);
        out.lambdas.push(lambda);
        out.solutions.push(next.clone());
        prev = next;
    }
    Ok(out)
}

fn step_result(
    res: Result<SolveReport, SolverError>,
    index: usize,
    lambda: f64,
    partial: &ContinuationResult,
) -> Result<SolveReport, ContinuationError> {
    let fail = |reason: String| ContinuationError::StepFailed { index, lambda, reason, partial: Box::new(partial.clone()) };
    match res {
        Ok(r) if r.converged => Ok(r),
        Ok(r) => Err(fail(format!("no convergence, residual {:e}", r.residual_inf))),
        Err(e) => Err(fail(e.to_string())),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sensitivity {
    pub lambda: f64,
    /// `v̄ = dṽ/dλ`.
    pub vbar: VertexFunction,
    /// `‖J''v̄ − g(u₀+ṽ)‖∞`.
    pub residual_inf: f64,
}

/// Solve the linearized equation `J''(ṽ) v̄ = g(u₀+ṽ)` after checking that
/// `J''(ṽ)` is positive definite.
pub fn sensitivity(eq: &ReducedEquation, v: &VertexFunction) -> Result<Sensitivity, ContinuationError> {
    let g = eq.graph();
    g.check_dim(v).map_err(SolverError::from)?;
    let a = eq.hessian_matrix(v).map_err(SolverError::from)?;
    let chol = Cholesky::new(a.clone()).ok_or(ContinuationError::Indefinite(eq.lambda()))?;
    let nl = eq.nonlinearity();
    let u = eq.full(v);
    let density = VertexFunction::from_fn(v.len(), |x| nl.vortex_density(u[x]).unwrap_or(f64::NAN));
    let rhs: DVector<f64> = g.mu_vector().component_mul(&density);
    let mut x = chol.solve(&rhs);
    let r = &rhs - &a * &x;
    x += chol.solve(&r);
    let vbar = VertexFunction::from(x);
    let hv = eq.hessian_apply(v, &vbar).map_err(SolverError::from)?;
    let residual_inf = (&*hv - &*density).amax();
    Ok(Sensitivity { lambda: eq.lambda(), vbar, residual_inf })
}

/// Default finite-difference step `10⁻⁴ λ`.
pub fn default_fd_step(lambda: f64) -> f64 {
    1e-4 * lambda
}

/// Centered difference `(ṽ_{λ+h} − ṽ_{λ−h}) / 2h` along the branch through `v`.
///
/// The neighbors are found by Newton from `v` and solved to `tol`.
pub fn finite_difference_sensitivity(
    eq: &ReducedEquation,
    v: &VertexFunction,
    h: f64,
    tol: f64,
) -> Result<VertexFunction, ContinuationError> {
    let opts = SolverOptions { tol, ..Default::default() };
    let solve_at = |lambda: f64| -> Result<VertexFunction, ContinuationError> {
        let e = eq.with_lambda(lambda)?;
        let rep = newton_solve(&e, v, &opts)?;
        if !rep.converged {
            return Err(ContinuationError::NoWitness(lambda));
        }
        Ok(rep.v)
    };
    let plus = solve_at(eq.lambda() + h)?;
    let minus = solve_at(eq.lambda() - h)?;
    Ok(VertexFunction::from((&*plus - &*minus) / (2.0 * h)))
}
