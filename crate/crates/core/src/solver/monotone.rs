//! Shifted fixed-point iteration between ordered sub- and supersolutions.
//!
//! With `K = 2λ ≥ λ sup|g'|`, the map
//!
//! ```text
//! T(v) = (K − Δ)⁻¹ (K v + λ g(u₀+v) − 4πM/|V|)
//! ```
//!
//! is order preserving, its fixed points solve the reduced equation, and it
//! maps subsolutions upward and supersolutions downward. In matrix form the
//! step solves `(K diag μ + L) w = μ ⊙ (K v + λ g − 4πM/|V|)`, an M-matrix.

use nalgebra::DVector;

use super::{
    newton_solve, Method, ReducedEquation, SolveReport, SolverError, SolverOptions, BARRIER_SLACK,
    SUBSOLUTION_SLACK,
};
use crate::graph::VertexFunction;
use crate::nonlinearity::DENSITY_ARGMAX;

const HANDOFF_RESIDUAL: f64 = 1e-6;
const HANDOFF_ORDER_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Up,
    Down,
}

/// Result of iterating downward from a supersolution.
#[derive(Debug, Clone)]
pub struct DescentOutcome {
    pub report: SolveReport,
    /// Set when the iterates certify that no solution lies below the start:
    /// all of `u` sits where `g` is increasing and `λ∫g dμ < 4πM` already.
    pub no_solution_below: bool,
}

struct Run {
    v: VertexFunction,
    iterations: usize,
    trace: Vec<f64>,
    min_increment: f64,
    notes: Vec<String>,
    certified_empty: bool,
    converged_by_handoff: bool,
}

fn iterate(
    eq: &ReducedEquation,
    start: &VertexFunction,
    direction: Direction,
    opts: &SolverOptions,
) -> Result<Run, SolverError> {
    let factor = eq.shifted_factor().ok_or(SolverError::NonFinite)?;
    let g = eq.graph();
    let mu = g.mu_vector();
    let k = eq.shift();
    let lambda = eq.lambda();
    let c = eq.flux_density();
    let barrier = eq.barrier();
    let target_mass = c * g.volume();

    let mut v = start.clone();
    let mut trace = Vec::new();
    let mut notes = Vec::new();
    let mut min_increment = f64::INFINITY;
    let mut next_handoff = 0usize;
    let mut handoff_gap = 16usize;
    let mut iterations = 0usize;

    loop {
        let pw = eq.pointwise(&v);
        let mut r = g.laplacian_unchecked(&v);
        for x in 0..v.len() {
            r[x] += lambda * pw[x].g - c;
        }
        let res = r.norm_inf();
        trace.push(res);
        if res <= opts.tol {
            break;
        }
        if !res.is_finite() {
            return Err(SolverError::NonFinite);
        }
        if direction == Direction::Down {
            let u_max = (0..v.len()).map(|x| eq.u0()[x] + v[x]).fold(f64::NEG_INFINITY, f64::max);
            let mass: f64 = (0..v.len()).map(|x| mu[x] * lambda * pw[x].g).sum();
            if u_max <= DENSITY_ARGMAX && mass < target_mass * (1.0 - 1e-12) {
                return Ok(Run {
                    v,
                    iterations,
                    trace,
                    min_increment,
                    notes,
                    certified_empty: true,
                    converged_by_handoff: false,
                });
            }
        }
        if iterations >= opts.max_iter {
            notes.push(format!("iteration cap {} reached", opts.max_iter));
            break;
        }

        if opts.accelerate && res <= HANDOFF_RESIDUAL && iterations >= next_handoff {
            let polish = SolverOptions { newton_max_iter: 30, ..*opts };
            let nr = newton_solve(eq, &v, &polish)?;
            let ordered = match direction {
                Direction::Up => (0..v.len()).all(|x| nr.v[x] >= v[x] - HANDOFF_ORDER_SLACK)
                    && (0..v.len()).all(|x| nr.v[x] <= barrier[x] + BARRIER_SLACK),
                Direction::Down => (0..v.len()).all(|x| nr.v[x] <= v[x] + HANDOFF_ORDER_SLACK),
            };
            if nr.converged && ordered {
                notes.push(format!("handed off to Newton after {iterations} iterations"));
                trace.extend(nr.trace.iter().skip(1));
                return Ok(Run {
                    v: nr.v,
                    iterations: iterations + nr.iterations,
                    trace,
                    min_increment,
                    notes,
                    certified_empty: false,
                    converged_by_handoff: true,
                });
            }
            next_handoff = iterations + handoff_gap;
            handoff_gap *= 2;
        }

        let rhs = DVector::from_fn(v.len(), |x, _| mu[x] * (k * v[x] + lambda * pw[x].g - c));
        let next = VertexFunction::from(factor.solve(&rhs));
        let step_min = (0..v.len()).map(|x| next[x] - v[x]).fold(f64::INFINITY, f64::min);
        let step_max = (0..v.len()).map(|x| next[x] - v[x]).fold(f64::NEG_INFINITY, f64::max);
        min_increment = min_increment.min(match direction {
            Direction::Up => step_min,
            Direction::Down => -step_max,
        });
        if direction == Direction::Up {
            if let Some((vertex, excess)) = (0..v.len())
                .map(|x| (x, next[x] - barrier[x]))
                .find(|&(_, e)| e > BARRIER_SLACK)
            {
                return Err(SolverError::BarrierExceeded { vertex, excess });
            }
        }
        v = next;
        iterations += 1;
    }

    Ok(Run {
        v,
        iterations,
        trace,
        min_increment,
        notes,
        certified_empty: false,
        converged_by_handoff: false,
    })
}

fn finish(eq: &ReducedEquation, run: Run, opts: &SolverOptions) -> SolveReport {
    let mut report = eq.report(run.v, Method::Monotone, run.iterations, run.trace, opts.tol);
    report.min_increment = Some(if run.min_increment.is_finite() { run.min_increment } else { 0.0 });
    report.notes.extend(run.notes);
    report.notes.push(format!("shift K = 2λ = {}", eq.shift()));
    if run.converged_by_handoff {
        report.notes.push("final iterates from Newton; ordering against the last monotone iterate checked".into());
    }
    report
}

/// Iterate upward from a subsolution to the minimal solution above it.
pub fn monotone_iterate(
    eq: &ReducedEquation,
    v_sub: &VertexFunction,
    opts: &SolverOptions,
) -> Result<SolveReport, SolverError> {
    eq.graph().check_dim(v_sub)?;
    if !v_sub.is_finite() {
        return Err(SolverError::NonFinite);
    }
    if let Some((vertex, residual)) = eq.subsolution_violation(v_sub, SUBSOLUTION_SLACK)? {
        return Err(SolverError::NotSubsolution { vertex, residual });
    }
    let run = iterate(eq, v_sub, Direction::Up, opts)?;
    Ok(finish(eq, run, opts))
}

/// Iterate downward from a supersolution to the maximal solution below it,
/// or certify that none exists.
pub fn monotone_descend(
    eq: &ReducedEquation,
    v_super: &VertexFunction,
    opts: &SolverOptions,
) -> Result<DescentOutcome, SolverError> {
    eq.graph().check_dim(v_super)?;
    if !v_super.is_finite() {
        return Err(SolverError::NonFinite);
    }
    if let Some((vertex, residual)) = eq.supersolution_violation(v_super, SUBSOLUTION_SLACK)? {
        return Err(SolverError::NotSupersolution { vertex, residual });
    }
    let run = iterate(eq, v_super, Direction::Down, opts)?;
    let no_solution_below = run.certified_empty;
    let mut report = finish(eq, run, opts);
    if no_solution_below {
        report.converged = false;
        report.notes.push("iterates left the solvable region: no solution below the start".into());
    }
    Ok(DescentOutcome { report, no_solution_below })
}
