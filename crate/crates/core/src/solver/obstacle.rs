//! Minimization of `J` over the obstacle set `{v ≥ v̲}`.
//!
//! Spectral projected gradient: Barzilai–Borwein steps in the `μ` metric,
//! projection by componentwise `max`, and a nonmonotone Armijo test against
//! the largest of the last few energies.

use std::collections::VecDeque;

use super::{Method, ReducedEquation, SolveReport, SolverError, SUBSOLUTION_SLACK};
use crate::graph::VertexFunction;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleOptions {
    /// Stop once `‖P(v − ∇J) − v‖∞` falls below this.
    pub pg_tol: f64,
    pub max_iter: usize,
    /// Number of past energies the nonmonotone test compares against.
    pub memory: usize,
}

impl Default for ObstacleOptions {
    fn default() -> Self {
        Self { pg_tol: 1e-9, max_iter: 100_000, memory: 10 }
    }
}

const ARMIJO: f64 = 1e-4;
const STEP_MIN: f64 = 1e-12;
const STEP_MAX: f64 = 1e12;

fn project(v: &VertexFunction, lower: &VertexFunction) -> VertexFunction {
    VertexFunction::from_fn(v.len(), |x| v[x].max(lower[x]))
}

fn projected_gradient_norm(v: &VertexFunction, grad: &VertexFunction, lower: &VertexFunction) -> f64 {
    (0..v.len())
        .map(|x| ((v[x] - grad[x]).max(lower[x]) - v[x]).abs())
        .fold(0.0, f64::max)
}

/// Minimize `J` over `{v ≥ v_sub}` starting from `v_sub`.
///
/// The report's residual is the unconstrained one, so `converged` also
/// certifies that the constrained minimizer is a critical point of `J`.
pub fn obstacle_minimize(
    eq: &ReducedEquation,
    v_sub: &VertexFunction,
    opts: &ObstacleOptions,
) -> Result<SolveReport, SolverError> {
    let g = eq.graph();
    g.check_dim(v_sub)?;
    if !v_sub.is_finite() {
        return Err(SolverError::NonFinite);
    }
    if let Some((vertex, residual)) = eq.subsolution_violation(v_sub, SUBSOLUTION_SLACK)? {
        return Err(SolverError::NotSubsolution { vertex, residual });
    }

    let lower = v_sub;
    let mut v = v_sub.clone();
    let mut j = eq.functional_unchecked(&v);
    let mut grad = VertexFunction::from(-eq.residual_unchecked(&v).into_inner());
    let mut history: VecDeque<f64> = VecDeque::from([j]);
    let mut trace = Vec::new();
    let mut notes = Vec::new();

    // initial step from a bound on the largest Hessian eigenvalue
    let mut alpha = 1.0 / (2.0 * g.laplacian_scale() + 2.0 * eq.lambda());
    let mut iterations = 0;

    loop {
        let pg = projected_gradient_norm(&v, &grad, lower);
        trace.push(pg);
        if !pg.is_finite() {
            return Err(SolverError::NonFinite);
        }
        if pg <= opts.pg_tol {
            break;
        }
        if iterations >= opts.max_iter {
            notes.push(format!("iteration cap {} reached", opts.max_iter));
            break;
        }
        iterations += 1;

        let target = project(&VertexFunction::from(&*v - alpha * &*grad), lower);
        let d = VertexFunction::from(&*target - &*v);
        let slope = g.inner_unchecked(&grad, &d);
        let j_ref = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let rounding = 4.0 * f64::EPSILON * j_ref.abs().max(1.0);

        let mut t = 1.0;
        let (v_new, j_new) = loop {
            let trial = VertexFunction::from(&*v + t * &*d);
            let j_trial = eq.functional_unchecked(&trial);
            if j_trial.is_finite() && j_trial <= j_ref + ARMIJO * t * slope + rounding {
                break (trial, j_trial);
            }
            t *= 0.5;
            if t < 1e-16 {
                return Err(SolverError::LineSearch { iterations });
            }
        };

        let grad_new = VertexFunction::from(-eq.residual_unchecked(&v_new).into_inner());
        let s = VertexFunction::from(&*v_new - &*v);
        let y = VertexFunction::from(&*grad_new - &*grad);
        let sy = g.inner_unchecked(&s, &y);
        let ss = g.inner_unchecked(&s, &s);
        alpha = if sy > 0.0 { (ss / sy).clamp(STEP_MIN, STEP_MAX) } else { STEP_MAX.min(alpha * 10.0) };

        v = v_new;
        j = j_new;
        grad = grad_new;
        history.push_back(j);
        if history.len() > opts.memory.max(1) {
            history.pop_front();
        }
    }

    let active = (0..v.len()).filter(|&x| v[x] - lower[x] <= 1e-12).count();
    let mut report = eq.report(v, Method::Obstacle, iterations, trace, opts.pg_tol);
    report.notes.extend(notes);
    report.notes.push(format!("{active} vertices on the obstacle"));
    report.notes.push(format!("unconstrained gradient ∞-norm {:e}", report.residual_inf));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::tests::two_node;
    use super::super::{constant_subsolution, monotone_iterate, SolverOptions};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn agrees_with_monotone_minimal_solution() {
        let eq = two_node(150.0);
        let sub = constant_subsolution(&eq).unwrap();
        // push the obstacle further down; it stays a subsolution
        let far = VertexFunction::from_vec(vec![sub[0] - 3.0, sub[1] - 3.0]);
        let far = if eq.subsolution_violation(&far, SUBSOLUTION_SLACK).unwrap().is_none() { far } else { sub.clone() };
        let mono = monotone_iterate(&eq, &sub, &SolverOptions::default().accelerated()).unwrap();
        let obs = obstacle_minimize(&eq, &far, &ObstacleOptions::default()).unwrap();
        assert!(obs.converged, "{:?}", obs.notes);
        assert!(super::super::max_abs_diff(&mono.v, &obs.v) <= 1e-8);
    }

    #[test]
    fn exact_solution_is_returned() {
        let eq = two_node(150.0);
        let sub = constant_subsolution(&eq).unwrap();
        let mono = monotone_iterate(&eq, &sub, &SolverOptions::default().accelerated()).unwrap();
        let obs = obstacle_minimize(&eq, &mono.v, &ObstacleOptions::default()).unwrap();
        assert_eq!(obs.iterations, 0);
        assert_eq!(obs.v, mono.v);
    }

    #[test]
    fn local_minimality_over_feasible_perturbations() {
        let eq = two_node(150.0);
        let sub = constant_subsolution(&eq).unwrap();
        let obs = obstacle_minimize(&eq, &sub, &ObstacleOptions::default()).unwrap();
        let j0 = eq.functional(&obs.v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = VertexFunction::from_fn(2, |x| obs.v[x] + rng.gen_range(1e-6..1e-2));
            assert!(eq.functional(&p).unwrap() >= j0 - 1e-12);
        }
    }
}
