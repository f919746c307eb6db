use nalgebra::DMatrix;

use super::{Method, ReducedEquation, SolveReport, SolverError, SolverOptions};
use crate::graph::VertexFunction;

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-12;

fn merit(eq: &ReducedEquation, r: &VertexFunction) -> f64 {
    0.5 * eq.graph().inner_unchecked(r, r)
}

/// Solve `A δ = b`, regularizing with `+εI` when the factorization is singular.
fn regularized_solve(a: &DMatrix<f64>, b: &nalgebra::DVector<f64>, notes: &mut Vec<String>) -> Option<nalgebra::DVector<f64>> {
    if let Some(x) = a.clone().lu().solve(b) {
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let scale = a.amax().max(1.0);
    let mut eps = 1e-10 * scale;
    for _ in 0..8 {
        let mut shifted = a.clone();
        for i in 0..a.nrows() {
            shifted[(i, i)] += eps;
        }
        if let Some(x) = shifted.lu().solve(b) {
            if x.iter().all(|v| v.is_finite()) {
                notes.push(format!("singular Jacobian regularized with eps = {eps:e}"));
                return Some(x);
            }
        }
        eps *= 100.0;
    }
    None
}

/// Damped Newton on `R(v) = Δv + λg(u₀+v) − 4πM/|V|` with Armijo backtracking on `½∫R² dμ`.
///
/// Non-convergence is reported through `converged = false`, never as an error.
pub fn newton_solve(
    eq: &ReducedEquation,
    v_init: &VertexFunction,
    opts: &SolverOptions,
) -> Result<SolveReport, SolverError> {
    eq.graph().check_dim(v_init)?;
    if !v_init.is_finite() {
        return Err(SolverError::NonFinite);
    }
    let mu = eq.graph().mu_vector();
    let mut v = v_init.clone();
    let mut r = eq.residual_unchecked(&v);
    let mut phi = merit(eq, &r);
    let mut trace = vec![r.norm_inf()];
    let mut notes = Vec::new();
    let mut iterations = 0;

    while r.norm_inf() > opts.tol && iterations < opts.newton_max_iter {
        iterations += 1;
        let a = eq.hessian_matrix(&v)?;
        let rhs = mu.component_mul(&r);
        let Some(delta) = regularized_solve(&a, &rhs, &mut notes) else {
            notes.push("Jacobian could not be factored".into());
            break;
        };
        let mut step = 1.0;
        let accepted = loop {
            let trial = VertexFunction::from(&*v + step * &delta);
            let r_trial = eq.residual_unchecked(&trial);
            let phi_trial = merit(eq, &r_trial);
            if phi_trial.is_finite() && phi_trial <= (1.0 - 2.0 * ARMIJO * step) * phi {
                break Some((trial, r_trial, phi_trial));
            }
            step *= 0.5;
            if step < MIN_STEP {
                break None;
            }
        };
        match accepted {
            Some((trial, r_trial, phi_trial)) => {
                v = trial;
                r = r_trial;
                phi = phi_trial;
                trace.push(r.norm_inf());
            }
            None => {
                notes.push(format!("line search stalled at iteration {iterations}"));
                break;
            }
        }
    }

    let mut report = eq.report(v, Method::Newton, iterations, trace, opts.tol);
    report.notes.extend(notes);
    if !report.converged && iterations >= opts.newton_max_iter {
        report.notes.push(format!("iteration cap {} reached", opts.newton_max_iter));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::tests::two_node;
    use super::*;
    use crate::nonlinearity::DENSITY_ARGMAX;

    #[test]
    fn converges_well_above_critical_coupling() {
        let eq = two_node(200.0);
        let start = eq.reduced(&VertexFunction::constant(2, -1.0));
        let rep = newton_solve(&eq, &start, &SolverOptions::default()).unwrap();
        assert!(rep.converged, "{:?}", rep.notes);
        assert!(rep.residual_inf <= 1e-10);
        assert!(rep.u.max_value() <= 1e-10);
        assert!(rep.iterations < 50);
    }

    #[test]
    fn exact_solution_needs_no_iterations() {
        let eq = two_node(200.0);
        let start = eq.reduced(&VertexFunction::constant(2, -1.0));
        let rep = newton_solve(&eq, &start, &SolverOptions::default()).unwrap();
        let again = newton_solve(&eq, &rep.v, &SolverOptions::default()).unwrap();
        assert!(again.converged);
        assert!(again.iterations <= 1);
    }

    #[test]
    fn fails_below_necessary_coupling() {
        let eq = two_node(1.0);
        for &c in &[-0.1, DENSITY_ARGMAX, -2.0, -5.0] {
            let start = eq.reduced(&VertexFunction::constant(2, c));
            let rep = newton_solve(&eq, &start, &SolverOptions::default()).unwrap();
            assert!(!rep.converged);
            assert!(rep.residual_inf > 1e-3);
        }
    }
}
