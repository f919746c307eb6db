//! Independent re-checks of a candidate solution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::graph::{DimensionMismatch, VertexFunction};
use crate::nonlinearity::DENSITY_MAX;
use crate::solver::{ReducedEquation, SIGN_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub residual_tol: f64,
    pub sign_tol: f64,
    /// Slack in the pointwise lower bound on `Δu`.
    pub bound_slack: f64,
    /// Relative tolerance on `λ∫g dμ = 4πM`.
    pub integral_rel_tol: f64,
    pub fd_rel_tol: f64,
    pub symmetry_rel_tol: f64,
    /// Tolerance on agreement with a stored residual.
    pub round_trip_tol: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            residual_tol: 1e-10,
            sign_tol: SIGN_TOLERANCE,
            bound_slack: 1e-9,
            integral_rel_tol: 1e-8,
            fd_rel_tol: 1e-6,
            symmetry_rel_tol: 1e-12,
            round_trip_tol: 1e-12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub lambda: f64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: &str, measured: f64, threshold: f64, passed: bool, detail: String) -> Check {
    Check { name: name.to_string(), passed, measured, threshold, detail }
}

/// Re-evaluate residual, sign, pointwise bound, integral identity, a
/// finite-difference gradient check and a Hessian symmetry sample.
///
/// With `stored_residual`, also compare the recomputed residual against it.
pub fn verify_suite(
    eq: &ReducedEquation,
    v: &VertexFunction,
    stored_residual: Option<f64>,
    opts: &VerifyOptions,
) -> Result<VerifyReport, DimensionMismatch> {
    let g = eq.graph();
    g.check_dim(v)?;
    let ids = g.ids();
    let lambda = eq.lambda();
    let mut checks = Vec::new();

    let r = eq.residual(v)?;
    let (rx, rmax) = r.iter().enumerate().fold((0, 0.0_f64), |acc, (x, &val)| if val.abs() > acc.1 { (x, val.abs()) } else { acc });
    checks.push(check("residual", rmax, opts.residual_tol, rmax <= opts.residual_tol, format!("largest at `{}`", ids[rx])));

    let u = eq.full(v);
    let (ux, umax) = u.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (x, &val)| if val > acc.1 { (x, val) } else { acc });
    let sign_ok = umax <= opts.sign_tol;
    let detail = if sign_ok { format!("max u at `{}`", ids[ux]) } else { format!("u is positive at `{}`", ids[ux]) };
    checks.push(check("sign", umax, opts.sign_tol, sign_ok, detail));

    // Δu ≥ −(4/27)λ + 4π Σ δ_{p_j}
    let lap_u = g.laplacian_apply(&u)?;
    let mut floor = VertexFunction::constant(g.len(), -DENSITY_MAX * lambda);
    for &p in eq.instance().vortices().indices() {
        floor[p] += 4.0 * PI / g.mu()[p];
    }
    let (bx, slack) = (0..g.len())
        .map(|x| (x, lap_u[x] - floor[x]))
        .fold((0, f64::INFINITY), |acc, (x, s)| if s < acc.1 { (x, s) } else { acc });
    checks.push(check("pointwise-bound", slack, -opts.bound_slack, slack >= -opts.bound_slack, format!("tightest at `{}`", ids[bx])));

    let target = 4.0 * PI * eq.instance().vortices().count() as f64;
    let rel = (eq.density_integral(v) - target).abs() / target;
    checks.push(check("integral-identity", rel, opts.integral_rel_tol, rel <= opts.integral_rel_tol, format!("target 4πM = {target}")));

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = VertexFunction::from_fn(g.len(), |_| rng.gen_range(-1.0..1.0));
    let phi = VertexFunction::from_fn(g.len(), |_| rng.gen_range(-1.0..1.0));

    let grad = eq.gradient(v)?;
    let analytic = g.inner(&grad, &h)?;
    // F' blows up as u → 0⁻, so the step shrinks with the smallest |u|
    let closest = u.iter().fold(f64::INFINITY, |m, &x| m.min(x.abs()));
    let eps = (1e-2 * closest).clamp(1e-9, 1e-5);
    let plus = eq.functional(&VertexFunction::from(&**v + eps * &*h))?;
    let minus = eq.functional(&VertexFunction::from(&**v - eps * &*h))?;
    let fd = (plus - minus) / (2.0 * eps);
    let j = eq.functional(v)?;
    let scale = analytic.abs().max(1.0 + j.abs());
    let err = (fd - analytic).abs() / scale;
    checks.push(check("gradient-fd", err, opts.fd_rel_tol, err <= opts.fd_rel_tol, format!("directional derivative {analytic:e}")));

    let hh = eq.hessian_apply(v, &h)?;
    let hphi = eq.hessian_apply(v, &phi)?;
    let a = g.inner(&hh, &phi)?;
    let b = g.inner(&h, &hphi)?;
    let sym = (a - b).abs() / a.abs().max(b.abs()).max(1.0);
    checks.push(check("hessian-symmetry", sym, opts.symmetry_rel_tol, sym <= opts.symmetry_rel_tol, format!("⟨Hh,φ⟩ = {a:e}")));

    if let Some(stored) = stored_residual {
        let d = (stored - rmax).abs();
        checks.push(check("round-trip-residual", d, opts.round_trip_tol, d <= opts.round_trip_tol, format!("stored {stored:e}")));
    }

    Ok(VerifyReport { lambda, checks })
}
