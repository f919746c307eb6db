//! The reduced equation `Δv = −λ g(u₀ + v) + 4πM/|V|`, its energy
//!
//! ```text
//! J(v) = ½ ∫|∇v|² dμ + λ ∫ W(u₀ + v) dμ + (4πM/|V|) ∫ v dμ
//! ```
//!
//! and the engines that find its critical points: damped Newton, monotone
//! sub/supersolution iteration, and projected-gradient minimization over an
//! obstacle set `{v ≥ v̲}`.
//!
//! Gradients and Hessians are taken in the `μ`-weighted inner product, so
//! `∇J = −Δv − λ g(u₀+v) + 4πM/|V|` and `J''h = −Δh − λ g'(u₀+v) h`.

use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DimensionMismatch, VertexFunction, WeightedGraph};
use crate::nonlinearity::{Nonlinearity, Pointwise, DENSITY_ARGMAX};
use crate::poisson::{Background, BadCoupling, PoissonError, ProblemInstance};

mod monotone;
mod newton;
mod obstacle;

pub use monotone::{monotone_descend, monotone_iterate, DescentOutcome};
pub use newton::newton_solve;
pub use obstacle::{obstacle_minimize, ObstacleOptions};

/// Slack allowed in the pointwise subsolution inequality.
pub const SUBSOLUTION_SLACK: f64 = 1e-9;

/// How far above the barrier `u ≡ 0` an iterate may drift before it is a fault.
pub const BARRIER_SLACK: f64 = 1e-8;

/// Bound on `max u` for a converged solution.
pub const SIGN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error(transparent)]
    Poisson(#[from] PoissonError),
    #[error(transparent)]
    Coupling(#[from] BadCoupling),
    #[error("starting point is not a subsolution: residual {residual:e} at vertex {vertex}")]
    NotSubsolution { vertex: usize, residual: f64 },
    #[error("starting point is not a supersolution: residual {residual:e} at vertex {vertex}")]
    NotSupersolution { vertex: usize, residual: f64 },
    #[error("iterate exceeds the supersolution u ≡ 0 by {excess:e} at vertex {vertex}")]
    BarrierExceeded { vertex: usize, excess: f64 },
    #[error("line search failed after {iterations} iterations")]
    LineSearch { iterations: usize },
    #[error("non-finite iterate")]
    NonFinite,
}

impl SolverError {
    pub fn code(&self) -> &'static str {
        match self {
            SolverError::Dimension(_) => "DIMENSION_MISMATCH",
            SolverError::Poisson(e) => e.code(),
            SolverError::Coupling(_) => "BAD_COUPLING",
            SolverError::NotSubsolution { .. } => "NOT_SUBSOLUTION",
            SolverError::NotSupersolution { .. } => "NOT_SUPERSOLUTION",
            SolverError::BarrierExceeded { .. } => "BARRIER_EXCEEDED",
            SolverError::LineSearch { .. } => "LINE_SEARCH_FAILED",
            SolverError::NonFinite => "NON_FINITE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Newton,
    Monotone,
    Obstacle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// ∞-norm residual tolerance.
    pub tol: f64,
    /// Iteration cap for fixed-point and gradient engines.
    pub max_iter: usize,
    /// Iteration cap for Newton.
    pub newton_max_iter: usize,
    /// Let the monotone engine hand off to Newton once the residual is small,
    /// keeping the result only if it respects the iteration's ordering.
    pub accelerate: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 10_000, newton_max_iter: 100, accelerate: false }
    }
}

impl SolverOptions {
    pub fn accelerated(mut self) -> Self {
        self.accelerate = true;
        self
    }
}

/// Outcome of one solve of the reduced equation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub lambda: f64,
    /// Reduced unknown `v`.
    pub v: VertexFunction,
    /// `u = u₀ + v`.
    pub u: VertexFunction,
    pub residual_inf: f64,
    pub j_value: f64,
    pub iterations: usize,
    pub method: Method,
    pub converged: bool,
    /// Residual ∞-norm after each iteration.
    pub trace: Vec<f64>,
    /// Smallest `min_x (v_{k+1} − v_k)` over the run (monotone engine only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub min_increment: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

/// The reduced problem at a fixed coupling, sharing its background across couplings.
#[derive(Debug, Clone)]
pub struct ReducedEquation {
    inst: ProblemInstance,
    background: Arc<Background>,
    nl: Nonlinearity,
    shifted: Arc<OnceLock<Option<Cholesky<f64, Dyn>>>>,
}

impl ReducedEquation {
    pub fn new(inst: ProblemInstance) -> Result<Self, PoissonError> {
        let background = Arc::new(Background::compute(&inst)?);
        Ok(Self { inst, background, nl: Nonlinearity::default(), shifted: Arc::default() })
    }

    pub fn with_nonlinearity(mut self, nl: Nonlinearity) -> Self {
        self.nl = nl;
        self
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self, BadCoupling> {
        Ok(Self {
            inst: self.inst.with_lambda(lambda)?,
            background: self.background.clone(),
            nl: self.nl,
            shifted: Arc::default(),
        })
    }

    pub fn instance(&self) -> &ProblemInstance {
        &self.inst
    }

    pub fn graph(&self) -> &WeightedGraph {
        self.inst.graph()
    }

    pub fn lambda(&self) -> f64 {
        self.inst.lambda()
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nl
    }

    pub fn background(&self) -> &Background {
        &self.background
    }

    pub fn u0(&self) -> &VertexFunction {
        &self.background.u0
    }

    /// `4πM/|V|`.
    pub fn flux_density(&self) -> f64 {
        self.background.flux_density
    }

    /// Monotone-iteration shift `K = 2λ ≥ λ sup|g'|`.
    pub fn shift(&self) -> f64 {
        2.0 * self.lambda()
    }

    pub fn dim(&self) -> usize {
        self.graph().len()
    }

    pub fn full(&self, v: &VertexFunction) -> VertexFunction {
        VertexFunction::from(&**self.u0() + &**v)
    }

    /// `v` for which `u = u₀ + v` equals the given function.
    pub fn reduced(&self, u: &VertexFunction) -> VertexFunction {
        VertexFunction::from(&**u - &**self.u0())
    }

    /// Supersolution barrier `v̄ = −u₀` (the solution `u ≡ 0` of the source-free problem).
    pub fn barrier(&self) -> VertexFunction {
        VertexFunction::from(-&**self.u0())
    }

    pub(crate) fn pointwise(&self, v: &VertexFunction) -> Vec<Pointwise> {
        let u0 = self.u0();
        (0..v.len()).map(|x| self.nl.eval_unchecked(u0[x] + v[x])).collect()
    }

    pub fn functional(&self, v: &VertexFunction) -> Result<f64, DimensionMismatch> {
        self.graph().check_dim(v)?;
        Ok(self.functional_unchecked(v))
    }

    pub(crate) fn functional_unchecked(&self, v: &VertexFunction) -> f64 {
        let g = self.graph();
        let u0 = self.u0();
        let mu = g.mu();
        let lambda = self.lambda();
        let c = self.flux_density();
        let mut bulk = 0.0;
        for x in 0..v.len() {
            let w = self.nl.eval_unchecked(u0[x] + v[x]).potential;
            bulk += mu[x] * (lambda * w + c * v[x]);
        }
        0.5 * g.dirichlet_unchecked(v) + bulk
    }

    /// `R(v) = Δv + λ g(u₀+v) − 4πM/|V|`; zero exactly at solutions.
    pub fn residual(&self, v: &VertexFunction) -> Result<VertexFunction, DimensionMismatch> {
        self.graph().check_dim(v)?;
        Ok(self.residual_unchecked(v))
    }

    pub(crate) fn residual_unchecked(&self, v: &VertexFunction) -> VertexFunction {
        let mut r = self.graph().laplacian_unchecked(v);
        let u0 = self.u0();
        let lambda = self.lambda();
        let c = self.flux_density();
        for x in 0..v.len() {
            r[x] += lambda * self.nl.eval_unchecked(u0[x] + v[x]).g - c;
        }
        r
    }

    /// `μ`-weighted gradient of `J`, equal to `−R(v)`.
    pub fn gradient(&self, v: &VertexFunction) -> Result<VertexFunction, DimensionMismatch> {
        Ok(VertexFunction::from(-self.residual(v)?.into_inner()))
    }

    pub fn hessian_apply(&self, v: &VertexFunction, h: &VertexFunction) -> Result<VertexFunction, DimensionMismatch> {
        let g = self.graph();
        g.check_dim(v)?;
        g.check_dim(h)?;
        let mut out = g.laplacian_unchecked(h);
        let lambda = self.lambda();
        for (x, p) in self.pointwise(v).iter().enumerate() {
            out[x] = -out[x] - lambda * p.g_prime * h[x];
        }
        Ok(out)
    }

    /// Symmetric matrix `A = L − diag(μ λ g')`, with `A h = μ ⊙ J''h`.
    pub fn hessian_matrix(&self, v: &VertexFunction) -> Result<DMatrix<f64>, DimensionMismatch> {
        let g = self.graph();
        g.check_dim(v)?;
        let mut a = g.laplacian_matrix();
        let lambda = self.lambda();
        for (x, p) in self.pointwise(v).iter().enumerate() {
            a[(x, x)] -= g.mu()[x] * lambda * p.g_prime;
        }
        Ok(a)
    }

    /// Factor of `K diag(μ) + L` for the monotone map, computed once per coupling.
    pub(crate) fn shifted_factor(&self) -> Option<&Cholesky<f64, Dyn>> {
        self.shifted
            .get_or_init(|| {
                let g = self.graph();
                let mut m = g.laplacian_matrix();
                let k = self.shift();
                for x in 0..g.len() {
                    m[(x, x)] += k * g.mu()[x];
                }
                Cholesky::new(m)
            })
            .as_ref()
    }

    /// First vertex where `v` violates the subsolution inequality `R(v) ≥ −slack`.
    pub fn subsolution_violation(&self, v: &VertexFunction, slack: f64) -> Result<Option<(usize, f64)>, DimensionMismatch> {
        let r = self.residual(v)?;
        Ok(r.iter().enumerate().find(|(_, &rx)| rx < -slack).map(|(x, &rx)| (x, rx)))
    }

    pub fn supersolution_violation(&self, v: &VertexFunction, slack: f64) -> Result<Option<(usize, f64)>, DimensionMismatch> {
        let r = self.residual(v)?;
        Ok(r.iter().enumerate().find(|(_, &rx)| rx > slack).map(|(x, &rx)| (x, rx)))
    }

    /// `λ ∫ g(u₀+v) dμ`, which equals `4πM` at every solution.
    pub fn density_integral(&self, v: &VertexFunction) -> f64 {
        let mu = self.graph().mu();
        self.lambda() * self.pointwise(v).iter().zip(mu).map(|(p, m)| m * p.g).sum::<f64>()
    }

    pub(crate) fn report(
        &self,
        v: VertexFunction,
        method: Method,
        iterations: usize,
        trace: Vec<f64>,
        tol: f64,
    ) -> SolveReport {
        let r = self.residual_unchecked(&v);
        let residual_inf = r.norm_inf();
        let u = self.full(&v);
        let mut notes = Vec::new();
        let mut converged = residual_inf <= tol && v.is_finite();
        if converged && u.max_value() > SIGN_TOLERANCE {
            notes.push(format!("max u = {:e} exceeds the sign tolerance", u.max_value()));
            converged = false;
        }
        SolveReport {
            lambda: self.lambda(),
            j_value: self.functional_unchecked(&v),
            v,
            u,
            residual_inf,
            iterations,
            method,
            converged,
            trace,
            min_increment: None,
            notes,
        }
    }
}

/// `v̲ = u̲ − u₀` for the constant `u̲ ≡ 2/3 − ln 3`, when it is a subsolution.
///
/// Returns `None` below `λ = 27π / min_j μ(p_j)`.
pub fn constant_subsolution(eq: &ReducedEquation) -> Option<VertexFunction> {
    if eq.lambda() < eq.instance().constant_subsolution_lambda() {
        return None;
    }
    let u = VertexFunction::constant(eq.dim(), DENSITY_ARGMAX);
    let v = eq.reduced(&u);
    match eq.subsolution_violation(&v, SUBSOLUTION_SLACK) {
        Ok(None) => Some(v),
        _ => None,
    }
}

/// Default pipeline: monotone iteration from the constant subsolution when it
/// exists, otherwise Newton from `u ≡ 2/3 − ln 3`.
pub fn solve(eq: &ReducedEquation, opts: &SolverOptions) -> Result<SolveReport, SolverError> {
    match constant_subsolution(eq) {
        Some(sub) => monotone_iterate(eq, &sub, &opts.accelerated()),
        None => {
            let start = eq.reduced(&VertexFunction::constant(eq.dim(), DENSITY_ARGMAX));
            newton_solve(eq, &start, opts)
        }
    }
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::families;
    use crate::poisson::VortexSet;
    use std::f64::consts::PI;

    pub(crate) fn two_node(lambda: f64) -> ReducedEquation {
        let g = Arc::new(families::two_node());
        let vs = VortexSet::new(&g, &["a"]).unwrap();
        ReducedEquation::new(ProblemInstance::new(g, vs, lambda).unwrap()).unwrap()
    }

    #[test]
    fn functional_where_potential_vanishes() {
        let eq = two_node(5.0);
        for &c in &[1.0, PI, 4.0, 10.0] {
            let v = VertexFunction::from(-&**eq.u0()).map(|x| x + c);
            let expected = 2.0 * PI * PI + 4.0 * PI * c;
            let got = eq.functional(&v).unwrap();
            assert!((got - expected).abs() < 1e-12 * expected, "c={c}: {got} vs {expected}");
        }
    }

    #[test]
    fn gradient_where_density_vanishes() {
        let eq = two_node(5.0);
        let v = VertexFunction::from_vec(vec![PI + 1.0, -PI + 2.0]);
        let grad = eq.gradient(&v).unwrap();
        let lap = eq.graph().laplacian_apply(&v).unwrap();
        for x in 0..2 {
            assert!((grad[x] - (-lap[x] + eq.flux_density())).abs() < 1e-14);
        }
    }

    #[test]
    fn hessian_trivial_cases() {
        let eq = two_node(5.0);
        let v = VertexFunction::from_vec(vec![0.3, -0.1]);
        assert_eq!(eq.hessian_apply(&v, &VertexFunction::zeros(2)).unwrap().norm_inf(), 0.0);
        let positive = VertexFunction::from_vec(vec![PI + 1.0, -PI + 2.0]);
        let h = VertexFunction::from_vec(vec![0.7, -1.3]);
        let hh = eq.hessian_apply(&positive, &h).unwrap();
        let lap = eq.graph().laplacian_apply(&h).unwrap();
        assert!((&*hh + &*lap).amax() < 1e-14);
    }

    #[test]
    fn hessian_matrix_agrees_with_operator() {
        let eq = two_node(80.0);
        let v = eq.reduced(&VertexFunction::from_vec(vec![-0.4, -0.05]));
        let h = VertexFunction::from_vec(vec![0.3, 1.1]);
        let a = eq.hessian_matrix(&v).unwrap();
        let op = eq.hessian_apply(&v, &h).unwrap();
        let via = &a * &*h;
        for x in 0..2 {
            assert!((via[x] - eq.graph().mu()[x] * op[x]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_subsolution_threshold() {
        let at = two_node(27.0 * PI);
        let sub = constant_subsolution(&at).expect("subsolution at 27π");
        let u = at.full(&sub);
        assert!(u.iter().all(|&x| (x - DENSITY_ARGMAX).abs() < 1e-12));
        assert!(constant_subsolution(&two_node(13.0 * PI)).is_none());
        assert!(constant_subsolution(&two_node(26.99 * PI)).is_none());
        let above = two_node(60.0 * PI);
        let sub = constant_subsolution(&above).unwrap();
        assert!(above.subsolution_violation(&sub, 0.0).unwrap().is_none());
    }

    #[test]
    fn dimension_mismatch_propagates() {
        let eq = two_node(1.0);
        let bad = VertexFunction::zeros(3);
        assert!(eq.functional(&bad).is_err());
        assert!(eq.gradient(&bad).is_err());
        assert!(eq.hessian_apply(&bad, &bad).is_err());
    }
}
