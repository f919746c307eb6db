//! Vortex sources and the zero-mean Poisson background.
//!
//! The Dirac mass at a vortex vertex `p` is normalized so that
//! `∫ δ_p dμ = 1`, i.e. `δ_p(p) = 1/μ(p)`. The background `u₀` solves
//! `Δu₀ = −4πM/|V| + 4π Σ_j δ_{p_j}` with `∫ u₀ dμ = 0`, where `|V|` is the
//! total measure.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, Dyn};
use thiserror::Error;

use crate::graph::{DimensionMismatch, VertexFunction, WeightedGraph};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VortexError {
    #[error("at least one vortex point is required")]
    Empty,
    #[error("vortex `{0}` is not a vertex of the graph")]
    UnknownVertex(String),
    #[error("vortex `{0}` is listed more than once")]
    Duplicate(String),
}

impl VortexError {
    pub fn code(&self) -> &'static str {
        match self {
            VortexError::Empty => "VORTEX_NONE",
            VortexError::UnknownVertex(_) => "VORTEX_UNKNOWN_VERTEX",
            VortexError::Duplicate(_) => "VORTEX_DUPLICATE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("coupling must be positive and finite, got {0}")]
pub struct BadCoupling(pub f64);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoissonError {
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error("right-hand side has integral {integral:e}; a zero-mean source is required")]
    Incompatible { integral: f64 },
    #[error("Laplacian factorization failed")]
    Singular,
}

impl PoissonError {
    pub fn code(&self) -> &'static str {
        match self {
            PoissonError::Dimension(_) => "DIMENSION_MISMATCH",
            PoissonError::Incompatible { .. } => "POISSON_INCOMPATIBLE",
            PoissonError::Singular => "POISSON_SINGULAR",
        }
    }
}

/// Distinct vortex vertices `p_1, …, p_M`, stored as graph indices.
#[derive(Debug, Clone, PartialEq)]
pub struct VortexSet {
    indices: Vec<usize>,
}

impl VortexSet {
    pub fn new<S: AsRef<str>>(graph: &WeightedGraph, ids: &[S]) -> Result<Self, VortexError> {
        if ids.is_empty() {
            return Err(VortexError::Empty);
        }
        let mut seen = HashSet::new();
        let mut indices = Vec::with_capacity(ids.len());
        for id in ids {
            let id = id.as_ref();
            let ix = graph
                .index_of(id)
                .ok_or_else(|| VortexError::UnknownVertex(id.to_string()))?;
            if !seen.insert(ix) {
                return Err(VortexError::Duplicate(id.to_string()));
            }
            indices.push(ix);
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Number of vortices `M`.
    pub fn count(&self) -> usize {
        self.indices.len()
    }
}

/// Graph, vortex set and coupling `λ`.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    graph: Arc<WeightedGraph>,
    vortices: VortexSet,
    lambda: f64,
}

impl ProblemInstance {
    pub fn new(graph: Arc<WeightedGraph>, vortices: VortexSet, lambda: f64) -> Result<Self, BadCoupling> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(BadCoupling(lambda));
        }
        Ok(Self { graph, vortices, lambda })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self, BadCoupling> {
        Self::new(self.graph.clone(), self.vortices.clone(), lambda)
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn graph_arc(&self) -> &Arc<WeightedGraph> {
        &self.graph
    }

    pub fn vortices(&self) -> &VortexSet {
        &self.vortices
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `4πM/|V|`, the uniform part of the source.
    pub fn flux_density(&self) -> f64 {
        4.0 * PI * self.vortices.count() as f64 / self.graph.volume()
    }

    /// Necessary bound `27πM/|V|` below which no solution exists.
    pub fn necessary_lambda(&self) -> f64 {
        27.0 * PI * self.vortices.count() as f64 / self.graph.volume()
    }

    /// `27π / min_j μ(p_j)`, from which the constant `2/3 − ln 3` is a subsolution.
    pub fn constant_subsolution_lambda(&self) -> f64 {
        let mu = self.graph.mu();
        let min_mu = self
            .vortices
            .indices()
            .iter()
            .map(|&p| mu[p])
            .fold(f64::INFINITY, f64::min);
        27.0 * PI / min_mu
    }
}

/// `S = −4πM/|V| + 4π Σ_j δ_{p_j}`.
pub fn background_source(inst: &ProblemInstance) -> VertexFunction {
    let g = inst.graph();
    let mut s = VertexFunction::constant(g.len(), -inst.flux_density());
    for &p in inst.vortices().indices() {
        s[p] += 4.0 * PI / g.mu()[p];
    }
    s
}

/// Reusable factorization of `L + α μ μᵀ`, positive definite on a connected graph.
///
/// For a zero-mean right-hand side `f`, the solution of
/// `(L + α μμᵀ) u = −μ ⊙ f` satisfies `μᵀu = 0` and `Δu = f`.
#[derive(Debug, Clone)]
pub struct PoissonSolver {
    graph: Arc<WeightedGraph>,
    factor: Cholesky<f64, Dyn>,
    system: DMatrix<f64>,
}

impl PoissonSolver {
    pub fn new(graph: Arc<WeightedGraph>) -> Result<Self, PoissonError> {
        let mu = graph.mu_vector();
        let l = graph.laplacian_matrix();
        let n = graph.len() as f64;
        let alpha = (l.trace() / n).max(1.0) / (mu.norm_squared() / n);
        let system = &l + alpha * &mu * mu.transpose();
        let factor = Cholesky::new(system.clone()).ok_or(PoissonError::Singular)?;
        Ok(Self { graph, factor, system })
    }

    pub fn solve(&self, f: &VertexFunction) -> Result<VertexFunction, PoissonError> {
        let g = &*self.graph;
        g.check_dim(f)?;
        let integral = g.integrate_unchecked(f);
        let scale = f.norm_inf() * g.volume();
        if integral.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(PoissonError::Incompatible { integral });
        }
        let mu = g.mu_vector();
        let rhs = -mu.component_mul(f);
        let mut u = self.factor.solve(&rhs);
        // one step of iterative refinement
        let r = &rhs - &self.system * &u;
        u += self.factor.solve(&r);
        let mean = mu.dot(&u) / g.volume();
        u.add_scalar_mut(-mean);
        Ok(VertexFunction::from(u))
    }
}

pub fn poisson_solve(graph: &Arc<WeightedGraph>, f: &VertexFunction) -> Result<VertexFunction, PoissonError> {
    PoissonSolver::new(graph.clone())?.solve(f)
}

/// The split `u = u₀ + v`: background potential and the constant source it leaves.
#[derive(Debug, Clone)]
pub struct Background {
    pub u0: VertexFunction,
    pub source: VertexFunction,
    /// `4πM/|V|`
    pub flux_density: f64,
}

impl Background {
    pub fn compute(inst: &ProblemInstance) -> Result<Self, PoissonError> {
        let source = background_source(inst);
        let u0 = poisson_solve(inst.graph_arc(), &source)?;
        Ok(Self { u0, source, flux_density: inst.flux_density() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{families, GraphBuilder};

    fn two_node_instance() -> ProblemInstance {
        let g = Arc::new(families::two_node());
        let vs = VortexSet::new(&g, &["a"]).unwrap();
        ProblemInstance::new(g, vs, 1.0).unwrap()
    }

    #[test]
    fn two_node_source_and_background() {
        let inst = two_node_instance();
        let s = background_source(&inst);
        assert!((s[0] - 2.0 * PI).abs() < 1e-15);
        assert!((s[1] + 2.0 * PI).abs() < 1e-15);
        let bg = Background::compute(&inst).unwrap();
        assert!((bg.u0[0] + PI).abs() < 1e-12);
        assert!((bg.u0[1] - PI).abs() < 1e-12);
    }

    #[test]
    fn zero_source_gives_zero_potential() {
        let g = Arc::new(families::cycle(7));
        let u = poisson_solve(&g, &VertexFunction::zeros(7)).unwrap();
        assert!(u.norm_inf() == 0.0);
    }

    #[test]
    fn source_integrates_to_zero_with_general_measure() {
        let g = Arc::new(families::random_connected(30, 20, true, 5));
        let vs = VortexSet::new(&g, &["v3", "v17", "v29"]).unwrap();
        let inst = ProblemInstance::new(g.clone(), vs, 3.0).unwrap();
        let s = background_source(&inst);
        assert!(g.integrate(&s).unwrap().abs() < 1e-12);
        let u0 = poisson_solve(&g, &s).unwrap();
        let lu = g.laplacian_apply(&u0).unwrap();
        assert!((&*lu - &*s).amax() <= 1e-10 * s.norm_inf().max(1.0));
        assert!(g.integrate(&u0).unwrap().abs() <= 1e-12 * g.volume() * u0.norm_inf());
    }

    #[test]
    fn unit_measure_source_sums_to_zero() {
        let g = Arc::new(families::path(10));
        let vs = VortexSet::new(&g, &["v0", "v4", "v9"]).unwrap();
        let inst = ProblemInstance::new(g, vs, 1.0).unwrap();
        assert!(background_source(&inst).sum().abs() < 1e-12);
    }

    #[test]
    fn incompatible_source_is_rejected() {
        let g = Arc::new(families::two_node());
        let err = poisson_solve(&g, &VertexFunction::from_vec(vec![1.0, 0.0])).unwrap_err();
        assert!(matches!(err, PoissonError::Incompatible { .. }));
        assert!(matches!(
            poisson_solve(&g, &VertexFunction::zeros(3)).unwrap_err(),
            PoissonError::Dimension(_)
        ));
    }

    #[test]
    fn vortex_validation() {
        let g = GraphBuilder::new().vertex("a", 1.0).vertex("b", 2.0).edge("a", "b", 1.0).build().unwrap();
        assert_eq!(VortexSet::new::<&str>(&g, &[]).unwrap_err().code(), "VORTEX_NONE");
        assert_eq!(VortexSet::new(&g, &["z"]).unwrap_err().code(), "VORTEX_UNKNOWN_VERTEX");
        assert_eq!(VortexSet::new(&g, &["a", "a"]).unwrap_err().code(), "VORTEX_DUPLICATE");
        let vs = VortexSet::new(&g, &["b"]).unwrap();
        let g = Arc::new(g);
        assert!(ProblemInstance::new(g.clone(), vs.clone(), 0.0).is_err());
        assert!(ProblemInstance::new(g.clone(), vs.clone(), f64::NAN).is_err());
        let inst = ProblemInstance::new(g, vs, 1.0).unwrap();
        assert!((inst.constant_subsolution_lambda() - 27.0 * PI / 2.0).abs() < 1e-12);
        assert!((inst.necessary_lambda() - 9.0 * PI).abs() < 1e-12);
    }
}
