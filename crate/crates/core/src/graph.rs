//! Weighted finite graphs and their discrete calculus.
//!
//! A [`WeightedGraph`] carries a positive measure `mu` on vertices and a
//! positive symmetric weight on every edge. The operators here follow the
//! measure-weighted convention
//!
//! ```text
//! Δu(x)      = (1/μ(x)) Σ_{y~x} ω_xy (u(y) − u(x))
//! ∫ f dμ     = Σ_x μ(x) f(x)
//! ∫ Γ(u,φ)dμ = (1/2) Σ_x Σ_{y~x} ω_xy (u(y) − u(x)) (φ(y) − φ(x))
//! ```
//!
//! and the Dirichlet energy is `∫ Γ(u,u) dμ`, i.e. each unordered edge counted
//! once. With this convention `∫ Γ(u,φ) dμ = −∫ Δu · φ dμ` holds exactly.

use std::collections::{HashMap, VecDeque};
use std::ops::{Deref, DerefMut};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Validation failures raised while assembling a graph.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("graph has no vertices")]
    Empty,
    #[error("vertex `{0}` is declared more than once")]
    DuplicateVertex(String),
    #[error("vertex `{id}` has non-positive or non-finite measure {mu}")]
    BadMeasure { id: String, mu: f64 },
    #[error("edge endpoint `{0}` is not a declared vertex")]
    UnknownEndpoint(String),
    #[error("self-loop at vertex `{0}`")]
    SelfLoop(String),
    #[error("edge {{`{a}`, `{b}`}} is declared more than once")]
    DuplicateEdge { a: String, b: String },
    #[error("edge {{`{a}`, `{b}`}} has non-positive or non-finite weight {w}")]
    BadWeight { a: String, b: String, w: f64 },
    #[error("graph is disconnected: vertex `{0}` is unreachable from `{1}`")]
    Disconnected(String, String),
}

impl GraphError {
    /// Stable machine-readable code for reports and exit diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            GraphError::Empty => "GRAPH_EMPTY",
            GraphError::DuplicateVertex(_) => "VERTEX_DUPLICATE",
            GraphError::BadMeasure { .. } => "VERTEX_BAD_MEASURE",
            GraphError::UnknownEndpoint(_) => "EDGE_UNKNOWN_VERTEX",
            GraphError::SelfLoop(_) => "EDGE_SELF_LOOP",
            GraphError::DuplicateEdge { .. } => "EDGE_DUPLICATE",
            GraphError::BadWeight { .. } => "EDGE_BAD_WEIGHT",
            GraphError::Disconnected(..) => "GRAPH_DISCONNECTED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("vertex function has length {found}, graph has {expected} vertices")]
pub struct DimensionMismatch {
    pub expected: usize,
    pub found: usize,
}

/// A real value per vertex, aligned with the owning graph's vertex order.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexFunction(DVector<f64>);

impl VertexFunction {
    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self(DVector::from_element(n, value))
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(DVector::from_vec(values))
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize) -> f64) -> Self {
        Self(DVector::from_fn(n, |i, _| f(i)))
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }

    pub fn max_value(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.map(f))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Deref for VertexFunction {
    type Target = DVector<f64>;
    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl DerefMut for VertexFunction {
    fn deref_mut(&mut self) -> &mut DVector<f64> {
        &mut self.0
    }
}

impl serde::Serialize for VertexFunction {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.0.iter())
    }
}

impl<'de> serde::Deserialize<'de> for VertexFunction {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Vec::<f64>::deserialize(deserializer).map(Self::from_vec)
    }
}

impl From<DVector<f64>> for VertexFunction {
    fn from(v: DVector<f64>) -> Self {
        Self(v)
    }
}

impl From<Vec<f64>> for VertexFunction {
    fn from(v: Vec<f64>) -> Self {
        Self::from_vec(v)
    }
}

/// An undirected edge between vertex indices `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub w: f64,
}

/// Connected finite graph with vertex measure and symmetric edge weights.
///
/// Immutable after construction; share it behind an `Arc`.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    mu: Vec<f64>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug, Default, Clone)]
pub struct GraphBuilder {
    vertices: Vec<(String, f64)>,
    edges: Vec<(String, String, f64)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn vertex(mut self, id: impl Into<String>, mu: f64) -> Self {
        self.vertices.push((id.into(), mu));
        self
    }

    pub fn edge(mut self, a: impl Into<String>, b: impl Into<String>, w: f64) -> Self {
        self.edges.push((a.into(), b.into(), w));
        self
    }

    pub fn add_vertex(&mut self, id: impl Into<String>, mu: f64) {
        self.vertices.push((id.into(), mu));
    }

    pub fn add_edge(&mut self, a: impl Into<String>, b: impl Into<String>, w: f64) {
        self.edges.push((a.into(), b.into(), w));
    }

    pub fn build(self) -> Result<WeightedGraph, GraphError> {
        if self.vertices.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut ids = Vec::with_capacity(self.vertices.len());
        let mut mu = Vec::with_capacity(self.vertices.len());
        let mut index = HashMap::with_capacity(self.vertices.len());
        for (id, m) in self.vertices {
            if index.contains_key(&id) {
                return Err(GraphError::DuplicateVertex(id));
            }
            if !(m.is_finite() && m > 0.0) {
                return Err(GraphError::BadMeasure { id, mu: m });
            }
            index.insert(id.clone(), ids.len());
            ids.push(id);
            mu.push(m);
        }

        let n = ids.len();
        let mut adjacency = vec![Vec::new(); n];
        let mut seen = HashMap::new();
        let mut edges = Vec::with_capacity(self.edges.len());
        for (a, b, w) in self.edges {
            let ia = *index.get(&a).ok_or_else(|| GraphError::UnknownEndpoint(a.clone()))?;
            let ib = *index.get(&b).ok_or_else(|| GraphError::UnknownEndpoint(b.clone()))?;
            if ia == ib {
                return Err(GraphError::SelfLoop(a));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(GraphError::BadWeight { a, b, w });
            }
            let key = (ia.min(ib), ia.max(ib));
            if seen.insert(key, ()).is_some() {
                return Err(GraphError::DuplicateEdge { a, b });
            }
            adjacency[ia].push((ib, w));
            adjacency[ib].push((ia, w));
            edges.push(Edge { a: key.0, b: key.1, w });
        }

        let graph = WeightedGraph { ids, index, mu, edges, adjacency };
        if let Some(unreached) = graph.first_unreachable() {
            return Err(GraphError::Disconnected(
                graph.ids[unreached].clone(),
                graph.ids[0].clone(),
            ));
        }
        Ok(graph)
    }
}

impl WeightedGraph {
    pub fn builder() -> GraphBuilder {
        GraphBuilder::new()
    }

    fn first_unreachable(&self) -> Option<usize> {
        let n = self.len();
        let mut visited = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        visited[0] = true;
        while let Some(x) = queue.pop_front() {
            for &(y, _) in &self.adjacency[x] {
                if !visited[y] {
                    visited[y] = true;
                    queue.push_back(y);
                }
            }
        }
        visited.iter().position(|v| !v)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, x: usize) -> &[(usize, f64)] {
        &self.adjacency[x]
    }

    pub fn mu_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mu)
    }

    pub fn check_dim(&self, f: &VertexFunction) -> Result<(), DimensionMismatch> {
        if f.len() == self.len() {
            Ok(())
        } else {
            Err(DimensionMismatch { expected: self.len(), found: f.len() })
        }
    }

    /// Total measure `Σ_x μ(x)`.
    pub fn volume(&self) -> f64 {
        self.mu.iter().sum()
    }

    pub fn laplacian_apply(&self, u: &VertexFunction) -> Result<VertexFunction, DimensionMismatch> {
        self.check_dim(u)?;
        Ok(self.laplacian_unchecked(u))
    }

    pub(crate) fn laplacian_unchecked(&self, u: &VertexFunction) -> VertexFunction {
        VertexFunction::from_fn(self.len(), |x| {
            let ux = u[x];
            let s: f64 = self.adjacency[x].iter().map(|&(y, w)| w * (u[y] - ux)).sum();
            s / self.mu[x]
        })
    }

    pub fn integrate(&self, f: &VertexFunction) -> Result<f64, DimensionMismatch> {
        self.check_dim(f)?;
        Ok(self.integrate_unchecked(f))
    }

    pub(crate) fn integrate_unchecked(&self, f: &VertexFunction) -> f64 {
        self.mu.iter().zip(f.iter()).map(|(m, v)| m * v).sum()
    }

    /// `∫ u φ dμ`.
    pub fn inner(&self, u: &VertexFunction, phi: &VertexFunction) -> Result<f64, DimensionMismatch> {
        self.check_dim(u)?;
        self.check_dim(phi)?;
        Ok(self.inner_unchecked(u, phi))
    }

    pub(crate) fn inner_unchecked(&self, u: &VertexFunction, phi: &VertexFunction) -> f64 {
        (0..self.len()).map(|x| self.mu[x] * u[x] * phi[x]).sum()
    }

    /// `∫ Γ(u, φ) dμ`, summed edge by edge.
    pub fn gradient_form_integral(
        &self,
        u: &VertexFunction,
        phi: &VertexFunction,
    ) -> Result<f64, DimensionMismatch> {
        self.check_dim(u)?;
        self.check_dim(phi)?;
        Ok(self
            .edges
            .iter()
            .map(|e| e.w * (u[e.b] - u[e.a]) * (phi[e.b] - phi[e.a]))
            .sum())
    }

    /// `∫ |∇u|² dμ = Σ_{edges} ω_xy (u(y) − u(x))²`.
    pub fn dirichlet_energy(&self, u: &VertexFunction) -> Result<f64, DimensionMismatch> {
        self.check_dim(u)?;
        Ok(self.dirichlet_unchecked(u))
    }

    pub(crate) fn dirichlet_unchecked(&self, u: &VertexFunction) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                let d = u[e.b] - u[e.a];
                e.w * d * d
            })
            .sum()
    }

    /// Combinatorial Laplacian `L = D − W`, so that `μ ⊙ Δu = −L u`.
    pub fn laplacian_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut l = DMatrix::zeros(n, n);
        for e in &self.edges {
            l[(e.a, e.a)] += e.w;
            l[(e.b, e.b)] += e.w;
            l[(e.a, e.b)] -= e.w;
            l[(e.b, e.a)] -= e.w;
        }
        l
    }

    /// Largest weighted degree over measure, an upper bound scale for `−Δ`.
    pub fn laplacian_scale(&self) -> f64 {
        (0..self.len())
            .map(|x| self.adjacency[x].iter().map(|&(_, w)| w).sum::<f64>() / self.mu[x])
            .fold(0.0, f64::max)
    }
}

/// Unit-weight, unit-measure graph families used by tests and the bundled corpus.
pub mod families {
    use super::*;

    fn vertex_id(i: usize) -> String {
        format!("v{i}")
    }

    fn unit(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> WeightedGraph {
        let mut b = GraphBuilder::new();
        for i in 0..n {
            b.add_vertex(vertex_id(i), 1.0);
        }
        for (i, j) in edges {
            b.add_edge(vertex_id(i), vertex_id(j), 1.0);
        }
        b.build().expect("family graphs are valid")
    }

    pub fn two_node() -> WeightedGraph {
        GraphBuilder::new()
            .vertex("a", 1.0)
            .vertex("b", 1.0)
            .edge("a", "b", 1.0)
            .build()
            .expect("two-node graph is valid")
    }

    pub fn path(n: usize) -> WeightedGraph {
        assert!(n >= 1);
        unit(n, (1..n).map(|i| (i - 1, i)))
    }

    pub fn cycle(n: usize) -> WeightedGraph {
        assert!(n >= 3);
        unit(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    pub fn complete(n: usize) -> WeightedGraph {
        assert!(n >= 1);
        unit(n, (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))))
    }

    /// Random connected graph: a random spanning tree plus `extra` random chords.
    ///
    /// With `weighted`, measures are drawn from `[0.5, 2)` and weights from
    /// `[0.2, 3)`; otherwise both are 1.
    pub fn random_connected(n: usize, extra: usize, weighted: bool, seed: u64) -> WeightedGraph {
        assert!(n >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = GraphBuilder::new();
        for i in 0..n {
            let mu = if weighted { rng.gen_range(0.5..2.0) } else { 1.0 };
            b.add_vertex(vertex_id(i), mu);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut present = std::collections::HashSet::new();
        let weight = |rng: &mut ChaCha8Rng| if weighted { rng.gen_range(0.2..3.0) } else { 1.0 };
        for k in 1..n {
            let parent = order[rng.gen_range(0..k)];
            let child = order[k];
            present.insert((parent.min(child), parent.max(child)));
            let w = weight(&mut rng);
            b.add_edge(vertex_id(parent), vertex_id(child), w);
        }
        let max_edges = n * (n - 1) / 2;
        let mut added = 0;
        while added < extra && present.len() < max_edges {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i == j || !present.insert((i.min(j), i.max(j))) {
                continue;
            }
            let w = weight(&mut rng);
            b.add_edge(vertex_id(i), vertex_id(j), w);
            added += 1;
        }
        b.build().expect("random spanning-tree graphs are connected")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> WeightedGraph {
        families::path(3)
    }

    #[test]
    fn two_node_laplacian() {
        let g = families::two_node();
        let lu = g.laplacian_apply(&VertexFunction::from_vec(vec![0.0, 1.0])).unwrap();
        assert_eq!(lu.to_vec(), vec![1.0, -1.0]);
    }

    #[test]
    fn path_laplacian() {
        let lu = path3().laplacian_apply(&VertexFunction::from_vec(vec![1.0, 0.0, 0.0])).unwrap();
        assert_eq!(lu.to_vec(), vec![-1.0, 1.0, 0.0]);
    }

    #[test]
    fn constant_is_harmonic() {
        let g = families::random_connected(12, 8, true, 3);
        let lu = g.laplacian_apply(&VertexFunction::constant(12, 2.5)).unwrap();
        assert!(lu.norm_inf() < 1e-14);
    }

    #[test]
    fn integrals_and_volume() {
        let g = GraphBuilder::new()
            .vertex("p", 1.0)
            .vertex("q", 2.0)
            .edge("p", "q", 1.0)
            .build()
            .unwrap();
        assert_eq!(g.integrate(&VertexFunction::from_vec(vec![2.0, 3.0])).unwrap(), 8.0);
        assert_eq!(g.integrate(&VertexFunction::zeros(2)).unwrap(), 0.0);
        assert_eq!(g.volume(), 3.0);
        assert_eq!(families::two_node().volume(), 2.0);
        assert_eq!(families::two_node().integrate(&VertexFunction::constant(2, 1.0)).unwrap(), 2.0);
        let half = GraphBuilder::new()
            .vertex("a", 0.5)
            .vertex("b", 0.5)
            .vertex("c", 0.5)
            .vertex("d", 0.5)
            .edge("a", "b", 1.0)
            .edge("b", "c", 1.0)
            .edge("c", "d", 1.0)
            .build()
            .unwrap();
        assert_eq!(half.volume(), 2.0);
    }

    #[test]
    fn dirichlet_examples() {
        let two = families::two_node();
        assert_eq!(two.dirichlet_energy(&VertexFunction::from_vec(vec![0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(two.dirichlet_energy(&VertexFunction::constant(2, -4.0)).unwrap(), 0.0);
        assert_eq!(
            path3().dirichlet_energy(&VertexFunction::from_vec(vec![1.0, 0.0, 0.0])).unwrap(),
            1.0
        );
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let g = path3();
        let bad = VertexFunction::zeros(2);
        assert_eq!(
            g.laplacian_apply(&bad).unwrap_err(),
            DimensionMismatch { expected: 3, found: 2 }
        );
        assert!(g.integrate(&bad).is_err());
        assert!(g.dirichlet_energy(&bad).is_err());
    }

    #[test]
    fn builder_validation() {
        let err = |b: GraphBuilder| b.build().unwrap_err().code();
        assert_eq!(err(GraphBuilder::new()), "GRAPH_EMPTY");
        assert_eq!(err(GraphBuilder::new().vertex("a", 1.0).vertex("a", 1.0)), "VERTEX_DUPLICATE");
        assert_eq!(err(GraphBuilder::new().vertex("a", 0.0)), "VERTEX_BAD_MEASURE");
        assert_eq!(
            err(GraphBuilder::new().vertex("a", 1.0).edge("a", "z", 1.0)),
            "EDGE_UNKNOWN_VERTEX"
        );
        assert_eq!(err(GraphBuilder::new().vertex("a", 1.0).edge("a", "a", 1.0)), "EDGE_SELF_LOOP");
        let ab = || GraphBuilder::new().vertex("a", 1.0).vertex("b", 1.0);
        assert_eq!(err(ab().edge("a", "b", 1.0).edge("b", "a", 2.0)), "EDGE_DUPLICATE");
        assert_eq!(err(ab().edge("a", "b", -1.0)), "EDGE_BAD_WEIGHT");
        assert_eq!(err(ab()), "GRAPH_DISCONNECTED");
    }

    #[test]
    fn matrix_matches_operator() {
        let g = families::random_connected(9, 6, true, 11);
        let u = VertexFunction::from_fn(9, |i| (i as f64 * 0.7).sin());
        let lu = g.laplacian_apply(&u).unwrap();
        let mu = g.mu_vector();
        let via_matrix = -(g.laplacian_matrix() * &*u);
        for x in 0..9 {
            assert!((mu[x] * lu[x] - via_matrix[x]).abs() < 1e-12);
        }
    }
}
