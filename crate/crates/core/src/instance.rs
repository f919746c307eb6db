//! JSON instance files: a weighted graph and its vortex vertices.
//!
//! ```json
//! {"vertices":[{"id":"a","mu":1.0}],"edges":[{"a":"a","b":"b","w":1.0}],"vortices":["a"]}
//! ```
//!
//! The coupling is not part of the file.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphBuilder, GraphError, WeightedGraph};
use crate::poisson::{BadCoupling, ProblemInstance, VortexError, VortexSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexSpec {
    pub id: String,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub a: String,
    pub b: String,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub vertices: Vec<VertexSpec>,
    pub edges: Vec<EdgeSpec>,
    pub vortices: Vec<String>,
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("cannot read instance file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed instance JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Vortex(#[from] VortexError),
}

impl InstanceError {
    pub fn code(&self) -> &'static str {
        match self {
            InstanceError::Io(_) => "INSTANCE_IO",
            InstanceError::Parse(_) => "INSTANCE_PARSE",
            InstanceError::Graph(e) => e.code(),
            InstanceError::Vortex(e) => e.code(),
        }
    }
}

/// A validated graph with its vortex set, awaiting a coupling.
#[derive(Debug, Clone)]
pub struct Instance {
    pub graph: Arc<WeightedGraph>,
    pub vortices: VortexSet,
}

impl Instance {
    pub fn problem(&self, lambda: f64) -> Result<ProblemInstance, BadCoupling> {
        ProblemInstance::new(self.graph.clone(), self.vortices.clone(), lambda)
    }

    pub fn vortex_count(&self) -> usize {
        self.vortices.count()
    }
}

impl InstanceFile {
    pub fn validate(&self) -> Result<Instance, InstanceError> {
        let mut b = GraphBuilder::new();
        for v in &self.vertices {
            b.add_vertex(v.id.clone(), v.mu);
        }
        for e in &self.edges {
            b.add_edge(e.a.clone(), e.b.clone(), e.w);
        }
        let graph = Arc::new(b.build()?);
        let vortices = VortexSet::new(&graph, &self.vortices)?;
        Ok(Instance { graph, vortices })
    }

    pub fn from_graph(graph: &WeightedGraph, vortices: &[&str]) -> Self {
        Self {
            vertices: graph.ids().iter().zip(graph.mu()).map(|(id, &mu)| VertexSpec { id: id.clone(), mu }).collect(),
            edges: graph
                .edges()
                .iter()
                .map(|e| EdgeSpec { a: graph.ids()[e.a].clone(), b: graph.ids()[e.b].clone(), w: e.w })
                .collect(),
            vortices: vortices.iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub fn parse_instance_str(text: &str) -> Result<Instance, InstanceError> {
    serde_json::from_str::<InstanceFile>(text)?.validate()
}

pub fn parse_instance(path: impl AsRef<Path>) -> Result<Instance, InstanceError> {
    parse_instance_str(&std::fs::read_to_string(path)?)
}

/// The bundled example instances as `(file stem, contents)`.
pub fn bundled_corpus() -> Vec<(&'static str, InstanceFile)> {
    use crate::graph::families;
    vec![
        ("two-node", InstanceFile::from_graph(&families::two_node(), &["a"])),
        ("path10", InstanceFile::from_graph(&families::path(10), &["v0", "v6"])),
        ("cycle10", InstanceFile::from_graph(&families::cycle(10), &["v0", "v3", "v6"])),
        ("complete5", InstanceFile::from_graph(&families::complete(5), &["v0", "v2"])),
        ("random100", InstanceFile::from_graph(&families::random_connected(100, 50, false, 7), &["v0", "v33", "v66"])),
        ("weighted30", InstanceFile::from_graph(&families::random_connected(30, 20, true, 11), &["v4", "v19"])),
    ]
}
