//! Vortex solutions of the self-dual Chern–Simons equation
//!
//! ```text
//! Δu = −λ e^{F(u)} (e^{F(u)} − 1)² + 4π Σ_j δ_{p_j}
//! ```
//!
//! on connected finite weighted graphs, where `F` inverts
//! `u = 1 + F − e^F` on the branch `F ≤ 0`.

pub mod continuation;
pub mod graph;
pub mod instance;
pub mod mountain_pass;
pub mod nonlinearity;
pub mod poisson;
pub mod solver;
pub mod verify;

pub use graph::{families, GraphBuilder, GraphError, VertexFunction, WeightedGraph};
pub use instance::{parse_instance, parse_instance_str, Instance, InstanceError, InstanceFile};
pub use nonlinearity::Nonlinearity;
pub use poisson::{Background, ProblemInstance, VortexSet};
pub use solver::{ReducedEquation, SolveReport, SolverError, SolverOptions};
