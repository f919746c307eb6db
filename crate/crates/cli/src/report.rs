use std::io::Write;
use std::path::Path;

use graph_vortex::{ReducedEquation, SolveReport, VertexFunction};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Conventions every number in a report depends on.
#[derive(Debug, Clone, Serialize)]
pub struct Conventions {
    pub laplacian: &'static str,
    pub volume: &'static str,
    pub delta_normalization: &'static str,
    pub energy: &'static str,
    pub background_gauge: &'static str,
    pub f_branch: &'static str,
    pub g_prime_at_zero: f64,
    pub monotone_shift: &'static str,
}

pub const CONVENTIONS: Conventions = Conventions {
    laplacian: "Δu(x) = (1/μ(x)) Σ_{y∼x} ω_xy (u(y) − u(x))",
    volume: "|V| = Σ_x μ(x)",
    delta_normalization: "δ_p(x) = 1/μ(p) if x = p, else 0, so ∫δ_p dμ = 1",
    energy: "∫|∇v|² dμ = Σ_{edges} ω_xy (v(y) − v(x))²; J(v) = ½∫|∇v|² dμ + λ∫W(u₀+v) dμ + (4πM/|V|)∫v dμ, W = (e^F − 1)⁴/4",
    background_gauge: "Δu₀ = −4πM/|V| + 4π Σ_j δ_{p_j}, ∫u₀ dμ = 0",
    f_branch: "F(u) is the root w ≤ 0 of 1 + w − e^w = u",
    g_prime_at_zero: -2.0,
    monotone_shift: "K = 2λ",
};

/// One CSV/JSON row per vertex.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VertexRow {
    pub id: String,
    pub mu: f64,
    pub u0: f64,
    pub v: f64,
    pub u: f64,
    pub residual: f64,
}

pub fn vertex_rows(eq: &ReducedEquation, v: &VertexFunction) -> Result<Vec<VertexRow>, CliError> {
    let g = eq.graph();
    let r = eq.residual(v)?;
    let u0 = eq.u0();
    Ok((0..g.len())
        .map(|x| VertexRow { id: g.ids()[x].clone(), mu: g.mu()[x], u0: u0[x], v: v[x], u: u0[x] + v[x], residual: r[x] })
        .collect())
}

/// A solution as it appears in reports; `verify` reads this back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionBlock {
    pub lambda: f64,
    pub converged: bool,
    pub method: String,
    pub iterations: usize,
    pub residual_inf: f64,
    pub j_value: f64,
    pub max_u: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
    pub vertices: Vec<VertexRow>,
}

impl SolutionBlock {
    pub fn new(eq: &ReducedEquation, rep: &SolveReport) -> Result<Self, CliError> {
        let method = serde_json::to_value(rep.method)
            .ok()
            .and_then(|m| m.as_str().map(str::to_string))
            .unwrap_or_default();
        Ok(Self {
            lambda: rep.lambda,
            converged: rep.converged,
            method,
            iterations: rep.iterations,
            residual_inf: rep.residual_inf,
            j_value: rep.j_value,
            max_u: rep.u.max_value(),
            notes: rep.notes.clone(),
            vertices: vertex_rows(eq, &rep.v)?,
        })
    }
}

/// Top-level report envelope.
#[derive(Debug, Clone, Serialize)]
pub struct Report<T: Serialize> {
    pub command: &'static str,
    pub instance: String,
    pub config: serde_json::Value,
    pub conventions: Conventions,
    pub result: T,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing_seconds: Option<f64>,
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::internal("SERIALIZE", e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// CSV with a header taken from `header` and rows of string cells.
pub fn to_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String, CliError> {
    let fail = |e: csv::Error| CliError::internal("SERIALIZE", e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::internal("SERIALIZE", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::internal("SERIALIZE", e.to_string()))
}

pub const VERTEX_HEADER: [&str; 6] = ["id", "mu", "u0", "v", "u", "residual"];

pub fn vertex_cells(r: &VertexRow) -> Vec<String> {
    vec![r.id.clone(), num(r.mu), num(r.u0), num(r.v), num(r.u), num(r.residual)]
}

/// Shortest decimal that round-trips.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn emit(text: &str, output: Option<&Path>) -> Result<(), CliError> {
    match output {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::internal("OUTPUT_IO", format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::internal("OUTPUT_IO", e.to_string()))
        }
    }
}
