//! Second solution above the critical coupling by a numerical mountain pass,
//! plus the Hessian spectrum used to certify strict minimality.
//!
//! The path joins the minimal solution `v_min` to a low endpoint `v_min − Q₀`
//! and is stored as a polyline. Each iteration locates the maximum of `J` on
//! the polyline (inserting it as a node, which leaves the curve unchanged),
//! then pushes that node downhill with neighbor smoothing. A step is kept only
//! if the path maximum does not rise.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DimensionMismatch, VertexFunction};
use crate::solver::{max_abs_diff, newton_solve, ReducedEquation, SolveReport, SolverError, SolverOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MountainPassError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error("path needs at least 8 points, got {0}")]
    TooFewPoints(usize),
    #[error("starting point is not a solution (residual {0:e})")]
    NotASolution(f64),
    #[error("no endpoint below the minimum found for Q up to 2^60")]
    EndpointCap,
    #[error("endpoint energy {endpoint} is not below the minimum {minimum}")]
    EndpointTooHigh { endpoint: f64, minimum: f64 },
    #[error("symmetric eigensolver did not converge")]
    Eigen,
}

impl MountainPassError {
    pub fn code(&self) -> &'static str {
        match self {
            MountainPassError::Solver(_) => "SOLVER_FAULT",
            MountainPassError::Dimension(_) => "DIMENSION_MISMATCH",
            MountainPassError::TooFewPoints(_) => "PATH_TOO_COARSE",
            MountainPassError::NotASolution(_) => "NOT_A_SOLUTION",
            MountainPassError::EndpointCap => "ENDPOINT_CAP",
            MountainPassError::EndpointTooHigh { .. } => "ENDPOINT_TOO_HIGH",
            MountainPassError::Eigen => "EIGEN_FAILURE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MountainPassOptions {
    pub n_points: usize,
    /// Stop once `‖∇J‖∞` at the path maximum falls below this.
    pub grad_tol: f64,
    /// Residual tolerance for the Newton polish of the maximizer.
    pub polish_tol: f64,
    /// Below this `‖∇J‖∞` at the path maximum, Newton is tried from it every
    /// `reparam_every` iterations. The result is kept only if it is a distinct
    /// critical point with a negative Hessian eigenvalue and `J` no higher
    /// than the path maximum.
    pub handoff_grad: f64,
    pub max_iter: usize,
    /// `∞`-distance below which the polished point counts as `v_min` again.
    pub distinct_threshold: f64,
    /// Fraction of the max-point step applied to its two neighbors.
    pub smoothing: f64,
    pub reparam_every: usize,
    /// Samples per segment when locating the path maximum.
    pub segment_samples: usize,
}

impl Default for MountainPassOptions {
    fn default() -> Self {
        Self {
            n_points: 16,
            grad_tol: 1e-6,
            polish_tol: 1e-8,
            handoff_grad: 1e-3,
            max_iter: 50_000,
            distinct_threshold: 1e-6,
            smoothing: 0.25,
            reparam_every: 10,
            segment_samples: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MountainPassStatus {
    /// Polished critical point distinct from `v_min`.
    Separated,
    /// Polish converged back onto `v_min`.
    NotSeparated,
    /// The path maximum slid onto `v_min`.
    Collapsed,
    /// Newton polish failed.
    PolishFailed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MountainPassReport {
    pub second_solution: SolveReport,
    /// Final path maximum of `J`.
    pub minimax_value: f64,
    pub path_points: usize,
    /// `‖v_second − v_min‖∞`.
    pub distinct_gap: f64,
    pub spectrum_at_min: Vec<f64>,
    pub spectrum_at_second: Vec<f64>,
    pub status: MountainPassStatus,
    pub q0: f64,
    pub j_min: f64,
    pub j_endpoint: f64,
    pub iterations: usize,
    /// `‖∇J‖∞` at the path maximum when the path iteration stopped.
    pub grad_at_max: f64,
    /// Path maximum after each accepted step.
    pub max_trace: Vec<f64>,
    /// Final path nodes (reduced unknowns).
    pub path: Vec<VertexFunction>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

/// Eigen-decomposition of `J''(v) = −Δ − λ g'(u₀+v)` in the `μ` inner product.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Spectrum {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// `θ₁`, with `∫θ₁² dμ = 1` and `∫θ₁ dμ ≥ 0`.
    pub first_eigvec: VertexFunction,
}

pub fn hessian_spectrum(eq: &ReducedEquation, v: &VertexFunction) -> Result<Spectrum, MountainPassError> {
    let a = eq.hessian_matrix(v)?;
    let mu = eq.graph().mu();
    let n = a.nrows();
    let scale: Vec<f64> = mu.iter().map(|m| 1.0 / m.sqrt()).collect();
    let sym = DMatrix::from_fn(n, n, |i, j| scale[i] * a[(i, j)] * scale[j]);
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0).ok_or(MountainPassError::Eigen)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let first = order[0];
    let mut theta = VertexFunction::from_fn(n, |x| scale[x] * eig.eigenvectors[(x, first)]);
    let norm = eq.graph().inner_unchecked(&theta, &theta).sqrt();
    let sign = if eq.graph().integrate_unchecked(&theta) < 0.0 { -1.0 } else { 1.0 };
    theta = theta.map(|t| sign * t / norm);
    Ok(Spectrum { eigenvalues: order.iter().map(|&i| eig.eigenvalues[i]).collect(), first_eigvec: theta })
}

/// Double `Q` from 1 until `J(v_min − Q) < J(v_min) − 1`.
pub fn select_endpoint(eq: &ReducedEquation, v_min: &VertexFunction) -> Result<(VertexFunction, f64), MountainPassError> {
    let j_min = eq.functional(v_min)?;
    let mut q = 1.0_f64;
    while q <= 2f64.powi(60) {
        let candidate = v_min.map(|x| x - q);
        if eq.functional_unchecked(&candidate) < j_min - 1.0 {
            return Ok((candidate, q));
        }
        q *= 2.0;
    }
    Err(MountainPassError::EndpointCap)
}

fn lerp(a: &VertexFunction, b: &VertexFunction, s: f64) -> VertexFunction {
    VertexFunction::from(&**a + s * (&**b - &**a))
}

fn gradient(eq: &ReducedEquation, v: &VertexFunction) -> VertexFunction {
    VertexFunction::from(-eq.residual_unchecked(v).into_inner())
}

/// Maximum of `J` on one segment: `(value, s)` with `s ∈ [0, 1]`.
///
/// Sample intervals where the directional derivative `⟨∇J, b − a⟩` turns
/// from positive to negative are bisected. Intervals whose end values prove
/// an interior peak without a sign bracket (the slope vanishes at a critical
/// end point) are subdivided first.
fn segment_max(eq: &ReducedEquation, a: &VertexFunction, b: &VertexFunction, samples: usize) -> (f64, f64) {
    let m = samples.max(2);
    let d = VertexFunction::from(&**b - &**a);
    let probe = |s: f64| {
        let p = lerp(a, b, s);
        (eq.functional_unchecked(&p), eq.graph().inner_unchecked(&gradient(eq, &p), &d))
    };
    let pts: Vec<(f64, f64, f64)> = (0..=m)
        .map(|j| {
            let s = j as f64 / m as f64;
            let (jv, sl) = probe(s);
            (s, jv, sl)
        })
        .collect();
    let mut best = (pts[0].1, 0.0);
    if pts[m].1 > best.0 {
        best = (pts[m].1, 1.0);
    }
    for w in pts.windows(2) {
        refine(&probe, w[0], w[1], 10, &mut best);
    }
    best
}

fn refine(
    probe: &impl Fn(f64) -> (f64, f64),
    left: (f64, f64, f64),
    right: (f64, f64, f64),
    depth: usize,
    best: &mut (f64, f64),
) {
    let (sl, jl, dl) = left;
    let (sr, jr, dr) = right;
    if dl > 0.0 && dr <= 0.0 {
        let (mut lo, mut hi) = (sl, sr);
        while hi - lo > 1e-14 {
            let mid = 0.5 * (lo + hi);
            if probe(mid).1 > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = 0.5 * (lo + hi);
        let (value, _) = probe(s);
        if value > best.0 {
            *best = (value, s);
        }
        return;
    }
    let hidden = (dr < 0.0 && jr > jl) || (dl > 0.0 && jl > jr);
    if hidden && depth > 0 {
        let s = 0.5 * (sl + sr);
        let (jm, dm) = probe(s);
        if jm > best.0 {
            *best = (jm, s);
        }
        refine(probe, left, (s, jm, dm), depth - 1, best);
        refine(probe, (s, jm, dm), right, depth - 1, best);
    }
}

struct Path<'a> {
    eq: &'a ReducedEquation,
    nodes: Vec<VertexFunction>,
    /// Per segment `(max value, position)`.
    seg: Vec<(f64, f64)>,
    samples: usize,
}

impl<'a> Path<'a> {
    fn straight(eq: &'a ReducedEquation, a: &VertexFunction, b: &VertexFunction, n: usize, samples: usize) -> Self {
        let nodes = (0..n).map(|i| lerp(a, b, i as f64 / (n - 1) as f64)).collect();
        let mut p = Self { eq, nodes, seg: Vec::new(), samples };
        p.refresh_all();
        p
    }

    fn refresh_all(&mut self) {
        self.seg = (0..self.nodes.len() - 1)
            .map(|i| segment_max(self.eq, &self.nodes[i], &self.nodes[i + 1], self.samples))
            .collect();
    }

    fn refresh(&mut self, i: usize) {
        self.seg[i] = segment_max(self.eq, &self.nodes[i], &self.nodes[i + 1], self.samples);
    }

    fn max(&self) -> (f64, usize, f64) {
        let (i, &(val, s)) = self.seg.iter().enumerate().max_by(|x, y| x.1 .0.total_cmp(&y.1 .0)).unwrap();
        (val, i, s)
    }

    fn length(&self) -> f64 {
        self.nodes.windows(2).map(|w| self.eq.graph().inner_unchecked(&diff(&w[1], &w[0]), &diff(&w[1], &w[0])).sqrt()).sum()
    }

    /// Make the current maximizer a node and return its index.
    fn pin_max(&mut self) -> usize {
        let (_, i, s) = self.max();
        const NODE_SNAP: f64 = 1e-9;
        if s <= NODE_SNAP {
            return i;
        }
        if s >= 1.0 - NODE_SNAP {
            return i + 1;
        }
        let p = lerp(&self.nodes[i], &self.nodes[i + 1], s);
        self.nodes.insert(i + 1, p);
        self.seg.insert(i + 1, (0.0, 0.0));
        self.refresh(i);
        self.refresh(i + 1);
        i + 1
    }

    /// Drop coincident nodes, then interior nodes whose chord stays short
    /// and below the maximum, never touching the maximizer's neighborhood.
    fn prune(&mut self, target: usize, tol: f64) {
        let (top, i, s) = self.max();
        let mut keep = if s < 0.5 { i } else { i + 1 };
        let g = self.eq.graph();
        let gap = 2.0 * self.length() / target as f64;
        let mut k = 1;
        while k + 1 < self.nodes.len() {
            let duplicate = k != keep && max_abs_diff(&self.nodes[k], &self.nodes[k - 1]) <= 1e-12;
            let removable = duplicate
                || (self.nodes.len() > target && k.abs_diff(keep) > 1 && {
                    let chord = diff(&self.nodes[k + 1], &self.nodes[k - 1]);
                    g.inner_unchecked(&chord, &chord).sqrt() <= gap
                        && segment_max(self.eq, &self.nodes[k - 1], &self.nodes[k + 1], self.samples).0 <= top - tol
                });
            if removable {
                self.nodes.remove(k);
                self.seg.remove(k);
                self.refresh(k - 1);
                if k < keep {
                    keep -= 1;
                }
            } else {
                k += 1;
            }
        }
    }

    /// Arc-length resampling to `n` nodes with the current maximizer kept as
    /// a node, accepted only if the maximum does not rise.
    fn reparameterize(&mut self, n: usize, tol: f64) -> bool {
        let g = self.eq.graph();
        let lens: Vec<f64> = self.nodes.windows(2).map(|w| g.inner_unchecked(&diff(&w[1], &w[0]), &diff(&w[1], &w[0])).sqrt()).collect();
        let total: f64 = lens.iter().sum();
        if total == 0.0 {
            return false;
        }
        let (before, mi, ms) = self.max();
        let peak_at = lens[..mi].iter().sum::<f64>() + ms * lens[mi];
        let peak_slot = ((peak_at / total) * (n - 1) as f64).round().clamp(1.0, (n - 2) as f64) as usize;
        let mut fresh = vec![self.nodes[0].clone()];
        let mut seg = 0;
        let mut acc = 0.0;
        for k in 1..n - 1 {
            if k == peak_slot {
                fresh.push(lerp(&self.nodes[mi], &self.nodes[mi + 1], ms));
                continue;
            }
            let target = total * k as f64 / (n - 1) as f64;
            while seg + 1 < lens.len() && acc + lens[seg] < target {
                acc += lens[seg];
                seg += 1;
            }
            let s = if lens[seg] > 0.0 { ((target - acc) / lens[seg]).clamp(0.0, 1.0) } else { 0.0 };
            fresh.push(lerp(&self.nodes[seg], &self.nodes[seg + 1], s));
        }
        fresh.push(self.nodes.last().unwrap().clone());
        let old = std::mem::replace(&mut self.nodes, fresh);
        let old_seg = std::mem::take(&mut self.seg);
        self.refresh_all();
        if self.max().0 <= before + tol {
            true
        } else {
            self.nodes = old;
            self.seg = old_seg;
            false
        }
    }
}

fn diff(a: &VertexFunction, b: &VertexFunction) -> VertexFunction {
    VertexFunction::from(&**a - &**b)
}

/// Numerical mountain pass between `v_min` and `endpoint`, then Newton polish.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must be rejected
pub fn path_minimax(
    eq: &ReducedEquation,
    v_min: &VertexFunction,
    endpoint: &VertexFunction,
    opts: &MountainPassOptions,
) -> Result<MountainPassReport, MountainPassError> {
    if opts.n_points < 8 {
        return Err(MountainPassError::TooFewPoints(opts.n_points));
    }
    let g = eq.graph();
    g.check_dim(v_min)?;
    g.check_dim(endpoint)?;
    let r_min = eq.residual_unchecked(v_min).norm_inf();
    if !(r_min <= 1e-8) {
        return Err(MountainPassError::NotASolution(r_min));
    }
    let j_min = eq.functional_unchecked(v_min);
    let j_endpoint = eq.functional_unchecked(endpoint);
    if !(j_endpoint < j_min) {
        return Err(MountainPassError::EndpointTooHigh { endpoint: j_endpoint, minimum: j_min });
    }

    let mut path = Path::straight(eq, v_min, endpoint, opts.n_points, opts.segment_samples);
    let mut notes = Vec::new();
    let mut max_trace = vec![path.max().0];
    let mut step = 1.0 / (2.0 * g.laplacian_scale() + 2.0 * eq.lambda());
    let mut iterations = 0;
    let mut grad_at_max;
    let polish = SolverOptions { tol: opts.polish_tol, ..Default::default() };
    let mut handoff = None;
    let mut next_handoff = 0;

    loop {
        let k = path.pin_max();
        let top = path.max().0;
        let tol = 1e-12 * top.abs().max(1.0);
        let p = path.nodes[k].clone();
        let grad = gradient(eq, &p);
        grad_at_max = grad.norm_inf();
        if grad_at_max <= opts.grad_tol {
            break;
        }
        if k == 0 {
            notes.push("path maximum sits at the minimal solution".into());
            break;
        }
        if grad_at_max <= opts.handoff_grad && iterations >= next_handoff {
            next_handoff = iterations + opts.reparam_every.max(1);
            let trial = newton_solve(eq, &p, &polish)?;
            let accept = trial.converged
                && trial.j_value <= top + tol
                && max_abs_diff(&trial.v, v_min) > opts.distinct_threshold
                && hessian_spectrum(eq, &trial.v)?.eigenvalues[0] < 0.0;
            if accept {
                notes.push(format!("Newton hand-off at iteration {iterations}"));
                handoff = Some(trial);
                break;
            }
        }
        if iterations >= opts.max_iter {
            notes.push(format!("iteration cap {} reached", opts.max_iter));
            break;
        }
        iterations += 1;

        let gg = g.inner_unchecked(&grad, &grad);
        let j_p = eq.functional_unchecked(&p);
        let last = path.nodes.len() - 1;
        let mut t = step * 2.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = VertexFunction::from(&*p - t * &*grad);
            if eq.functional_unchecked(&trial) > j_p - 1e-4 * t * gg {
                t *= 0.5;
                continue;
            }
            let saved: Vec<(usize, VertexFunction)> =
                (k.saturating_sub(1)..=(k + 1).min(last)).map(|i| (i, path.nodes[i].clone())).collect();
            for smooth in [opts.smoothing, 0.0] {
                path.nodes[k] = trial.clone();
                for &(i, ref orig) in &saved {
                    if i != k && i != 0 && i != last {
                        path.nodes[i] = VertexFunction::from(&**orig - (smooth * t) * &*grad);
                    }
                }
                let lo = k.saturating_sub(2);
                let hi = (k + 1).min(last - 1);
                for i in lo..=hi {
                    path.refresh(i);
                }
                if path.max().0 <= top + tol {
                    accepted = true;
                    break;
                }
                for (i, orig) in &saved {
                    path.nodes[*i] = orig.clone();
                }
                for i in lo..=hi {
                    path.refresh(i);
                }
            }
            if accepted {
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            notes.push(format!("descent stalled at iteration {iterations}"));
            break;
        }
        step = t;
        max_trace.push(path.max().0);

        if iterations % opts.reparam_every.max(1) == 0 && !path.reparameterize(opts.n_points, tol) {
            path.prune(opts.n_points, tol);
        }
    }

    let (minimax_value, _, _) = path.max();
    let k = path.pin_max();
    let candidate = path.nodes[k].clone();
    let mut second = match handoff {
        Some(rep) => rep,
        None => newton_solve(eq, &candidate, &polish)?,
    };
    let distinct_gap = max_abs_diff(&second.v, v_min);
    let status = if max_abs_diff(&candidate, v_min) <= opts.distinct_threshold {
        MountainPassStatus::Collapsed
    } else if !second.converged {
        MountainPassStatus::PolishFailed
    } else if distinct_gap <= opts.distinct_threshold {
        MountainPassStatus::NotSeparated
    } else {
        MountainPassStatus::Separated
    };
    if status != MountainPassStatus::Separated {
        second.converged = false;
        notes.push(format!("second solution not separated ({status:?})"));
    }
    let spectrum_at_min = hessian_spectrum(eq, v_min)?.eigenvalues;
    let spectrum_at_second = hessian_spectrum(eq, &second.v)?.eigenvalues;
    Ok(MountainPassReport {
        second_solution: second,
        minimax_value,
        path_points: path.nodes.len(),
        distinct_gap,
        spectrum_at_min,
        spectrum_at_second,
        status,
        q0: f64::NAN,
        j_min,
        j_endpoint,
        iterations,
        grad_at_max,
        max_trace,
        path: path.nodes,
        notes,
    })
}

/// Endpoint selection followed by the path minimax.
pub fn mountain_pass(
    eq: &ReducedEquation,
    v_min: &VertexFunction,
    opts: &MountainPassOptions,
) -> Result<MountainPassReport, MountainPassError> {
    let (endpoint, q0) = select_endpoint(eq, v_min)?;
    let mut report = path_minimax(eq, v_min, &endpoint, opts)?;
    report.q0 = q0;
    Ok(report)
}
