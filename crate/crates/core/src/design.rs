//! Inverse problems: choose clock probabilities or mixing weights so that the
//! mean gossip matrix has a prescribed stationary vector, and pick targets
//! that shape the limit ODE or minimize the asymptotic error.
//!
//! Both solvers work from the stationarity balance at node `k`:
//!
//! ```text
//! p_k * sum_{j in out(k)} phi_j p_kj gamma_kj = phi_k * sum_{i in in(k)} p_i p_ik gamma_ik
//! ```
//!
//! which is linear in `p` for fixed `gamma` and linear in broadcaster
//! weights `gamma_i` for fixed `p`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::gossip::{update_probs, GossipError, GossipParams, Variant};
use crate::graph::{Digraph, GraphError};
use crate::linalg;

/// Tolerance on `sum(phi) == 1` for a design target.
pub const TARGET_SUM_TOL: f64 = 1e-12;
/// Round-trip tolerance between the target and the recovered stationary vector.
pub const ROUND_TRIP_TOL: f64 = 1e-8;
/// Relative singular-value cutoff of the rank check.
pub const RANK_TOL: f64 = 1e-10;
pub const DEFAULT_SCALE_MAX: f64 = 0.99;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gossip(#[from] GossipError),
    #[error("invalid target: {0}")]
    Target(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("design system is singular")]
    Singular,
    #[error("design system has rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },
    #[error("target is infeasible: nonpositive solution at nodes {nodes:?}")]
    Infeasible { nodes: Vec<usize> },
    #[error("clock probabilities outside (0, 1) at nodes {nodes:?}")]
    ClockOutOfRange { nodes: Vec<usize> },
    #[error("design verification failed: {what} residual {residual:e}")]
    Verification { what: &'static str, residual: f64 },
}

/// A stationary-vector target, optionally carrying the ODE weights it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignTarget {
    phi: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl DesignTarget {
    pub fn new(phi: Vec<f64>) -> Result<Self, DesignError> {
        check_probability_vector(&phi)?;
        Ok(Self { phi, weights: None })
    }

    /// Uniform target on `n` nodes (consensus averaging).
    pub fn uniform(n: usize) -> Result<Self, DesignError> {
        if n == 0 {
            return Err(DesignError::Target("empty target".into()));
        }
        Self::new(vec![1.0 / n as f64; n])
    }

    /// Target whose ODE weights `phi_k d_k` are proportional to `weights`:
    /// `phi_k = (w_k / d_k) / sum_j (w_j / d_j)`.
    pub fn for_weights(weights: &[f64], update_probs: &[f64]) -> Result<Self, DesignError> {
        if weights.len() != update_probs.len() {
            return Err(DesignError::Input(format!(
                "{} weights for {} nodes",
                weights.len(),
                update_probs.len()
            )));
        }
        require_positive("weight", weights)?;
        require_positive("update probability", update_probs)?;
        let raw: Vec<f64> = weights.iter().zip(update_probs).map(|(w, d)| w / d).collect();
        let mut target = Self::new(normalize(&raw))?;
        target.weights = Some(weights.to_vec());
        Ok(target)
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
}

fn check_probability_vector(phi: &[f64]) -> Result<(), DesignError> {
    if phi.is_empty() {
        return Err(DesignError::Target("empty target".into()));
    }
    if let Some(k) = phi.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(DesignError::Target(format!("entry {} is {}; must be positive", k + 1, phi[k])));
    }
    let sum: f64 = phi.iter().sum();
    if (sum - 1.0).abs() > TARGET_SUM_TOL {
        return Err(DesignError::Target(format!("entries sum to {sum}, not 1")));
    }
    Ok(())
}

fn require_positive(what: &str, values: &[f64]) -> Result<(), DesignError> {
    match values.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        Some(k) => Err(DesignError::Input(format!("{what} {} is {}; must be positive", k + 1, values[k]))),
        None => Ok(()),
    }
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let sum: f64 = v.iter().sum();
    v.iter().map(|x| x / sum).collect()
}

fn check_lengths(graph: &Digraph, target: &DesignTarget, per_edge: &[(&str, &[f64])]) -> Result<(), DesignError> {
    graph.require_strongly_connected()?;
    if target.len() != graph.n_nodes() {
        return Err(DesignError::Target(format!("length {} for {} nodes", target.len(), graph.n_nodes())));
    }
    for (what, values) in per_edge {
        if values.len() != graph.n_edges() {
            return Err(DesignError::Input(format!("{} {what} for {} edges", values.len(), graph.n_edges())));
        }
    }
    Ok(())
}

/// Checks that the designed parameters reproduce the target.
fn verify_round_trip(params: &GossipParams, target: &DesignTarget) -> Result<(), DesignError> {
    let residual = linalg::left_fixed_point_residual(target.phi(), &params.mean_matrix());
    if residual > ROUND_TRIP_TOL {
        return Err(DesignError::Verification { what: "fixed-point", residual });
    }
    let achieved = params.stationary_vector()?;
    let gap = achieved.iter().zip(target.phi()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if gap > ROUND_TRIP_TOL {
        return Err(DesignError::Verification { what: "stationary-vector", residual: gap });
    }
    Ok(())
}

/// Clock probabilities making `target` stationary for fixed per-edge mixing weights.
///
/// Row `k` of the system is the balance at node `k` as a linear form in `p`;
/// the last row is replaced by `sum(p) = 1`.
pub fn algorithm_a(
    graph: &Digraph,
    target: &DesignTarget,
    mixing_weights: &[f64],
    reception_probs: &[f64],
) -> Result<Vec<f64>, DesignError> {
    check_lengths(graph, target, &[("mixing weights", mixing_weights), ("reception probabilities", reception_probs)])?;
    let n = graph.n_nodes();
    let phi = target.phi();
    let mut system = DMatrix::zeros(n, n);
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        let flow = reception_probs[e] * mixing_weights[e];
        system[(i, i)] += phi[j] * flow;
        system[(j, i)] -= phi[j] * flow;
    }
    system.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let p = linalg::solve(&system, &rhs).ok_or(DesignError::Singular)?;

    let bad: Vec<usize> = (0..n).filter(|&k| !(p[k] > 0.0)).map(|k| k + 1).collect();
    if !bad.is_empty() {
        return Err(DesignError::Infeasible { nodes: bad });
    }
    let p = normalize(p.as_slice());
    if n > 1 {
        let out: Vec<usize> = (0..n).filter(|&k| p[k] >= 1.0).map(|k| k + 1).collect();
        if !out.is_empty() {
            return Err(DesignError::ClockOutOfRange { nodes: out });
        }
    }
    let params = GossipParams::new(graph.clone(), p.clone(), reception_probs.to_vec(), mixing_weights.to_vec())?;
    verify_round_trip(&params, target)?;
    Ok(p)
}

/// Broadcaster-indexed mixing weights making `target` stationary for fixed clock probabilities.
///
/// The balance equations in the unknowns `gamma_i` form a singular system of
/// rank `N - 1`. With `gamma_N = 1` the leading `(N-1)`-block gives the null
/// vector, which is then rescaled so that its largest entry is `scale_max`.
pub fn algorithm_b(
    graph: &Digraph,
    target: &DesignTarget,
    clock_probs: &[f64],
    reception_probs: &[f64],
    scale_max: f64,
) -> Result<Vec<f64>, DesignError> {
    check_lengths(graph, target, &[("reception probabilities", reception_probs)])?;
    let n = graph.n_nodes();
    if clock_probs.len() != n {
        return Err(DesignError::Input(format!("{} clock probabilities for {n} nodes", clock_probs.len())));
    }
    if !(scale_max > 0.0 && scale_max < 1.0) {
        return Err(DesignError::Input(format!("scale_max {scale_max} must lie in (0, 1)")));
    }
    if n == 1 {
        return Ok(vec![scale_max]);
    }
    let phi = target.phi();
    let mut system = DMatrix::zeros(n, n);
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        let flow = clock_probs[i] * reception_probs[e];
        system[(i, i)] += phi[j] * flow;
        system[(j, i)] -= phi[j] * flow;
    }
    let rank = linalg::numerical_rank(&system, RANK_TOL);
    if rank != n - 1 {
        return Err(DesignError::RankDeficient { rank, expected: n - 1 });
    }
    let lead = system.view((0, 0), (n - 1, n - 1)).into_owned();
    let rhs = -system.view((0, n - 1), (n - 1, 1)).column(0).into_owned();
    let head = linalg::solve(&lead, &rhs).ok_or(DesignError::Singular)?;
    let mut gamma: Vec<f64> = head.iter().copied().chain(std::iter::once(1.0)).collect();

    let bad: Vec<usize> = (0..n).filter(|&k| !(gamma[k] > 0.0)).map(|k| k + 1).collect();
    if !bad.is_empty() {
        return Err(DesignError::Infeasible { nodes: bad });
    }
    let top = gamma.iter().copied().fold(0.0, f64::max);
    for g in &mut gamma {
        *g *= scale_max / top;
    }
    let params = GossipParams::with_broadcaster_gammas(graph.clone(), clock_probs.to_vec(), reception_probs.to_vec(), &gamma)?;
    verify_round_trip(&params, target)?;
    Ok(gamma)
}

/// Result of [`design_for_weights`].
#[derive(Debug, Clone)]
pub struct WeightDesign {
    pub target: DesignTarget,
    pub update_probs: Vec<f64>,
    /// Per-broadcaster mixing weights.
    pub gammas: Vec<f64>,
    pub params: GossipParams,
    /// ODE weights `phi_k d_k` recomputed from the designed network.
    pub achieved_weights: Vec<f64>,
}

/// Designs mixing weights so that the limit ODE weights are proportional to `weights`.
pub fn design_for_weights(
    graph: &Digraph,
    weights: &[f64],
    clock_probs: &[f64],
    reception_probs: &[f64],
    variant: Variant,
    scale_max: f64,
) -> Result<WeightDesign, DesignError> {
    let d = update_probs(graph, clock_probs, reception_probs, variant)?;
    let target = DesignTarget::for_weights(weights, &d)?;
    let gammas = algorithm_b(graph, &target, clock_probs, reception_probs, scale_max)?;
    let params = GossipParams::with_broadcaster_gammas(graph.clone(), clock_probs.to_vec(), reception_probs.to_vec(), &gammas)?;
    let phi = params.stationary_vector()?;
    let achieved_weights: Vec<f64> = phi.iter().zip(&d).map(|(p, d)| p * d).collect();

    let requested = normalize(weights);
    let gap = normalize(&achieved_weights)
        .iter()
        .zip(&requested)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if gap > ROUND_TRIP_TOL {
        return Err(DesignError::Verification { what: "ODE-weight", residual: gap });
    }
    Ok(WeightDesign { target, update_probs: d, gammas, params, achieved_weights })
}

/// Rate criterion `sum_i phi_i^2 d_i^2 |R_i|`.
pub fn rate_criterion(phi: &[f64], update_probs: &[f64], r_norms: &[f64]) -> f64 {
    phi.iter()
        .zip(update_probs)
        .zip(r_norms)
        .map(|((p, d), r)| p * p * d * d * r)
        .sum()
}

/// Minimizer of [`rate_criterion`] over the simplex: `phi_i` proportional to `d_i^-2 |R_i|^-1`.
pub fn optimal_phi_for_rate(update_probs: &[f64], r_norms: &[f64]) -> Result<DesignTarget, DesignError> {
    if update_probs.len() != r_norms.len() {
        return Err(DesignError::Input(format!(
            "{} update probabilities but {} noise norms",
            update_probs.len(),
            r_norms.len()
        )));
    }
    require_positive("update probability", update_probs)?;
    require_positive("noise norm", r_norms)?;
    let raw: Vec<f64> = update_probs.iter().zip(r_norms).map(|(d, r)| 1.0 / (d * d * r)).collect();
    DesignTarget::new(normalize(&raw))
}
