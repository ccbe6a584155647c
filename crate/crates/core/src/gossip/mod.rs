//! Broadcast gossip on a digraph.
//!
//! At every tick of the global virtual clock one broadcaster `i` is drawn
//! with probability `p_i`, and each out-neighbor `j` receives the broadcast
//! independently with probability `p_ij`. A receiver mixes the broadcaster's
//! state in with weight `gamma_ij` and keeps `1 - gamma_ij` of its own
//! (`gamma` is the weight on the *broadcaster*; the complementary self-weight
//! is reported as `beta = 1 - gamma`).

mod decay;
mod file;

pub use decay::{decay_at_lag, decay_estimate, log_linear_fit, DecaySeries, LinearFit};
pub use file::ParamsFileError;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use thiserror::Error;

use crate::graph::{is_strongly_connected_adjacency, Digraph, GraphError};
use crate::linalg;

/// Tolerance on `sum(p) == 1`.
pub const CLOCK_SUM_TOL: f64 = 1e-12;
/// Row-sum tolerance when checking that a matrix is stochastic.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Required residual of the stationary vector.
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GossipError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("expected {expected} clock probabilities, got {got}")]
    ClockLength { expected: usize, got: usize },
    #[error("clock probability of node {node} is {value}; must be positive")]
    NonPositiveClock { node: usize, value: f64 },
    #[error("clock probabilities sum to {0}, not 1")]
    ClockSum(f64),
    #[error("expected {expected} per-edge values for {what}, got {got}")]
    EdgeLength { what: &'static str, expected: usize, got: usize },
    #[error("reception probability on edge ({from}, {to}) is {value}; must lie in (0, 1]")]
    BadReception { from: usize, to: usize, value: f64 },
    #[error("mixing weight on edge ({from}, {to}) is {value}; must lie in (0, 1)")]
    BadMixing { from: usize, to: usize, value: f64 },
    #[error("node {receiver} is not an out-neighbor of broadcaster {broadcaster}")]
    NotAnOutNeighbor { broadcaster: usize, receiver: usize },
    #[error("matrix is not row-stochastic (row {row})")]
    NotStochastic { row: usize },
    #[error("matrix is not primitive: {0}")]
    NotPrimitive(&'static str),
    #[error("stationary vector residual {0:e} exceeds tolerance")]
    StationaryResidual(f64),
    #[error("update probability of node {node} is {value}, which exceeds 1")]
    UpdateProbability { node: usize, value: f64 },
}

/// Which of the two update orders the agents follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Update-then-convexify: the broadcaster and the receivers each take a
    /// local step, then receivers mix in the broadcaster's updated state.
    Auc,
    /// Convexify-then-update: receivers mix in the broadcaster's current
    /// state, then take a local step from the mixed state.
    Acu,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Auc, Variant::Acu];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Auc => "auc",
            Variant::Acu => "acu",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of the broadcast gossip scheme on a fixed digraph.
///
/// Per-edge arrays are indexed by the edge index of [`Digraph::edges`].
#[derive(Debug, Clone)]
pub struct GossipParams {
    graph: Digraph,
    clock_probs: Vec<f64>,
    reception_probs: Vec<f64>,
    mixing_weights: Vec<f64>,
    broadcaster_dist: WeightedIndex<f64>,
}

impl GossipParams {
    pub fn new(
        graph: Digraph,
        clock_probs: Vec<f64>,
        reception_probs: Vec<f64>,
        mixing_weights: Vec<f64>,
    ) -> Result<Self, GossipError> {
        let n = graph.n_nodes();
        if clock_probs.len() != n {
            return Err(GossipError::ClockLength { expected: n, got: clock_probs.len() });
        }
        for (node, &value) in clock_probs.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(GossipError::NonPositiveClock { node: node + 1, value });
            }
        }
        let sum: f64 = clock_probs.iter().sum();
        if (sum - 1.0).abs() > CLOCK_SUM_TOL {
            return Err(GossipError::ClockSum(sum));
        }
        let m = graph.n_edges();
        for (what, values) in [("reception probabilities", &reception_probs), ("mixing weights", &mixing_weights)] {
            if values.len() != m {
                return Err(GossipError::EdgeLength { what, expected: m, got: values.len() });
            }
        }
        for (e, &(i, j)) in graph.edges().iter().enumerate() {
            let pr = reception_probs[e];
            if !(pr > 0.0 && pr <= 1.0) {
                return Err(GossipError::BadReception { from: i + 1, to: j + 1, value: pr });
            }
            let g = mixing_weights[e];
            if !(g > 0.0 && g < 1.0) {
                return Err(GossipError::BadMixing { from: i + 1, to: j + 1, value: g });
            }
        }
        let broadcaster_dist = WeightedIndex::new(&clock_probs).expect("validated clock probabilities");
        Ok(Self { graph, clock_probs, reception_probs, mixing_weights, broadcaster_dist })
    }

    /// Uniform clock, one mixing weight and one reception probability on every edge.
    pub fn uniform(graph: Digraph, gamma: f64, reception: f64) -> Result<Self, GossipError> {
        let n = graph.n_nodes();
        let m = graph.n_edges();
        Self::new(graph, vec![1.0 / n as f64; n], vec![reception; m], vec![gamma; m])
    }

    /// Broadcaster-indexed mixing weights: `gamma_ij = gammas[i]` for every out-edge of `i`.
    pub fn with_broadcaster_gammas(
        graph: Digraph,
        clock_probs: Vec<f64>,
        reception_probs: Vec<f64>,
        gammas: &[f64],
    ) -> Result<Self, GossipError> {
        let mixing = graph.edges().iter().map(|&(i, _)| gammas[i]).collect();
        Self::new(graph, clock_probs, reception_probs, mixing)
    }

    pub fn graph(&self) -> &Digraph {
        &self.graph
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn clock_probs(&self) -> &[f64] {
        &self.clock_probs
    }

    pub fn reception_probs(&self) -> &[f64] {
        &self.reception_probs
    }

    pub fn mixing_weights(&self) -> &[f64] {
        &self.mixing_weights
    }

    /// Self-weights `beta_ij = 1 - gamma_ij`, per edge.
    pub fn self_weights(&self) -> Vec<f64> {
        self.mixing_weights.iter().map(|g| 1.0 - g).collect()
    }

    /// Mixing weight of edge `(from, to)`, if the edge exists.
    pub fn gamma(&self, from: usize, to: usize) -> Option<f64> {
        self.graph.edge_index(from, to).map(|e| self.mixing_weights[e])
    }

    pub fn reception(&self, from: usize, to: usize) -> Option<f64> {
        self.graph.edge_index(from, to).map(|e| self.reception_probs[e])
    }

    /// Draws one tick of the global clock.
    pub fn sample_event<R: Rng + ?Sized>(&self, rng: &mut R) -> GossipEvent {
        let mut event = GossipEvent { broadcaster: 0, receivers: Vec::new() };
        self.sample_event_into(rng, &mut event);
        event
    }

    /// Allocation-free form of [`sample_event`](Self::sample_event).
    pub fn sample_event_into<R: Rng + ?Sized>(&self, rng: &mut R, event: &mut GossipEvent) {
        let i = self.broadcaster_dist.sample(rng);
        event.broadcaster = i;
        event.receivers.clear();
        for e in self.graph.out_edge_range(i) {
            let pr = self.reception_probs[e];
            if pr >= 1.0 || rng.random::<f64>() < pr {
                event.receivers.push(self.graph.edges()[e].1);
            }
        }
    }

    /// Checks that every receiver is an out-neighbor of the broadcaster.
    pub fn check_event(&self, event: &GossipEvent) -> Result<(), GossipError> {
        for &j in &event.receivers {
            if !self.graph.has_edge(event.broadcaster, j) {
                return Err(GossipError::NotAnOutNeighbor { broadcaster: event.broadcaster + 1, receiver: j + 1 });
            }
        }
        Ok(())
    }

    /// The realized gossip matrix and update indicators of one event.
    pub fn realization(&self, event: &GossipEvent) -> Result<Realization, GossipError> {
        self.check_event(event)?;
        let n = self.n_nodes();
        let i = event.broadcaster;
        let mut a = DMatrix::identity(n, n);
        let mut d_auc = DVector::zeros(n);
        let mut d_acu = DVector::zeros(n);
        d_auc[i] = 1.0;
        for &j in &event.receivers {
            let gamma = self.gamma(i, j).expect("checked edge");
            a[(j, j)] = 1.0 - gamma;
            a[(j, i)] = gamma;
            d_auc[j] = 1.0;
            d_acu[j] = 1.0;
        }
        Ok(Realization { a, d_auc, d_acu })
    }

    /// `P <- A P` for the realization of `event`, without forming `A`.
    pub fn left_multiply(&self, event: &GossipEvent, product: &mut DMatrix<f64>) {
        let i = event.broadcaster;
        for &j in &event.receivers {
            let gamma = self.gamma(i, j).expect("receiver must be an out-neighbor");
            for c in 0..product.ncols() {
                product[(j, c)] = (1.0 - gamma) * product[(j, c)] + gamma * product[(i, c)];
            }
        }
    }

    /// `r <- r A` for a row vector `r` and the realization of `event`.
    pub fn right_multiply_row(&self, event: &GossipEvent, row: &mut [f64]) {
        let i = event.broadcaster;
        for &j in &event.receivers {
            let gamma = self.gamma(i, j).expect("receiver must be an out-neighbor");
            let moved = gamma * row[j];
            row[j] -= moved;
            row[i] += moved;
        }
    }

    /// Closed-form mean gossip matrix `E{A_n}`.
    ///
    /// Row `j` of the realization depends only on whether `j` received the
    /// broadcast, so the expectation over receptions is taken row by row:
    /// given broadcaster `i`, row `j` of the mean has `p_ij gamma_ij` at `i`
    /// and `1 - p_ij gamma_ij` on the diagonal.
    pub fn mean_matrix(&self) -> DMatrix<f64> {
        let n = self.n_nodes();
        let mut mean = DMatrix::identity(n, n);
        for (e, &(i, j)) in self.graph.edges().iter().enumerate() {
            let w = self.clock_probs[i] * self.reception_probs[e] * self.mixing_weights[e];
            mean[(j, i)] += w;
            mean[(j, j)] -= w;
        }
        mean
    }

    /// Mean of the realization conditioned on `broadcaster` ticking: for each
    /// out-neighbor `j`, row `j` has `p_ij gamma_ij` at the broadcaster and
    /// `1 - p_ij gamma_ij` on the diagonal; all other rows are identity rows.
    pub fn broadcaster_mean_matrix(&self, broadcaster: usize) -> DMatrix<f64> {
        let n = self.n_nodes();
        let mut mean = DMatrix::identity(n, n);
        for e in self.graph.out_edge_range(broadcaster) {
            let j = self.graph.edges()[e].1;
            let w = self.reception_probs[e] * self.mixing_weights[e];
            mean[(j, broadcaster)] = w;
            mean[(j, j)] = 1.0 - w;
        }
        mean
    }

    /// Probability that each agent performs a local update at a tick; see [`update_probs`].
    pub fn expected_update_probs(&self, variant: Variant) -> Result<Vec<f64>, GossipError> {
        update_probs(&self.graph, &self.clock_probs, &self.reception_probs, variant)
    }

    /// Stationary vector of the mean matrix.
    pub fn stationary_vector(&self) -> Result<Vec<f64>, GossipError> {
        stationary_vector(&self.mean_matrix())
    }
}

/// Probability that each agent performs a local update at a tick.
///
/// ACU: `d_j = sum_{i in in(j)} p_i p_ij`. AUC additionally counts the ticks
/// where `j` itself broadcasts: `d_j = p_j + sum_{i in in(j)} p_i p_ij`.
/// Mixing weights play no role, so this is usable before they are designed.
pub fn update_probs(
    graph: &Digraph,
    clock_probs: &[f64],
    reception_probs: &[f64],
    variant: Variant,
) -> Result<Vec<f64>, GossipError> {
    let n = graph.n_nodes();
    if clock_probs.len() != n {
        return Err(GossipError::ClockLength { expected: n, got: clock_probs.len() });
    }
    if reception_probs.len() != graph.n_edges() {
        return Err(GossipError::EdgeLength {
            what: "reception probabilities",
            expected: graph.n_edges(),
            got: reception_probs.len(),
        });
    }
    let mut d = match variant {
        Variant::Auc => clock_probs.to_vec(),
        Variant::Acu => vec![0.0; n],
    };
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        d[j] += clock_probs[i] * reception_probs[e];
    }
    for (node, &value) in d.iter().enumerate() {
        if value > 1.0 + 1e-12 {
            return Err(GossipError::UpdateProbability { node: node + 1, value });
        }
    }
    Ok(d)
}

/// One tick: the broadcaster and the out-neighbors that received it (0-based, increasing).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GossipEvent {
    pub broadcaster: usize,
    pub receivers: Vec<usize>,
}

impl GossipEvent {
    pub fn new(broadcaster: usize, mut receivers: Vec<usize>) -> Self {
        receivers.sort_unstable();
        receivers.dedup();
        Self { broadcaster, receivers }
    }

    /// Agents performing a local update in this event, in increasing index order.
    pub fn updating_agents(&self, variant: Variant) -> Vec<usize> {
        let mut agents = self.receivers.clone();
        if variant == Variant::Auc {
            let pos = agents.partition_point(|&k| k < self.broadcaster);
            agents.insert(pos, self.broadcaster);
        }
        agents
    }
}

/// Realized gossip matrix `A_n` with the update indicators of both variants.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub a: DMatrix<f64>,
    /// 1 for the broadcaster and every receiver.
    pub d_auc: DVector<f64>,
    /// 1 for every receiver only.
    pub d_acu: DVector<f64>,
}

impl Realization {
    pub fn update_indicators(&self, variant: Variant) -> &DVector<f64> {
        match variant {
            Variant::Auc => &self.d_auc,
            Variant::Acu => &self.d_acu,
        }
    }
}

/// Checks nonnegativity and unit row sums within [`ROW_SUM_TOL`].
pub fn check_row_stochastic(a: &DMatrix<f64>) -> Result<(), GossipError> {
    for (row, r) in a.row_iter().enumerate() {
        let sum: f64 = r.iter().sum();
        if r.iter().any(|&v| v < 0.0 || !v.is_finite()) || (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(GossipError::NotStochastic { row: row + 1 });
        }
    }
    Ok(())
}

/// Left Perron vector of a primitive row-stochastic matrix, normalized to sum 1.
///
/// Primitivity is checked sufficiently: the positive-entry pattern must be
/// strongly connected and at least one diagonal entry positive. The vector
/// solves `(A^T - I) phi = 0` with the last equation replaced by `1^T phi = 1`.
pub fn stationary_vector(a: &DMatrix<f64>) -> Result<Vec<f64>, GossipError> {
    let n = a.nrows();
    check_row_stochastic(a)?;
    let pattern: Vec<Vec<usize>> = (0..n)
        .map(|j| (0..n).filter(|&k| k != j && a[(j, k)] > 0.0).collect())
        .collect();
    if !is_strongly_connected_adjacency(&pattern) {
        return Err(GossipError::NotPrimitive("positive-entry pattern is not strongly connected"));
    }
    if (0..n).all(|k| a[(k, k)] <= 0.0) {
        return Err(GossipError::NotPrimitive("no positive diagonal entry"));
    }

    let mut system = a.transpose() - DMatrix::identity(n, n);
    system.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let phi = linalg::solve(&system, &rhs).ok_or(GossipError::NotPrimitive("stationarity system is singular"))?;
    let phi: Vec<f64> = phi.iter().copied().collect();
    let residual = linalg::left_fixed_point_residual(&phi, a);
    if residual >= STATIONARY_RESIDUAL_TOL || phi.iter().any(|&v| v <= 0.0) {
        return Err(GossipError::StationaryResidual(residual));
    }
    Ok(phi)
}
