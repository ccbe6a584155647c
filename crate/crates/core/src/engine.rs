//! Event-driven simulation of the two distributed stochastic approximation
//! algorithms over broadcast gossip.

use std::io::{self, Write};

use nalgebra::DMatrix;
use rand::RngCore;
use rayon::prelude::*;
use thiserror::Error;

use crate::gossip::{GossipError, GossipEvent, GossipParams, Variant};
use crate::graph::GraphError;
use crate::models::{ModelError, ObservationModel, StepSizePolicy};
use crate::streams::replication_rng;

/// Per-entry agreement required between the per-agent and matrix-form steps.
pub const MATRIX_FORM_TOL: f64 = 1e-12;
pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e9;
/// Default number of trace samples per run.
pub const DEFAULT_TRACE_POINTS: u64 = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Gossip(#[from] GossipError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("diverged at iteration {iteration}: agent {agent} reached {value}")]
    Diverged { iteration: u64, agent: usize, value: f64 },
    #[error("per-agent and matrix-form steps disagree by {0:e}")]
    Inconsistent(f64),
}

/// Stacked agent states `X_n` (row `j` is agent `j`), the iteration counter,
/// and each agent's update count `Gamma_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    n_agents: usize,
    dim: usize,
    values: Vec<f64>,
    iteration: u64,
    update_counts: Vec<u64>,
}

impl NetworkState {
    pub fn zeros(n_agents: usize, dim: usize) -> Self {
        Self::from_values(n_agents, dim, vec![0.0; n_agents * dim])
    }

    /// Row-major `n_agents x dim` values.
    pub fn from_values(n_agents: usize, dim: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n_agents * dim, "state has wrong length");
        Self { n_agents, dim, values, iteration: 0, update_counts: vec![0; n_agents] }
    }

    /// Scalar agents.
    pub fn scalar(values: &[f64]) -> Self {
        Self::from_values(values.len(), 1, values.to_vec())
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn agent(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn update_counts(&self) -> &[u64] {
        &self.update_counts
    }

    pub fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_agents, self.dim, &self.values)
    }

    /// Network average `1/N sum_j X^j`.
    pub fn mean_state(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for j in 0..self.n_agents {
            for (m, v) in mean.iter_mut().zip(self.agent(j)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= self.n_agents as f64);
        mean
    }

    /// `max_j |X^j - mean_k X^k|_inf`.
    pub fn disagreement(&self) -> f64 {
        let mean = self.mean_state();
        (0..self.n_agents)
            .flat_map(|j| self.agent(j).iter().zip(&mean).map(|(v, m)| (v - m).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }

    /// `1/N sum_j |X^j - reference|^2`.
    pub fn mean_square_error(&self, reference: &[f64]) -> f64 {
        let total: f64 = (0..self.n_agents)
            .map(|j| self.agent(j).iter().zip(reference).map(|(v, r)| (v - r).powi(2)).sum::<f64>())
            .sum();
        total / self.n_agents as f64
    }

    fn check_bounded(&self, agents: &[usize], bound: f64) -> Result<(), EngineError> {
        for &j in agents {
            for &v in self.agent(j) {
                if !v.is_finite() || v.abs() > bound {
                    return Err(EngineError::Diverged { iteration: self.iteration, agent: j + 1, value: v });
                }
            }
        }
        Ok(())
    }
}

/// Everything that drives one run: gossip parameters, observation model and step sizes.
#[derive(Clone, Copy)]
pub struct Network<'a> {
    pub params: &'a GossipParams,
    pub model: &'a dyn ObservationModel,
    pub policy: &'a StepSizePolicy,
}

impl<'a> Network<'a> {
    /// Validates dimensions and requires a strongly connected graph.
    pub fn new(
        params: &'a GossipParams,
        model: &'a dyn ObservationModel,
        policy: &'a StepSizePolicy,
    ) -> Result<Self, EngineError> {
        params.graph().require_strongly_connected()?;
        if model.n_agents() != params.n_nodes() {
            return Err(EngineError::Dimension(format!(
                "model has {} agents but the graph has {} nodes",
                model.n_agents(),
                params.n_nodes()
            )));
        }
        policy.validate(params.n_nodes())?;
        Ok(Self { params, model, policy })
    }

    fn check_state(&self, state: &NetworkState) -> Result<(), EngineError> {
        if state.n_agents != self.params.n_nodes() || state.dim != self.model.dim() {
            return Err(EngineError::Dimension(format!(
                "state is {}x{}, network needs {}x{}",
                state.n_agents,
                state.dim,
                self.params.n_nodes(),
                self.model.dim()
            )));
        }
        Ok(())
    }

    fn gamma(&self, i: usize, j: usize) -> f64 {
        self.params.gamma(i, j).expect("receiver must be an out-neighbor")
    }

    /// Applies one event of the given variant in place.
    pub fn step(&self, variant: Variant, state: &mut NetworkState, event: &GossipEvent, rng: &mut dyn RngCore) {
        match variant {
            Variant::Auc => self.auc_step(state, event, rng),
            Variant::Acu => self.acu_step(state, event, rng),
        }
    }

    /// Update-then-convexify. The broadcaster and each receiver take a local
    /// step `X + eps F(X)` (noise drawn in increasing agent order); receivers
    /// then set `X^j = (1 - gamma_ij) Xhat^j + gamma_ij Xhat^i`.
    pub fn auc_step(&self, state: &mut NetworkState, event: &GossipEvent, rng: &mut dyn RngCore) {
        let p = state.dim;
        let n_global = state.iteration + 1;
        let updating = event.updating_agents(Variant::Auc);
        for &k in &updating {
            state.update_counts[k] += 1;
        }
        let mut hat = vec![0.0; updating.len() * p];
        let mut obs = vec![0.0; p];
        let mut broadcaster_slot = 0;
        for (slot, &k) in updating.iter().enumerate() {
            if k == event.broadcaster {
                broadcaster_slot = slot;
            }
            let eps = self.policy.step_size(n_global, k, state.update_counts[k]);
            let x = state.agent(k);
            self.model.sample_into(k, x, rng, &mut obs);
            for c in 0..p {
                hat[slot * p + c] = x[c] + eps * obs[c];
            }
        }
        let i = event.broadcaster;
        let hat_i = hat[broadcaster_slot * p..(broadcaster_slot + 1) * p].to_vec();
        for (slot, &k) in updating.iter().enumerate() {
            let dst = &mut state.values[k * p..(k + 1) * p];
            if k == i {
                dst.copy_from_slice(&hat_i);
            } else {
                let gamma = self.gamma(i, k);
                for c in 0..p {
                    dst[c] = (1.0 - gamma) * hat[slot * p + c] + gamma * hat_i[c];
                }
            }
        }
        state.iteration += 1;
    }

    /// Convexify-then-update. Each receiver forms
    /// `Xhat^j = (1 - gamma_ij) X^j + gamma_ij X^i` and then steps from it;
    /// the broadcaster is untouched.
    pub fn acu_step(&self, state: &mut NetworkState, event: &GossipEvent, rng: &mut dyn RngCore) {
        let p = state.dim;
        let n_global = state.iteration + 1;
        let i = event.broadcaster;
        let x_i = state.agent(i).to_vec();
        let mut obs = vec![0.0; p];
        let mut hat = vec![0.0; p];
        for &j in &event.receivers {
            state.update_counts[j] += 1;
            let gamma = self.gamma(i, j);
            for c in 0..p {
                hat[c] = (1.0 - gamma) * state.values[j * p + c] + gamma * x_i[c];
            }
            let eps = self.policy.step_size(n_global, j, state.update_counts[j]);
            self.model.sample_into(j, &hat, rng, &mut obs);
            for c in 0..p {
                state.values[j * p + c] = hat[c] + eps * obs[c];
            }
        }
        state.iteration += 1;
    }

    /// The same event through the network-level recursion
    /// `X' = A X + eps C F(Y)`, with `C = A D, Y = X` (AUC) or `C = D0, Y = A X` (ACU).
    ///
    /// Observations are drawn for the agents with a unit update indicator in
    /// increasing index order, so replaying the random stream used by
    /// [`step`](Self::step) reproduces the same noise.
    pub fn matrix_form_step(
        &self,
        variant: Variant,
        state: &NetworkState,
        event: &GossipEvent,
        rng: &mut dyn RngCore,
    ) -> Result<NetworkState, EngineError> {
        self.check_state(state)?;
        let realization = self.params.realization(event)?;
        let a = &realization.a;
        let d = realization.update_indicators(variant);
        let (n, p) = (state.n_agents, state.dim);
        let x = state.as_matrix();
        let y = match variant {
            Variant::Auc => x.clone(),
            Variant::Acu => a * &x,
        };
        let mut counts = state.update_counts.clone();
        let n_global = state.iteration + 1;
        let mut forcing = DMatrix::zeros(n, p);
        let mut obs = vec![0.0; p];
        for k in 0..n {
            if d[k] == 0.0 {
                continue;
            }
            counts[k] += 1;
            let eps = self.policy.step_size(n_global, k, counts[k]);
            let yk: Vec<f64> = y.row(k).iter().copied().collect();
            self.model.sample_into(k, &yk, rng, &mut obs);
            for c in 0..p {
                forcing[(k, c)] = eps * obs[c];
            }
        }
        let next = match variant {
            Variant::Auc => a * &x + a * forcing,
            Variant::Acu => a * &x + forcing,
        };
        let values = (0..n).flat_map(|j| next.row(j).iter().copied().collect::<Vec<_>>()).collect();
        Ok(NetworkState { n_agents: n, dim: p, values, iteration: state.iteration + 1, update_counts: counts })
    }

    /// Runs both step forms on the same random stream and reports the largest
    /// entrywise difference, failing beyond [`MATRIX_FORM_TOL`].
    pub fn check_matrix_form<R: RngCore + Clone>(
        &self,
        variant: Variant,
        state: &NetworkState,
        event: &GossipEvent,
        rng: &R,
    ) -> Result<f64, EngineError> {
        let mut direct = state.clone();
        self.step(variant, &mut direct, event, &mut rng.clone());
        let via_matrix = self.matrix_form_step(variant, state, event, &mut rng.clone())?;
        let diff = direct.values.iter().zip(&via_matrix.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if diff > MATRIX_FORM_TOL || direct.update_counts != via_matrix.update_counts {
            return Err(EngineError::Inconsistent(diff));
        }
        Ok(diff)
    }
}

/// What to record during a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TracePlan {
    /// Record every this many events; `None` gives about [`DEFAULT_TRACE_POINTS`] samples.
    pub every: Option<u64>,
    /// Keep full agent states in each sample.
    pub keep_states: bool,
    /// Reference point for the mean-square error column.
    pub reference: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample {
    pub iteration: u64,
    /// Row-major agent states, when the plan keeps them.
    pub states: Option<Vec<f64>>,
    pub disagreement: f64,
    pub mse: Option<f64>,
}

/// Recorded samples of one run, with strictly increasing iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub n_agents: usize,
    pub dim: usize,
    pub samples: Vec<TraceSample>,
}

impl Trace {
    fn record(&mut self, state: &NetworkState, plan: &TracePlan) {
        self.samples.push(TraceSample {
            iteration: state.iteration,
            states: plan.keep_states.then(|| state.values.clone()),
            disagreement: state.disagreement(),
            mse: plan.reference.as_ref().map(|r| state.mean_square_error(r)),
        });
    }

    pub fn last(&self) -> &TraceSample {
        self.samples.last().expect("a trace always holds the initial state")
    }

    pub fn final_iteration(&self) -> u64 {
        self.last().iteration
    }

    /// Samples at or after `from_iteration`.
    pub fn since(&self, from_iteration: u64) -> impl Iterator<Item = &TraceSample> {
        self.samples.iter().filter(move |s| s.iteration >= from_iteration)
    }

    /// Time average (over recorded samples) of the network-mean state.
    pub fn average_mean_state_since(&self, from_iteration: u64) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        let mut count = 0usize;
        for s in self.since(from_iteration) {
            let states = s.states.as_ref()?;
            for j in 0..self.n_agents {
                for c in 0..self.dim {
                    acc[c] += states[j * self.dim + c];
                }
            }
            count += 1;
        }
        if count == 0 {
            return None;
        }
        let scale = (count * self.n_agents) as f64;
        Some(acc.into_iter().map(|v| v / scale).collect())
    }

    /// Time average of the mean-square error column.
    pub fn average_mse_since(&self, from_iteration: u64) -> Option<f64> {
        let values: Vec<f64> = self.since(from_iteration).map(|s| s.mse).collect::<Option<_>>()?;
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    /// `iter,node,value` rows (`iter,node,value,dim` when `dim > 1`), 1-based nodes and dims.
    pub fn write_states_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        if self.dim == 1 {
            writeln!(out, "iter,node,value")?;
        } else {
            writeln!(out, "iter,node,value,dim")?;
        }
        for s in &self.samples {
            let Some(states) = &s.states else { continue };
            for j in 0..self.n_agents {
                for c in 0..self.dim {
                    let v = states[j * self.dim + c];
                    if self.dim == 1 {
                        writeln!(out, "{},{},{:?}", s.iteration, j + 1, v)?;
                    } else {
                        writeln!(out, "{},{},{:?},{}", s.iteration, j + 1, v, c + 1)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// `iter,disagreement,mse` rows; `mse` is empty without a reference.
    pub fn write_summary_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "iter,disagreement,mse")?;
        for s in &self.samples {
            match s.mse {
                Some(m) => writeln!(out, "{},{:?},{:?}", s.iteration, s.disagreement, m)?,
                None => writeln!(out, "{},{:?},", s.iteration, s.disagreement)?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub variant: Variant,
    pub n_iters: u64,
    /// Defaults to all agents at zero.
    pub initial: Option<NetworkState>,
    pub plan: TracePlan,
    pub divergence_bound: f64,
}

impl SimulationConfig {
    pub fn new(variant: Variant, n_iters: u64) -> Self {
        Self { variant, n_iters, initial: None, plan: TracePlan::default(), divergence_bound: DEFAULT_DIVERGENCE_BOUND }
    }

    pub fn record_every(&self) -> u64 {
        self.plan.every.unwrap_or_else(|| self.n_iters.div_ceil(DEFAULT_TRACE_POINTS)).max(1)
    }
}

/// Runs `n_iters` events and returns the recorded trace.
pub fn run_simulation(
    network: &Network<'_>,
    config: &SimulationConfig,
    rng: &mut dyn RngCore,
) -> Result<Trace, EngineError> {
    let mut state = config
        .initial
        .clone()
        .unwrap_or_else(|| NetworkState::zeros(network.params.n_nodes(), network.model.dim()));
    network.check_state(&state)?;
    if let Some(r) = &config.plan.reference {
        if r.len() != state.dim {
            return Err(EngineError::Dimension(format!("reference has length {}, state dim is {}", r.len(), state.dim)));
        }
    }
    let every = config.record_every();
    let mut trace = Trace { n_agents: state.n_agents, dim: state.dim, samples: Vec::new() };
    trace.record(&state, &config.plan);

    let mut event = GossipEvent { broadcaster: 0, receivers: Vec::new() };
    for _ in 0..config.n_iters {
        network.params.sample_event_into(rng, &mut event);
        network.step(config.variant, &mut state, &event, rng);
        state.check_bounded(&[event.broadcaster], config.divergence_bound)?;
        state.check_bounded(&event.receivers, config.divergence_bound)?;
        if state.iteration % every == 0 {
            trace.record(&state, &config.plan);
        }
    }
    if trace.final_iteration() != state.iteration {
        trace.record(&state, &config.plan);
    }
    Ok(trace)
}

/// Independent replications, replication `r` driven by stream `(master_seed, r)`.
/// Results are returned in replication order.
pub fn run_replications(
    network: &Network<'_>,
    config: &SimulationConfig,
    master_seed: u64,
    reps: usize,
) -> Vec<Result<Trace, EngineError>> {
    (0..reps)
        .into_par_iter()
        .map(|r| run_simulation(network, config, &mut replication_rng(master_seed, r as u64)))
        .collect()
}
