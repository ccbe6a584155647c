//! Configuration-driven front end: `design`, `simulate`, `rate` and `analyze`.

mod commands;
pub mod config;
mod output;

pub use commands::{cmd_analyze, cmd_design, cmd_rate, cmd_simulate, CommandOutput};
pub use config::ExperimentConfig;
pub use output::{Metadata, TOOL_VERSION};

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::design::{self, DesignError, DesignTarget};
use crate::engine::EngineError;
use crate::gossip::{update_probs, GossipError, GossipParams, ParamsFileError, Variant};
use crate::graph::{random_strongly_connected, Digraph, GraphError};
use crate::models::{GaussianMeanModel, ModelError, ObservationModel, QuadraticGradientModel, StepSizePolicy};
use crate::ode::{network_weights, OdeError, OdeSpec};
use crate::rate::RateError;
use crate::streams::seeded_rng;
use config::{Algorithm, DesignDirective, GraphSection, ModelSection, NetworkSection, StepSection};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gossip(#[from] GossipError),
    #[error(transparent)]
    ParamsFile(#[from] ParamsFileError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("replication {rep}: {source}")]
    Simulation { rep: usize, source: EngineError },
    #[error(transparent)]
    Rate(#[from] RateError),
}

impl CliError {
    /// Process exit status: 2 for infeasible designs and divergent runs, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Design(DesignError::Infeasible { .. } | DesignError::ClockOutOfRange { .. })
            | CliError::Simulation { source: EngineError::Diverged { .. }, .. } => 2,
            _ => 1,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Design outcome carried along for reports.
#[derive(Debug, Clone)]
pub struct DesignSummary {
    pub directive: DesignDirective,
    pub algorithm: Algorithm,
    pub target: DesignTarget,
    /// Update probabilities of the configured variant.
    pub update_probs: Vec<f64>,
}

/// A config with its graph, network, model and step policy built.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub graph: Digraph,
    pub params: GossipParams,
    pub model: Option<Box<dyn ObservationModel>>,
    pub policy: Option<StepSizePolicy>,
    pub design: Option<DesignSummary>,
}

impl Experiment {
    /// Reads, validates and builds the experiment at `path`.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_str(&text, base, overrides)
    }

    /// Builds an experiment from config text; relative paths resolve against `base`.
    pub fn from_str(text: &str, base: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let mut config = ExperimentConfig::parse(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.resolve_paths(base);
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(reps) = overrides.reps {
            config.replications = reps;
        }
        if let Some(out) = &overrides.out {
            config.output_dir = out.clone();
        }
        if config.replications == 0 {
            return Err(CliError::Config("replications must be at least 1".into()));
        }

        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hasher.update(format!("\nseed={:?}\nreps={:?}\n", overrides.seed, overrides.reps).as_bytes());
        let config_hash = hex::encode(hasher.finalize());

        let graph = build_graph(&config.graph)?;
        graph.require_strongly_connected()?;
        let model = config.model.as_ref().map(|m| build_model(m, graph.n_nodes())).transpose()?;
        if let Some(m) = &model {
            if m.n_agents() != graph.n_nodes() {
                return Err(CliError::Config(format!(
                    "model has {} agents but the graph has {} nodes",
                    m.n_agents(),
                    graph.n_nodes()
                )));
            }
        }
        let policy = config.step.as_ref().map(build_policy);
        if let Some(p) = &policy {
            p.validate(graph.n_nodes())?;
        }
        let initial_guess = config.initial.clone();
        let (params, design) =
            build_network(&config.network, &graph, config.variant, model.as_deref(), initial_guess.as_deref())?;
        Ok(Self { config, config_hash, graph, params, model, policy, design })
    }

    pub fn metadata(&self) -> Metadata {
        Metadata { config_hash: self.config_hash.clone(), seed: self.config.seed, variant: self.config.variant }
    }

    pub fn model(&self) -> Result<&dyn ObservationModel, CliError> {
        self.model.as_deref().ok_or_else(|| CliError::Config("this command needs a [model] section".into()))
    }

    pub fn policy(&self) -> Result<&StepSizePolicy, CliError> {
        self.policy.as_ref().ok_or_else(|| CliError::Config("this command needs a [step] section".into()))
    }

    /// ODE weights `v_i phi_i d_i` of the configured variant.
    pub fn ode_weights(&self) -> Result<Vec<f64>, CliError> {
        let gains = self.policy.as_ref().and_then(|p| p.gains());
        Ok(network_weights(&self.params, self.config.variant, gains)?)
    }

    /// Equilibrium of the limit ODE.
    pub fn equilibrium(&self) -> Result<DVector<f64>, CliError> {
        let model = self.model()?;
        let weights = self.ode_weights()?;
        let spec = OdeSpec::new(&weights, model)?;
        let guess = self.config.initial.clone().unwrap_or_else(|| vec![0.0; model.dim()]);
        if guess.len() != model.dim() {
            return Err(CliError::Config(format!("initial has length {}, model dimension is {}", guess.len(), model.dim())));
        }
        Ok(spec.equilibrium(&guess)?)
    }
}

fn build_graph(section: &GraphSection) -> Result<Digraph, CliError> {
    Ok(match section {
        GraphSection::File { path } => Digraph::load(path)?,
        GraphSection::Random { nodes, density, seed } => {
            random_strongly_connected(*nodes, *density, &mut seeded_rng(*seed))?
        }
        GraphSection::Ring { nodes, bidirectional } => Digraph::ring(*nodes, *bidirectional)?,
        GraphSection::Complete { nodes } => Digraph::complete(*nodes)?,
    })
}

fn matrix(rows: &[Vec<f64>], what: &str, agent: usize) -> Result<DMatrix<f64>, CliError> {
    let p = rows.len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(CliError::Config(format!("{what} of agent {} is not square", agent + 1)));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
}

fn build_model(section: &ModelSection, n_nodes: usize) -> Result<Box<dyn ObservationModel>, CliError> {
    match section {
        ModelSection::GaussianMean { means, mean_range, std_devs, std_range, seed } => {
            let mut rng = seeded_rng(seed.unwrap_or(0));
            let n = means.as_ref().or(std_devs.as_ref()).map_or(n_nodes, Vec::len);
            let mut draw = |explicit: &Option<Vec<f64>>, range: &Option<[f64; 2]>, what: &str| {
                use rand::Rng;
                match (explicit, range) {
                    (Some(v), None) => Ok(v.clone()),
                    (None, Some([lo, hi])) if lo <= hi => Ok((0..n).map(|_| rng.random_range(*lo..=*hi)).collect()),
                    (None, Some(_)) => Err(CliError::Config(format!("{what} range is empty"))),
                    (Some(_), Some(_)) => Err(CliError::Config(format!("give either {what}s or a {what} range, not both"))),
                    (None, None) => Err(CliError::Config(format!("missing {what}s"))),
                }
            };
            let m = draw(means, mean_range, "mean")?;
            let s = draw(std_devs, std_range, "std_dev")?;
            Ok(Box::new(GaussianMeanModel::new(m, s)?))
        }
        ModelSection::Quadratic { centers, curvatures, noise_covs } => {
            let c = centers.iter().map(|v| DVector::from_column_slice(v)).collect();
            let q = curvatures.iter().enumerate().map(|(i, m)| matrix(m, "curvature", i)).collect::<Result<_, _>>()?;
            let r = noise_covs.iter().enumerate().map(|(i, m)| matrix(m, "noise covariance", i)).collect::<Result<_, _>>()?;
            Ok(Box::new(QuadraticGradientModel::new(c, q, r)?))
        }
    }
}

fn build_policy(section: &StepSection) -> StepSizePolicy {
    match section {
        StepSection::Constant { epsilon } => StepSizePolicy::Constant(*epsilon),
        StepSection::PerAgent { epsilon, gains } => StepSizePolicy::PerAgentConstant { epsilon: *epsilon, gains: gains.clone() },
        StepSection::Tapering { a } => StepSizePolicy::Tapering(*a),
        StepSection::AsyncTapering { a } => StepSizePolicy::AsyncTapering(*a),
    }
}

/// Spectral norms `|R_i|` of the noise covariances at the equilibrium of the
/// equally weighted ODE.
fn noise_norms(model: &dyn ObservationModel, guess: Option<&[f64]>) -> Result<Vec<f64>, CliError> {
    let n = model.n_agents();
    let weights = vec![1.0 / n as f64; n];
    let spec = OdeSpec::new(&weights, model)?;
    let zeros = vec![0.0; model.dim()];
    let x = spec.equilibrium(guess.unwrap_or(&zeros))?;
    Ok((0..n).map(|i| model.noise_cov(i, x.as_slice()).singular_values().max()).collect())
}

fn build_network(
    section: &NetworkSection,
    graph: &Digraph,
    variant: Variant,
    model: Option<&dyn ObservationModel>,
    guess: Option<&[f64]>,
) -> Result<(GossipParams, Option<DesignSummary>), CliError> {
    let n = graph.n_nodes();
    let m = graph.n_edges();
    match section {
        NetworkSection::ParamsFile { path } => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.clone(), source })?;
            Ok((GossipParams::from_toml_str(graph.clone(), &text)?, None))
        }
        NetworkSection::Uniform { gamma, reception } => Ok((GossipParams::uniform(graph.clone(), *gamma, *reception)?, None)),
        NetworkSection::Design { target, phi, weights, algorithm, clock, gamma, reception, scale_max } => {
            let reception = vec![*reception; m];
            let clock = clock.clone().unwrap_or_else(|| vec![1.0 / n as f64; n]);
            let needs_update_probs =
                matches!(target, DesignDirective::EqualWeights | DesignDirective::TargetWeights | DesignDirective::RateOptimal);
            if needs_update_probs && *algorithm == Algorithm::A {
                return Err(CliError::Config(format!(
                    "target `{}` depends on the clock probabilities and needs algorithm \"b\"",
                    target.name()
                )));
            }
            let d = update_probs(graph, &clock, &reception, variant)?;
            let design_target = match target {
                DesignDirective::EqualWeights => DesignTarget::for_weights(&vec![1.0; n], &d)?,
                DesignDirective::TargetWeights => {
                    let w = weights.as_ref().ok_or_else(|| CliError::Config("target-weights needs `weights`".into()))?;
                    DesignTarget::for_weights(w, &d)?
                }
                DesignDirective::UniformPhi => DesignTarget::uniform(n)?,
                DesignDirective::TargetPhi => {
                    let p = phi.as_ref().ok_or_else(|| CliError::Config("target-phi needs `phi`".into()))?;
                    DesignTarget::new(p.clone())?
                }
                DesignDirective::RateOptimal => {
                    let model = model.ok_or_else(|| CliError::Config("rate-optimal needs a [model] section".into()))?;
                    design::optimal_phi_for_rate(&d, &noise_norms(model, guess)?)?
                }
            };
            let params = match algorithm {
                Algorithm::A => {
                    let mixing = vec![*gamma; m];
                    let p = design::algorithm_a(graph, &design_target, &mixing, &reception)?;
                    GossipParams::new(graph.clone(), p, reception, mixing)?
                }
                Algorithm::B => {
                    if let Some(w) = design_target.weights() {
                        design::design_for_weights(graph, w, &clock, &reception, variant, *scale_max)?.params
                    } else {
                        let gammas = design::algorithm_b(graph, &design_target, &clock, &reception, *scale_max)?;
                        GossipParams::with_broadcaster_gammas(graph.clone(), clock, reception, &gammas)?
                    }
                }
            };
            let update_probs = params.expected_update_probs(variant)?;
            let summary = DesignSummary { directive: *target, algorithm: *algorithm, target: design_target, update_probs };
            Ok((params, Some(summary)))
        }
    }
}
