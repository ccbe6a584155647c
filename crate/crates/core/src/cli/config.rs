//! Experiment configuration files.
//!
//! ```toml
//! variant = "auc"
//! iterations = 200000
//! replications = 20
//! seed = 1
//! output_dir = "out"
//!
//! [graph]
//! kind = "random"
//! nodes = 10
//! density = 0.3
//! seed = 7
//!
//! [network]
//! kind = "design"
//! target = "equal-weights"
//!
//! [model]
//! kind = "gaussian-mean"
//! mean_range = [3.0, 7.0]
//! std_range = [1.0, 5.0]
//! seed = 11
//!
//! [step]
//! kind = "constant"
//! epsilon = 0.01
//! ```
//!
//! Unknown keys anywhere are rejected. Relative paths are resolved against
//! the directory of the config file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::gossip::Variant;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub iterations: u64,
    #[serde(default = "one_usize")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Initial state shared by every agent; zeros when absent.
    pub initial: Option<Vec<f64>>,
    pub graph: GraphSection,
    pub network: NetworkSection,
    pub model: Option<ModelSection>,
    pub step: Option<StepSection>,
    #[serde(default)]
    pub trace: TraceSection,
    #[serde(default)]
    pub rate: RateSection,
    #[serde(default)]
    pub analyze: AnalyzeSection,
}

fn default_variant() -> Variant {
    Variant::Auc
}

fn one_usize() -> usize {
    1
}

fn one() -> f64 {
    1.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSection {
    /// Edge-list file.
    File { path: PathBuf },
    /// Seeded random strongly connected digraph.
    Random { nodes: usize, density: f64, seed: u64 },
    Ring {
        nodes: usize,
        #[serde(default)]
        bidirectional: bool,
    },
    Complete { nodes: usize },
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NetworkSection {
    /// Gossip parameters from a TOML file.
    ParamsFile { path: PathBuf },
    /// Uniform clock and one mixing weight and reception probability everywhere.
    Uniform {
        gamma: f64,
        #[serde(default = "one")]
        reception: f64,
    },
    Design {
        target: DesignDirective,
        /// Explicit stationary target for `target-phi`.
        phi: Option<Vec<f64>>,
        /// Explicit ODE weights for `target-weights`.
        weights: Option<Vec<f64>>,
        #[serde(default)]
        algorithm: Algorithm,
        /// Clock probabilities held fixed by algorithm B; uniform when absent.
        clock: Option<Vec<f64>>,
        /// Mixing weight on every edge, held fixed by algorithm A.
        #[serde(default = "half")]
        gamma: f64,
        #[serde(default = "one")]
        reception: f64,
        #[serde(default = "default_scale_max")]
        scale_max: f64,
    },
}

fn half() -> f64 {
    0.5
}

fn default_scale_max() -> f64 {
    crate::design::DEFAULT_SCALE_MAX
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum DesignDirective {
    /// Equal ODE weights for every agent.
    EqualWeights,
    /// Uniform stationary vector (consensus averaging).
    UniformPhi,
    TargetPhi,
    TargetWeights,
    /// Stationary vector minimizing the rate criterion.
    RateOptimal,
}

impl DesignDirective {
    pub fn name(self) -> &'static str {
        match self {
            Self::EqualWeights => "equal-weights",
            Self::UniformPhi => "uniform-phi",
            Self::TargetPhi => "target-phi",
            Self::TargetWeights => "target-weights",
            Self::RateOptimal => "rate-optimal",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Solve for clock probabilities.
    A,
    /// Solve for per-broadcaster mixing weights.
    #[default]
    B,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSection {
    /// `F^i(x) = mu_i - x`; each of means and standard deviations is given
    /// explicitly or drawn uniformly from a range with `seed`.
    GaussianMean {
        means: Option<Vec<f64>>,
        mean_range: Option<[f64; 2]>,
        std_devs: Option<Vec<f64>>,
        std_range: Option<[f64; 2]>,
        seed: Option<u64>,
    },
    Quadratic {
        centers: Vec<Vec<f64>>,
        /// Row-major `p x p` matrices.
        curvatures: Vec<Vec<Vec<f64>>>,
        noise_covs: Vec<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepSection {
    Constant { epsilon: f64 },
    PerAgent { epsilon: f64, gains: Vec<f64> },
    Tapering {
        #[serde(default = "one")]
        a: f64,
    },
    AsyncTapering {
        #[serde(default = "one")]
        a: f64,
    },
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TraceSection {
    /// Record every this many events; about 2000 samples per run by default.
    pub every: Option<u64>,
    /// Write per-node states; on by default.
    pub states: Option<bool>,
    /// Reference point of the MSE column; the ODE equilibrium by default.
    pub reference: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RateSection {
    /// Product tail for the `g` estimate; chosen automatically when absent.
    pub tail: Option<usize>,
    #[serde(default = "default_g_reps")]
    pub g_reps: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    /// Also simulate and compare against the prediction.
    #[serde(default = "yes")]
    pub empirical: bool,
}

fn default_g_reps() -> usize {
    10_000
}

fn default_burn_in() -> f64 {
    0.2
}

fn yes() -> bool {
    true
}

impl Default for RateSection {
    fn default() -> Self {
        Self { tail: None, g_reps: default_g_reps(), burn_in: default_burn_in(), empirical: true }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
    #[serde(default = "default_decay_reps")]
    pub reps: usize,
}

fn default_max_lag() -> usize {
    60
}

fn default_decay_reps() -> usize {
    1000
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self { max_lag: default_max_lag(), reps: default_decay_reps() }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Makes relative paths absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let GraphSection::File { path } = &mut self.graph {
            fix(path);
        }
        if let NetworkSection::ParamsFile { path } = &mut self.network {
            fix(path);
        }
        fix(&mut self.output_dir);
    }
}
