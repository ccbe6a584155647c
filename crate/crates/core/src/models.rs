//! Per-agent observation models and step-size policies.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("standard deviation of agent {agent} is {value}; must be positive")]
    NonPositiveStd { agent: usize, value: f64 },
    #[error("curvature of agent {0} is not symmetric positive definite")]
    NotSpd(usize),
    #[error("noise covariance of agent {0} is not symmetric positive semidefinite")]
    NotPsd(usize),
    #[error("inconsistent model dimensions: {0}")]
    Dimension(String),
    #[error("model needs at least one agent")]
    NoAgents,
    #[error("step size must be positive, got {0}")]
    BadStep(f64),
    #[error("expected {expected} per-agent gains, got {got}")]
    GainLength { expected: usize, got: usize },
}

/// Stochastic observation `F^i(x, xi)` of each agent.
///
/// Implementations expose the mean field and noise covariance in closed form;
/// the limit ODE and the rate analysis rely on them as ground truth.
pub trait ObservationModel: Send + Sync {
    fn n_agents(&self) -> usize;

    /// State dimension `p`.
    fn dim(&self) -> usize;

    /// Writes one noisy observation of agent `agent` at `x` into `out`.
    fn sample_into(&self, agent: usize, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]);

    /// Mean field `f^i(x)`.
    fn mean(&self, agent: usize, x: &[f64]) -> Vec<f64>;

    /// Noise covariance `R_i(x)`.
    fn noise_cov(&self, agent: usize, x: &[f64]) -> DMatrix<f64>;

    /// Analytic Jacobian of the mean field, when known.
    fn mean_jacobian(&self, _agent: usize, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn sample(&self, agent: usize, x: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(agent, x, rng, &mut out);
        out
    }
}

/// Scalar estimation of a local mean: `F^i(x) = mu_i - x` with `mu_i ~ N(m_i, sigma_i^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeanModel {
    means: Vec<f64>,
    std_devs: Vec<f64>,
}

impl GaussianMeanModel {
    pub fn new(means: Vec<f64>, std_devs: Vec<f64>) -> Result<Self, ModelError> {
        if means.is_empty() {
            return Err(ModelError::NoAgents);
        }
        if means.len() != std_devs.len() {
            return Err(ModelError::Dimension(format!("{} means vs {} std devs", means.len(), std_devs.len())));
        }
        for (agent, &value) in std_devs.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ModelError::NonPositiveStd { agent: agent + 1, value });
            }
        }
        Ok(Self { means, std_devs })
    }

    /// Means and standard deviations drawn uniformly from the given ranges.
    pub fn random<R: Rng + ?Sized>(
        n_agents: usize,
        mean_range: (f64, f64),
        std_range: (f64, f64),
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let means = (0..n_agents).map(|_| rng.random_range(mean_range.0..=mean_range.1)).collect();
        let stds = (0..n_agents).map(|_| rng.random_range(std_range.0..=std_range.1)).collect();
        Self::new(means, stds)
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn std_devs(&self) -> &[f64] {
        &self.std_devs
    }
}

impl ObservationModel for GaussianMeanModel {
    fn n_agents(&self) -> usize {
        self.means.len()
    }

    fn dim(&self) -> usize {
        1
    }

    fn sample_into(&self, agent: usize, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        let z: f64 = rng.sample(StandardNormal);
        out[0] = self.means[agent] + self.std_devs[agent] * z - x[0];
    }

    fn mean(&self, agent: usize, x: &[f64]) -> Vec<f64> {
        vec![self.means[agent] - x[0]]
    }

    fn noise_cov(&self, agent: usize, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.std_devs[agent].powi(2))
    }

    fn mean_jacobian(&self, _agent: usize, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, -1.0))
    }
}

/// Noisy gradients of local quadratics `J_i(x) = 1/2 (x - c_i)^T Q_i (x - c_i)`:
/// mean field `-Q_i (x - c_i)` plus zero-mean Gaussian noise with covariance `R_i`.
#[derive(Debug, Clone)]
pub struct QuadraticGradientModel {
    centers: Vec<DVector<f64>>,
    curvatures: Vec<DMatrix<f64>>,
    noise_covs: Vec<DMatrix<f64>>,
    noise_factors: Vec<DMatrix<f64>>,
}

impl QuadraticGradientModel {
    pub fn new(
        centers: Vec<DVector<f64>>,
        curvatures: Vec<DMatrix<f64>>,
        noise_covs: Vec<DMatrix<f64>>,
    ) -> Result<Self, ModelError> {
        let n = centers.len();
        if n == 0 {
            return Err(ModelError::NoAgents);
        }
        if curvatures.len() != n || noise_covs.len() != n {
            return Err(ModelError::Dimension("centers, curvatures and noise covariances differ in count".into()));
        }
        let p = centers[0].len();
        let mut noise_factors = Vec::with_capacity(n);
        for agent in 0..n {
            let (c, q, r) = (&centers[agent], &curvatures[agent], &noise_covs[agent]);
            if c.len() != p || q.shape() != (p, p) || r.shape() != (p, p) {
                return Err(ModelError::Dimension(format!("agent {} does not match dimension {p}", agent + 1)));
            }
            if !is_symmetric(q) || q.clone().cholesky().is_none() {
                return Err(ModelError::NotSpd(agent + 1));
            }
            if !is_symmetric(r) {
                return Err(ModelError::NotPsd(agent + 1));
            }
            let eig = SymmetricEigen::new(r.clone());
            let scale = r.amax().max(1.0);
            if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
                return Err(ModelError::NotPsd(agent + 1));
            }
            let sqrt_l = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
            noise_factors.push(&eig.eigenvectors * sqrt_l);
        }
        Ok(Self { centers, curvatures, noise_covs, noise_factors })
    }

    pub fn centers(&self) -> &[DVector<f64>] {
        &self.centers
    }

    pub fn curvatures(&self) -> &[DMatrix<f64>] {
        &self.curvatures
    }

    /// Local objective `J_i(x)`.
    pub fn objective(&self, agent: usize, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.centers[agent];
        0.5 * d.dot(&(&self.curvatures[agent] * &d))
    }
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-12 * scale
}

impl ObservationModel for QuadraticGradientModel {
    fn n_agents(&self) -> usize {
        self.centers.len()
    }

    fn dim(&self) -> usize {
        self.centers[0].len()
    }

    fn sample_into(&self, agent: usize, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        let p = self.dim();
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = &self.noise_factors[agent] * z;
        let mean = self.mean(agent, x);
        for k in 0..p {
            out[k] = mean[k] + noise[k];
        }
    }

    fn mean(&self, agent: usize, x: &[f64]) -> Vec<f64> {
        let d = DVector::from_column_slice(x) - &self.centers[agent];
        (-(&self.curvatures[agent] * d)).iter().copied().collect()
    }

    fn noise_cov(&self, agent: usize, _x: &[f64]) -> DMatrix<f64> {
        self.noise_covs[agent].clone()
    }

    fn mean_jacobian(&self, agent: usize, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(-&self.curvatures[agent])
    }
}

/// Monte Carlo moments of an observation, for models without closed forms.
#[derive(Debug, Clone)]
pub struct MomentEstimate {
    pub mean: DVector<f64>,
    /// Standard error of each mean coordinate.
    pub mean_se: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub draws: usize,
}

pub fn estimate_moments(
    model: &dyn ObservationModel,
    agent: usize,
    x: &[f64],
    draws: usize,
    rng: &mut dyn RngCore,
) -> MomentEstimate {
    let p = model.dim();
    let samples: Vec<DVector<f64>> =
        (0..draws).map(|_| DVector::from_vec(model.sample(agent, x, rng))).collect();
    let k = draws as f64;
    let mean = samples.iter().fold(DVector::zeros(p), |acc, s| acc + s) / k;
    let cov = samples.iter().fold(DMatrix::zeros(p, p), |acc, s| {
        let d = s - &mean;
        acc + &d * d.transpose()
    }) / (k - 1.0).max(1.0);
    let mean_se = cov.diagonal().map(|v| (v / k).sqrt());
    MomentEstimate { mean, mean_se, cov, draws }
}

/// Step-size sequences.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSizePolicy {
    Constant(f64),
    /// Agent `i` uses `gains[i] * epsilon`.
    PerAgentConstant { epsilon: f64, gains: Vec<f64> },
    /// `a / max(n, 1)` on the global iteration counter.
    Tapering(f64),
    /// `a / Gamma_i`, where `Gamma_i` counts agent `i`'s own updates.
    AsyncTapering(f64),
}

impl StepSizePolicy {
    pub fn validate(&self, n_agents: usize) -> Result<(), ModelError> {
        let check = |v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(ModelError::BadStep(v)) };
        match self {
            Self::Constant(e) | Self::Tapering(e) | Self::AsyncTapering(e) => check(*e),
            Self::PerAgentConstant { epsilon, gains } => {
                check(*epsilon)?;
                if gains.len() != n_agents {
                    return Err(ModelError::GainLength { expected: n_agents, got: gains.len() });
                }
                gains.iter().try_for_each(|&g| check(g))
            }
        }
    }

    /// Step size of `agent` at global iteration `global_n` (1-based), when
    /// this is the agent's `own_updates`-th update (also 1-based).
    pub fn step_size(&self, global_n: u64, agent: usize, own_updates: u64) -> f64 {
        match self {
            Self::Constant(e) => *e,
            Self::PerAgentConstant { epsilon, gains } => epsilon * gains[agent],
            Self::Tapering(a) => a / global_n.max(1) as f64,
            Self::AsyncTapering(a) => a / own_updates.max(1) as f64,
        }
    }

    /// The common constant step, when there is one.
    pub fn constant_epsilon(&self) -> Option<f64> {
        match self {
            Self::Constant(e) => Some(*e),
            _ => None,
        }
    }

    /// Relative per-agent gains `v_i` entering the ODE weights.
    pub fn gains(&self) -> Option<&[f64]> {
        match self {
            Self::PerAgentConstant { gains, .. } => Some(gains),
            _ => None,
        }
    }
}
