//! Asymptotic normalized error `U = (X - x*) / sqrt(eps)` for constant step sizes.
//!
//! Around the equilibrium, `U` behaves like the linear diffusion
//! `du = J u dt + dw` where `J` is the ODE Jacobian at `x*` and `w` has
//! covariance `Q = sum_i g_i R_i(x*)` per unit time, with
//! `g_i = E{phi_i(k)^2 d_i(k)^2}`. Its stationary covariance solves
//! `J S + S J^T + Q = 0`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::engine::Trace;
use crate::gossip::{decay_at_lag, GossipError, GossipEvent, GossipParams, Variant};
use crate::linalg;
use crate::ode::OdeSpec;
use crate::streams::replication_rng;

/// Required mean distance of the tail product from its limit.
pub const TAIL_DECAY_TOL: f64 = 1e-3;
/// Replications used by the tail-length check.
pub const TAIL_CHECK_REPS: usize = 200;
/// Longest tail tried by [`choose_tail`].
pub const MAX_AUTO_TAIL: usize = 1 << 17;
const TAIL_CHECK_SALT: u64 = 0x5eed_dec0;
/// Largest equilibrium residual accepted by [`build_sde`].
pub const SDE_EQUILIBRIUM_TOL: f64 = 1e-8;
/// Relative residual accepted from the Lyapunov solve.
pub const LYAPUNOV_TOL: f64 = 1e-10;
pub const MIN_SAMPLES: usize = 100;
pub const DEFAULT_BATCHES: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error(transparent)]
    Gossip(#[from] GossipError),
    #[error("tail length {tail} too short: mean product distance {distance:e} is not below {TAIL_DECAY_TOL:e}")]
    InsufficientTail { tail: usize, distance: f64 },
    #[error("equilibrium residual {0:e} too large")]
    NotAnEquilibrium(f64),
    #[error("expected {expected} values of {what}, got {got}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error("Jacobian is not Hurwitz (largest real part {0}); no stationary covariance")]
    NotHurwitz(f64),
    #[error("Lyapunov system is singular")]
    Singular,
    #[error("Lyapunov residual {0:e} exceeds tolerance")]
    LyapunovResidual(f64),
    #[error("trace holds no agent states")]
    NoStates,
    #[error("only {0} samples after burn-in; need at least {MIN_SAMPLES}")]
    TooFewSamples(usize),
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Monte Carlo estimate of `g_i = E{phi_i(k)^2 d_i(k)^2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GEstimate {
    pub g: Vec<f64>,
    pub std_err: Vec<f64>,
    /// `E{phi_i(k)^2}`, an upper bound on `g_i`.
    pub phi_sq_mean: Vec<f64>,
    pub tail: usize,
    pub reps: usize,
}

/// Estimates `g_i` for one variant.
///
/// `phi(k)` is a row of the long product that propagates what is injected at
/// tick `k`. In AUC the local steps are taken before mixing, so that product
/// ends with the tick-`k` matrix `A_k` itself; in ACU they are taken after
/// mixing and the product starts at `A_{k+1}`. The tail of `tail` further
/// matrices must bring the product within [`TAIL_DECAY_TOL`] of its limit,
/// which is checked with [`decay_at_lag`] first.
pub fn estimate_g(
    params: &GossipParams,
    variant: Variant,
    tail: usize,
    reps: usize,
    seed: u64,
) -> Result<GEstimate, RateError> {
    if reps < 2 {
        return Err(RateError::Argument("need at least two replications".into()));
    }
    let (distance, _) = decay_at_lag(params, tail, TAIL_CHECK_REPS, seed ^ TAIL_CHECK_SALT)?;
    if distance >= TAIL_DECAY_TOL {
        return Err(RateError::InsufficientTail { tail, distance });
    }

    let n = params.n_nodes();
    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replication_rng(seed, rep as u64);
            let first = params.sample_event(&mut rng);
            let mut row = vec![0.0; n];
            row[0] = 1.0;
            let mut event = GossipEvent { broadcaster: 0, receivers: Vec::new() };
            for _ in 0..tail {
                params.sample_event_into(&mut rng, &mut event);
                params.right_multiply_row(&event, &mut row);
            }
            if variant == Variant::Auc {
                params.right_multiply_row(&first, &mut row);
            }
            let mut d = vec![0.0; n];
            for k in first.updating_agents(variant) {
                d[k] = 1.0;
            }
            let phi_sq: Vec<f64> = row.iter().map(|v| v * v).collect();
            let g: Vec<f64> = phi_sq.iter().zip(&d).map(|(p, d)| p * d).collect();
            (g, phi_sq)
        })
        .collect();

    let r = reps as f64;
    let mut g = vec![0.0; n];
    let mut g_sq = vec![0.0; n];
    let mut phi_sq_mean = vec![0.0; n];
    for (gs, ps) in &samples {
        for i in 0..n {
            g[i] += gs[i];
            g_sq[i] += gs[i] * gs[i];
            phi_sq_mean[i] += ps[i];
        }
    }
    let std_err = (0..n)
        .map(|i| {
            g[i] /= r;
            phi_sq_mean[i] /= r;
            let var = (g_sq[i] / r - g[i] * g[i]).max(0.0) * r / (r - 1.0);
            (var / r).sqrt()
        })
        .collect();
    Ok(GEstimate { g, std_err, phi_sq_mean, tail, reps })
}

/// Smallest tail of the form `50 * 2^k` that passes the decay check of [`estimate_g`].
pub fn choose_tail(params: &GossipParams, seed: u64) -> Result<usize, RateError> {
    let mut tail = 50;
    loop {
        let (distance, _) = decay_at_lag(params, tail, TAIL_CHECK_REPS, seed ^ TAIL_CHECK_SALT)?;
        if distance < TAIL_DECAY_TOL {
            return Ok(tail);
        }
        if tail >= MAX_AUTO_TAIL {
            return Err(RateError::InsufficientTail { tail, distance });
        }
        tail *= 2;
    }
}

/// Linearization `du = J u dt + dw` around an equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeModel {
    pub jacobian: DMatrix<f64>,
    /// `Q = sum_i g_i R_i(x*)`.
    pub drive_cov: DMatrix<f64>,
    pub g: Vec<f64>,
    pub noise_covs: Vec<DMatrix<f64>>,
    pub equilibrium: Vec<f64>,
    /// Largest real part among the eigenvalues of `J`.
    pub spectral_abscissa: f64,
}

impl SdeModel {
    pub fn is_hurwitz(&self) -> bool {
        self.spectral_abscissa < 0.0
    }

    pub fn dim(&self) -> usize {
        self.jacobian.nrows()
    }
}

/// Builds the linearized diffusion at `x_star`. The Jacobian is the model's
/// analytic one when every agent supplies it, central differences otherwise.
pub fn build_sde(spec: &OdeSpec<'_>, x_star: &[f64], g: &[f64]) -> Result<SdeModel, RateError> {
    let model = spec.model();
    let n = model.n_agents();
    if g.len() != n {
        return Err(RateError::Length { what: "g", expected: n, got: g.len() });
    }
    if x_star.len() != spec.dim() {
        return Err(RateError::Length { what: "equilibrium", expected: spec.dim(), got: x_star.len() });
    }
    let residual = spec.rhs(x_star).amax();
    if !(residual < SDE_EQUILIBRIUM_TOL) {
        return Err(RateError::NotAnEquilibrium(residual));
    }
    let jacobian = spec.jacobian_analytic(x_star).unwrap_or_else(|| spec.jacobian_fd(x_star));
    let noise_covs: Vec<DMatrix<f64>> = (0..n).map(|i| model.noise_cov(i, x_star)).collect();
    let p = spec.dim();
    let mut drive_cov = DMatrix::zeros(p, p);
    for (gi, r) in g.iter().zip(&noise_covs) {
        drive_cov += r * *gi;
    }
    let spectral_abscissa = jacobian
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SdeModel { jacobian, drive_cov, g: g.to_vec(), noise_covs, equilibrium: x_star.to_vec(), spectral_abscissa })
}

/// Solves `J S + S J^T + Q = 0` through `(I (x) J + J (x) I) vec(S) = -vec(Q)`.
pub fn stationary_covariance(sde: &SdeModel) -> Result<DMatrix<f64>, RateError> {
    if !sde.is_hurwitz() {
        return Err(RateError::NotHurwitz(sde.spectral_abscissa));
    }
    lyapunov(&sde.jacobian, &sde.drive_cov)
}

/// Continuous Lyapunov solve for a given `J` and `Q`; the result is symmetrized.
pub fn lyapunov(j: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, RateError> {
    let p = j.nrows();
    let eye = DMatrix::<f64>::identity(p, p);
    let system = eye.kronecker(j) + j.kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let vec_s = linalg::solve(&system, &rhs).ok_or(RateError::Singular)?;
    let s = DMatrix::from_column_slice(p, p, vec_s.as_slice());
    let s = (&s + s.transpose()) * 0.5;
    let residual = linalg::inf_norm(&(j * &s + &s * j.transpose() + q));
    if residual > LYAPUNOV_TOL * linalg::inf_norm(q) {
        return Err(RateError::LyapunovResidual(residual));
    }
    Ok(s)
}

/// Sample second moment of the normalized error about `x*`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedError {
    /// Per-node `E{U_j U_j^T}`.
    pub per_node: Vec<DMatrix<f64>>,
    /// Average over nodes.
    pub pooled: DMatrix<f64>,
    /// Standard error of each pooled entry.
    pub pooled_se: DMatrix<f64>,
    pub samples: usize,
}

/// Second moment of `(X_j - x*) / sqrt(eps)` over the samples recorded after
/// `burn_in * final_iteration`, with batch-means standard errors.
pub fn empirical_normalized_error(
    trace: &Trace,
    x_star: &[f64],
    epsilon: f64,
    burn_in: f64,
) -> Result<NormalizedError, RateError> {
    if !(epsilon > 0.0) {
        return Err(RateError::Argument(format!("step size {epsilon} must be positive")));
    }
    if !(0.0..1.0).contains(&burn_in) {
        return Err(RateError::Argument(format!("burn-in fraction {burn_in} must lie in [0, 1)")));
    }
    let p = trace.dim;
    if x_star.len() != p {
        return Err(RateError::Length { what: "equilibrium", expected: p, got: x_star.len() });
    }
    let start = (burn_in * trace.final_iteration() as f64).ceil() as u64;
    let kept: Vec<&[f64]> = trace
        .since(start)
        .map(|s| s.states.as_deref().ok_or(RateError::NoStates))
        .collect::<Result<_, _>>()?;
    if kept.len() < MIN_SAMPLES {
        return Err(RateError::TooFewSamples(kept.len()));
    }

    let scale = 1.0 / epsilon.sqrt();
    let n = trace.n_agents;
    let mut per_node = vec![DMatrix::zeros(p, p); n];
    let mut per_sample = Vec::with_capacity(kept.len());
    let mut u = DVector::zeros(p);
    for states in &kept {
        let mut pooled_here = DMatrix::zeros(p, p);
        for (j, node) in per_node.iter_mut().enumerate() {
            for c in 0..p {
                u[c] = (states[j * p + c] - x_star[c]) * scale;
            }
            let outer = &u * u.transpose();
            *node += &outer;
            pooled_here += outer;
        }
        per_sample.push(pooled_here / n as f64);
    }
    let count = kept.len() as f64;
    for node in &mut per_node {
        *node /= count;
    }
    let pooled = per_sample.iter().fold(DMatrix::zeros(p, p), |acc, m| acc + m) / count;
    let pooled_se = batch_means_se(&per_sample, DEFAULT_BATCHES);
    Ok(NormalizedError { per_node, pooled, pooled_se, samples: kept.len() })
}

/// Entrywise standard error of the mean of a time series of matrices from
/// `batches` contiguous batch means.
fn batch_means_se(series: &[DMatrix<f64>], batches: usize) -> DMatrix<f64> {
    let (r, c) = series[0].shape();
    let size = series.len() / batches;
    let means: Vec<DMatrix<f64>> = (0..batches)
        .map(|b| series[b * size..(b + 1) * size].iter().fold(DMatrix::zeros(r, c), |acc, m| acc + m) / size as f64)
        .collect();
    spread_se(&means)
}

/// Entrywise `sd / sqrt(len)` of independent matrix estimates.
fn spread_se(values: &[DMatrix<f64>]) -> DMatrix<f64> {
    let (r, c) = values[0].shape();
    let k = values.len() as f64;
    let mean = values.iter().fold(DMatrix::zeros(r, c), |acc, m| acc + m) / k;
    let var = values.iter().fold(DMatrix::zeros(r, c), |acc, m| {
        let d = m - &mean;
        acc + d.component_mul(&d)
    }) / (k - 1.0);
    var.map(|v| (v / k).sqrt())
}

/// Averages estimates from independent replications; the standard error
/// comes from their spread (a single estimate keeps its batch-means error).
pub fn pool_normalized_errors(estimates: &[NormalizedError]) -> Result<NormalizedError, RateError> {
    let first = estimates.first().ok_or_else(|| RateError::Argument("no estimates to pool".into()))?;
    if estimates.len() == 1 {
        return Ok(first.clone());
    }
    let k = estimates.len() as f64;
    let n = first.per_node.len();
    let (r, c) = first.pooled.shape();
    let per_node = (0..n)
        .map(|j| estimates.iter().fold(DMatrix::zeros(r, c), |acc, e| acc + &e.per_node[j]) / k)
        .collect();
    let pooled_values: Vec<DMatrix<f64>> = estimates.iter().map(|e| e.pooled.clone()).collect();
    let pooled = pooled_values.iter().fold(DMatrix::zeros(r, c), |acc, m| acc + m) / k;
    Ok(NormalizedError {
        per_node,
        pooled,
        pooled_se: spread_se(&pooled_values),
        samples: estimates.iter().map(|e| e.samples).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{optimal_phi_for_rate, rate_criterion};
    use crate::engine::{run_replications, Network, SimulationConfig, TracePlan};
    use crate::graph::Digraph;
    use crate::models::{GaussianMeanModel, QuadraticGradientModel, StepSizePolicy};
    use crate::ode::network_weights;
    use crate::streams::seeded_rng;
    use rand::Rng;

    fn sde_from(j: DMatrix<f64>, q: DMatrix<f64>) -> SdeModel {
        let spectral_abscissa = j.clone().complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        SdeModel { jacobian: j, drive_cov: q, g: vec![], noise_covs: vec![], equilibrium: vec![], spectral_abscissa }
    }

    #[test]
    fn scalar_lyapunov() {
        let s = stationary_covariance(&sde_from(DMatrix::from_element(1, 1, -3.0), DMatrix::from_element(1, 1, 2.0))).unwrap();
        assert!((s[(0, 0)] - 2.0 / 6.0).abs() < 1e-14);
        let s = stationary_covariance(&sde_from(DMatrix::from_element(1, 1, -3.0), DMatrix::zeros(1, 1))).unwrap();
        assert_eq!(s[(0, 0)], 0.0);
    }

    #[test]
    fn diagonal_lyapunov() {
        let j = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let s = stationary_covariance(&sde_from(j, DMatrix::identity(2, 2))).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.25]));
        assert!((s - expected).amax() < 1e-14);
    }

    #[test]
    fn rejects_unstable_jacobian() {
        let j = DMatrix::from_row_slice(2, 2, &[0.1, 1.0, -1.0, 0.1]);
        assert!(matches!(stationary_covariance(&sde_from(j, DMatrix::identity(2, 2))), Err(RateError::NotHurwitz(_))));
    }

    #[test]
    fn lyapunov_output_is_symmetric_psd() {
        let mut rng = seeded_rng(17);
        for _ in 0..50 {
            let p = rng.random_range(1..=4);
            let b = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
            let shift = b.clone().complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
            let j = b - DMatrix::identity(p, p) * (shift + rng.random_range(0.1..2.0));
            let c = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
            let q = &c * c.transpose();
            let s = lyapunov(&j, &q).unwrap();
            assert_eq!(s, s.transpose());
            let eig = s.symmetric_eigen().eigenvalues;
            assert!(eig.iter().all(|&e| e >= -1e-12), "{eig}");
        }
    }

    #[test]
    fn scalar_variance_decreases_with_total_weight() {
        let model = GaussianMeanModel::new(vec![5.0; 3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut previous = f64::INFINITY;
        for k in 1..=20 {
            let w = vec![0.05 * k as f64; 3];
            let spec = OdeSpec::new(&w, &model).unwrap();
            let sde = build_sde(&spec, &[5.0], &[0.1, 0.1, 0.1]).unwrap();
            assert!((sde.jacobian[(0, 0)] + w.iter().sum::<f64>()).abs() < 1e-12);
            let s = stationary_covariance(&sde).unwrap()[(0, 0)];
            assert!(s < previous);
            previous = s;
        }
    }

    #[test]
    fn build_sde_checks_equilibrium_and_combines_noise() {
        let model = GaussianMeanModel::new(vec![1.0, 3.0], vec![1.0, 2.0]).unwrap();
        let spec = OdeSpec::new(&[0.5, 0.5], &model).unwrap();
        assert!(matches!(build_sde(&spec, &[2.5], &[0.2, 0.3]), Err(RateError::NotAnEquilibrium(_))));
        let sde = build_sde(&spec, &[2.0], &[0.2, 0.3]).unwrap();
        assert!((sde.drive_cov[(0, 0)] - (0.2 + 0.3 * 4.0)).abs() < 1e-15);
        assert!(sde.is_hurwitz());
        let zero = build_sde(&spec, &[2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(zero.drive_cov[(0, 0)], 0.0);
    }

    #[test]
    fn quadratic_jacobian_matches_weighted_curvatures() {
        let q1 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let q2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let model = QuadraticGradientModel::new(
            vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 2.0])],
            vec![q1.clone(), q2.clone()],
            vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 2.0],
        )
        .unwrap();
        let w = [0.3, 0.7];
        let spec = OdeSpec::new(&w, &model).unwrap();
        let x = spec.equilibrium(&[0.0, 0.0]).unwrap();
        let sde = build_sde(&spec, x.as_slice(), &[0.1, 0.2]).unwrap();
        let expected = -(q1 * 0.3 + q2 * 0.7);
        assert!((&sde.jacobian - &expected).amax() < 1e-12);
        assert!((spec.jacobian_fd(x.as_slice()) - expected).amax() < 1e-6);
    }

    #[test]
    fn optimal_phi_never_loses_to_uniform() {
        let mut rng = seeded_rng(3);
        for _ in 0..200 {
            let n = rng.random_range(2..=12);
            let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..25.0)).collect();
            let opt = optimal_phi_for_rate(&d, &r).unwrap();
            let uniform = vec![1.0 / n as f64; n];
            assert!(rate_criterion(opt.phi(), &d, &r) <= rate_criterion(&uniform, &d, &r) + 1e-15);
        }
    }

    fn ring2() -> GossipParams {
        GossipParams::uniform(Digraph::ring(2, true).unwrap(), 0.5, 1.0).unwrap()
    }

    #[test]
    fn g_is_symmetric_on_two_ring() {
        for variant in Variant::ALL {
            let est = estimate_g(&ring2(), variant, 60, 10_000, 1).unwrap();
            assert!(est.std_err.iter().all(|&s| s < 0.01), "{:?}", est.std_err);
            let diff = (est.g[0] - est.g[1]).abs();
            let se = (est.std_err[0].powi(2) + est.std_err[1].powi(2)).sqrt();
            assert!(diff < 3.0 * se, "{diff} vs {se}");
            for i in 0..2 {
                assert!(est.g[i] >= 0.0 && est.g[i] <= est.phi_sq_mean[i] && est.phi_sq_mean[i] <= 1.0);
            }
        }
    }

    #[test]
    fn chosen_tail_passes_the_check() {
        let params = GossipParams::uniform(Digraph::ring(8, false).unwrap(), 0.3, 1.0).unwrap();
        let tail = choose_tail(&params, 9).unwrap();
        assert!(tail >= 50);
        assert!(estimate_g(&params, Variant::Acu, tail, 100, 9).is_ok());
        if tail > 50 {
            assert!(matches!(estimate_g(&params, Variant::Acu, tail / 2, 100, 9), Err(RateError::InsufficientTail { .. })));
        }
    }

    #[test]
    fn short_tail_is_rejected() {
        let params = GossipParams::uniform(Digraph::ring(8, false).unwrap(), 0.3, 1.0).unwrap();
        assert!(matches!(estimate_g(&params, Variant::Auc, 2, 100, 0), Err(RateError::InsufficientTail { .. })));
    }

    fn simulate(
        params: &GossipParams,
        model: &GaussianMeanModel,
        eps: f64,
        iters: u64,
        reps: usize,
        seed: u64,
    ) -> Vec<Trace> {
        let policy = StepSizePolicy::Constant(eps);
        let network = Network::new(params, model, &policy).unwrap();
        let mut config = SimulationConfig::new(Variant::Auc, iters);
        config.plan = TracePlan { every: Some(20), keep_states: true, reference: None };
        config.initial = Some(crate::engine::NetworkState::scalar(&vec![model.means()[0]; params.n_nodes()]));
        run_replications(&network, &config, seed, reps).into_iter().map(Result::unwrap).collect()
    }

    #[test]
    fn zero_noise_error_vanishes() {
        let params = GossipParams::uniform(Digraph::ring(4, true).unwrap(), 0.5, 1.0).unwrap();
        let model = GaussianMeanModel::new(vec![2.0; 4], vec![1e-300; 4]).unwrap();
        let traces = simulate(&params, &model, 0.01, 20_000, 1, 5);
        let est = empirical_normalized_error(&traces[0], &[2.0], 0.01, 0.5).unwrap();
        assert!(est.pooled[(0, 0)] < 1e-6);
    }

    #[test]
    fn too_few_samples_or_states() {
        let params = ring2();
        let model = GaussianMeanModel::new(vec![1.0; 2], vec![1.0; 2]).unwrap();
        let traces = simulate(&params, &model, 0.01, 1000, 1, 0);
        assert!(matches!(empirical_normalized_error(&traces[0], &[1.0], 0.01, 0.5), Err(RateError::TooFewSamples(_))));
        let mut stripped = traces[0].clone();
        stripped.samples.iter_mut().for_each(|s| s.states = None);
        assert!(matches!(empirical_normalized_error(&stripped, &[1.0], 0.01, 0.0), Err(RateError::NoStates)));
    }

    #[test]
    fn normalized_variance_is_scale_free_in_eps() {
        let params = GossipParams::uniform(Digraph::complete(3).unwrap(), 0.5, 1.0).unwrap();
        let model = GaussianMeanModel::new(vec![4.0; 3], vec![1.0, 2.0, 1.5]).unwrap();
        let estimate = |eps: f64, iters: u64| {
            let traces = simulate(&params, &model, eps, iters, 8, 77);
            let each: Vec<NormalizedError> =
                traces.iter().map(|t| empirical_normalized_error(t, &[4.0], eps, 0.2).unwrap()).collect();
            pool_normalized_errors(&each).unwrap()
        };
        let a = estimate(0.02, 60_000);
        let b = estimate(0.01, 120_000);
        let gap = (a.pooled[(0, 0)] - b.pooled[(0, 0)]).abs();
        let se = (a.pooled_se[(0, 0)].powi(2) + b.pooled_se[(0, 0)].powi(2)).sqrt();
        assert!(gap < 3.0 * se, "{} vs {} (se {se})", a.pooled[(0, 0)], b.pooled[(0, 0)]);
    }

    #[test]
    fn network_weights_feed_the_jacobian() {
        let params = GossipParams::uniform(Digraph::ring(5, true).unwrap(), 0.5, 0.9).unwrap();
        let model = GaussianMeanModel::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![1.0; 5]).unwrap();
        let w = network_weights(&params, Variant::Acu, None).unwrap();
        let spec = OdeSpec::new(&w, &model).unwrap();
        let x = spec.equilibrium(&[0.0]).unwrap();
        let sde = build_sde(&spec, x.as_slice(), &[0.05; 5]).unwrap();
        assert!((sde.jacobian[(0, 0)] + w.iter().sum::<f64>()).abs() < 1e-12);
    }
}
