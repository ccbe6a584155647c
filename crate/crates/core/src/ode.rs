//! The limit ODE `dx/dt = sum_i w_i f^i(x)` with `w_i = phi_i d_i` and its equilibrium.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::gossip::{GossipError, GossipParams, Variant};
use crate::linalg;
use crate::models::ObservationModel;

/// Residual `|rhs(x*)|_inf` an equilibrium must reach.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;
pub const MAX_NEWTON_ITERS: usize = 200;
pub const MAX_HALVINGS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error(transparent)]
    Gossip(#[from] GossipError),
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("weight of agent {agent} is {value}; must be positive")]
    NonPositiveWeight { agent: usize, value: f64 },
    #[error("invalid integration request: {0}")]
    BadIntegration(String),
    #[error("state became non-finite at t = {0}")]
    NonFinite(f64),
    #[error("Newton iteration did not converge (residual {residual:e} after {iterations} iterations); integrate towards the attractor first and polish from there")]
    NoConvergence { residual: f64, iterations: usize },
}

/// Weighted sum of the agents' mean fields.
#[derive(Clone, Copy)]
pub struct OdeSpec<'a> {
    weights: &'a [f64],
    model: &'a dyn ObservationModel,
}

/// ODE weights `v_i phi_i d_i` of a gossip network for one variant; `gains`
/// are optional per-agent step multipliers `v_i`.
pub fn network_weights(params: &GossipParams, variant: Variant, gains: Option<&[f64]>) -> Result<Vec<f64>, GossipError> {
    let phi = params.stationary_vector()?;
    let d = params.expected_update_probs(variant)?;
    Ok(phi
        .iter()
        .zip(&d)
        .enumerate()
        .map(|(i, (p, d))| p * d * gains.map_or(1.0, |g| g[i]))
        .collect())
}

impl<'a> OdeSpec<'a> {
    pub fn new(weights: &'a [f64], model: &'a dyn ObservationModel) -> Result<Self, OdeError> {
        if weights.len() != model.n_agents() {
            return Err(OdeError::WeightCount { expected: model.n_agents(), got: weights.len() });
        }
        for (agent, &value) in weights.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(OdeError::NonPositiveWeight { agent: agent + 1, value });
            }
        }
        Ok(Self { weights, model })
    }

    pub fn weights(&self) -> &[f64] {
        self.weights
    }

    pub fn model(&self) -> &dyn ObservationModel {
        self.model
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn rhs(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (i, &w) in self.weights.iter().enumerate() {
            for (o, f) in out.iter_mut().zip(self.model.mean(i, x)) {
                *o += w * f;
            }
        }
        out
    }

    /// Central-difference Jacobian of the right-hand side, step `1e-6 max(1, |x|)`.
    pub fn jacobian_fd(&self, x: &[f64]) -> DMatrix<f64> {
        let p = self.dim();
        let h = 1e-6 * linalg::max_abs(x).max(1.0);
        let mut jac = DMatrix::zeros(p, p);
        let mut xp = x.to_vec();
        for k in 0..p {
            xp[k] = x[k] + h;
            let fp = self.rhs(&xp);
            xp[k] = x[k] - h;
            let fm = self.rhs(&xp);
            xp[k] = x[k];
            jac.set_column(k, &((fp - fm) / (2.0 * h)));
        }
        jac
    }

    /// `sum_i w_i J_i(x)` from the model's analytic Jacobians, if every agent has one.
    pub fn jacobian_analytic(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let p = self.dim();
        let mut jac = DMatrix::zeros(p, p);
        for (i, &w) in self.weights.iter().enumerate() {
            jac += self.model.mean_jacobian(i, x)? * w;
        }
        Some(jac)
    }

    /// Classical RK4 from `x0` over `[0, t_end]`, sampled at multiples of `dt`
    /// (the last step is shortened to land on `t_end`).
    pub fn integrate(&self, x0: &[f64], t_end: f64, dt: f64) -> Result<Trajectory, OdeError> {
        if !(dt > 0.0) || !(t_end >= 0.0) || !dt.is_finite() || !t_end.is_finite() {
            return Err(OdeError::BadIntegration(format!("t_end = {t_end}, dt = {dt}")));
        }
        if x0.len() != self.dim() {
            return Err(OdeError::BadIntegration(format!("x0 has length {}, expected {}", x0.len(), self.dim())));
        }
        let steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
        let mut times = Vec::with_capacity(steps + 1);
        let mut states = Vec::with_capacity(steps + 1);
        let mut x = DVector::from_column_slice(x0);
        let mut t = 0.0;
        times.push(t);
        states.push(x.clone());
        for k in 0..steps {
            let h = if k + 1 == steps { t_end - t } else { dt };
            let k1 = self.rhs(x.as_slice());
            let k2 = self.rhs((&x + &k1 * (h / 2.0)).as_slice());
            let k3 = self.rhs((&x + &k2 * (h / 2.0)).as_slice());
            let k4 = self.rhs((&x + &k3 * h).as_slice());
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            t = if k + 1 == steps { t_end } else { (k + 1) as f64 * dt };
            if x.iter().any(|v| !v.is_finite()) {
                return Err(OdeError::NonFinite(t));
            }
            times.push(t);
            states.push(x.clone());
        }
        Ok(Trajectory { times, states })
    }

    /// Root of the right-hand side by damped Newton with a finite-difference
    /// Jacobian. Each Newton step is halved (up to [`MAX_HALVINGS`] times)
    /// until the residual decreases.
    pub fn equilibrium(&self, x_init: &[f64]) -> Result<DVector<f64>, OdeError> {
        let mut x = DVector::from_column_slice(x_init);
        let mut f = self.rhs(x.as_slice());
        let mut residual = f.amax();
        for _ in 0..MAX_NEWTON_ITERS {
            if residual < EQUILIBRIUM_TOL {
                return Ok(x);
            }
            let jac = self.jacobian_fd(x.as_slice());
            let Some(delta) = linalg::solve(&jac, &(-&f)) else { break };
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..=MAX_HALVINGS {
                let trial = &x + &delta * scale;
                let f_trial = self.rhs(trial.as_slice());
                let r_trial = f_trial.amax();
                if r_trial < residual {
                    x = trial;
                    f = f_trial;
                    residual = r_trial;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if residual < EQUILIBRIUM_TOL {
            Ok(x)
        } else {
            Err(OdeError::NoConvergence { residual, iterations: MAX_NEWTON_ITERS })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory holds the initial state")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Digraph;
    use crate::models::{GaussianMeanModel, QuadraticGradientModel};
    use crate::streams::seeded_rng;
    use rand::Rng;

    fn gauss(means: &[f64]) -> GaussianMeanModel {
        GaussianMeanModel::new(means.to_vec(), vec![1.0; means.len()]).unwrap()
    }

    #[test]
    fn rhs_examples() {
        let m = gauss(&[3.0, 5.0, 7.0]);
        let w = [1.0 / 3.0; 3];
        let spec = OdeSpec::new(&w, &m).unwrap();
        assert!(spec.rhs(&[5.0])[0].abs() < 1e-15);

        let m2 = gauss(&[0.0, 3.0]);
        let w2 = [2.0 / 3.0, 1.0 / 3.0];
        let spec2 = OdeSpec::new(&w2, &m2).unwrap();
        assert!(spec2.rhs(&[1.0])[0].abs() < 1e-15);
    }

    struct Flat;

    impl ObservationModel for Flat {
        fn n_agents(&self) -> usize {
            3
        }
        fn dim(&self) -> usize {
            2
        }
        fn sample_into(&self, _: usize, _: &[f64], _: &mut dyn rand::RngCore, out: &mut [f64]) {
            out.fill(0.0);
        }
        fn mean(&self, _: usize, _: &[f64]) -> Vec<f64> {
            vec![0.0; 2]
        }
        fn noise_cov(&self, _: usize, _: &[f64]) -> DMatrix<f64> {
            DMatrix::zeros(2, 2)
        }
    }

    #[test]
    fn zero_mean_fields_give_zero_rhs() {
        let w = [0.2, 0.3, 0.5];
        let spec = OdeSpec::new(&w, &Flat).unwrap();
        assert_eq!(spec.rhs(&[1.0, -1.0]).amax(), 0.0);
        assert_eq!(spec.rhs(&[1e6, 3.0]).amax(), 0.0);
    }

    #[test]
    fn rejects_bad_weights() {
        let m = gauss(&[1.0, 2.0]);
        assert!(matches!(OdeSpec::new(&[1.0], &m), Err(OdeError::WeightCount { .. })));
        assert!(matches!(OdeSpec::new(&[1.0, 0.0], &m), Err(OdeError::NonPositiveWeight { agent: 2, .. })));
    }

    #[test]
    fn rk4_matches_exponential() {
        // dx/dt = -w (x - x*) with w = 0.7, x* = 2.
        let m = gauss(&[2.0]);
        let w = [0.7];
        let spec = OdeSpec::new(&w, &m).unwrap();
        let traj = spec.integrate(&[-1.0], 5.0, 1e-3).unwrap();
        let exact = 2.0 + (-1.0 - 2.0) * (-0.7f64 * 5.0).exp();
        assert!((traj.last()[0] - exact).abs() < 1e-8);
        assert_eq!(traj.times.len(), 5001);
        assert_eq!(*traj.times.last().unwrap(), 5.0);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let m = gauss(&[2.0]);
        let w = [3.0];
        let spec = OdeSpec::new(&w, &m).unwrap();
        let exact = 2.0 + (0.0 - 2.0) * (-3.0f64 * 2.0).exp();
        let err = |dt| (spec.integrate(&[0.0], 2.0, dt).unwrap().last()[0] - exact).abs();
        let ratio = err(0.1) / err(0.05);
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let m = gauss(&[3.0, 5.0, 7.0]);
        let w = [0.2, 0.3, 0.5];
        let spec = OdeSpec::new(&w, &m).unwrap();
        let x_star = spec.equilibrium(&[0.0]).unwrap();
        assert!((x_star[0] - (0.2 * 3.0 + 0.3 * 5.0 + 0.5 * 7.0)).abs() < 1e-10);
        let traj = spec.integrate(x_star.as_slice(), 10.0, 1e-2).unwrap();
        assert!(traj.states.iter().all(|s| (s[0] - x_star[0]).abs() < 1e-8));
        let at_rest = spec.integrate(x_star.as_slice(), 1.0, 1e-2).unwrap();
        assert!(at_rest.states.iter().all(|s| (s[0] - x_star[0]).abs() < 1e-12));
    }

    #[test]
    fn equilibrium_examples() {
        let m = gauss(&[3.0, 5.0, 7.0]);
        let w = [1.0; 3];
        assert!((OdeSpec::new(&w, &m).unwrap().equilibrium(&[0.0]).unwrap()[0] - 5.0).abs() < 1e-10);
        let m2 = gauss(&[0.0, 3.0]);
        let w2 = [2.0, 1.0];
        assert!((OdeSpec::new(&w2, &m2).unwrap().equilibrium(&[10.0]).unwrap()[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn equilibrium_of_quadratics_matches_linear_solve() {
        let c = vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![-1.0, 0.5]), DVector::from_vec(vec![0.0, -3.0])];
        let q = vec![
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 0.5]),
            DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 2.0]),
        ];
        let model = QuadraticGradientModel::new(c.clone(), q.clone(), vec![DMatrix::identity(2, 2); 3]).unwrap();
        let w = [0.5, 0.3, 0.2];
        let spec = OdeSpec::new(&w, &model).unwrap();
        let x_star = spec.equilibrium(&[0.0, 0.0]).unwrap();
        assert!(spec.rhs(x_star.as_slice()).amax() < 1e-10);
        // sum w_i Q_i (x - c_i) = 0  =>  (sum w_i Q_i) x = sum w_i Q_i c_i.
        let lhs = (0..3).fold(DMatrix::zeros(2, 2), |acc, i| acc + &q[i] * w[i]);
        let rhs = (0..3).fold(DVector::zeros(2), |acc, i| acc + &q[i] * &c[i] * w[i]);
        let direct = lhs.lu().solve(&rhs).unwrap();
        assert!((x_star - direct).amax() < 1e-10);
    }

    #[test]
    fn equilibrium_is_scale_invariant() {
        let mut rng = seeded_rng(31);
        for _ in 0..50 {
            let means: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let w: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..2.0)).collect();
            let s = rng.random_range(0.01..100.0);
            let ws: Vec<f64> = w.iter().map(|v| v * s).collect();
            let m = gauss(&means);
            let a = OdeSpec::new(&w, &m).unwrap().equilibrium(&[0.0]).unwrap();
            let b = OdeSpec::new(&ws, &m).unwrap().equilibrium(&[0.0]).unwrap();
            assert!((a - b).amax() < 1e-10);
        }
    }

    #[test]
    fn analytic_and_fd_jacobians_agree() {
        let c = vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![-1.0, 0.5])];
        let q = vec![DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]), DMatrix::identity(2, 2)];
        let model = QuadraticGradientModel::new(c, q, vec![DMatrix::identity(2, 2); 2]).unwrap();
        let w = [0.4, 0.6];
        let spec = OdeSpec::new(&w, &model).unwrap();
        let x = [0.3, -0.7];
        assert!((spec.jacobian_fd(&x) - spec.jacobian_analytic(&x).unwrap()).amax() < 1e-6);
    }

    #[test]
    fn network_weights_for_two_ring() {
        let params = GossipParams::uniform(Digraph::ring(2, true).unwrap(), 0.5, 1.0).unwrap();
        let w = network_weights(&params, Variant::Acu, None).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12);
        let wg = network_weights(&params, Variant::Auc, Some(&[2.0, 1.0])).unwrap();
        assert!((wg[0] - 1.0).abs() < 1e-12 && (wg[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bad_integration_requests() {
        let m = gauss(&[0.0]);
        let w = [1.0];
        let spec = OdeSpec::new(&w, &m).unwrap();
        assert!(spec.integrate(&[0.0], 1.0, 0.0).is_err());
        assert!(spec.integrate(&[0.0], -1.0, 0.1).is_err());
        assert_eq!(spec.integrate(&[4.0], 0.0, 0.1).unwrap().states.len(), 1);
    }
}
