use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{GossipError, GossipEvent, GossipParams};
use crate::streams::replication_rng;

/// Rows of the running product are treated as merged once every column
/// spread drops below this.
const MERGED_SPREAD: f64 = 1e-13;
/// Hard cap on the number of extra factors drawn past `max_lag`.
const MAX_TAIL: usize = 200_000;

/// Monte Carlo estimate of `E|Phi(k+m|k) - Phi_k|` for `m = 0..=max_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecaySeries {
    pub lags: Vec<usize>,
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub reps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Estimates how fast products of gossip matrices approach their limit.
///
/// Each replication draws one long product `A_n ... A_k` (the same path for
/// every lag), runs it until its rows agree to [`MERGED_SPREAD`], takes that
/// as the limit `Phi_k`, and records the infinity-norm distance of every
/// intermediate product with `m <= max_lag`.
pub fn decay_estimate(
    params: &GossipParams,
    max_lag: usize,
    reps: usize,
    seed: u64,
) -> Result<DecaySeries, GossipError> {
    params.graph().require_strongly_connected()?;
    let paths: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| decay_path(params, max_lag, seed, rep as u64))
        .collect();

    let lags: Vec<usize> = (0..=max_lag).collect();
    let reps_f = reps.max(1) as f64;
    let mut mean = vec![0.0; max_lag + 1];
    let mut sq = vec![0.0; max_lag + 1];
    for path in &paths {
        for (m, &v) in path.iter().enumerate() {
            mean[m] += v;
            sq[m] += v * v;
        }
    }
    let std_err = mean
        .iter_mut()
        .zip(&sq)
        .map(|(mu, &s)| {
            *mu /= reps_f;
            let var = if reps > 1 { (s / reps_f - *mu * *mu).max(0.0) * reps_f / (reps_f - 1.0) } else { 0.0 };
            (var / reps_f).sqrt()
        })
        .collect();
    Ok(DecaySeries { lags, mean, std_err, reps })
}

fn decay_path(params: &GossipParams, max_lag: usize, seed: u64, rep: u64) -> Vec<f64> {
    product_distances(params, |m| m <= max_lag, max_lag, seed, rep)
}

/// Runs one product path and returns the distances to its limit at the lags
/// selected by `keep` (all of them `<= last_lag`).
fn product_distances(
    params: &GossipParams,
    keep: impl Fn(usize) -> bool,
    last_lag: usize,
    seed: u64,
    rep: u64,
) -> Vec<f64> {
    let n = params.n_nodes();
    let mut rng = replication_rng(seed, rep);
    let mut event = GossipEvent { broadcaster: 0, receivers: Vec::new() };
    let mut product = DMatrix::identity(n, n);
    let mut snapshots = Vec::new();
    for m in 0..=last_lag {
        params.sample_event_into(&mut rng, &mut event);
        params.left_multiply(&event, &mut product);
        if keep(m) {
            snapshots.push(product.clone());
        }
    }
    let mut extra = 0;
    while column_spread(&product) > MERGED_SPREAD && extra < MAX_TAIL {
        params.sample_event_into(&mut rng, &mut event);
        params.left_multiply(&event, &mut product);
        extra += 1;
    }
    snapshots.iter().map(|s| crate::linalg::inf_norm(&(s - &product))).collect()
}

/// Mean and standard error of `E|Phi(k+lag|k) - Phi_k|` at a single lag.
pub fn decay_at_lag(params: &GossipParams, lag: usize, reps: usize, seed: u64) -> Result<(f64, f64), GossipError> {
    params.graph().require_strongly_connected()?;
    let values: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| product_distances(params, |m| m == lag, lag, seed, rep as u64)[0])
        .collect();
    let r = reps.max(1) as f64;
    let mean = values.iter().sum::<f64>() / r;
    let var = if reps > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0) } else { 0.0 };
    Ok((mean, (var / r).sqrt()))
}

/// Largest spread `max_rows - min_rows` over the columns of `m`.
pub(crate) fn column_spread(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.max() - c.min()).fold(0.0, f64::max)
}

/// Least-squares fit of `ln y` against `x`. `None` if any `y` is not positive
/// or fewer than two points are given.
pub fn log_linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    if x.len() != y.len() || x.len() < 2 || y.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let n = x.len() as f64;
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = ly.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some(LinearFit { slope, intercept, r_squared })
}
