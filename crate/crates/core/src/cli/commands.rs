use std::io::Write;
use std::path::PathBuf;

use nalgebra::DMatrix;

use super::output::{list, OutputDir};
use super::{CliError, Experiment};
use crate::design;
use crate::engine::{run_replications, Network, NetworkState, SimulationConfig, Trace, TracePlan};
use crate::gossip::{decay_estimate, log_linear_fit, Variant};
use crate::linalg;
use crate::ode::OdeSpec;
use crate::rate::{self, NormalizedError};

/// What a command wrote and its headline numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub files: Vec<PathBuf>,
    /// Human-readable `key = value` summary, also written to the report file.
    pub summary: Vec<(String, String)>,
}

fn push(summary: &mut Vec<(String, String)>, key: &str, value: impl ToString) {
    summary.push((key.to_string(), value.to_string()));
}

fn write_report(out: &mut OutputDir, name: &str, summary: &[(String, String)]) -> Result<(), CliError> {
    out.write(name, |w| {
        for (k, v) in summary {
            writeln!(w, "{k} = {v}")?;
        }
        Ok(())
    })
}

/// Per-broadcaster mixing weight, read off the first out-edge.
fn broadcaster_gammas(exp: &Experiment) -> Vec<f64> {
    (0..exp.graph.n_nodes())
        .map(|i| exp.params.mixing_weights()[exp.graph.out_edge_range(i).start])
        .collect()
}

/// Runs the configured design directive and writes the designed network.
///
/// Files: `design.csv` (per node), `gossip_params.toml` (loadable as a
/// `params-file` network), `graph.txt` and `design_report.txt`.
pub fn cmd_design(exp: &Experiment) -> Result<CommandOutput, CliError> {
    let summary_in = exp
        .design
        .as_ref()
        .ok_or_else(|| CliError::Config("`design` needs a [network] section with kind = \"design\"".into()))?;
    let phi = exp.params.stationary_vector()?;
    let target = summary_in.target.phi();
    let fixed_point = linalg::left_fixed_point_residual(target, &exp.params.mean_matrix());
    let target_gap = phi.iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let d = &summary_in.update_probs;
    let weights: Vec<f64> = phi.iter().zip(d).map(|(p, d)| p * d).collect();
    let gammas = broadcaster_gammas(exp);

    let mut summary = Vec::new();
    push(&mut summary, "directive", summary_in.directive.name());
    push(&mut summary, "algorithm", format!("{:?}", summary_in.algorithm).to_lowercase());
    push(&mut summary, "nodes", exp.graph.n_nodes());
    push(&mut summary, "edges", exp.graph.n_edges());
    push(&mut summary, "clock_probs", list(exp.params.clock_probs()));
    push(&mut summary, "gamma", list(&gammas));
    push(&mut summary, "beta", list(&gammas.iter().map(|g| 1.0 - g).collect::<Vec<_>>()));
    push(&mut summary, "target_phi", list(target));
    push(&mut summary, "achieved_phi", list(&phi));
    push(&mut summary, "update_probs", list(d));
    push(&mut summary, "ode_weights", list(&weights));
    push(&mut summary, "fixed_point_residual", format!("{fixed_point:e}"));
    push(&mut summary, "target_residual", format!("{target_gap:e}"));

    let mut out = OutputDir::create(&exp.config.output_dir, exp.metadata())?;
    out.write("design.csv", |w| {
        writeln!(w, "node,clock_prob,gamma,beta,target_phi,achieved_phi,update_prob,ode_weight")?;
        for k in 0..exp.graph.n_nodes() {
            writeln!(
                w,
                "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                k + 1,
                exp.params.clock_probs()[k],
                gammas[k],
                1.0 - gammas[k],
                target[k],
                phi[k],
                d[k],
                weights[k]
            )?;
        }
        Ok(())
    })?;
    out.write("gossip_params.toml", |w| w.write_all(exp.params.to_toml_string().as_bytes()))?;
    out.write("graph.txt", |w| write!(w, "{}", exp.graph))?;
    write_report(&mut out, "design_report.txt", &summary)?;
    Ok(CommandOutput { files: out.into_files(), summary })
}

fn run_all(exp: &Experiment, sim: &SimulationConfig) -> Result<Vec<Trace>, CliError> {
    let network = Network::new(&exp.params, exp.model()?, exp.policy()?).map_err(|source| CliError::Simulation { rep: 0, source })?;
    run_replications(&network, sim, exp.config.seed, exp.config.replications)
        .into_iter()
        .enumerate()
        .map(|(rep, r)| r.map_err(|source| CliError::Simulation { rep, source }))
        .collect()
}

fn simulation_config(exp: &Experiment, reference: Vec<f64>, keep_states: bool) -> Result<SimulationConfig, CliError> {
    if exp.config.iterations == 0 {
        return Err(CliError::Config("`iterations` must be positive".into()));
    }
    let dim = exp.model()?.dim();
    let mut sim = SimulationConfig::new(exp.config.variant, exp.config.iterations);
    if let Some(x0) = &exp.config.initial {
        if x0.len() != dim {
            return Err(CliError::Config(format!("initial has length {}, model dimension is {dim}", x0.len())));
        }
        let n = exp.graph.n_nodes();
        let values = (0..n).flat_map(|_| x0.iter().copied()).collect();
        sim.initial = Some(NetworkState::from_values(n, dim, values));
    }
    sim.plan = TracePlan { every: exp.config.trace.every, keep_states, reference: Some(reference) };
    Ok(sim)
}

/// Runs the replications and writes per-replication traces and the
/// replication-averaged MSE curve.
///
/// Files, for master seed `S` and replication index `r` (the stream index,
/// starting at 0): `trace_S_r.csv` (`iter,node,value[,dim]`, unless
/// `trace.states = false`), `summary_S_r.csv` (`iter,disagreement,mse`),
/// `mse_S.csv` (`iter,mse,mse_se,disagreement`) and `simulate_report.txt`.
pub fn cmd_simulate(exp: &Experiment) -> Result<CommandOutput, CliError> {
    let weights = exp.ode_weights()?;
    let x_star = exp.equilibrium()?;
    let reference = exp.config.trace.reference.clone().unwrap_or_else(|| x_star.as_slice().to_vec());
    let keep_states = exp.config.trace.states.unwrap_or(true);
    let sim = simulation_config(exp, reference.clone(), keep_states)?;
    let traces = run_all(exp, &sim)?;

    let seed = exp.config.seed;
    let mut out = OutputDir::create(&exp.config.output_dir, exp.metadata())?;
    for (r, trace) in traces.iter().enumerate() {
        if keep_states {
            out.write(&format!("trace_{seed}_{r}.csv"), |w| trace.write_states_csv(w))?;
        }
        out.write(&format!("summary_{seed}_{r}.csv"), |w| trace.write_summary_csv(w))?;
    }

    let reps = traces.len() as f64;
    let rows: Vec<(u64, f64, f64, f64)> = (0..traces[0].samples.len())
        .map(|k| {
            let mse: Vec<f64> = traces.iter().map(|t| t.samples[k].mse.unwrap_or(f64::NAN)).collect();
            let mean = mse.iter().sum::<f64>() / reps;
            let se = if traces.len() > 1 {
                (mse.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (reps - 1.0) / reps).sqrt()
            } else {
                0.0
            };
            let dis = traces.iter().map(|t| t.samples[k].disagreement).sum::<f64>() / reps;
            (traces[0].samples[k].iteration, mean, se, dis)
        })
        .collect();
    out.write(&format!("mse_{seed}.csv"), |w| {
        writeln!(w, "iter,mse,mse_se,disagreement")?;
        for (iter, mse, se, dis) in &rows {
            writeln!(w, "{iter},{mse:?},{se:?},{dis:?}")?;
        }
        Ok(())
    })?;

    let last = rows.last().expect("traces hold at least the initial sample");
    let mut summary = Vec::new();
    push(&mut summary, "iterations", exp.config.iterations);
    push(&mut summary, "replications", exp.config.replications);
    push(&mut summary, "ode_weights", list(&weights));
    push(&mut summary, "ode_equilibrium", list(x_star.as_slice()));
    push(&mut summary, "mse_reference", list(&reference));
    push(&mut summary, "final_mse", format!("{:?}", last.1));
    push(&mut summary, "final_mse_se", format!("{:?}", last.2));
    push(&mut summary, "final_disagreement", format!("{:?}", last.3));
    write_report(&mut out, "simulate_report.txt", &summary)?;
    Ok(CommandOutput { files: out.into_files(), summary })
}

/// Predicted stationary covariance of the normalized error, with Monte Carlo
/// `g_i` and, unless `rate.empirical = false`, a simulated comparison.
///
/// Files: `rate_nodes.csv` (`node,phi,update_prob,g,g_se,phi_sq_mean,noise_norm`),
/// `rate_covariance.csv` (`row,col,predicted,empirical,empirical_se`) and
/// `rate_report.txt`.
pub fn cmd_rate(exp: &Experiment) -> Result<CommandOutput, CliError> {
    let epsilon = exp
        .policy()?
        .constant_epsilon()
        .ok_or_else(|| CliError::Config("`rate` needs a constant step size".into()))?;
    let model = exp.model()?;
    let rate_cfg = &exp.config.rate;
    let weights = exp.ode_weights()?;
    let x_star = exp.equilibrium()?;
    let spec = OdeSpec::new(&weights, model)?;
    let tail = match rate_cfg.tail {
        Some(t) => t,
        None => rate::choose_tail(&exp.params, exp.config.seed)?,
    };
    let g = rate::estimate_g(&exp.params, exp.config.variant, tail, rate_cfg.g_reps, exp.config.seed)?;
    let sde = rate::build_sde(&spec, x_star.as_slice(), &g.g)?;
    let predicted = rate::stationary_covariance(&sde)?;

    let phi = exp.params.stationary_vector()?;
    let d = exp.params.expected_update_probs(exp.config.variant)?;
    let r_norms: Vec<f64> = sde.noise_covs.iter().map(|r| r.clone().singular_values().max()).collect();
    let criterion = design::rate_criterion(&phi, &d, &r_norms);
    let optimal = design::optimal_phi_for_rate(&d, &r_norms).ok();
    let uniform = vec![1.0 / phi.len() as f64; phi.len()];

    let empirical: Option<NormalizedError> = if rate_cfg.empirical {
        let sim = simulation_config(exp, x_star.as_slice().to_vec(), true)?;
        let traces = run_all(exp, &sim)?;
        let each = traces
            .iter()
            .map(|t| rate::empirical_normalized_error(t, x_star.as_slice(), epsilon, rate_cfg.burn_in))
            .collect::<Result<Vec<_>, _>>()?;
        Some(rate::pool_normalized_errors(&each)?)
    } else {
        None
    };

    let mut summary = Vec::new();
    push(&mut summary, "epsilon", format!("{epsilon:?}"));
    push(&mut summary, "equilibrium", list(x_star.as_slice()));
    push(&mut summary, "jacobian", matrix_str(&sde.jacobian));
    push(&mut summary, "spectral_abscissa", format!("{:?}", sde.spectral_abscissa));
    push(&mut summary, "tail", tail);
    push(&mut summary, "g", list(&g.g));
    push(&mut summary, "g_se", list(&g.std_err));
    push(&mut summary, "drive_cov", matrix_str(&sde.drive_cov));
    push(&mut summary, "predicted_cov", matrix_str(&predicted));
    if let Some(e) = &empirical {
        push(&mut summary, "empirical_cov", matrix_str(&e.pooled));
        push(&mut summary, "empirical_cov_se", matrix_str(&e.pooled_se));
        push(&mut summary, "empirical_samples", e.samples);
    }
    push(&mut summary, "criterion", format!("{criterion:?}"));
    push(&mut summary, "criterion_uniform_phi", format!("{:?}", design::rate_criterion(&uniform, &d, &r_norms)));
    if let Some(opt) = &optimal {
        push(&mut summary, "optimal_phi", list(opt.phi()));
        push(&mut summary, "criterion_optimal_phi", format!("{:?}", design::rate_criterion(opt.phi(), &d, &r_norms)));
    }

    let mut out = OutputDir::create(&exp.config.output_dir, exp.metadata())?;
    out.write("rate_nodes.csv", |w| {
        writeln!(w, "node,phi,update_prob,g,g_se,phi_sq_mean,noise_norm")?;
        for k in 0..phi.len() {
            writeln!(
                w,
                "{},{:?},{:?},{:?},{:?},{:?},{:?}",
                k + 1,
                phi[k],
                d[k],
                g.g[k],
                g.std_err[k],
                g.phi_sq_mean[k],
                r_norms[k]
            )?;
        }
        Ok(())
    })?;
    out.write("rate_covariance.csv", |w| {
        writeln!(w, "row,col,predicted,empirical,empirical_se")?;
        for i in 0..predicted.nrows() {
            for j in 0..predicted.ncols() {
                match &empirical {
                    Some(e) => writeln!(w, "{},{},{:?},{:?},{:?}", i + 1, j + 1, predicted[(i, j)], e.pooled[(i, j)], e.pooled_se[(i, j)])?,
                    None => writeln!(w, "{},{},{:?},,", i + 1, j + 1, predicted[(i, j)])?,
                }
            }
        }
        Ok(())
    })?;
    write_report(&mut out, "rate_report.txt", &summary)?;
    Ok(CommandOutput { files: out.into_files(), summary })
}

fn matrix_str(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m.row_iter().map(|r| list(&r.iter().copied().collect::<Vec<_>>())).collect();
    format!("[{}]", rows.join(", "))
}

/// Stationarity and product-decay diagnostics of the gossip network.
///
/// Files: `stationary.csv` (`node,clock_prob,phi,update_prob_auc,update_prob_acu`),
/// `decay.csv` (`lag,mean,std_err`) and `analyze_report.txt`.
pub fn cmd_analyze(exp: &Experiment) -> Result<CommandOutput, CliError> {
    let params = &exp.params;
    let phi = params.stationary_vector()?;
    let residual = linalg::left_fixed_point_residual(&phi, &params.mean_matrix());
    let d_auc = params.expected_update_probs(Variant::Auc)?;
    let d_acu = params.expected_update_probs(Variant::Acu)?;
    let cfg = &exp.config.analyze;
    let decay = decay_estimate(params, cfg.max_lag, cfg.reps, exp.config.seed)?;
    let x: Vec<f64> = decay.lags.iter().map(|&m| m as f64).collect();
    let fit = log_linear_fit(&x, &decay.mean);

    let mut summary = Vec::new();
    push(&mut summary, "nodes", exp.graph.n_nodes());
    push(&mut summary, "edges", exp.graph.n_edges());
    push(&mut summary, "strongly_connected", exp.graph.is_strongly_connected());
    push(&mut summary, "stationary_phi", list(&phi));
    push(&mut summary, "stationary_residual", format!("{residual:e}"));
    push(&mut summary, "decay_reps", decay.reps);
    match fit {
        Some(f) => {
            push(&mut summary, "decay_slope", format!("{:?}", f.slope));
            push(&mut summary, "decay_intercept", format!("{:?}", f.intercept));
            push(&mut summary, "decay_r_squared", format!("{:?}", f.r_squared));
        }
        None => push(&mut summary, "decay_fit", "unavailable (series reached zero)"),
    }

    let mut out = OutputDir::create(&exp.config.output_dir, exp.metadata())?;
    out.write("stationary.csv", |w| {
        writeln!(w, "node,clock_prob,phi,update_prob_auc,update_prob_acu")?;
        for k in 0..phi.len() {
            writeln!(w, "{},{:?},{:?},{:?},{:?}", k + 1, params.clock_probs()[k], phi[k], d_auc[k], d_acu[k])?;
        }
        Ok(())
    })?;
    out.write("decay.csv", |w| {
        writeln!(w, "lag,mean,std_err")?;
        for ((m, mean), se) in decay.lags.iter().zip(&decay.mean).zip(&decay.std_err) {
            writeln!(w, "{m},{mean:?},{se:?}")?;
        }
        Ok(())
    })?;
    write_report(&mut out, "analyze_report.txt", &summary)?;
    Ok(CommandOutput { files: out.into_files(), summary })
}
