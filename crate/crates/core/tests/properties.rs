use gossip_dsa::cli::ExperimentConfig;
use gossip_dsa::design::{self, DesignTarget};
use gossip_dsa::engine::{Network, NetworkState};
use gossip_dsa::gossip::{check_row_stochastic, update_probs, GossipParams, Variant};
use gossip_dsa::graph::{random_strongly_connected, Digraph};
use gossip_dsa::models::{GaussianMeanModel, StepSizePolicy};
use gossip_dsa::rate::lyapunov;
use gossip_dsa::streams::seeded_rng;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn random_params(n: usize, seed: u64) -> GossipParams {
    let mut rng = seeded_rng(seed);
    let g = random_strongly_connected(n, rng.random_range(0.2..0.8), &mut rng).unwrap();
    let m = g.n_edges();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let clock = raw.iter().map(|x| x / s).collect();
    let reception = (0..m).map(|_| rng.random_range(0.2..=1.0)).collect();
    let mixing = (0..m).map(|_| rng.random_range(0.01..0.99)).collect();
    GossipParams::new(g, clock, reception, mixing).unwrap()
}

fn interior_target(n: usize, seed: u64) -> DesignTarget {
    let mut rng = seeded_rng(seed ^ 0xa5a5);
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    DesignTarget::new(raw.iter().map(|x| x / s).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn realizations_are_row_stochastic(n in 2usize..10, seed in any::<u64>()) {
        let params = random_params(n, seed);
        let mut rng = seeded_rng(seed.wrapping_add(1));
        for _ in 0..50 {
            let ev = params.sample_event(&mut rng);
            let r = params.realization(&ev).unwrap();
            prop_assert!(check_row_stochastic(&r.a).is_ok());
            prop_assert!(r.a.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn mean_matrix_is_row_stochastic_with_positive_stationary_vector(n in 2usize..10, seed in any::<u64>()) {
        let params = random_params(n, seed);
        let a = params.mean_matrix();
        prop_assert!(check_row_stochastic(&a).is_ok());
        let phi = params.stationary_vector().unwrap();
        prop_assert!((phi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(phi.iter().all(|&p| p > 0.0));
        for j in 0..n {
            let back: f64 = (0..n).map(|i| phi[i] * a[(i, j)]).sum();
            prop_assert!((back - phi[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn expected_update_probs_are_probabilities(n in 2usize..10, seed in any::<u64>()) {
        let params = random_params(n, seed);
        let acu = params.expected_update_probs(Variant::Acu).unwrap();
        let auc = params.expected_update_probs(Variant::Auc).unwrap();
        for k in 0..n {
            prop_assert!(acu[k] > 0.0 && auc[k] <= 1.0 + 1e-12);
            prop_assert!((auc[k] - acu[k] - params.clock_probs()[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn algorithm_a_round_trips(n in 2usize..10, seed in any::<u64>()) {
        let params = random_params(n, seed);
        let target = interior_target(n, seed);
        let p = design::algorithm_a(params.graph(), &target, params.mixing_weights(), params.reception_probs()).unwrap();
        let designed = GossipParams::new(params.graph().clone(), p, params.reception_probs().to_vec(), params.mixing_weights().to_vec()).unwrap();
        let phi = designed.stationary_vector().unwrap();
        for k in 0..n {
            prop_assert!((phi[k] - target.phi()[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn algorithm_b_round_trips(n in 2usize..10, seed in any::<u64>()) {
        let params = random_params(n, seed);
        let target = interior_target(n, seed);
        let clock = params.clock_probs().to_vec();
        let gammas = design::algorithm_b(params.graph(), &target, &clock, params.reception_probs(), 0.9).unwrap();
        prop_assert!(gammas.iter().all(|&g| g > 0.0 && g <= 0.9 + 1e-12));
        prop_assert!(gammas.iter().any(|&g| (g - 0.9).abs() < 1e-12));
        let designed = GossipParams::with_broadcaster_gammas(params.graph().clone(), clock, params.reception_probs().to_vec(), &gammas).unwrap();
        let phi = designed.stationary_vector().unwrap();
        for k in 0..n {
            prop_assert!((phi[k] - target.phi()[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_step_keeps_states_in_the_initial_hull(n in 2usize..8, seed in any::<u64>()) {
        let params = random_params(n, seed);
        let model = GaussianMeanModel::new(vec![50.0; n], vec![5.0; n]).unwrap();
        let zero = StepSizePolicy::Constant(0.0);
        let net = Network { params: &params, model: &model, policy: &zero };
        let mut rng = seeded_rng(seed);
        let init: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lo = init.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = init.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for variant in Variant::ALL {
            let mut s = NetworkState::scalar(&init);
            for _ in 0..200 {
                let ev = params.sample_event(&mut rng);
                net.step(variant, &mut s, &ev, &mut rng);
                prop_assert!(s.values().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
            }
        }
    }

    #[test]
    fn lyapunov_solution_is_symmetric_psd(d in 1usize..5, seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let j = -(&b * b.transpose()) - DMatrix::identity(d, d);
        let c = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let q = &c * c.transpose();
        let s = lyapunov(&j, &q).unwrap();
        prop_assert!((&s - s.transpose()).amax() < 1e-12);
        let residual = &j * &s + &s * j.transpose() + &q;
        prop_assert!(residual.amax() < 1e-9 * q.amax().max(1.0));
        prop_assert!(s.clone().symmetric_eigenvalues().iter().all(|&e| e > -1e-10));
    }

    #[test]
    fn optimal_phi_beats_random_targets(n in 2usize..8, seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
        let best = design::rate_criterion(design::optimal_phi_for_rate(&d, &r).unwrap().phi(), &d, &r);
        let other = interior_target(n, seed);
        prop_assert!(best <= design::rate_criterion(other.phi(), &d, &r) * (1.0 + 1e-12));
    }

    #[test]
    fn update_probs_free_function_matches_params(n in 2usize..10, seed in any::<u64>()) {
        let params = random_params(n, seed);
        for variant in Variant::ALL {
            let free = update_probs(params.graph(), params.clock_probs(), params.reception_probs(), variant).unwrap();
            prop_assert_eq!(free, params.expected_update_probs(variant).unwrap());
        }
    }

    #[test]
    fn config_rejects_unknown_keys(key in "[a-z]{3,10}") {
        prop_assume!(!["variant", "iterations", "replications", "seed", "output_dir", "initial", "graph", "network", "model", "step", "trace", "rate", "analyze"].contains(&key.as_str()));
        let text = format!("{key} = 1\n[graph]\nkind = \"complete\"\nnodes = 3\n[network]\nkind = \"uniform\"\ngamma = 0.5\n");
        prop_assert!(ExperimentConfig::parse(&text).is_err());
    }
}

#[test]
fn graph_text_round_trips() {
    let g = random_strongly_connected(7, 0.4, &mut seeded_rng(3)).unwrap();
    let back = Digraph::parse(&g.to_string()).unwrap();
    assert_eq!(back.edges(), g.edges());
}
