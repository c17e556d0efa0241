use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use urllc_risk::learning::{select_action, QTables};
use urllc_risk::mdp::*;
use urllc_risk::model::*;
use urllc_risk::planning::*;
use urllc_risk::sim::*;

fn within_3_sigma(count: u64, n: u64, p: f64) -> bool {
    let freq = count as f64 / n as f64;
    (freq - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt() + 1e-9
}

#[test]
fn sampled_losses_follow_the_loss_pmf() {
    const N: u64 = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (a, l) in [(2, 5), (3, 4), (6, 5), (4, 2)] {
        let mut counts = vec![0u64; a as usize + 1];
        for _ in 0..N {
            counts[sample_losses(a, l, 0.6, Replication::Independent, &mut rng) as usize] += 1;
        }
        for n in 0..=a {
            let p = loss_count_pmf(n, a, l, 0.6).unwrap();
            assert!(
                within_3_sigma(counts[n as usize], N, p),
                "a={a} l={l} n={n}: {} vs {p}",
                counts[n as usize]
            );
        }
    }
}

#[test]
fn subset_replication_follows_its_own_pmf() {
    const N: u64 = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (a, l) = (2, 5);
    let mut counts = [0u64; 3];
    for _ in 0..N {
        counts[sample_losses(a, l, 0.6, Replication::UniformSubset, &mut rng) as usize] += 1;
    }
    for n in 0..=a {
        let p = subset_loss_pmf(n, a, l, 0.6).unwrap();
        assert!(within_3_sigma(counts[n as usize], N, p), "n={n}");
    }
}

#[test]
fn environment_step_matches_transition_distribution() {
    const N: u64 = 1_000_000;
    let params = ModelParams::default();
    let state = TimedState {
        t: 2,
        qos: QosState::new(vec![6, 2]),
    };
    let action = Action::new(vec![2, 3]);
    let dist = transition_dist(&state, &action, &params).unwrap();
    let mut env = Environment::new(&params, EnvOptions::default(), state.qos.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut counts: BTreeMap<QosState, u64> = BTreeMap::new();
    let (mut sum, mut sum_sq) = (0f64, 0f64);
    for _ in 0..N {
        env.reset(state.t, state.qos.clone()).unwrap();
        let out = env.step(&action, &mut rng).unwrap();
        *counts.entry(env.state().grid_view.clone()).or_default() += 1;
        let r = f64::from(out.reward);
        sum += r;
        sum_sq += r * r;
        assert_eq!(out.risk, is_risk(&env.state().grid_view, &params));
    }
    for e in &dist {
        let c = counts.get(&e.next).copied().unwrap_or(0);
        assert!(within_3_sigma(c, N, e.prob), "{}: {c} vs {}", e.next, e.prob);
    }
    assert!(counts.keys().all(|k| dist.iter().any(|e| &e.next == k)));

    let mean = sum / N as f64;
    let sd = ((sum_sq / N as f64 - mean * mean) / N as f64).sqrt();
    let want = slot_reward(&action, &params, false).unwrap();
    assert!((mean - want).abs() <= 3.0 * sd, "{mean} vs {want}");
}

#[test]
fn full_exploration_is_uniform() {
    const N: u64 = 100_000;
    let space = StateSpace::new(2, 4);
    let tables = QTables::new(space, 3, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut counts = [0u64; 6];
    for _ in 0..N {
        counts[select_action(&tables, 0, 0, 1.0, Criterion::Weighted, &mut rng)] += 1;
    }
    for c in counts {
        assert!(within_3_sigma(c, N, 1.0 / 6.0), "{counts:?}");
    }
}

#[test]
fn monte_carlo_agrees_with_dynamic_programming() {
    let params = ModelParams {
        horizon: 4,
        arrivals: ArrivalDist::from_probs(vec![0.2, 0.3, 0.3, 0.2]).unwrap(),
        channels: 3,
        resolution: 6,
        rho_max: 0.5,
        ..ModelParams::default()
    };
    let s0 = QosState::zeros(2);
    let sol = value_iteration(&params).unwrap();
    for c in Criterion::ALL {
        let policy = sol.policy(c);
        let mc = monte_carlo(policy, 0, &s0, &params, EnvOptions::default(), 100_000, 3).unwrap();
        let dp = evaluate_policy(policy, &params).unwrap();
        let (u, u_bar) = (dp.u(0, &s0).unwrap(), dp.u_bar(0, &s0).unwrap());
        // 95% half-widths scaled to roughly 3 sigma.
        assert!(
            (mc.value.mean - u).abs() <= 1.6 * mc.value.half_width,
            "{c:?}: {} vs {u}",
            mc.value.mean
        );
        assert!(
            (mc.risk.mean - u_bar).abs() <= 1.6 * mc.risk.half_width,
            "{c:?}: {} vs {u_bar}",
            mc.risk.mean
        );
    }
}

#[test]
fn projected_view_stays_within_half_a_grid_step() {
    let params = ModelParams::default();
    let policy = Policy::constant(&Action::new(vec![2, 3]), &params).unwrap();
    let opts = EnvOptions {
        grid: GridMode::Projected,
        ..EnvOptions::default()
    };
    let mc = monte_carlo(&policy, 0, &QosState::zeros(2), &params, opts, 5_000, 4).unwrap();
    assert!(mc.max_quantization_gap <= 0.5 / f64::from(params.resolution) + 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trajectories_hit_risk_at_most_once(seed in any::<u64>(), first in 0u32..=5, start in 0u32..=11) {
        let params = ModelParams::default();
        let policy = Policy::constant(&Action::new(vec![first, 5 - first]), &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s0 = QosState::new(vec![start, 0]);
        let tr = rollout(&policy, 0, &s0, &params, EnvOptions::default(), &mut rng).unwrap();
        let hits = tr.steps.iter().filter(|s| s.risk).count();
        prop_assert!(hits <= 1);
        if hits == 1 {
            prop_assert!(tr.steps.last().unwrap().risk);
            prop_assert_eq!(tr.termination, Termination::RiskAbsorbed);
        } else {
            prop_assert_eq!(tr.steps.len(), params.horizon);
        }
        prop_assert!(tr.max_quantization_gap <= 1.0);
    }
}
