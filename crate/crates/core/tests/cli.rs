mod common;

use std::fs;
use std::process::Command;

use proptest::prelude::*;
use urllc_risk::cli::{ExperimentConfig, PolicyChoice};
use urllc_risk::learning::RewardSignal;
use urllc_risk::mdp::RiskWeight;
use urllc_risk::model::Replication;
use urllc_risk::planning::Criterion;
use urllc_risk::sim::GridMode;

const BIN: &str = env!("CARGO_BIN_EXE_urllc-risk");

const SMALL: &str = "model.users = 2\nmodel.channels = 2\nmodel.horizon = 3\n\
model.arrival_probs = 0.3,0.5,0.2\nmodel.resolution = 4\nmodel.rho_max = 0.5\n\
run.fixed_action = 1,1\nrun.initial_state = 0,0\nrun.episodes = 500\n";

fn config_strategy() -> impl Strategy<Value = ExperimentConfig> {
    (
        (1usize..=3, 0u32..=6, 1usize..=9, 0.0f64..=1.0, 0.1f64..10.0, 0u32..=8),
        (
            0.01f64..0.99,
            prop_oneof![Just(RiskWeight::Infinite), (0.0f64..5.0).prop_map(RiskWeight::Finite)],
            0.0f64..=1.0,
            1u32..=40,
        ),
        (
            0.0f64..=1.0,
            proptest::option::of(0.0f64..=1.0),
            0.5f64..=1.0,
            1u64..1_000_000,
            1u64..10_000,
            1e-9f64..1.0,
        ),
        (
            1u64..1_000_000,
            any::<u64>(),
            any::<bool>(),
            any::<bool>(),
            0usize..4,
            0u64..100,
            any::<bool>(),
            0usize..3,
        ),
    )
        .prop_map(|(m, r, l, run)| {
            let (users, channels, horizon, mu, lambda, a_max) = m;
            let (rho_max, xi, w, resolution) = r;
            let (epsilon, epsilon_final, gamma_lr, max_steps, window, tol) = l;
            let (episodes, seed, explicit_state, projected, policy, trajectories, subset, behavior) = run;
            let mut fixed_action = vec![0; users];
            fixed_action[0] = channels;
            ExperimentConfig {
                users,
                channels,
                horizon,
                mu,
                lambda,
                a_max,
                arrival_probs: None,
                rho_max,
                xi,
                w,
                resolution,
                replication: if subset {
                    Replication::UniformSubset
                } else {
                    Replication::Independent
                },
                epsilon,
                epsilon_final,
                gamma_lr,
                max_steps,
                window,
                tol,
                behavior: Criterion::ALL[behavior],
                reward_signal: if subset {
                    RewardSignal::Expected
                } else {
                    RewardSignal::Realized
                },
                episodes,
                seed,
                initial_state: explicit_state.then(|| vec![resolution / 3; users]),
                grid: if projected {
                    GridMode::Projected
                } else {
                    GridMode::Chain
                },
                policy: PolicyChoice::ALL[policy],
                fixed_action,
                trajectories,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn config_text_round_trips(cfg in config_strategy()) {
        let text = cfg.to_text();
        let parsed = ExperimentConfig::parse(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&parsed, &cfg);
        prop_assert_eq!(parsed.to_text(), text);
    }
}

#[test]
fn explicit_arrival_probabilities_round_trip() {
    let cfg = ExperimentConfig::parse(SMALL).unwrap();
    assert_eq!(cfg.arrival_probs.as_deref(), Some(&[0.3, 0.5, 0.2][..]));
    assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
}

#[test]
fn binary_reports_config_errors_with_exit_code_1() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "model.mu = 1.5\nmodel.colour = red\n").unwrap();
    let out = Command::new(BIN)
        .args(["solve", "--config", conf.to_str().unwrap(), "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 2, "{stderr}");
    assert!(stderr.contains("colour"));
}

#[test]
fn binary_reports_runtime_errors_with_exit_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("ok.conf");
    fs::write(&conf, SMALL).unwrap();
    let blocker = dir.path().join("plain-file");
    fs::write(&blocker, "").unwrap();
    let out = Command::new(BIN)
        .args(["solve", "--config", conf.to_str().unwrap(), "--out"])
        .arg(blocker.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn binary_applies_environment_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("ok.conf");
    fs::write(&conf, SMALL).unwrap();
    let out_dir = dir.path().join("out");
    let out = Command::new(BIN)
        .args(["evaluate", "--config", conf.to_str().unwrap(), "--seed", "77", "--out"])
        .arg(&out_dir)
        .env("APP_MODEL_RHO_MAX", "0.75")
        .env("APP_RUN_POLICY", "min_risk")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let echoed = ExperimentConfig::parse(&fs::read_to_string(out_dir.join("config.txt")).unwrap()).unwrap();
    assert_eq!(echoed.rho_max, 0.75);
    assert_eq!(echoed.seed, 77);
    assert_eq!(echoed.policy, PolicyChoice::MinRisk);
    let eval = fs::read_to_string(out_dir.join("evaluation.csv")).unwrap();
    assert!(eval.starts_with("policy,level_1,level_2,u,u_bar,u_xi,"));
    assert!(eval.lines().nth(1).unwrap().starts_with("min_risk,0,0,"));
}

#[test]
fn solve_writes_documented_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("ok.conf");
    fs::write(&conf, SMALL).unwrap();
    let status = Command::new(BIN)
        .args(["solve", "--config", conf.to_str().unwrap(), "--out"])
        .arg(dir.path())
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let values = fs::read_to_string(dir.path().join("values_u_bar.csv")).unwrap();
    let mut lines = values.lines();
    assert_eq!(lines.next(), Some("t,level_1,level_2,value"));
    // Four epochs of 25 grid states.
    assert_eq!(lines.count(), 4 * 25);
    assert!(!values.contains('\r'));
    for line in values.lines().skip(1) {
        let v = line.rsplit(',').next().unwrap();
        let mantissa = v.split('e').next().unwrap().trim_start_matches('-');
        assert_eq!(mantissa.len(), 18, "{v}");
    }
    let policy = fs::read_to_string(dir.path().join("policy_min_risk.csv")).unwrap();
    assert!(policy.starts_with("t,level_1,level_2,alloc_1,alloc_2\n"));
}

#[test]
fn solve_matches_golden_snapshot() {
    let golden = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["solve", "--config"])
        .arg(golden.join("small.conf"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let mut names: Vec<_> = fs::read_dir(golden.join("small"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 6);
    for name in &names {
        let want = fs::read(golden.join("small").join(name)).unwrap();
        assert_eq!(
            fs::read(dir.path().join(name)).unwrap(),
            want,
            "{name:?} differs from the snapshot"
        );
    }

    // The snapshot itself agrees with the brute-force oracle.
    let cfg = ExperimentConfig::parse(&fs::read_to_string(golden.join("small.conf")).unwrap()).unwrap();
    let params = cfg.model_params().unwrap();
    let tables = urllc_risk::cli::csv::read_values(&golden.join("small"), params.state_space(), params.horizon)
        .unwrap()
        .unwrap();
    let mut brute = common::BruteForce::new(&params);
    for t in 0..=params.horizon {
        for (s, qos) in params.state_space().iter().enumerate() {
            let want = brute.optimum(t, &qos.levels);
            for (k, c) in Criterion::ALL.iter().enumerate() {
                assert!((tables.get(*c, t, s) - want[k]).abs() < 1e-9);
            }
        }
    }
}
