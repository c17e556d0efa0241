//! Flat `section.key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys,
//! duplicate keys and unparsable values are reported together, one line
//! per problem. Environment variables `APP_<SECTION>_<KEY>` override file
//! values, e.g. `APP_MODEL_RHO_MAX=0.5` sets `model.rho_max`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::learning::{LearningConfig, RewardSignal};
use crate::mdp::{Action, ModelParams, QosState, RiskWeight};
use crate::model::{ArrivalDist, Replication};
use crate::planning::Criterion;
use crate::sim::{EnvOptions, GridMode};

/// Every key the parser accepts, in serialization order.
pub const KEYS: &[&str] = &[
    "model.users",
    "model.channels",
    "model.horizon",
    "model.mu",
    "model.lambda",
    "model.a_max",
    "model.arrival_probs",
    "model.rho_max",
    "model.xi",
    "model.w",
    "model.resolution",
    "model.replication",
    "learn.epsilon",
    "learn.epsilon_final",
    "learn.gamma",
    "learn.max_steps",
    "learn.window",
    "learn.tol",
    "learn.behavior",
    "learn.reward",
    "run.episodes",
    "run.seed",
    "run.initial_state",
    "run.grid",
    "run.policy",
    "run.fixed_action",
    "run.trajectories",
];

/// Policy selected by `run.policy` for the `evaluate` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyChoice {
    Fixed,
    MaxValue,
    MinRisk,
    Weighted,
}

impl PolicyChoice {
    pub const ALL: [PolicyChoice; 4] = [
        PolicyChoice::Fixed,
        PolicyChoice::MaxValue,
        PolicyChoice::MinRisk,
        PolicyChoice::Weighted,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyChoice::Fixed => "fixed",
            PolicyChoice::MaxValue => "max_value",
            PolicyChoice::MinRisk => "min_risk",
            PolicyChoice::Weighted => "weighted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub users: usize,
    pub channels: u32,
    pub horizon: usize,
    pub mu: f64,
    pub lambda: f64,
    pub a_max: u32,
    /// Explicit arrival pmf; replaces the truncated Poisson when set.
    pub arrival_probs: Option<Vec<f64>>,
    pub rho_max: f64,
    pub xi: RiskWeight,
    pub w: f64,
    pub resolution: u32,
    pub replication: Replication,

    pub epsilon: f64,
    pub epsilon_final: Option<f64>,
    pub gamma_lr: f64,
    pub max_steps: u64,
    pub window: u64,
    pub tol: f64,
    pub behavior: Criterion,
    pub reward_signal: RewardSignal,

    pub episodes: u64,
    pub seed: u64,
    /// Grid levels of the start state; defaults to rates `(0.3, 0, ...)`.
    pub initial_state: Option<Vec<u32>>,
    pub grid: GridMode,
    pub policy: PolicyChoice,
    pub fixed_action: Vec<u32>,
    /// Number of trajectories `evaluate` dumps (0 = none).
    pub trajectories: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let m = ModelParams::default();
        let l = LearningConfig::default();
        Self {
            users: m.users,
            channels: m.channels,
            horizon: m.horizon,
            mu: m.mu,
            lambda: 3.0,
            a_max: 6,
            arrival_probs: None,
            rho_max: m.rho_max,
            xi: m.xi,
            w: m.w,
            resolution: m.resolution,
            replication: Replication::Independent,
            epsilon: l.epsilon,
            epsilon_final: l.epsilon_final,
            gamma_lr: l.gamma_lr,
            max_steps: l.max_steps,
            window: l.convergence_window,
            tol: l.convergence_tol,
            behavior: l.behavior,
            reward_signal: l.reward_signal,
            episodes: 100_000,
            seed: 0,
            initial_state: None,
            grid: GridMode::Chain,
            policy: PolicyChoice::Fixed,
            fixed_action: vec![2, 3],
            trajectories: 0,
        }
    }
}

/// All problems found while reading a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub violations: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "config: {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

fn parse_list<T: FromStr>(value: &str) -> Option<Vec<T>> {
    value.split(',').map(|x| x.trim().parse().ok()).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Maps `APP_MODEL_RHO_MAX` to `model.rho_max`; `None` for other names.
pub fn env_key(var: &str) -> Option<String> {
    let rest = var.strip_prefix("APP_")?.to_ascii_lowercase();
    let (section, key) = rest.split_once('_')?;
    Some(format!("{section}.{key}"))
}

impl ExperimentConfig {
    /// Parses configuration text, then applies `overrides` (already in
    /// `section.key` form) on top.
    pub fn parse_with(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut errors = Vec::new();
        let mut pairs: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                None => errors.push(format!("line {}: expected `key = value`", lineno + 1)),
                Some((k, v)) => {
                    let k = k.trim().to_string();
                    if pairs.insert(k.clone(), v.trim().to_string()).is_some() {
                        errors.push(format!("line {}: duplicate key `{k}`", lineno + 1));
                    }
                }
            }
        }
        for (k, v) in overrides {
            pairs.insert(k.clone(), v.clone());
        }
        let mut cfg = Self::default();
        for (k, v) in &pairs {
            if let Err(e) = cfg.set(k, v) {
                errors.push(e);
            }
        }
        errors.extend(cfg.violations());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError { violations: errors })
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::parse_with(text, &[])
    }

    /// Collects `APP_*` overrides from an environment listing.
    pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| env_key(&k).map(|key| (key, v)))
            .collect();
        out.sort();
        out
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let bad = || format!("`{key}`: cannot parse `{value}`");
        fn num<T: FromStr>(value: &str, bad: impl Fn() -> String) -> Result<T, String> {
            value.parse().map_err(|_| bad())
        }
        match key {
            "model.users" => self.users = num(value, bad)?,
            "model.channels" => self.channels = num(value, bad)?,
            "model.horizon" => self.horizon = num(value, bad)?,
            "model.mu" => self.mu = num(value, bad)?,
            "model.lambda" => self.lambda = num(value, bad)?,
            "model.a_max" => self.a_max = num(value, bad)?,
            "model.arrival_probs" => {
                self.arrival_probs = if value.is_empty() {
                    None
                } else {
                    Some(parse_list(value).ok_or_else(bad)?)
                }
            }
            "model.rho_max" => self.rho_max = num(value, bad)?,
            "model.xi" => {
                self.xi = match value {
                    "inf" | "infinite" => RiskWeight::Infinite,
                    _ => RiskWeight::Finite(num(value, bad)?),
                }
            }
            "model.w" => self.w = num(value, bad)?,
            "model.resolution" => self.resolution = num(value, bad)?,
            "model.replication" => {
                self.replication = match value {
                    "independent" => Replication::Independent,
                    "subset" => Replication::UniformSubset,
                    _ => return Err(bad()),
                }
            }
            "learn.epsilon" => self.epsilon = num(value, bad)?,
            "learn.epsilon_final" => self.epsilon_final = if value.is_empty() { None } else { Some(num(value, bad)?) },
            "learn.gamma" => self.gamma_lr = num(value, bad)?,
            "learn.max_steps" => self.max_steps = num(value, bad)?,
            "learn.window" => self.window = num(value, bad)?,
            "learn.tol" => self.tol = num(value, bad)?,
            "learn.behavior" => {
                self.behavior = match value {
                    "reward" => Criterion::Reward,
                    "risk" => Criterion::Risk,
                    "weighted" => Criterion::Weighted,
                    _ => return Err(bad()),
                }
            }
            "learn.reward" => {
                self.reward_signal = match value {
                    "realized" => RewardSignal::Realized,
                    "expected" => RewardSignal::Expected,
                    _ => return Err(bad()),
                }
            }
            "run.episodes" => self.episodes = num(value, bad)?,
            "run.seed" => self.seed = num(value, bad)?,
            "run.initial_state" => {
                self.initial_state = if value.is_empty() {
                    None
                } else {
                    Some(parse_list(value).ok_or_else(bad)?)
                }
            }
            "run.grid" => {
                self.grid = match value {
                    "chain" => GridMode::Chain,
                    "projected" => GridMode::Projected,
                    _ => return Err(bad()),
                }
            }
            "run.policy" => {
                self.policy = PolicyChoice::ALL
                    .into_iter()
                    .find(|p| p.name() == value)
                    .ok_or_else(bad)?
            }
            "run.fixed_action" => self.fixed_action = parse_list(value).ok_or_else(bad)?,
            "run.trajectories" => self.trajectories = num(value, bad)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    fn arrivals(&self) -> crate::Result<ArrivalDist> {
        match &self.arrival_probs {
            Some(p) => ArrivalDist::from_probs(p.clone()),
            None => ArrivalDist::truncated_poisson(self.lambda, self.a_max),
        }
    }

    /// Every invariant the assembled configuration breaks.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self.arrivals() {
            Ok(arrivals) => {
                let params = ModelParams {
                    arrivals,
                    ..self.model_params_unchecked()
                };
                out.extend(params.violations());
            }
            Err(e) => out.push(e.to_string()),
        }
        out.extend(self.learning().violations());
        if self.episodes == 0 {
            out.push("run.episodes must be positive".into());
        }
        if let Some(levels) = &self.initial_state {
            if levels.len() != self.users {
                out.push(format!("run.initial_state needs {} levels", self.users));
            }
            if levels.iter().any(|&l| l > self.resolution) {
                out.push(format!("run.initial_state levels must not exceed {}", self.resolution));
            }
        }
        if self.fixed_action.len() != self.users || self.fixed_action.iter().sum::<u32>() != self.channels {
            out.push(format!(
                "run.fixed_action must give {} users exactly {} channels",
                self.users, self.channels
            ));
        }
        out
    }

    fn model_params_unchecked(&self) -> ModelParams {
        ModelParams {
            users: self.users,
            channels: self.channels,
            horizon: self.horizon,
            mu: self.mu,
            arrivals: ArrivalDist::point_mass(0),
            rho_max: self.rho_max,
            xi: self.xi,
            w: self.w,
            resolution: self.resolution,
        }
    }

    pub fn model_params(&self) -> crate::Result<ModelParams> {
        let params = ModelParams {
            arrivals: self.arrivals()?,
            ..self.model_params_unchecked()
        };
        params.validate()?;
        Ok(params)
    }

    pub fn env_options(&self) -> EnvOptions {
        EnvOptions {
            replication: self.replication,
            grid: self.grid,
        }
    }

    pub fn learning(&self) -> LearningConfig {
        LearningConfig {
            epsilon: self.epsilon,
            epsilon_final: self.epsilon_final,
            gamma_lr: self.gamma_lr,
            max_steps: self.max_steps,
            convergence_window: self.window,
            convergence_tol: self.tol,
            seed: self.seed,
            behavior: self.behavior,
            reward_signal: self.reward_signal,
            env: self.env_options(),
        }
    }

    pub fn start_state(&self) -> QosState {
        match &self.initial_state {
            Some(levels) => QosState::new(levels.clone()),
            None => {
                let mut rates = vec![0.0; self.users];
                rates[0] = 0.3;
                QosState::from_rates(&rates, self.resolution)
            }
        }
    }

    pub fn fixed_action(&self) -> Action {
        Action::new(self.fixed_action.clone())
    }

    /// Canonical text form; parsing it yields an equal configuration.
    pub fn to_text(&self) -> String {
        let behavior = self.behavior.name();
        let mut lines = vec![
            format!("model.users = {}", self.users),
            format!("model.channels = {}", self.channels),
            format!("model.horizon = {}", self.horizon),
            format!("model.mu = {}", self.mu),
            format!("model.lambda = {}", self.lambda),
            format!("model.a_max = {}", self.a_max),
            format!(
                "model.arrival_probs = {}",
                self.arrival_probs.as_deref().map(join).unwrap_or_default()
            ),
            format!("model.rho_max = {}", self.rho_max),
            format!("model.xi = {}", self.xi),
            format!("model.w = {}", self.w),
            format!("model.resolution = {}", self.resolution),
            format!(
                "model.replication = {}",
                match self.replication {
                    Replication::Independent => "independent",
                    Replication::UniformSubset => "subset",
                }
            ),
            format!("learn.epsilon = {}", self.epsilon),
            format!(
                "learn.epsilon_final = {}",
                self.epsilon_final.map(|e| e.to_string()).unwrap_or_default()
            ),
            format!("learn.gamma = {}", self.gamma_lr),
            format!("learn.max_steps = {}", self.max_steps),
            format!("learn.window = {}", self.window),
            format!("learn.tol = {}", self.tol),
            format!("learn.behavior = {behavior}"),
            format!(
                "learn.reward = {}",
                match self.reward_signal {
                    RewardSignal::Realized => "realized",
                    RewardSignal::Expected => "expected",
                }
            ),
            format!("run.episodes = {}", self.episodes),
            format!("run.seed = {}", self.seed),
            format!(
                "run.initial_state = {}",
                self.initial_state.as_deref().map(join).unwrap_or_default()
            ),
            format!(
                "run.grid = {}",
                match self.grid {
                    GridMode::Chain => "chain",
                    GridMode::Projected => "projected",
                }
            ),
            format!("run.policy = {}", self.policy.name()),
            format!("run.fixed_action = {}", join(&self.fixed_action)),
            format!("run.trajectories = {}", self.trajectories),
        ];
        lines.push(String::new());
        lines.join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_text() {
        let cfg = ExperimentConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.start_state().levels, vec![6, 0]);
        let p = cfg.model_params().unwrap();
        assert_eq!(p, ModelParams::default());
    }

    #[test]
    fn every_key_is_serialized() {
        let text = ExperimentConfig::default().to_text();
        let keys: Vec<&str> = text
            .lines()
            .filter_map(|l| l.split_once('=').map(|(k, _)| k.trim()))
            .collect();
        assert_eq!(keys, KEYS);
    }

    #[test]
    fn problems_are_reported_together() {
        let err =
            ExperimentConfig::parse("model.mu = 2\nmodel.bogus = 1\nlearn.gamma = x\nmodel.mu = 0.5\nnot a pair\n")
                .unwrap_err();
        assert_eq!(err.violations.len(), 4, "{err}");
        assert!(err.to_string().lines().count() == 4);
    }

    #[test]
    fn environment_overrides_win() {
        let vars = vec![
            ("APP_MODEL_RHO_MAX".to_string(), "0.4".to_string()),
            ("HOME".to_string(), "/root".to_string()),
            ("APP_RUN_SEED".to_string(), "9".to_string()),
        ];
        let overrides = ExperimentConfig::env_overrides(vars);
        let cfg = ExperimentConfig::parse_with("model.rho_max = 0.3\n", &overrides).unwrap();
        assert_eq!(cfg.rho_max, 0.4);
        assert_eq!(cfg.seed, 9);
        assert_eq!(env_key("APP_LEARN_MAX_STEPS").as_deref(), Some("learn.max_steps"));
        assert_eq!(env_key("PATH"), None);
    }

    #[test]
    fn inconsistent_action_and_state_are_rejected() {
        let err = ExperimentConfig::parse("run.fixed_action = 1,1\nrun.initial_state = 30,0\n").unwrap_err();
        assert_eq!(err.violations.len(), 2);
    }
}
