//! Sampled environment and Monte Carlo estimators.
//!
//! The environment draws arrivals and per-channel outcomes, tracks each
//! user's exact running loss rate as a rational, and exposes a grid view
//! to controllers. In [`GridMode::Chain`] the grid view follows the same
//! rounded recursion as the planner's model, so both describe the same
//! Markov chain; [`GridMode::Projected`] instead rounds the exact rate,
//! which is useful to measure what the quantization costs.

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{is_risk, next_qos_level, Action, ModelParams, QosState};
use crate::model::{sample_losses, Replication};
use crate::planning::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridMode {
    /// Round after every slot, exactly like the planning model.
    #[default]
    Chain,
    /// Round the exact running average.
    Projected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EnvOptions {
    pub replication: Replication,
    pub grid: GridMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub t: usize,
    /// Exact running loss rate of each user.
    pub exact_rho: Vec<Ratio<i128>>,
    /// What a controller observes.
    pub grid_view: QosState,
}

impl EnvState {
    /// Largest `|exact_rho - grid_view / q|` over users.
    pub fn quantization_gap(&self, resolution: u32) -> f64 {
        self.exact_rho
            .iter()
            .zip(&self.grid_view.levels)
            .map(|(exact, &level)| {
                let diff = exact - Ratio::new(i128::from(level), i128::from(resolution));
                (*diff.numer() as f64 / *diff.denom() as f64).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    /// Packets decoded in the slot, summed over users.
    pub reward: u32,
    /// Whether the new state is in the risk set.
    pub risk: bool,
    /// Risk reached or horizon exhausted.
    pub done: bool,
}

fn nearest_level(rho: &Ratio<i128>, resolution: u32) -> u32 {
    let (num, den) = (*rho.numer(), *rho.denom());
    ((2 * num * i128::from(resolution) + den) / (2 * den)) as u32
}

pub struct Environment<'a> {
    params: &'a ModelParams,
    options: EnvOptions,
    state: EnvState,
    done: bool,
}

impl<'a> Environment<'a> {
    pub fn new(params: &'a ModelParams, options: EnvOptions, s0: QosState) -> Result<Self> {
        params.validate()?;
        let mut env = Self {
            params,
            options,
            state: EnvState {
                t: 0,
                exact_rho: Vec::new(),
                grid_view: QosState::zeros(params.users),
            },
            done: false,
        };
        env.reset(0, s0)?;
        Ok(env)
    }

    /// Places the environment at epoch `t` in grid state `qos`, taking the
    /// grid rates as the exact ones.
    pub fn reset(&mut self, t: usize, qos: QosState) -> Result<()> {
        self.params.state_space().index(&qos)?;
        if t > self.params.horizon {
            return Err(Error::InvalidParameter(format!(
                "epoch {t} beyond horizon {}",
                self.params.horizon
            )));
        }
        let q = i128::from(self.params.resolution);
        self.state = EnvState {
            t,
            exact_rho: qos.levels.iter().map(|&l| Ratio::new(i128::from(l), q)).collect(),
            grid_view: qos,
        };
        self.done = t == self.params.horizon || is_risk(&self.state.grid_view, self.params);
        Ok(())
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    pub fn step<R: Rng + ?Sized>(&mut self, action: &Action, rng: &mut R) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Contract("step after the episode ended".into()));
        }
        action.check(self.params)?;
        let p = self.params;
        let t = self.state.t;
        let weight = i128::try_from(t).expect("epoch fits i128");
        let mut reward = 0;
        for (k, &l) in action.alloc.iter().enumerate() {
            let a = p.arrivals.sample(rng);
            let n = sample_losses(a, l, p.mu, self.options.replication, rng);
            reward += a - n;
            let sample = if a == 0 {
                Ratio::from_integer(0)
            } else {
                Ratio::new(i128::from(n), i128::from(a))
            };
            let exact = (self.state.exact_rho[k] * weight + sample) / (weight + 1);
            let level = match self.options.grid {
                GridMode::Chain => next_qos_level(self.state.grid_view.levels[k], t, n, a, p.resolution)?,
                GridMode::Projected => nearest_level(&exact, p.resolution),
            };
            self.state.exact_rho[k] = exact;
            self.state.grid_view.levels[k] = level;
        }
        self.state.t += 1;
        let risk = is_risk(&self.state.grid_view, p);
        self.done = risk || self.state.t == p.horizon;
        Ok(StepOutcome {
            reward,
            risk,
            done: self.done,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    RiskAbsorbed,
    HorizonEnd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub t: usize,
    pub state: QosState,
    pub action: Action,
    pub reward: u32,
    pub risk: bool,
    pub next: QosState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub termination: Termination,
    /// Largest exact-vs-grid rate gap seen along the way.
    pub max_quantization_gap: f64,
}

impl Trajectory {
    pub fn total_reward(&self) -> u64 {
        self.steps.iter().map(|s| u64::from(s.reward)).sum()
    }

    pub fn hit_risk(&self) -> bool {
        self.steps.iter().any(|s| s.risk)
    }

    /// Line-oriented dump: `t,level_1..level_K,alloc_1..alloc_K,reward,r_bar`.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let mut fields: Vec<String> = vec![s.t.to_string()];
            fields.extend(s.state.levels.iter().map(u32::to_string));
            fields.extend(s.action.alloc.iter().map(u32::to_string));
            fields.push(s.reward.to_string());
            fields.push(u8::from(s.risk).to_string());
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

/// Runs `policy` from `(t0, s0)` until absorption or the horizon.
pub fn rollout<R: Rng + ?Sized>(
    policy: &Policy,
    t0: usize,
    s0: &QosState,
    params: &ModelParams,
    options: EnvOptions,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut env = Environment::new(params, options, s0.clone())?;
    env.reset(t0, s0.clone())?;
    let mut steps = Vec::new();
    let mut gap = env.state().quantization_gap(params.resolution);
    while !env.is_done() {
        let t = env.state().t;
        let state = env.state().grid_view.clone();
        let action = policy.action(t, &state)?.clone();
        let outcome = env.step(&action, rng)?;
        gap = gap.max(env.state().quantization_gap(params.resolution));
        steps.push(Step {
            t,
            state,
            action,
            reward: outcome.reward,
            risk: outcome.risk,
            next: env.state().grid_view.clone(),
        });
    }
    let termination = if is_risk(&env.state().grid_view, params) {
        Termination::RiskAbsorbed
    } else {
        Termination::HorizonEnd
    };
    Ok(Trajectory {
        steps,
        termination,
        max_quantization_gap: gap,
    })
}

/// Per-episode seed: the master seed xor the episode index, passed through
/// the SplitMix64 finalizer.
pub fn episode_seed(master: u64, episode: u64) -> u64 {
    let mut z = (master ^ episode).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A sample mean with its 95% normal-approximation half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloReport {
    pub episodes: u64,
    /// Fraction of episodes that entered the risk set.
    pub risk: Estimate,
    /// Mean decoded packets per episode.
    pub value: Estimate,
    pub max_quantization_gap: f64,
}

const Z95: f64 = 1.959_963_984_540_054;

/// Runs `episodes` independent rollouts from `(t0, s0)`, episode `i` seeded
/// with [`episode_seed`]`(seed, i)`. Results do not depend on thread count.
pub fn monte_carlo(
    policy: &Policy,
    t0: usize,
    s0: &QosState,
    params: &ModelParams,
    options: EnvOptions,
    episodes: u64,
    seed: u64,
) -> Result<MonteCarloReport> {
    if episodes == 0 {
        return Err(Error::InvalidParameter("need at least one episode".into()));
    }
    let per_episode = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, i));
            rollout(policy, t0, s0, params, options, &mut rng)
                .map(|tr| (u64::from(tr.hit_risk()), tr.total_reward(), tr.max_quantization_gap))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut hits, mut sum, mut sum_sq, mut gap) = (0u64, 0u128, 0u128, 0.0f64);
    for (h, r, g) in per_episode {
        hits += h;
        sum += u128::from(r);
        sum_sq += u128::from(r) * u128::from(r);
        gap = gap.max(g);
    }
    let n = episodes as f64;
    let p = hits as f64 / n;
    let mean = sum as f64 / n;
    let var = if episodes > 1 {
        ((sum_sq as f64 - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(MonteCarloReport {
        episodes,
        risk: Estimate {
            mean: p,
            half_width: Z95 * (p * (1.0 - p) / n).sqrt(),
        },
        value: Estimate {
            mean,
            half_width: Z95 * (var / n).sqrt(),
        },
        max_quantization_gap: gap,
    })
}

/// Monte Carlo estimate of the probability of ever entering the risk set.
pub fn estimate_risk_probability(
    policy: &Policy,
    s0: &QosState,
    params: &ModelParams,
    episodes: u64,
    seed: u64,
) -> Result<Estimate> {
    Ok(monte_carlo(policy, 0, s0, params, EnvOptions::default(), episodes, seed)?.risk)
}

/// Monte Carlo estimate of the expected decoded packets over the horizon.
pub fn estimate_value(
    policy: &Policy,
    s0: &QosState,
    params: &ModelParams,
    episodes: u64,
    seed: u64,
) -> Result<Estimate> {
    Ok(monte_carlo(policy, 0, s0, params, EnvOptions::default(), episodes, seed)?.value)
}
