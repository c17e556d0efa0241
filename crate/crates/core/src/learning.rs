//! Tabular Q-learning of the three criteria from one shared trajectory.
//!
//! Every observed transition updates `q` (reward), `q_bar` (risk signal)
//! and `q_xi` (`xi * r - r_bar`) with the same step size
//! `1 / (1 + visits)^gamma`. Bootstrap terms vanish when the episode ends
//! (risk entered or last epoch reached); the learner then restarts at
//! epoch 0 in a uniformly drawn non-risk state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{Action, ModelParams, QosState, RiskWeight, StateSpace, TransitionModel};
use crate::planning::{Criterion, Policy, ValueTables};
use crate::sim::{EnvOptions, Environment};

/// `1 / (1 + visits)^gamma`.
pub fn learning_rate(visits: u64, gamma: f64) -> f64 {
    (1.0 + visits as f64).powf(-gamma)
}

/// What the learner is told about the slot reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardSignal {
    /// The number of packets actually decoded.
    #[default]
    Realized,
    /// The model's expected decoded packets for the action.
    Expected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningConfig {
    /// Exploration probability at the first step.
    pub epsilon: f64,
    /// When set, exploration decays linearly to this value at `max_steps`.
    pub epsilon_final: Option<f64>,
    /// Step-size exponent, in `[0.5, 1]`.
    pub gamma_lr: f64,
    pub max_steps: u64,
    /// Steps between convergence checks (and diagnostic records).
    pub convergence_window: u64,
    /// Stop once `q_xi` moves less than this (sup norm) over a window.
    pub convergence_tol: f64,
    pub seed: u64,
    /// Which table drives the greedy part of exploration.
    pub behavior: Criterion,
    pub reward_signal: RewardSignal,
    pub env: EnvOptions,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            epsilon_final: None,
            gamma_lr: 0.7,
            max_steps: 1_000_000,
            convergence_window: 10_000,
            convergence_tol: 1e-4,
            seed: 0,
            behavior: Criterion::Weighted,
            reward_signal: RewardSignal::Realized,
            env: EnvOptions::default(),
        }
    }
}

impl LearningConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.epsilon) {
            out.push(format!("epsilon = {} outside [0, 1]", self.epsilon));
        }
        if let Some(e) = self.epsilon_final {
            if !(0.0..=1.0).contains(&e) {
                out.push(format!("epsilon_final = {e} outside [0, 1]"));
            }
        }
        if !(0.5..=1.0).contains(&self.gamma_lr) {
            out.push(format!("gamma = {} outside [0.5, 1]", self.gamma_lr));
        }
        if self.max_steps == 0 {
            out.push("max_steps must be positive".into());
        }
        if self.convergence_window == 0 {
            out.push("convergence window must be positive".into());
        }
        if self.convergence_tol.is_nan() || self.convergence_tol <= 0.0 {
            out.push(format!(
                "convergence tolerance {} must be positive",
                self.convergence_tol
            ));
        }
        out
    }

    /// Non-fatal remarks about the step-size schedule.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.gamma_lr == 0.5 {
            out.push("gamma = 0.5: squared step sizes are not summable, convergence is not guaranteed".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(v.join("; ")))
        }
    }

    fn epsilon_at(&self, step: u64) -> f64 {
        match self.epsilon_final {
            None => self.epsilon,
            Some(end) => {
                let frac = (step as f64 / self.max_steps as f64).min(1.0);
                self.epsilon + (end - self.epsilon) * frac
            }
        }
    }
}

/// `q`, `q_bar`, `q_xi` and visit counts indexed by `(t, state, action)`
/// for `t < horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTables {
    space: StateSpace,
    horizon: usize,
    n_actions: usize,
    pub q: Vec<f64>,
    pub q_bar: Vec<f64>,
    pub q_xi: Vec<f64>,
    pub visits: Vec<u64>,
}

impl QTables {
    pub fn new(space: StateSpace, horizon: usize, n_actions: usize) -> Self {
        let n = horizon * space.len() * n_actions;
        Self {
            space,
            horizon,
            n_actions,
            q: vec![0.0; n],
            q_bar: vec![0.0; n],
            q_xi: vec![0.0; n],
            visits: vec![0; n],
        }
    }

    pub fn space(&self) -> StateSpace {
        self.space
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Offset of the first action of `(t, s)`.
    pub fn offset(&self, t: usize, s: usize) -> usize {
        (t * self.space.len() + s) * self.n_actions
    }

    pub fn table(&self, criterion: Criterion) -> &[f64] {
        match criterion {
            Criterion::Reward => &self.q,
            Criterion::Risk => &self.q_bar,
            Criterion::Weighted => &self.q_xi,
        }
    }

    pub fn row(&self, criterion: Criterion, t: usize, s: usize) -> &[f64] {
        let o = self.offset(t, s);
        &self.table(criterion)[o..o + self.n_actions]
    }

    /// Greedy action under `criterion`; lowest index on ties.
    pub fn greedy(&self, criterion: Criterion, t: usize, s: usize) -> usize {
        let row = self.row(criterion, t, s);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate().skip(1) {
            let better = if criterion.minimizes() {
                v < row[best]
            } else {
                v > row[best]
            };
            if better {
                best = i;
            }
        }
        best
    }

    pub fn greedy_value(&self, criterion: Criterion, t: usize, s: usize) -> f64 {
        self.row(criterion, t, s)[self.greedy(criterion, t, s)]
    }

    /// Whether every action of `(t, s)` has been tried at least once.
    pub fn fully_visited(&self, t: usize, s: usize) -> bool {
        let o = self.offset(t, s);
        self.visits[o..o + self.n_actions].iter().all(|&v| v > 0)
    }

    /// Greedy full-table policy for `criterion`.
    pub fn greedy_policy(&self, criterion: Criterion, actions: &[Action]) -> Policy {
        let mut policy = Policy::empty(self.space, self.horizon, actions.to_vec());
        for t in 0..self.horizon {
            for s in 0..self.space.len() {
                policy.set_index(t, s, self.greedy(criterion, t, s));
            }
        }
        policy
    }
}

/// ε-greedy choice; `epsilon` is the probability of a uniform action.
pub fn select_action<R: Rng + ?Sized>(
    tables: &QTables,
    t: usize,
    s: usize,
    epsilon: f64,
    criterion: Criterion,
    rng: &mut R,
) -> usize {
    if epsilon > 0.0 && rng.gen_bool(epsilon.min(1.0)) {
        rng.gen_range(0..tables.n_actions)
    } else {
        tables.greedy(criterion, t, s)
    }
}

/// One observed transition `(t, s) --action--> next`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub t: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub risk: bool,
    /// Successor state index; ignored when `done`.
    pub next: usize,
    pub done: bool,
}

/// Applies the three updates with the pair's current step size, then
/// counts the visit.
pub fn q_update(tables: &mut QTables, tr: &Transition, xi: RiskWeight, gamma_lr: f64) {
    let i = tables.offset(tr.t, tr.state) + tr.action;
    let alpha = learning_rate(tables.visits[i], gamma_lr);
    let (boot, boot_bar, boot_xi) = if tr.done {
        (0.0, 0.0, 0.0)
    } else {
        (
            tables.greedy_value(Criterion::Reward, tr.t + 1, tr.next),
            tables.greedy_value(Criterion::Risk, tr.t + 1, tr.next),
            tables.greedy_value(Criterion::Weighted, tr.t + 1, tr.next),
        )
    };
    let r_bar = if tr.risk { 1.0 } else { 0.0 };
    let weighted = match xi {
        RiskWeight::Finite(xi) => xi * tr.reward - r_bar,
        RiskWeight::Infinite => tr.reward,
    };
    tables.q[i] += alpha * (tr.reward + boot - tables.q[i]);
    tables.q_bar[i] += alpha * (r_bar + boot_bar - tables.q_bar[i]);
    tables.q_xi[i] += alpha * (weighted + boot_xi - tables.q_xi[i]);
    tables.visits[i] += 1;
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub step: u64,
    /// Sup-norm change of `q`, `q_bar`, `q_xi` since the previous record.
    pub delta: [f64; 3],
    /// Sup-norm distance of the greedy values to the planner's tables over
    /// fully visited non-risk states, when an oracle was supplied.
    pub oracle_distance: Option<[f64; 3]>,
}

#[derive(Debug, Clone)]
pub struct LearningOutcome {
    pub tables: QTables,
    pub max_value: Policy,
    pub min_risk: Policy,
    pub weighted: Policy,
    pub diagnostics: Vec<Diagnostic>,
    pub steps: u64,
    pub converged: bool,
}

impl LearningOutcome {
    pub fn policy(&self, criterion: Criterion) -> &Policy {
        match criterion {
            Criterion::Reward => &self.max_value,
            Criterion::Risk => &self.min_risk,
            Criterion::Weighted => &self.weighted,
        }
    }
}

fn sup_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sup-norm distance between learned greedy values and planned values over
/// non-risk states whose actions have all been tried.
pub fn oracle_distance(tables: &QTables, model: &TransitionModel, oracle: &ValueTables) -> [f64; 3] {
    let mut out = [0.0f64; 3];
    for t in 0..tables.horizon() {
        for s in 0..tables.space().len() {
            if model.is_risk(s) || !tables.fully_visited(t, s) {
                continue;
            }
            for (k, c) in Criterion::ALL.iter().enumerate() {
                let d = (tables.greedy_value(*c, t, s) - oracle.get(*c, t, s)).abs();
                out[k] = out[k].max(d);
            }
        }
    }
    out
}

/// Runs Q-learning from `start` (epoch 0) against the sampled environment.
pub fn run_q_learning(
    params: &ModelParams,
    config: &LearningConfig,
    start: &QosState,
    oracle: Option<&ValueTables>,
) -> Result<LearningOutcome> {
    config.validate()?;
    let model = TransitionModel::new(params)?;
    let space = model.space();
    let actions = model.actions().to_vec();
    let safe: Vec<usize> = (0..space.len()).filter(|&s| !model.is_risk(s)).collect();
    if safe.is_empty() {
        return Err(Error::InvalidParameter("every grid state is a risk state".into()));
    }
    if let Some(o) = oracle {
        if o.space() != space || o.horizon() != params.horizon {
            return Err(Error::InvalidParameter("oracle tables do not match the model".into()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut env = Environment::new(params, config.env, start.clone())?;
    if env.is_done() {
        let s = safe[rng.gen_range(0..safe.len())];
        env.reset(0, space.state(s))?;
    }
    let mut tables = QTables::new(space, params.horizon, actions.len());
    let mut snapshot = [tables.q.clone(), tables.q_bar.clone(), tables.q_xi.clone()];
    let mut diagnostics = Vec::new();
    let mut converged = false;
    let mut step = 0;

    while step < config.max_steps {
        let t = env.state().t;
        let s = space.index(&env.state().grid_view)?;
        let a = select_action(&tables, t, s, config.epsilon_at(step), config.behavior, &mut rng);
        let out = env.step(&actions[a], &mut rng)?;
        let reward = match config.reward_signal {
            RewardSignal::Realized => f64::from(out.reward),
            RewardSignal::Expected => model.reward(a),
        };
        let next = space.index(&env.state().grid_view)?;
        q_update(
            &mut tables,
            &Transition {
                t,
                state: s,
                action: a,
                reward,
                risk: out.risk,
                next,
                done: out.done,
            },
            params.xi,
            config.gamma_lr,
        );
        step += 1;
        if out.done {
            let s = safe[rng.gen_range(0..safe.len())];
            env.reset(0, space.state(s))?;
        }
        if step % config.convergence_window == 0 {
            let delta = [
                sup_change(&tables.q, &snapshot[0]),
                sup_change(&tables.q_bar, &snapshot[1]),
                sup_change(&tables.q_xi, &snapshot[2]),
            ];
            diagnostics.push(Diagnostic {
                step,
                delta,
                oracle_distance: oracle.map(|o| oracle_distance(&tables, &model, o)),
            });
            snapshot = [tables.q.clone(), tables.q_bar.clone(), tables.q_xi.clone()];
            if delta[2] < config.convergence_tol {
                converged = true;
                break;
            }
        }
    }

    Ok(LearningOutcome {
        max_value: tables.greedy_policy(Criterion::Reward, &actions),
        min_risk: tables.greedy_policy(Criterion::Risk, &actions),
        weighted: tables.greedy_policy(Criterion::Weighted, &actions),
        tables,
        diagnostics,
        steps: step,
        converged,
    })
}
