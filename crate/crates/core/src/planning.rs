//! Backward-induction value iteration for the three criteria: expected
//! decoded packets `u`, risk-visit probability `u_bar`, and the weighted
//! value `u_xi` whose per-step reward is `xi * r - r_bar`.
//!
//! All tables have `horizon + 1` rows; row `horizon` is zero. Risk states
//! are absorbing, so their rows are zero as well and the risk signal is
//! charged once, on the transition that enters the risk set.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{Action, ModelParams, QosState, RiskWeight, StateSpace, TransitionModel};

/// Two values closer than this (relative to magnitude) count as a tie.
const TIE_TOL: f64 = 1e-12;

fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Deterministic Markov policy: one action per `(t, state)` for
/// `t < horizon`, possibly undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    space: StateSpace,
    horizon: usize,
    actions: Vec<Action>,
    choice: Vec<Option<u32>>,
}

impl Policy {
    /// A policy with no action anywhere.
    pub fn empty(space: StateSpace, horizon: usize, actions: Vec<Action>) -> Self {
        Self {
            space,
            horizon,
            actions,
            choice: vec![None; horizon * space.len()],
        }
    }

    /// Plays `action` in every state at every epoch.
    pub fn constant(action: &Action, params: &ModelParams) -> Result<Self> {
        action.check(params)?;
        let actions = crate::mdp::enumerate_actions(params.users, params.channels);
        let idx = actions
            .iter()
            .position(|a| a == action)
            .expect("checked actions are enumerated");
        let space = params.state_space();
        let mut policy = Self::empty(space, params.horizon, actions);
        policy.choice.iter_mut().for_each(|c| *c = Some(idx as u32));
        Ok(policy)
    }

    pub fn space(&self) -> StateSpace {
        self.space
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn action_index(&self, t: usize, s: usize) -> Option<usize> {
        if t >= self.horizon {
            return None;
        }
        self.choice[t * self.space.len() + s].map(|a| a as usize)
    }

    pub fn set_index(&mut self, t: usize, s: usize, a: usize) {
        assert!(a < self.actions.len());
        self.choice[t * self.space.len() + s] = Some(a as u32);
    }

    pub fn set(&mut self, t: usize, qos: &QosState, action: &Action) -> Result<()> {
        if t >= self.horizon {
            return Err(Error::InvalidParameter(format!(
                "epoch {t} beyond horizon {}",
                self.horizon
            )));
        }
        let s = self.space.index(qos)?;
        let a = self
            .actions
            .iter()
            .position(|x| x == action)
            .ok_or_else(|| Error::InvalidParameter(format!("action {action} is not feasible")))?;
        self.set_index(t, s, a);
        Ok(())
    }

    pub fn action(&self, t: usize, qos: &QosState) -> Result<&Action> {
        let s = self.space.index(qos)?;
        self.action_index(t, s)
            .map(|a| &self.actions[a])
            .ok_or_else(|| Error::IncompletePolicy {
                t,
                levels: qos.levels.clone(),
            })
    }
}

/// `u`, `u_bar` and `u_xi` indexed by `(t, state)`, `t` in `0..=horizon`.
///
/// For a partial policy, entries at states where it has no action are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    space: StateSpace,
    horizon: usize,
    u: Vec<f64>,
    u_bar: Vec<f64>,
    u_xi: Vec<f64>,
}

/// Which of the three tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// Expected decoded packets, maximized.
    Reward,
    /// Risk-visit probability, minimized.
    Risk,
    /// `xi * reward - risk`, maximized.
    Weighted,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Reward, Criterion::Risk, Criterion::Weighted];

    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Reward => "reward",
            Criterion::Risk => "risk",
            Criterion::Weighted => "weighted",
        }
    }

    pub fn minimizes(&self) -> bool {
        matches!(self, Criterion::Risk)
    }
}

impl ValueTables {
    fn zeros(space: StateSpace, horizon: usize) -> Self {
        let n = (horizon + 1) * space.len();
        Self {
            space,
            horizon,
            u: vec![0.0; n],
            u_bar: vec![0.0; n],
            u_xi: vec![0.0; n],
        }
    }

    /// Assembles tables from row-major `(t, state)` vectors of length
    /// `(horizon + 1) * space.len()`.
    pub fn from_raw(space: StateSpace, horizon: usize, u: Vec<f64>, u_bar: Vec<f64>, u_xi: Vec<f64>) -> Result<Self> {
        let n = (horizon + 1) * space.len();
        if u.len() != n || u_bar.len() != n || u_xi.len() != n {
            return Err(Error::InvalidParameter(format!("value tables need {n} entries each")));
        }
        Ok(Self {
            space,
            horizon,
            u,
            u_bar,
            u_xi,
        })
    }

    pub fn space(&self) -> StateSpace {
        self.space
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn table(&self, criterion: Criterion) -> &[f64] {
        match criterion {
            Criterion::Reward => &self.u,
            Criterion::Risk => &self.u_bar,
            Criterion::Weighted => &self.u_xi,
        }
    }

    pub fn get(&self, criterion: Criterion, t: usize, s: usize) -> f64 {
        self.table(criterion)[t * self.space.len() + s]
    }

    pub fn u(&self, t: usize, qos: &QosState) -> Result<f64> {
        Ok(self.get(Criterion::Reward, t, self.space.index(qos)?))
    }

    pub fn u_bar(&self, t: usize, qos: &QosState) -> Result<f64> {
        Ok(self.get(Criterion::Risk, t, self.space.index(qos)?))
    }

    pub fn u_xi(&self, t: usize, qos: &QosState) -> Result<f64> {
        Ok(self.get(Criterion::Weighted, t, self.space.index(qos)?))
    }
}

/// Optimal tables plus the greedy policy of each criterion.
#[derive(Debug, Clone)]
pub struct Solution {
    pub values: ValueTables,
    /// Maximizes expected decoded packets.
    pub max_value: Policy,
    /// Minimizes the risk-visit probability.
    pub min_risk: Policy,
    /// Maximizes the weighted criterion.
    pub weighted: Policy,
}

impl Solution {
    pub fn policy(&self, criterion: Criterion) -> &Policy {
        match criterion {
            Criterion::Reward => &self.max_value,
            Criterion::Risk => &self.min_risk,
            Criterion::Weighted => &self.weighted,
        }
    }
}

/// One-step lookahead of all three criteria for `(t, s, a)` against the
/// `t + 1` rows.
#[derive(Debug, Clone, Copy)]
struct Backup {
    u: f64,
    u_bar: f64,
    u_xi: f64,
}

fn backup(
    model: &TransitionModel,
    xi: RiskWeight,
    t: usize,
    s: usize,
    a: usize,
    next: &ValueTables,
) -> std::result::Result<Backup, usize> {
    let base = (t + 1) * model.space().len();
    let (mut cont, mut risk_mass, mut cont_bar, mut cont_xi) = (0.0, 0.0, 0.0, 0.0);
    let mut missing = None;
    model.for_each_successor(t, s, a, |j, p| {
        if model.is_risk(j) {
            risk_mass += p;
        } else {
            let (u, ub, ux) = (next.u[base + j], next.u_bar[base + j], next.u_xi[base + j]);
            if u.is_nan() && missing.is_none() {
                missing = Some(j);
            }
            cont += p * u;
            cont_bar += p * ub;
            cont_xi += p * ux;
        }
    });
    if let Some(j) = missing {
        return Err(j);
    }
    let r = model.reward(a);
    let weighted_step = match xi {
        RiskWeight::Finite(xi) => xi * r - risk_mass,
        RiskWeight::Infinite => r,
    };
    Ok(Backup {
        u: r + cont,
        u_bar: risk_mass + cont_bar,
        u_xi: weighted_step + cont_xi,
    })
}

/// Index of the best value, first one on ties.
fn best_index(values: impl Iterator<Item = f64>, minimize: bool) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        match best {
            None => best = Some((i, v)),
            Some((_, b)) => {
                let better = if minimize { v < b } else { v > b };
                if better && !ties(v, b) {
                    best = Some((i, v));
                }
            }
        }
    }
    best.map(|(i, _)| i).unwrap_or(0)
}

/// Solves all three criteria by a backward sweep over `t = T-1, ..., 0`.
pub fn value_iteration(params: &ModelParams) -> Result<Solution> {
    let model = TransitionModel::new(params)?;
    Ok(value_iteration_with(&model, params.xi))
}

pub fn value_iteration_with(model: &TransitionModel, xi: RiskWeight) -> Solution {
    let space = model.space();
    let horizon = model.horizon();
    let n = space.len();
    let mut values = ValueTables::zeros(space, horizon);
    let mut policies: [Policy; 3] = std::array::from_fn(|_| Policy::empty(space, horizon, model.actions().to_vec()));

    for t in (0..horizon).rev() {
        let row: Vec<Option<([f64; 3], [usize; 3])>> = (0..n)
            .into_par_iter()
            .map(|s| {
                if model.is_risk(s) {
                    return None;
                }
                let backups: Vec<Backup> = (0..model.actions().len())
                    .map(|a| backup(model, xi, t, s, a, &values).expect("optimal rows are complete"))
                    .collect();
                let a_u = best_index(backups.iter().map(|b| b.u), false);
                let a_bar = best_index(backups.iter().map(|b| b.u_bar), true);
                let a_xi = match xi {
                    RiskWeight::Infinite => a_u,
                    RiskWeight::Finite(_) => best_index(backups.iter().map(|b| b.u_xi), false),
                };
                Some((
                    [backups[a_u].u, backups[a_bar].u_bar, backups[a_xi].u_xi],
                    [a_u, a_bar, a_xi],
                ))
            })
            .collect();
        for (s, entry) in row.into_iter().enumerate() {
            // Risk rows stay zero and keep an action so the table is total.
            let (vals, acts) = entry.unwrap_or(([0.0; 3], [0; 3]));
            let i = t * n + s;
            values.u[i] = vals[0];
            values.u_bar[i] = vals[1];
            values.u_xi[i] = vals[2];
            for (policy, a) in policies.iter_mut().zip(acts) {
                policy.set_index(t, s, a);
            }
        }
    }
    let [max_value, min_risk, weighted] = policies;
    Solution {
        values,
        max_value,
        min_risk,
        weighted,
    }
}

/// Values of a fixed policy under all three criteria.
///
/// States where the policy has no action get NaN; it is an error only when
/// such a state is a possible successor of a state the policy does cover.
pub fn evaluate_policy(policy: &Policy, params: &ModelParams) -> Result<ValueTables> {
    let model = TransitionModel::new(params)?;
    evaluate_policy_with(&model, params.xi, policy)
}

pub fn evaluate_policy_with(model: &TransitionModel, xi: RiskWeight, policy: &Policy) -> Result<ValueTables> {
    let space = model.space();
    if policy.space() != space || policy.horizon() != model.horizon() || policy.actions() != model.actions() {
        return Err(Error::InvalidParameter("policy shape does not match the model".into()));
    }
    let n = space.len();
    let mut values = ValueTables::zeros(space, model.horizon());
    for t in (0..model.horizon()).rev() {
        let row: Vec<std::result::Result<[f64; 3], usize>> = (0..n)
            .into_par_iter()
            .map(|s| {
                if model.is_risk(s) {
                    return Ok([0.0; 3]);
                }
                match policy.action_index(t, s) {
                    None => Ok([f64::NAN; 3]),
                    Some(a) => backup(model, xi, t, s, a, &values).map(|b| [b.u, b.u_bar, b.u_xi]),
                }
            })
            .collect();
        for (s, entry) in row.into_iter().enumerate() {
            let vals = entry.map_err(|j| Error::IncompletePolicy {
                t: t + 1,
                levels: space.state(j).levels,
            })?;
            let i = t * n + s;
            values.u[i] = vals[0];
            values.u_bar[i] = vals[1];
            values.u_xi[i] = vals[2];
        }
    }
    Ok(values)
}

/// Outcome of checking the risk constraint `eta < w` from one start state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintCheck {
    pub satisfied: bool,
    /// Probability of ever visiting the risk set from `(0, s0)`.
    pub achieved: f64,
}

/// A start state inside the risk set has already visited it (`achieved = 1`).
pub fn constraint_satisfied(policy: &Policy, s0: &QosState, params: &ModelParams) -> Result<ConstraintCheck> {
    let achieved = if crate::mdp::is_risk(s0, params) {
        1.0
    } else {
        let values = evaluate_policy(policy, params)?;
        let v = values.u_bar(0, s0)?;
        if v.is_nan() {
            return Err(Error::IncompletePolicy {
                t: 0,
                levels: s0.levels.clone(),
            });
        }
        v
    };
    Ok(ConstraintCheck {
        satisfied: achieved < params.w,
        achieved,
    })
}
