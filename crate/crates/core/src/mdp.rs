//! The finite-horizon decision process over quantized packet-loss rates.
//!
//! A state is the vector of per-user loss rates on the grid
//! `{0, 1/q, ..., 1}`. After a slot with `a` arrivals and `n` losses a
//! user's rate moves to `(t * rho + n / a) / (t + 1)` (with `n / a := 0`
//! for an empty slot) and is rounded back to the nearest grid point, ties
//! upward. States where any user's rate exceeds `rho_max` are absorbing.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::model::{expected_successes, loss_count_pmf, ArrivalDist};

/// Weight of the expected-reward term in the weighted criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiskWeight {
    Finite(f64),
    /// Pure reward maximization.
    Infinite,
}

impl RiskWeight {
    pub fn is_infinite(&self) -> bool {
        matches!(self, RiskWeight::Infinite)
    }
}

impl fmt::Display for RiskWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RiskWeight::Finite(x) => write!(f, "{x}"),
            RiskWeight::Infinite => f.write_str("inf"),
        }
    }
}

/// Every constant of one problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub users: usize,
    pub channels: u32,
    pub horizon: usize,
    /// Per-channel success probability.
    pub mu: f64,
    pub arrivals: ArrivalDist,
    /// A user whose loss rate strictly exceeds this is in the risk set.
    pub rho_max: f64,
    pub xi: RiskWeight,
    /// Tolerated probability of ever visiting the risk set.
    pub w: f64,
    /// Grid resolution: loss rates live on multiples of `1 / resolution`.
    pub resolution: u32,
}

impl Default for ModelParams {
    /// Two users sharing five channels, Poisson(3) arrivals truncated at 6,
    /// `mu = 0.6`, `rho_max = 0.55`, `xi = 0.1`, nine slots.
    fn default() -> Self {
        Self {
            users: 2,
            channels: 5,
            horizon: 9,
            mu: 0.6,
            arrivals: ArrivalDist::truncated_poisson(3.0, 6).expect("valid default rate"),
            rho_max: 0.55,
            xi: RiskWeight::Finite(0.1),
            w: 0.1,
            resolution: 20,
        }
    }
}

impl ModelParams {
    /// Human-readable list of every broken invariant.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.users == 0 {
            out.push("users must be at least 1".to_string());
        }
        if self.horizon == 0 {
            out.push("horizon must be at least 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.mu) {
            out.push(format!("mu = {} outside [0, 1]", self.mu));
        }
        if !(self.rho_max > 0.0 && self.rho_max.is_finite()) {
            out.push(format!("rho_max = {} must be positive", self.rho_max));
        }
        if let RiskWeight::Finite(xi) = self.xi {
            if !(xi >= 0.0 && xi.is_finite()) {
                out.push(format!("xi = {xi} must be nonnegative"));
            }
        }
        if !(self.w > 0.0 && self.w <= 1.0) {
            out.push(format!("w = {} outside (0, 1]", self.w));
        }
        if self.resolution == 0 {
            out.push("resolution must be at least 1".to_string());
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

    pub fn state_space(&self) -> StateSpace {
        StateSpace::new(self.users, self.resolution)
    }
}

/// Per-user loss rates as grid indices; user `k` has rate
/// `levels[k] / resolution`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QosState {
    pub levels: Vec<u32>,
}

impl QosState {
    pub fn new(levels: Vec<u32>) -> Self {
        Self { levels }
    }

    pub fn zeros(users: usize) -> Self {
        Self { levels: vec![0; users] }
    }

    /// Nearest grid point of each rate (ties upward).
    pub fn from_rates(rates: &[f64], resolution: u32) -> Self {
        let q = f64::from(resolution);
        Self {
            levels: rates
                .iter()
                .map(|r| (r.clamp(0.0, 1.0) * q + 0.5).floor() as u32)
                .collect(),
        }
    }

    pub fn rate(&self, user: usize, resolution: u32) -> f64 {
        f64::from(self.levels[user]) / f64::from(resolution)
    }
}

impl fmt::Display for QosState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.levels.iter().map(u32::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TimedState {
    pub t: usize,
    pub qos: QosState,
}

/// Channels per user; the entries always sum to the number of channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action {
    pub alloc: Vec<u32>,
}

impl Action {
    pub fn new(alloc: Vec<u32>) -> Self {
        Self { alloc }
    }

    pub fn total(&self) -> u32 {
        self.alloc.iter().sum()
    }

    pub fn check(&self, params: &ModelParams) -> Result<()> {
        if self.alloc.len() != params.users || self.total() != params.channels {
            return Err(Error::InvalidParameter(format!(
                "action {self} must give {} users exactly {} channels",
                params.users, params.channels
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.alloc.iter().map(u32::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// All ways to hand `channels` channels to `users` users, lexicographic.
pub fn enumerate_actions(users: usize, channels: u32) -> Vec<Action> {
    fn fill(prefix: &mut Vec<u32>, users_left: usize, remaining: u32, out: &mut Vec<Action>) {
        if users_left == 1 {
            prefix.push(remaining);
            out.push(Action::new(prefix.clone()));
            prefix.pop();
            return;
        }
        for l in 0..=remaining {
            prefix.push(l);
            fill(prefix, users_left - 1, remaining - l, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if users > 0 {
        fill(&mut Vec::with_capacity(users), users, channels, &mut out);
    }
    out
}

fn level_is_risk(level: u32, resolution: u32, rho_max: f64) -> bool {
    f64::from(level) / f64::from(resolution) > rho_max
}

/// Whether some user's loss rate strictly exceeds `rho_max`.
pub fn is_risk(qos: &QosState, params: &ModelParams) -> bool {
    qos.levels
        .iter()
        .any(|&l| level_is_risk(l, params.resolution, params.rho_max))
}

/// Grid index of `(t * level / q + n / a) / (t + 1)`, rounded to nearest
/// with ties upward. Computed in integers so that ties are exact.
pub fn next_qos_level(level: u32, t: usize, n: u32, a: u32, resolution: u32) -> Result<u32> {
    if n > a {
        return Err(Error::Domain(format!("{n} losses out of {a} arrivals")));
    }
    let t = t as u64;
    let (num, den) = if a == 0 {
        (t * u64::from(level), t + 1)
    } else {
        let a = u64::from(a);
        (
            t * u64::from(level) * a + u64::from(resolution) * u64::from(n),
            a * (t + 1),
        )
    };
    Ok(((2 * num + den) / (2 * den)) as u32)
}

/// One successor of a transition distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionEntry {
    pub next: QosState,
    pub prob: f64,
    pub entered_risk: bool,
}

/// Distribution of a single user's next grid level, ascending by level.
pub fn user_marginal(level: u32, t: usize, channels: u32, params: &ModelParams) -> Result<Vec<(u32, f64)>> {
    let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
    let q = params.resolution;
    for (a, &alpha) in params.arrivals.probs().iter().enumerate() {
        if alpha == 0.0 {
            continue;
        }
        let a = a as u32;
        if a == 0 {
            *acc.entry(next_qos_level(level, t, 0, 0, q)?).or_default() += alpha;
            continue;
        }
        for n in 0..=a {
            let p = alpha * loss_count_pmf(n, a, channels, params.mu)?;
            *acc.entry(next_qos_level(level, t, n, a, q)?).or_default() += p;
        }
    }
    Ok(acc.into_iter().collect())
}

/// Successor distribution of a non-risk state under an action.
pub fn transition_dist(state: &TimedState, action: &Action, params: &ModelParams) -> Result<Vec<TransitionEntry>> {
    action.check(params)?;
    if state.qos.levels.len() != params.users {
        return Err(Error::InvalidParameter(format!(
            "state {} does not have {} users",
            state.qos, params.users
        )));
    }
    if state.t >= params.horizon {
        return Err(Error::Contract(format!(
            "no transition out of the final epoch t={}",
            state.t
        )));
    }
    if is_risk(&state.qos, params) {
        return Err(Error::Contract(format!("risk state {} is absorbing", state.qos)));
    }
    let marginals = state
        .qos
        .levels
        .iter()
        .zip(&action.alloc)
        .map(|(&level, &l)| user_marginal(level, state.t, l, params))
        .collect::<Result<Vec<_>>>()?;

    let mut joint: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    joint.insert(Vec::new(), 1.0);
    for marginal in &marginals {
        let mut next = BTreeMap::new();
        for (prefix, p) in &joint {
            for &(level, pl) in marginal {
                let mut key = prefix.clone();
                key.push(level);
                *next.entry(key).or_insert(0.0) += p * pl;
            }
        }
        joint = next;
    }
    Ok(joint
        .into_iter()
        .map(|(levels, prob)| {
            let next = QosState::new(levels);
            let entered_risk = is_risk(&next, params);
            TransitionEntry {
                next,
                prob,
                entered_risk,
            }
        })
        .collect())
}

/// Expected decoded packets in one slot; zero in a risk state.
pub fn slot_reward(action: &Action, params: &ModelParams, at_risk: bool) -> Result<f64> {
    if at_risk {
        return Ok(0.0);
    }
    action
        .alloc
        .iter()
        .map(|&l| expected_successes(l, &params.arrivals, params.mu))
        .sum()
}

/// Mixed-radix indexing of the grid states, user 0 most significant, so
/// that index order is lexicographic order of the level vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSpace {
    users: usize,
    resolution: u32,
}

impl StateSpace {
    pub fn new(users: usize, resolution: u32) -> Self {
        Self { users, resolution }
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    fn radix(&self) -> usize {
        self.resolution as usize + 1
    }

    pub fn len(&self) -> usize {
        self.radix().pow(self.users as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, qos: &QosState) -> Result<usize> {
        if qos.levels.len() != self.users {
            return Err(Error::InvalidParameter(format!(
                "state {qos} does not have {} users",
                self.users
            )));
        }
        let mut idx = 0;
        for &level in &qos.levels {
            if level > self.resolution {
                return Err(Error::InvalidParameter(format!(
                    "level {level} above resolution {}",
                    self.resolution
                )));
            }
            idx = idx * self.radix() + level as usize;
        }
        Ok(idx)
    }

    pub fn state(&self, mut idx: usize) -> QosState {
        let mut levels = vec![0; self.users];
        for slot in levels.iter_mut().rev() {
            *slot = (idx % self.radix()) as u32;
            idx /= self.radix();
        }
        QosState::new(levels)
    }

    pub fn iter(&self) -> impl Iterator<Item = QosState> + '_ {
        (0..self.len()).map(|i| self.state(i))
    }
}

/// Precomputed per-user marginals, slot rewards and the risk set, shared
/// by the planner, the evaluator and the brute-force checks.
#[derive(Debug, Clone)]
pub struct TransitionModel {
    space: StateSpace,
    actions: Vec<Action>,
    rewards: Vec<f64>,
    risk: Vec<bool>,
    // marginals[(t * (q + 1) + level) * (L + 1) + l]
    marginals: Vec<Vec<(u32, f64)>>,
    channels: u32,
    horizon: usize,
}

impl TransitionModel {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let space = params.state_space();
        let actions = enumerate_actions(params.users, params.channels);
        let rewards = actions
            .iter()
            .map(|a| slot_reward(a, params, false))
            .collect::<Result<Vec<_>>>()?;
        let risk = space.iter().map(|s| is_risk(&s, params)).collect();
        let mut marginals = Vec::with_capacity(params.horizon * space.radix() * (params.channels as usize + 1));
        for t in 0..params.horizon {
            for level in 0..=params.resolution {
                for l in 0..=params.channels {
                    marginals.push(user_marginal(level, t, l, params)?);
                }
            }
        }
        Ok(Self {
            space,
            actions,
            rewards,
            risk,
            marginals,
            channels: params.channels,
            horizon: params.horizon,
        })
    }

    pub fn space(&self) -> StateSpace {
        self.space
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Expected slot reward of action `a` from a non-risk state.
    pub fn reward(&self, a: usize) -> f64 {
        self.rewards[a]
    }

    pub fn is_risk(&self, s: usize) -> bool {
        self.risk[s]
    }

    pub fn marginal(&self, t: usize, level: u32, l: u32) -> &[(u32, f64)] {
        let idx = (t * self.space.radix() + level as usize) * (self.channels as usize + 1) + l as usize;
        &self.marginals[idx]
    }

    /// Calls `f(successor_index, prob)` for every joint successor of state
    /// `s` under action `a` at epoch `t`, in lexicographic successor order.
    pub fn for_each_successor(&self, t: usize, s: usize, a: usize, mut f: impl FnMut(usize, f64)) {
        let state = self.space.state(s);
        let alloc = &self.actions[a].alloc;
        let per_user: Vec<&[(u32, f64)]> = state
            .levels
            .iter()
            .zip(alloc)
            .map(|(&level, &l)| self.marginal(t, level, l))
            .collect();
        let radix = self.space.radix();
        fn walk(per_user: &[&[(u32, f64)]], radix: usize, idx: usize, p: f64, f: &mut impl FnMut(usize, f64)) {
            match per_user.split_first() {
                None => f(idx, p),
                Some((first, rest)) => {
                    for &(level, pl) in first.iter() {
                        walk(rest, radix, idx * radix + level as usize, p * pl, f);
                    }
                }
            }
        }
        walk(&per_user, radix, 0, 1.0, &mut f);
    }
}
