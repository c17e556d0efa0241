//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls the crate's probability or transition code; the
//! oracles only read plain parameters and recompute everything from raw
//! channel outcomes.

#![allow(dead_code)]

use std::collections::HashMap;

use num_rational::Ratio;
use urllc_risk::mdp::{ModelParams, RiskWeight};

/// Per-packet decoding probability by brute force: every way of choosing
/// which `l % a` packets get the extra copy, times every success/failure
/// pattern of the `l` channels.
pub fn nu_enumerated(a: u32, l: u32, mu: f64) -> f64 {
    assert!(a >= 1);
    let base = l / a;
    let extra = l % a;
    let mut total = 0.0;
    let mut subsets = 0u64;
    for subset in 0u32..(1 << a) {
        if subset.count_ones() != extra {
            continue;
        }
        subsets += 1;
        // Channel owners laid out packet by packet.
        let mut owner = Vec::new();
        for p in 0..a {
            let copies = base + u32::from(subset >> p & 1 == 1);
            owner.extend(std::iter::repeat_n(p, copies as usize));
        }
        assert_eq!(owner.len() as u32, l);
        for mask in 0u64..(1 << l) {
            let ok = (0..l).filter(|c| mask >> c & 1 == 1).count() as i32;
            let weight = mu.powi(ok) * (1.0 - mu).powi(l as i32 - ok);
            let mut decoded = vec![false; a as usize];
            for (c, &p) in owner.iter().enumerate() {
                if mask >> c & 1 == 1 {
                    decoded[p as usize] = true;
                }
            }
            let frac = decoded.iter().filter(|d| **d).count() as f64 / f64::from(a);
            total += weight * frac;
        }
    }
    total / subsets as f64
}

/// Binomial pmf by repeated multiplication, independent of the crate.
pub fn binomial_pmf(n: u32, trials: u32, p: f64) -> f64 {
    let mut c = 1.0;
    for i in 0..n {
        c = c * f64::from(trials - i) / f64::from(i + 1);
    }
    c * p.powi(n as i32) * (1.0 - p).powi((trials - n) as i32)
}

/// Nearest grid level of an exact rate, ties rounding up.
pub fn nearest_level(rho: Ratio<i64>, q: u32) -> u32 {
    let scaled = rho * Ratio::from_integer(i64::from(q)) + Ratio::new(1, 2);
    scaled.floor().to_integer() as u32
}

pub fn exact_update(rho: Ratio<i64>, t: usize, n: u32, a: u32) -> Ratio<i64> {
    let step = if a == 0 {
        Ratio::from_integer(0)
    } else {
        Ratio::new(i64::from(n), i64::from(a))
    };
    (rho * Ratio::from_integer(t as i64) + step) / Ratio::from_integer(t as i64 + 1)
}

fn in_risk(levels: &[u32], p: &ModelParams) -> bool {
    levels
        .iter()
        .any(|&l| f64::from(l) / f64::from(p.resolution) > p.rho_max)
}

/// Every allocation of `channels` among `users`, lexicographic.
pub fn allocations(users: usize, channels: u32) -> Vec<Vec<u32>> {
    if users == 1 {
        return vec![vec![channels]];
    }
    let mut out = Vec::new();
    for first in 0..=channels {
        for mut rest in allocations(users - 1, channels - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Joint outcomes of one slot for one allocation: probability, next
/// levels, decoded packets.
pub fn slot_outcomes(p: &ModelParams, t: usize, levels: &[u32], alloc: &[u32]) -> Vec<(f64, Vec<u32>, u32)> {
    let q = i64::from(p.resolution);
    let mut joint: Vec<(f64, Vec<u32>, u32)> = vec![(1.0, Vec::new(), 0)];
    for (k, &l) in alloc.iter().enumerate() {
        let rho = Ratio::new(i64::from(levels[k]), q);
        let mut per_user = Vec::new();
        for (a, &pa) in p.arrivals.probs().iter().enumerate() {
            let a = a as u32;
            if pa == 0.0 {
                continue;
            }
            if a == 0 {
                per_user.push((pa, nearest_level(exact_update(rho, t, 0, 0), p.resolution), 0));
                continue;
            }
            let nu = nu_enumerated(a, l, p.mu);
            for n in 0..=a {
                let pn = binomial_pmf(n, a, 1.0 - nu);
                per_user.push((pa * pn, nearest_level(exact_update(rho, t, n, a), p.resolution), a - n));
            }
        }
        let mut next = Vec::new();
        for (pj, lv, d) in &joint {
            for (pu, lu, du) in &per_user {
                let mut lv = lv.clone();
                lv.push(*lu);
                next.push((pj * pu, lv, d + du));
            }
        }
        joint = next;
    }
    joint
}

fn weight(p: &ModelParams) -> Option<f64> {
    match p.xi {
        RiskWeight::Finite(x) => Some(x),
        RiskWeight::Infinite => None,
    }
}

/// Expectimax over raw slot outcomes, memoized on `(t, levels)`.
pub struct BruteForce<'a> {
    p: &'a ModelParams,
    allocs: Vec<Vec<u32>>,
    memo: HashMap<(usize, Vec<u32>), [f64; 3]>,
}

impl<'a> BruteForce<'a> {
    pub fn new(p: &'a ModelParams) -> Self {
        Self {
            p,
            allocs: allocations(p.users, p.channels),
            memo: HashMap::new(),
        }
    }

    /// Optimal `[u, u_bar, u_xi]` from `(t, levels)`.
    pub fn optimum(&mut self, t: usize, levels: &[u32]) -> [f64; 3] {
        if t == self.p.horizon || in_risk(levels, self.p) {
            return [0.0; 3];
        }
        let key = (t, levels.to_vec());
        if let Some(v) = self.memo.get(&key) {
            return *v;
        }
        let mut best = [f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        for alloc in self.allocs.clone() {
            let mut v = [0.0; 3];
            for (prob, next, decoded) in slot_outcomes(self.p, t, levels, &alloc) {
                let risk = f64::from(u8::from(in_risk(&next, self.p)));
                let cont = self.optimum(t + 1, &next);
                let r = f64::from(decoded);
                v[0] += prob * (r + cont[0]);
                v[1] += prob * (risk + cont[1]);
                v[2] += prob
                    * match weight(self.p) {
                        Some(xi) => xi * r - risk + cont[2],
                        None => r + cont[2],
                    };
            }
            best[0] = best[0].max(v[0]);
            best[1] = best[1].min(v[1]);
            best[2] = best[2].max(v[2]);
        }
        self.memo.insert(key, best);
        best
    }
}

/// `[u, u_bar]` of a Markov policy given as a closure from `(t, levels)`
/// to an allocation, by full tree expansion.
pub fn evaluate_tree(
    p: &ModelParams,
    t: usize,
    levels: &[u32],
    policy: &dyn Fn(usize, &[u32]) -> Vec<u32>,
) -> [f64; 2] {
    if t == p.horizon || in_risk(levels, p) {
        return [0.0; 2];
    }
    let alloc = policy(t, levels);
    let mut v = [0.0; 2];
    for (prob, next, decoded) in slot_outcomes(p, t, levels, &alloc) {
        let risk = f64::from(u8::from(in_risk(&next, p)));
        let cont = evaluate_tree(p, t + 1, &next, policy);
        v[0] += prob * (f64::from(decoded) + cont[0]);
        v[1] += prob * (risk + cont[1]);
    }
    v
}

/// Risk-visit probability of a fixed allocation when the state carries
/// exact rational rates and only the risk test looks at the grid.
pub fn exact_state_risk(p: &ModelParams, alloc: &[u32], t: usize, rho: &[Ratio<i64>]) -> f64 {
    if t == p.horizon {
        return 0.0;
    }
    let mut per_user: Vec<Vec<(f64, Ratio<i64>)>> = Vec::new();
    for (k, &l) in alloc.iter().enumerate() {
        let mut outs = Vec::new();
        for (a, &pa) in p.arrivals.probs().iter().enumerate() {
            let a = a as u32;
            if pa == 0.0 {
                continue;
            }
            if a == 0 {
                outs.push((pa, exact_update(rho[k], t, 0, 0)));
                continue;
            }
            let nu = nu_enumerated(a, l, p.mu);
            for n in 0..=a {
                outs.push((pa * binomial_pmf(n, a, 1.0 - nu), exact_update(rho[k], t, n, a)));
            }
        }
        per_user.push(outs);
    }
    let mut joint: Vec<(f64, Vec<Ratio<i64>>)> = vec![(1.0, Vec::new())];
    for outs in &per_user {
        joint = joint
            .iter()
            .flat_map(|(pj, r)| {
                outs.iter().map(move |(pu, ru)| {
                    let mut r = r.clone();
                    r.push(*ru);
                    (pj * pu, r)
                })
            })
            .collect();
    }
    let mut total = 0.0;
    for (prob, next) in joint {
        let grid: Vec<u32> = next.iter().map(|r| nearest_level(*r, p.resolution)).collect();
        if in_risk(&grid, p) {
            total += prob;
        } else {
            total += prob * exact_state_risk(p, alloc, t + 1, &next);
        }
    }
    total
}
