//! Stochastic primitives of a single time slot.
//!
//! A user with `a` waiting packets and `l` assigned channels sends every
//! packet over `floor(l / a)` channels; each packet additionally gets one
//! extra copy with probability `(l mod a) / a`. Channels are i.i.d.
//! Bernoulli with success mean `mu`, and a packet is lost when none of its
//! copies gets through.

use rand::Rng;

use crate::error::{Error, Result};

/// Arrival distribution of packets per user and slot, supported on
/// `{0, ..., a_max}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalDist {
    probs: Vec<f64>,
    lambda: Option<f64>,
}

impl ArrivalDist {
    /// Poisson(`lambda`) restricted to `{0, ..., a_max}` and renormalized.
    ///
    /// `a_max = 0` is the degenerate single-point support and ignores
    /// `lambda`.
    pub fn truncated_poisson(lambda: f64, a_max: u32) -> Result<Self> {
        if a_max == 0 {
            return Ok(Self {
                probs: vec![1.0],
                lambda: Some(lambda),
            });
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "arrival rate must be positive and finite, got {lambda}"
            )));
        }
        let mut terms = Vec::with_capacity(a_max as usize + 1);
        let mut term = 1.0_f64;
        terms.push(term);
        for m in 1..=a_max {
            term *= lambda / f64::from(m);
            terms.push(term);
        }
        let norm: f64 = terms.iter().sum();
        Ok(Self {
            probs: terms.into_iter().map(|x| x / norm).collect(),
            lambda: Some(lambda),
        })
    }

    /// All mass on exactly `a` arrivals.
    pub fn point_mass(a: u32) -> Self {
        let mut probs = vec![0.0; a as usize + 1];
        probs[a as usize] = 1.0;
        Self { probs, lambda: None }
    }

    /// An explicit pmf over `{0, ..., probs.len() - 1}`. Entries must be in
    /// `[0, 1]` and sum to one within `1e-9`; the vector is renormalized.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParameter("empty arrival pmf".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidParameter(format!(
                "arrival probability {p} outside [0, 1]"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "arrival pmf sums to {total}, expected 1"
            )));
        }
        Ok(Self {
            probs: probs.into_iter().map(|p| p / total).collect(),
            lambda: None,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of exactly `a` arrivals (zero outside the support).
    pub fn prob(&self, a: u32) -> f64 {
        self.probs.get(a as usize).copied().unwrap_or(0.0)
    }

    pub fn a_max(&self) -> u32 {
        (self.probs.len() - 1) as u32
    }

    /// The Poisson rate this distribution was built from, if any.
    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(a, p)| a as f64 * p).sum()
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a as u32;
            }
        }
        // Rounding left a sliver above the last cumulative sum.
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u32
    }
}

/// How `l` channels are spread over `a` waiting packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitProfile {
    /// Copies every packet receives.
    pub base_copies: u32,
    /// `l mod a`: the expected number of packets holding one extra copy.
    pub extra_copies: u32,
    pub packets: u32,
}

impl SplitProfile {
    /// Probability that a given packet holds an extra copy.
    pub fn extra_prob(&self) -> f64 {
        f64::from(self.extra_copies) / f64::from(self.packets)
    }
}

pub fn split_channels(a: u32, l: u32) -> Result<SplitProfile> {
    if a == 0 {
        return Err(Error::Domain(
            "channel split is undefined without waiting packets".into(),
        ));
    }
    Ok(SplitProfile {
        base_copies: l / a,
        extra_copies: l % a,
        packets: a,
    })
}

fn check_mu(mu: f64) -> Result<()> {
    if (0.0..=1.0).contains(&mu) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "channel success mean {mu} outside [0, 1]"
        )))
    }
}

/// Probability that one of `a` waiting packets is decoded when the user
/// holds `l` channels.
pub fn packet_success_prob(a: u32, l: u32, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let split = split_channels(a, l)?;
    let p_extra = split.extra_prob();
    let fail = 1.0 - mu;
    let m = split.base_copies as i32;
    Ok((1.0 - p_extra) * (1.0 - fail.powi(m)) + p_extra * (1.0 - fail.powi(m + 1)))
}

/// Exact `C(n, k)` by the multiplicative formula.
pub fn binomial(n: u32, k: u32) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
    }
    acc as u64
}

/// Probability that exactly `n` of `a` packets are lost.
pub fn loss_count_pmf(n: u32, a: u32, l: u32, mu: f64) -> Result<f64> {
    if n > a {
        return Err(Error::Domain(format!("cannot lose {n} packets out of {a}")));
    }
    let nu = packet_success_prob(a, l, mu)?;
    Ok(binomial(a, n) as f64 * (1.0 - nu).powi(n as i32) * nu.powi((a - n) as i32))
}

/// Expected number of decoded packets of one user holding `l` channels.
pub fn expected_successes(l: u32, arrivals: &ArrivalDist, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let mut total = 0.0;
    for (a, &alpha) in arrivals.probs().iter().enumerate().skip(1) {
        let a = a as u32;
        total += f64::from(a) * alpha * packet_success_prob(a, l, mu)?;
    }
    Ok(total)
}

/// How the sampler decides which packets carry the extra copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Replication {
    /// Every packet takes an extra copy independently with probability
    /// `(l mod a) / a`. Packet fates are then independent and the loss
    /// count follows [`loss_count_pmf`] exactly.
    #[default]
    Independent,
    /// Exactly `l mod a` packets, drawn uniformly without replacement, take
    /// an extra copy. Channel usage equals `l`, but packet fates become
    /// correlated; the loss count follows [`subset_loss_pmf`].
    UniformSubset,
}

/// Loss-count pmf under [`Replication::UniformSubset`]: a sum of two
/// independent binomials over the packets with and without the extra copy.
pub fn subset_loss_pmf(n: u32, a: u32, l: u32, mu: f64) -> Result<f64> {
    if n > a {
        return Err(Error::Domain(format!("cannot lose {n} packets out of {a}")));
    }
    check_mu(mu)?;
    let split = split_channels(a, l)?;
    let fail = 1.0 - mu;
    let lose_extra = fail.powi(split.base_copies as i32 + 1);
    let lose_base = fail.powi(split.base_copies as i32);
    let with_extra = split.extra_copies;
    let without = a - with_extra;
    let bin = |n: u32, k: u32, p: f64| binomial(n, k) as f64 * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32);
    let mut total = 0.0;
    for i in 0..=n.min(with_extra) {
        let j = n - i;
        if j <= without {
            total += bin(with_extra, i, lose_extra) * bin(without, j, lose_base);
        }
    }
    Ok(total)
}

/// Draws the number of lost packets among `a` arrivals sent over `l`
/// channels, simulating every channel individually.
pub fn sample_losses<R: Rng + ?Sized>(a: u32, l: u32, mu: f64, replication: Replication, rng: &mut R) -> u32 {
    if a == 0 {
        return 0;
    }
    let base = l / a;
    let extra = l % a;
    let mut has_extra = vec![false; a as usize];
    match replication {
        Replication::Independent => {
            let p = f64::from(extra) / f64::from(a);
            for flag in has_extra.iter_mut() {
                *flag = rng.gen_bool(p);
            }
        }
        Replication::UniformSubset => {
            for i in rand::seq::index::sample(rng, a as usize, extra as usize) {
                has_extra[i] = true;
            }
        }
    }
    let mu = mu.clamp(0.0, 1.0);
    has_extra
        .into_iter()
        .filter(|&extra| {
            let copies = base + u32::from(extra);
            !(0..copies).any(|_| rng.gen_bool(mu))
        })
        .count() as u32
}
