//! Brute-force oracles for the framework's analytic guarantees, stated over
//! flat (fully enumerated) sequence-level distributions.
//!
//! Everything here works on explicit probability vectors, so each guarantee
//! reduces to finite arithmetic that can be swept over random instances:
//!
//! 1. **Tilt validity.** The tilted reference `p~(a) = p(a) + rho * q(a) *
//!    A_q(a)` is a valid distribution whenever some action has nonzero
//!    advantage under `q`, where `rho` is the largest tilt that keeps every
//!    entry nonnegative.
//! 2. **Gradient equivalence.** With the scored distribution evaluated at
//!    the detached rollout distribution, `-KL(p~ || softmax(theta))` and the
//!    tilted policy-gradient objective `rho * E_q[A_q * log
//!    softmax(theta)]` have identical gradients with respect to the
//!    energies `theta`.
//! 3. **Surrogate bound.** Under 0/1 rewards, the correct-action part of the
//!    mixed-policy objective is bounded by `phi` times the correct-action
//!    parts of the two component objectives.
//!
//! [`enumerate_policy`] bridges the training stack into this module: it
//! exhaustively expands a tabular policy's sequence distribution so the
//! oracles can consume it.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::conditioning::TokenPrefix;
use crate::policy::{softmax, AutoregressivePolicy};
use crate::vocab::{PromptId, TokenId, EOS};
use crate::{Error, Result};

/// Tolerance on total probability mass.
pub const MASS_TOL: f64 = 1e-12;

/// Entries of a tilted reference may round to just below zero at the action
/// driven exactly to zero; anything above this is clamped, anything below is
/// an error.
pub const TILT_NEG_TOL: f64 = -1e-12;

/// Advantages with magnitude at or below this (relative to the reward scale)
/// are treated as zero when checking the nonzero-advantage hypothesis.
pub const ADVANTAGE_TOL: f64 = 1e-12;

/// Default cap on exhaustive sequence enumeration.
pub const DEFAULT_ENUM_CAP: u128 = 1_000_000;

/// An explicit probability vector over an enumerated action set.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatDistribution {
    probs: Vec<f64>,
}

impl FlatDistribution {
    /// Validate and wrap a probability vector: entries nonnegative, total
    /// mass 1 within [`MASS_TOL`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution(format!(
                "need at least 2 actions, got {}",
                probs.len()
            )));
        }
        if let Some(&bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "entry {bad} is negative or non-finite"
            )));
        }
        let mass: f64 = probs.iter().sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDistribution(format!(
                "total mass {mass} differs from 1 by more than {MASS_TOL}"
            )));
        }
        Ok(Self { probs })
    }

    /// Wrap the output of a tilt, clamping fp dust in `[TILT_NEG_TOL, 0)`
    /// to exactly zero.
    fn from_tilt(mut raw: Vec<f64>) -> Result<Self> {
        for p in &mut raw {
            if *p < 0.0 {
                if *p < TILT_NEG_TOL {
                    return Err(Error::InvalidDistribution(format!(
                        "tilted entry {p} below tolerance {TILT_NEG_TOL}"
                    )));
                }
                *p = 0.0;
            }
        }
        Self::new(raw)
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Softmax of an energy vector.
    pub fn from_energies(energies: &[f64]) -> Self {
        Self {
            probs: softmax(energies),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, a: usize) -> f64 {
        self.probs[a]
    }
}

/// One oracle instance: rollout distribution, token-conditional
/// distribution, rewards, and the energies defining the scored distribution.
#[derive(Debug, Clone)]
pub struct FlatInstance {
    pub pi: FlatDistribution,
    pub pi_tc: FlatDistribution,
    pub rewards: Vec<f64>,
    pub theta_energies: Vec<f64>,
}

impl FlatInstance {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Text dump for triage of failing sweep instances.
    pub fn dump(&self) -> String {
        format!(
            "pi      = {:?}\npi_tc   = {:?}\nrewards = {:?}\ntheta   = {:?}\n",
            self.pi.probs(),
            self.pi_tc.probs(),
            self.rewards,
            self.theta_energies
        )
    }
}

/// Advantages of `rewards` under `dist`: `A(a) = r(a) - E_dist[r]`.
///
/// The returned vector satisfies `sum_a dist(a) * A(a) = 0`. One
/// recentering step pushes the floating-point residual of that sum to
/// second order; the tilt coefficient can reach 1e6 on near-constant
/// rewards, and the residual gets multiplied by it.
pub fn flat_advantages(dist: &FlatDistribution, rewards: &[f64]) -> Vec<f64> {
    assert_eq!(dist.len(), rewards.len(), "length mismatch");
    let p = dist.probs();
    let value: f64 = p.iter().zip(rewards).map(|(p, r)| p * r).sum();
    let mass: f64 = p.iter().sum();
    let drift: f64 = p
        .iter()
        .zip(rewards)
        .map(|(p, r)| p * (r - value))
        .sum::<f64>()
        / mass;
    let value = value + drift;
    rewards.iter().map(|r| r - value).collect()
}

/// Largest tilt coefficient keeping the tilted reference nonnegative: the
/// minimum of `-pi(a) / (pi_tc(a) * A(a))` over actions with negative
/// advantage under `pi_tc`.
///
/// Actions with `pi_tc(a) = 0` contribute nothing to the tilt and are
/// excluded from the minimum. Errors with [`Error::AssumptionViolated`]
/// when every advantage is zero (constant rewards).
pub fn tilt_coefficient(
    pi: &FlatDistribution,
    pi_tc: &FlatDistribution,
    rewards: &[f64],
) -> Result<f64> {
    let adv = flat_advantages(pi_tc, rewards);
    let scale = rewards.iter().fold(1.0f64, |m, r| m.max(r.abs()));
    if adv.iter().all(|a| a.abs() <= ADVANTAGE_TOL * scale) {
        return Err(Error::AssumptionViolated);
    }
    let mut best = f64::INFINITY;
    for (a, &adv_a) in adv.iter().enumerate() {
        if adv_a < 0.0 && pi_tc.get(a) > 0.0 {
            let candidate = -pi.get(a) / (pi_tc.get(a) * adv_a);
            best = best.min(candidate);
        }
    }
    if !best.is_finite() {
        // nonzero advantages but no negative-advantage action with support:
        // the tilt is unbounded, which the hypothesis rules out
        return Err(Error::AssumptionViolated);
    }
    Ok(best)
}

/// The tilted reference distribution `pi(a) + rho * pi_tc(a) * A(a)`.
///
/// Valid by construction of `rho`: entries are nonnegative (the minimizing
/// action lands exactly at zero) and the correction term has zero total
/// mass.
pub fn tilted_reference(
    pi: &FlatDistribution,
    pi_tc: &FlatDistribution,
    rewards: &[f64],
) -> Result<FlatDistribution> {
    let rho = tilt_coefficient(pi, pi_tc, rewards)?;
    let adv = flat_advantages(pi_tc, rewards);
    let raw: Vec<f64> = (0..adv.len())
        .map(|a| pi.get(a) + rho * pi_tc.get(a) * adv[a])
        .collect();
    FlatDistribution::from_tilt(raw)
}

/// `-KL(p || softmax(theta))`, with the convention `0 * log 0 = 0`.
///
/// Nonpositive, and zero exactly when `p = softmax(theta)`.
pub fn neg_kl(p: &FlatDistribution, theta_energies: &[f64]) -> f64 {
    let q = softmax(theta_energies);
    p.probs()
        .iter()
        .zip(&q)
        .filter(|(pa, _)| **pa > 0.0)
        .map(|(pa, qa)| pa * (qa / pa).ln())
        .sum()
}

/// Gradient of [`neg_kl`] with respect to the energies:
/// `p(a) - softmax(theta)(a)` entrywise.
pub fn neg_kl_grad(p: &FlatDistribution, theta_energies: &[f64]) -> Vec<f64> {
    let q = softmax(theta_energies);
    p.probs().iter().zip(&q).map(|(pa, qa)| pa - qa).collect()
}

/// The tilted policy-gradient objective
/// `rho * sum_a pi_tc(a) * A(a) * log softmax(theta)(a)`.
pub fn tilt_objective(
    pi: &FlatDistribution,
    pi_tc: &FlatDistribution,
    rewards: &[f64],
    theta_energies: &[f64],
) -> Result<f64> {
    let rho = tilt_coefficient(pi, pi_tc, rewards)?;
    let adv = flat_advantages(pi_tc, rewards);
    let q = softmax(theta_energies);
    Ok(rho
        * adv
            .iter()
            .enumerate()
            .map(|(a, adv_a)| pi_tc.get(a) * adv_a * q[a].ln())
            .sum::<f64>())
}

/// Analytic gradient of [`tilt_objective`] with respect to the energies:
/// `rho * pi_tc(a) * A(a)` entrywise (the softmax coupling term vanishes
/// because advantages are zero-mean under `pi_tc`).
pub fn tilt_objective_grad(
    pi: &FlatDistribution,
    pi_tc: &FlatDistribution,
    rewards: &[f64],
) -> Result<Vec<f64>> {
    let rho = tilt_coefficient(pi, pi_tc, rewards)?;
    let adv = flat_advantages(pi_tc, rewards);
    Ok((0..adv.len())
        .map(|a| rho * pi_tc.get(a) * adv[a])
        .collect())
}

/// Convex mixture `(pi + lambda * pi_tc) / (1 + lambda)`.
pub fn mix_flat(
    pi: &FlatDistribution,
    pi_tc: &FlatDistribution,
    lambda_tilde: f64,
) -> FlatDistribution {
    assert!(lambda_tilde >= 0.0, "mixture weight must be nonnegative");
    let w = 1.0 / (1.0 + lambda_tilde);
    let probs: Vec<f64> = pi
        .probs()
        .iter()
        .zip(pi_tc.probs())
        .map(|(p, q)| w * p + (1.0 - w) * q)
        .collect();
    FlatDistribution { probs }
}

/// Coefficient of the surrogate bound:
/// `min(lambda / (1+lambda)^2, 1 / (1+lambda)^2)`.
///
/// Lies in `[0, 1/4]` and peaks at `lambda = 1`.
pub fn mix_bound_coefficient(lambda_tilde: f64) -> f64 {
    assert!(lambda_tilde >= 0.0, "mixture weight must be nonnegative");
    let denom = (1.0 + lambda_tilde).powi(2);
    (lambda_tilde / denom).min(1.0 / denom)
}

/// Outcome of one surrogate-bound evaluation.
#[derive(Debug, Clone, Copy)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluate the surrogate bound on a 0/1-reward instance at mixture weight
/// `lambda_tilde`.
///
/// Both sides restrict to correct actions (`r(a) = 1`):
/// `lhs = E_mix[1_correct * A_mix * log p_theta]`,
/// `rhs = phi * (E_pi[1_correct * A_pi * log p_theta]
///         + lambda * E_tc[1_correct * A_tc * log p_theta])`.
pub fn surrogate_bound_check(instance: &FlatInstance, lambda_tilde: f64) -> Result<BoundCheck> {
    if instance.rewards.iter().any(|r| *r != 0.0 && *r != 1.0) {
        return Err(Error::InvalidDistribution(
            "surrogate bound requires 0/1 rewards".into(),
        ));
    }
    let mix = mix_flat(&instance.pi, &instance.pi_tc, lambda_tilde);
    let log_theta: Vec<f64> = softmax(&instance.theta_energies)
        .into_iter()
        .map(f64::ln)
        .collect();
    let adv_mix = flat_advantages(&mix, &instance.rewards);
    let adv_pi = flat_advantages(&instance.pi, &instance.rewards);
    let adv_tc = flat_advantages(&instance.pi_tc, &instance.rewards);

    let correct = |a: usize| instance.rewards[a] == 1.0;
    let restricted = |dist: &FlatDistribution, adv: &[f64]| -> f64 {
        (0..instance.len())
            .filter(|&a| correct(a))
            .map(|a| dist.get(a) * adv[a] * log_theta[a])
            .sum()
    };

    let lhs = restricted(&mix, &adv_mix);
    let phi = mix_bound_coefficient(lambda_tilde);
    let rhs = phi
        * (restricted(&instance.pi, &adv_pi)
            + lambda_tilde * restricted(&instance.pi_tc, &adv_tc));
    Ok(BoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
    })
}

/// Central finite differences of a scalar function of an energy vector.
pub fn central_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * step));
    }
    grad
}

// ---------------------------------------------------------------------------
// Exhaustive expansion of tabular policies
// ---------------------------------------------------------------------------

/// A fully enumerated sequence distribution: every terminated sequence a
/// policy can emit for one prompt, with its exact probability.
#[derive(Debug, Clone)]
pub struct SequenceDistribution {
    entries: BTreeMap<Vec<TokenId>, f64>,
}

impl SequenceDistribution {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prob_of(&self, tokens: &[TokenId]) -> f64 {
        self.entries.get(tokens).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<TokenId>, &f64)> {
        self.entries.iter()
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.values().sum()
    }

    /// Collapse into a [`FlatDistribution`] over the sorted sequence order.
    pub fn to_flat(&self) -> Result<FlatDistribution> {
        let mass = self.total_mass();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!(
                "enumerated mass {mass} differs from 1 by more than 1e-9"
            )));
        }
        // renormalize away the accumulated fp dust so downstream oracles see
        // an exactly unit-mass vector
        Ok(FlatDistribution {
            probs: self.entries.values().map(|p| p / mass).collect(),
        })
    }

    /// Mix two enumerated distributions with normal-branch weight
    /// `1 / (1 + lambda)`.
    pub fn mix(&self, other: &SequenceDistribution, lambda: f64) -> SequenceDistribution {
        let w = 1.0 / (1.0 + lambda);
        let mut entries = BTreeMap::new();
        for (seq, &p) in &self.entries {
            *entries.entry(seq.clone()).or_insert(0.0) += w * p;
        }
        for (seq, &p) in &other.entries {
            *entries.entry(seq.clone()).or_insert(0.0) += (1.0 - w) * p;
        }
        SequenceDistribution { entries }
    }

    /// Total-variation distance to an empirical sample of sequences.
    pub fn tv_to_counts(&self, counts: &BTreeMap<Vec<TokenId>, usize>, total: usize) -> f64 {
        let mut keys: Vec<&Vec<TokenId>> = self.entries.keys().collect();
        for k in counts.keys() {
            if !self.entries.contains_key(k) {
                keys.push(k);
            }
        }
        let n = total as f64;
        0.5 * keys
            .into_iter()
            .map(|k| {
                let exact = self.prob_of(k);
                let emp = counts.get(k).copied().unwrap_or(0) as f64 / n;
                (exact - emp).abs()
            })
            .sum::<f64>()
    }
}

fn check_enum_cap(vocab_size: usize, depth: usize, cap: u128) -> Result<()> {
    let mut bound: u128 = 1;
    for _ in 0..depth {
        bound = bound.saturating_mul(vocab_size as u128);
        if bound > cap {
            return Err(Error::EnumerationCapExceeded { bound, cap });
        }
    }
    Ok(())
}

fn expand(
    policy: &AutoregressivePolicy,
    prompt: PromptId,
    stem: Vec<TokenId>,
    stem_prob: f64,
    entries: &mut BTreeMap<Vec<TokenId>, f64>,
) {
    let ctx = match stem.last() {
        None => policy.ctx_begin(),
        Some(&t) => policy.ctx_after(t),
    };
    let probs = policy.next_token_probs(prompt, ctx);
    for (t, &p) in probs.iter().enumerate() {
        let mut seq = stem.clone();
        seq.push(t);
        let prob = stem_prob * p;
        if t == EOS || seq.len() == policy.max_len() {
            *entries.entry(seq).or_insert(0.0) += prob;
        } else {
            expand(policy, prompt, seq, prob, entries);
        }
    }
}

/// Exhaustively enumerate every terminated sequence of `policy` for
/// `prompt`, with exact probabilities. Errors when the enumeration bound
/// `|V|^max_len` exceeds `cap`.
pub fn enumerate_policy(
    policy: &AutoregressivePolicy,
    prompt: PromptId,
    cap: u128,
) -> Result<SequenceDistribution> {
    check_enum_cap(policy.vocab().len(), policy.max_len(), cap)?;
    let mut entries = BTreeMap::new();
    expand(policy, prompt, Vec::new(), 1.0, &mut entries);
    Ok(SequenceDistribution { entries })
}

/// Enumerate the sequence distribution induced by forcing `prefix` and
/// letting `policy` continue. The prefix carries probability one.
pub fn enumerate_with_prefix(
    policy: &AutoregressivePolicy,
    prompt: PromptId,
    prefix: &TokenPrefix,
    cap: u128,
) -> Result<SequenceDistribution> {
    if prefix.len() >= policy.max_len() {
        return Err(Error::PrefixExceedsMaxLen {
            prefix_len: prefix.len(),
            max_len: policy.max_len(),
        });
    }
    if let Some(&bad) = prefix.tokens().iter().find(|t| !policy.vocab().contains(**t)) {
        return Err(Error::TokenOutOfRange {
            token: bad,
            vocab_size: policy.vocab().len(),
        });
    }
    let depth = policy.max_len() - prefix.len();
    check_enum_cap(policy.vocab().len(), depth, cap)?;
    let mut entries = BTreeMap::new();
    expand(policy, prompt, prefix.tokens().to_vec(), 1.0, &mut entries);
    Ok(SequenceDistribution { entries })
}

/// Flatten a tabular policy into an explicit distribution over its
/// enumerated sequence space.
pub fn flatten_policy(
    policy: &AutoregressivePolicy,
    prompt: PromptId,
    cap: u128,
) -> Result<FlatDistribution> {
    enumerate_policy(policy, prompt, cap)?.to_flat()
}

// ---------------------------------------------------------------------------
// Random instance generation and sweeps
// ---------------------------------------------------------------------------

/// Reward scheme for generated instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardScheme {
    /// 0/1 rewards, rejection-sampled to contain both values.
    Binary,
    /// Uniform rewards in `[0, 1)` with a guaranteed spread.
    Continuous,
}

/// How the scored distribution's energies are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaChoice {
    /// Energies are the log of `pi`, so the scored distribution equals the
    /// detached rollout distribution.
    DetachedPi,
    /// Independent random energies (a strictly positive softmax).
    Random,
}

fn random_simplex<R: Rng>(n: usize, rng: &mut R) -> FlatDistribution {
    // Dirichlet(1, ..., 1) via exponential spacings; redrawn until strictly
    // positive with a little margin
    loop {
        let gammas: Vec<f64> = (0..n)
            .map(|_| -rng.gen::<f64>().max(1e-300).ln())
            .collect();
        let sum: f64 = gammas.iter().sum();
        let probs: Vec<f64> = gammas.iter().map(|g| g / sum).collect();
        if probs.iter().all(|&p| p > 1e-9) {
            return FlatDistribution { probs };
        }
    }
}

/// Draw one random instance with `n` actions. Instances violating the
/// nonzero-advantage hypothesis are rejection-sampled away, so the tilt
/// operations are always applicable.
pub fn random_instance<R: Rng>(
    n: usize,
    scheme: RewardScheme,
    theta: ThetaChoice,
    rng: &mut R,
) -> FlatInstance {
    assert!(n >= 2, "instances need at least two actions");
    let pi = random_simplex(n, rng);
    let pi_tc = random_simplex(n, rng);
    let rewards = loop {
        let candidate: Vec<f64> = match scheme {
            RewardScheme::Binary => (0..n).map(|_| f64::from(rng.gen::<bool>())).collect(),
            RewardScheme::Continuous => (0..n).map(|_| rng.gen::<f64>()).collect(),
        };
        let lo = candidate.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = candidate.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > 1e-3 {
            break candidate;
        }
    };
    let theta_energies = match theta {
        ThetaChoice::DetachedPi => pi.probs().iter().map(|p| p.ln()).collect(),
        ThetaChoice::Random => (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    };
    FlatInstance {
        pi,
        pi_tc,
        rewards,
        theta_energies,
    }
}

/// Result of one randomized sweep.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub name: &'static str,
    pub instances: usize,
    pub failures: usize,
    pub max_violation: f64,
    pub worst: Option<String>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn sweep_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sweep the tilt-validity guarantee: entries of the tilted reference stay
/// above [`TILT_NEG_TOL`], total mass stays within [`MASS_TOL`] of one, and
/// the tilt moves probability in the direction of the advantage sign.
pub fn tilt_validity_sweep(count: usize, seed: u64) -> SweepReport {
    let mut rng = sweep_rng(seed, 1);
    let mut failures = 0;
    let mut max_violation: f64 = 0.0;
    let mut worst = None;
    for i in 0..count {
        let n = 2 + (i % 7);
        let inst = random_instance(n, RewardScheme::Continuous, ThetaChoice::Random, &mut rng);
        let violation = match tilted_reference(&inst.pi, &inst.pi_tc, &inst.rewards) {
            Ok(tilde) => {
                let mass: f64 = tilde.probs().iter().sum();
                let min_entry = tilde.probs().iter().cloned().fold(f64::INFINITY, f64::min);
                let adv = flat_advantages(&inst.pi_tc, &inst.rewards);
                let sign_bad = (0..n).any(|a| {
                    let delta = tilde.get(a) - inst.pi.get(a);
                    (adv[a] > 1e-9 && delta <= 0.0) || (adv[a] < -1e-9 && delta >= 1e-12)
                });
                let mut v = (mass - 1.0).abs().max((-min_entry).max(0.0));
                if sign_bad {
                    v = v.max(1.0);
                }
                v
            }
            // rejection sampling guarantees the hypothesis, so an error here
            // is itself a failure
            Err(_) => 1.0,
        };
        if violation > MASS_TOL {
            failures += 1;
            if violation > max_violation {
                worst = Some(inst.dump());
            }
        }
        max_violation = max_violation.max(violation);
    }
    SweepReport {
        name: "tilt-validity",
        instances: count,
        failures,
        max_violation,
        worst,
    }
}

/// Sweep the gradient-equivalence guarantee at the detached evaluation
/// point, and check both analytic gradients against central finite
/// differences of their scalar objectives.
///
/// The reported violation is normalized so that 1.0 sits exactly at the
/// tolerance: 1e-10 entrywise deviation between the two analytic gradients,
/// 1e-5 relative deviation against finite differences (step 1e-5).
pub fn gradient_equivalence_sweep(count: usize, seed: u64) -> SweepReport {
    let mut rng = sweep_rng(seed, 2);
    let mut failures = 0;
    let mut max_violation: f64 = 0.0;
    let mut worst = None;
    for i in 0..count {
        let n = 2 + (i % 7);
        let inst = random_instance(
            n,
            RewardScheme::Continuous,
            ThetaChoice::DetachedPi,
            &mut rng,
        );
        let violation = (|| -> Result<f64> {
            let tilde = tilted_reference(&inst.pi, &inst.pi_tc, &inst.rewards)?;
            let g_kl = neg_kl_grad(&tilde, &inst.theta_energies);
            let g_tilt = tilt_objective_grad(&inst.pi, &inst.pi_tc, &inst.rewards)?;
            let equiv_dev = g_kl
                .iter()
                .zip(&g_tilt)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let fd_kl = central_diff(|q| neg_kl(&tilde, q), &inst.theta_energies, 1e-5);
            let fd_tilt = central_diff(
                |q| tilt_objective(&inst.pi, &inst.pi_tc, &inst.rewards, q).unwrap(),
                &inst.theta_energies,
                1e-5,
            );
            let rel = |a: &[f64], f: &[f64]| {
                a.iter()
                    .zip(f)
                    .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
                    .fold(0.0f64, f64::max)
            };
            let fd_dev = rel(&g_kl, &fd_kl).max(rel(&g_tilt, &fd_tilt));
            Ok((equiv_dev / 1e-10).max(fd_dev / 1e-5))
        })()
        .unwrap_or(f64::INFINITY);
        if violation > 1.0 {
            failures += 1;
            if violation > max_violation {
                worst = Some(inst.dump());
            }
        }
        max_violation = max_violation.max(violation);
    }
    SweepReport {
        name: "gradient-equivalence",
        instances: count,
        failures,
        max_violation,
        worst,
    }
}

/// Sweep the surrogate bound on 0/1-reward instances with random strictly
/// positive scored distributions; also checks that both sides are
/// nonpositive.
pub fn surrogate_bound_sweep(count: usize, seed: u64) -> SweepReport {
    let mut rng = sweep_rng(seed, 3);
    let mut failures = 0;
    let mut max_violation: f64 = 0.0;
    let mut worst = None;
    for i in 0..count {
        let n = 2 + (i % 7);
        let inst = random_instance(n, RewardScheme::Binary, ThetaChoice::Random, &mut rng);
        let lambda = match i % 4 {
            0 => 0.25,
            1 => 1.0,
            2 => 3.0,
            _ => rng.gen_range(0.0..5.0),
        };
        let violation = match surrogate_bound_check(&inst, lambda) {
            Ok(check) => (check.lhs - check.rhs)
                .max(check.lhs - 1e-12)
                .max(check.rhs - 1e-12)
                .max(0.0),
            Err(_) => 1.0,
        };
        if violation > 1e-9 {
            failures += 1;
            if violation > max_violation {
                worst = Some(inst.dump());
            }
        }
        max_violation = max_violation.max(violation);
    }
    SweepReport {
        name: "surrogate-bound",
        instances: count,
        failures,
        max_violation,
        worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Sequence;
    use crate::vocab::Vocabulary;
    use rand::SeedableRng;

    /// The worked three-action instance used throughout the module docs:
    /// rollout [0.5, 0.3, 0.2], conditional [0.2, 0.5, 0.3], rewards
    /// [1, 0, 0]. Mean reward under the conditional is 0.2, advantages
    /// [0.8, -0.2, -0.2], tilt candidates {3.0, 10/3}.
    fn worked_instance() -> FlatInstance {
        FlatInstance {
            pi: FlatDistribution::new(vec![0.5, 0.3, 0.2]).unwrap(),
            pi_tc: FlatDistribution::new(vec![0.2, 0.5, 0.3]).unwrap(),
            rewards: vec![1.0, 0.0, 0.0],
            theta_energies: vec![0.0, 0.0, 0.0],
        }
    }

    #[test]
    fn advantages_are_zero_mean() {
        let d = FlatDistribution::uniform(2);
        assert_eq!(flat_advantages(&d, &[1.0, 0.0]), vec![0.5, -0.5]);

        let d = FlatDistribution::new(vec![0.2, 0.5, 0.3]).unwrap();
        let adv = flat_advantages(&d, &[1.0, 0.0, 0.0]);
        assert!((adv[0] - 0.8).abs() < 1e-12);
        assert!((adv[1] + 0.2).abs() < 1e-12);
        assert!((adv[2] + 0.2).abs() < 1e-12);
        let weighted: f64 = d.probs().iter().zip(&adv).map(|(p, a)| p * a).sum();
        assert!(weighted.abs() < 1e-12);

        let constant = flat_advantages(&d, &[0.7, 0.7, 0.7]);
        assert!(constant.iter().all(|a| a.abs() < 1e-12));
    }

    #[test]
    fn tilt_coefficient_worked_values() {
        let inst = worked_instance();
        let rho = tilt_coefficient(&inst.pi, &inst.pi_tc, &inst.rewards).unwrap();
        assert!((rho - 3.0).abs() < 1e-12, "rho = {rho}");

        // two-action uniform instance: single candidate, rho = 2
        let u = FlatDistribution::uniform(2);
        let rho2 = tilt_coefficient(&u, &u, &[1.0, 0.0]).unwrap();
        assert!((rho2 - 2.0).abs() < 1e-12);

        // constant rewards violate the hypothesis
        assert!(matches!(
            tilt_coefficient(&u, &u, &[0.5, 0.5]),
            Err(Error::AssumptionViolated)
        ));
    }

    #[test]
    fn tilted_reference_worked_values() {
        let inst = worked_instance();
        let tilde = tilted_reference(&inst.pi, &inst.pi_tc, &inst.rewards).unwrap();
        assert!((tilde.get(0) - 0.98).abs() < 1e-12);
        assert!(tilde.get(1).abs() < 1e-12, "minimizing entry must be 0");
        assert!((tilde.get(2) - 0.02).abs() < 1e-12);

        let u = FlatDistribution::uniform(2);
        let tilde2 = tilted_reference(&u, &u, &[1.0, 0.0]).unwrap();
        assert!((tilde2.get(0) - 1.0).abs() < 1e-12);
        assert!(tilde2.get(1).abs() < 1e-12);
    }

    #[test]
    fn neg_kl_closed_forms() {
        // p = softmax(q) gives exactly zero
        let q = vec![0.3, -0.7, 1.1];
        let p = FlatDistribution::from_energies(&q);
        assert!(neg_kl(&p, &q).abs() < 1e-12);

        // point mass vs uniform over two actions: log(1/2)
        let point = FlatDistribution::new(vec![1.0, 0.0]).unwrap();
        let v = neg_kl(&point, &[0.0, 0.0]);
        assert!((v - 0.5f64.ln()).abs() < 1e-12, "got {v}");

        // tilted worked instance vs uniform over three actions; value
        // recomputed by direct summation: 0.98*ln(1/(3*0.98)) +
        // 0.02*ln(1/(3*0.02)) = -1.000573175388...
        let tilde = FlatDistribution::new(vec![0.98, 0.0, 0.02]).unwrap();
        let v = neg_kl(&tilde, &[0.0, 0.0, 0.0]);
        assert!((v - (-1.000573175388)).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn neg_kl_grad_matches_subtraction_and_fd() {
        let q = vec![0.2, -0.4, 0.9];
        let p = FlatDistribution::from_energies(&q);
        assert!(neg_kl_grad(&p, &q).iter().all(|g| g.abs() < 1e-12));

        let inst = worked_instance();
        let tilde = tilted_reference(&inst.pi, &inst.pi_tc, &inst.rewards).unwrap();
        let theta: Vec<f64> = inst.pi.probs().iter().map(|p| p.ln()).collect();
        let g = neg_kl_grad(&tilde, &theta);
        assert!((g[0] - 0.48).abs() < 1e-10);
        assert!((g[1] + 0.30).abs() < 1e-10);
        assert!((g[2] + 0.18).abs() < 1e-10);

        let fd = central_diff(|e| neg_kl(&tilde, e), &theta, 1e-5);
        for (a, f) in g.iter().zip(&fd) {
            assert!((a - f).abs() / f.abs().max(1.0) < 1e-6);
        }
    }

    #[test]
    fn gradient_equivalence_at_detached_point() {
        let inst = worked_instance();
        let theta: Vec<f64> = inst.pi.probs().iter().map(|p| p.ln()).collect();
        let tilde = tilted_reference(&inst.pi, &inst.pi_tc, &inst.rewards).unwrap();
        let g_kl = neg_kl_grad(&tilde, &theta);
        let g_tilt = tilt_objective_grad(&inst.pi, &inst.pi_tc, &inst.rewards).unwrap();
        for (a, b) in g_kl.iter().zip(&g_tilt) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((g_tilt[0] - 0.48).abs() < 1e-12);
        assert!((g_tilt[1] + 0.30).abs() < 1e-12);
        assert!((g_tilt[2] + 0.18).abs() < 1e-12);

        assert!(matches!(
            tilt_objective_grad(&inst.pi, &inst.pi_tc, &[0.0, 0.0, 0.0]),
            Err(Error::AssumptionViolated)
        ));
    }

    #[test]
    fn mixture_and_bound_coefficient() {
        let inst = worked_instance();
        let m0 = mix_flat(&inst.pi, &inst.pi_tc, 0.0);
        assert_eq!(m0.probs(), inst.pi.probs());

        let m1 = mix_flat(&inst.pi, &inst.pi_tc, 1.0);
        assert!((m1.get(0) - 0.35).abs() < 1e-12);
        assert!((m1.get(1) - 0.40).abs() < 1e-12);
        assert!((m1.get(2) - 0.25).abs() < 1e-12);

        let m_inf = mix_flat(&inst.pi, &inst.pi_tc, 1e9);
        for (a, b) in m_inf.probs().iter().zip(inst.pi_tc.probs()) {
            assert!((a - b).abs() < 1e-9);
        }

        assert_eq!(mix_bound_coefficient(0.0), 0.0);
        assert!((mix_bound_coefficient(1.0) - 0.25).abs() < 1e-15);
        assert!((mix_bound_coefficient(3.0) - 0.0625).abs() < 1e-15);
        // peak at 1
        for l in [0.2, 0.5, 2.0, 7.0] {
            assert!(mix_bound_coefficient(l) < 0.25);
        }
    }

    #[test]
    fn surrogate_bound_worked_values() {
        // at lambda = 1 with a uniform scored distribution:
        // mix = [0.35, 0.40, 0.25], A_mix(a0) = 0.65, A_pi(a0) = 0.5,
        // A_tc(a0) = 0.8, phi = 1/4, so
        // lhs = 0.35 * 0.65 * ln(1/3) = -0.2499342957...
        // rhs = 0.25 * (0.25 + 0.16) * ln(1/3) = -0.1126077596...
        let inst = worked_instance();
        let check = surrogate_bound_check(&inst, 1.0).unwrap();
        assert!(
            (check.lhs - (-0.249934295672)).abs() < 1e-9,
            "lhs {}",
            check.lhs
        );
        assert!(
            (check.rhs - (-0.112607759588)).abs() < 1e-9,
            "rhs {}",
            check.rhs
        );
        assert!(check.holds);
        assert!(check.lhs <= 0.0 && check.rhs <= 0.0);

        // empty correct set: both sides zero
        let none = FlatInstance {
            rewards: vec![0.0, 0.0, 0.0],
            ..worked_instance()
        };
        let z = surrogate_bound_check(&none, 1.0).unwrap();
        assert_eq!(z.lhs, 0.0);
        assert_eq!(z.rhs, 0.0);
        assert!(z.holds);

        // non-binary rewards are rejected
        let bad = FlatInstance {
            rewards: vec![0.5, 0.0, 0.0],
            ..worked_instance()
        };
        assert!(surrogate_bound_check(&bad, 1.0).is_err());
    }

    #[test]
    fn sweeps_pass_at_reduced_size() {
        let r1 = tilt_validity_sweep(2_000, 7);
        assert!(r1.passed(), "{r1:?}");
        let r2 = gradient_equivalence_sweep(500, 7);
        assert!(r2.passed(), "{r2:?}");
        let r3 = surrogate_bound_sweep(5_000, 7);
        assert!(r3.passed(), "{r3:?}");
    }

    #[test]
    fn enumeration_matches_log_prob_and_sums_to_one() {
        let vocab = Vocabulary::new(1, 0).unwrap();
        let mut policy = AutoregressivePolicy::new(1, vocab, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = policy.vocab().len();
        for c in 0..=v {
            for n in 0..v {
                policy.set_energy(0, c, n, rng.gen_range(-1.0..1.0));
            }
        }
        let dist = enumerate_policy(&policy, 0, DEFAULT_ENUM_CAP).unwrap();
        assert!((dist.total_mass() - 1.0).abs() < 1e-9);
        for (tokens, &p) in dist.iter() {
            let lp = policy
                .log_prob(0, &Sequence::new(tokens.clone(), true))
                .unwrap();
            assert!((lp.exp() - p).abs() < 1e-12);
        }
        assert!(dist.to_flat().is_ok());
    }

    #[test]
    fn enumeration_of_saturated_policy_concentrates() {
        let vocab = Vocabulary::new(1, 0).unwrap();
        let mut policy = AutoregressivePolicy::new(1, vocab, 4);
        let begin = policy.ctx_begin();
        policy.set_energy(0, begin, EOS, 50.0);
        let dist = enumerate_policy(&policy, 0, DEFAULT_ENUM_CAP).unwrap();
        assert!(dist.prob_of(&[EOS]) > 1.0 - 1e-9);
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let vocab = Vocabulary::new(6, 5).unwrap(); // 15 tokens
        let policy = AutoregressivePolicy::new(1, vocab, 8);
        // 15^8 = 2.56e9 > 1e6
        assert!(matches!(
            enumerate_policy(&policy, 0, DEFAULT_ENUM_CAP),
            Err(Error::EnumerationCapExceeded { .. })
        ));
    }

    #[test]
    fn flat_distribution_validation() {
        assert!(FlatDistribution::new(vec![0.5, 0.5]).is_ok());
        assert!(FlatDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(FlatDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(FlatDistribution::new(vec![1.0]).is_err());
    }
}
