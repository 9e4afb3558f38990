//! Verifier, reward shaping, and group-relative advantage estimators.
//!
//! Rewards are binary at the core: 1 when the response's summary ends with
//! the ground-truth answer token, 0 otherwise. Two shaping terms apply on
//! top:
//!
//! - a format penalty `gamma` subtracted from responses whose think/summary
//!   structure is malformed, keeping correct-but-malformed rewards positive
//!   but reduced;
//! - an optional length penalty `eta * (len_i - len*)` relative to the
//!   shortest-reasoning correct member of the rollout group, used by the
//!   adaptive-thinking baseline.
//!
//! Advantages are group-relative: reward minus the group mean, with a
//! standardized variant that also divides by the population standard
//! deviation.

use crate::policy::Sequence;
use crate::vocab::{PromptId, TokenId, EOS, THINK_CLOSE, THINK_OPEN};
use crate::{Error, Result};

/// Difficulty tag controlling how noisy the initial policy's answer is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Difficulty {
    Easy,
    Hard,
}

/// A factual query: prompt id, ground-truth answer token, difficulty tag.
#[derive(Debug, Clone, Copy)]
pub struct Task {
    pub prompt: PromptId,
    pub ground_truth: TokenId,
    pub difficulty: Difficulty,
}

/// Shaping constants.
#[derive(Debug, Clone, Copy)]
pub struct RewardConfig {
    /// Format penalty, strictly inside (0, 1).
    pub format_penalty: f64,
    /// Length-penalty scale for the adaptive-thinking baseline.
    pub length_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            format_penalty: 0.5,
            length_penalty: 1e-3,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.format_penalty > 0.0 && self.format_penalty < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "format penalty {} must lie strictly inside (0, 1)",
                self.format_penalty
            )));
        }
        if self.length_penalty < 0.0 || !self.length_penalty.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "length penalty {} must be finite and nonnegative",
                self.length_penalty
            )));
        }
        Ok(())
    }
}

/// A response is well-formed when it opens with `<think>`, contains exactly
/// one `<think>` and one `</think>`, carries at least one non-`<eos>` token
/// after `</think>`, and is terminated.
pub fn check_format(seq: &Sequence) -> bool {
    if !seq.terminated || seq.tokens.first() != Some(&THINK_OPEN) {
        return false;
    }
    let opens = seq.tokens.iter().filter(|&&t| t == THINK_OPEN).count();
    let closes = seq.tokens.iter().filter(|&&t| t == THINK_CLOSE).count();
    if opens != 1 || closes != 1 {
        return false;
    }
    let close_pos = seq.tokens.iter().position(|&t| t == THINK_CLOSE).unwrap();
    seq.tokens[close_pos + 1..].iter().any(|&t| t != EOS)
}

/// Extract the summary segment: tokens after the last `</think>` and before
/// `<eos>`, or the whole response (minus `<eos>`) when no `</think>` exists.
fn summary_segment(seq: &Sequence) -> &[TokenId] {
    let start = seq
        .tokens
        .iter()
        .rposition(|&t| t == THINK_CLOSE)
        .map(|p| p + 1)
        .unwrap_or(0);
    let end = seq.tokens[start..]
        .iter()
        .position(|&t| t == EOS)
        .map(|p| start + p)
        .unwrap_or(seq.tokens.len());
    &seq.tokens[start..end]
}

/// Exact-match verification: the summary's final non-`<eos>` token must be
/// the ground-truth answer. Correctness is judged independently of format.
pub fn verify_answer(task: &Task, seq: &Sequence) -> bool {
    summary_segment(seq).last() == Some(&task.ground_truth)
}

/// Binary reward with the format penalty applied:
/// `1[correct] - gamma * 1[malformed]`.
pub fn reward_with_format(task: &Task, seq: &Sequence, cfg: &RewardConfig) -> f64 {
    let base = if verify_answer(task, seq) { 1.0 } else { 0.0 };
    let penalty = if check_format(seq) {
        0.0
    } else {
        cfg.format_penalty
    };
    base - penalty
}

/// Token count strictly between `<think>` and the first `</think>`; zero
/// when the response has no well-formed think block.
pub fn reasoning_length(seq: &Sequence) -> usize {
    if seq.tokens.first() != Some(&THINK_OPEN) {
        return 0;
    }
    match seq.tokens.iter().position(|&t| t == THINK_CLOSE) {
        Some(close) => close.saturating_sub(1),
        None => 0,
    }
}

/// Per-group reward bookkeeping: shaped rewards plus the raw signals they
/// were derived from.
#[derive(Debug, Clone)]
pub struct GroupRewards {
    pub rewards: Vec<f64>,
    pub formats_ok: Vec<bool>,
    pub reasoning_lengths: Vec<usize>,
    pub correct: Vec<bool>,
}

impl GroupRewards {
    pub fn new(
        rewards: Vec<f64>,
        formats_ok: Vec<bool>,
        reasoning_lengths: Vec<usize>,
        correct: Vec<bool>,
    ) -> Result<Self> {
        let g = rewards.len();
        if g < 2 {
            return Err(Error::GroupTooSmall(g));
        }
        if formats_ok.len() != g || reasoning_lengths.len() != g || correct.len() != g {
            return Err(Error::InvalidConfig(
                "group reward lists must share one length".into(),
            ));
        }
        Ok(Self {
            rewards,
            formats_ok,
            reasoning_lengths,
            correct,
        })
    }

    /// Score a group of rollout sequences for one task.
    pub fn from_sequences(task: &Task, seqs: &[Sequence], cfg: &RewardConfig) -> Result<Self> {
        let rewards = seqs
            .iter()
            .map(|s| reward_with_format(task, s, cfg))
            .collect();
        let formats_ok = seqs.iter().map(check_format).collect();
        let reasoning_lengths = seqs.iter().map(reasoning_length).collect();
        let correct = seqs.iter().map(|s| verify_answer(task, s)).collect();
        Self::new(rewards, formats_ok, reasoning_lengths, correct)
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Subtract `eta * (len_i - len*)` from every reward, where `len*` is the
/// reasoning length of the shortest-reasoning correct member. When no member
/// is correct the group is returned unchanged.
pub fn apply_length_penalty(group: &GroupRewards, cfg: &RewardConfig) -> GroupRewards {
    let shortest_correct = group
        .correct
        .iter()
        .zip(&group.reasoning_lengths)
        .filter(|(c, _)| **c)
        .map(|(_, &l)| l)
        .min();
    let Some(len_star) = shortest_correct else {
        return group.clone();
    };
    let mut shaped = group.clone();
    for (r, &len) in shaped.rewards.iter_mut().zip(&group.reasoning_lengths) {
        *r -= cfg.length_penalty * (len as f64 - len_star as f64);
    }
    shaped
}

/// Mean-baseline advantages: `r_i - mean(r)`. Exactly zero for a constant
/// group.
pub fn advantages_mean(rewards: &[f64]) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::GroupTooSmall(g));
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(vec![0.0; g]);
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

/// Standardized group advantages: `(r_i - mean) / std`, with the population
/// standard deviation (divide by G). A zero-spread group maps to all zeros.
pub fn advantages_grpo(rewards: &[f64]) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::GroupTooSmall(g));
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(vec![0.0; g]);
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}
