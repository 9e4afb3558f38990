//! Token-prefix construction and conditioned sampling.
//!
//! A token prefix opens a response with `<think>\n` followed by the first
//! tokens of a scripted provider's direct answer. Forcing such a prefix and
//! letting the base policy continue gives token-conditional sampling; mixing
//! it with normal sampling by a Bernoulli branch with normal-branch
//! probability `1 / (1 + lambda)` realizes the mixed rollout policy
//! `(pi + lambda * pi_tc) / (1 + lambda)`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::policy::{AutoregressivePolicy, Sequence};
use crate::vocab::{PromptId, TokenId, Vocabulary, EOS, NEWLINE, THINK_OPEN};
use crate::{Error, Result};

/// A forced initial token run: `<think>`, `\n`, then at least one provider
/// token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenPrefix {
    tokens: Vec<TokenId>,
}

impl TokenPrefix {
    /// Validate a prefix: length at least 3, opening with `<think>` and the
    /// newline token, and free of `<eos>`.
    pub fn new(tokens: Vec<TokenId>) -> Result<Self> {
        if tokens.len() < 3 {
            return Err(Error::PrefixTooShort(tokens.len()));
        }
        if tokens[0] != THINK_OPEN || tokens[1] != NEWLINE {
            return Err(Error::InvalidPrefix(
                "prefix must start with <think> followed by the newline token".into(),
            ));
        }
        if tokens.contains(&EOS) {
            return Err(Error::InvalidPrefix("prefix must not contain <eos>".into()));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Scripted stand-in for an instruct model: answers each prompt directly
/// with its stored answer token, correct with probability `accuracy` and a
/// uniformly random wrong answer otherwise.
#[derive(Debug, Clone)]
pub struct PrefixProvider {
    truths: Vec<TokenId>,
    answers: Vec<TokenId>,
    accuracy: f64,
}

impl PrefixProvider {
    pub fn new(vocab: &Vocabulary, truths: Vec<TokenId>, accuracy: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::InvalidConfig(format!(
                "provider accuracy {accuracy} outside [0, 1]"
            )));
        }
        if accuracy < 1.0 && vocab.num_answers() < 2 {
            return Err(Error::InvalidConfig(
                "a fallible provider needs at least two answer tokens".into(),
            ));
        }
        for &t in &truths {
            if !vocab.is_answer(t) {
                return Err(Error::InvalidConfig(format!(
                    "ground truth {t} is not an answer token"
                )));
            }
        }
        Ok(Self {
            truths,
            answers: vocab.answers().collect(),
            accuracy,
        })
    }

    pub fn num_prompts(&self) -> usize {
        self.truths.len()
    }

    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }

    pub fn truth(&self, prompt: PromptId) -> TokenId {
        self.truths[prompt]
    }

    /// Emit a direct-answer response for `prompt`: one answer token followed
    /// by `<eos>`. Never opens with `<think>`.
    pub fn respond<R: Rng>(&self, prompt: PromptId, rng: &mut R) -> Vec<TokenId> {
        let truth = self.truths[prompt];
        let answer = if rng.gen::<f64>() < self.accuracy {
            truth
        } else {
            // uniformly random wrong answer
            let wrong: Vec<TokenId> = self.answers.iter().copied().filter(|&a| a != truth).collect();
            wrong[rng.gen_range(0..wrong.len())]
        };
        vec![answer, EOS]
    }
}

/// Where a rollout came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Normal,
    TokenConditional,
}

/// One rollout with its origin recorded.
#[derive(Debug, Clone)]
pub struct RolloutSample {
    pub sequence: Sequence,
    pub origin: Origin,
    pub prompt: PromptId,
}

/// Build a `k`-token prefix from an already-generated provider response:
/// `<think>`, newline, then the first `k - 2` response tokens. Responses
/// shorter than `k - 2` (after dropping `<eos>`) are padded by repeating
/// their last token.
pub fn prefix_from_response(response: &[TokenId], k: usize) -> Result<TokenPrefix> {
    if k < 3 {
        return Err(Error::PrefixTooShort(k));
    }
    let body: Vec<TokenId> = response.iter().copied().take_while(|&t| t != EOS).collect();
    if body.is_empty() {
        return Err(Error::InvalidPrefix(
            "provider response has no tokens before <eos>".into(),
        ));
    }
    let mut tokens = vec![THINK_OPEN, NEWLINE];
    for i in 0..k - 2 {
        tokens.push(*body.get(i).unwrap_or_else(|| body.last().unwrap()));
    }
    TokenPrefix::new(tokens)
}

/// Draw a fresh provider response and build a `k`-token prefix from it.
pub fn build_prefix<R: Rng>(
    prompt: PromptId,
    provider: &PrefixProvider,
    k: usize,
    rng: &mut R,
) -> Result<TokenPrefix> {
    if k < 3 {
        return Err(Error::PrefixTooShort(k));
    }
    let response = provider.respond(prompt, rng);
    prefix_from_response(&response, k)
}

/// Token-conditional sampling: force `prefix`, then continue from the base
/// policy one token at a time. The returned sequence starts with exactly the
/// prefix tokens.
pub fn sample_tc<R: Rng>(
    policy: &AutoregressivePolicy,
    prompt: PromptId,
    prefix: &TokenPrefix,
    rng: &mut R,
) -> Result<Sequence> {
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
    let mut tokens = prefix.tokens().to_vec();
    let mut ctx = policy.ctx_after(*tokens.last().expect("prefix is nonempty"));
    while tokens.len() < policy.max_len() {
        let probs = policy.next_token_probs(prompt, ctx);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = probs.len() - 1;
        for (t, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = t;
                break;
            }
        }
        tokens.push(chosen);
        if chosen == EOS {
            break;
        }
        ctx = policy.ctx_after(chosen);
    }
    Ok(Sequence::new(tokens, true))
}

/// One cached provider response per prompt, refreshed once per pass over the
/// dataset.
pub type PrefixCache = BTreeMap<PromptId, Vec<TokenId>>;

/// Pre-generate one provider response per prompt. Every prefix built for a
/// prompt within the same pass reuses the cached response.
pub fn pregenerate<R: Rng>(
    prompts: &[PromptId],
    provider: &PrefixProvider,
    rng: &mut R,
) -> PrefixCache {
    let mut cache = PrefixCache::new();
    for &p in prompts {
        cache.insert(p, provider.respond(p, rng));
    }
    cache
}

/// Write a cache as `prompt_id<TAB>token ids` for inspection.
pub fn dump_cache(cache: &PrefixCache, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (prompt, tokens) in cache {
        let ids: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
        out.push_str(&format!("{prompt}\t{}\n", ids.join(" ")));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Mixed-policy sampling: with probability `1 / (1 + lambda)` sample
/// normally, otherwise force a prefix built from the prompt's cached
/// provider response and continue token-conditionally.
pub fn sample_mixed<R: Rng>(
    policy: &AutoregressivePolicy,
    prompt: PromptId,
    cache: &PrefixCache,
    lambda: f64,
    k: usize,
    rng: &mut R,
) -> Result<RolloutSample> {
    assert!(lambda >= 0.0, "mixing weight must be nonnegative");
    let u: f64 = rng.gen();
    if u < 1.0 / (1.0 + lambda) {
        Ok(RolloutSample {
            sequence: policy.sample(prompt, rng),
            origin: Origin::Normal,
            prompt,
        })
    } else {
        let response = cache
            .get(&prompt)
            .ok_or(Error::MissingPregeneration(prompt))?;
        let prefix = prefix_from_response(response, k)?;
        Ok(RolloutSample {
            sequence: sample_tc(policy, prompt, &prefix, rng)?,
            origin: Origin::TokenConditional,
            prompt,
        })
    }
}
