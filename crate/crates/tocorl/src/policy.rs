//! Tabular autoregressive sequence policy.
//!
//! The policy keeps one energy table indexed by `(prompt, context, next
//! token)`, where the context is the previous token or a reserved
//! begin-of-sequence row. The next-token distribution at any context is the
//! softmax of its energy row, so the policy is strictly positive everywhere
//! and `log_prob` decomposes into a sum of per-step log-softmax terms.
//!
//! Gradients of `log_prob` with respect to the energies have the usual
//! softmax form, `one_hot(observed) - softmax(row)` per visited row, which
//! makes each touched row exactly zero-sum.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::vocab::{PromptId, TokenId, Vocabulary, EOS};
use crate::{Error, Result};

/// A generated response: token ids plus a termination flag.
///
/// A sequence is terminated when its last token is `<eos>` or when it was cut
/// at the policy's maximum length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub tokens: Vec<TokenId>,
    pub terminated: bool,
}

impl Sequence {
    pub fn new(tokens: Vec<TokenId>, terminated: bool) -> Self {
        Self { tokens, terminated }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn ends_with_eos(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }
}

/// Sparse accumulator for `d log_prob / d energy` entries.
///
/// Keys are `(prompt, context row, next token)`. A `BTreeMap` keeps
/// iteration order fixed so accumulation is bit-reproducible across runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogProbGradient {
    entries: BTreeMap<(PromptId, usize, TokenId), f64>,
}

impl LogProbGradient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, prompt: PromptId, ctx: usize, next: TokenId) -> f64 {
        self.entries.get(&(prompt, ctx, next)).copied().unwrap_or(0.0)
    }

    pub fn add(&mut self, prompt: PromptId, ctx: usize, next: TokenId, value: f64) {
        *self.entries.entry((prompt, ctx, next)).or_insert(0.0) += value;
    }

    /// Accumulate `scale * other` into `self`.
    pub fn add_scaled(&mut self, other: &LogProbGradient, scale: f64) {
        for (&key, &v) in &other.entries {
            *self.entries.entry(key).or_insert(0.0) += scale * v;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.entries.values_mut() {
            *v *= factor;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(PromptId, usize, TokenId), &f64)> {
        self.entries.iter()
    }

    /// Distinct `(prompt, context)` rows touched by this gradient.
    pub fn touched_rows(&self) -> impl Iterator<Item = (PromptId, usize)> + '_ {
        let mut last = None;
        self.entries.keys().filter_map(move |&(p, c, _)| {
            if last == Some((p, c)) {
                None
            } else {
                last = Some((p, c));
                Some((p, c))
            }
        })
    }
}

/// Numerically stable softmax (max-subtracted) of one energy row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&e| (e - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Log-softmax of one row evaluated at a single index.
fn log_softmax_at(row: &[f64], idx: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = row.iter().map(|&e| (e - max).exp()).sum::<f64>().ln();
    (row[idx] - max) - log_sum
}

/// Trainable tabular policy over `(prompt, previous token)` contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoregressivePolicy {
    /// Flat table, laid out `[prompt][context][next]`. The context axis has
    /// `vocab.len() + 1` rows; the final row is the begin-of-sequence
    /// context.
    energies: Vec<f64>,
    num_prompts: usize,
    vocab: Vocabulary,
    max_len: usize,
}

impl AutoregressivePolicy {
    /// Create a policy with all energies zero (uniform next-token
    /// distributions everywhere).
    pub fn new(num_prompts: usize, vocab: Vocabulary, max_len: usize) -> Self {
        assert!(num_prompts > 0, "need at least one prompt");
        assert!(max_len > 0, "max_len must be positive");
        let v = vocab.len();
        Self {
            energies: vec![0.0; num_prompts * (v + 1) * v],
            num_prompts,
            vocab,
            max_len,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Context row index for "previous token was `t`".
    pub fn ctx_after(&self, t: TokenId) -> usize {
        debug_assert!(t < self.vocab.len());
        t
    }

    /// Context row index for the start of a response.
    pub fn ctx_begin(&self) -> usize {
        self.vocab.len()
    }

    fn offset(&self, prompt: PromptId, ctx: usize, next: TokenId) -> usize {
        let v = self.vocab.len();
        debug_assert!(prompt < self.num_prompts && ctx <= v && next < v);
        (prompt * (v + 1) + ctx) * v + next
    }

    pub fn energy(&self, prompt: PromptId, ctx: usize, next: TokenId) -> f64 {
        self.energies[self.offset(prompt, ctx, next)]
    }

    pub fn set_energy(&mut self, prompt: PromptId, ctx: usize, next: TokenId, value: f64) {
        let o = self.offset(prompt, ctx, next);
        self.energies[o] = value;
    }

    fn row(&self, prompt: PromptId, ctx: usize) -> &[f64] {
        let v = self.vocab.len();
        let start = (prompt * (v + 1) + ctx) * v;
        &self.energies[start..start + v]
    }

    /// Exact next-token distribution at a context.
    pub fn next_token_probs(&self, prompt: PromptId, ctx: usize) -> Vec<f64> {
        softmax(self.row(prompt, ctx))
    }

    fn check_prompt(&self, prompt: PromptId) -> Result<()> {
        if prompt >= self.num_prompts {
            return Err(Error::PromptOutOfRange {
                prompt,
                num_prompts: self.num_prompts,
            });
        }
        Ok(())
    }

    /// Draw one token from a probability row using a single uniform draw.
    fn draw_token<R: Rng>(probs: &[f64], rng: &mut R) -> TokenId {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (t, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return t;
            }
        }
        probs.len() - 1
    }

    /// Sample one full sequence for `prompt`. Terminates at `<eos>` or at
    /// `max_len`, whichever comes first.
    pub fn sample<R: Rng>(&self, prompt: PromptId, rng: &mut R) -> Sequence {
        assert!(prompt < self.num_prompts, "prompt {prompt} out of range");
        let mut tokens = Vec::new();
        let mut ctx = self.ctx_begin();
        while tokens.len() < self.max_len {
            let probs = self.next_token_probs(prompt, ctx);
            let t = Self::draw_token(&probs, rng);
            tokens.push(t);
            if t == EOS {
                break;
            }
            ctx = self.ctx_after(t);
        }
        Sequence::new(tokens, true)
    }

    fn check_tokens(&self, seq: &Sequence) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        for &t in &seq.tokens {
            if !self.vocab.contains(t) {
                return Err(Error::TokenOutOfRange {
                    token: t,
                    vocab_size: self.vocab.len(),
                });
            }
        }
        Ok(())
    }

    /// Exact log-probability of a sequence: the sum of per-step next-token
    /// log-probabilities, the first step conditioned on the begin row.
    pub fn log_prob(&self, prompt: PromptId, seq: &Sequence) -> Result<f64> {
        self.check_prompt(prompt)?;
        self.check_tokens(seq)?;
        let mut total = 0.0;
        let mut ctx = self.ctx_begin();
        for &t in &seq.tokens {
            total += log_softmax_at(self.row(prompt, ctx), t);
            ctx = self.ctx_after(t);
        }
        Ok(total)
    }

    /// Analytic gradient of [`log_prob`](Self::log_prob) with respect to the
    /// energies. Each visited row contributes `one_hot(t) - softmax(row)`,
    /// so entries of any touched row sum to zero.
    pub fn log_prob_grad(&self, prompt: PromptId, seq: &Sequence) -> Result<LogProbGradient> {
        self.check_prompt(prompt)?;
        self.check_tokens(seq)?;
        let mut grad = LogProbGradient::new();
        let mut ctx = self.ctx_begin();
        for &t in &seq.tokens {
            let probs = self.next_token_probs(prompt, ctx);
            for (next, &p) in probs.iter().enumerate() {
                let indicator = if next == t { 1.0 } else { 0.0 };
                grad.add(prompt, ctx, next, indicator - p);
            }
            ctx = self.ctx_after(t);
        }
        Ok(grad)
    }

    /// Ascent update: `energy[idx] += step_size * grad[idx]` for every entry.
    pub fn apply_update(&mut self, grad: &LogProbGradient, step_size: f64) -> Result<()> {
        if !step_size.is_finite() {
            return Err(Error::NonFiniteUpdate(step_size));
        }
        for (&(p, c, n), &g) in grad.iter() {
            if !g.is_finite() {
                return Err(Error::NonFiniteUpdate(g));
            }
            let o = self.offset(p, c, n);
            self.energies[o] += step_size * g;
        }
        Ok(())
    }

    /// Serialize to the flat text format: a header, then one line per
    /// nonzero energy (`prompt ctx next energy`). The begin-of-sequence
    /// context is written with row index `vocab.len()`. Finite values
    /// round-trip exactly.
    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        writeln!(
            out,
            "tocorl-policy v1 prompts {} answers {} fillers {} max_len {}",
            self.num_prompts,
            self.vocab.num_answers(),
            self.vocab.num_fillers(),
            self.max_len
        )
        .expect("write to string");
        let v = self.vocab.len();
        for p in 0..self.num_prompts {
            for c in 0..=v {
                for n in 0..v {
                    let e = self.energy(p, c, n);
                    if e != 0.0 {
                        if !e.is_finite() {
                            return Err(Error::NonFiniteUpdate(e));
                        }
                        writeln!(out, "{p} {c} {n} {e}").expect("write to string");
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: "empty policy file".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let bad_header = || Error::Parse {
            line: 1,
            message: format!("malformed policy header: {header:?}"),
        };
        if fields.len() != 10
            || fields[0] != "tocorl-policy"
            || fields[1] != "v1"
            || fields[2] != "prompts"
            || fields[4] != "answers"
            || fields[6] != "fillers"
            || fields[8] != "max_len"
        {
            return Err(bad_header());
        }
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| bad_header());
        let num_prompts = parse_usize(fields[3])?;
        let num_answers = parse_usize(fields[5])?;
        let num_fillers = parse_usize(fields[7])?;
        let max_len = parse_usize(fields[9])?;
        let vocab = Vocabulary::new(num_answers, num_fillers)?;
        let mut policy = Self::new(num_prompts, vocab, max_len);
        let v = policy.vocab.len();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            if parts.len() != 4 {
                return Err(err(format!("expected 4 fields, got {}", parts.len())));
            }
            let p: usize = parts[0]
                .parse()
                .map_err(|_| err(format!("bad prompt id {:?}", parts[0])))?;
            let c: usize = parts[1]
                .parse()
                .map_err(|_| err(format!("bad context row {:?}", parts[1])))?;
            let n: usize = parts[2]
                .parse()
                .map_err(|_| err(format!("bad token id {:?}", parts[2])))?;
            let e: f64 = parts[3]
                .parse()
                .map_err(|_| err(format!("bad energy {:?}", parts[3])))?;
            if p >= num_prompts || c > v || n >= v {
                return Err(err(format!("index ({p}, {c}, {n}) out of table range")));
            }
            policy.set_energy(p, c, n, e);
        }
        Ok(policy)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }
}
