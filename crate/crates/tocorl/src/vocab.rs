//! Token vocabulary with fixed structural roles.
//!
//! Every policy in this crate shares one vocabulary layout: four structural
//! tokens (`<think>`, `\n`, `</think>`, `<eos>`), then `M` answer tokens,
//! then `K` filler tokens. Token ids are dense, so the layout is fully
//! determined by `(M, K)` and round-trips through two integers.

use crate::{Error, Result};

/// Dense token id in `0..vocab.len()`.
pub type TokenId = usize;

/// Prompt (query) identifier; indexes the first axis of a policy table.
pub type PromptId = usize;

/// Fixed ids for the four structural tokens.
pub const THINK_OPEN: TokenId = 0;
pub const NEWLINE: TokenId = 1;
pub const THINK_CLOSE: TokenId = 2;
pub const EOS: TokenId = 3;

const NUM_ROLES: usize = 4;

/// An ordered token set: structural roles, answer tokens, filler tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    num_answers: usize,
    num_fillers: usize,
}

impl Vocabulary {
    /// Build a vocabulary with `num_answers >= 1` answer tokens and
    /// `num_fillers` filler tokens.
    pub fn new(num_answers: usize, num_fillers: usize) -> Result<Self> {
        if num_answers == 0 {
            return Err(Error::InvalidVocabulary(
                "at least one answer token is required".into(),
            ));
        }
        Ok(Self {
            num_answers,
            num_fillers,
        })
    }

    /// Total number of tokens.
    pub fn len(&self) -> usize {
        NUM_ROLES + self.num_answers + self.num_fillers
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn num_answers(&self) -> usize {
        self.num_answers
    }

    pub fn num_fillers(&self) -> usize {
        self.num_fillers
    }

    /// Id of the `i`-th answer token.
    pub fn answer(&self, i: usize) -> TokenId {
        assert!(i < self.num_answers, "answer index {i} out of range");
        NUM_ROLES + i
    }

    /// Id of the `i`-th filler token.
    pub fn filler(&self, i: usize) -> TokenId {
        assert!(i < self.num_fillers, "filler index {i} out of range");
        NUM_ROLES + self.num_answers + i
    }

    /// All answer token ids, in order.
    pub fn answers(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.num_answers).map(|i| self.answer(i))
    }

    /// All filler token ids, in order.
    pub fn fillers(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.num_fillers).map(|i| self.filler(i))
    }

    pub fn is_answer(&self, t: TokenId) -> bool {
        t >= NUM_ROLES && t < NUM_ROLES + self.num_answers
    }

    pub fn is_filler(&self, t: TokenId) -> bool {
        t >= NUM_ROLES + self.num_answers && t < self.len()
    }

    pub fn contains(&self, t: TokenId) -> bool {
        t < self.len()
    }

    /// Human-readable name for a token id.
    pub fn token_name(&self, t: TokenId) -> String {
        match t {
            THINK_OPEN => "<think>".into(),
            NEWLINE => "\\n".into(),
            THINK_CLOSE => "</think>".into(),
            EOS => "<eos>".into(),
            _ if self.is_answer(t) => format!("a{}", t - NUM_ROLES),
            _ if self.is_filler(t) => format!("f{}", t - NUM_ROLES - self.num_answers),
            _ => format!("?{t}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_layout_is_dense_and_disjoint() {
        let v = Vocabulary::new(3, 2).unwrap();
        assert_eq!(v.len(), 9);
        let mut seen = vec![false; v.len()];
        for t in [THINK_OPEN, NEWLINE, THINK_CLOSE, EOS] {
            assert!(!seen[t]);
            seen[t] = true;
        }
        for t in v.answers().chain(v.fillers()) {
            assert!(!seen[t], "token {t} assigned twice");
            seen[t] = true;
        }
        assert!(seen.iter().all(|&s| s), "token ids must be dense");
        assert!(v.is_answer(v.answer(0)));
        assert!(!v.is_answer(v.filler(0)));
        assert!(!v.is_filler(EOS));
    }

    #[test]
    fn rejects_empty_answer_set() {
        assert!(Vocabulary::new(0, 3).is_err());
    }

    #[test]
    fn token_names() {
        let v = Vocabulary::new(2, 1).unwrap();
        assert_eq!(v.token_name(THINK_OPEN), "<think>");
        assert_eq!(v.token_name(v.answer(1)), "a1");
        assert_eq!(v.token_name(v.filler(0)), "f0");
    }
}
