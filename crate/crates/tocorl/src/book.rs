//! Attaches the guide's chapters as doc-tested items so `cargo test --doc`
//! keeps every book snippet compiling and passing.

#[doc = include_str!("../../../book/src/introduction.md")]
pub struct IntroductionChapter;

#[doc = include_str!("../../../book/src/policy.md")]
pub struct PolicyChapter;

#[doc = include_str!("../../../book/src/conditioning.md")]
pub struct ConditioningChapter;

#[doc = include_str!("../../../book/src/rewards.md")]
pub struct RewardsChapter;

#[doc = include_str!("../../../book/src/theory.md")]
pub struct TheoryChapter;

#[doc = include_str!("../../../book/src/training.md")]
pub struct TrainingChapter;

#[doc = include_str!("../../../book/src/harness.md")]
pub struct HarnessChapter;
