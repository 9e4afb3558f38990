//! Synthetic factual-QA environment.
//!
//! Each prompt has one ground-truth answer token. The scripted initial
//! policy answers in a fixed reasoning style: `<think>`, newline, a
//! geometric run of filler tokens, `</think>`, a noisy answer (correct with
//! probability `q0` depending on difficulty), then `<eos>`. The scripted
//! prefix provider answers directly with the truth at rate `q_inst`.
//!
//! Evaluation always uses normal generation; [`tc_probe`] is the
//! prefix-forced counterpart for before/after contrasts.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::conditioning::{build_prefix, sample_tc, PrefixProvider};
use crate::policy::AutoregressivePolicy;
use crate::rewards::{verify_answer, Difficulty, Task};
use crate::vocab::{TokenId, Vocabulary, EOS, NEWLINE, THINK_CLOSE, THINK_OPEN};
use crate::{Error, Result};

/// Environment parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub num_prompts: usize,
    pub num_answers: usize,
    pub num_fillers: usize,
    /// Fraction of prompts tagged easy.
    pub easy_fraction: f64,
    /// Initial correct-answer probability on easy prompts.
    pub q0_easy: f64,
    /// Initial correct-answer probability on hard prompts.
    pub q0_hard: f64,
    /// Probability of extending the filler run by one token.
    pub filler_continue_prob: f64,
    /// Probability that the initial policy opens its think block with a
    /// direct answer token instead of a filler run. This is the latent
    /// direct-answer behavior that training can amplify; zero would bury it
    /// beyond the reach of gradient ascent.
    pub direct_answer_prob: f64,
    /// Probability that the initial policy closes the think block right
    /// after an answer token (the latent answer-then-summarize behavior).
    pub latent_close_prob: f64,
    /// Probability that the initial policy closes the think block
    /// immediately after the newline, answering with near-empty reasoning.
    pub empty_think_prob: f64,
    /// Provider accuracy.
    pub q_inst: f64,
    pub max_len: usize,
    /// Evaluation repetitions per prompt.
    pub eval_reps: usize,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            num_prompts: 64,
            num_answers: 10,
            num_fillers: 4,
            easy_fraction: 0.5,
            q0_easy: 0.6,
            q0_hard: 0.001,
            filler_continue_prob: 0.8,
            direct_answer_prob: 0.004,
            latent_close_prob: 0.002,
            empty_think_prob: 0.04,
            q_inst: 0.9,
            max_len: 40,
            eval_reps: 8,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let check_prob = |name: &str, v: f64| {
            if !(0.0..=1.0).contains(&v) {
                Err(Error::InvalidConfig(format!("{name} = {v} outside [0, 1]")))
            } else {
                Ok(())
            }
        };
        if self.num_prompts == 0 {
            return Err(Error::InvalidConfig("need at least one prompt".into()));
        }
        if self.num_answers < 2 {
            return Err(Error::InvalidConfig(
                "need at least two answer tokens".into(),
            ));
        }
        if self.num_fillers == 0 {
            return Err(Error::InvalidConfig(
                "the reasoning style needs at least one filler token".into(),
            ));
        }
        check_prob("easy_fraction", self.easy_fraction)?;
        check_prob("q0_easy", self.q0_easy)?;
        check_prob("q0_hard", self.q0_hard)?;
        check_prob("q_inst", self.q_inst)?;
        if self.q0_easy <= self.q0_hard {
            return Err(Error::InvalidConfig(format!(
                "q0_easy = {} must exceed q0_hard = {}",
                self.q0_easy, self.q0_hard
            )));
        }
        if !(self.filler_continue_prob > 0.0 && self.filler_continue_prob < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "filler_continue_prob = {} must lie strictly inside (0, 1)",
                self.filler_continue_prob
            )));
        }
        if !(0.0..0.01).contains(&self.direct_answer_prob) {
            return Err(Error::InvalidConfig(format!(
                "direct_answer_prob = {} outside [0, 0.01); larger values break \
                 the 0.99 format-validity floor of the initial policy",
                self.direct_answer_prob
            )));
        }
        if !(0.0..0.01).contains(&self.latent_close_prob) {
            return Err(Error::InvalidConfig(format!(
                "latent_close_prob = {} outside [0, 0.01)",
                self.latent_close_prob
            )));
        }
        if !(0.0..0.08).contains(&self.empty_think_prob) {
            return Err(Error::InvalidConfig(format!(
                "empty_think_prob = {} outside [0, 0.08)",
                self.empty_think_prob
            )));
        }
        if self.max_len < 8 {
            return Err(Error::InvalidConfig(
                "max_len below 8 cannot hold a full reasoning-style response".into(),
            ));
        }
        if self.eval_reps == 0 {
            return Err(Error::InvalidConfig("eval_reps must be at least 1".into()));
        }
        Ok(())
    }
}

/// A built environment: tasks, the scripted initial policy, and the
/// scripted provider.
#[derive(Debug, Clone)]
pub struct SynthEnv {
    pub config: EnvConfig,
    pub vocab: Vocabulary,
    pub tasks: Vec<Task>,
    pub initial_policy: AutoregressivePolicy,
    pub provider: PrefixProvider,
}

/// Background energy for transitions outside the scripted style. Deep
/// enough that stray tokens stay negligible even after training has pushed
/// a row's scripted entries around.
const BACKGROUND_ENERGY: f64 = -20.0;

fn set_row(
    policy: &mut AutoregressivePolicy,
    prompt: usize,
    ctx: usize,
    targets: &[(TokenId, f64)],
) {
    let v = policy.vocab().len();
    for n in 0..v {
        policy.set_energy(prompt, ctx, n, BACKGROUND_ENERGY);
    }
    for &(t, p) in targets {
        policy.set_energy(prompt, ctx, t, p.ln());
    }
}

/// Build tasks, the initial reasoning-style policy, and the provider from a
/// config. Deterministic in `config.seed`.
pub fn make_env(config: &EnvConfig) -> Result<SynthEnv> {
    config.validate()?;
    let vocab = Vocabulary::new(config.num_answers, config.num_fillers)?;
    let mut rng = {
        use rand::SeedableRng;
        let mut r = ChaCha8Rng::seed_from_u64(config.seed);
        r.set_stream(10);
        r
    };

    let num_easy = (config.num_prompts as f64 * config.easy_fraction).round() as usize;
    let tasks: Vec<Task> = (0..config.num_prompts)
        .map(|prompt| Task {
            prompt,
            ground_truth: vocab.answer(rng.gen_range(0..config.num_answers)),
            difficulty: if prompt < num_easy {
                Difficulty::Easy
            } else {
                Difficulty::Hard
            },
        })
        .collect();

    let mut policy = AutoregressivePolicy::new(config.num_prompts, vocab.clone(), config.max_len);
    let begin_ctx = policy.ctx_begin();
    let ctx_of = |t: TokenId| -> usize { t };
    let k = config.num_fillers as f64;
    let cont = config.filler_continue_prob;
    for task in &tasks {
        let p = task.prompt;
        let q0 = match task.difficulty {
            Difficulty::Easy => config.q0_easy,
            Difficulty::Hard => config.q0_hard,
        };
        set_row(&mut policy, p, begin_ctx, &[(THINK_OPEN, 1.0)]);
        set_row(&mut policy, p, ctx_of(THINK_OPEN), &[(NEWLINE, 1.0)]);
        // newline usually opens the filler run; the remaining mass exposes
        // the two latent short behaviors: near-empty thinking and a direct
        // answer attempt
        let eps_direct = config.direct_answer_prob;
        let eps_empty = config.empty_think_prob;
        let filler_share = 1.0 - eps_direct - eps_empty;
        let mut newline_targets: Vec<(TokenId, f64)> =
            vocab.fillers().map(|f| (f, filler_share / k)).collect();
        if eps_empty > 0.0 {
            newline_targets.push((THINK_CLOSE, eps_empty));
        }
        if eps_direct > 0.0 {
            let m = config.num_answers as f64;
            newline_targets.extend(vocab.answers().map(|a| (a, eps_direct / m)));
        }
        set_row(&mut policy, p, ctx_of(NEWLINE), &newline_targets);
        let mut continue_targets: Vec<(TokenId, f64)> =
            vocab.fillers().map(|f| (f, cont / k)).collect();
        continue_targets.push((THINK_CLOSE, 1.0 - cont));
        for f in vocab.fillers() {
            set_row(&mut policy, p, ctx_of(f), &continue_targets);
        }
        // noisy answer after the think block
        let mut answer_targets: Vec<(TokenId, f64)> = Vec::new();
        for a in vocab.answers() {
            let prob = if a == task.ground_truth {
                q0
            } else {
                (1.0 - q0) / (config.num_answers as f64 - 1.0)
            };
            if prob > 0.0 {
                answer_targets.push((a, prob));
            }
        }
        set_row(&mut policy, p, ctx_of(THINK_CLOSE), &answer_targets);
        // answers end the response, with a small latent chance of closing
        // the think block first
        let close = config.latent_close_prob;
        let mut answer_exit: Vec<(TokenId, f64)> = vec![(EOS, 1.0 - close)];
        if close > 0.0 {
            answer_exit.push((THINK_CLOSE, close));
        }
        for a in vocab.answers() {
            set_row(&mut policy, p, ctx_of(a), &answer_exit);
        }
    }

    let truths: Vec<TokenId> = tasks.iter().map(|t| t.ground_truth).collect();
    let provider = PrefixProvider::new(&vocab, truths, config.q_inst)?;

    Ok(SynthEnv {
        config: config.clone(),
        vocab,
        tasks,
        initial_policy: policy,
        provider,
    })
}

/// Accuracy and length statistics over one evaluation slice.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalSlice {
    pub accuracy: f64,
    pub mean_len: f64,
    pub min_len: usize,
    pub median_len: f64,
    /// Population variance of lengths (for Monte-Carlo error bars).
    pub len_var: f64,
    pub count: usize,
}

impl EvalSlice {
    fn from_samples(samples: &[(bool, usize)]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let n = samples.len();
        let correct = samples.iter().filter(|(c, _)| *c).count();
        let mut lens: Vec<usize> = samples.iter().map(|(_, l)| *l).collect();
        lens.sort_unstable();
        let mean = lens.iter().sum::<usize>() as f64 / n as f64;
        let median = if n % 2 == 1 {
            lens[n / 2] as f64
        } else {
            (lens[n / 2 - 1] + lens[n / 2]) as f64 / 2.0
        };
        let var = lens
            .iter()
            .map(|&l| (l as f64 - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        Self {
            accuracy: correct as f64 / n as f64,
            mean_len: mean,
            min_len: lens[0],
            median_len: median,
            len_var: var,
            count: n,
        }
    }

    /// Standard error of the accuracy estimate.
    pub fn accuracy_se(&self) -> f64 {
        (self.accuracy * (1.0 - self.accuracy) / self.count as f64).sqrt()
    }

    /// Standard error of the mean length estimate.
    pub fn mean_len_se(&self) -> f64 {
        (self.len_var / self.count as f64).sqrt()
    }
}

/// Evaluation summary with a per-difficulty breakdown. Lengths count every
/// token including `<eos>`.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalReport {
    pub overall: EvalSlice,
    pub easy: EvalSlice,
    pub hard: EvalSlice,
}

impl EvalReport {
    fn from_samples(samples: &[(bool, usize, Difficulty)]) -> Self {
        let all: Vec<(bool, usize)> = samples.iter().map(|&(c, l, _)| (c, l)).collect();
        let easy: Vec<(bool, usize)> = samples
            .iter()
            .filter(|(_, _, d)| *d == Difficulty::Easy)
            .map(|&(c, l, _)| (c, l))
            .collect();
        let hard: Vec<(bool, usize)> = samples
            .iter()
            .filter(|(_, _, d)| *d == Difficulty::Hard)
            .map(|&(c, l, _)| (c, l))
            .collect();
        Self {
            overall: EvalSlice::from_samples(&all),
            easy: EvalSlice::from_samples(&easy),
            hard: EvalSlice::from_samples(&hard),
        }
    }

    pub fn render(&self) -> String {
        let line = |name: &str, s: &EvalSlice| {
            format!(
                "{name:8} accuracy {:.4}  mean_len {:.3}  min_len {}  median_len {:.1}  (n = {})\n",
                s.accuracy, s.mean_len, s.min_len, s.median_len, s.count
            )
        };
        format!(
            "{}{}{}",
            line("overall", &self.overall),
            line("easy", &self.easy),
            line("hard", &self.hard)
        )
    }
}

/// Evaluate a policy with plain normal generation: `reps` generations per
/// task, accuracy via exact-match verification.
pub fn evaluate<R: Rng>(
    policy: &AutoregressivePolicy,
    tasks: &[Task],
    reps: usize,
    rng: &mut R,
) -> EvalReport {
    assert!(reps >= 1, "need at least one evaluation repetition");
    let mut samples = Vec::with_capacity(reps * tasks.len());
    for _ in 0..reps {
        for task in tasks {
            let seq = policy.sample(task.prompt, rng);
            samples.push((verify_answer(task, &seq), seq.len(), task.difficulty));
        }
    }
    EvalReport::from_samples(&samples)
}

/// Evaluate under token-conditional generation: every generation builds a
/// fresh provider prefix of length `k` and forces it.
pub fn tc_probe<R: Rng>(
    policy: &AutoregressivePolicy,
    tasks: &[Task],
    provider: &PrefixProvider,
    k: usize,
    reps: usize,
    rng: &mut R,
) -> Result<EvalReport> {
    assert!(reps >= 1, "need at least one evaluation repetition");
    let mut samples = Vec::with_capacity(reps * tasks.len());
    for _ in 0..reps {
        for task in tasks {
            let prefix = build_prefix(task.prompt, provider, k, rng)?;
            let seq = sample_tc(policy, task.prompt, &prefix, rng)?;
            samples.push((verify_answer(task, &seq), seq.len(), task.difficulty));
        }
    }
    Ok(EvalReport::from_samples(&samples))
}

/// Write the task table as `prompt_id<TAB>difficulty<TAB>ground_truth_token`.
pub fn dump_tasks(tasks: &[Task], vocab: &Vocabulary, path: &Path) -> Result<()> {
    let mut out = String::new();
    for t in tasks {
        let diff = match t.difficulty {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        };
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            t.prompt,
            diff,
            vocab.token_name(t.ground_truth)
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
