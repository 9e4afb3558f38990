//! Run configuration: a line-oriented `key = value` format.
//!
//! Grammar, one binding per line:
//!
//! ```text
//! line    := ws (binding? comment?) ws
//! comment := '#' any*
//! binding := key ws '=' ws value
//! key     := segment ('.' segment)*
//! ```
//!
//! Keys are dotted (`train.lambda`, `env.num_prompts`, `output_dir`); a key
//! may also be written bare (`lambda`) when its last segment is unambiguous.
//! The bare key `seed` sets `train.seed` and `env.seed` together. Unknown
//! keys are rejected by name, values by line number. Every tunable has a
//! documented default, so an empty file is a valid spec.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::env::EnvConfig;
use crate::trainer::{Algorithm, TrainConfig};
use crate::{Error, Result};

/// A fully resolved run: training and environment parameters plus output
/// plumbing.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub train: TrainConfig,
    pub env: EnvConfig,
    pub output_dir: PathBuf,
    pub eval_interval: usize,
    pub checkpoint_interval: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            env: EnvConfig::default(),
            output_dir: PathBuf::from("tocorl_out"),
            eval_interval: 10,
            checkpoint_interval: 100,
        }
    }
}

/// Canonical dotted keys, in emission order.
const KEYS: &[&str] = &[
    "train.algorithm",
    "train.lambda",
    "train.k",
    "train.group_size",
    "train.batch_size",
    "train.steps",
    "train.step_size",
    "train.gamma_format",
    "train.eta_length",
    "train.grpo_epsilon",
    "train.grpo_beta",
    "train.early_stop_accuracy",
    "train.early_stop_patience",
    "train.seed",
    "env.num_prompts",
    "env.num_answers",
    "env.num_fillers",
    "env.easy_fraction",
    "env.q0_easy",
    "env.q0_hard",
    "env.filler_continue_prob",
    "env.q_inst",
    "env.max_len",
    "env.eval_reps",
    "env.seed",
    "output_dir",
    "eval_interval",
    "checkpoint_interval",
];

fn parse_err(line: usize, message: String) -> Error {
    Error::Parse { line, message }
}

impl RunSpec {
    /// Set one key. `line` is carried into error messages.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let f64_of = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| parse_err(line, format!("expected a number for {key}, got {v:?}")))
        };
        let usize_of = |v: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|_| parse_err(line, format!("expected an integer for {key}, got {v:?}")))
        };
        let u64_of = |v: &str| -> Result<u64> {
            v.parse::<u64>()
                .map_err(|_| parse_err(line, format!("expected an integer for {key}, got {v:?}")))
        };

        let canonical = self.resolve_key(key, line)?;
        match canonical.as_str() {
            "train.algorithm" => {
                self.train.algorithm = Algorithm::parse(value)
                    .map_err(|e| parse_err(line, e.to_string()))?;
            }
            "train.lambda" => self.train.lambda = f64_of(value)?,
            "train.k" => self.train.prefix_len = usize_of(value)?,
            "train.group_size" => self.train.group_size = usize_of(value)?,
            "train.batch_size" => self.train.batch_size = usize_of(value)?,
            "train.steps" => self.train.steps = usize_of(value)?,
            "train.step_size" => self.train.step_size = f64_of(value)?,
            "train.gamma_format" => self.train.reward.format_penalty = f64_of(value)?,
            "train.eta_length" => self.train.reward.length_penalty = f64_of(value)?,
            "train.grpo_epsilon" => self.train.grpo_epsilon = f64_of(value)?,
            "train.grpo_beta" => self.train.grpo_beta = f64_of(value)?,
            "train.early_stop_accuracy" => self.train.early_stop_accuracy = f64_of(value)?,
            "train.early_stop_patience" => self.train.early_stop_patience = usize_of(value)?,
            "train.seed" => self.train.seed = u64_of(value)?,
            "env.num_prompts" => self.env.num_prompts = usize_of(value)?,
            "env.num_answers" => self.env.num_answers = usize_of(value)?,
            "env.num_fillers" => self.env.num_fillers = usize_of(value)?,
            "env.easy_fraction" => self.env.easy_fraction = f64_of(value)?,
            "env.q0_easy" => self.env.q0_easy = f64_of(value)?,
            "env.q0_hard" => self.env.q0_hard = f64_of(value)?,
            "env.filler_continue_prob" => self.env.filler_continue_prob = f64_of(value)?,
            "env.q_inst" => self.env.q_inst = f64_of(value)?,
            "env.max_len" => self.env.max_len = usize_of(value)?,
            "env.eval_reps" => self.env.eval_reps = usize_of(value)?,
            "env.seed" => self.env.seed = u64_of(value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "eval_interval" => self.eval_interval = usize_of(value)?,
            "checkpoint_interval" => self.checkpoint_interval = usize_of(value)?,
            "seed" => {
                let s = u64_of(value)?;
                self.train.seed = s;
                self.env.seed = s;
            }
            other => unreachable!("resolve_key returned unhandled key {other}"),
        }
        Ok(())
    }

    /// Map a possibly-bare key to its canonical dotted form.
    fn resolve_key(&self, key: &str, line: usize) -> Result<String> {
        if key == "seed" {
            return Ok("seed".into());
        }
        if KEYS.contains(&key) {
            return Ok(key.to_string());
        }
        if !key.contains('.') {
            let matches: Vec<&&str> = KEYS
                .iter()
                .filter(|k| k.rsplit('.').next() == Some(key))
                .collect();
            match matches.len() {
                1 => return Ok(matches[0].to_string()),
                n if n > 1 => {
                    return Err(parse_err(
                        line,
                        format!("ambiguous key {key:?}: write one of {matches:?}"),
                    ))
                }
                _ => {}
            }
        }
        Err(parse_err(line, format!("unknown key {key:?}")))
    }

    /// Parse a config file body. Omitted keys keep their defaults;
    /// duplicated keys are rejected.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = RunSpec::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(parse_err(
                    line_no,
                    format!("expected `key = value`, got {line:?}"),
                ));
            };
            let key = key.trim();
            let value = value.trim();
            if value.is_empty() {
                return Err(parse_err(line_no, format!("empty value for {key:?}")));
            }
            let canonical = spec.resolve_key(key, line_no)?;
            if seen.contains(&canonical) {
                return Err(parse_err(
                    line_no,
                    format!("duplicate key {canonical:?}"),
                ));
            }
            spec.set(key, value, line_no)?;
            seen.push(canonical);
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    /// Apply `key=value` override strings (from `--set` flags).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for (i, item) in overrides.iter().enumerate() {
            let Some((key, value)) = item.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "override {item:?} is not of the form key=value"
                )));
            };
            self.set(key.trim(), value.trim(), i + 1)?;
        }
        Ok(())
    }

    /// Validate cross-field constraints on top of the per-module checks.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.env.validate()?;
        if self.eval_interval == 0 {
            return Err(Error::InvalidConfig("eval_interval must be at least 1".into()));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::InvalidConfig(
                "checkpoint_interval must be at least 1".into(),
            ));
        }
        if self.train.algorithm == Algorithm::ToCoRL && self.train.prefix_len >= self.env.max_len {
            return Err(Error::PrefixExceedsMaxLen {
                prefix_len: self.train.prefix_len,
                max_len: self.env.max_len,
            });
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "train.algorithm" => self.train.algorithm.as_str().to_string(),
            "train.lambda" => self.train.lambda.to_string(),
            "train.k" => self.train.prefix_len.to_string(),
            "train.group_size" => self.train.group_size.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "train.steps" => self.train.steps.to_string(),
            "train.step_size" => self.train.step_size.to_string(),
            "train.gamma_format" => self.train.reward.format_penalty.to_string(),
            "train.eta_length" => self.train.reward.length_penalty.to_string(),
            "train.grpo_epsilon" => self.train.grpo_epsilon.to_string(),
            "train.grpo_beta" => self.train.grpo_beta.to_string(),
            "train.early_stop_accuracy" => self.train.early_stop_accuracy.to_string(),
            "train.early_stop_patience" => self.train.early_stop_patience.to_string(),
            "train.seed" => self.train.seed.to_string(),
            "env.num_prompts" => self.env.num_prompts.to_string(),
            "env.num_answers" => self.env.num_answers.to_string(),
            "env.num_fillers" => self.env.num_fillers.to_string(),
            "env.easy_fraction" => self.env.easy_fraction.to_string(),
            "env.q0_easy" => self.env.q0_easy.to_string(),
            "env.q0_hard" => self.env.q0_hard.to_string(),
            "env.filler_continue_prob" => self.env.filler_continue_prob.to_string(),
            "env.q_inst" => self.env.q_inst.to_string(),
            "env.max_len" => self.env.max_len.to_string(),
            "env.eval_reps" => self.env.eval_reps.to_string(),
            "env.seed" => self.env.seed.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "eval_interval" => self.eval_interval.to_string(),
            "checkpoint_interval" => self.checkpoint_interval.to_string(),
            other => unreachable!("no emitter for key {other}"),
        }
    }

    /// Emit every tunable as canonical `key = value` lines. The output
    /// parses back into an identical spec.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for key in KEYS {
            let this_section = key.split('.').next().unwrap_or("");
            if this_section != section {
                if !out.is_empty() {
                    out.push('\n');
                }
                section = this_section;
            }
            writeln!(out, "{key} = {}", self.value_of(key)).expect("write to string");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_full_defaults() {
        let spec = RunSpec::from_text("").unwrap();
        assert_eq!(spec.train.lambda, 1.0);
        assert_eq!(spec.train.prefix_len, 6);
        assert_eq!(spec.train.group_size, 16);
        assert_eq!(spec.train.batch_size, 8);
        assert_eq!(spec.env.num_prompts, 64);
        assert_eq!(spec.eval_interval, 10);
        spec.validate().unwrap();
    }

    #[test]
    fn bare_keys_and_comments() {
        let spec = RunSpec::from_text(
            "# main configuration\nlambda = 1   # mixing weight\nk = 6\n\ntrain.steps = 50\n",
        )
        .unwrap();
        assert_eq!(spec.train.lambda, 1.0);
        assert_eq!(spec.train.prefix_len, 6);
        assert_eq!(spec.train.steps, 50);
        // everything else stays at defaults
        assert_eq!(spec.train.group_size, 16);
    }

    #[test]
    fn bare_seed_sets_both_seeds() {
        let spec = RunSpec::from_text("seed = 77\n").unwrap();
        assert_eq!(spec.train.seed, 77);
        assert_eq!(spec.env.seed, 77);

        let spec = RunSpec::from_text("train.seed = 1\nenv.seed = 2\n").unwrap();
        assert_eq!(spec.train.seed, 1);
        assert_eq!(spec.env.seed, 2);
    }

    #[test]
    fn negative_lambda_fails_validation() {
        let spec = RunSpec::from_text("lambda = -1\n").unwrap();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunSpec::from_text("lambda = 1\nlambad = 2\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "got {msg}");
        assert!(msg.contains("lambad"), "got {msg}");
    }

    #[test]
    fn value_errors_carry_line_numbers() {
        let err = RunSpec::from_text("\n\ntrain.lambda = fast\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "got {msg}");

        let err = RunSpec::from_text("train.steps\n").unwrap_err();
        assert!(err.to_string().contains("key = value"));
    }

    #[test]
    fn duplicates_are_rejected() {
        let err = RunSpec::from_text("lambda = 1\ntrain.lambda = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn emitted_config_round_trips() {
        let mut spec = RunSpec::from_text("lambda = 2.5\nalgorithm = grpo\nq_inst = 0.75\n").unwrap();
        spec.apply_overrides(&["k=4".into(), "train.steps=33".into()]).unwrap();
        let text = spec.to_config_text();
        let back = RunSpec::from_text(&text).unwrap();
        assert_eq!(back.to_config_text(), text);
        assert_eq!(back.train.prefix_len, 4);
        assert_eq!(back.train.steps, 33);
        assert_eq!(back.env.q_inst, 0.75);
        assert_eq!(back.train.algorithm, Algorithm::Grpo);
    }

    #[test]
    fn override_format_errors() {
        let mut spec = RunSpec::default();
        assert!(spec.apply_overrides(&["k: 3".into()]).is_err());
        assert!(spec.apply_overrides(&["nope=3".into()]).is_err());
    }

    #[test]
    fn tocorl_prefix_must_fit_max_len() {
        let spec = RunSpec::from_text("env.max_len = 8\ntrain.k = 8\n").unwrap();
        assert!(matches!(
            spec.validate(),
            Err(Error::PrefixExceedsMaxLen { .. })
        ));
    }
}
