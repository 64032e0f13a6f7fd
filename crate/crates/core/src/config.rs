//! Training configuration in a flat `key = value` text format.
//!
//! Blank lines and text after `#` are ignored. Every field of
//! [`TrainingConfig`] has a key; unknown or repeated keys are errors that name
//! the line. [`TrainingConfig::to_config_string`] writes a file that parses
//! back to the same value.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Policy gradient against the ranker's expected rank.
    RankGan,
    /// Policy gradient against a binary discriminator's probability of real.
    Binary,
    /// Policy gradient against sentence BLEU on sampled human references.
    PgBleu,
    /// Maximum likelihood only; each round takes `g_steps` MLE minibatch steps.
    MleOnly,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::RankGan, Mode::Binary, Mode::PgBleu, Mode::MleOnly];

    pub fn name(self) -> &'static str {
        match self {
            Mode::RankGan => "rankgan",
            Mode::Binary => "binary",
            Mode::PgBleu => "pg_bleu",
            Mode::MleOnly => "mle_only",
        }
    }

    pub fn uses_ranker(self) -> bool {
        self == Mode::RankGan
    }

    pub fn uses_discriminator(self) -> bool {
        self == Mode::Binary
    }
}

/// Update rule for the ranker or discriminator. The generator always uses SGD.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CriticOptimizer {
    Sgd,
    Adam,
}

impl CriticOptimizer {
    pub fn name(self) -> &'static str {
        match self {
            CriticOptimizer::Sgd => "sgd",
            CriticOptimizer::Adam => "adam",
        }
    }
}

impl FromStr for CriticOptimizer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sgd" => Ok(CriticOptimizer::Sgd),
            "adam" => Ok(CriticOptimizer::Adam),
            _ => Err(format!("unknown optimizer '{s}' (expected sgd or adam)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown mode '{s}' (rankgan, binary, pg_bleu, mle_only)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub mode: Mode,
    pub seed: u64,

    pub corpus: Option<PathBuf>,
    /// Vocabulary file; built from the corpus when absent.
    pub vocab: Option<PathBuf>,
    /// Oracle checkpoint; enables oracle NLL logging and marks the corpus
    /// as synthetic integer tokens.
    pub oracle: Option<PathBuf>,
    pub min_count: usize,
    pub seq_len: usize,
    /// Fraction of the corpus used for training; the rest is held out and
    /// only scored. `1.0` keeps everything.
    pub train_fraction: f64,

    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub gen_init_scale: f64,

    pub ranker_embed_dim: usize,
    pub filter_widths: Vec<usize>,
    pub filters_per_width: usize,
    pub ranker_init_scale: f64,
    pub gamma: f64,

    pub pretrain_epochs: usize,
    pub adversarial_rounds: usize,
    pub g_steps: usize,
    pub r_steps: usize,
    /// Minibatch size for MLE and for critic updates.
    pub batch_size: usize,
    /// Sequences sampled per policy-gradient step.
    pub pg_batch_size: usize,
    pub ref_size: usize,
    pub cmp_size: usize,
    pub rollouts: usize,
    pub bleu_order: usize,
    pub bleu_ref_size: usize,

    pub pretrain_lr: f64,
    pub gen_lr: f64,
    pub ranker_lr: f64,
    pub critic_optimizer: CriticOptimizer,
    pub clip_norm: f64,
    /// Critic steps taken on the pretrained generator's samples before the
    /// first round.
    pub critic_pretrain_steps: usize,
    /// Subtract a moving average of the mean reward from every value.
    pub baseline: bool,
    pub baseline_decay: f64,

    pub eval_every: usize,
    pub eval_samples: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            mode: Mode::RankGan,
            seed: 0,
            corpus: None,
            vocab: None,
            oracle: None,
            min_count: 1,
            seq_len: crate::corpus::DEFAULT_FIXED_LEN,
            train_fraction: 1.0,
            embed_dim: 32,
            hidden_dim: 32,
            gen_init_scale: 0.1,
            ranker_embed_dim: 32,
            filter_widths: vec![2, 3, 4],
            filters_per_width: 16,
            ranker_init_scale: 0.1,
            gamma: 16.0,
            pretrain_epochs: 40,
            adversarial_rounds: 60,
            g_steps: 1,
            r_steps: 1,
            batch_size: 64,
            pg_batch_size: 64,
            ref_size: 16,
            cmp_size: 1,
            rollouts: 16,
            bleu_order: 2,
            bleu_ref_size: 64,
            pretrain_lr: 0.5,
            gen_lr: 0.5,
            ranker_lr: 0.003,
            critic_optimizer: CriticOptimizer::Adam,
            clip_norm: 5.0,
            critic_pretrain_steps: 150,
            baseline: false,
            baseline_decay: 0.9,
            eval_every: 1,
            eval_samples: crate::oracle_eval::DEFAULT_EVAL_SAMPLES,
            checkpoint_every: 0,
        }
    }
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse '{v}'"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got '{v}'")),
    }
}

fn parse_path(v: &str) -> std::result::Result<Option<PathBuf>, String> {
    Ok(if v.is_empty() { None } else { Some(PathBuf::from(v)) })
}

fn parse_list(v: &str) -> std::result::Result<Vec<usize>, String> {
    v.split(',').map(|s| parse(s.trim())).collect()
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl TrainingConfig {
    /// Assigns one field by key. Errors carry only a message; the caller adds
    /// the line and key.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "mode" => self.mode = v.parse().map_err(|e: Error| e.to_string())?,
            "seed" => self.seed = parse(v)?,
            "corpus" => self.corpus = parse_path(v)?,
            "vocab" => self.vocab = parse_path(v)?,
            "oracle" => self.oracle = parse_path(v)?,
            "min_count" => self.min_count = parse(v)?,
            "seq_len" => self.seq_len = parse(v)?,
            "train_fraction" => self.train_fraction = parse(v)?,
            "embed_dim" => self.embed_dim = parse(v)?,
            "hidden_dim" => self.hidden_dim = parse(v)?,
            "gen_init_scale" => self.gen_init_scale = parse(v)?,
            "ranker_embed_dim" => self.ranker_embed_dim = parse(v)?,
            "filter_widths" => self.filter_widths = parse_list(v)?,
            "filters_per_width" => self.filters_per_width = parse(v)?,
            "ranker_init_scale" => self.ranker_init_scale = parse(v)?,
            "gamma" => self.gamma = parse(v)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(v)?,
            "adversarial_rounds" => self.adversarial_rounds = parse(v)?,
            "g_steps" => self.g_steps = parse(v)?,
            "r_steps" => self.r_steps = parse(v)?,
            "batch_size" => self.batch_size = parse(v)?,
            "pg_batch_size" => self.pg_batch_size = parse(v)?,
            "ref_size" => self.ref_size = parse(v)?,
            "cmp_size" => self.cmp_size = parse(v)?,
            "rollouts" => self.rollouts = parse(v)?,
            "bleu_order" => self.bleu_order = parse(v)?,
            "bleu_ref_size" => self.bleu_ref_size = parse(v)?,
            "pretrain_lr" => self.pretrain_lr = parse(v)?,
            "gen_lr" => self.gen_lr = parse(v)?,
            "ranker_lr" => self.ranker_lr = parse(v)?,
            "critic_optimizer" => self.critic_optimizer = v.parse()?,
            "clip_norm" => self.clip_norm = parse(v)?,
            "critic_pretrain_steps" => self.critic_pretrain_steps = parse(v)?,
            "baseline" => self.baseline = parse_bool(v)?,
            "baseline_decay" => self.baseline_decay = parse(v)?,
            "eval_every" => self.eval_every = parse(v)?,
            "eval_samples" => self.eval_samples = parse(v)?,
            "checkpoint_every" => self.checkpoint_every = parse(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let widths: Vec<String> = self.filter_widths.iter().map(|w| w.to_string()).collect();
        vec![
            ("mode", self.mode.to_string()),
            ("seed", self.seed.to_string()),
            ("corpus", show_path(&self.corpus)),
            ("vocab", show_path(&self.vocab)),
            ("oracle", show_path(&self.oracle)),
            ("min_count", self.min_count.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("train_fraction", format!("{:?}", self.train_fraction)),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("gen_init_scale", format!("{:?}", self.gen_init_scale)),
            ("ranker_embed_dim", self.ranker_embed_dim.to_string()),
            ("filter_widths", widths.join(",")),
            ("filters_per_width", self.filters_per_width.to_string()),
            ("ranker_init_scale", format!("{:?}", self.ranker_init_scale)),
            ("gamma", format!("{:?}", self.gamma)),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("adversarial_rounds", self.adversarial_rounds.to_string()),
            ("g_steps", self.g_steps.to_string()),
            ("r_steps", self.r_steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("pg_batch_size", self.pg_batch_size.to_string()),
            ("ref_size", self.ref_size.to_string()),
            ("cmp_size", self.cmp_size.to_string()),
            ("rollouts", self.rollouts.to_string()),
            ("bleu_order", self.bleu_order.to_string()),
            ("bleu_ref_size", self.bleu_ref_size.to_string()),
            ("pretrain_lr", format!("{:?}", self.pretrain_lr)),
            ("gen_lr", format!("{:?}", self.gen_lr)),
            ("ranker_lr", format!("{:?}", self.ranker_lr)),
            ("critic_optimizer", self.critic_optimizer.name().to_string()),
            ("clip_norm", format!("{:?}", self.clip_norm)),
            ("critic_pretrain_steps", self.critic_pretrain_steps.to_string()),
            ("baseline", self.baseline.to_string()),
            ("baseline_decay", format!("{:?}", self.baseline_decay)),
            ("eval_every", self.eval_every.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = TrainingConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(Error::Config { line, key: content.to_string(), msg: "expected key = value".into() });
            };
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config { line, key: k.to_string(), msg: "key repeated".into() });
            }
            cfg.set(k, v).map_err(|msg| Error::Config { line, key: k.to_string(), msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainingConfig::parse_str(&text)
    }

    pub fn to_config_string(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::Config { line: 0, key: key.into(), msg: msg.into() });
        let positive = [
            ("seq_len", self.seq_len),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("ranker_embed_dim", self.ranker_embed_dim),
            ("filters_per_width", self.filters_per_width),
            ("batch_size", self.batch_size),
            ("pg_batch_size", self.pg_batch_size),
            ("rollouts", self.rollouts),
            ("min_count", self.min_count),
            ("eval_samples", self.eval_samples),
        ];
        for (k, v) in positive {
            if v == 0 {
                return bad(k, "must be at least 1");
            }
        }
        if self.mode.uses_ranker() && (self.ref_size == 0 || self.cmp_size == 0) {
            return bad("ref_size", "ranking needs ref_size >= 1 and cmp_size >= 1");
        }
        if self.mode == Mode::PgBleu && self.bleu_ref_size == 0 {
            return bad("bleu_ref_size", "must be at least 1");
        }
        if !(1..=4).contains(&self.bleu_order) {
            return bad("bleu_order", "must lie in 1..=4");
        }
        if self.filter_widths.is_empty() || self.filter_widths.iter().any(|&w| w == 0 || w > self.seq_len) {
            return bad("filter_widths", "widths must lie in 1..=seq_len");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma", "must be positive");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad("train_fraction", "must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return bad("baseline_decay", "must lie in [0, 1)");
        }
        let rates = [
            ("pretrain_lr", self.pretrain_lr),
            ("gen_lr", self.gen_lr),
            ("ranker_lr", self.ranker_lr),
            ("clip_norm", self.clip_norm),
            ("gen_init_scale", self.gen_init_scale),
            ("ranker_init_scale", self.ranker_init_scale),
        ];
        for (k, v) in rates {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(k, "must be finite and non-negative");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trips() {
        let mut c = TrainingConfig { mode: Mode::PgBleu, seed: 17, gamma: 0.1 + 0.2, ..Default::default() };
        c.corpus = Some("data/train.txt".into());
        c.filter_widths = vec![1, 5];
        let back = TrainingConfig::parse_str(&c.to_config_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = TrainingConfig::parse_str("# header\n\nmode = binary # trailing\nseed=4\n").unwrap();
        assert_eq!((c.mode, c.seed), (Mode::Binary, 4));
    }

    #[test]
    fn unknown_key_names_line() {
        let err = TrainingConfig::parse_str("seed = 1\n\nlearning_rate = 0.1\n").unwrap_err();
        match err {
            Error::Config { line, key, .. } => assert_eq!((line, key.as_str()), (3, "learning_rate")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_values_rejected() {
        assert!(TrainingConfig::parse_str("seed = x").is_err());
        assert!(TrainingConfig::parse_str("mode = gan").is_err());
        assert!(TrainingConfig::parse_str("seed = 1\nseed = 2").is_err());
        assert!(TrainingConfig::parse_str("ref_size = 0").is_err());
        assert!(TrainingConfig::parse_str("mode = mle_only\nref_size = 0").is_ok());
        assert!(TrainingConfig::parse_str("gamma = 0").is_err());
    }
}
