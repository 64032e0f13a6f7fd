//! Training orchestration: MLE pretraining, then rounds that alternate
//! policy-gradient generator updates with critic updates.
//!
//! Epoch 0 only evaluates the initial generator. Epochs `1..=pretrain_epochs`
//! are full MLE passes over the training split, and each later epoch is one
//! adversarial round. Every random draw in epoch `e` comes from a stream
//! derived from `(seed, e, ...)`, so a run resumed from a saved epoch repeats
//! the uninterrupted run exactly.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;

use crate::checkpoint::{self, Checkpoint};
use crate::config::{CriticOptimizer, Mode, TrainingConfig};
use crate::corpus::{Corpus, TokenSeq};
use crate::discriminator::Discriminator;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::generator::{GeneratorDims, GeneratorModel};
use crate::metrics::{BleuReferences, BleuSpec};
use crate::optim::{sgd_step, Adam, Optimizer, Parameterized};
use crate::oracle_eval::{sample_parallel, NllEstimate, Oracle};
use crate::ranker::{ComparisonSet, Polarity, RankerModel, ReferenceSet};
use crate::rng::{self, derive_seed, tag};
use crate::rollout::{sequence_values, BinaryReward, BleuReward, RankReward, Reward};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Gradient of `-(1/B) Σ_b Σ_t A[b][t] log π(w_t | s_{<t})` for `seqs` with
/// per-step weights `advantages`, in `params_mut` order.
pub fn pg_gradient(gen: &GeneratorModel, seqs: &[TokenSeq], advantages: &[Vec<f64>]) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let vars = gen.register(&mut tape);
    let steps = gen.forward_log_probs(&mut tape, &vars, seqs)?;
    let b = seqs.len();
    if advantages.len() != b || advantages.iter().any(|a| a.len() != steps.len()) {
        return Err(Error::Dimension("advantages must be [batch][len]".into()));
    }
    let mut acc = None;
    for (t, &lp) in steps.iter().enumerate() {
        let w = tape.constant(Tensor::vector(advantages.iter().map(|a| a[t]).collect()));
        let weighted = tape.mul(w, lp)?;
        let s = tape.sum(weighted);
        acc = Some(match acc {
            None => s,
            Some(a) => tape.add(a, s)?,
        });
    }
    let total = acc.ok_or_else(|| Error::Usage("sequences have no steps".into()))?;
    let loss = tape.scale(total, -1.0 / b as f64);
    let grads = tape.backward(loss)?;
    Ok(vars.all().iter().map(|v| grads.get(*v)).collect())
}

/// One SGD step on the surrogate of [`pg_gradient`]. Returns the gradient
/// norm before clipping.
pub fn pg_update(
    gen: &mut GeneratorModel,
    seqs: &[TokenSeq],
    advantages: &[Vec<f64>],
    learning_rate: f64,
    clip: f64,
) -> Result<f64> {
    let gs = pg_gradient(gen, seqs, advantages)?;
    sgd_step(gen.params_mut(), gs, learning_rate, clip)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgStats {
    /// Mean reward of the sampled complete sequences.
    pub mean_reward: f64,
    pub grad_norm: f64,
}

/// One policy-gradient step: samples `batch` sequences from `gen`, values
/// every prefix by `rollouts` completions scored with `reward` (the complete
/// sequence is scored directly), subtracts `baseline` and ascends.
pub fn generator_pg_step(
    gen: &mut GeneratorModel,
    reward: &dyn Reward,
    batch: usize,
    len: usize,
    rollouts: usize,
    seed: u64,
    learning_rate: f64,
    clip: f64,
    baseline: f64,
) -> Result<PgStats> {
    let seqs = sample_parallel(gen, batch, len, derive_seed(seed, &[tag::SAMPLE]))?;
    let values = sequence_values(gen, reward, &seqs, rollouts, derive_seed(seed, &[tag::ROLLOUT]))?;
    let mean_reward = values.iter().map(|v| v[len - 1]).sum::<f64>() / batch as f64;
    let adv: Vec<Vec<f64>> = values.iter().map(|v| v.iter().map(|x| x - baseline).collect()).collect();
    let grad_norm = pg_update(gen, &seqs, &adv, learning_rate, clip)?;
    Ok(PgStats { mean_reward, grad_norm })
}

/// Trainable critic for the adversarial modes.
#[derive(Clone, Debug, PartialEq)]
pub enum Critic {
    None,
    Ranker(RankerModel),
    Discriminator(Discriminator),
}

impl Critic {
    pub fn checksum(&self) -> Option<String> {
        match self {
            Critic::None => None,
            Critic::Ranker(r) => Some(r.param_checksum()),
            Critic::Discriminator(d) => Some(d.param_checksum()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Init,
    Pretrain,
    Adversarial,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Pretrain => "pretrain",
            Phase::Adversarial => "adversarial",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "init" => Ok(Phase::Init),
            "pretrain" => Ok(Phase::Pretrain),
            "adversarial" => Ok(Phase::Adversarial),
            _ => Err(Error::Format(format!("unknown phase '{s}' in run log"))),
        }
    }
}

/// One row of the run log. Losses that do not apply are NaN; evaluation
/// fields are `None` when the epoch was not evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Mean MLE loss (nats per token) or policy-gradient mean reward's
    /// negation, depending on phase and mode.
    pub g_loss: f64,
    pub critic_loss: f64,
    pub mean_reward: f64,
    pub oracle_nll: Option<NllEstimate>,
    /// Mean per-sequence NLL of the held-out split under the generator.
    pub valid_nll: Option<f64>,
}

pub const RUNLOG_HEADER: [&str; 10] = [
    "epoch",
    "phase",
    "g_loss",
    "critic_loss",
    "mean_reward",
    "oracle_nll",
    "oracle_nll_per_token",
    "oracle_nll_stderr",
    "eval_samples",
    "valid_nll",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse().map_err(|_| Error::Format(format!("bad number '{s}' in run log")))
}

impl RunLog {
    pub fn push(&mut self, r: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if r.epoch <= last.epoch {
                return Err(Error::Usage(format!("epoch {} logged after {}", r.epoch, last.epoch)));
            }
        }
        self.records.push(r);
        Ok(())
    }

    pub fn last_oracle_nll(&self) -> Option<NllEstimate> {
        self.records.iter().rev().find_map(|r| r.oracle_nll)
    }

    pub fn oracle_nll_at(&self, epoch: usize) -> Option<NllEstimate> {
        self.records.iter().find(|r| r.epoch == epoch).and_then(|r| r.oracle_nll)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(RUNLOG_HEADER)?;
        for r in &self.records {
            let o = r.oracle_nll;
            w.write_record([
                r.epoch.to_string(),
                r.phase.name().to_string(),
                fmt_f64(r.g_loss),
                fmt_f64(r.critic_loss),
                fmt_f64(r.mean_reward),
                o.map(|o| fmt_f64(o.per_sequence)).unwrap_or_default(),
                o.map(|o| fmt_f64(o.per_token)).unwrap_or_default(),
                o.map(|o| fmt_f64(o.std_err)).unwrap_or_default(),
                o.map(|o| o.n.to_string()).unwrap_or_default(),
                r.valid_nll.map(fmt_f64).unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let mut log = RunLog::default();
        for row in rd.records() {
            let row = row?;
            if row.len() != RUNLOG_HEADER.len() {
                return Err(Error::Format(format!("run log row has {} fields", row.len())));
            }
            let oracle_nll = if row[5].is_empty() {
                None
            } else {
                Some(NllEstimate {
                    per_sequence: parse_f64(&row[5])?,
                    per_token: parse_f64(&row[6])?,
                    std_err: parse_f64(&row[7])?,
                    n: row[8].parse().map_err(|_| Error::Format("bad sample count".into()))?,
                })
            };
            log.push(EpochRecord {
                epoch: row[0].parse().map_err(|_| Error::Format("bad epoch".into()))?,
                phase: Phase::parse(&row[1])?,
                g_loss: parse_f64(&row[2])?,
                critic_loss: parse_f64(&row[3])?,
                mean_reward: parse_f64(&row[4])?,
                oracle_nll,
                valid_nll: if row[9].is_empty() { None } else { Some(parse_f64(&row[9])?) },
            })?;
        }
        Ok(log)
    }
}

pub struct Trainer {
    cfg: TrainingConfig,
    gen: GeneratorModel,
    critic: Critic,
    train: Vec<TokenSeq>,
    valid: Vec<TokenSeq>,
    oracle: Option<Oracle>,
    /// Next epoch to run.
    epoch: usize,
    critic_ready: bool,
    critic_opt: Optimizer,
    baseline: Option<f64>,
    log: RunLog,
    /// Wall-clock seconds per epoch; kept apart from the deterministic log.
    timings: Vec<(usize, f64)>,
}

impl Trainer {
    pub fn new(cfg: TrainingConfig, corpus: &Corpus, oracle: Option<Oracle>) -> Result<Self> {
        cfg.validate()?;
        if corpus.is_empty() {
            return Err(Error::Usage("training corpus is empty".into()));
        }
        if corpus.fixed_len() != cfg.seq_len {
            return Err(Error::Usage(format!(
                "corpus length {} differs from seq_len {}",
                corpus.fixed_len(),
                cfg.seq_len
            )));
        }
        let v = corpus.vocab().len();
        if let Some(o) = &oracle {
            if o.vocab_size() != v {
                return Err(Error::Usage(format!(
                    "oracle vocabulary {} differs from corpus vocabulary {v}",
                    o.vocab_size()
                )));
            }
        }
        let (train, valid) = if cfg.train_fraction < 1.0 {
            let (t, va) = corpus.split(cfg.seed, cfg.train_fraction)?;
            (t.seqs().to_vec(), va.seqs().to_vec())
        } else {
            (corpus.seqs().to_vec(), Vec::new())
        };
        let gen = GeneratorModel::uniform_init(
            GeneratorDims::new(v, cfg.embed_dim, cfg.hidden_dim),
            cfg.seed,
            cfg.gen_init_scale,
        )?;
        let critic = Trainer::init_critic(&cfg, v)?;
        let critic_opt = Trainer::init_critic_opt(&cfg);
        Ok(Trainer {
            critic_opt,
            cfg,
            gen,
            critic,
            train,
            valid,
            oracle,
            epoch: 0,
            critic_ready: false,
            baseline: None,
            log: RunLog::default(),
            timings: Vec::new(),
        })
    }

    fn encoder_config(cfg: &TrainingConfig, vocab: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size: vocab,
            embed_dim: cfg.ranker_embed_dim,
            widths: cfg.filter_widths.clone(),
            filters_per_width: cfg.filters_per_width,
            activation: crate::tensor::Activation::Tanh,
            fixed_len: cfg.seq_len,
        }
    }

    fn init_critic_opt(cfg: &TrainingConfig) -> Optimizer {
        match cfg.critic_optimizer {
            CriticOptimizer::Sgd => Optimizer::sgd(cfg.ranker_lr),
            CriticOptimizer::Adam => Optimizer::Adam(Adam::new(cfg.ranker_lr)),
        }
    }

    fn init_critic(cfg: &TrainingConfig, vocab: usize) -> Result<Critic> {
        let ecfg = Trainer::encoder_config(cfg, vocab);
        Ok(match cfg.mode {
            Mode::RankGan => Critic::Ranker(RankerModel::uniform_init(ecfg, cfg.gamma, cfg.seed, cfg.ranker_init_scale)?),
            Mode::Binary => Critic::Discriminator(Discriminator::uniform_init(ecfg, cfg.seed, cfg.ranker_init_scale)?),
            Mode::PgBleu | Mode::MleOnly => Critic::None,
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.cfg
    }

    pub fn generator(&self) -> &GeneratorModel {
        &self.gen
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn timings(&self) -> &[(usize, f64)] {
        &self.timings
    }

    pub fn train_split(&self) -> &[TokenSeq] {
        &self.train
    }

    pub fn valid_split(&self) -> &[TokenSeq] {
        &self.valid
    }

    /// Next epoch to run.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn last_epoch(&self) -> usize {
        self.cfg.pretrain_epochs + self.cfg.adversarial_rounds
    }

    pub fn is_done(&self) -> bool {
        self.epoch > self.last_epoch()
    }

    /// Same state under another objective. See [`Trainer::fork_with`].
    pub fn fork(&self, mode: Mode) -> Result<Trainer> {
        self.fork_with(TrainingConfig { mode, ..self.cfg.clone() })
    }

    /// Continues from the current pretrained state under `cfg`, which may
    /// change any setting that only acts after pretraining (objective,
    /// critic, rollout and round settings). Only allowed before the first
    /// adversarial round, so several runs can share one pretrained generator.
    pub fn fork_with(&self, cfg: TrainingConfig) -> Result<Trainer> {
        if self.epoch > self.cfg.pretrain_epochs + 1 || self.critic_ready {
            return Err(Error::Usage("cannot fork after adversarial training began".into()));
        }
        cfg.validate()?;
        let pretraining_part = |c: &TrainingConfig| TrainingConfig {
            mode: Mode::MleOnly,
            adversarial_rounds: 0,
            g_steps: 0,
            r_steps: 0,
            pg_batch_size: 1,
            ref_size: 1,
            cmp_size: 1,
            rollouts: 1,
            bleu_order: 1,
            bleu_ref_size: 1,
            gen_lr: 0.0,
            ranker_lr: 0.0,
            critic_optimizer: CriticOptimizer::Sgd,
            critic_pretrain_steps: 0,
            baseline: false,
            baseline_decay: 0.0,
            gamma: 1.0,
            ranker_embed_dim: 1,
            filter_widths: vec![1],
            filters_per_width: 1,
            ranker_init_scale: 0.0,
            eval_every: 0,
            checkpoint_every: 0,
            corpus: None,
            vocab: None,
            oracle: None,
            ..c.clone()
        };
        if pretraining_part(&cfg) != pretraining_part(&self.cfg) {
            return Err(Error::Usage("fork may only change settings used after pretraining".into()));
        }
        Ok(Trainer {
            critic: Trainer::init_critic(&cfg, self.gen.vocab_size())?,
            critic_opt: Trainer::init_critic_opt(&cfg),
            cfg,
            gen: self.gen.clone(),
            train: self.train.clone(),
            valid: self.valid.clone(),
            oracle: self.oracle.clone(),
            epoch: self.epoch,
            critic_ready: false,
            baseline: None,
            log: self.log.clone(),
            timings: self.timings.clone(),
        })
    }

    fn should_eval(&self, epoch: usize) -> bool {
        epoch == 0
            || epoch == self.cfg.pretrain_epochs
            || epoch == self.last_epoch()
            || (self.cfg.eval_every > 0 && epoch % self.cfg.eval_every == 0)
    }

    /// Oracle NLL of generator samples drawn with the evaluation stream of `epoch`.
    pub fn evaluate(&self, epoch: usize) -> Result<Option<NllEstimate>> {
        self.oracle
            .as_ref()
            .map(|o| {
                o.nll_of(&self.gen, self.cfg.eval_samples, self.cfg.seq_len, derive_seed(self.cfg.seed, &[tag::EVAL, epoch as u64]))
            })
            .transpose()
    }

    fn valid_nll(&self) -> Result<Option<f64>> {
        if self.valid.is_empty() {
            return Ok(None);
        }
        let v = self.gen.nll_batch(&self.valid)?;
        Ok(Some(v.iter().sum::<f64>() / v.len() as f64))
    }

    /// Runs one epoch and logs it.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        if self.is_done() {
            return Err(Error::Usage("training already finished".into()));
        }
        let start = Instant::now();
        let e = self.epoch;
        let (phase, g_loss, critic_loss, mean_reward) = if e == 0 {
            (Phase::Init, f64::NAN, f64::NAN, f64::NAN)
        } else if e <= self.cfg.pretrain_epochs {
            (Phase::Pretrain, self.mle_epoch(e)?, f64::NAN, f64::NAN)
        } else {
            let (g, c, r) = self.round(e)?;
            (Phase::Adversarial, g, c, r)
        };
        let (oracle_nll, valid_nll) =
            if self.should_eval(e) { (self.evaluate(e)?, self.valid_nll()?) } else { (None, None) };
        self.log.push(EpochRecord { epoch: e, phase, g_loss, critic_loss, mean_reward, oracle_nll, valid_nll })?;
        self.timings.push((e, start.elapsed().as_secs_f64()));
        self.epoch += 1;
        Ok(self.log.records.last().expect("just pushed"))
    }

    /// Runs through the last pretraining epoch.
    pub fn pretrain(&mut self) -> Result<()> {
        while self.epoch <= self.cfg.pretrain_epochs {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn train(&mut self) -> Result<&RunLog> {
        while !self.is_done() {
            self.run_epoch()?;
        }
        Ok(&self.log)
    }

    /// One shuffled pass of MLE minibatches; returns the mean batch loss.
    fn mle_epoch(&mut self, e: usize) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng::stream(self.cfg.seed, &[tag::PRETRAIN, e as u64]));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<TokenSeq> = chunk.iter().map(|&i| self.train[i].clone()).collect();
            total += self.gen.mle_step(&batch, self.cfg.pretrain_lr, self.cfg.clip_norm)?;
            batches += 1;
        }
        Ok(total / batches as f64)
    }

    fn human(&self, k: usize, seed: u64) -> Vec<TokenSeq> {
        pick_from(&self.train, k, &mut rng::stream(seed, &[]))
    }

    fn synthetic(&self, k: usize, seed: u64) -> Result<Vec<TokenSeq>> {
        sample_parallel(&self.gen, k, self.cfg.seq_len, seed)
    }

    /// Returns `(g_loss, critic_loss, mean_reward)` averaged over the round's steps.
    fn round(&mut self, e: usize) -> Result<(f64, f64, f64)> {
        if !self.critic_ready {
            for k in 0..self.cfg.critic_pretrain_steps {
                self.critic_step(derive_seed(self.cfg.seed, &[tag::RANKER, k as u64]))?;
            }
            self.critic_ready = true;
        }
        let base = derive_seed(self.cfg.seed, &[tag::ROUND, e as u64]);
        let (mut g_total, mut r_total) = (0.0, 0.0);
        for g in 0..self.cfg.g_steps {
            let seed = derive_seed(base, &[1, g as u64]);
            if self.cfg.mode == Mode::MleOnly {
                let batch = self.human(self.cfg.batch_size, seed);
                g_total += self.gen.mle_step(&batch, self.cfg.pretrain_lr, self.cfg.clip_norm)?;
            } else {
                r_total += self.pg_step(seed)?.mean_reward;
            }
        }
        let mut c_total = 0.0;
        for r in 0..self.cfg.r_steps {
            c_total += self.critic_step(derive_seed(base, &[2, r as u64]))?;
        }
        let gs = self.cfg.g_steps.max(1) as f64;
        let rs = self.cfg.r_steps.max(1) as f64;
        Ok(if self.cfg.mode == Mode::MleOnly {
            (g_total / gs, f64::NAN, f64::NAN)
        } else {
            (-r_total / gs, if matches!(self.critic, Critic::None) { f64::NAN } else { c_total / rs }, r_total / gs)
        })
    }

    /// Policy-gradient step for the current objective.
    pub fn pg_step(&mut self, seed: u64) -> Result<PgStats> {
        let cfg = &self.cfg;
        let refs_seed = derive_seed(seed, &[tag::RANKER]);
        let baseline = if cfg.baseline { self.baseline.unwrap_or(0.0) } else { 0.0 };
        let gen_before = self.gen.clone();
        let stats = match (&self.critic, cfg.mode) {
            (Critic::Ranker(ranker), Mode::RankGan) => {
                let refs = ReferenceSet::new(self.human(cfg.ref_size, derive_seed(refs_seed, &[0])))?;
                let cmp = ComparisonSet::new(self.human(cfg.cmp_size, derive_seed(refs_seed, &[1])), Polarity::Plus)?;
                let reward = RankReward::new(ranker, &refs, &cmp)?;
                self.pg_with(&gen_before, &reward, seed, baseline)?
            }
            (Critic::Discriminator(d), Mode::Binary) => self.pg_with(&gen_before, &BinaryReward(d), seed, baseline)?,
            (Critic::None, Mode::PgBleu) => {
                let mut spec = BleuSpec::new(cfg.bleu_order)?;
                spec.strip_special = !self.is_synthetic();
                let refs = BleuReferences::new(&self.human(cfg.bleu_ref_size, refs_seed), spec)?;
                self.pg_with(&gen_before, &BleuReward(refs), seed, baseline)?
            }
            _ => return Err(Error::Usage(format!("no policy-gradient step for mode {}", cfg.mode))),
        };
        let (gen, stats) = stats;
        self.gen = gen;
        if self.cfg.baseline {
            let d = self.cfg.baseline_decay;
            self.baseline = Some(match self.baseline {
                None => stats.mean_reward,
                Some(b) => d * b + (1.0 - d) * stats.mean_reward,
            });
        }
        Ok(stats)
    }

    fn pg_with(&self, gen: &GeneratorModel, reward: &dyn Reward, seed: u64, baseline: f64) -> Result<(GeneratorModel, PgStats)> {
        let mut g = gen.clone();
        let stats = generator_pg_step(
            &mut g,
            reward,
            self.cfg.pg_batch_size,
            self.cfg.seq_len,
            self.cfg.rollouts,
            seed,
            self.cfg.gen_lr,
            self.cfg.clip_norm,
            baseline,
        )?;
        Ok((g, stats))
    }

    fn is_synthetic(&self) -> bool {
        self.oracle.is_some()
    }

    /// One critic update on fresh human and generated batches.
    pub fn critic_step(&mut self, seed: u64) -> Result<f64> {
        let b = self.cfg.batch_size;
        match &self.critic {
            Critic::None => Ok(f64::NAN),
            Critic::Ranker(_) => {
                let human = self.human(b, derive_seed(seed, &[0]));
                let synthetic = self.synthetic(b, derive_seed(seed, &[1]))?;
                let refs = ReferenceSet::new(self.human(self.cfg.ref_size, derive_seed(seed, &[2])))?;
                let c_minus = ComparisonSet::new(self.synthetic(self.cfg.cmp_size, derive_seed(seed, &[3]))?, Polarity::Minus)?;
                let c_plus = ComparisonSet::new(self.human(self.cfg.cmp_size, derive_seed(seed, &[4])), Polarity::Plus)?;
                let clip = self.cfg.clip_norm;
                let Critic::Ranker(r) = &mut self.critic else { unreachable!() };
                r.step_with(&human, &synthetic, &refs, &c_minus, &c_plus, &mut self.critic_opt, clip)
            }
            Critic::Discriminator(_) => {
                let human = self.human(b, derive_seed(seed, &[0]));
                let synthetic = self.synthetic(b, derive_seed(seed, &[1]))?;
                let clip = self.cfg.clip_norm;
                let Critic::Discriminator(d) = &mut self.critic else { unreachable!() };
                d.step_with(&human, &synthetic, &mut self.critic_opt, clip)
            }
        }
    }

    /// Writes the resumable state into `dir`: generator and critic
    /// checkpoints, `state.txt`, `runlog.csv`, `timing.csv` and `config.txt`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<SavedState> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: &str| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        let generator_sha = checkpoint::generator_checkpoint(&self.gen, self.cfg.seed).save(dir.join(GENERATOR_FILE))?;
        let critic_sha = match &self.critic {
            Critic::None => None,
            Critic::Ranker(r) => Some(checkpoint::ranker_checkpoint(r, self.cfg.seed)),
            Critic::Discriminator(d) => Some(checkpoint::discriminator_checkpoint(d, self.cfg.seed)),
        };
        let critic_sha = match critic_sha {
            Some(mut ck) => {
                checkpoint::push_optimizer(&mut ck, &self.critic_opt);
                Some(ck.save(dir.join(CRITIC_FILE))?)
            }
            None => None,
        };
        let runlog = self.log.to_csv()?;
        write(RUNLOG_FILE, &runlog)?;
        let mut timing = String::from("epoch,seconds\n");
        for (e, s) in &self.timings {
            let _ = writeln!(timing, "{e},{s}");
        }
        write(TIMING_FILE, &timing)?;
        write(CONFIG_FILE, &self.cfg.to_config_string())?;
        let mut state = format!("next_epoch = {}\ncritic_ready = {}\n", self.epoch, self.critic_ready);
        if let Some(b) = self.baseline {
            let _ = writeln!(state, "baseline_bits = {:016x}", b.to_bits());
        }
        let _ = writeln!(state, "generator_sha256 = {generator_sha}");
        if let Some(c) = &critic_sha {
            let _ = writeln!(state, "critic_sha256 = {c}");
        }
        write(STATE_FILE, &state)?;
        Ok(SavedState {
            generator_sha256: generator_sha,
            critic_sha256: critic_sha,
            runlog_sha256: checkpoint::sha256_hex(runlog.as_bytes()),
        })
    }

    /// Restores a trainer saved by [`Trainer::save`]. `cfg` must match the
    /// saved configuration except for `adversarial_rounds`, which may grow.
    pub fn resume(cfg: TrainingConfig, corpus: &Corpus, oracle: Option<Oracle>, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let saved = TrainingConfig::parse_str(&read(CONFIG_FILE)?)?;
        let comparable = TrainingConfig { adversarial_rounds: cfg.adversarial_rounds, ..saved };
        if comparable != cfg {
            return Err(Error::Usage("configuration differs from the saved run".into()));
        }
        let mut t = Trainer::new(cfg, corpus, oracle)?;
        let mut sums = std::collections::HashMap::new();
        for line in read(STATE_FILE)?.lines() {
            if let Some((k, v)) = line.split_once('=') {
                sums.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| sums.get(k).ok_or_else(|| Error::Format(format!("state file lacks '{k}'")));
        t.epoch = get("next_epoch")?.parse().map_err(|_| Error::Format("bad next_epoch".into()))?;
        t.critic_ready = get("critic_ready")? == "true";
        t.baseline = match sums.get("baseline_bits") {
            Some(b) => Some(f64::from_bits(
                u64::from_str_radix(b, 16).map_err(|_| Error::Format("bad baseline bits".into()))?,
            )),
            None => None,
        };
        if checkpoint::file_sha256(dir.join(GENERATOR_FILE))? != *get("generator_sha256")? {
            return Err(Error::Format("generator checkpoint does not match its recorded checksum".into()));
        }
        t.gen = Checkpoint::load(dir.join(GENERATOR_FILE))?.generator()?;
        if let Some(expected) = sums.get("critic_sha256") {
            if checkpoint::file_sha256(dir.join(CRITIC_FILE))? != *expected {
                return Err(Error::Format("critic checkpoint does not match its recorded checksum".into()));
            }
            let ck = Checkpoint::load(dir.join(CRITIC_FILE))?;
            ck.restore_optimizer(&mut t.critic_opt)?;
            t.critic = match t.critic {
                Critic::Ranker(_) => Critic::Ranker(ck.ranker()?),
                Critic::Discriminator(_) => Critic::Discriminator(ck.discriminator()?),
                Critic::None => return Err(Error::Format("critic checkpoint present for a critic-free mode".into())),
            };
        }
        t.log = RunLog::from_csv(&read(RUNLOG_FILE)?)?;
        if let Ok(timing) = read(TIMING_FILE) {
            t.timings = timing
                .lines()
                .skip(1)
                .filter_map(|l| l.split_once(','))
                .filter_map(|(e, s)| Some((e.parse().ok()?, s.parse().ok()?)))
                .collect();
        }
        Ok(t)
    }
}

pub const GENERATOR_FILE: &str = "generator.ckpt";
pub const CRITIC_FILE: &str = "critic.ckpt";
pub const RUNLOG_FILE: &str = "runlog.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const STATE_FILE: &str = "state.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SavedState {
    pub generator_sha256: String,
    pub critic_sha256: Option<String>,
    pub runlog_sha256: String,
}

fn pick_from(pool: &[TokenSeq], k: usize, rng: &mut rng::StreamRng) -> Vec<TokenSeq> {
    let k = k.min(pool.len());
    sample_indices(rng, pool.len(), k).into_iter().map(|i| pool[i].clone()).collect()
}
