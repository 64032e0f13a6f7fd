use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;

use rankgan::adversarial::{
    RunLog, Trainer, CONFIG_FILE, CRITIC_FILE, GENERATOR_FILE, RUNLOG_FILE, STATE_FILE,
};
use rankgan::checkpoint::{self, Checkpoint};
use rankgan::config::{Mode, TrainingConfig};
use rankgan::corpus::{read_lines, Corpus, Vocab, VocabKind, DEFAULT_FIXED_LEN};
use rankgan::generator::{GeneratorDims, GeneratorModel};
use rankgan::metrics::{corpus_bleu, BleuSpec};
use rankgan::oracle_eval::{sample_parallel, Oracle, DEFAULT_EVAL_SAMPLES, DEFAULT_ORACLE_STD};
use rankgan::rng::{derive_seed, tag};

use crate::manifest::RunManifest;
use crate::Common;

pub const ORACLE_FILE: &str = "oracle.ckpt";
pub const CORPUS_FILE: &str = "corpus.txt";
pub const VOCAB_FILE: &str = "vocab.txt";

fn out_dir(common: &Common) -> Result<&Path> {
    common.out_dir.as_deref().ok_or_else(|| anyhow!("--out-dir is required"))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[derive(Args, Debug)]
pub struct MakeOracleArgs {
    #[arg(long, default_value_t = 500)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden_dim: usize,
    /// Standard deviation of the normal initialisation.
    #[arg(long, default_value_t = DEFAULT_ORACLE_STD)]
    pub init_std: f64,
    /// Number of synthetic sequences.
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    #[arg(long, default_value_t = DEFAULT_FIXED_LEN)]
    pub len: usize,
}

pub fn make_oracle(common: &Common, a: &MakeOracleArgs) -> Result<()> {
    let dir = out_dir(common)?;
    let seed = common.seed.unwrap_or(0);
    if a.len == 0 {
        bail!("--len must be at least 1");
    }
    let oracle = Oracle::new(seed, GeneratorDims::new(a.vocab_size, a.embed_dim, a.hidden_dim), a.init_std)?;
    let corpus = oracle.generate_synthetic(a.count, a.len, derive_seed(seed, &[tag::SAMPLE]))?;
    create_dir(dir)?;
    checkpoint::oracle_checkpoint(&oracle).save(dir.join(ORACLE_FILE))?;
    corpus.vocab().save(dir.join(VOCAB_FILE))?;
    corpus.save(dir.join(CORPUS_FILE))?;
    let settings = [
        ("vocab_size", a.vocab_size.to_string()),
        ("embed_dim", a.embed_dim.to_string()),
        ("hidden_dim", a.hidden_dim.to_string()),
        ("init_std", format!("{:?}", a.init_std)),
        ("count", a.count.to_string()),
        ("len", a.len.to_string()),
    ];
    let mut m = RunManifest::new("make-oracle", seed, settings.map(|(k, v)| (k.to_string(), v)));
    for (name, file) in [("oracle", ORACLE_FILE), ("vocab", VOCAB_FILE), ("corpus", CORPUS_FILE)] {
        m.add_artifact(dir, name, file)?;
    }
    m.save(dir)
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Objective; overrides the configured mode.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Continue the run saved in --out-dir.
    #[arg(long)]
    pub resume: bool,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Relative paths in a config file are taken from the file's directory.
fn absolutise(p: &mut Option<PathBuf>, base: &Path) -> Result<()> {
    if let Some(path) = p.as_mut() {
        let joined = if path.is_absolute() { path.clone() } else { base.join(&*path) };
        *path = std::fs::canonicalize(&joined).with_context(|| format!("cannot find {}", joined.display()))?;
    }
    Ok(())
}

fn training_config(common: &Common, a: &TrainArgs) -> Result<TrainingConfig> {
    let (mut cfg, base) = match &common.config {
        Some(p) => {
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (TrainingConfig::load(p).with_context(|| format!("loading {}", p.display()))?, base)
        }
        None => (TrainingConfig::default(), PathBuf::new()),
    };
    for kv in &a.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg.set(k.trim(), v.trim()).map_err(|msg| anyhow!("--set key `{}`: {msg}", k.trim()))?;
    }
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
    absolutise(&mut cfg.corpus, &base)?;
    absolutise(&mut cfg.vocab, &base)?;
    absolutise(&mut cfg.oracle, &base)?;
    Ok(cfg)
}

struct TrainInputs {
    corpus: Corpus,
    oracle: Option<Oracle>,
}

fn training_inputs(cfg: &TrainingConfig) -> Result<TrainInputs> {
    let path = cfg.corpus.as_ref().ok_or_else(|| anyhow!("config key `corpus` is required for train"))?;
    let vocab = match &cfg.vocab {
        Some(v) => Vocab::load(v)?,
        None => Vocab::build(read_lines(path)?, cfg.min_count)?,
    };
    let corpus = Corpus::load(path, Arc::new(vocab), cfg.seq_len)?;
    let oracle = match &cfg.oracle {
        Some(p) => Some(Checkpoint::load(p)?.oracle()?),
        None => None,
    };
    Ok(TrainInputs { corpus, oracle })
}

fn save_run(t: &Trainer, corpus: &Corpus, dir: &Path) -> Result<()> {
    t.save(dir)?;
    corpus.vocab().save(dir.join(VOCAB_FILE))?;
    let cfg = t.config();
    let mut m = RunManifest::new("train", cfg.seed, cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)));
    let inputs = [("corpus", &cfg.corpus), ("vocab", &cfg.vocab), ("oracle", &cfg.oracle)];
    for (name, p) in inputs {
        if let Some(p) = p {
            m.add_input(name, p)?;
        }
    }
    let files = [
        ("generator", GENERATOR_FILE),
        ("critic", CRITIC_FILE),
        ("runlog", RUNLOG_FILE),
        ("config", CONFIG_FILE),
        ("state", STATE_FILE),
        ("vocab", VOCAB_FILE),
    ];
    for (name, file) in files {
        m.add_artifact(dir, name, file)?;
    }
    m.save(dir)
}

pub fn train(common: &Common, a: &TrainArgs) -> Result<()> {
    let dir = out_dir(common)?;
    let cfg = training_config(common, a)?;
    let inputs = training_inputs(&cfg)?;
    let mut t = if a.resume {
        RunManifest::load(dir)?.verify(dir).context("cannot resume")?;
        Trainer::resume(cfg.clone(), &inputs.corpus, inputs.oracle, dir)?
    } else {
        if dir.join(STATE_FILE).exists() {
            bail!("{} already holds a run; pass --resume to continue it", dir.display());
        }
        Trainer::new(cfg.clone(), &inputs.corpus, inputs.oracle)?
    };
    create_dir(dir)?;
    while !t.is_done() {
        let r = t.run_epoch()?.clone();
        let nll = r.oracle_nll.map(|n| format!(" oracle_nll {:.4}", n.per_sequence)).unwrap_or_default();
        eprintln!("epoch {} {} g_loss {:.4}{nll}", r.epoch, r.phase.name(), r.g_loss);
        if cfg.checkpoint_every > 0 && r.epoch % cfg.checkpoint_every == 0 && !t.is_done() {
            save_run(&t, &inputs.corpus, dir)?;
        }
    }
    save_run(&t, &inputs.corpus, dir)
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Generator or oracle checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = DEFAULT_FIXED_LEN)]
    pub len: usize,
    /// Vocabulary file; defaults to `vocab.txt` beside the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

fn vocab_for(checkpoint: &Path, explicit: Option<&Path>, gen: &GeneratorModel) -> Result<Vocab> {
    let sibling = checkpoint.parent().map(|d| d.join(VOCAB_FILE));
    let vocab = match (explicit, sibling) {
        (Some(p), _) => Vocab::load(p)?,
        (None, Some(p)) if p.exists() => Vocab::load(p)?,
        _ => Vocab::synthetic(gen.vocab_size()),
    };
    if vocab.len() != gen.vocab_size() {
        bail!("vocabulary has {} entries but the generator has {}", vocab.len(), gen.vocab_size());
    }
    Ok(vocab)
}

pub fn sample(common: &Common, a: &SampleArgs) -> Result<()> {
    let gen = Checkpoint::load(&a.checkpoint)?.generator()?;
    let vocab = vocab_for(&a.checkpoint, a.vocab.as_deref(), &gen)?;
    if a.count == 0 {
        return Ok(());
    }
    let seqs = sample_parallel(&gen, a.count, a.len, common.seed.unwrap_or(0))?;
    let mut out = std::io::stdout().lock();
    for s in &seqs {
        writeln!(out, "{}", vocab.decode(s))?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalNllArgs {
    /// Generator checkpoint to score.
    #[arg(long, requires = "oracle", conflicts_with = "runlog")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EVAL_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = DEFAULT_FIXED_LEN)]
    pub len: usize,
    /// Print the learning curve recorded in a run log instead.
    #[arg(long)]
    pub runlog: Option<PathBuf>,
}

pub fn eval_nll(common: &Common, a: &EvalNllArgs) -> Result<()> {
    let mut out = std::io::stdout().lock();
    if let Some(p) = &a.runlog {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let log = RunLog::from_csv(&text)?;
        writeln!(out, "epoch,phase,oracle_nll,oracle_nll_stderr")?;
        for r in &log.records {
            if let Some(n) = r.oracle_nll {
                writeln!(out, "{},{},{},{}", r.epoch, r.phase.name(), n.per_sequence, n.std_err)?;
            }
        }
        return Ok(());
    }
    let (Some(ck), Some(op)) = (&a.checkpoint, &a.oracle) else {
        bail!("eval-nll needs --checkpoint with --oracle, or --runlog");
    };
    let gen = Checkpoint::load(ck)?.generator()?;
    let oracle = Checkpoint::load(op)?.oracle()?;
    let est = oracle.nll_of(&gen, a.samples, a.len, common.seed.unwrap_or(0))?;
    writeln!(out, "samples,nll_per_sequence,nll_per_token,std_err,likelihood")?;
    writeln!(out, "{},{},{},{},{}", est.n, est.per_sequence, est.per_token, est.std_err, est.geometric_likelihood())?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalBleuArgs {
    /// One candidate sentence per line.
    #[arg(long, conflicts_with = "checkpoint")]
    pub candidates: Option<PathBuf>,
    /// Score sentences sampled from this generator instead.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = DEFAULT_FIXED_LEN)]
    pub len: usize,
    /// One reference sentence per line.
    #[arg(long)]
    pub references: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub max_order: usize,
    /// Report the order-n precision alone rather than the cumulative score.
    #[arg(long)]
    pub order_only: bool,
}

pub fn eval_bleu(common: &Common, a: &EvalBleuArgs) -> Result<()> {
    BleuSpec::new(a.max_order)?;
    let ref_lines = read_lines(&a.references)?;
    let (vocab, candidates, len) = match (&a.checkpoint, &a.candidates) {
        (Some(ck), _) => {
            let gen = Checkpoint::load(ck)?.generator()?;
            let vocab = vocab_for(ck, a.vocab.as_deref(), &gen)?;
            let seqs = sample_parallel(&gen, a.count, a.len, common.seed.unwrap_or(0))?;
            (vocab, seqs, a.len)
        }
        (None, Some(c)) => {
            let cand_lines = read_lines(c)?;
            let vocab = match &a.vocab {
                Some(v) => Vocab::load(v)?,
                None => Vocab::build(ref_lines.iter().chain(&cand_lines), 1)?,
            };
            let longest = ref_lines.iter().chain(&cand_lines).map(|l| l.split_whitespace().count()).max().unwrap_or(0);
            let len = longest.max(1);
            let seqs = Corpus::from_lines(Arc::new(vocab.clone()), &cand_lines, len).seqs().to_vec();
            (vocab, seqs, len)
        }
        (None, None) => bail!("eval-bleu needs --candidates or --checkpoint"),
    };
    if candidates.is_empty() {
        bail!("no candidate sentences");
    }
    let references = Corpus::from_lines(Arc::new(vocab.clone()), &ref_lines, len).seqs().to_vec();
    let mut out = std::io::stdout().lock();
    writeln!(out, "order,score")?;
    for n in 1..=a.max_order {
        let spec = BleuSpec {
            cumulative: !a.order_only,
            strip_special: vocab.kind() == VocabKind::Text,
            ..BleuSpec::new(n)?
        };
        writeln!(out, "{n},{}", corpus_bleu(&candidates, &references, &spec)?)?;
    }
    Ok(())
}
