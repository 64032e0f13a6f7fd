//! Python bindings for the `rankgan` crate.
//!
//! Sequences cross the boundary as lists of token ids. Library errors become
//! `ValueError`.

use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rankgan::adversarial::{EpochRecord, Trainer as CoreTrainer};
use rankgan::checkpoint::{self, Checkpoint};
use rankgan::config::TrainingConfig;
use rankgan::corpus::{Corpus, TokenSeq, Vocab as CoreVocab};
use rankgan::generator::{GeneratorDims, GeneratorModel};
use rankgan::metrics::{self, BleuSpec};
use rankgan::oracle_eval::{self, DEFAULT_ORACLE_STD};
use rankgan::ranker::{self, ComparisonSet, Polarity, RankerModel, ReferenceSet};

fn err(e: rankgan::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn seqs(ids: Vec<Vec<usize>>) -> Vec<TokenSeq> {
    ids.into_iter().map(TokenSeq::from_ids).collect()
}

fn ids(seqs: &[TokenSeq]) -> Vec<Vec<usize>> {
    seqs.iter().map(|s| s.ids().to_vec()).collect()
}

#[pyclass(module = "rankgan_py", frozen)]
pub struct Vocab {
    inner: Arc<CoreVocab>,
}

#[pymethods]
impl Vocab {
    /// Vocabulary from whitespace-tokenised lines.
    #[staticmethod]
    #[pyo3(signature = (lines, min_count = 1))]
    fn build(lines: Vec<String>, min_count: usize) -> PyResult<Self> {
        Ok(Vocab { inner: Arc::new(CoreVocab::build(lines, min_count).map_err(err)?) })
    }

    /// Integer vocabulary whose tokens are `"0"..str(size - 1)`.
    #[staticmethod]
    fn synthetic(size: usize) -> Self {
        Vocab { inner: Arc::new(CoreVocab::synthetic(size)) }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Vocab { inner: Arc::new(CoreVocab::load(path).map_err(err)?) })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    fn encode(&self, line: &str, fixed_len: usize) -> PyResult<Vec<usize>> {
        if fixed_len == 0 {
            return Err(PyValueError::new_err("fixed_len must be at least 1"));
        }
        Ok(self.inner.encode(line, fixed_len).ids().to_vec())
    }

    fn decode(&self, ids: Vec<usize>) -> String {
        self.inner.decode_ids(&ids)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(module = "rankgan_py")]
pub struct Generator {
    inner: GeneratorModel,
}

#[pymethods]
impl Generator {
    /// LSTM generator with uniform(-scale, scale) weights.
    #[new]
    #[pyo3(signature = (vocab_size, embed_dim = 32, hidden_dim = 32, seed = 0, scale = 0.1))]
    fn new(vocab_size: usize, embed_dim: usize, hidden_dim: usize, seed: u64, scale: f64) -> PyResult<Self> {
        let dims = GeneratorDims::new(vocab_size, embed_dim, hidden_dim);
        Ok(Generator { inner: GeneratorModel::uniform_init(dims, seed, scale).map_err(err)? })
    }

    /// Loads a generator or oracle checkpoint.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Generator { inner: Checkpoint::load(path).and_then(|c| c.generator()).map_err(err)? })
    }

    #[pyo3(signature = (path, seed = 0))]
    fn save(&self, path: &str, seed: u64) -> PyResult<String> {
        checkpoint::generator_checkpoint(&self.inner, seed).save(path).map_err(err)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn sample(&self, count: usize, length: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
        Ok(ids(&oracle_eval::sample_parallel(&self.inner, count, length, seed).map_err(err)?))
    }

    /// Negative log-likelihood of each sequence, in nats.
    fn nll(&self, sequences: Vec<Vec<usize>>) -> PyResult<Vec<f64>> {
        self.inner.nll_batch(&seqs(sequences)).map_err(err)
    }

    /// One maximum-likelihood SGD step; returns the mean loss per token.
    #[pyo3(signature = (batch, learning_rate, clip = 5.0))]
    fn mle_step(&mut self, batch: Vec<Vec<usize>>, learning_rate: f64, clip: f64) -> PyResult<f64> {
        self.inner.mle_step(&seqs(batch), learning_rate, clip).map_err(err)
    }
}

#[pyclass(module = "rankgan_py", frozen)]
pub struct Oracle {
    inner: oracle_eval::Oracle,
}

#[pymethods]
impl Oracle {
    /// Frozen random LSTM with normal(0, init_std) weights.
    #[new]
    #[pyo3(signature = (seed, vocab_size, embed_dim = 32, hidden_dim = 32, init_std = DEFAULT_ORACLE_STD))]
    fn new(seed: u64, vocab_size: usize, embed_dim: usize, hidden_dim: usize, init_std: f64) -> PyResult<Self> {
        let dims = GeneratorDims::new(vocab_size, embed_dim, hidden_dim);
        Ok(Oracle { inner: oracle_eval::Oracle::new(seed, dims, init_std).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Oracle { inner: Checkpoint::load(path).and_then(|c| c.oracle()).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<String> {
        checkpoint::oracle_checkpoint(&self.inner).save(path).map_err(err)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn checksum(&self) -> String {
        self.inner.checksum()
    }

    fn generator(&self) -> Generator {
        Generator { inner: self.inner.model().clone() }
    }

    fn generate(&self, count: usize, length: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
        Ok(ids(self.inner.generate_synthetic(count, length, seed).map_err(err)?.seqs()))
    }

    /// Oracle NLL of each sequence, in nats.
    fn score(&self, sequences: Vec<Vec<usize>>) -> PyResult<Vec<f64>> {
        self.inner.score(&seqs(sequences)).map_err(err)
    }

    /// Mean oracle NLL of samples drawn from `generator`.
    #[pyo3(signature = (generator, n_samples = 2000, length = 20, seed = 0))]
    fn nll_of<'py>(
        &self,
        py: Python<'py>,
        generator: &Generator,
        n_samples: usize,
        length: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let est = self.inner.nll_of(&generator.inner, n_samples, length, seed).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("per_sequence", est.per_sequence)?;
        d.set_item("per_token", est.per_token)?;
        d.set_item("std_err", est.std_err)?;
        d.set_item("n", est.n)?;
        Ok(d)
    }
}

#[pyclass(module = "rankgan_py")]
pub struct Ranker {
    inner: RankerModel,
}

#[pymethods]
impl Ranker {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Ranker { inner: Checkpoint::load(path).and_then(|c| c.ranker()).map_err(err)? })
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    /// Mean rank score of `s` over the references against `comparison`.
    fn expected_rank(&self, s: Vec<usize>, references: Vec<Vec<usize>>, comparison: Vec<Vec<usize>>) -> PyResult<f64> {
        let refs = ReferenceSet::new(seqs(references)).map_err(err)?;
        let cmp = ComparisonSet::new(seqs(comparison), Polarity::Plus).map_err(err)?;
        self.inner.expected_rank(&TokenSeq::from_ids(s), &refs, &cmp).map_err(err)
    }
}

/// Softmax share of relevance `alpha` among itself and `others` at temperature `gamma`.
#[pyfunction]
fn rank_score(alpha: f64, others: Vec<f64>, gamma: f64) -> f64 {
    ranker::rank_score_from_relevances(alpha, &others, gamma)
}

fn bleu_spec(max_n: usize, cumulative: bool, strip_special: bool) -> PyResult<BleuSpec> {
    Ok(BleuSpec { cumulative, strip_special, ..BleuSpec::new(max_n).map_err(err)? })
}

#[pyfunction]
#[pyo3(signature = (candidate, references, max_n = 2, cumulative = true, strip_special = false))]
fn bleu(candidate: Vec<usize>, references: Vec<Vec<usize>>, max_n: usize, cumulative: bool, strip_special: bool) -> PyResult<f64> {
    let spec = bleu_spec(max_n, cumulative, strip_special)?;
    metrics::bleu(&TokenSeq::from_ids(candidate), &seqs(references), &spec).map_err(err)
}

/// Mean sentence BLEU of the candidates.
#[pyfunction]
#[pyo3(signature = (candidates, references, max_n = 2, cumulative = true, strip_special = false))]
fn corpus_bleu(
    candidates: Vec<Vec<usize>>,
    references: Vec<Vec<usize>>,
    max_n: usize,
    cumulative: bool,
    strip_special: bool,
) -> PyResult<f64> {
    let spec = bleu_spec(max_n, cumulative, strip_special)?;
    metrics::corpus_bleu(&seqs(candidates), &seqs(references), &spec).map_err(err)
}

fn record_dict<'py>(py: Python<'py>, r: &EpochRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("epoch", r.epoch)?;
    d.set_item("phase", r.phase.name())?;
    d.set_item("g_loss", r.g_loss)?;
    d.set_item("critic_loss", r.critic_loss)?;
    d.set_item("mean_reward", r.mean_reward)?;
    d.set_item("oracle_nll", r.oracle_nll.map(|n| n.per_sequence))?;
    d.set_item("valid_nll", r.valid_nll)?;
    Ok(d)
}

#[pyclass(module = "rankgan_py", unsendable)]
pub struct Trainer {
    inner: CoreTrainer,
}

#[pymethods]
impl Trainer {
    /// `config` maps configuration keys to values (any value with a
    /// string form); `corpus` holds fixed-length id sequences.
    #[new]
    #[pyo3(signature = (config, corpus, vocab, oracle = None))]
    fn new(config: &Bound<'_, PyDict>, corpus: Vec<Vec<usize>>, vocab: &Vocab, oracle: Option<&Oracle>) -> PyResult<Self> {
        let mut cfg = TrainingConfig::default();
        for (k, v) in config.iter() {
            let key: String = k.extract()?;
            let value = v.str()?.to_string();
            let value = match value.as_str() {
                "True" => "true".to_string(),
                "False" => "false".to_string(),
                _ => value,
            };
            cfg.set(&key, &value).map_err(|m| PyValueError::new_err(format!("config key `{key}`: {m}")))?;
        }
        let len = corpus.first().map(Vec::len).unwrap_or(cfg.seq_len);
        let corpus = Corpus::new(vocab.inner.clone(), seqs(corpus), len).map_err(err)?;
        let inner = CoreTrainer::new(cfg, &corpus, oracle.map(|o| o.inner.clone())).map_err(err)?;
        Ok(Trainer { inner })
    }

    #[getter]
    fn is_done(&self) -> bool {
        self.inner.is_done()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch()
    }

    #[getter]
    fn generator(&self) -> Generator {
        Generator { inner: self.inner.generator().clone() }
    }

    /// Runs the next epoch and returns its log row.
    fn run_epoch<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.run_epoch().map_err(err)?.clone();
        record_dict(py, &r)
    }

    /// Runs to completion and returns every log row.
    fn train<'py>(&mut self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let log = self.inner.train().map_err(err)?.clone();
        log.records.iter().map(|r| record_dict(py, r)).collect()
    }

    fn runlog_csv(&self) -> PyResult<String> {
        self.inner.log().to_csv().map_err(err)
    }

    /// Writes a resumable run directory.
    fn save(&self, dir: &str) -> PyResult<()> {
        self.inner.save(dir).map(|_| ()).map_err(err)
    }
}

#[pymodule]
pub fn rankgan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Vocab>()?;
    m.add_class::<Generator>()?;
    m.add_class::<Oracle>()?;
    m.add_class::<Ranker>()?;
    m.add_class::<Trainer>()?;
    m.add_function(wrap_pyfunction!(rank_score, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_bleu, m)?)?;
    Ok(())
}
