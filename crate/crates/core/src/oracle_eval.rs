//! Synthetic-data harness: a frozen random LSTM plays the role of the true
//! data distribution, produces the training corpus, and scores generated
//! samples by its own negative log-likelihood.

use std::sync::Arc;

use rayon::prelude::*;

use crate::corpus::{Corpus, TokenSeq, Vocab};
use crate::error::{Error, Result};
use crate::generator::{GeneratorDims, GeneratorModel};
use crate::optim::Parameterized;

/// Standard deviation of the oracle's normal parameter init.
pub const DEFAULT_ORACLE_STD: f64 = 1.0;
pub const DEFAULT_EVAL_SAMPLES: usize = 2000;

/// A generator that is never updated after creation.
#[derive(Clone, Debug, PartialEq)]
pub struct Oracle {
    model: GeneratorModel,
    seed: u64,
}

impl Oracle {
    pub fn new(seed: u64, dims: GeneratorDims, init_std: f64) -> Result<Self> {
        if !(init_std > 0.0 && init_std.is_finite()) {
            return Err(Error::Usage(format!("oracle init std {init_std} must be positive")));
        }
        Ok(Oracle { model: GeneratorModel::normal_init(dims, seed, init_std)?, seed })
    }

    /// Wraps an existing model, e.g. one loaded from a checkpoint.
    pub fn from_model(model: GeneratorModel, seed: u64) -> Self {
        Oracle { model, seed }
    }

    pub fn model(&self) -> &GeneratorModel {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vocab_size(&self) -> usize {
        self.model.vocab_size()
    }

    pub fn checksum(&self) -> String {
        self.model.param_checksum()
    }

    /// `count` sequences of `len` tokens over an integer vocabulary.
    pub fn generate_synthetic(&self, count: usize, len: usize, seed: u64) -> Result<Corpus> {
        if count == 0 {
            return Err(Error::Usage("synthetic corpus needs at least one sequence".into()));
        }
        let seqs = self.model.sample_many(count, len, seed)?;
        Corpus::new(Arc::new(Vocab::synthetic(self.vocab_size())), seqs, len)
    }

    /// NLL of the given sequences under the oracle, in nats per sequence.
    pub fn score(&self, seqs: &[TokenSeq]) -> Result<Vec<f64>> {
        const CHUNK: usize = 128;
        let parts: Vec<Vec<f64>> =
            seqs.par_chunks(CHUNK).map(|c| self.model.nll_batch(c)).collect::<Result<_>>()?;
        Ok(parts.concat())
    }

    /// Estimated oracle NLL of `n_samples` sequences drawn from `gen`.
    pub fn nll_of(&self, gen: &GeneratorModel, n_samples: usize, len: usize, seed: u64) -> Result<NllEstimate> {
        if gen.vocab_size() != self.vocab_size() {
            return Err(Error::Usage(format!(
                "generator vocabulary {} differs from oracle vocabulary {}",
                gen.vocab_size(),
                self.vocab_size()
            )));
        }
        if n_samples == 0 || len == 0 {
            return Err(Error::Usage("oracle NLL needs samples of nonzero length".into()));
        }
        let samples = sample_parallel(gen, n_samples, len, seed)?;
        Ok(NllEstimate::from_values(&self.score(&samples)?, len))
    }
}

/// Draws like [`GeneratorModel::sample_many`] but spreads chunks over the
/// rayon pool. Row `i` uses the same stream either way.
pub fn sample_parallel(gen: &GeneratorModel, count: usize, len: usize, seed: u64) -> Result<Vec<TokenSeq>> {
    const CHUNK: usize = 256;
    let starts: Vec<usize> = (0..count).step_by(CHUNK).collect();
    let parts: Vec<Vec<TokenSeq>> = starts
        .par_iter()
        .map(|&s| gen.sample_range(s, CHUNK.min(count - s), len, seed))
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NllEstimate {
    /// Mean nats per sequence.
    pub per_sequence: f64,
    pub per_token: f64,
    /// Standard error of `per_sequence`.
    pub std_err: f64,
    pub n: usize,
}

impl NllEstimate {
    pub fn from_values(values: &[f64], len: usize) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        NllEstimate { per_sequence: mean, per_token: mean / len as f64, std_err: (var / n as f64).sqrt(), n }
    }

    /// Mean likelihood per sequence implied by the mean NLL, `exp(-nll)`.
    pub fn geometric_likelihood(&self) -> f64 {
        (-self.per_sequence).exp()
    }
}

pub fn make_oracle(seed: u64, dims: GeneratorDims, init_std: f64) -> Result<Oracle> {
    Oracle::new(seed, dims, init_std)
}

pub fn generate_synthetic(oracle: &Oracle, count: usize, len: usize, seed: u64) -> Result<Corpus> {
    oracle.generate_synthetic(count, len, seed)
}

pub fn oracle_nll(
    oracle: &Oracle,
    gen: &GeneratorModel,
    n_samples: usize,
    len: usize,
    seed: u64,
) -> Result<NllEstimate> {
    oracle.nll_of(gen, n_samples, len, seed)
}
