//! Convolutional sentence encoder shared by the ranker and the binary
//! discriminator: embedding lookup, one filter bank per width, activation,
//! max-over-time pooling, concatenation.


use crate::corpus::TokenSeq;
use crate::error::{Error, Result};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::{conv1d_maxpool, Activation, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub widths: Vec<usize>,
    pub filters_per_width: usize,
    pub activation: Activation,
    pub fixed_len: usize,
}

impl EncoderConfig {
    /// Widths {2, 3, 4}, 16 filters each, tanh, 32-dimensional embeddings.
    pub fn new(vocab_size: usize, fixed_len: usize) -> Self {
        EncoderConfig {
            vocab_size,
            embed_dim: 32,
            widths: vec![2, 3, 4],
            filters_per_width: 16,
            activation: Activation::Tanh,
            fixed_len,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.widths.len() * self.filters_per_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.filters_per_width == 0 {
            return Err(Error::Usage(format!("invalid encoder configuration {self:?}")));
        }
        if self.widths.is_empty() || self.widths.iter().any(|&w| w == 0 || w > self.fixed_len) {
            return Err(Error::Usage(format!(
                "filter widths {:?} must lie in 1..={}",
                self.widths, self.fixed_len
            )));
        }
        Ok(())
    }
}

/// Encoded sentence `y_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVec {
    pub y: Vec<f64>,
}

impl FeatureVec {
    pub fn norm(&self) -> f64 {
        self.y.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Zero-norm vectors have no defined direction and cannot be ranked.
    pub fn is_degenerate(&self) -> bool {
        !(self.norm() > 0.0)
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvEncoder {
    cfg: EncoderConfig,
    pub embedding: Tensor,
    pub filters: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub embedding: Var,
    pub filters: Vec<Var>,
    pub biases: Vec<Var>,
}

impl EncoderVars {
    pub fn all(&self) -> Vec<Var> {
        std::iter::once(self.embedding)
            .chain(self.filters.iter().copied())
            .chain(self.biases.iter().copied())
            .collect()
    }
}

impl ConvEncoder {
    pub fn zeros(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let filters = cfg
            .widths
            .iter()
            .map(|&w| Tensor::zeros(&[cfg.filters_per_width, w * cfg.embed_dim]))
            .collect();
        let biases = cfg.widths.iter().map(|_| Tensor::zeros(&[cfg.filters_per_width])).collect();
        Ok(ConvEncoder {
            embedding: Tensor::zeros(&[cfg.vocab_size, cfg.embed_dim]),
            filters,
            biases,
            cfg,
        })
    }

    /// Parameters drawn from uniform(-scale, scale).
    pub fn uniform_init(cfg: EncoderConfig, seed: u64, scale: f64) -> Result<Self> {
        rng::check_scale(scale)?;
        let mut enc = ConvEncoder::zeros(cfg)?;
        let mut rng = rng::stream(seed, &[rng::tag::RANKER, rng::tag::INIT]);
        for t in enc.params_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng::symmetric(&mut rng, scale));
        }
        Ok(enc)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn params(&self) -> Vec<&Tensor> {
        std::iter::once(&self.embedding).chain(&self.filters).chain(&self.biases).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        std::iter::once(&mut self.embedding)
            .chain(self.filters.iter_mut())
            .chain(self.biases.iter_mut())
            .collect()
    }

    fn check(&self, seqs: &[TokenSeq]) -> Result<()> {
        for s in seqs {
            if s.fixed_len() != self.cfg.fixed_len {
                return Err(Error::Usage(format!(
                    "sequence length {} differs from encoder length {}",
                    s.fixed_len(),
                    self.cfg.fixed_len
                )));
            }
            if let Some(&bad) = s.ids().iter().find(|&&i| i >= self.cfg.vocab_size) {
                return Err(Error::Usage(format!("token id {bad} outside vocabulary")));
            }
        }
        Ok(())
    }

    fn embed(&self, seqs: &[TokenSeq]) -> Tensor {
        let d = self.cfg.embed_dim;
        let mut x = Vec::with_capacity(seqs.len() * self.cfg.fixed_len * d);
        for s in seqs {
            for &id in s.ids() {
                x.extend_from_slice(self.embedding.row(id));
            }
        }
        Tensor::new(vec![seqs.len(), self.cfg.fixed_len, d], x).expect("consistent shape")
    }

    /// Features for a batch of sequences, without recording gradients.
    pub fn encode_batch(&self, seqs: &[TokenSeq]) -> Result<Vec<FeatureVec>> {
        self.check(seqs)?;
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.embed(seqs);
        let k = self.cfg.filters_per_width;
        let mut feats = vec![Vec::with_capacity(self.cfg.feature_dim()); seqs.len()];
        for ((f, b), &w) in self.filters.iter().zip(&self.biases).zip(&self.cfg.widths) {
            let pooled = conv1d_maxpool(&x, f, b, w, self.cfg.activation)?.pooled;
            for (i, feat) in feats.iter_mut().enumerate() {
                feat.extend_from_slice(&pooled.data()[i * k..(i + 1) * k]);
            }
        }
        Ok(feats.into_iter().map(|y| FeatureVec { y }).collect())
    }

    pub fn encode(&self, seq: &TokenSeq) -> Result<FeatureVec> {
        Ok(self.encode_batch(std::slice::from_ref(seq))?.pop().expect("one row"))
    }

    pub fn register(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            embedding: tape.param(&self.embedding),
            filters: self.filters.iter().map(|f| tape.param(f)).collect(),
            biases: self.biases.iter().map(|b| tape.param(b)).collect(),
        }
    }

    /// Records the encoder on `tape`; returns `[seqs.len(), feature_dim]`.
    pub fn encode_tape(&self, tape: &mut Tape, vars: &EncoderVars, seqs: &[TokenSeq]) -> Result<Var> {
        self.check(seqs)?;
        if seqs.is_empty() {
            return Err(Error::Usage("cannot encode an empty batch".into()));
        }
        let ids: Vec<usize> = seqs.iter().flat_map(|s| s.ids().iter().copied()).collect();
        let flat = tape.gather(vars.embedding, &ids)?;
        let x = tape.reshape(flat, &[seqs.len(), self.cfg.fixed_len, self.cfg.embed_dim])?;
        let mut parts = Vec::with_capacity(self.cfg.widths.len());
        for ((f, b), &w) in vars.filters.iter().zip(&vars.biases).zip(&self.cfg.widths) {
            parts.push(tape.conv1d_maxpool(x, *f, *b, w, self.cfg.activation)?);
        }
        tape.concat_cols(&parts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 6,
            embed_dim: 3,
            widths: vec![2, 3],
            filters_per_width: 2,
            activation: Activation::Tanh,
            fixed_len: 5,
        }
    }

    #[test]
    fn zero_filters_give_flagged_zero_vector() {
        let enc = ConvEncoder::zeros(cfg()).unwrap();
        let f = enc.encode(&TokenSeq::from_ids(vec![1, 2, 3, 4, 5])).unwrap();
        assert!(f.y.iter().all(|&v| v == 0.0));
        assert!(f.is_degenerate());
    }

    #[test]
    fn wrong_length_is_usage_error() {
        let enc = ConvEncoder::uniform_init(cfg(), 0, 0.1).unwrap();
        let err = enc.encode(&TokenSeq::from_ids(vec![1, 2])).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn widths_must_fit_sequence() {
        let mut c = cfg();
        c.widths = vec![6];
        assert!(ConvEncoder::zeros(c).is_err());
    }

    #[test]
    fn tape_and_plain_paths_agree() {
        let enc = ConvEncoder::uniform_init(cfg(), 2, 0.5).unwrap();
        let seqs = vec![
            TokenSeq::from_ids(vec![1, 2, 3, 4, 5]),
            TokenSeq::from_ids(vec![0, 0, 5, 1, 1]),
        ];
        let plain = enc.encode_batch(&seqs).unwrap();
        let mut tape = Tape::new();
        let vars = enc.register(&mut tape);
        let y = enc.encode_tape(&mut tape, &vars, &seqs).unwrap();
        for (i, f) in plain.iter().enumerate() {
            assert_eq!(tape.value(y).row(i), f.y.as_slice());
        }
    }
    #[test]
    fn matches_dense_loop_convolution() {
        let c = EncoderConfig { widths: vec![3], filters_per_width: 1, ..cfg() };
        let enc = ConvEncoder::uniform_init(c, 4, 0.7).unwrap();
        let ids = [4, 1, 1, 0, 5];
        let e = 3;
        let mut best = f64::NEG_INFINITY;
        for t in 0..=ids.len() - 3 {
            let mut z = enc.biases[0].data()[0];
            for k in 0..3 {
                for d in 0..e {
                    z += enc.filters[0].data()[k * e + d] * enc.embedding.data()[ids[t + k] * e + d];
                }
            }
            best = best.max(z.tanh());
        }
        let f = enc.encode(&TokenSeq::from_ids(ids.to_vec())).unwrap();
        assert_eq!(f.y.len(), 1);
        assert!((f.y[0] - best).abs() < 1e-15);
    }

    #[test]
    fn identical_sequences_encode_identically() {
        let enc = ConvEncoder::uniform_init(cfg(), 9, 0.5).unwrap();
        let s = TokenSeq::from_ids(vec![3, 1, 4, 1, 5]);
        assert_eq!(enc.encode(&s).unwrap(), enc.encode(&s.clone()).unwrap());
        assert_eq!(enc.encode(&s).unwrap().dim(), cfg().feature_dim());
    }
}

