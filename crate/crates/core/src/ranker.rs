//! The ranker: cosine relevance against human references, a temperature
//! softmax over the set being ranked, and the expected rank over references.
//!
//! For an input `s`, comparison set `C` and reference `u`, the ranked set is
//! `C' = C ∪ {s}` and
//!
//! ```text
//! α(s|u)      = cos(y_s, y_u)
//! P(s|u, C)   = exp(γ α(s|u)) / Σ_{s' ∈ C'} exp(γ α(s'|u))
//! R(s|U, C)   = mean_{u ∈ U} P(s|u, C)
//! ```

use crate::corpus::TokenSeq;
use crate::encoder::{ConvEncoder, EncoderConfig, EncoderVars, FeatureVec};
use crate::error::{Error, Result};
use crate::optim::{Optimizer, Parameterized};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_GAMMA: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarity {
    /// Human-written sentences, used when ranking a generated input.
    Plus,
    /// Generated sentences, used when ranking a human input.
    Minus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonSet {
    sentences: Vec<TokenSeq>,
    polarity: Polarity,
}

impl ComparisonSet {
    pub fn new(sentences: Vec<TokenSeq>, polarity: Polarity) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::Usage("comparison set must not be empty".into()));
        }
        Ok(ComparisonSet { sentences, polarity })
    }

    /// The degenerate set for which `C' = {s}` and every score is 1.
    pub fn empty(polarity: Polarity) -> Self {
        ComparisonSet { sentences: Vec::new(), polarity }
    }

    pub fn sentences(&self) -> &[TokenSeq] {
        &self.sentences
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSet {
    sentences: Vec<TokenSeq>,
}

impl ReferenceSet {
    pub fn new(sentences: Vec<TokenSeq>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::Usage("reference set must not be empty".into()));
        }
        Ok(ReferenceSet { sentences })
    }

    pub fn sentences(&self) -> &[TokenSeq] {
        &self.sentences
    }
}

#[derive(Clone, Debug)]
pub struct RankerModel {
    pub encoder: ConvEncoder,
    gamma: f64,
    version: u64,
}

/// Compares weights and temperature; the cache version is not part of the model.
impl PartialEq for RankerModel {
    fn eq(&self, other: &Self) -> bool {
        self.encoder == other.encoder && self.gamma == other.gamma
    }
}

impl Parameterized for RankerModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        encoder_named(&self.encoder, "ranker")
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.encoder.params_mut()
    }
}

/// Parameter names for an encoder under `prefix`.
pub(crate) fn encoder_named<'a>(enc: &'a ConvEncoder, prefix: &str) -> Vec<(String, &'a Tensor)> {
    let mut out = vec![(format!("{prefix}.embedding"), &enc.embedding)];
    for (w, f) in enc.config().widths.iter().zip(&enc.filters) {
        out.push((format!("{prefix}.conv{w}.weight"), f));
    }
    for (w, b) in enc.config().widths.iter().zip(&enc.biases) {
        out.push((format!("{prefix}.conv{w}.bias"), b));
    }
    out
}

/// Cosine of two feature vectors.
pub fn relevance(y_s: &FeatureVec, y_u: &FeatureVec) -> Result<f64> {
    if y_s.dim() != y_u.dim() {
        return Err(Error::Dimension(format!("feature dims {} vs {}", y_s.dim(), y_u.dim())));
    }
    let (ns, nu) = (y_s.norm(), y_u.norm());
    if !(ns > 0.0) || !(nu > 0.0) {
        return Err(Error::DegenerateFeature("zero-norm feature vector".into()));
    }
    let dot: f64 = y_s.y.iter().zip(&y_u.y).map(|(a, b)| a * b).sum();
    Ok((dot / (ns * nu)).clamp(-1.0, 1.0))
}

/// Softmax weight of the input among `C'`, given its relevance and the
/// relevances of the comparison members.
pub fn rank_score_from_relevances(alpha_s: f64, alpha_cmp: &[f64], gamma: f64) -> f64 {
    let m = alpha_cmp.iter().copied().fold(alpha_s, f64::max);
    let num = (gamma * (alpha_s - m)).exp();
    let den = num + alpha_cmp.iter().map(|a| (gamma * (a - m)).exp()).sum::<f64>();
    num / den
}

impl RankerModel {
    pub fn new(encoder: ConvEncoder, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Usage(format!("gamma must be positive, got {gamma}")));
        }
        Ok(RankerModel { encoder, gamma, version: 0 })
    }

    pub fn uniform_init(cfg: EncoderConfig, gamma: f64, seed: u64, scale: f64) -> Result<Self> {
        RankerModel::new(ConvEncoder::uniform_init(cfg, seed, scale)?, gamma)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn set_gamma(&mut self, gamma: f64) -> Result<()> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Usage(format!("gamma must be positive, got {gamma}")));
        }
        self.gamma = gamma;
        self.version += 1;
        Ok(())
    }

    /// Incremented on every parameter update; feature caches compare it.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn encode(&self, seq: &TokenSeq) -> Result<FeatureVec> {
        self.encoder.encode(seq)
    }

    pub fn encode_batch(&self, seqs: &[TokenSeq]) -> Result<Vec<FeatureVec>> {
        self.encoder.encode_batch(seqs)
    }

    /// `P(s | u, C)`.
    pub fn rank_score(&self, s: &TokenSeq, u: &TokenSeq, cmp: &ComparisonSet) -> Result<f64> {
        let y_s = self.encode(s)?;
        let y_u = self.encode(u)?;
        let alpha_s = relevance(&y_s, &y_u)?;
        let alphas: Vec<f64> = self
            .encode_batch(cmp.sentences())?
            .iter()
            .map(|y| relevance(y, &y_u))
            .collect::<Result<_>>()?;
        Ok(rank_score_from_relevances(alpha_s, &alphas, self.gamma))
    }

    /// `R(s | U, C)`: the mean of `rank_score` over the references.
    pub fn expected_rank(&self, s: &TokenSeq, refs: &ReferenceSet, cmp: &ComparisonSet) -> Result<f64> {
        RankContext::new(self, refs, cmp)?.expected_rank(self, s)
    }

    pub fn register(&self, tape: &mut Tape) -> EncoderVars {
        self.encoder.register(tape)
    }

    /// Records `log R(s | U, C)` for every row of `inputs` (`[B, F]`
    /// features) against comparison features `cmp` (`[C, F]`, or `None` for
    /// an empty set) and reference features `refs` (`[U, F]`). Returns `[B, 1]`.
    pub fn log_expected_rank_tape(
        &self,
        tape: &mut Tape,
        inputs: Var,
        cmp: Option<Var>,
        refs: Var,
    ) -> Result<Var> {
        let g = self.gamma;
        let n_refs = tape.value(refs).rows();
        let ns = tape.normalize_rows(inputs)?;
        let nu = tape.normalize_rows(refs)?;
        let nu_t = tape.transpose(nu)?;
        let a_s = tape.matmul(ns, nu_t)?;
        // exp(γ(α - 1)) keeps every term in [e^{-2γ}, 1]
        let z_s = tape.scale(a_s, g);
        let z_s = tape.add_const(z_s, -g);
        let e_s = tape.exp(z_s);
        let denom = match cmp {
            Some(c) => {
                let nc = tape.normalize_rows(c)?;
                let a_c = tape.matmul(nc, nu_t)?;
                let z_c = tape.scale(a_c, g);
                let z_c = tape.add_const(z_c, -g);
                let e_c = tape.exp(z_c);
                let ones = tape.constant(Tensor::full(&[1, tape.value(c).rows()], 1.0));
                let col_sum = tape.matmul(ones, e_c)?;
                tape.add_bias(e_s, col_sum)?
            }
            None => e_s,
        };
        let log_den = tape.log(denom)?;
        let log_p = tape.sub(z_s, log_den)?;
        let p = tape.exp(log_p);
        let avg = tape.constant(Tensor::full(&[n_refs, 1], 1.0 / n_refs as f64));
        let r = tape.matmul(p, avg)?;
        tape.log(r)
    }

    /// Records the ranking objective
    /// `mean_h log R(h | U, C⁻) - mean_g log R(g | U, C⁺)` and returns its
    /// negation as a loss to minimise.
    pub fn objective_loss(
        &self,
        tape: &mut Tape,
        vars: &EncoderVars,
        human: &[TokenSeq],
        synthetic: &[TokenSeq],
        refs: &ReferenceSet,
        cmp_minus: &ComparisonSet,
        cmp_plus: &ComparisonSet,
    ) -> Result<Var> {
        let y_h = self.encoder.encode_tape(tape, vars, human)?;
        let y_g = self.encoder.encode_tape(tape, vars, synthetic)?;
        let y_u = self.encoder.encode_tape(tape, vars, refs.sentences())?;
        let y_cm = self.encode_opt(tape, vars, cmp_minus)?;
        let y_cp = self.encode_opt(tape, vars, cmp_plus)?;
        let lr_h = self.log_expected_rank_tape(tape, y_h, y_cm, y_u)?;
        let lr_g = self.log_expected_rank_tape(tape, y_g, y_cp, y_u)?;
        let m_h = tape.mean(lr_h);
        let m_g = tape.mean(lr_g);
        tape.sub(m_g, m_h)
    }

    fn encode_opt(&self, tape: &mut Tape, vars: &EncoderVars, c: &ComparisonSet) -> Result<Option<Var>> {
        if c.sentences().is_empty() {
            Ok(None)
        } else {
            Ok(Some(self.encoder.encode_tape(tape, vars, c.sentences())?))
        }
    }

    /// One SGD step that increases the ranking objective. Returns the loss
    /// (negated objective) before the update.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        human: &[TokenSeq],
        synthetic: &[TokenSeq],
        refs: &ReferenceSet,
        cmp_minus: &ComparisonSet,
        cmp_plus: &ComparisonSet,
        learning_rate: f64,
        clip: f64,
    ) -> Result<f64> {
        self.step_with(human, synthetic, refs, cmp_minus, cmp_plus, &mut Optimizer::sgd(learning_rate), clip)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn step_with(
        &mut self,
        human: &[TokenSeq],
        synthetic: &[TokenSeq],
        refs: &ReferenceSet,
        cmp_minus: &ComparisonSet,
        cmp_plus: &ComparisonSet,
        opt: &mut Optimizer,
        clip: f64,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let loss = self.objective_loss(&mut tape, &vars, human, synthetic, refs, cmp_minus, cmp_plus)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("ranker loss is {value}")));
        }
        let grads = tape.backward(loss)?;
        let gs = vars.all().iter().map(|v| grads.get(*v)).collect();
        opt.step(self.encoder.params_mut(), gs, clip)?;
        if opt.learning_rate() != 0.0 {
            self.version += 1;
        }
        Ok(value)
    }
}

/// Reference and comparison features computed once for a fixed ranker
/// version, for scoring many inputs.
#[derive(Clone, Debug)]
pub struct RankContext {
    version: u64,
    gamma: f64,
    refs: Vec<FeatureVec>,
    /// `cmp_alphas[u]` holds α(c|u) for every comparison member `c`.
    cmp_alphas: Vec<Vec<f64>>,
}

impl RankContext {
    pub fn new(ranker: &RankerModel, refs: &ReferenceSet, cmp: &ComparisonSet) -> Result<Self> {
        let ref_feats = ranker.encode_batch(refs.sentences())?;
        let cmp_feats = ranker.encode_batch(cmp.sentences())?;
        let cmp_alphas = ref_feats
            .iter()
            .map(|yu| cmp_feats.iter().map(|yc| relevance(yc, yu)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        Ok(RankContext { version: ranker.version(), gamma: ranker.gamma(), refs: ref_feats, cmp_alphas })
    }

    pub fn is_current(&self, ranker: &RankerModel) -> bool {
        self.version == ranker.version() && self.gamma == ranker.gamma()
    }

    /// Expected rank for an already-encoded input.
    pub fn expected_rank_features(&self, y_s: &FeatureVec) -> Result<f64> {
        let mut total = 0.0;
        for (yu, alphas) in self.refs.iter().zip(&self.cmp_alphas) {
            total += rank_score_from_relevances(relevance(y_s, yu)?, alphas, self.gamma);
        }
        Ok(total / self.refs.len() as f64)
    }

    pub fn expected_rank(&self, ranker: &RankerModel, s: &TokenSeq) -> Result<f64> {
        self.expected_rank_batch(ranker, std::slice::from_ref(s)).map(|v| v[0])
    }

    pub fn expected_rank_batch(&self, ranker: &RankerModel, seqs: &[TokenSeq]) -> Result<Vec<f64>> {
        if !self.is_current(ranker) {
            return Err(Error::Usage("rank context is stale for this ranker version".into()));
        }
        ranker
            .encode_batch(seqs)?
            .iter()
            .map(|y| self.expected_rank_features(y))
            .collect()
    }
}
