//! Binary real-vs-generated classifier for the SeqGAN-style baseline: the
//! ranker's convolutional encoder followed by a 2-way softmax. The reward for
//! a sequence is its probability of being real.

use crate::corpus::TokenSeq;
use crate::encoder::{ConvEncoder, EncoderConfig, EncoderVars};
use crate::error::{Error, Result};
use crate::optim::{Optimizer, Parameterized};
use crate::ranker::encoder_named;
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const REAL: usize = 1;
const FAKE: usize = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub encoder: ConvEncoder,
    /// `[features, 2]`, column 1 is "real".
    pub w_cls: Tensor,
    pub b_cls: Tensor,
}

impl Parameterized for Discriminator {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = encoder_named(&self.encoder, "discriminator");
        v.push(("discriminator.w_cls".to_string(), &self.w_cls));
        v.push(("discriminator.b_cls".to_string(), &self.b_cls));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.params_mut();
        v.push(&mut self.w_cls);
        v.push(&mut self.b_cls);
        v
    }
}

impl Discriminator {
    pub fn uniform_init(cfg: EncoderConfig, seed: u64, scale: f64) -> Result<Self> {
        let f = cfg.feature_dim();
        let encoder = ConvEncoder::uniform_init(cfg, seed, scale)?;
        let mut rng = rng::stream(seed, &[rng::tag::RANKER, rng::tag::INIT, 1]);
        let w_cls = Tensor::from_fn(&[f, 2], || rng::symmetric(&mut rng, scale));
        Ok(Discriminator { encoder, w_cls, b_cls: Tensor::zeros(&[2]) })
    }

    pub fn from_parts(encoder: ConvEncoder, w_cls: Tensor, b_cls: Tensor) -> Result<Self> {
        let f = encoder.config().feature_dim();
        if w_cls.shape() != [f, 2] || b_cls.shape() != [2] {
            return Err(Error::Format("discriminator classifier shape mismatch".into()));
        }
        Ok(Discriminator { encoder, w_cls, b_cls })
    }

    /// Probability that each sequence is human-written.
    pub fn prob_real(&self, seqs: &[TokenSeq]) -> Result<Vec<f64>> {
        let feats = self.encoder.encode_batch(seqs)?;
        let w = self.w_cls.data();
        let b = self.b_cls.data();
        Ok(feats
            .iter()
            .map(|y| {
                let mut z = [b[0], b[1]];
                for (k, v) in y.y.iter().enumerate() {
                    z[0] += v * w[2 * k];
                    z[1] += v * w[2 * k + 1];
                }
                crate::tensor::sigmoid(z[REAL] - z[FAKE])
            })
            .collect())
    }

    fn register(&self, tape: &mut Tape) -> (EncoderVars, Var, Var) {
        (self.encoder.register(tape), tape.param(&self.w_cls), tape.param(&self.b_cls))
    }

    /// Mean cross-entropy over `human` (label real) and `synthetic` (label fake).
    pub fn loss_tape(
        &self,
        tape: &mut Tape,
        vars: &(EncoderVars, Var, Var),
        human: &[TokenSeq],
        synthetic: &[TokenSeq],
    ) -> Result<Var> {
        let seqs: Vec<TokenSeq> = human.iter().chain(synthetic).cloned().collect();
        let labels: Vec<usize> = std::iter::repeat_n(REAL, human.len())
            .chain(std::iter::repeat_n(FAKE, synthetic.len()))
            .collect();
        let y = self.encoder.encode_tape(tape, &vars.0, &seqs)?;
        let logits = tape.linear(y, vars.1, vars.2)?;
        let lsm = tape.log_softmax(logits, 1)?;
        let picked = tape.pick_cols(lsm, &labels)?;
        let m = tape.mean(picked);
        Ok(tape.scale(m, -1.0))
    }

    /// One SGD step on the cross-entropy; returns the loss before the update.
    pub fn step(&mut self, human: &[TokenSeq], synthetic: &[TokenSeq], learning_rate: f64, clip: f64) -> Result<f64> {
        self.step_with(human, synthetic, &mut Optimizer::sgd(learning_rate), clip)
    }

    pub fn step_with(&mut self, human: &[TokenSeq], synthetic: &[TokenSeq], opt: &mut Optimizer, clip: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let loss = self.loss_tape(&mut tape, &vars, human, synthetic)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss is {value}")));
        }
        let grads = tape.backward(loss)?;
        let mut all = vars.0.all();
        all.push(vars.1);
        all.push(vars.2);
        let gs = all.iter().map(|v| grads.get(*v)).collect();
        opt.step(self.params_mut(), gs, clip)?;
        Ok(value)
    }
}
