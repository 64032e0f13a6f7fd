//! Single-layer LSTM language model: the generator policy.
//!
//! Gate layout in `w_gates` / `b_gates` is `[input, forget, output, cell]`,
//! each `hidden_dim` wide. The first step is fed BOS; the model then predicts
//! every one of the `fixed_len` positions, so a sequence is scored on all of
//! its ids including any EOS/PAD tail.

use rand::Rng;

use crate::corpus::{TokenSeq, BOS};
use crate::error::{Error, Result};
use crate::optim::{sgd_step, Parameterized};
use crate::rng::{self, sample_index};
use crate::tape::{Tape, Var};
use crate::tensor::{gemm, sigmoid, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl GeneratorDims {
    pub fn new(vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        GeneratorDims { vocab_size, embed_dim, hidden_dim }
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Usage(format!("invalid generator dimensions {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorModel {
    dims: GeneratorDims,
    pub embedding: Tensor,
    pub w_gates: Tensor,
    pub b_gates: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

/// Hidden and cell state for a single sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        LstmState { h: vec![0.0; hidden_dim], c: vec![0.0; hidden_dim] }
    }

    pub fn is_valid(&self) -> bool {
        self.h.iter().chain(&self.c).all(|v| v.is_finite())
    }
}

/// Row-stacked states for a batch of sequences, `[batch, hidden]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub batch: usize,
}

impl BatchState {
    pub fn zeros(batch: usize, hidden_dim: usize) -> Self {
        BatchState { h: vec![0.0; batch * hidden_dim], c: vec![0.0; batch * hidden_dim], batch }
    }

    /// `n` copies of a single state.
    pub fn repeat(state: &LstmState, n: usize) -> Self {
        BatchState {
            h: state.h.iter().copied().cycle().take(n * state.h.len()).collect(),
            c: state.c.iter().copied().cycle().take(n * state.c.len()).collect(),
            batch: n,
        }
    }

    pub fn row(&self, i: usize, hidden_dim: usize) -> LstmState {
        LstmState {
            h: self.h[i * hidden_dim..(i + 1) * hidden_dim].to_vec(),
            c: self.c[i * hidden_dim..(i + 1) * hidden_dim].to_vec(),
        }
    }
}

/// Tape handles for one registration of the generator's parameters.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorVars {
    pub embedding: Var,
    pub w_gates: Var,
    pub b_gates: Var,
    pub w_out: Var,
    pub b_out: Var,
}

impl GeneratorVars {
    pub fn all(&self) -> [Var; 5] {
        [self.embedding, self.w_gates, self.b_gates, self.w_out, self.b_out]
    }
}

/// In-place row-wise softmax of a `[rows, cols]` buffer.
pub(crate) fn softmax_rows(buf: &mut [f64], cols: usize) {
    for row in buf.chunks_mut(cols) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
}

/// Log-probability of `target` under softmax(`row`).
fn log_softmax_at(row: &[f64], target: usize) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
    row[target] - m - s.ln()
}

impl Parameterized for GeneratorModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("generator.embedding".to_string(), &self.embedding),
            ("generator.w_gates".to_string(), &self.w_gates),
            ("generator.b_gates".to_string(), &self.b_gates),
            ("generator.w_out".to_string(), &self.w_out),
            ("generator.b_out".to_string(), &self.b_out),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.embedding,
            &mut self.w_gates,
            &mut self.b_gates,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }
}

impl GeneratorModel {
    pub fn zeros(dims: GeneratorDims) -> Result<Self> {
        dims.validate()?;
        let GeneratorDims { vocab_size: v, embed_dim: e, hidden_dim: h } = dims;
        Ok(GeneratorModel {
            dims,
            embedding: Tensor::zeros(&[v, e]),
            w_gates: Tensor::zeros(&[e + h, 4 * h]),
            b_gates: Tensor::zeros(&[4 * h]),
            w_out: Tensor::zeros(&[h, v]),
            b_out: Tensor::zeros(&[v]),
        })
    }

    /// Every parameter drawn from uniform(-scale, scale).
    pub fn uniform_init(dims: GeneratorDims, seed: u64, scale: f64) -> Result<Self> {
        rng::check_scale(scale)?;
        let mut rng = rng::stream(seed, &[rng::tag::INIT]);
        let mut m = GeneratorModel::zeros(dims)?;
        for p in m.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = rng::symmetric(&mut rng, scale));
        }
        Ok(m)
    }

    /// Every parameter drawn from N(0, std^2).
    pub fn normal_init(dims: GeneratorDims, seed: u64, std: f64) -> Result<Self> {
        rng::check_scale(std)?;
        let mut rng = rng::stream(seed, &[rng::tag::INIT]);
        let mut m = GeneratorModel::zeros(dims)?;
        for p in m.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = std * rng::standard_normal(&mut rng));
        }
        Ok(m)
    }

    /// Rebuilds a model from tensors in `named_params` order.
    pub fn from_tensors(dims: GeneratorDims, tensors: Vec<Tensor>) -> Result<Self> {
        let mut m = GeneratorModel::zeros(dims)?;
        if tensors.len() != 5 {
            return Err(Error::Format(format!("expected 5 generator tensors, got {}", tensors.len())));
        }
        for (slot, t) in m.params_mut().into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "generator tensor shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(m)
    }

    pub fn dims(&self) -> GeneratorDims {
        self.dims
    }

    pub fn vocab_size(&self) -> usize {
        self.dims.vocab_size
    }

    pub fn hidden_dim(&self) -> usize {
        self.dims.hidden_dim
    }

    pub fn is_valid(&self) -> bool {
        self.named_params().iter().all(|(_, t)| t.is_valid())
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.dims.vocab_size) {
            return Err(Error::Usage(format!(
                "token id {bad} outside vocabulary of {}",
                self.dims.vocab_size
            )));
        }
        Ok(())
    }

    /// One LSTM step for a batch: feeds `ids` and returns the next-token
    /// logits `[batch, vocab]` together with the new state.
    pub fn step_batch(&self, ids: &[usize], state: &BatchState) -> Result<(Vec<f64>, BatchState)> {
        self.check_ids(ids)?;
        let GeneratorDims { vocab_size: v, embed_dim: e, hidden_dim: h } = self.dims;
        let b = ids.len();
        if state.batch != b {
            return Err(Error::Dimension(format!("{b} ids for a state batch of {}", state.batch)));
        }
        let mut x = Vec::with_capacity(b * e);
        for &id in ids {
            x.extend_from_slice(self.embedding.row(id));
        }
        let mut z = Vec::with_capacity(b * 4 * h);
        for _ in 0..b {
            z.extend_from_slice(self.b_gates.data());
        }
        let w = self.w_gates.data();
        let g4 = 4 * h;
        gemm(b, e, g4, 1.0, &x, e as isize, 1, &w[..e * g4], g4 as isize, 1, 1.0, &mut z, g4 as isize, 1);
        gemm(b, h, g4, 1.0, &state.h, h as isize, 1, &w[e * g4..], g4 as isize, 1, 1.0, &mut z, g4 as isize, 1);
        let mut hn = vec![0.0; b * h];
        let mut cn = vec![0.0; b * h];
        for r in 0..b {
            let zr = &z[r * g4..(r + 1) * g4];
            for j in 0..h {
                let i_g = sigmoid(zr[j]);
                let f_g = sigmoid(zr[h + j]);
                let o_g = sigmoid(zr[2 * h + j]);
                let c_g = zr[3 * h + j].tanh();
                let c = f_g * state.c[r * h + j] + i_g * c_g;
                cn[r * h + j] = c;
                hn[r * h + j] = o_g * c.tanh();
            }
        }
        let mut logits = Vec::with_capacity(b * v);
        for _ in 0..b {
            logits.extend_from_slice(self.b_out.data());
        }
        gemm(b, h, v, 1.0, &hn, h as isize, 1, self.w_out.data(), v as isize, 1, 1.0, &mut logits, v as isize, 1);
        Ok((logits, BatchState { h: hn, c: cn, batch: b }))
    }

    /// Next-token distribution after feeding `token_id` in `state`.
    pub fn step(&self, token_id: usize, state: &LstmState) -> Result<(Vec<f64>, LstmState)> {
        let bs = BatchState::repeat(state, 1);
        let (mut logits, next) = self.step_batch(&[token_id], &bs)?;
        softmax_rows(&mut logits, self.dims.vocab_size);
        Ok((logits, next.row(0, self.dims.hidden_dim)))
    }

    /// State after feeding BOS followed by `prefix`, plus the distribution
    /// for the token that follows `prefix`.
    pub fn run_prefix(&self, prefix: &[usize]) -> Result<(Vec<f64>, LstmState)> {
        let mut state = LstmState::zeros(self.dims.hidden_dim);
        let mut dist;
        let (d, s) = self.step(BOS, &state)?;
        dist = d;
        state = s;
        for &tok in prefix {
            let (d, s) = self.step(tok, &state)?;
            dist = d;
            state = s;
        }
        Ok((dist, state))
    }

    /// Extends each row by `steps` sampled tokens. Row `r` first feeds
    /// `last[r]` into `state`, then feeds back its own samples, drawing from
    /// `rngs[r]`.
    pub(crate) fn continue_batch<R: Rng>(
        &self,
        mut state: BatchState,
        mut last: Vec<usize>,
        steps: usize,
        rngs: &mut [R],
    ) -> Result<Vec<Vec<usize>>> {
        let v = self.dims.vocab_size;
        let b = last.len();
        let mut out: Vec<Vec<usize>> = vec![Vec::with_capacity(steps); b];
        for _ in 0..steps {
            let (mut logits, next) = self.step_batch(&last, &state)?;
            softmax_rows(&mut logits, v);
            for r in 0..b {
                let tok = sample_index(&logits[r * v..(r + 1) * v], &mut rngs[r]);
                out[r].push(tok);
                last[r] = tok;
            }
            state = next;
        }
        Ok(out)
    }

    /// Samples one sequence of `len` tokens starting from the BOS state.
    pub fn sample<R: Rng>(&self, len: usize, rng: &mut R) -> Result<TokenSeq> {
        if len == 0 {
            return Err(Error::Usage("sample length must be at least 1".into()));
        }
        let ids = self
            .continue_batch(
                BatchState::zeros(1, self.dims.hidden_dim),
                vec![BOS],
                len,
                std::slice::from_mut(rng),
            )?
            .pop()
            .expect("one row");
        Ok(TokenSeq::from_ids(ids))
    }

    /// Samples `count` sequences batched together; row `i` draws from the
    /// stream `(seed, i)` so the result does not depend on batching.
    pub fn sample_many(&self, count: usize, len: usize, seed: u64) -> Result<Vec<TokenSeq>> {
        const CHUNK: usize = 256;
        let mut out = Vec::with_capacity(count);
        let mut start = 0;
        while start < count {
            let n = CHUNK.min(count - start);
            out.extend(self.sample_range(start, n, len, seed)?);
            start += n;
        }
        Ok(out)
    }

    /// Rows `start..start + n` of [`GeneratorModel::sample_many`].
    pub fn sample_range(&self, start: usize, n: usize, len: usize, seed: u64) -> Result<Vec<TokenSeq>> {
        if len == 0 {
            return Err(Error::Usage("sample length must be at least 1".into()));
        }
        let mut rngs: Vec<_> =
            (start..start + n).map(|i| rng::stream(seed, &[rng::tag::SAMPLE, i as u64])).collect();
        let rows = self.continue_batch(
            BatchState::zeros(n, self.dims.hidden_dim),
            vec![BOS; n],
            len,
            &mut rngs,
        )?;
        Ok(rows.into_iter().map(TokenSeq::from_ids).collect())
    }

    /// Negative log-likelihood of every position of `seq`, in nats.
    pub fn nll(&self, seq: &TokenSeq) -> Result<f64> {
        Ok(self.nll_batch(std::slice::from_ref(seq))?[0])
    }

    /// Per-sequence NLL for a batch of equal-length sequences.
    pub fn nll_batch(&self, seqs: &[TokenSeq]) -> Result<Vec<f64>> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let len = seqs[0].fixed_len();
        if seqs.iter().any(|s| s.fixed_len() != len) {
            return Err(Error::Dimension("nll_batch needs equal-length sequences".into()));
        }
        let v = self.dims.vocab_size;
        let b = seqs.len();
        let mut state = BatchState::zeros(b, self.dims.hidden_dim);
        let mut inputs = vec![BOS; b];
        let mut total = vec![0.0; b];
        for t in 0..len {
            let (logits, next) = self.step_batch(&inputs, &state)?;
            for (r, s) in seqs.iter().enumerate() {
                let target = s.ids()[t];
                self.check_ids(&[target])?;
                total[r] -= log_softmax_at(&logits[r * v..(r + 1) * v], target);
                inputs[r] = target;
            }
            state = next;
        }
        Ok(total)
    }

    pub fn register(&self, tape: &mut Tape) -> GeneratorVars {
        GeneratorVars {
            embedding: tape.param(&self.embedding),
            w_gates: tape.param(&self.w_gates),
            b_gates: tape.param(&self.b_gates),
            w_out: tape.param(&self.w_out),
            b_out: tape.param(&self.b_out),
        }
    }

    /// Teacher-forced pass on the tape. Returns, per time step, a `[batch]`
    /// vector of `log π(w_t | s_{<t})`.
    pub fn forward_log_probs(
        &self,
        tape: &mut Tape,
        vars: &GeneratorVars,
        seqs: &[TokenSeq],
    ) -> Result<Vec<Var>> {
        let b = seqs.len();
        if b == 0 {
            return Err(Error::Usage("empty batch".into()));
        }
        let len = seqs[0].fixed_len();
        if seqs.iter().any(|s| s.fixed_len() != len) {
            return Err(Error::Dimension("batch sequences differ in length".into()));
        }
        for s in seqs {
            self.check_ids(s.ids())?;
        }
        let h = self.dims.hidden_dim;
        let mut hs = tape.constant(Tensor::zeros(&[b, h]));
        let mut cs = tape.constant(Tensor::zeros(&[b, h]));
        let mut inputs = vec![BOS; b];
        let mut out = Vec::with_capacity(len);
        for t in 0..len {
            let x = tape.gather(vars.embedding, &inputs)?;
            let xh = tape.concat_cols(&[x, hs])?;
            let z = tape.linear(xh, vars.w_gates, vars.b_gates)?;
            let zi = tape.slice_cols(z, 0, h)?;
            let zf = tape.slice_cols(z, h, h)?;
            let zo = tape.slice_cols(z, 2 * h, h)?;
            let zg = tape.slice_cols(z, 3 * h, h)?;
            let i_g = tape.sigmoid(zi);
            let f_g = tape.sigmoid(zf);
            let o_g = tape.sigmoid(zo);
            let c_g = tape.tanh(zg);
            let keep = tape.mul(f_g, cs)?;
            let write = tape.mul(i_g, c_g)?;
            cs = tape.add(keep, write)?;
            let tc = tape.tanh(cs);
            hs = tape.mul(o_g, tc)?;
            let logits = tape.linear(hs, vars.w_out, vars.b_out)?;
            let lsm = tape.log_softmax(logits, 1)?;
            let targets: Vec<usize> = seqs.iter().map(|s| s.ids()[t]).collect();
            out.push(tape.pick_cols(lsm, &targets)?);
            inputs = targets;
        }
        Ok(out)
    }

    /// Mean per-token NLL of `batch` recorded on `tape`.
    pub fn mle_loss(&self, tape: &mut Tape, vars: &GeneratorVars, batch: &[TokenSeq]) -> Result<Var> {
        let steps = self.forward_log_probs(tape, vars, batch)?;
        let mut acc = tape.sum(steps[0]);
        for &s in &steps[1..] {
            let part = tape.sum(s);
            acc = tape.add(acc, part)?;
        }
        let tokens = (batch.len() * steps.len()) as f64;
        Ok(tape.scale(acc, -1.0 / tokens))
    }

    /// One SGD step on the mean per-token NLL of `batch`. Returns the loss
    /// before the update.
    pub fn mle_step(&mut self, batch: &[TokenSeq], learning_rate: f64, clip: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let loss = self.mle_loss(&mut tape, &vars, batch)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("MLE loss is {value}")));
        }
        let grads = tape.backward(loss)?;
        let gs = vars.all().iter().map(|v| grads.get(*v)).collect();
        sgd_step(self.params_mut(), gs, learning_rate, clip)?;
        Ok(value)
    }
}
