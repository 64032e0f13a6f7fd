//! Plain SGD with global gradient-norm clipping.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Models that expose their trainable tensors in a fixed order.
pub trait Parameterized {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// SHA-256 over all parameter bytes, in declaration order.
    fn param_checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, t) in self.named_params() {
            h.update(name.as_bytes());
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Global L2 norm of a set of gradients.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Rescales `grads` so that their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grads(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// `p -= lr * g` after clipping. A zero learning rate leaves the parameters
/// untouched. Non-finite gradients abort the update.
pub fn sgd_step(params: Vec<&mut Tensor>, mut grads: Vec<Tensor>, lr: f64, max_norm: f64) -> Result<f64> {
    let norm = global_norm(&grads);
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient norm is {norm}")));
    }
    clip_grads(&mut grads, max_norm);
    if lr == 0.0 {
        return Ok(norm);
    }
    for (p, g) in params.into_iter().zip(&grads) {
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * gv;
        }
    }
    Ok(norm)
}

/// Update rule for a fixed parameter list.
#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(Adam),
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    /// Clips `grads` to `max_norm` and updates `params`; returns the norm
    /// before clipping.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: Vec<Tensor>, max_norm: f64) -> Result<f64> {
        match self {
            Optimizer::Sgd { lr } => sgd_step(params, grads, *lr, max_norm),
            Optimizer::Adam(a) => a.step(params, grads, max_norm),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr } => *lr,
            Optimizer::Adam(a) => a.lr,
        }
    }
}

/// Adam with bias correction. Moment buffers are created on the first step.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, mut grads: Vec<Tensor>, max_norm: f64) -> Result<f64> {
        let norm = global_norm(&grads);
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm is {norm}")));
        }
        if self.lr == 0.0 {
            return Ok(norm);
        }
        clip_grads(&mut grads, max_norm);
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != grads.len() || self.m.iter().zip(&grads).any(|(m, g)| m.shape() != g.shape()) {
            return Err(Error::Dimension("optimizer state does not match the parameters".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.into_iter().zip(&grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                *pv -= self.lr * (*mv / c1) / ((*vv / c2).sqrt() + self.eps);
            }
        }
        Ok(norm)
    }
}
