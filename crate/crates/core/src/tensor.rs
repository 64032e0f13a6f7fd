//! Dense row-major `f64` tensors and the forward kernels shared by the tape
//! and by the gradient-free inference paths.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

/// Elementwise operations supported by [`Tensor::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Mul,
    Tanh,
    Sigmoid,
    Exp,
    Log,
}

impl ElemOp {
    pub fn arity(self) -> usize {
        match self {
            ElemOp::Add | ElemOp::Mul => 2,
            _ => 1,
        }
    }
}

/// Nonlinearity applied between convolution and pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c = alpha * a·b + beta * c` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices whose extents cover every strided index
    // touched for the given m, k, n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data, requires_grad: false })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel], requires_grad: false }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel], requires_grad: false }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![], data: vec![value], requires_grad: false }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data, requires_grad: false }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut() -> f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(|_| f()).collect(),
            requires_grad: false,
        }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Usage(format!("item() on tensor of shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    /// True when every entry is finite.
    pub fn is_valid(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone(), requires_grad: false })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn require_2d(&self, what: &str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "{what} expects a 2-D tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// Standard matrix product of two 2-D tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.require_2d("matmul")?;
        let (k2, n) = other.require_2d("matmul")?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m, k, n, 1.0, &self.data, k as isize, 1, &other.data, n as isize, 1, 0.0, &mut out,
            n as isize, 1,
        );
        Tensor::new(vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.require_2d("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    /// Elementwise operation. Binary ops accept equal shapes or a
    /// one-element operand broadcast against the other.
    pub fn elementwise(op: ElemOp, args: &[&Tensor]) -> Result<Tensor> {
        if args.len() != op.arity() {
            return Err(Error::Usage(format!(
                "{op:?} takes {} argument(s), got {}",
                op.arity(),
                args.len()
            )));
        }
        match op {
            ElemOp::Add => binary(args[0], args[1], |a, b| a + b),
            ElemOp::Mul => binary(args[0], args[1], |a, b| a * b),
            ElemOp::Tanh => Ok(args[0].map(f64::tanh)),
            ElemOp::Sigmoid => Ok(args[0].map(sigmoid)),
            ElemOp::Exp => Ok(args[0].map(f64::exp)),
            ElemOp::Log => {
                if let Some(bad) = args[0].data.iter().find(|&&v| !(v > 0.0)) {
                    return Err(Error::Domain(format!("log of non-positive value {bad}")));
                }
                Ok(args[0].map(f64::ln))
            }
        }
    }

    fn axis_layout(&self, axis: usize) -> Result<(usize, usize, usize)> {
        if self.shape.is_empty() {
            return Ok((1, 1, 1));
        }
        if axis >= self.shape.len() {
            return Err(Error::Dimension(format!(
                "axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }

    /// Numerically stable softmax along `axis` (max-subtraction).
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let mut out = self.log_softmax(axis)?;
        out.data.iter_mut().for_each(|v| *v = v.exp());
        // renormalise so that each slice sums to one up to rounding of the final division
        let (outer, n, inner) = self.axis_layout(axis)?;
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let s: f64 = (0..n).map(|j| out.data[base + j * inner]).sum();
                for j in 0..n {
                    out.data[base + j * inner] /= s;
                }
            }
        }
        Ok(out)
    }

    /// Log-softmax along `axis`; never takes the log of zero.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, n, inner) = self.axis_layout(axis)?;
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut m = f64::NEG_INFINITY;
                for j in 0..n {
                    m = m.max(out[base + j * inner]);
                }
                let mut s = 0.0;
                for j in 0..n {
                    s += (out[base + j * inner] - m).exp();
                }
                let lse = m + s.ln();
                for j in 0..n {
                    out[base + j * inner] -= lse;
                }
            }
        }
        Tensor::new(self.shape.clone(), out)
    }
}

fn binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape.clone(), data);
    }
    if b.numel() == 1 {
        let y = b.data[0];
        return Ok(Tensor {
            shape: a.shape.clone(),
            data: a.data.iter().map(|&x| f(x, y)).collect(),
            requires_grad: false,
        });
    }
    if a.numel() == 1 {
        let x = a.data[0];
        return Ok(Tensor {
            shape: b.shape.clone(),
            data: b.data.iter().map(|&y| f(x, y)).collect(),
            requires_grad: false,
        });
    }
    Err(Error::Dimension(format!(
        "cannot broadcast {:?} with {:?}",
        a.shape, b.shape
    )))
}

/// Result of a convolution + max-over-time pass over a batch of sequences.
#[derive(Clone, Debug)]
pub struct PooledConv {
    /// `[batch, filters]`
    pub pooled: Tensor,
    /// Time index of the maximum for each `(sequence, filter)`.
    pub argmax: Vec<usize>,
    /// Pre-activation value at the argmax, for the backward pass.
    pub pre_at_max: Vec<f64>,
}

/// Valid 1-D convolution over time, activation, then max-over-time pooling.
///
/// `seq_embeds` is `[len, dim]` for one sequence or `[batch, len, dim]`;
/// `filters` is `[count, width * dim]`, each row a flattened window of
/// `width` consecutive embedding rows; `bias` has `count` entries. Ties in
/// the max go to the lowest time index.
pub fn conv1d_maxpool(
    seq_embeds: &Tensor,
    filters: &Tensor,
    bias: &Tensor,
    width: usize,
    act: Activation,
) -> Result<PooledConv> {
    let (batch, len, dim) = match seq_embeds.shape() {
        [l, d] => (1, *l, *d),
        [b, l, d] => (*b, *l, *d),
        s => {
            return Err(Error::Dimension(format!(
                "conv1d_maxpool expects [len, dim] or [batch, len, dim], got {s:?}"
            )))
        }
    };
    let (count, fan_in) = filters.require_2d("conv1d_maxpool filters")?;
    if width == 0 || fan_in != width * dim {
        return Err(Error::Dimension(format!(
            "filter rows have {fan_in} values, expected width {width} x dim {dim}"
        )));
    }
    if bias.numel() != count {
        return Err(Error::Dimension(format!(
            "bias has {} entries for {count} filters",
            bias.numel()
        )));
    }
    if len < width {
        return Err(Error::Dimension(format!(
            "sequence length {len} shorter than filter width {width}"
        )));
    }
    let positions = len - width + 1;
    // Windows over the flattened [batch*len, dim] buffer overlap with row stride `dim`;
    // windows that straddle two sequences are computed and ignored.
    let total_rows = batch * len - width + 1;
    let mut pre = vec![0.0; total_rows * count];
    gemm(
        total_rows,
        fan_in,
        count,
        1.0,
        seq_embeds.data(),
        dim as isize,
        1,
        filters.data(),
        1,
        fan_in as isize,
        0.0,
        &mut pre,
        count as isize,
        1,
    );
    let mut pooled = vec![0.0; batch * count];
    let mut argmax = vec![0usize; batch * count];
    let mut pre_at_max = vec![0.0; batch * count];
    let b = bias.data();
    for s in 0..batch {
        for f in 0..count {
            let mut best = f64::NEG_INFINITY;
            let mut best_t = 0;
            let mut best_pre = 0.0;
            for t in 0..positions {
                let z = pre[(s * len + t) * count + f] + b[f];
                let v = act.apply(z);
                if v > best {
                    best = v;
                    best_t = t;
                    best_pre = z;
                }
            }
            pooled[s * count + f] = best;
            argmax[s * count + f] = best_t;
            pre_at_max[s * count + f] = best_pre;
        }
    }
    Ok(PooledConv { pooled: Tensor::new(vec![batch, count], pooled)?, argmax, pre_at_max })
}
