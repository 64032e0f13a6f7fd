//! Reverse-mode differentiation over a linear record of tensor operations.
//!
//! Every method on [`Tape`] computes its forward value eagerly and appends a
//! node; [`Tape::backward`] walks the nodes in reverse. Nodes are appended
//! only after their inputs, so the record is always in topological order.

use crate::error::{Error, Result};
use crate::tensor::{conv1d_maxpool, gemm, Activation, ElemOp, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Relu(usize),
    AddBias(usize, usize),
    Softmax { input: usize, axis: usize },
    LogSoftmax { input: usize, axis: usize },
    Gather { table: usize, ids: Vec<usize> },
    Reshape(usize),
    Transpose(usize),
    SliceCols { input: usize, start: usize },
    ConcatCols(Vec<usize>),
    Sum(usize),
    Mean(usize),
    PickCols { input: usize, cols: Vec<usize> },
    NormalizeRows { input: usize, norms: Vec<f64> },
    ConvMaxPool {
        input: usize,
        filters: usize,
        bias: usize,
        width: usize,
        act: Activation,
        argmax: Vec<usize>,
        pre_at_max: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; all zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn dims2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; it receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node { value: tensor, op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        self.leaf(tensor.clone().with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn elementwise(&mut self, op: ElemOp, args: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = args.iter().map(|v| self.value(*v)).collect();
        let out = Tensor::elementwise(op, &vals)?;
        let ids: Vec<usize> = args.iter().map(|v| v.0).collect();
        let rec = match op {
            ElemOp::Add => Op::Add(ids[0], ids[1]),
            ElemOp::Mul => Op::Mul(ids[0], ids[1]),
            ElemOp::Tanh => Op::Tanh(ids[0]),
            ElemOp::Sigmoid => Op::Sigmoid(ids[0]),
            ElemOp::Exp => Op::Exp(ids[0]),
            ElemOp::Log => Op::Log(ids[0]),
        };
        Ok(self.push(out, rec, &ids))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElemOp::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElemOp::Mul, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.elementwise(ElemOp::Tanh, &[a]).expect("unary op")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.elementwise(ElemOp::Sigmoid, &[a]).expect("unary op")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.elementwise(ElemOp::Exp, &[a]).expect("unary op")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElemOp::Log, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a.0), &[a.0])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a.0, c), &[a.0])
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddConst(a.0), &[a.0])
    }

    /// Adds a length-`cols` bias to every row of a `[rows, cols]` matrix.
    pub fn add_bias(&mut self, m: Var, bias: Var) -> Result<Var> {
        let (r, c) = dims2(self.value(m));
        let b = self.value(bias);
        if b.numel() != c || self.value(m).ndim() != 2 {
            return Err(Error::Dimension(format!(
                "bias of shape {:?} for matrix {:?}",
                b.shape(),
                self.value(m).shape()
            )));
        }
        let mut out = self.value(m).data().to_vec();
        let bd = b.data();
        for i in 0..r {
            for (o, &bv) in out[i * c..(i + 1) * c].iter_mut().zip(bd) {
                *o += bv;
            }
        }
        let v = Tensor::new(vec![r, c], out)?;
        Ok(self.push(v, Op::AddBias(m.0, bias.0), &[m.0, bias.0]))
    }

    /// `x·w + b` for `x: [n, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a).softmax(axis)?;
        Ok(self.push(v, Op::Softmax { input: a.0, axis }, &[a.0]))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a).log_softmax(axis)?;
        Ok(self.push(v, Op::LogSoftmax { input: a.0, axis }, &[a.0]))
    }

    /// Rows `ids` of a `[n, d]` table, stacked into `[ids.len(), d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.ndim() != 2 {
            return Err(Error::Dimension("gather expects a 2-D table".into()));
        }
        let (n, d) = dims2(t);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= n {
                return Err(Error::Usage(format!("row {i} out of range for table of {n}")));
            }
            out.extend_from_slice(t.row(i));
        }
        let v = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(v, Op::Gather { table: table.0, ids: ids.to_vec() }, &[table.0]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a.0), &[a.0]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        Ok(self.push(v, Op::Transpose(a.0), &[a.0]))
    }

    /// Columns `start..start + len` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = dims2(t);
        if t.ndim() != 2 || start + len > c {
            return Err(Error::Dimension(format!(
                "column slice {start}..{} of {:?}",
                start + len,
                t.shape()
            )));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let v = Tensor::new(vec![r, len], out)?;
        Ok(self.push(v, Op::SliceCols { input: a.0, start }, &[a.0]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts
            .iter()
            .any(|p| self.value(*p).ndim() != 2 || self.value(*p).rows() != rows)
        {
            return Err(Error::Dimension("concat_cols needs 2-D parts with equal rows".into()));
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(i));
            }
        }
        let v = Tensor::new(vec![rows, total], out)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(v, Op::ConcatCols(ids.clone()), &ids))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a.0), &[a.0])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.numel() as f64);
        self.push(v, Op::Mean(a.0), &[a.0])
    }

    /// `out[i] = a[i, cols[i]]` for a 2-D `a`.
    pub fn pick_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = dims2(t);
        if t.ndim() != 2 || cols.len() != r {
            return Err(Error::Dimension(format!(
                "pick_cols: {} indices for {:?}",
                cols.len(),
                t.shape()
            )));
        }
        let mut out = Vec::with_capacity(r);
        for (i, &j) in cols.iter().enumerate() {
            if j >= c {
                return Err(Error::Usage(format!("column {j} out of range for {c}")));
            }
            out.push(t.data()[i * c + j]);
        }
        let v = Tensor::vector(out);
        Ok(self.push(v, Op::PickCols { input: a.0, cols: cols.to_vec() }, &[a.0]))
    }

    /// Scales each row of a 2-D tensor to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = dims2(t);
        let mut norms = Vec::with_capacity(r);
        let mut out = t.data().to_vec();
        for i in 0..r {
            let n = t.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0) {
                return Err(Error::DegenerateFeature(format!("row {i} has zero norm")));
            }
            out[i * c..(i + 1) * c].iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(v, Op::NormalizeRows { input: a.0, norms }, &[a.0]))
    }

    /// See [`crate::tensor::conv1d_maxpool`].
    pub fn conv1d_maxpool(
        &mut self,
        seq_embeds: Var,
        filters: Var,
        bias: Var,
        width: usize,
        act: Activation,
    ) -> Result<Var> {
        let out = conv1d_maxpool(
            self.value(seq_embeds),
            self.value(filters),
            self.value(bias),
            width,
            act,
        )?;
        let op = Op::ConvMaxPool {
            input: seq_embeds.0,
            filters: filters.0,
            bias: bias.0,
            width,
            act,
            argmax: out.argmax,
            pre_at_max: out.pre_at_max,
        };
        Ok(self.push(out.pooled, op, &[seq_embeds.0, filters.0, bias.0]))
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], idx: usize, delta: Tensor) {
        if !self.nodes[idx].needs_grad {
            return;
        }
        match &mut grads[idx] {
            Some(g) => g
                .data_mut()
                .iter_mut()
                .zip(delta.data())
                .for_each(|(a, b)| *a += b),
            slot => *slot = Some(delta),
        }
    }

    /// Like `accumulate` but lets the caller write straight into the buffer.
    fn grad_buf<'a>(&self, grads: &'a mut [Option<Tensor>], idx: usize) -> Option<&'a mut Tensor> {
        if !self.nodes[idx].needs_grad {
            return None;
        }
        let shape = self.nodes[idx].value.shape().to_vec();
        Some(grads[idx].get_or_insert_with(|| Tensor::zeros(&shape)))
    }

    fn reduce_to(&self, idx: usize, g: &Tensor) -> Tensor {
        let target = &self.nodes[idx].value;
        if target.shape() == g.shape() {
            g.clone()
        } else {
            // broadcast one-element operand
            Tensor::full(target.shape(), g.sum())
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let (m, k) = dims2(av);
                let n = bv.cols();
                if let Some(ga) = self.grad_buf(grads, *a) {
                    // ga += g · bᵀ
                    gemm(
                        m, n, k, 1.0, g.data(), n as isize, 1, bv.data(), 1, n as isize, 1.0,
                        ga.data_mut(), k as isize, 1,
                    );
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    // gb += aᵀ · g
                    gemm(
                        k, m, n, 1.0, av.data(), 1, k as isize, g.data(), n as isize, 1, 1.0,
                        gb.data_mut(), n as isize, 1,
                    );
                }
            }
            Op::Add(a, b) => {
                if self.nodes[*a].needs_grad {
                    self.accumulate(grads, *a, self.reduce_to(*a, g));
                }
                if self.nodes[*b].needs_grad {
                    self.accumulate(grads, *b, self.reduce_to(*b, g));
                }
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                if self.nodes[*a].needs_grad {
                    let prod = Tensor::elementwise(ElemOp::Mul, &[g, bv])?;
                    self.accumulate(grads, *a, self.reduce_to(*a, &prod));
                }
                if self.nodes[*b].needs_grad {
                    let prod = Tensor::elementwise(ElemOp::Mul, &[g, av])?;
                    self.accumulate(grads, *b, self.reduce_to(*b, &prod));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|v| v * c)),
            Op::AddConst(a) => self.accumulate(grads, *a, g.clone()),
            Op::Tanh(a) => {
                let d = zip_map(g, out, |gv, y| gv * (1.0 - y * y));
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = zip_map(g, out, |gv, y| gv * y * (1.0 - y));
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => self.accumulate(grads, *a, zip_map(g, out, |gv, y| gv * y)),
            Op::Log(a) => {
                let d = zip_map(g, &self.nodes[*a].value, |gv, x| gv / x);
                self.accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let d = zip_map(g, &self.nodes[*a].value, |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::AddBias(m, b) => {
                if self.nodes[*m].needs_grad {
                    self.accumulate(grads, *m, g.clone());
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    let c = g.cols();
                    for i in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(&g.data()[i * c..(i + 1) * c]) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Softmax { input, axis } => {
                let (outer, n, inner) = axis_layout(out.shape(), *axis);
                let y = out.data();
                let mut d = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let dot: f64 =
                            (0..n).map(|j| g.data()[base + j * inner] * y[base + j * inner]).sum();
                        for j in 0..n {
                            let p = base + j * inner;
                            d[p] = y[p] * (g.data()[p] - dot);
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::new(out.shape().to_vec(), d)?);
            }
            Op::LogSoftmax { input, axis } => {
                let (outer, n, inner) = axis_layout(out.shape(), *axis);
                let y = out.data();
                let mut d = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let gs: f64 = (0..n).map(|j| g.data()[base + j * inner]).sum();
                        for j in 0..n {
                            let p = base + j * inner;
                            d[p] = g.data()[p] - y[p].exp() * gs;
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::new(out.shape().to_vec(), d)?);
            }
            Op::Gather { table, ids } => {
                if let Some(gt) = self.grad_buf(grads, *table) {
                    let d = gt.cols();
                    for (r, &i) in ids.iter().enumerate() {
                        let src = &g.data()[r * d..(r + 1) * d];
                        for (o, v) in gt.data_mut()[i * d..(i + 1) * d].iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                let shape = self.nodes[*a].value.shape().to_vec();
                self.accumulate(grads, *a, g.reshape(&shape)?);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()?),
            Op::SliceCols { input, start } => {
                if let Some(gi) = self.grad_buf(grads, *input) {
                    let c = gi.cols();
                    let len = g.cols();
                    for i in 0..g.rows() {
                        let dst = &mut gi.data_mut()[i * c + start..i * c + start + len];
                        for (o, v) in dst.iter_mut().zip(&g.data()[i * len..(i + 1) * len]) {
                            *o += v;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.nodes[p].value.cols();
                    if let Some(gp) = self.grad_buf(grads, p) {
                        for i in 0..g.rows() {
                            let src = &g.data()[i * total + offset..i * total + offset + pc];
                            for (o, v) in gp.data_mut()[i * pc..(i + 1) * pc].iter_mut().zip(src) {
                                *o += v;
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::Sum(a) => {
                let shape = self.nodes[*a].value.shape().to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, g.data()[0]));
            }
            Op::Mean(a) => {
                let t = &self.nodes[*a].value;
                let v = g.data()[0] / t.numel() as f64;
                self.accumulate(grads, *a, Tensor::full(t.shape(), v));
            }
            Op::PickCols { input, cols } => {
                if let Some(gi) = self.grad_buf(grads, *input) {
                    let c = gi.cols();
                    for (i, &j) in cols.iter().enumerate() {
                        gi.data_mut()[i * c + j] += g.data()[i];
                    }
                }
            }
            Op::NormalizeRows { input, norms } => {
                let c = out.cols();
                let mut d = vec![0.0; out.numel()];
                for (i, &n) in norms.iter().enumerate() {
                    let y = &out.data()[i * c..(i + 1) * c];
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        d[i * c + j] = (gr[j] - y[j] * dot) / n;
                    }
                }
                self.accumulate(grads, *input, Tensor::new(out.shape().to_vec(), d)?);
            }
            Op::ConvMaxPool { input, filters, bias, width, act, argmax, pre_at_max } => {
                let x = &self.nodes[*input].value;
                let f = &self.nodes[*filters].value;
                let (batch, len, dim) = match x.shape() {
                    [l, d] => (1, *l, *d),
                    [b, l, d] => (*b, *l, *d),
                    _ => unreachable!("validated in forward"),
                };
                let count = f.rows();
                let fan_in = width * dim;
                let dpre: Vec<f64> = (0..batch * count)
                    .map(|k| g.data()[k] * act.derivative(pre_at_max[k]))
                    .collect();
                if let Some(gb) = self.grad_buf(grads, *bias) {
                    for s in 0..batch {
                        for k in 0..count {
                            gb.data_mut()[k] += dpre[s * count + k];
                        }
                    }
                }
                if let Some(gf) = self.grad_buf(grads, *filters) {
                    for s in 0..batch {
                        for k in 0..count {
                            let dp = dpre[s * count + k];
                            if dp == 0.0 {
                                continue;
                            }
                            let start = (s * len + argmax[s * count + k]) * dim;
                            let window = &x.data()[start..start + fan_in];
                            for (o, w) in gf.data_mut()[k * fan_in..(k + 1) * fan_in]
                                .iter_mut()
                                .zip(window)
                            {
                                *o += dp * w;
                            }
                        }
                    }
                }
                if let Some(gx) = self.grad_buf(grads, *input) {
                    for s in 0..batch {
                        for k in 0..count {
                            let dp = dpre[s * count + k];
                            if dp == 0.0 {
                                continue;
                            }
                            let start = (s * len + argmax[s * count + k]) * dim;
                            let frow = &f.data()[k * fan_in..(k + 1) * fan_in];
                            for (o, w) in gx.data_mut()[start..start + fan_in].iter_mut().zip(frow) {
                                *o += dp * w;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    if shape.is_empty() {
        return (1, 1, 1);
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
