//! Reverse-mode differentiation over a flat operation tape.
//!
//! Every operation appends a node holding its forward value and the handles
//! of its inputs. Nodes are only ever appended, so the tape order is already a
//! topological order and [`Tape::backward`] simply walks it in reverse.

use super::{Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sum(Vec<Var>),
    Concat(Vec<Var>, usize),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize),
    Row(Var, usize),
    Reshape(Var),
    Transpose(Var),
    Embedding(Var, Vec<usize>),
    Mean(Var),
    Dot(Var, Var),
    Softmax(Var),
    CausalSoftmax(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        gold: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Single-threaded; build one per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node on the tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of the node's shape when nothing flowed into it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn shape_err(op: &'static str, left: &Tensor, right: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Numerically stable softmax of `xs` written into `out`.
pub fn softmax_slice(xs: &[f64], out: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, x) in out.iter_mut().zip(xs) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn as_matrix_dims(t: &Tensor) -> Option<(usize, usize)> {
    match t.shape() {
        [n, m] => Some((*n, *m)),
        _ => None,
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf node. Gradients are only tracked when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// `[n,k] x [k,m] -> [n,m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let ((n, k), (k2, m)) = match (as_matrix_dims(av), as_matrix_dims(bv)) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(shape_err("matmul", av, bv)),
        };
        if k != k2 {
            return Err(shape_err("matmul", av, bv));
        }
        let out = Tensor::new(vec![n, m], matmul_raw(av.data(), bv.data(), n, k, m))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a `[m]` bias to every row of `x` (`[n,m]` or `[m]`).
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.ndim() != 1 || xv.ndim() == 0 || xv.ndim() > 2 || xv.cols() != bv.len() {
            return Err(shape_err("add_row", xv, bv));
        }
        let m = bv.len();
        let mut data = xv.data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v += bv.data()[i % m];
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddRow(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * s).collect();
        let out = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty("sum"))?;
        let mut acc = self.value(*first).clone();
        for p in &parts[1..] {
            let pv = self.value(*p);
            if pv.shape() != acc.shape() {
                return Err(shape_err("sum", &acc, pv));
            }
            acc.add_assign(pv);
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(acc, Op::Sum(parts.to_vec()), rg))
    }

    /// Concatenation of 1-D vectors (axis 0) or matrices along `axis` 0 or 1.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = self.value(*parts.first().ok_or(TensorError::Empty("concat"))?);
        let ndim = first.ndim();
        let out = match (ndim, axis) {
            (1, 0) => {
                let mut data = Vec::new();
                for p in parts {
                    let pv = self.value(*p);
                    if pv.ndim() != 1 {
                        return Err(shape_err("concat", first, pv));
                    }
                    data.extend_from_slice(pv.data());
                }
                Tensor::vector(data)
            }
            (2, 0) => {
                let cols = first.cols();
                let mut data = Vec::new();
                let mut rows = 0;
                for p in parts {
                    let pv = self.value(*p);
                    if pv.ndim() != 2 || pv.cols() != cols {
                        return Err(shape_err("concat", first, pv));
                    }
                    rows += pv.rows();
                    data.extend_from_slice(pv.data());
                }
                Tensor::new(vec![rows, cols], data)?
            }
            (2, 1) => {
                let rows = first.rows();
                let mut total = 0;
                for p in parts {
                    let pv = self.value(*p);
                    if pv.ndim() != 2 || pv.rows() != rows {
                        return Err(shape_err("concat", first, pv));
                    }
                    total += pv.cols();
                }
                let mut data = vec![0.0; rows * total];
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let c = pv.cols();
                    for r in 0..rows {
                        data[r * total + offset..r * total + offset + c]
                            .copy_from_slice(pv.row(r));
                    }
                    offset += c;
                }
                Tensor::new(vec![rows, total], data)?
            }
            _ => return Err(TensorError::BadAxis { op: "concat", axis, ndim }),
        };
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if xv.ndim() != 2 || start >= end || end > xv.cols() {
            return Err(TensorError::BadSlice {
                shape: xv.shape().to_vec(),
                start,
                end,
            });
        }
        let rows = xv.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&xv.row(r)[start..end]);
        }
        let out = Tensor::new(vec![rows, end - start], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceCols(x, start, end), rg))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if xv.ndim() != 2 || start >= end || end > xv.rows() {
            return Err(TensorError::BadSlice {
                shape: xv.shape().to_vec(),
                start,
                end,
            });
        }
        let c = xv.cols();
        let out = Tensor::new(vec![end - start, c], xv.data()[start * c..end * c].to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceRows(x, start), rg))
    }

    /// Row `index` of a matrix as a vector.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if xv.ndim() != 2 || index >= xv.rows() {
            return Err(TensorError::BadSlice {
                shape: xv.shape().to_vec(),
                start: index,
                end: index + 1,
            });
        }
        let out = Tensor::vector(xv.row(index).to_vec());
        let rg = self.rg(x);
        Ok(self.push(out, Op::Row(x, index), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (r, c) = as_matrix_dims(xv).ok_or(TensorError::BadAxis {
            op: "transpose",
            axis: 1,
            ndim: xv.ndim(),
        })?;
        let out = Tensor::new(vec![c, r], transpose_raw(xv.data(), r, c))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    /// Gathers rows of `table` (`[V,d]`) into a `[ids.len(), d]` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let tv = self.value(table);
        if tv.ndim() != 2 {
            return Err(TensorError::BadAxis {
                op: "embedding",
                axis: 0,
                ndim: tv.ndim(),
            });
        }
        if ids.is_empty() {
            return Err(TensorError::Empty("embedding"));
        }
        let d = tv.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= tv.rows() {
                return Err(TensorError::IndexOutOfRange {
                    index: id,
                    len: tv.rows(),
                });
            }
            data.extend_from_slice(tv.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        let rg = self.rg(table);
        Ok(self.push(out, Op::Embedding(table, ids.to_vec()), rg))
    }

    /// Mean over axis 0: `[n,d] -> [d]`, `[n] -> []`.
    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let out = match xv.ndim() {
            1 => {
                if xv.is_empty() {
                    return Err(TensorError::Empty("mean"));
                }
                Tensor::scalar(xv.data().iter().sum::<f64>() / xv.len() as f64)
            }
            2 => {
                let (n, d) = (xv.rows(), xv.cols());
                if n == 0 {
                    return Err(TensorError::Empty("mean"));
                }
                let mut acc = vec![0.0; d];
                for r in 0..n {
                    for (a, v) in acc.iter_mut().zip(xv.row(r)) {
                        *a += v;
                    }
                }
                Tensor::vector(acc.into_iter().map(|v| v / n as f64).collect())
            }
            nd => {
                return Err(TensorError::BadAxis {
                    op: "mean",
                    axis: 0,
                    ndim: nd,
                })
            }
        };
        let rg = self.rg(x);
        Ok(self.push(out, Op::Mean(x), rg))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() != 1 || av.shape() != bv.shape() {
            return Err(shape_err("dot", av, bv));
        }
        let s = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), rg))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if xv.ndim() == 0 || xv.ndim() > 2 || xv.is_empty() {
            return Err(TensorError::BadAxis {
                op: "softmax",
                axis: 0,
                ndim: xv.ndim(),
            });
        }
        let c = xv.cols();
        let mut data = vec![0.0; xv.len()];
        for r in 0..xv.rows() {
            softmax_slice(xv.row(r), &mut data[r * c..(r + 1) * c]);
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    /// Row softmax of a square score matrix where row `i` only sees columns `0..=i`.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (n, m) = as_matrix_dims(xv).ok_or(TensorError::BadAxis {
            op: "causal_softmax",
            axis: 1,
            ndim: xv.ndim(),
        })?;
        if n != m {
            return Err(shape_err("causal_softmax", xv, xv));
        }
        let mut data = vec![0.0; n * n];
        for r in 0..n {
            softmax_slice(&xv.row(r)[..=r], &mut data[r * n..r * n + r + 1]);
        }
        let out = Tensor::new(vec![n, n], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::CausalSoftmax(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v.max(0.0)).collect();
        let out = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    /// Layer normalisation over the last axis followed by `gain * x + bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, TensorError> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let d = xv.cols();
        if xv.ndim() == 0 || xv.ndim() > 2 || gv.shape() != [d] || bv.shape() != [d] {
            return Err(shape_err("layernorm", xv, gv));
        }
        let rows = xv.rows();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let shape = xv.shape().to_vec();
        let xhat = Tensor::new(shape.clone(), xhat)?;
        let out = Tensor::new(shape, out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Negative log-likelihood of `gold` under `softmax(logits)`; scalar result.
    pub fn cross_entropy(&mut self, logits: Var, gold: usize) -> Result<Var, TensorError> {
        let lv = self.value(logits);
        if lv.ndim() != 1 {
            return Err(TensorError::BadAxis {
                op: "cross_entropy",
                axis: 0,
                ndim: lv.ndim(),
            });
        }
        if gold >= lv.len() {
            return Err(TensorError::IndexOutOfRange {
                index: gold,
                len: lv.len(),
            });
        }
        let max = lv.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - lv.data()[gold];
        let probs = lv.data().iter().map(|v| (v - lse).exp()).collect();
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                gold,
                probs,
            },
            rg,
        ))
    }

    /// Propagates d`loss`/d`node` back through the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        if self.rg(loss) {
            grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));
        }
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, contrib: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut Tensor)) {
        if !self.rg(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        f(slot.as_mut().expect("initialised"));
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let shaped = |v: Var, data: Vec<f64>| {
            Tensor::new(self.value(v).shape().to_vec(), data).expect("gradient shape")
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k) = (av.rows(), av.cols());
                let m = bv.cols();
                if self.rg(*a) {
                    let bt = transpose_raw(bv.data(), k, m);
                    self.accumulate(grads, *a, shaped(*a, matmul_raw(g.data(), &bt, n, m, k)));
                }
                if self.rg(*b) {
                    let at = transpose_raw(av.data(), n, k);
                    self.accumulate(grads, *b, shaped(*b, matmul_raw(&at, g.data(), k, n, m)));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                let m = self.value(*bias).len();
                self.accumulate_with(grads, *bias, |acc| {
                    for (i, v) in g.data().iter().enumerate() {
                        acc.data_mut()[i % m] += v;
                    }
                });
            }
            Op::Scale(x, s) => {
                let data = g.data().iter().map(|v| v * s).collect();
                self.accumulate(grads, *x, shaped(*x, data));
            }
            Op::Sum(parts) => {
                for p in parts {
                    self.accumulate(grads, *p, g.clone());
                }
            }
            Op::Concat(parts, axis) => {
                if *axis == 0 {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.value(*p).len();
                        let data = g.data()[offset..offset + len].to_vec();
                        offset += len;
                        self.accumulate(grads, *p, shaped(*p, data));
                    }
                } else {
                    let rows = out.rows();
                    let total = out.cols();
                    let mut offset = 0;
                    for p in parts {
                        let c = self.value(*p).cols();
                        let mut data = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            data.extend_from_slice(
                                &g.data()[r * total + offset..r * total + offset + c],
                            );
                        }
                        offset += c;
                        self.accumulate(grads, *p, shaped(*p, data));
                    }
                }
            }
            Op::SliceCols(x, start, end) => {
                let width = end - start;
                let cols = self.value(*x).cols();
                self.accumulate_with(grads, *x, |acc| {
                    for r in 0..g.rows() {
                        for j in 0..width {
                            acc.data_mut()[r * cols + start + j] += g.data()[r * width + j];
                        }
                    }
                });
            }
            Op::SliceRows(x, start) => {
                let offset = start * out.cols();
                self.accumulate_with(grads, *x, |acc| {
                    for (j, v) in g.data().iter().enumerate() {
                        acc.data_mut()[offset + j] += v;
                    }
                });
            }
            Op::Row(x, index) => {
                let cols = self.value(*x).cols();
                self.accumulate_with(grads, *x, |acc| {
                    for (j, v) in g.data().iter().enumerate() {
                        acc.data_mut()[index * cols + j] += v;
                    }
                });
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, shaped(*x, g.data().to_vec()));
            }
            Op::Transpose(x) => {
                let (r, c) = (out.rows(), out.cols());
                self.accumulate(grads, *x, shaped(*x, transpose_raw(g.data(), r, c)));
            }
            Op::Embedding(table, ids) => {
                let d = out.cols();
                self.accumulate_with(grads, *table, |acc| {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut acc.data_mut()[id * d..(id + 1) * d];
                        for (a, v) in dst.iter_mut().zip(&g.data()[r * d..(r + 1) * d]) {
                            *a += v;
                        }
                    }
                });
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let data = if xv.ndim() == 1 {
                    vec![g.item() / xv.len() as f64; xv.len()]
                } else {
                    let (n, d) = (xv.rows(), xv.cols());
                    (0..xv.len()).map(|i| g.data()[i % d] / n as f64).collect()
                };
                self.accumulate(grads, *x, shaped(*x, data));
            }
            Op::Dot(a, b) => {
                let s = g.item();
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = bv.data().iter().map(|v| v * s).collect();
                let db = av.data().iter().map(|v| v * s).collect();
                self.accumulate(grads, *a, shaped(*a, da));
                self.accumulate(grads, *b, shaped(*b, db));
            }
            Op::Softmax(x) | Op::CausalSoftmax(x) => {
                let c = out.cols();
                let mut data = vec![0.0; out.len()];
                for r in 0..out.rows() {
                    let y = &out.data()[r * c..(r + 1) * c];
                    let dy = &g.data()[r * c..(r + 1) * c];
                    let inner: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        data[r * c + j] = y[j] * (dy[j] - inner);
                    }
                }
                self.accumulate(grads, *x, shaped(*x, data));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(v, d)| if *v > 0.0 { *d } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, shaped(*x, data));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = out.cols();
                let rows = out.rows();
                let gv = self.value(*gain).data().to_vec();
                self.accumulate_with(grads, *gain, |acc| {
                    for r in 0..rows {
                        for j in 0..d {
                            acc.data_mut()[j] += g.data()[r * d + j] * xhat.data()[r * d + j];
                        }
                    }
                });
                self.accumulate_with(grads, *bias, |acc| {
                    for r in 0..rows {
                        for j in 0..d {
                            acc.data_mut()[j] += g.data()[r * d + j];
                        }
                    }
                });
                if self.rg(*x) {
                    let mut data = vec![0.0; out.len()];
                    for r in 0..rows {
                        let dxhat: Vec<f64> =
                            (0..d).map(|j| g.data()[r * d + j] * gv[j]).collect();
                        let sum: f64 = dxhat.iter().sum();
                        let sum_x: f64 = (0..d).map(|j| dxhat[j] * xhat.data()[r * d + j]).sum();
                        for j in 0..d {
                            data[r * d + j] = inv_std[r] / d as f64
                                * (d as f64 * dxhat[j] - sum - xhat.data()[r * d + j] * sum_x);
                        }
                    }
                    self.accumulate(grads, *x, shaped(*x, data));
                }
            }
            Op::CrossEntropy {
                logits,
                gold,
                probs,
            } => {
                let s = g.item();
                let data = probs
                    .iter()
                    .enumerate()
                    .map(|(i, p)| s * (p - if i == *gold { 1.0 } else { 0.0 }))
                    .collect();
                self.accumulate(grads, *logits, shaped(*logits, data));
            }
        }
    }
}
