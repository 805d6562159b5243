//! Dynamic computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Each op appends a node
//! holding its forward value; parents always have lower indices than their
//! children, so the node list is already in topological order and
//! [`Graph::backward`] is a single reverse sweep.
//!
//! Shape table (rank-1 inputs are treated as a single row where noted):
//!
//! | op | inputs | output |
//! |----|--------|--------|
//! | `matmul` | `[m,k]`, `[k,n]` | `[m,n]` |
//! | `add`, `sub`, `mul` | equal shapes | same |
//! | `add_row`, `mul_row` | `[m,n]`, `[n]` | `[m,n]` |
//! | `add_const` | any, constant of equal shape | same |
//! | `transpose` | `[m,n]` | `[n,m]` |
//! | `sum`, `mean` | any | `[1]` |
//! | `mean_rows` | `[m,n]` | `[1,n]` |
//! | `softmax_lastdim`, `layer_norm` | `[m,n]` | `[m,n]` |
//! | `gelu`, `relu`, `scale` | any | same |
//! | `embedding_lookup` | `[v,d]`, ids | `[len,d]` |
//! | `conv2d_stride` | `[c,h,w]`, `[o,c,k,k]`, `[o]` | `[o,h',w']` |
//! | `concat` | `[m_i,n]` (axis 0) or `[m,n_i]` (axis 1) | joined |
//! | `slice` | `[m,n]` | sub-range along one axis |
//! | `focal_loss_rows` | `[m,c]` logits | `[1]` |

use std::collections::HashMap;

use crate::error::{shape_err, Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddConst(Var),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Softmax(Var),
    LayerNorm(Var, Vec<f64>),
    Gelu(Var),
    Relu(Var),
    Embedding(Var, Vec<usize>),
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeom, cols: Vec<f64> },
    Concat(Vec<Var>, usize),
    Slice { src: Var, axis: usize, start: usize },
    FocalRows { logits: Var, targets: Vec<Option<usize>>, weights: Vec<f64>, gamma: f64, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

/// Recorded forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    no_grad: bool,
    bound: HashMap<ParamId, Var>,
    op_count: usize,
}

fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass buffers sized for the stated dims and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that records values only. Every node is a leaf without
    /// gradient storage, so no backward caches are retained.
    pub fn inference() -> Self {
        Self { no_grad: true, ..Self::default() }
    }

    pub fn is_recording(&self) -> bool {
        !self.no_grad
    }

    /// Number of ops appended since construction (leaves excluded).
    pub fn op_count(&self) -> usize {
        self.op_count
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf created with `requires_grad`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            if let Some(g) = n.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && !self.no_grad;
        let grad = requires_grad.then(|| vec![0.0; value.numel()]);
        self.nodes.push(Node { value, requires_grad, grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Binds a stored parameter as a trainable leaf. Repeated calls with the
    /// same id return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone(), true);
        self.bound.insert(id, v);
        v
    }

    /// Gradients of every bound parameter, in binding order.
    pub fn param_grads(&self) -> Vec<(ParamId, &[f64])> {
        let mut out: Vec<_> = self.bound.iter().filter_map(|(&id, &v)| self.grad(v).map(|g| (id, g))).collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn push(&mut self, value: Tensor, parents: &[Var], op: Op) -> Var {
        self.op_count += 1;
        let requires_grad = !self.no_grad && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, requires_grad, grad: None, op });
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v).dims2().ok_or_else(|| shape_err(op, &[self.shape(v)]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", &[self.shape(a), self.shape(b)]));
        }
        let mut out = vec![0.0; m * n];
        dgemm(m, k, n, self.value(a).data(), (k, 1), self.value(b).data(), (n, 1), &mut out, 0.0);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, &[a, b], Op::MatMul(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, &[self.shape(a), self.shape(b)]));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = self.zip(a, b, |x, y| x + y);
        Ok(self.push(t, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = self.zip(a, b, |x, y| x - y);
        Ok(self.push(t, &[a, b], Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = self.zip(a, b, |x, y| x * y);
        Ok(self.push(t, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.map(a, |x| x * c);
        self.push(t, &[a], Op::Scale(a, c))
    }

    fn row_op(&mut self, a: Var, row: Var, op: &'static str, mul: bool) -> Result<Var> {
        let (m, n) = self.dims2(a, op)?;
        if self.value(row).numel() != n {
            return Err(shape_err(op, &[self.shape(a), self.shape(row)]));
        }
        let r = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for (x, &y) in data[i * n..(i + 1) * n].iter_mut().zip(r) {
                if mul {
                    *x *= y;
                } else {
                    *x += y;
                }
            }
        }
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let o = if mul { Op::MulRow(a, row) } else { Op::AddRow(a, row) };
        Ok(self.push(t, &[a, row], o))
    }

    /// Adds a length-`n` vector to every row of `[m,n]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_op(a, row, "add_row", false)
    }

    /// Multiplies every row of `[m,n]` elementwise by a length-`n` vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_op(a, row, "mul_row", true)
    }

    /// Adds a non-differentiable constant, e.g. an attention mask.
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        if self.shape(a) != c.shape() {
            return Err(shape_err("add_const", &[self.shape(a), c.shape()]));
        }
        let data = self.value(a).data().iter().zip(c.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, &[a], Op::AddConst(a)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "transpose")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let t = Tensor::new(vec![n, m], data)?;
        Ok(self.push(t, &[a], Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, &[a], Op::Reshape(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel().max(1) as f64;
        self.push(Tensor::scalar(s), &[a], Op::Mean(a))
    }

    /// Column means of `[m,n]`, as `[1,n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "mean_rows")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, x) in out.iter_mut().zip(&src[i * n..(i + 1) * n]) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let t = Tensor::new(vec![1, n], out)?;
        Ok(self.push(t, &[a], Op::MeanRows(a)))
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "softmax_lastdim")?;
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            softmax_in_place(&mut data[i * n..(i + 1) * n]);
        }
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, &[a], Op::Softmax(a)))
    }

    /// Per-row standardization over the last dimension, without affine terms.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims2(a, "layer_norm")?;
        let mut data = self.value(a).data().to_vec();
        let mut inv_std = Vec::with_capacity(m);
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mu) * is);
            inv_std.push(is);
        }
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, &[a], Op::LayerNorm(a, inv_std)))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        self.push(t, &[a], Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(0.0));
        self.push(t, &[a], Op::Relu(a))
    }

    /// Gathers rows of `table` (`[v,d]`) by id.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2(table, "embedding_lookup")?;
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::Index { op: "embedding_lookup", index: id, size: v });
            }
            data.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let t = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(t, &[table], Op::Embedding(table, ids.to_vec())))
    }

    /// Square-kernel 2D convolution over `[c,h,w]` with zero padding.
    pub fn conv2d_stride(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let (c, h, w) = match self.shape(input) {
            &[c, h, w] => (c, h, w),
            s => return Err(shape_err("conv2d_stride", &[s])),
        };
        let (o, k) = match self.shape(weight) {
            &[o, c2, k, k2] if c2 == c && k == k2 => (o, k),
            s => return Err(shape_err("conv2d_stride", &[self.shape(input), s])),
        };
        if self.value(bias).numel() != o || stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return Err(shape_err("conv2d_stride", &[self.shape(input), self.shape(weight), self.shape(bias)]));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let geom = ConvGeom { c, h, w, o, k, stride, pad, ho, wo };
        let cols = im2col(self.value(input).data(), &geom);
        let ckk = c * k * k;
        let hw = ho * wo;
        let mut out = vec![0.0; o * hw];
        for (oi, b) in self.value(bias).data().iter().enumerate() {
            out[oi * hw..(oi + 1) * hw].iter_mut().for_each(|x| *x = *b);
        }
        dgemm(o, ckk, hw, self.value(weight).data(), (ckk, 1), &cols, (hw, 1), &mut out, 1.0);
        let t = Tensor::new(vec![o, ho, wo], out)?;
        let keep = if self.no_grad { Vec::new() } else { cols };
        Ok(self.push(t, &[input, weight, bias], Op::Conv2d { input, weight, bias, geom, cols: keep }))
    }

    /// Joins rank-2 tensors along axis 0 (rows) or 1 (columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(shape_err("concat", &[]));
        }
        let dims: Vec<(usize, usize)> = parts.iter().map(|&p| self.dims2(p, "concat")).collect::<Result<_>>()?;
        let bad = || {
            let shapes: Vec<Vec<usize>> = dims.iter().map(|&(a, b)| vec![a, b]).collect();
            let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
            shape_err("concat", &refs)
        };
        let t = if axis == 0 {
            let n = dims[0].1;
            if dims.iter().any(|d| d.1 != n) {
                return Err(bad());
            }
            let rows: usize = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(rows * n);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::new(vec![rows, n], data)?
        } else {
            let m = dims[0].0;
            if dims.iter().any(|d| d.0 != m) {
                return Err(bad());
            }
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(m * cols);
            for i in 0..m {
                for (&p, &(_, n)) in parts.iter().zip(&dims) {
                    data.extend_from_slice(&self.value(p).data()[i * n..(i + 1) * n]);
                }
            }
            Tensor::new(vec![m, cols], data)?
        };
        Ok(self.push(t, parts, Op::Concat(parts.to_vec(), axis)))
    }

    /// Half-open range `[start, end)` along axis 0 or 1 of a rank-2 tensor.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims2(a, "slice")?;
        let limit = if axis == 0 { m } else { n };
        if axis > 1 || start >= end || end > limit {
            return Err(TensorError::Index { op: "slice", index: end, size: limit });
        }
        let src = self.value(a).data();
        let t = if axis == 0 {
            Tensor::new(vec![end - start, n], src[start * n..end * n].to_vec())?
        } else {
            let mut data = Vec::with_capacity(m * (end - start));
            for i in 0..m {
                data.extend_from_slice(&src[i * n + start..i * n + end]);
            }
            Tensor::new(vec![m, end - start], data)?
        };
        Ok(self.push(t, &[a], Op::Slice { src: a, axis, start }))
    }

    /// Weighted sum of focal losses, one per row of `[m,c]` logits. Rows whose
    /// target is `None` contribute nothing.
    ///
    /// Each term is `-(1 - p_t)^gamma * ln(p_t)` with `p_t` the softmax
    /// probability of the target class, evaluated through log-sum-exp.
    pub fn focal_loss_rows(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        weights: &[f64],
        gamma: f64,
    ) -> Result<Var> {
        let (m, c) = self.dims2(logits, "focal_loss_rows")?;
        if targets.len() != m || weights.len() != m {
            return Err(shape_err("focal_loss_rows", &[self.shape(logits), &[targets.len()], &[weights.len()]]));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = 0.0;
        for i in 0..m {
            let Some(t) = targets[i] else { continue };
            if t >= c {
                return Err(TensorError::Index { op: "focal_loss", index: t, size: c });
            }
            let row = &self.value(logits).data()[i * c..(i + 1) * c];
            let log_pt = row[t] - log_sum_exp(row);
            let pt = log_pt.exp();
            total += weights[i] * -(1.0 - pt).powf(gamma) * log_pt;
            softmax_in_place(&mut probs[i * c..(i + 1) * c]);
        }
        let keep = if self.no_grad { Vec::new() } else { probs };
        Ok(self.push(
            Tensor::scalar(total),
            &[logits],
            Op::FocalRows { logits, targets: targets.to_vec(), weights: weights.to_vec(), gamma, probs: keep },
        ))
    }

    /// Focal loss of a single `[c]` or `[1,c]` logit vector.
    pub fn focal_loss(&mut self, logits: Var, target: usize, gamma: f64) -> Result<Var> {
        let (m, _) = self.dims2(logits, "focal_loss")?;
        if m != 1 {
            return Err(shape_err("focal_loss", &[self.shape(logits)]));
        }
        self.focal_loss_rows(logits, &[Some(target)], &[1.0], gamma)
    }

    /// Propagates d(loss)/d(node) to every leaf that requires grad, adding
    /// into the leaf's accumulated gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if let Some(acc) = self.nodes[idx].grad.as_mut() {
                    acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                continue;
            }
            self.backprop_node(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2().unwrap();
                let n = k_cols(&self.nodes[b.0].value);
                if wants(*a) {
                    acc(*a, &mut |da| {
                        dgemm(m, n, k, g, (n, 1), val(*b), (1, n), da, 1.0);
                    });
                }
                if wants(*b) {
                    acc(*b, &mut |db| {
                        dgemm(k, m, n, val(*a), (1, k), g, (n, 1), db, 1.0);
                    });
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                acc(*a, &mut |d| {
                    for ((x, gy), bv) in d.iter_mut().zip(g).zip(val(*b)) {
                        *x += gy * bv;
                    }
                });
                acc(*b, &mut |d| {
                    for ((x, gy), av) in d.iter_mut().zip(g).zip(val(*a)) {
                        *x += gy * av;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::AddRow(a, r) => {
                let n = val(*r).len();
                acc(*a, &mut |d| add_into(d, g));
                acc(*r, &mut |d| {
                    for chunk in g.chunks(n) {
                        add_into(d, chunk);
                    }
                });
            }
            Op::MulRow(a, r) => {
                let n = val(*r).len();
                acc(*a, &mut |d| {
                    for (dc, gc) in d.chunks_mut(n).zip(g.chunks(n)) {
                        for ((x, gy), rv) in dc.iter_mut().zip(gc).zip(val(*r)) {
                            *x += gy * rv;
                        }
                    }
                });
                acc(*r, &mut |d| {
                    for (gc, ac) in g.chunks(n).zip(val(*a).chunks(n)) {
                        for ((x, gy), av) in d.iter_mut().zip(gc).zip(ac) {
                            *x += gy * av;
                        }
                    }
                });
            }
            Op::AddConst(a) | Op::Reshape(a) => acc(*a, &mut |d| add_into(d, g)),
            Op::Transpose(a) => {
                let (m, n) = self.nodes[a.0].value.dims2().unwrap();
                acc(*a, &mut |d| {
                    for i in 0..m {
                        for j in 0..n {
                            d[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let scale = g[0] / val(*a).len().max(1) as f64;
                acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += scale));
            }
            Op::MeanRows(a) => {
                let (m, n) = self.nodes[a.0].value.dims2().unwrap();
                acc(*a, &mut |d| {
                    for row in d.chunks_mut(n) {
                        for (x, gy) in row.iter_mut().zip(g) {
                            *x += gy / m as f64;
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let n = k_cols(&node.value);
                let y = node.value.data();
                acc(*a, &mut |d| {
                    for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((x, gy), yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *x += yv * (gy - dot);
                        }
                    }
                });
            }
            Op::LayerNorm(a, inv_std) => {
                let n = k_cols(&node.value);
                let y = node.value.data();
                acc(*a, &mut |d| {
                    for (((dr, gr), yr), is) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)).zip(inv_std) {
                        let mg = gr.iter().sum::<f64>() / n as f64;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for ((x, gy), yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *x += is * (gy - mg - yv * mgy);
                        }
                    }
                });
            }
            Op::Gelu(a) => acc(*a, &mut |d| {
                for ((x, gy), &v) in d.iter_mut().zip(g).zip(val(*a)) {
                    let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                    let dt = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                    *x += gy * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dt);
                }
            }),
            Op::Relu(a) => acc(*a, &mut |d| {
                for ((x, gy), &v) in d.iter_mut().zip(g).zip(val(*a)) {
                    if v > 0.0 {
                        *x += gy;
                    }
                }
            }),
            Op::Embedding(table, ids) => {
                let dim = k_cols(&self.nodes[table.0].value);
                acc(*table, &mut |d| {
                    for (row, &id) in g.chunks(dim).zip(ids) {
                        add_into(&mut d[id * dim..(id + 1) * dim], row);
                    }
                });
            }
            Op::Conv2d { input, weight, bias, geom, cols } => {
                let hw = geom.ho * geom.wo;
                let ckk = geom.c * geom.k * geom.k;
                acc(*bias, &mut |d| {
                    for (x, row) in d.iter_mut().zip(g.chunks(hw)) {
                        *x += row.iter().sum::<f64>();
                    }
                });
                if wants(*weight) {
                    acc(*weight, &mut |d| {
                        dgemm(geom.o, hw, ckk, g, (hw, 1), cols, (1, hw), d, 1.0);
                    });
                }
                if wants(*input) {
                    let mut dcols = vec![0.0; ckk * hw];
                    dgemm(ckk, geom.o, hw, val(*weight), (1, ckk), g, (hw, 1), &mut dcols, 0.0);
                    acc(*input, &mut |d| col2im_add(&dcols, geom, d));
                }
            }
            Op::Concat(parts, axis) => {
                let (m, total) = node.value.dims2().unwrap();
                let mut offset = 0;
                for &p in parts {
                    let (pm, pn) = self.nodes[p.0].value.dims2().unwrap();
                    if *axis == 0 {
                        let seg = &g[offset * total..(offset + pm) * total];
                        acc(p, &mut |d| add_into(d, seg));
                        offset += pm;
                    } else {
                        acc(p, &mut |d| {
                            for i in 0..m {
                                add_into(&mut d[i * pn..(i + 1) * pn], &g[i * total + offset..i * total + offset + pn]);
                            }
                        });
                        offset += pn;
                    }
                }
            }
            Op::Slice { src, axis, start } => {
                let (m, n) = self.nodes[src.0].value.dims2().unwrap();
                let (_, sn) = node.value.dims2().unwrap();
                acc(*src, &mut |d| {
                    if *axis == 0 {
                        add_into(&mut d[start * n..start * n + g.len()], g);
                    } else {
                        for i in 0..m {
                            add_into(&mut d[i * n + start..i * n + start + sn], &g[i * sn..(i + 1) * sn]);
                        }
                    }
                });
            }
            Op::FocalRows { logits, targets, weights, gamma, probs } => {
                let c = k_cols(&self.nodes[logits.0].value);
                acc(*logits, &mut |d| {
                    for (i, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let p = &probs[i * c..(i + 1) * c];
                        let pt = p[t];
                        let coef = weights[i] * g[0] * focal_dlogit_coef(pt, *gamma);
                        for (k, (x, pk)) in d[i * c..(i + 1) * c].iter_mut().zip(p).enumerate() {
                            let delta = if k == t { 1.0 } else { 0.0 };
                            *x += coef * (delta - pk);
                        }
                    }
                });
            }
        }
    }
}

/// d FL / d z_k = coef * (delta_tk - p_k).
fn focal_dlogit_coef(pt: f64, gamma: f64) -> f64 {
    let q = 1.0 - pt;
    let log_pt = pt.ln();
    let first = if gamma == 0.0 || q <= 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) * pt * log_pt };
    first - q.powf(gamma)
}

fn k_cols(t: &Tensor) -> usize {
    *t.shape().last().unwrap_or(&1)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        s += *x;
    }
    row.iter_mut().for_each(|x| *x /= s);
}

fn im2col(src: &[f64], g: &ConvGeom) -> Vec<f64> {
    let hw = g.ho * g.wo;
    let mut cols = vec![0.0; g.c * g.k * g.k * hw];
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        dst[oy * g.wo + ox] = src[(ci * g.h + iy as usize) * g.w + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f64], g: &ConvGeom, dst: &mut [f64]) {
    let hw = g.ho * g.wo;
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        dst[(ci * g.h + iy as usize) * g.w + ix as usize] += src[oy * g.wo + ox];
                    }
                }
            }
        }
    }
}
