//! Reverse-mode differentiation over a linear operation tape.
//!
//! Every forward op appends a node holding its value; `backward` walks the
//! tape in reverse and returns one gradient buffer per node that lies on a
//! path from a gradient-requiring leaf to the loss. Nodes off every such path
//! get no buffer at all, so "no path" means an exact zero, not a small one.

use rand::Rng;

use super::kernels::{matmul, matmul_a_bt, matmul_at_b};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    AddConst(Var),
    Relu(Var),
    Transpose(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather(Var, Vec<usize>),
    Softmax {
        x: Var,
        outer: usize,
        n: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MaskedMeanRows(Var, Vec<bool>),
    Sum(Var),
    Mse(Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        pad: usize,
        probs: Vec<f64>,
        count: usize,
    },
    Detach,
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradient buffers produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` when no
    /// differentiable path connects them.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient for `v` into `t.grad` when `t.requires_grad`.
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor) {
        if !t.requires_grad {
            return;
        }
        match self.wrt(v) {
            Some(g) => t.accumulate_grad(g),
            None => {
                if t.grad.is_none() {
                    t.grad = Some(vec![0.0; t.len()]);
                }
            }
        }
    }
}

/// Per-parameter gradients extracted from one backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamGrads {
    pub entries: Vec<(ParamId, Vec<f64>)>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
    frozen: bool,
}

fn shape_2d(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (shape[..shape.len() - 1].iter().product(), shape[shape.len() - 1]),
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape on which parameters are bound without gradient tracking.
    pub fn inference() -> Self {
        Tape {
            frozen: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape node shape is consistent")
    }

    /// Records `t` as an input; it participates in backward iff
    /// `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad && !self.frozen,
        )
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Var {
        self.push(shape, data, Op::Leaf, false)
    }

    /// Binds a parameter. Repeated binds of the same id return the same
    /// variable, so shared (tied) parameters accumulate every use.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.bound.get(id.index()) {
            return *v;
        }
        let t = store.tensor(id);
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Param, !self.frozen);
        if self.bound.len() <= id.index() {
            self.bound.resize(id.index() + 1, None);
        }
        self.bound[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul(self.value(a), self.value(b), m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape("matmul_bt", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let out = matmul_a_bt(self.value(a), self.value(b), m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], out, Op::MatMulBt(a, b), ng))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a bias vector `[n]` to every row of `x: [.., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, cols) = shape_2d(self.shape(x));
        if self.shape(bias) != [cols] {
            return Err(Error::shape("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias);
        let out = self
            .value(x)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(r, b)| r + b))
            .collect();
        let ng = self.needs(x) || self.needs(bias);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::AddBias(x, bias), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * c).collect();
        let ng = self.needs(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Scale(x, c), ng)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(Error::shape("mul_const", self.shape(x), &[c.len()]));
        }
        let out = self.value(x).iter().zip(&c).map(|(a, b)| a * b).collect();
        let ng = self.needs(x);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::MulConst(x, c), ng))
    }

    /// Adds a constant of the same shape; the gradient passes through.
    pub fn add_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(Error::shape("add_const", self.shape(x), &[c.len()]));
        }
        let out = self.value(x).iter().zip(c).map(|(a, b)| a + b).collect();
        let ng = self.needs(x);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::AddConst(x), ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.max(0.0)).collect();
        let ng = self.needs(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Relu(x), ng)
    }

    /// Inverted dropout. With `rng == None` (evaluation) this is the identity
    /// and records nothing.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
        match rng {
            Some(rng) if rate > 0.0 => {
                let keep = 1.0 - rate;
                let mask = (0..self.value(x).len())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                self.mul_const(x, mask)
            }
            _ => Ok(x),
        }
    }

    /// Drops whole rows (tokens) of a 2-D input with inverted scaling.
    pub fn row_dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
        match rng {
            Some(rng) if rate > 0.0 => {
                let (rows, cols) = shape_2d(self.shape(x));
                let keep = 1.0 - rate;
                let mut mask = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let m = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
                    mask.extend(std::iter::repeat_n(m, cols));
                }
                self.mul_const(x, mask)
            }
            _ => Ok(x),
        }
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::shape("transpose", s, &[]));
        }
        let (m, n) = (s[0], s[1]);
        let v = self.value(x);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = v[i * n + j];
            }
        }
        let ng = self.needs(x);
        Ok(self.push(vec![n, m], out, Op::Transpose(x), ng))
    }

    /// Columns `start..start + len` of a 2-D input.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || start + len > s[1] || len == 0 {
            return Err(Error::shape("slice_cols", s, &[start, len]));
        }
        let (m, n) = (s[0], s[1]);
        let v = self.value(x);
        let out = (0..m)
            .flat_map(|i| v[i * n + start..i * n + start + len].iter().copied())
            .collect();
        let ng = self.needs(x);
        Ok(self.push(vec![m, len], out, Op::SliceCols(x, start), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p)[0])
            .ok_or_else(|| Error::invalid("concat_cols", "no inputs"))?;
        let mut width = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::shape("concat_cols", self.shape(parts[0]), s));
            }
            width += s[1];
        }
        let mut out = Vec::with_capacity(rows * width);
        for i in 0..rows {
            for &p in parts {
                let c = self.shape(p)[1];
                out.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(vec![rows, width], out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| shape_2d(self.shape(p)).1)
            .ok_or_else(|| Error::invalid("concat_rows", "no inputs"))?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = shape_2d(self.shape(p));
            if c != cols {
                return Err(Error::shape("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(vec![rows, cols], out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Embedding lookup: rows `ids` of `table: [V, d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(Error::shape("gather", s, &[]));
        }
        let (vocab, d) = (s[0], s[1]);
        if let Some(&id) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::TokenOutOfRange { id, vocab });
        }
        if ids.is_empty() {
            return Err(Error::invalid("gather", "empty id list"));
        }
        let v = self.value(table);
        let out = ids
            .iter()
            .flat_map(|&id| v[id * d..(id + 1) * d].iter().copied())
            .collect();
        let ng = self.needs(table);
        Ok(self.push(vec![ids.len(), d], out, Op::Gather(table, ids.to_vec()), ng))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_masked(x, axis, None)
    }

    /// Softmax along `axis` where entries with `mask[i] == false` are excluded
    /// and produce exactly zero. A fully masked slice yields all zeros.
    pub fn softmax_masked(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let dims: &[usize] = if shape.is_empty() { &[1] } else { &shape };
        if axis >= dims.len() {
            return Err(Error::invalid(
                "softmax",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let outer: usize = dims[..axis].iter().product();
        let n = dims[axis];
        let inner: usize = dims[axis + 1..].iter().product();
        let v = self.value(x);
        if let Some(m) = mask {
            if m.len() != v.len() {
                return Err(Error::shape("softmax", &shape, &[m.len()]));
            }
        }
        let keep = |i: usize| mask.is_none_or(|m| m[i]);
        let mut out = vec![0.0; v.len()];
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * n + i) * inner + j;
                let max = (0..n)
                    .filter(|&i| keep(idx(i)))
                    .map(|i| v[idx(i)])
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut z = 0.0;
                for i in 0..n {
                    if keep(idx(i)) {
                        let e = (v[idx(i)] - max).exp();
                        out[idx(i)] = e;
                        z += e;
                    }
                }
                for i in 0..n {
                    out[idx(i)] /= z;
                }
            }
        }
        let ng = self.needs(x);
        Ok(self.push(shape, out, Op::Softmax { x, outer, n, inner }, ng))
    }

    /// Normalizes each row over the last axis, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::invalid("layer_norm", "eps must be positive"));
        }
        let (rows, cols) = shape_2d(self.shape(x));
        if self.shape(gamma) != [cols] || self.shape(beta) != [cols] {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let v = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &v[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Mean of the rows of `x: [T, d]` where `mask` is true, as `[1, d]`.
    pub fn masked_mean_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (rows, cols) = shape_2d(self.shape(x));
        if mask.len() != rows {
            return Err(Error::shape("masked_mean_rows", self.shape(x), &[mask.len()]));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::invalid("masked_mean_rows", "no unmasked rows"));
        }
        let v = self.value(x);
        let mut out = vec![0.0; cols];
        for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            for c in 0..cols {
                out[c] += v[r * cols + c];
            }
        }
        out.iter_mut().for_each(|o| *o /= count as f64);
        let ng = self.needs(x);
        Ok(self.push(vec![1, cols], out, Op::MaskedMeanRows(x, mask.to_vec()), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.needs(x);
        self.push(Vec::new(), vec![s], Op::Sum(x), ng)
    }

    /// Mean squared elementwise difference.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shape("mse_loss", self.shape(pred), self.shape(target)));
        }
        let p = self.value(pred);
        let t = self.value(target);
        let loss = p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64;
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(Vec::new(), vec![loss], Op::Mse(pred, target), ng))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits: [T, V]`, skipping positions whose target is `pad`. An all-pad
    /// target sequence gives 0.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], pad: usize) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() {
            return Err(Error::shape("cross_entropy", s, &[targets.len()]));
        }
        let (rows, vocab) = (s[0], s[1]);
        if let Some(&id) = targets.iter().find(|&&t| t != pad && t >= vocab) {
            return Err(Error::TokenOutOfRange { id, vocab });
        }
        let v = self.value(logits);
        let mut probs = vec![0.0; rows * vocab];
        let mut nll = 0.0;
        let mut count = 0;
        for r in 0..rows {
            if targets[r] == pad {
                continue;
            }
            let row = &v[r * vocab..(r + 1) * vocab];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|a| (a - max).exp()).sum();
            let log_z = max + z.ln();
            for c in 0..vocab {
                probs[r * vocab + c] = (row[c] - log_z).exp();
            }
            nll += log_z - row[targets[r]];
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { nll / count as f64 };
        let ng = self.needs(logits);
        Ok(self.push(
            Vec::new(),
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                pad,
                probs,
                count,
            },
            ng,
        ))
    }

    /// Copies the value of `x` with no gradient path back to it.
    pub fn detach(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let value = self.value(x).to_vec();
        self.push(shape, value, Op::Detach, false)
    }

    /// Computes gradients of the scalar `loss` with respect to every node on
    /// a differentiable path to it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.nodes[loss.0].shape),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].needs_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let needs = |v: &Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf | Op::Param | Op::Detach => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if needs(a) {
                    let ga = matmul_a_bt(g, self.value(*b), m, n, k);
                    add_into(&mut grads[a.0], &ga);
                }
                if needs(b) {
                    let gb = matmul_at_b(self.value(*a), g, m, k, n);
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[0];
                if needs(a) {
                    let ga = matmul(g, self.value(*b), m, n, k);
                    add_into(&mut grads[a.0], &ga);
                }
                if needs(b) {
                    let gb = matmul_at_b(g, self.value(*a), m, n, k);
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::Add(a, b) => {
                if needs(a) {
                    add_into(&mut grads[a.0], g);
                }
                if needs(b) {
                    add_into(&mut grads[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    add_into(&mut grads[a.0], g);
                }
                if needs(b) {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    add_into(&mut grads[b.0], &neg);
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    let ga: Vec<f64> = g.iter().zip(self.value(*b)).map(|(g, y)| g * y).collect();
                    add_into(&mut grads[a.0], &ga);
                }
                if needs(b) {
                    let gb: Vec<f64> = g.iter().zip(self.value(*a)).map(|(g, x)| g * x).collect();
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::AddBias(x, bias) => {
                if needs(x) {
                    add_into(&mut grads[x.0], g);
                }
                if needs(bias) {
                    let cols = self.shape(*bias)[0];
                    let mut gb = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    add_into(&mut grads[bias.0], &gb);
                }
            }
            Op::Scale(x, c) => {
                if needs(x) {
                    let gx: Vec<f64> = g.iter().map(|v| v * c).collect();
                    add_into(&mut grads[x.0], &gx);
                }
            }
            Op::MulConst(x, c) => {
                if needs(x) {
                    let gx: Vec<f64> = g.iter().zip(c).map(|(g, c)| g * c).collect();
                    add_into(&mut grads[x.0], &gx);
                }
            }
            Op::AddConst(x) => {
                if needs(x) {
                    add_into(&mut grads[x.0], g);
                }
            }
            Op::Relu(x) => {
                if needs(x) {
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(self.value(*x))
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    add_into(&mut grads[x.0], &gx);
                }
            }
            Op::Transpose(x) => {
                if needs(x) {
                    let (m, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let mut gx = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            gx[i * n + j] = g[j * m + i];
                        }
                    }
                    add_into(&mut grads[x.0], &gx);
                }
            }
            Op::SliceCols(x, start) => {
                if needs(x) {
                    let (m, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let len = node.shape[1];
                    let gx = grads[x.0].get_or_insert_with(|| vec![0.0; m * n]);
                    for r in 0..m {
                        for c in 0..len {
                            gx[r * n + start + c] += g[r * len + c];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let width = node.shape[1];
                let rows = node.shape[0];
                let mut offset = 0;
                for p in parts {
                    let c = self.shape(*p)[1];
                    if needs(p) {
                        let gp = grads[p.0].get_or_insert_with(|| vec![0.0; rows * c]);
                        for r in 0..rows {
                            for j in 0..c {
                                gp[r * c + j] += g[r * width + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if needs(p) {
                        add_into(&mut grads[p.0], &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::Gather(table, ids) => {
                if needs(table) {
                    let (vocab, d) = (self.shape(*table)[0], self.shape(*table)[1]);
                    let gt = grads[table.0].get_or_insert_with(|| vec![0.0; vocab * d]);
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            gt[id * d + c] += g[r * d + c];
                        }
                    }
                }
            }
            Op::Softmax { x, outer, n, inner } => {
                if needs(x) {
                    let y = &node.value;
                    let mut gx = vec![0.0; y.len()];
                    for o in 0..*outer {
                        for j in 0..*inner {
                            let idx = |i: usize| (o * n + i) * inner + j;
                            let dot: f64 = (0..*n).map(|i| g[idx(i)] * y[idx(i)]).sum();
                            for i in 0..*n {
                                gx[idx(i)] = y[idx(i)] * (g[idx(i)] - dot);
                            }
                        }
                    }
                    add_into(&mut grads[x.0], &gx);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let cols = self.shape(*gamma)[0];
                let rows = xhat.len() / cols;
                if needs(gamma) {
                    let mut gg = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            gg[c] += g[r * cols + c] * xhat[r * cols + c];
                        }
                    }
                    add_into(&mut grads[gamma.0], &gg);
                }
                if needs(beta) {
                    let mut gb = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            gb[c] += g[r * cols + c];
                        }
                    }
                    add_into(&mut grads[beta.0], &gb);
                }
                if needs(x) {
                    let gam = self.value(*gamma);
                    let nf = cols as f64;
                    let mut gx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for c in 0..cols {
                            let d = g[r * cols + c] * gam[c];
                            sum_d += d;
                            sum_dx += d * xhat[r * cols + c];
                        }
                        for c in 0..cols {
                            let d = g[r * cols + c] * gam[c];
                            gx[r * cols + c] = inv_std[r] / nf * (nf * d - sum_d - xhat[r * cols + c] * sum_dx);
                        }
                    }
                    add_into(&mut grads[x.0], &gx);
                }
            }
            Op::MaskedMeanRows(x, mask) => {
                if needs(x) {
                    let cols = node.shape[1];
                    let count = mask.iter().filter(|&&m| m).count() as f64;
                    let mut gx = vec![0.0; mask.len() * cols];
                    for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                        for c in 0..cols {
                            gx[r * cols + c] = g[c] / count;
                        }
                    }
                    add_into(&mut grads[x.0], &gx);
                }
            }
            Op::Sum(x) => {
                if needs(x) {
                    let gx = vec![g[0]; self.value(*x).len()];
                    add_into(&mut grads[x.0], &gx);
                }
            }
            Op::Mse(p, t) => {
                let n = self.value(*p).len() as f64;
                let diff: Vec<f64> = self
                    .value(*p)
                    .iter()
                    .zip(self.value(*t))
                    .map(|(a, b)| 2.0 * (a - b) / n * g[0])
                    .collect();
                if needs(p) {
                    add_into(&mut grads[p.0], &diff);
                }
                if needs(t) {
                    let neg: Vec<f64> = diff.iter().map(|x| -x).collect();
                    add_into(&mut grads[t.0], &neg);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                pad,
                probs,
                count,
            } => {
                if needs(logits) && *count > 0 {
                    let vocab = self.shape(*logits)[1];
                    let scale = g[0] / *count as f64;
                    let mut gl = vec![0.0; probs.len()];
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *pad {
                            continue;
                        }
                        for c in 0..vocab {
                            gl[r * vocab + c] = probs[r * vocab + c] * scale;
                        }
                        gl[r * vocab + t] -= scale;
                    }
                    add_into(&mut grads[logits.0], &gl);
                }
            }
        }
    }

    /// Collects the gradients of every bound parameter.
    pub fn param_grads(&self, grads: &Gradients) -> ParamGrads {
        let mut entries = Vec::new();
        for (idx, v) in self.bound.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = grads.wrt(*v) {
                    entries.push((ParamId::from_index(idx), g.to_vec()));
                }
            }
        }
        ParamGrads { entries }
    }
}
