//! Tape-based reverse-mode autodiff.
//!
//! Nodes are appended in creation order, so parents always precede children
//! and the reverse of the tape is a valid topological order.

use super::kernels;
use super::{Array, DiffError};

/// Handle to a node in one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    StopGradient,
    MatMul { a: Var, b: Var },
    MatMulNt { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddRow { x: Var, bias: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Sum { x: Var },
    Mean { x: Var },
    Embedding { table: Var, ids: Vec<usize> },
    SliceRows { x: Var, start: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, rstd: Vec<f64> },
    Gelu { x: Var },
    Tanh { x: Var },
    CausalAttention { qkv: Var, heads: usize, probs: Vec<f64> },
    Softmax { x: Var, temperature: f64 },
    LogSoftmax { x: Var, temperature: f64 },
    Pick { x: Var, idx: Vec<usize> },
    KlRows { p: Var, q: Var },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::StopGradient => vec![],
            Op::MatMul { a, b } | Op::MatMulNt { a, b } | Op::Add { a, b } | Op::Mul { a, b } => {
                vec![*a, *b]
            }
            Op::AddRow { x, bias } => vec![*x, *bias],
            Op::Scale { x, .. }
            | Op::Sum { x }
            | Op::Mean { x }
            | Op::SliceRows { x, .. }
            | Op::Gelu { x }
            | Op::Tanh { x }
            | Op::Softmax { x, .. }
            | Op::LogSoftmax { x, .. }
            | Op::Pick { x, .. } => vec![*x],
            Op::Embedding { table, .. } => vec![*table],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::CausalAttention { qkv, .. } => vec![*qkv],
            Op::KlRows { p, q } => vec![*p, *q],
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::StopGradient => "stop_gradient",
            Op::MatMul { .. } => "matmul",
            Op::MatMulNt { .. } => "matmul_nt",
            Op::Add { .. } => "add",
            Op::AddRow { .. } => "add_row",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Embedding { .. } => "embedding",
            Op::SliceRows { .. } => "slice_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu { .. } => "gelu",
            Op::Tanh { .. } => "tanh",
            Op::CausalAttention { .. } => "causal_attention",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::Pick { .. } => "pick",
            Op::KlRows { .. } => "kl_rows",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Array,
    grad: Option<Array>,
    op: Op,
    requires_grad: bool,
}

/// A computation graph for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_2d(a: &Array, what: &str) -> Result<(usize, usize), DiffError> {
    match a.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(DiffError::Rank {
            op: what.to_string(),
            expected: 2,
            shape: s.to_vec(),
        }),
    }
}

fn check_temperature(t: f64) -> Result<(), DiffError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(DiffError::Temperature(t))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array, op: Op) -> Var {
        let requires_grad = op
            .parents()
            .iter()
            .any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<(), DiffError> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(DiffError::UnknownNode(v.0))
        }
    }

    /// Adds an input. `trainable` leaves receive gradients.
    pub fn leaf(&mut self, value: Array, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            requires_grad: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array) -> Var {
        self.leaf(value, false)
    }

    /// Identity in the forward pass; blocks all gradient flow to `x`.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var, DiffError> {
        self.check(x)?;
        let value = self.nodes[x.0].value.clone();
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::StopGradient,
            requires_grad: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by the last [`Graph::backward`], if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<&Array> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Like [`Graph::grad`] but reports zeros for unreached nodes.
    pub fn grad_or_zeros(&self, v: Var) -> Array {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Array::zeros(self.value(v).shape()))
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Array> {
        self.nodes[v.0].grad.take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = check_2d(av, "matmul")?;
        let (k2, n) = check_2d(bv, "matmul")?;
        if k != k2 {
            return Err(DiffError::DimensionMismatch {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(av.data(), bv.data(), &mut out, m, k, n);
        let value = Array::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b }))
    }

    /// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = check_2d(av, "matmul_nt")?;
        let (n, k2) = check_2d(bv, "matmul_nt")?;
        if k != k2 {
            return Err(DiffError::DimensionMismatch {
                op: "matmul_nt",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_nt_acc(av.data(), bv.data(), &mut out, m, k, n);
        let value = Array::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMulNt { a, b }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), DiffError> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(DiffError::DimensionMismatch {
                op,
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("add", a, b)?;
        let mut value = self.nodes[a.0].value.clone();
        value.add_assign(&self.nodes[b.0].value);
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("mul", a, b)?;
        let mut value = self.nodes[a.0].value.clone();
        for (x, y) in value.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *x *= y;
        }
        Ok(self.push(value, Op::Mul { a, b }))
    }

    /// Adds a length-`cols` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, DiffError> {
        self.check(x)?;
        self.check(bias)?;
        let (xv, bv) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        if bv.shape() != [xv.cols()] {
            return Err(DiffError::DimensionMismatch {
                op: "add_row",
                left: xv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut value = xv.clone();
        let c = value.cols();
        for row in value.data_mut().chunks_mut(c) {
            for (v, b) in row.iter_mut().zip(bv.data()) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddRow { x, bias }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, DiffError> {
        self.check(x)?;
        let mut value = self.nodes[x.0].value.clone();
        value.data_mut().iter_mut().for_each(|v| *v *= factor);
        Ok(self.push(value, Op::Scale { x, factor }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, DiffError> {
        self.check(x)?;
        let s = self.nodes[x.0].value.data().iter().sum();
        Ok(self.push(Array::scalar(s), Op::Sum { x }))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, DiffError> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        let s = xv.data().iter().sum::<f64>() / xv.len() as f64;
        Ok(self.push(Array::scalar(s), Op::Mean { x }))
    }

    /// Gathers rows `ids` of a 2-D `table`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, DiffError> {
        self.check(table)?;
        let tv = &self.nodes[table.0].value;
        let (rows, cols) = check_2d(tv, "embedding")?;
        if ids.is_empty() {
            return Err(DiffError::Empty("embedding"));
        }
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(DiffError::IndexOutOfRange { index: id, len: rows });
            }
            out.extend_from_slice(tv.row(id));
        }
        let value = Array::new(vec![ids.len(), cols], out)?;
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Rows `start..end` of a 2-D array.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, DiffError> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        let (rows, cols) = check_2d(xv, "slice_rows")?;
        if start >= end || end > rows {
            return Err(DiffError::IndexOutOfRange {
                index: end,
                len: rows,
            });
        }
        let value = Array::new(
            vec![end - start, cols],
            xv.data()[start * cols..end * cols].to_vec(),
        )?;
        Ok(self.push(value, Op::SliceRows { x, start }))
    }

    /// Per-row layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, DiffError> {
        self.check(x)?;
        self.check(gain)?;
        self.check(bias)?;
        let xv = &self.nodes[x.0].value;
        let (gv, bv) = (&self.nodes[gain.0].value, &self.nodes[bias.0].value);
        let c = xv.cols();
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(DiffError::DimensionMismatch {
                op: "layer_norm",
                left: xv.shape().to_vec(),
                right: gv.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; xv.len()];
        let mut rstd = Vec::with_capacity(xv.rows());
        for (xr, or) in xv.data().chunks(c).zip(out.chunks_mut(c)) {
            rstd.push(kernels::layer_norm_row(xr, gv.data(), bv.data(), or));
        }
        let value = Array::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                rstd,
            },
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var, DiffError> {
        self.check(x)?;
        let mut value = self.nodes[x.0].value.clone();
        value.data_mut().iter_mut().for_each(|v| *v = kernels::gelu(*v));
        Ok(self.push(value, Op::Gelu { x }))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, DiffError> {
        self.check(x)?;
        let mut value = self.nodes[x.0].value.clone();
        value.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        Ok(self.push(value, Op::Tanh { x }))
    }

    /// Multi-head causal self-attention over packed `[T × 3d]` query/key/value
    /// columns. Position `i` attends to positions `0..=i` only.
    pub fn causal_attention(&mut self, qkv: Var, heads: usize) -> Result<Var, DiffError> {
        self.check(qkv)?;
        let xv = &self.nodes[qkv.0].value;
        let (t, c3) = check_2d(xv, "causal_attention")?;
        if heads == 0 || c3 % (3 * heads) != 0 {
            return Err(DiffError::DimensionMismatch {
                op: "causal_attention",
                left: xv.shape().to_vec(),
                right: vec![heads],
            });
        }
        let d = c3 / 3;
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let data = xv.data();
        let mut probs = vec![0.0; heads * t * t];
        let mut out = vec![0.0; t * d];
        let mut scores = vec![0.0; t];
        for h in 0..heads {
            let qo = h * hd;
            let ko = d + h * hd;
            let vo = 2 * d + h * hd;
            for i in 0..t {
                let q = &data[i * c3 + qo..i * c3 + qo + hd];
                let mut max = f64::NEG_INFINITY;
                for (j, s) in scores.iter_mut().enumerate().take(i + 1) {
                    *s = kernels::dot(q, &data[j * c3 + ko..j * c3 + ko + hd]) * scale;
                    max = max.max(*s);
                }
                let mut sum = 0.0;
                for s in scores.iter_mut().take(i + 1) {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                let prow = &mut probs[(h * t + i) * t..(h * t + i) * t + t];
                let orow = &mut out[i * d + qo..i * d + qo + hd];
                for j in 0..=i {
                    let p = scores[j] / sum;
                    prow[j] = p;
                    kernels::axpy(p, &data[j * c3 + vo..j * c3 + vo + hd], orow);
                }
            }
        }
        let value = Array::new(vec![t, d], out)?;
        Ok(self.push(value, Op::CausalAttention { qkv, heads, probs }))
    }

    /// Softmax of `x / temperature` along the last axis.
    pub fn softmax(&mut self, x: Var, temperature: f64) -> Result<Var, DiffError> {
        self.check(x)?;
        check_temperature(temperature)?;
        let xv = &self.nodes[x.0].value;
        let c = xv.cols();
        let mut out = vec![0.0; xv.len()];
        for (xr, or) in xv.data().chunks(c).zip(out.chunks_mut(c)) {
            kernels::softmax_row(xr, temperature, or);
        }
        let value = Array::new(xv.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Softmax { x, temperature }))
    }

    /// Log-softmax of `x / temperature`, computed as `x/T - max - log Σ exp`.
    pub fn log_softmax(&mut self, x: Var, temperature: f64) -> Result<Var, DiffError> {
        self.check(x)?;
        check_temperature(temperature)?;
        let xv = &self.nodes[x.0].value;
        let c = xv.cols();
        let mut out = vec![0.0; xv.len()];
        for (xr, or) in xv.data().chunks(c).zip(out.chunks_mut(c)) {
            kernels::log_softmax_row(xr, temperature, or);
        }
        let value = Array::new(xv.shape().to_vec(), out)?;
        Ok(self.push(value, Op::LogSoftmax { x, temperature }))
    }

    /// Selects `x[r, idx[r]]` for every row, giving a `[rows]` vector.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var, DiffError> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        let (rows, cols) = check_2d(xv, "pick")?;
        if idx.len() != rows {
            return Err(DiffError::DimensionMismatch {
                op: "pick",
                left: xv.shape().to_vec(),
                right: vec![idx.len()],
            });
        }
        let mut out = Vec::with_capacity(rows);
        for (r, &i) in idx.iter().enumerate() {
            if i >= cols {
                return Err(DiffError::IndexOutOfRange { index: i, len: cols });
            }
            out.push(xv.data()[r * cols + i]);
        }
        Ok(self.push(
            Array::vector(out),
            Op::Pick {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Row-wise `KL(P ∥ Q) = Σ_v exp(p_v)(p_v − q_v)` over two arrays of
    /// log-distributions, giving a `[rows]` vector.
    ///
    /// Both inputs must be normalized log-probabilities (outputs of
    /// `log_softmax`). The backward pass returns the gradient projected onto
    /// the tangent space of the simplex, which is exact after composing with
    /// `log_softmax` and is identically zero where the rows coincide.
    pub fn kl_rows(&mut self, p: Var, q: Var) -> Result<Var, DiffError> {
        self.same_shape("kl_rows", p, q)?;
        let (pv, qv) = (&self.nodes[p.0].value, &self.nodes[q.0].value);
        let c = pv.cols();
        let out: Vec<f64> = pv
            .data()
            .chunks(c)
            .zip(qv.data().chunks(c))
            .map(|(pr, qr)| row_kl(pr, qr))
            .collect();
        Ok(self.push(Array::vector(out), Op::KlRows { p, q }))
    }

    /// Reverse-mode accumulation from a scalar `root`.
    pub fn backward(&mut self, root: Var) -> Result<(), DiffError> {
        self.check(root)?;
        if !self.nodes[root.0].value.is_scalar() {
            return Err(DiffError::NonScalarRoot(
                self.nodes[root.0].value.shape().to_vec(),
            ));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(Array::scalar(1.0));
        for id in (0..=root.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Some(bad) = self.nodes[id].op.parents().into_iter().find(|p| p.0 >= id) {
                return Err(DiffError::Cycle {
                    node: id,
                    parent: bad.0,
                });
            }
            let Some(grad) = self.nodes[id].grad.take() else {
                continue;
            };
            self.propagate(id, &grad);
            self.nodes[id].grad = Some(grad);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Array) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.add_assign(&delta),
            None => node.grad = Some(delta),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&mut self, id: usize, g: &Array) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            &Op::MatMul { a, b } => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                let da = self.wants(a).then(|| {
                    let mut out = vec![0.0; m * k];
                    kernels::matmul_nt_acc(g.data(), bv.data(), &mut out, m, n, k);
                    Array::new(vec![m, k], out).unwrap()
                });
                let db = self.wants(b).then(|| {
                    let mut out = vec![0.0; k * n];
                    kernels::matmul_tn_acc(av.data(), g.data(), &mut out, m, k, n);
                    Array::new(vec![k, n], out).unwrap()
                });
                if let Some(d) = da {
                    self.accumulate(a, d);
                }
                if let Some(d) = db {
                    self.accumulate(b, d);
                }
            }
            &Op::MatMulNt { a, b } => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[0];
                let da = self.wants(a).then(|| {
                    let mut out = vec![0.0; m * k];
                    kernels::matmul_acc(g.data(), bv.data(), &mut out, m, n, k);
                    Array::new(vec![m, k], out).unwrap()
                });
                let db = self.wants(b).then(|| {
                    let mut out = vec![0.0; n * k];
                    kernels::matmul_tn_acc(g.data(), av.data(), &mut out, m, n, k);
                    Array::new(vec![n, k], out).unwrap()
                });
                if let Some(d) = da {
                    self.accumulate(a, d);
                }
                if let Some(d) = db {
                    self.accumulate(b, d);
                }
            }
            &Op::Add { a, b } => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            &Op::Mul { a, b } => {
                let mut da = g.clone();
                for (d, v) in da.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
                    *d *= v;
                }
                let mut db = g.clone();
                for (d, v) in db.data_mut().iter_mut().zip(self.nodes[a.0].value.data()) {
                    *d *= v;
                }
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            &Op::AddRow { x, bias } => {
                let c = g.cols();
                let mut db = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                self.accumulate(x, g.clone());
                self.accumulate(bias, Array::vector(db));
            }
            &Op::Scale { x, factor } => {
                let mut d = g.clone();
                d.data_mut().iter_mut().for_each(|v| *v *= factor);
                self.accumulate(x, d);
            }
            &Op::Sum { x } => {
                let d = Array::filled(self.nodes[x.0].value.shape(), g.item());
                self.accumulate(x, d);
            }
            &Op::Mean { x } => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                let n = self.nodes[x.0].value.len() as f64;
                self.accumulate(x, Array::filled(&shape, g.item() / n));
            }
            Op::Embedding { table, ids } => {
                let table = *table;
                let shape = self.nodes[table.0].value.shape().to_vec();
                let cols = shape[1];
                let mut d = Array::zeros(&shape);
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut d.data_mut()[id * cols..(id + 1) * cols];
                    for (a, b) in dst.iter_mut().zip(g.row(r)) {
                        *a += b;
                    }
                }
                self.accumulate(table, d);
            }
            &Op::SliceRows { x, start } => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                let cols = shape[1];
                let mut d = Array::zeros(&shape);
                d.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                self.accumulate(x, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                rstd,
            } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let xv = &self.nodes[x.0].value;
                let gv = self.nodes[gain.0].value.data();
                let c = xv.cols();
                let mut dx = vec![0.0; xv.len()];
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                let mut xhat = vec![0.0; c];
                let mut dxhat = vec![0.0; c];
                for (r, (xr, gr)) in xv.data().chunks(c).zip(g.data().chunks(c)).enumerate() {
                    let mean = xr.iter().sum::<f64>() / c as f64;
                    let rs = rstd[r];
                    for i in 0..c {
                        xhat[i] = (xr[i] - mean) * rs;
                        dg[i] += gr[i] * xhat[i];
                        db[i] += gr[i];
                        dxhat[i] = gr[i] * gv[i];
                    }
                    let mean_dxhat = dxhat.iter().sum::<f64>() / c as f64;
                    let mean_dxhat_xhat =
                        dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    let out = &mut dx[r * c..(r + 1) * c];
                    for i in 0..c {
                        out[i] = rs * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
                    }
                }
                let shape = xv.shape().to_vec();
                self.accumulate(x, Array::new(shape, dx).unwrap());
                self.accumulate(gain, Array::vector(dg));
                self.accumulate(bias, Array::vector(db));
            }
            &Op::Gelu { x } => {
                let mut d = g.clone();
                for (dv, &xv) in d.data_mut().iter_mut().zip(self.nodes[x.0].value.data()) {
                    *dv *= kernels::gelu_grad(xv);
                }
                self.accumulate(x, d);
            }
            &Op::Tanh { x } => {
                let mut d = g.clone();
                for (dv, &y) in d.data_mut().iter_mut().zip(node.value.data()) {
                    *dv *= 1.0 - y * y;
                }
                self.accumulate(x, d);
            }
            Op::CausalAttention { qkv, heads, probs } => {
                let qkv = *qkv;
                let d = self.attention_backward(qkv, *heads, probs, g);
                self.accumulate(qkv, d);
            }
            &Op::Softmax { x, temperature } => {
                let y = &node.value;
                let c = y.cols();
                let mut d = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.data().chunks(c).zip(g.data().chunks(c)).zip(d.chunks_mut(c)) {
                    let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for i in 0..c {
                        dr[i] = yr[i] * (gr[i] - s) / temperature;
                    }
                }
                let d = Array::new(y.shape().to_vec(), d).unwrap();
                self.accumulate(x, d);
            }
            &Op::LogSoftmax { x, temperature } => {
                let y = &node.value;
                let c = y.cols();
                let mut d = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.data().chunks(c).zip(g.data().chunks(c)).zip(d.chunks_mut(c)) {
                    let s: f64 = gr.iter().sum();
                    for i in 0..c {
                        dr[i] = (gr[i] - yr[i].exp() * s) / temperature;
                    }
                }
                let d = Array::new(y.shape().to_vec(), d).unwrap();
                self.accumulate(x, d);
            }
            Op::Pick { x, idx } => {
                let x = *x;
                let shape = self.nodes[x.0].value.shape().to_vec();
                let cols = shape[1];
                let mut d = Array::zeros(&shape);
                for (r, &i) in idx.iter().enumerate() {
                    d.data_mut()[r * cols + i] = g.data()[r];
                }
                self.accumulate(x, d);
            }
            &Op::KlRows { p, q } => {
                let kl = node.value.data();
                let (pv, qv) = (&self.nodes[p.0].value, &self.nodes[q.0].value);
                let c = pv.cols();
                let shape = pv.shape().to_vec();
                let dp = self.wants(p).then(|| {
                    let mut d = vec![0.0; pv.len()];
                    for r in 0..pv.rows() {
                        let (pr, qr) = (pv.row(r), qv.row(r));
                        for i in 0..c {
                            d[r * c + i] = g.data()[r] * pr[i].exp() * ((pr[i] - qr[i]) - kl[r]);
                        }
                    }
                    Array::new(shape.clone(), d).unwrap()
                });
                let dq = self.wants(q).then(|| {
                    let mut d = vec![0.0; pv.len()];
                    for r in 0..pv.rows() {
                        let (pr, qr) = (pv.row(r), qv.row(r));
                        for i in 0..c {
                            d[r * c + i] = g.data()[r] * (qr[i].exp() - pr[i].exp());
                        }
                    }
                    Array::new(shape.clone(), d).unwrap()
                });
                if let Some(d) = dp {
                    self.accumulate(p, d);
                }
                if let Some(d) = dq {
                    self.accumulate(q, d);
                }
            }
        }
    }

    fn attention_backward(&self, qkv: Var, heads: usize, probs: &[f64], g: &Array) -> Array {
        let xv = &self.nodes[qkv.0].value;
        let (t, c3) = (xv.shape()[0], xv.shape()[1]);
        let d = c3 / 3;
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let data = xv.data();
        let gd = g.data();
        let mut dx = vec![0.0; t * c3];
        let mut dp = vec![0.0; t];
        for h in 0..heads {
            let qo = h * hd;
            let ko = d + h * hd;
            let vo = 2 * d + h * hd;
            for i in 0..t {
                let prow = &probs[(h * t + i) * t..(h * t + i) * t + t];
                let go = &gd[i * d + qo..i * d + qo + hd];
                let mut s = 0.0;
                for j in 0..=i {
                    dp[j] = kernels::dot(go, &data[j * c3 + vo..j * c3 + vo + hd]);
                    s += dp[j] * prow[j];
                }
                for j in 0..=i {
                    let p = prow[j];
                    // dV_j += p_ij * dO_i
                    kernels::axpy(p, go, &mut dx[j * c3 + vo..j * c3 + vo + hd]);
                    let ds = p * (dp[j] - s) * scale;
                    if ds != 0.0 {
                        // dQ_i += ds * K_j ; dK_j += ds * Q_i
                        let (kj, qi) = (j * c3 + ko, i * c3 + qo);
                        for e in 0..hd {
                            dx[qi + e] += ds * data[kj + e];
                            dx[kj + e] += ds * data[qi + e];
                        }
                    }
                }
            }
        }
        Array::new(vec![t, c3], dx).unwrap()
    }

    /// Short description of a node, for diagnostics.
    pub fn describe(&self, v: Var) -> String {
        let n = &self.nodes[v.0];
        format!("#{} {} {:?}", v.0, n.op.kind(), n.value.shape())
    }
}

/// `Σ exp(p)(p − q)` for one pair of log-distribution rows.
pub(crate) fn row_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let w = a.exp();
            if w == 0.0 {
                0.0
            } else {
                w * (a - b)
            }
        })
        .sum()
}
