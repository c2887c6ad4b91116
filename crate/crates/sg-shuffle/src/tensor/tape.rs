use std::collections::BTreeMap;

use super::{ParamSet, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { a: usize, b: usize },
    AddBias { x: usize, bias: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, factor: f64 },
    MatMul { a: usize, b: usize },
    /// `a @ b^T` without materializing the transpose.
    MatMulNt { a: usize, b: usize },
    Relu { x: usize },
    Log { x: usize },
    Softmax { x: usize, axis: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, eps: f64 },
    Concat { parts: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize, len: usize },
    GatherRows { x: usize, indices: Vec<usize> },
    Sum { x: usize },
    Mean { x: usize },
    WeightedCe { logits: usize, targets: Vec<usize>, weights: Vec<f64>, weight_sum: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Single-use compute graph. Operations append nodes; inputs always refer
/// to earlier nodes, so reverse insertion order is a reverse topological
/// order and `backward` visits each node exactly once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Tape handles for a bound [`ParamSet`], keyed by parameter name.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Assemble from already-created leaves (useful when probing a subset
    /// of parameters).
    pub fn from_vars(vars: BTreeMap<String, Var>) -> Self {
        Self { vars }
    }

    /// Panics on unknown names: parameter names are compile-time constants
    /// in the model builder, so a miss is a bug, not an input error.
    pub fn var(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("unknown parameter {name:?}"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

// Plain row-major kernels. `out` is accumulated into, callers zero it.
fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[i,j] += dot(a[i,:], b[j,:])` for `a: m×k`, `b: n×k`.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            out[i * n + j] += acc;
        }
    }
}

/// `out[p,j] += sum_i a[i,p] * b[i,j]` for `a: m×k`, `b: m×n`.
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf (a parameter or probed input).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Bind every tensor of a [`ParamSet`] as a differentiable leaf.
    pub fn bind(&mut self, params: &ParamSet) -> BoundParams {
        let mut vars = BTreeMap::new();
        for (name, tensor) in params.iter() {
            vars.insert(name.to_string(), self.leaf(tensor.clone()));
        }
        BoundParams { vars }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Collect gradients for every bound parameter; zeros when no path
    /// from the loss reached it.
    pub fn gradients(&self, bound: &BoundParams) -> BTreeMap<String, Vec<f64>> {
        bound
            .iter()
            .map(|(name, var)| {
                let g = match self.grad(var) {
                    Some(g) => g.to_vec(),
                    None => vec![0.0; self.value(var).numel()],
                };
                (name.to_string(), g)
            })
            .collect()
    }

    // ---- forward ops -----------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        check_finite("add", &data)?;
        let value = Tensor::from_vec(ta.shape().to_vec(), data)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, Op::Add { a: a.0, b: b.0 }, needs))
    }

    /// Row-broadcast bias add: `x: n×d`, `bias: d`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        let (n, d) = tx.dims2();
        if tb.shape() != [d] {
            return Err(TensorError::ShapeMismatch(format!(
                "add_bias: x {:?} vs bias {:?}",
                tx.shape(),
                tb.shape()
            )));
        }
        let mut data = Vec::with_capacity(n * d);
        for row in tx.data().chunks_exact(d) {
            for (v, b) in row.iter().zip(tb.data()) {
                data.push(v + b);
            }
        }
        check_finite("add_bias", &data)?;
        let value = Tensor::from_vec(vec![n, d], data)?;
        let needs = self.needs(x.0) || self.needs(bias.0);
        Ok(self.push(value, Op::AddBias { x: x.0, bias: bias.0 }, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "mul: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        check_finite("mul", &data)?;
        let value = Tensor::from_vec(ta.shape().to_vec(), data)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, Op::Mul { a: a.0, b: b.0 }, needs))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        let data: Vec<f64> = tx.data().iter().map(|v| v * factor).collect();
        check_finite("scale", &data)?;
        let value = Tensor::from_vec(tx.shape().to_vec(), data)?;
        let needs = self.needs(x.0);
        Ok(self.push(value, Op::Scale { x: x.0, factor }, needs))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = ta.dims2();
        let (kb, n) = tb.dims2();
        if k != kb {
            return Err(TensorError::ShapeMismatch(format!(
                "matmul: {m}x{k} @ {kb}x{n}"
            )));
        }
        let mut data = vec![0.0; m * n];
        matmul_nn(ta.data(), tb.data(), m, k, n, &mut data);
        check_finite("matmul", &data)?;
        let value = Tensor::from_vec(vec![m, n], data)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, Op::MatMul { a: a.0, b: b.0 }, needs))
    }

    /// `a @ b^T` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = ta.dims2();
        let (n, kb) = tb.dims2();
        if k != kb {
            return Err(TensorError::ShapeMismatch(format!(
                "matmul_nt: {m}x{k} @ ({n}x{kb})^T"
            )));
        }
        let mut data = vec![0.0; m * n];
        matmul_nt(ta.data(), tb.data(), m, k, n, &mut data);
        check_finite("matmul_nt", &data)?;
        let value = Tensor::from_vec(vec![m, n], data)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, Op::MatMulNt { a: a.0, b: b.0 }, needs))
    }

    /// `x @ w + bias` convenience for learned projections.
    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, bias)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        let data: Vec<f64> = tx.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::from_vec(tx.shape().to_vec(), data)?;
        let needs = self.needs(x.0);
        Ok(self.push(value, Op::Relu { x: x.0 }, needs))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        let data: Vec<f64> = tx.data().iter().map(|&v| v.ln()).collect();
        check_finite("log", &data)?;
        let value = Tensor::from_vec(tx.shape().to_vec(), data)?;
        let needs = self.needs(x.0);
        Ok(self.push(value, Op::Log { x: x.0 }, needs))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        let shape = tx.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::IndexOutOfRange {
                index: axis,
                size: shape.len(),
            });
        }
        let data = softmax_raw(tx.data(), &shape, axis);
        check_finite("softmax", &data)?;
        let value = Tensor::from_vec(shape, data)?;
        let needs = self.needs(x.0);
        Ok(self.push(value, Op::Softmax { x: x.0, axis }, needs))
    }

    /// Per-row normalization of `x: n×d` followed by the affine `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let tx = &self.nodes[x.0].value;
        let (n, d) = tx.dims2();
        let tg = &self.nodes[gain.0].value;
        let tb = &self.nodes[bias.0].value;
        if tg.shape() != [d] || tb.shape() != [d] {
            return Err(TensorError::ShapeMismatch(format!(
                "layer_norm: x {:?}, gain {:?}, bias {:?}",
                tx.shape(),
                tg.shape(),
                tb.shape()
            )));
        }
        let mut data = vec![0.0; n * d];
        for (row, out) in tx.data().chunks_exact(d).zip(data.chunks_exact_mut(d)) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for i in 0..d {
                out[i] = (row[i] - mean) * inv_std * tg.data()[i] + tb.data()[i];
            }
        }
        check_finite("layer_norm", &data)?;
        let value = Tensor::from_vec(vec![n, d], data)?;
        let needs = self.needs(x.0) || self.needs(gain.0) || self.needs(bias.0);
        Ok(self.push(
            value,
            Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0, eps },
            needs,
        ))
    }

    /// Concatenate rank-2 tensors along `axis` (0 or 1).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::ShapeMismatch("concat of zero parts".into()));
        }
        if axis > 1 {
            return Err(TensorError::IndexOutOfRange { index: axis, size: 2 });
        }
        let first = self.nodes[parts[0].0].value.dims2();
        let mut off_axis = if axis == 0 { first.1 } else { first.0 };
        let mut total = 0usize;
        for p in parts {
            let (r, c) = self.nodes[p.0].value.dims2();
            let (along, off) = if axis == 0 { (r, c) } else { (c, r) };
            if off != off_axis {
                return Err(TensorError::ShapeMismatch(format!(
                    "concat: off-axis size {off} != {off_axis}"
                )));
            }
            off_axis = off;
            total += along;
        }
        let value = if axis == 0 {
            let cols = off_axis;
            let mut data = Vec::with_capacity(total * cols);
            for p in parts {
                data.extend_from_slice(self.nodes[p.0].value.data());
            }
            Tensor::from_vec(vec![total, cols], data)?
        } else {
            let rows = off_axis;
            let mut data = Vec::with_capacity(rows * total);
            for i in 0..rows {
                for p in parts {
                    let t = &self.nodes[p.0].value;
                    let c = t.shape()[1];
                    data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
                }
            }
            Tensor::from_vec(vec![rows, total], data)?
        };
        let needs = parts.iter().any(|p| self.needs(p.0));
        let op = Op::Concat {
            parts: parts.iter().map(|p| p.0).collect(),
            axis,
        };
        Ok(self.push(value, op, needs))
    }

    /// Split a rank-2 tensor into `k` equal parts along `axis`.
    /// Inverse of [`Tape::concat`] on equal-sized parts.
    pub fn partition(&mut self, x: Var, k: usize, axis: usize) -> Result<Vec<Var>> {
        let (rows, cols) = self.nodes[x.0].value.dims2();
        let along = if axis == 0 { rows } else { cols };
        if k == 0 || along % k != 0 {
            return Err(TensorError::NotDivisible { axis: along, parts: k });
        }
        let step = along / k;
        (0..k)
            .map(|i| self.slice(x, axis, i * step, step))
            .collect()
    }

    /// Contiguous slice along `axis` of a rank-2 tensor.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.nodes[x.0].value.dims2();
        let along = if axis == 0 { rows } else { cols };
        if start + len > along {
            return Err(TensorError::IndexOutOfRange {
                index: start + len,
                size: along,
            });
        }
        let t = &self.nodes[x.0].value;
        let value = if axis == 0 {
            let data = t.data()[start * cols..(start + len) * cols].to_vec();
            Tensor::from_vec(vec![len, cols], data)?
        } else {
            let mut data = Vec::with_capacity(rows * len);
            for i in 0..rows {
                data.extend_from_slice(&t.data()[i * cols + start..i * cols + start + len]);
            }
            Tensor::from_vec(vec![rows, len], data)?
        };
        let needs = self.needs(x.0);
        Ok(self.push(value, Op::Slice { x: x.0, axis, start, len }, needs))
    }

    /// Row gather (embedding lookup): `x: m×d`, output `indices.len()×d`.
    /// Gradients scatter-add back, so repeated indices accumulate.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let (m, d) = self.nodes[x.0].value.dims2();
        for &i in indices {
            if i >= m {
                return Err(TensorError::IndexOutOfRange { index: i, size: m });
            }
        }
        let t = &self.nodes[x.0].value;
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        let value = Tensor::from_vec(vec![indices.len(), d], data)?;
        let needs = self.needs(x.0);
        Ok(self.push(
            value,
            Op::GatherRows { x: x.0, indices: indices.to_vec() },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: f64 = self.nodes[x.0].value.data().iter().sum();
        check_finite("sum", &[total])?;
        let needs = self.needs(x.0);
        Ok(self.push(Tensor::scalar(total), Op::Sum { x: x.0 }, needs))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let total: f64 = t.data().iter().sum::<f64>() / t.numel() as f64;
        check_finite("mean", &[total])?;
        let needs = self.needs(x.0);
        Ok(self.push(Tensor::scalar(total), Op::Mean { x: x.0 }, needs))
    }

    /// Class-weighted cross entropy with weighted-mean reduction:
    /// `sum_n w[t_n] * nll_n / sum_n w[t_n]`. Uniform weights reduce to the
    /// plain mean through the same code path.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        class_weights: &[f64],
    ) -> Result<Var> {
        let (n, c) = self.nodes[logits.0].value.dims2();
        if targets.len() != n {
            return Err(TensorError::ShapeMismatch(format!(
                "weighted_ce: {n} logit rows vs {} targets",
                targets.len()
            )));
        }
        if class_weights.len() != c {
            return Err(TensorError::ShapeMismatch(format!(
                "weighted_ce: {c} classes vs {} weights",
                class_weights.len()
            )));
        }
        if n == 0 {
            return Err(TensorError::ShapeMismatch("weighted_ce: empty batch".into()));
        }
        for &t in targets {
            if t >= c {
                return Err(TensorError::IndexOutOfRange { index: t, size: c });
            }
        }
        if !class_weights.iter().all(|&w| w.is_finite() && w > 0.0) {
            return Err(TensorError::NonFinite { op: "weighted_ce weights" });
        }
        let data = self.nodes[logits.0].value.data();
        let mut weighted_nll = 0.0;
        let mut weight_sum = 0.0;
        for (row, &t) in data.chunks_exact(c).zip(targets) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            let w = class_weights[t];
            weighted_nll += w * (lse - row[t]);
            weight_sum += w;
        }
        let loss = weighted_nll / weight_sum;
        check_finite("weighted_ce", &[loss])?;
        let needs = self.needs(logits.0);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::WeightedCe {
                logits: logits.0,
                targets: targets.to_vec(),
                weights: class_weights.to_vec(),
                weight_sum,
            },
            needs,
        ))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse-mode sweep from a scalar output. Gradients accumulate (sum)
    /// at fan-out nodes.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::ShapeMismatch(
                "backward requires a scalar output".into(),
            ));
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if self.nodes[id].grad.is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let grad = self.nodes[id].grad.as_ref().unwrap().clone();
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add { a, b } => {
                    self.accumulate(a, &grad);
                    self.accumulate(b, &grad);
                }
                Op::AddBias { x, bias } => {
                    self.accumulate(x, &grad);
                    if self.needs(bias) {
                        let d = self.nodes[bias].value.numel();
                        let mut db = vec![0.0; d];
                        for row in grad.chunks_exact(d) {
                            for (acc, g) in db.iter_mut().zip(row) {
                                *acc += g;
                            }
                        }
                        self.accumulate(bias, &db);
                    }
                }
                Op::Mul { a, b } => {
                    if self.needs(a) {
                        let da: Vec<f64> = grad
                            .iter()
                            .zip(self.nodes[b].value.data())
                            .map(|(g, v)| g * v)
                            .collect();
                        self.accumulate(a, &da);
                    }
                    if self.needs(b) {
                        let db: Vec<f64> = grad
                            .iter()
                            .zip(self.nodes[a].value.data())
                            .map(|(g, v)| g * v)
                            .collect();
                        self.accumulate(b, &db);
                    }
                }
                Op::Scale { x, factor } => {
                    let dx: Vec<f64> = grad.iter().map(|g| g * factor).collect();
                    self.accumulate(x, &dx);
                }
                Op::MatMul { a, b } => {
                    let (m, k) = self.nodes[a].value.dims2();
                    let n = self.nodes[b].value.dims2().1;
                    if self.needs(a) {
                        let mut da = vec![0.0; m * k];
                        matmul_nt(&grad, self.nodes[b].value.data(), m, n, k, &mut da);
                        self.accumulate(a, &da);
                    }
                    if self.needs(b) {
                        let mut db = vec![0.0; k * n];
                        matmul_tn(self.nodes[a].value.data(), &grad, m, k, n, &mut db);
                        self.accumulate(b, &db);
                    }
                }
                Op::MatMulNt { a, b } => {
                    // c = a @ b^T: da = g @ b, db = g^T @ a
                    let (m, k) = self.nodes[a].value.dims2();
                    let n = self.nodes[b].value.dims2().0;
                    if self.needs(a) {
                        let mut da = vec![0.0; m * k];
                        matmul_nn(&grad, self.nodes[b].value.data(), m, n, k, &mut da);
                        self.accumulate(a, &da);
                    }
                    if self.needs(b) {
                        let mut db = vec![0.0; n * k];
                        matmul_tn(&grad, self.nodes[a].value.data(), m, n, k, &mut db);
                        self.accumulate(b, &db);
                    }
                }
                Op::Relu { x } => {
                    let dx: Vec<f64> = grad
                        .iter()
                        .zip(self.nodes[x].value.data())
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::Log { x } => {
                    let dx: Vec<f64> = grad
                        .iter()
                        .zip(self.nodes[x].value.data())
                        .map(|(g, v)| g / v)
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::Softmax { x, axis } => {
                    let out = self.nodes[id].value.data().to_vec();
                    let shape = self.nodes[id].value.shape().to_vec();
                    let dx = softmax_backward(&out, &grad, &shape, axis);
                    self.accumulate(x, &dx);
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let (dx, dgain, dbias) = layer_norm_backward(
                        self.nodes[x].value.data(),
                        self.nodes[gain].value.data(),
                        &grad,
                        self.nodes[x].value.dims2(),
                        eps,
                    );
                    self.accumulate(x, &dx);
                    self.accumulate(gain, &dgain);
                    self.accumulate(bias, &dbias);
                }
                Op::Concat { parts, axis } => {
                    let cols = self.nodes[id].value.shape()[1];
                    let mut offset = 0usize;
                    for p in parts {
                        let (pr, pc) = self.nodes[p].value.dims2();
                        if self.needs(p) {
                            let dp = if axis == 0 {
                                grad[offset * cols..(offset + pr) * cols].to_vec()
                            } else {
                                let mut dp = Vec::with_capacity(pr * pc);
                                for i in 0..pr {
                                    dp.extend_from_slice(
                                        &grad[i * cols + offset..i * cols + offset + pc],
                                    );
                                }
                                dp
                            };
                            self.accumulate(p, &dp);
                        }
                        offset += if axis == 0 { pr } else { pc };
                    }
                }
                Op::Slice { x, axis, start, len } => {
                    let (rows, cols) = self.nodes[x].value.dims2();
                    let mut dx = vec![0.0; rows * cols];
                    if axis == 0 {
                        dx[start * cols..(start + len) * cols].copy_from_slice(&grad);
                    } else {
                        for i in 0..rows {
                            dx[i * cols + start..i * cols + start + len]
                                .copy_from_slice(&grad[i * len..(i + 1) * len]);
                        }
                    }
                    self.accumulate(x, &dx);
                }
                Op::GatherRows { x, indices } => {
                    let (rows, d) = self.nodes[x].value.dims2();
                    let mut dx = vec![0.0; rows * d];
                    for (slot, &i) in indices.iter().enumerate() {
                        for j in 0..d {
                            dx[i * d + j] += grad[slot * d + j];
                        }
                    }
                    self.accumulate(x, &dx);
                }
                Op::Sum { x } => {
                    let dx = vec![grad[0]; self.nodes[x].value.numel()];
                    self.accumulate(x, &dx);
                }
                Op::Mean { x } => {
                    let n = self.nodes[x].value.numel();
                    let dx = vec![grad[0] / n as f64; n];
                    self.accumulate(x, &dx);
                }
                Op::WeightedCe { logits, targets, weights, weight_sum } => {
                    let (n, c) = self.nodes[logits].value.dims2();
                    let data = self.nodes[logits].value.data();
                    let mut dl = vec![0.0; n * c];
                    for (row_idx, (row, &t)) in data.chunks_exact(c).zip(&targets).enumerate() {
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                        let denom: f64 = exps.iter().sum();
                        let scale = grad[0] * weights[t] / weight_sum;
                        for j in 0..c {
                            let p = exps[j] / denom;
                            let y = if j == t { 1.0 } else { 0.0 };
                            dl[row_idx * c + j] = scale * (p - y);
                        }
                    }
                    self.accumulate(logits, &dl);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: usize, delta: &[f64]) {
        if !self.nodes[id].needs_grad {
            return;
        }
        let numel = self.nodes[id].value.numel();
        let grad = self.nodes[id].grad.get_or_insert_with(|| vec![0.0; numel]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }
}

fn softmax_raw(data: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let axis_size = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| o * axis_size * inner + a * inner + i;
            let max = (0..axis_size)
                .map(|a| data[at(a)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for a in 0..axis_size {
                let e = (data[at(a)] - max).exp();
                out[at(a)] = e;
                denom += e;
            }
            for a in 0..axis_size {
                out[at(a)] /= denom;
            }
        }
    }
    out
}

fn softmax_backward(out: &[f64], grad: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let axis_size = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut dx = vec![0.0; out.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| o * axis_size * inner + a * inner + i;
            let dot: f64 = (0..axis_size).map(|a| grad[at(a)] * out[at(a)]).sum();
            for a in 0..axis_size {
                dx[at(a)] = out[at(a)] * (grad[at(a)] - dot);
            }
        }
    }
    dx
}

fn layer_norm_backward(
    x: &[f64],
    gain: &[f64],
    grad: &[f64],
    dims: (usize, usize),
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, d) = dims;
    let mut dx = vec![0.0; n * d];
    let mut dgain = vec![0.0; d];
    let mut dbias = vec![0.0; d];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let g_row = &grad[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv_std = 1.0 / (var + eps).sqrt();
        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv_std).collect();
        let dxhat: Vec<f64> = g_row.iter().zip(gain).map(|(g, w)| g * w).collect();
        let dxhat_sum: f64 = dxhat.iter().sum();
        let dxhat_dot: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
        for j in 0..d {
            dgain[j] += g_row[j] * xhat[j];
            dbias[j] += g_row[j];
            dx[r * d + j] =
                inv_std / d as f64 * (d as f64 * dxhat[j] - dxhat_sum - xhat[j] * dxhat_dot);
        }
    }
    (dx, dgain, dbias)
}
