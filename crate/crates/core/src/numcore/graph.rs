//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every forward operation as a node on a tape. Nodes are
//! appended in evaluation order, so the tape is already topologically sorted
//! and [`Graph::backward`] is a single reverse sweep that visits every node
//! exactly once. Parameters are borrowed from a [`ParamStore`] rather than
//! copied; each parameter gets one leaf node per graph, so a weight used at
//! many time steps accumulates its gradient in a single buffer.
//!
//! Arrays are at most two-dimensional. Vectors have shape `[n]`, matrices
//! `[rows, cols]`, scalars `[1]`.

use crate::error::{Error, Result};
use crate::numcore::tensor::{Gradients, ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate corruption of a backward rule, used to prove that the
/// gradient checker notices a broken derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BackwardFault {
    /// Multiplies the sigmoid derivative by the given factor.
    SigmoidGradScale(f64),
    /// Multiplies the tanh derivative by the given factor.
    TanhGradScale(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Identity,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    /// `sum_k W_k x_k + b` with `W_k: [r, c_k]`, `x_k: [c_k]`.
    Linear {
        terms: Vec<(Var, Var)>,
        bias: Option<Var>,
    },
    /// `X W^T` with `X: [n, c]`, `W: [r, c]`.
    MatMulT(Var, Var),
    Add(Var, Var),
    /// `M + v` broadcast over rows.
    AddRows(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Stack(Vec<Var>),
    Gather(Var, Vec<usize>),
    MeanOf(Vec<Var>),
    /// `sum_n w[n] M[n, :]`.
    WeightedSum(Var, Var),
    /// `M v + b` with optional scalar bias.
    RowDot(Var, Var, Option<Var>),
    SoftmaxMasked(Var, Vec<bool>),
    SumAll(Vec<Var>),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    BceWithLogits(Var, f64),
    LstmPointwise(Var, Var),
    Dropout(Var, Vec<f64>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Linear { terms, bias } => terms
                .iter()
                .flat_map(|&(w, x)| [w, x])
                .chain(bias.iter().copied())
                .collect(),
            Op::MatMulT(a, b)
            | Op::Add(a, b)
            | Op::AddRows(a, b)
            | Op::Mul(a, b)
            | Op::WeightedSum(a, b)
            | Op::LstmPointwise(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Slice(a, _)
            | Op::Gather(a, _)
            | Op::SoftmaxMasked(a, _)
            | Op::BceWithLogits(a, _)
            | Op::Dropout(a, _) => vec![*a],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::RowDot(m, v, b) => {
                let mut out = vec![*m, *v];
                out.extend(b.iter().copied());
                out
            }
            Op::Concat(vs) | Op::Stack(vs) | Op::MeanOf(vs) | Op::SumAll(vs) => vs.clone(),
        }
    }
}

struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    needs_grad: bool,
}

/// A single forward computation and its tape.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    fault: Option<BackwardFault>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Logistic function, stable for large |x|.
pub fn sigmoid_value(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn shape_str(shape: &[usize]) -> String {
    format!("{shape:?}")
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            fault: None,
        }
    }

    /// Test fixture: corrupts one backward rule.
    pub fn inject_fault(&mut self, fault: BackwardFault) {
        self.fault = Some(fault);
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => &self.params.get(id).data,
            _ => &node.value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn numel(&self, v: Var) -> usize {
        numel(&self.nodes[v.0].shape)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor {
            shape: self.shape(v).to_vec(),
            data: self.value(v).to_vec(),
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == numel(&shape));
        debug_assert!(
            value.iter().all(|x| x.is_finite()),
            "non-finite output from {op:?}"
        );
        let needs_grad = match op {
            Op::Param(_) => true,
            Op::Leaf => false,
            ref other => other.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            shape,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.data, tensor.shape, Op::Leaf)
    }

    pub fn vector(&mut self, data: Vec<f64>) -> Var {
        let n = data.len();
        self.push(data, vec![n], Op::Leaf)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.push(vec![0.0; numel(shape)], shape.to_vec(), Op::Leaf)
    }

    pub fn ones(&mut self, shape: &[usize]) -> Var {
        self.push(vec![1.0; numel(shape)], shape.to_vec(), Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let shape = self.params.get(id).shape.clone();
        let v = self.push(Vec::new(), shape, Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))?;
        Ok(self.param(id))
    }

    fn expect_vector(&self, op: &'static str, what: &str, v: Var) -> Result<usize> {
        let s = self.shape(v);
        if s.len() != 1 {
            return Err(Error::dim(op, format!("{what} must be a vector, got {}", shape_str(s))));
        }
        Ok(s[0])
    }

    fn expect_matrix(&self, op: &'static str, what: &str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::dim(op, format!("{what} must be a matrix, got {}", shape_str(s))));
        }
        Ok((s[0], s[1]))
    }

    /// `sum_k W_k x_k + b`.
    pub fn linear(&mut self, terms: &[(Var, Var)], bias: Option<Var>) -> Result<Var> {
        let Some(&(w0, _)) = terms.first() else {
            return Err(Error::InvalidInput("linear needs at least one term".into()));
        };
        let (rows, _) = self.expect_matrix("linear", "weight", w0)?;
        let mut out = vec![0.0; rows];
        for (k, &(w, x)) in terms.iter().enumerate() {
            let (r, c) = self.expect_matrix("linear", "weight", w)?;
            let n = self.expect_vector("linear", "input", x)?;
            if r != rows || c != n {
                return Err(Error::dim(
                    "linear",
                    format!("term {k}: weight [{r}, {c}] cannot map input [{n}] to [{rows}]"),
                ));
            }
            let wd = self.value(w);
            let xd = self.value(x);
            for (o, row) in out.iter_mut().zip(wd.chunks_exact(c)) {
                *o += dot(row, xd);
            }
        }
        if let Some(b) = bias {
            let n = self.expect_vector("linear", "bias", b)?;
            if n != rows {
                return Err(Error::dim("linear", format!("bias [{n}] vs output [{rows}]")));
            }
            for (o, bi) in out.iter_mut().zip(self.value(b)) {
                *o += bi;
            }
        }
        Ok(self.push(
            out,
            vec![rows],
            Op::Linear {
                terms: terms.to_vec(),
                bias,
            },
        ))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        self.linear(&[(w, x)], None)
    }

    /// `X W^T`: projects every row of `X` through `W`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let (n, c) = self.expect_matrix("matmul_t", "left operand", x)?;
        let (r, c2) = self.expect_matrix("matmul_t", "weight", w)?;
        if c != c2 {
            return Err(Error::dim("matmul_t", format!("[{n}, {c}] x [{r}, {c2}]^T")));
        }
        let xd = self.value(x);
        let wd = self.value(w);
        let mut out = Vec::with_capacity(n * r);
        for xr in xd.chunks_exact(c) {
            for wr in wd.chunks_exact(c) {
                out.push(dot(xr, wr));
            }
        }
        Ok(self.push(out, vec![n, r], Op::MatMulT(x, w)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                "add",
                format!("{} + {}", shape_str(self.shape(a)), shape_str(self.shape(b))),
            ));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::Add(a, b)))
    }

    pub fn add_rows(&mut self, m: Var, v: Var) -> Result<Var> {
        let (n, c) = self.expect_matrix("add_rows", "matrix", m)?;
        let k = self.expect_vector("add_rows", "row vector", v)?;
        if k != c {
            return Err(Error::dim("add_rows", format!("[{n}, {c}] + [{k}]")));
        }
        let vd = self.value(v);
        let mut out = self.value(m).to_vec();
        for row in out.chunks_exact_mut(c) {
            for (x, y) in row.iter_mut().zip(vd) {
                *x += y;
            }
        }
        Ok(self.push(out, vec![n, c], Op::AddRows(m, v)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                "mul",
                format!("{} * {}", shape_str(self.shape(a)), shape_str(self.shape(b))),
            ));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| sigmoid_value(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Sigmoid(a))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        match act {
            Activation::Tanh => self.tanh(a),
            Activation::Sigmoid => self.sigmoid(a),
            Activation::Identity => a,
        }
    }

    /// Concatenates vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            self.expect_vector("concat", "part", p)?;
            out.extend_from_slice(self.value(p));
        }
        let n = out.len();
        Ok(self.push(out, vec![n], Op::Concat(parts.to_vec())))
    }

    /// Elements `[start, start + len)` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.expect_vector("slice", "input", a)?;
        if start + len > n {
            return Err(Error::dim("slice", format!("[{start}, {}) of [{n}]", start + len)));
        }
        let out = self.value(a)[start..start + len].to_vec();
        Ok(self.push(out, vec![len], Op::Slice(a, start)))
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::InvalidInput("stack of zero rows".into()));
        };
        let c = self.expect_vector("stack", "row", first)?;
        let mut out = Vec::with_capacity(rows.len() * c);
        for (i, &r) in rows.iter().enumerate() {
            let k = self.expect_vector("stack", "row", r)?;
            if k != c {
                return Err(Error::dim("stack", format!("row {i} has length {k}, expected {c}")));
            }
            out.extend_from_slice(self.value(r));
        }
        Ok(self.push(out, vec![rows.len(), c], Op::Stack(rows.to_vec())))
    }

    /// Selects rows of a matrix (or elements of a vector) by index.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let rows = shape[0];
        let width = numel(&shape[1..]);
        let src = self.value(a);
        let mut out = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            if i >= rows {
                return Err(Error::dim("gather", format!("index {i} out of {rows} rows")));
            }
            out.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let mut new_shape = shape;
        new_shape[0] = indices.len();
        Ok(self.push(out, new_shape, Op::Gather(a, indices.to_vec())))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let (_, c) = self.expect_matrix("row", "matrix", m)?;
        let g = self.gather(m, &[i])?;
        // reshape [1, c] -> [c]; gather keeps the tape entry
        self.nodes[g.0].shape = vec![c];
        Ok(g)
    }

    /// Elementwise mean of equal-shape arrays.
    pub fn mean_of(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidInput("mean of an empty sequence".into()));
        };
        let shape = self.shape(first).to_vec();
        let mut out = vec![0.0; numel(&shape)];
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(Error::dim("mean_of", "parts differ in shape"));
            }
            for (o, x) in out.iter_mut().zip(self.value(p)) {
                *o += x;
            }
        }
        let inv = 1.0 / parts.len() as f64;
        out.iter_mut().for_each(|x| *x *= inv);
        Ok(self.push(out, shape, Op::MeanOf(parts.to_vec())))
    }

    /// `sum_n w[n] M[n, :]`.
    pub fn weighted_sum(&mut self, w: Var, m: Var) -> Result<Var> {
        let n = self.expect_vector("weighted_sum", "weights", w)?;
        let (rows, c) = self.expect_matrix("weighted_sum", "matrix", m)?;
        if n != rows {
            return Err(Error::dim("weighted_sum", format!("weights [{n}] vs matrix [{rows}, {c}]")));
        }
        let mut out = vec![0.0; c];
        for (&wi, row) in self.value(w).iter().zip(self.value(m).chunks_exact(c)) {
            axpy(wi, row, &mut out);
        }
        Ok(self.push(out, vec![c], Op::WeightedSum(w, m)))
    }

    /// `M v (+ b)`: one score per row.
    pub fn row_dot(&mut self, m: Var, v: Var, bias: Option<Var>) -> Result<Var> {
        let (n, c) = self.expect_matrix("row_dot", "matrix", m)?;
        let k = self.expect_vector("row_dot", "vector", v)?;
        if k != c {
            return Err(Error::dim("row_dot", format!("[{n}, {c}] . [{k}]")));
        }
        let b = match bias {
            Some(b) => {
                if self.numel(b) != 1 {
                    return Err(Error::dim("row_dot", "bias must be a scalar"));
                }
                self.scalar(b)
            }
            None => 0.0,
        };
        let vd = self.value(v);
        let out = self.value(m).chunks_exact(c).map(|r| dot(r, vd) + b).collect();
        Ok(self.push(out, vec![n], Op::RowDot(m, v, bias)))
    }

    /// Softmax over the positions where `mask` is true; masked entries are exactly 0.
    pub fn softmax_masked(&mut self, scores: Var, mask: &[bool]) -> Result<Var> {
        let n = self.numel(scores);
        if mask.len() != n {
            return Err(Error::dim("softmax_masked", format!("mask [{}] vs scores [{n}]", mask.len())));
        }
        let s = self.value(scores);
        let max = s
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&x, _)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::InvalidInput("softmax over an all-masked input".into()));
        }
        let mut out: Vec<f64> = s
            .iter()
            .zip(mask)
            .map(|(&x, &m)| if m { (x - max).exp() } else { 0.0 })
            .collect();
        let z: f64 = out.iter().sum();
        out.iter_mut().for_each(|x| *x /= z);
        let shape = self.shape(scores).to_vec();
        Ok(self.push(out, shape, Op::SoftmaxMasked(scores, mask.to_vec())))
    }

    pub fn softmax(&mut self, scores: Var) -> Result<Var> {
        let mask = vec![true; self.numel(scores)];
        self.softmax_masked(scores, &mask)
    }

    /// Sum of every element of every part, as a scalar.
    pub fn sum_all(&mut self, parts: &[Var]) -> Var {
        let total = parts.iter().map(|&p| self.value(p).iter().sum::<f64>()).sum();
        self.push(vec![total], vec![1], Op::SumAll(parts.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.sum_all(&[a])
    }

    /// `-log softmax(logits)[target]`, computed with max-subtraction.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let n = self.expect_vector("cross_entropy", "logits", logits)?;
        if target >= n {
            return Err(Error::dim("cross_entropy", format!("target {target} >= classes {n}")));
        }
        let l = self.value(logits);
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = l.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = probs.iter().sum();
        let loss = z.ln() + max - l[target];
        probs.iter_mut().for_each(|p| *p /= z);
        Ok(self.push(
            vec![loss],
            vec![1],
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        ))
    }

    /// Binary cross-entropy of `sigmoid(logit)` against `label`, in log space.
    pub fn bce_with_logits(&mut self, logit: Var, label: f64) -> Result<Var> {
        if self.numel(logit) != 1 {
            return Err(Error::dim("bce_with_logits", "logit must be a scalar"));
        }
        let z = self.scalar(logit);
        let loss = z.max(0.0) - z * label + (-z.abs()).exp().ln_1p();
        Ok(self.push(vec![loss], vec![1], Op::BceWithLogits(logit, label)))
    }

    /// LSTM gate nonlinearities. `gates` holds pre-activations in the order
    /// input, forget, output, candidate. Returns `[h; c]`.
    pub fn lstm_pointwise(&mut self, gates: Var, c_prev: Var) -> Result<Var> {
        let d = self.expect_vector("lstm_pointwise", "c_prev", c_prev)?;
        let g4 = self.expect_vector("lstm_pointwise", "gates", gates)?;
        if g4 != 4 * d {
            return Err(Error::dim("lstm_pointwise", format!("gates [{g4}] vs state [{d}]")));
        }
        let z = self.value(gates);
        let cp = self.value(c_prev);
        let mut out = vec![0.0; 2 * d];
        for k in 0..d {
            let i = sigmoid_value(z[k]);
            let f = sigmoid_value(z[d + k]);
            let o = sigmoid_value(z[2 * d + k]);
            let g = z[3 * d + k].tanh();
            let c = f * cp[k] + i * g;
            out[d + k] = c;
            out[k] = o * c.tanh();
        }
        Ok(self.push(out, vec![2 * d], Op::LstmPointwise(gates, c_prev)))
    }

    /// Multiplies by a fixed mask (already scaled by the keep probability).
    pub fn dropout_with_mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.numel(a) {
            return Err(Error::dim("dropout", "mask length differs from input"));
        }
        let out = self.value(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::Dropout(a, mask)))
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// parameter in the store (zero where the loss does not depend on it).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.numel(loss) != 1 {
            return Err(Error::InvalidInput(format!(
                "backward needs a scalar loss, got shape {}",
                shape_str(self.shape(loss))
            )));
        }
        let mut out = Gradients::zeros_like(self.params);
        if !self.nodes[loss.0].needs_grad {
            return Ok(out);
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn buf<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.numel(v);
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backward_node(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => out.accumulate(*id, g),
            Op::Linear { terms, bias } => {
                for &(w, x) in terms {
                    let c = self.numel(x);
                    if let Some(dw) = self.buf(grads, w) {
                        let xd = self.value(x);
                        for (row, &gi) in dw.chunks_exact_mut(c).zip(g) {
                            if gi != 0.0 {
                                axpy(gi, xd, row);
                            }
                        }
                    }
                    if let Some(dx) = self.buf(grads, x) {
                        let wd = self.value(w);
                        for (row, &gi) in wd.chunks_exact(c).zip(g) {
                            if gi != 0.0 {
                                axpy(gi, row, dx);
                            }
                        }
                    }
                }
                if let Some(b) = bias {
                    if let Some(db) = self.buf(grads, *b) {
                        axpy(1.0, g, db);
                    }
                }
            }
            Op::MatMulT(x, w) => {
                let (n, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let r = self.shape(*w)[0];
                if let Some(dx) = self.buf(grads, *x) {
                    let wd = self.value(*w);
                    for ni in 0..n {
                        let gr = &g[ni * r..(ni + 1) * r];
                        let dxr = &mut dx[ni * c..(ni + 1) * c];
                        for (ri, &gv) in gr.iter().enumerate() {
                            if gv != 0.0 {
                                axpy(gv, &wd[ri * c..(ri + 1) * c], dxr);
                            }
                        }
                    }
                }
                if let Some(dw) = self.buf(grads, *w) {
                    let xd = self.value(*x);
                    for ni in 0..n {
                        let gr = &g[ni * r..(ni + 1) * r];
                        let xr = &xd[ni * c..(ni + 1) * c];
                        for (ri, &gv) in gr.iter().enumerate() {
                            if gv != 0.0 {
                                axpy(gv, xr, &mut dw[ri * c..(ri + 1) * c]);
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.buf(grads, *a) {
                    axpy(1.0, g, da);
                }
                if let Some(db) = self.buf(grads, *b) {
                    axpy(1.0, g, db);
                }
            }
            Op::AddRows(m, v) => {
                let c = self.numel(*v);
                if let Some(dm) = self.buf(grads, *m) {
                    axpy(1.0, g, dm);
                }
                if let Some(dv) = self.buf(grads, *v) {
                    for row in g.chunks_exact(c) {
                        axpy(1.0, row, dv);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(da) = self.buf(grads, *a) {
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(self.value(*b)) {
                        *d += gi * bi;
                    }
                }
                if let Some(db) = self.buf(grads, *b) {
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(self.value(*a)) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(da) = self.buf(grads, *a) {
                    axpy(*s, g, da);
                }
            }
            Op::Tanh(a) => {
                let k = match self.fault {
                    Some(BackwardFault::TanhGradScale(k)) => k,
                    _ => 1.0,
                };
                if let Some(da) = self.buf(grads, *a) {
                    for ((d, gi), yi) in da.iter_mut().zip(g).zip(y) {
                        *d += k * gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let k = match self.fault {
                    Some(BackwardFault::SigmoidGradScale(k)) => k,
                    _ => 1.0,
                };
                if let Some(da) = self.buf(grads, *a) {
                    for ((d, gi), yi) in da.iter_mut().zip(g).zip(y) {
                        *d += k * gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.numel(p);
                    if let Some(dp) = self.buf(grads, p) {
                        axpy(1.0, &g[off..off + n], dp);
                    }
                    off += n;
                }
            }
            Op::Slice(a, start) => {
                if let Some(da) = self.buf(grads, *a) {
                    axpy(1.0, g, &mut da[*start..*start + g.len()]);
                }
            }
            Op::Stack(rows) => {
                let c = g.len() / rows.len();
                for (k, &r) in rows.iter().enumerate() {
                    if let Some(dr) = self.buf(grads, r) {
                        axpy(1.0, &g[k * c..(k + 1) * c], dr);
                    }
                }
            }
            Op::Gather(a, idx) => {
                let width = if idx.is_empty() { 0 } else { g.len() / idx.len() };
                if let Some(da) = self.buf(grads, *a) {
                    for (k, &i) in idx.iter().enumerate() {
                        axpy(1.0, &g[k * width..(k + 1) * width], &mut da[i * width..(i + 1) * width]);
                    }
                }
            }
            Op::MeanOf(parts) => {
                let inv = 1.0 / parts.len() as f64;
                for &p in parts {
                    if let Some(dp) = self.buf(grads, p) {
                        axpy(inv, g, dp);
                    }
                }
            }
            Op::WeightedSum(w, m) => {
                let c = g.len();
                if let Some(dw) = self.buf(grads, *w) {
                    for (d, row) in dw.iter_mut().zip(self.value(*m).chunks_exact(c)) {
                        *d += dot(row, g);
                    }
                }
                if let Some(dm) = self.buf(grads, *m) {
                    for (row, &wi) in dm.chunks_exact_mut(c).zip(self.value(*w)) {
                        axpy(wi, g, row);
                    }
                }
            }
            Op::RowDot(m, v, b) => {
                let c = self.numel(*v);
                if let Some(dm) = self.buf(grads, *m) {
                    let vd = self.value(*v);
                    for (row, &gi) in dm.chunks_exact_mut(c).zip(g) {
                        axpy(gi, vd, row);
                    }
                }
                if let Some(dv) = self.buf(grads, *v) {
                    for (row, &gi) in self.value(*m).chunks_exact(c).zip(g) {
                        axpy(gi, row, dv);
                    }
                }
                if let Some(b) = b {
                    if let Some(db) = self.buf(grads, *b) {
                        db[0] += g.iter().sum::<f64>();
                    }
                }
            }
            Op::SoftmaxMasked(a, mask) => {
                if let Some(da) = self.buf(grads, *a) {
                    let inner: f64 = y.iter().zip(g).map(|(yi, gi)| yi * gi).sum();
                    for (((d, yi), gi), &m) in da.iter_mut().zip(y).zip(g).zip(mask) {
                        if m {
                            *d += yi * (gi - inner);
                        }
                    }
                }
            }
            Op::SumAll(parts) => {
                for &p in parts {
                    if let Some(dp) = self.buf(grads, p) {
                        dp.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                if let Some(dl) = self.buf(grads, *logits) {
                    axpy(g[0], probs, dl);
                    dl[*target] -= g[0];
                }
            }
            Op::BceWithLogits(z, label) => {
                let p = sigmoid_value(self.scalar(*z));
                if let Some(dz) = self.buf(grads, *z) {
                    dz[0] += g[0] * (p - label);
                }
            }
            Op::LstmPointwise(gates, c_prev) => {
                let d = self.numel(*c_prev);
                let z = self.value(*gates).to_vec();
                let cp = self.value(*c_prev).to_vec();
                let mut dgates = vec![0.0; 4 * d];
                let mut dcp = vec![0.0; d];
                for k in 0..d {
                    let i = sigmoid_value(z[k]);
                    let f = sigmoid_value(z[d + k]);
                    let o = sigmoid_value(z[2 * d + k]);
                    let gg = z[3 * d + k].tanh();
                    let c = y[d + k];
                    let tc = c.tanh();
                    let dh = g[k];
                    let dc = g[d + k] + dh * o * (1.0 - tc * tc);
                    dgates[k] = dc * gg * i * (1.0 - i);
                    dgates[d + k] = dc * cp[k] * f * (1.0 - f);
                    dgates[2 * d + k] = dh * tc * o * (1.0 - o);
                    dgates[3 * d + k] = dc * i * (1.0 - gg * gg);
                    dcp[k] = dc * f;
                }
                if let Some(dg) = self.buf(grads, *gates) {
                    axpy(1.0, &dgates, dg);
                }
                if let Some(dc) = self.buf(grads, *c_prev) {
                    axpy(1.0, &dcp, dc);
                }
            }
            Op::Dropout(a, mask) => {
                if let Some(da) = self.buf(grads, *a) {
                    for ((d, gi), m) in da.iter_mut().zip(g).zip(mask) {
                        *d += gi * m;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add(name, t).unwrap();
        (s, id)
    }

    #[test]
    fn sum_of_matvec_gives_outer_product_gradient() {
        let w = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (store, id) = store_with("w", w);
        let mut g = Graph::new(&store);
        let wv = g.param(id);
        let x = g.vector(vec![0.5, -1.0, 2.0]);
        let y = g.matvec(wv, x).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.by_name("w").unwrap().data, vec![0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn parameter_used_twice_accumulates_both_paths() {
        let (store, id) = store_with("a", Tensor::vector(vec![3.0]));
        let mut g = Graph::new(&store);
        let a = g.param(id);
        // loss = a * a + 2a  => d/da = 2a + 2 = 8
        let sq = g.mul(a, a).unwrap();
        let twice = g.scale(a, 2.0);
        let s = g.add(sq, twice).unwrap();
        let loss = g.sum(s);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(id).data, vec![8.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let v = g.vector(vec![1.0, 2.0]);
        assert!(matches!(g.backward(v), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn linear_reports_offending_operand() {
        let (store, id) = store_with("w", Tensor::zeros(&[2, 3]));
        let mut g = Graph::new(&store);
        let w = g.param(id);
        let x = g.vector(vec![1.0; 4]);
        let err = g.matvec(w, x).unwrap_err().to_string();
        assert!(err.contains("weight [2, 3]") && err.contains("input [4]"), "{err}");
    }

    #[test]
    fn softmax_masked_saturates_and_zeroes_masked() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let s = g.vector(vec![60.0, 0.0, 5.0]);
        let p = g.softmax_masked(s, &[true, true, false]).unwrap();
        let v = g.value(p);
        assert!((v[0] - 1.0).abs() < 1e-20);
        assert!(v[1] < 1e-20);
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn softmax_all_masked_is_an_error() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let s = g.vector(vec![1.0, 2.0]);
        assert!(g.softmax_masked(s, &[false, false]).is_err());
    }

    #[test]
    fn masked_softmax_positions_get_zero_gradient() {
        let (store, id) = store_with("s", Tensor::vector(vec![0.3, -0.2, 1.1, 0.4]));
        let mut g = Graph::new(&store);
        let s = g.param(id);
        let p = g.softmax_masked(s, &[true, false, true, false]).unwrap();
        let w = g.vector(vec![1.0, 2.0, 3.0, 4.0]);
        let y = g.mul(p, w).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        let d = &grads.get(id).data;
        assert_eq!(d[1], 0.0);
        assert_eq!(d[3], 0.0);
        assert!(d[0] != 0.0 && d[2] != 0.0);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_log_classes() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let l = g.vector(vec![0.7; 8]);
        let ce = g.cross_entropy(l, 3).unwrap();
        assert!((g.scalar(ce) - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_half_probability() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let z = g.vector(vec![0.0]);
        let a = g.bce_with_logits(z, 0.0).unwrap();
        let b = g.bce_with_logits(z, 1.0).unwrap();
        assert!((g.scalar(a) + g.scalar(b) - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn backward_is_bit_identical_across_runs() {
        let w = Tensor::new(vec![2, 2], vec![0.1, -0.3, 0.7, 0.2]).unwrap();
        let (store, id) = store_with("w", w);
        let run = || {
            let mut g = Graph::new(&store);
            let w = g.param(id);
            let x = g.vector(vec![0.4, -0.9]);
            let h = g.matvec(w, x).unwrap();
            let t = g.tanh(h);
            let h2 = g.matvec(w, t).unwrap();
            let s = g.sigmoid(h2);
            let loss = g.sum(s);
            g.backward(loss).unwrap()
        };
        let a = run();
        let b = run();
        for ((_, x), (_, y)) in a.iter().zip(b.iter()) {
            let xb: Vec<u64> = x.data.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }
}
