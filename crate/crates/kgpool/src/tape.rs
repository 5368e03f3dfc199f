//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! The tape is a Wengert list: every primitive op appends one node holding
//! the op kind, input indices, and the forward value. `backward` walks the
//! list in reverse — node order is topological by construction, so each
//! node is visited exactly once — and accumulates gradients into the nodes
//! that need them. A tape lives for one forward/backward cycle and is
//! confined to a single thread; parameters are copied in as leaves and
//! gradients are read back out afterwards.
//!
//! Node selection during pooling is discrete and happens outside the tape
//! (indices are plain data), so gradients flow through the gather and mask
//! multiplications only.

use crate::error::{Error, Result};
use crate::tensor::{matmul_raw, Tensor};

/// Handle to a value recorded on a [`Tape`]. Only valid for the tape that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    /// Row-wise softmax with max subtraction.
    RowSoftmax(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    /// Select rows by index; duplicates allowed, backward scatter-adds.
    GatherRows(usize, Vec<usize>),
    GatherCols(usize, Vec<usize>),
    /// `out[i][j] = x[i][j] * s[i]` with `s` a column vector.
    ScaleRows(usize, usize),
    MeanRows(usize),
    /// Column-wise max; per-column argmax row recorded at forward time.
    MaxRows(usize, Vec<usize>),
    SumAll(usize),
    ScaleConst(usize, f64),
    /// `ln(max(x, floor))`; gradient is zero below the floor.
    LogClamped(usize, f64),
    Transpose(usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) | Op::ScaleRows(a, b) => {
                vec![*a, *b]
            }
            Op::Relu(x)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::RowSoftmax(x)
            | Op::GatherRows(x, _)
            | Op::GatherCols(x, _)
            | Op::MeanRows(x)
            | Op::MaxRows(x, _)
            | Op::SumAll(x)
            | Op::ScaleConst(x, _)
            | Op::LogClamped(x, _)
            | Op::Transpose(x) => vec![*x],
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: participates in backward.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Frozen leaf: adjacency matrices, masks, inputs.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated for `v` by the last `backward`, if any.
    pub fn grad_of(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        let (rows, cols) = self.nodes[v.0].value.shape();
        self.nodes[v.0]
            .grad
            .as_ref()
            .map(|g| Tensor::new(rows, cols, g.clone()))
    }

    fn push(&mut self, value: Tensor, op: Op, leaf_grad: bool) -> Var {
        let needs_grad = leaf_grad || op.inputs().iter().any(|&i| self.nodes[i].needs_grad);
        #[cfg(debug_assertions)]
        {
            let inputs_finite = op.inputs().iter().all(|&i| self.nodes[i].value.is_finite());
            if inputs_finite {
                assert!(
                    value.is_finite(),
                    "non-finite output from {op:?} on finite inputs"
                );
            }
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn shapes(&self, a: Var, b: Var) -> ((usize, usize), (usize, usize)) {
        (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = self.shapes(a, b);
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: (m, k),
                rhs: (k2, n),
            });
        }
        let data = matmul_raw(
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            m,
            k,
            n,
        );
        Ok(self.push(Tensor::new(m, n, data), Op::MatMul(a.0, b.0), false))
    }

    fn binary_elementwise(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = self.shapes(a, b);
        if sa != sb {
            return Err(Error::Shape {
                op: op_name,
                lhs: sa,
                rhs: sb,
            });
        }
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(Tensor::new(sa.0, sa.1, data), op, false))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[x.0].value.map(f);
        self.push(value, op, false)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x.0))
    }

    /// Row-wise softmax, computed with max subtraction so large logits do
    /// not overflow. An empty row yields an empty row.
    pub fn row_softmax(&mut self, x: Var) -> Var {
        let src = &self.nodes[x.0].value;
        let (rows, cols) = src.shape();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            softmax_row(
                src.row_slice(r),
                &mut out.data_mut()[r * cols..(r + 1) * cols],
            );
        }
        self.push(out, Op::RowSoftmax(x.0), false)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        assert!(!parts.is_empty(), "concat_cols of zero parts");
        let rows = self.nodes[parts[0].0].value.rows();
        let mut cols = 0;
        for &p in parts {
            let s = self.nodes[p.0].value.shape();
            if s.0 != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: (rows, 0),
                    rhs: s,
                });
            }
            cols += s.1;
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = &self.nodes[p.0].value;
                let w = src.cols();
                out.data_mut()[r * cols + offset..r * cols + offset + w]
                    .copy_from_slice(src.row_slice(r));
                offset += w;
            }
        }
        Ok(self.push(
            out,
            Op::ConcatCols(parts.iter().map(|v| v.0).collect()),
            false,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        assert!(!parts.is_empty(), "concat_rows of zero parts");
        let cols = self.nodes[parts[0].0].value.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let src = &self.nodes[p.0].value;
            if src.cols() != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: (0, cols),
                    rhs: src.shape(),
                });
            }
            data.extend_from_slice(src.data());
            rows += src.rows();
        }
        Ok(self.push(
            Tensor::new(rows, cols, data),
            Op::ConcatRows(parts.iter().map(|v| v.0).collect()),
            false,
        ))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let src = &self.nodes[x.0].value;
        let cols = src.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &r in idx {
            assert!(
                r < src.rows(),
                "gather_rows index {r} out of {}",
                src.rows()
            );
            data.extend_from_slice(src.row_slice(r));
        }
        self.push(
            Tensor::new(idx.len(), cols, data),
            Op::GatherRows(x.0, idx.to_vec()),
            false,
        )
    }

    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Var {
        let src = &self.nodes[x.0].value;
        let (rows, cols) = src.shape();
        let mut out = Tensor::zeros(rows, idx.len());
        for r in 0..rows {
            for (j, &c) in idx.iter().enumerate() {
                assert!(c < cols, "gather_cols index {c} out of {cols}");
                out.set(r, j, src.get(r, c));
            }
        }
        self.push(out, Op::GatherCols(x.0, idx.to_vec()), false)
    }

    /// Multiply each row of `x` by the matching entry of column vector `s`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (sx, ss) = self.shapes(x, s);
        if ss != (sx.0, 1) {
            return Err(Error::Shape {
                op: "scale_rows",
                lhs: sx,
                rhs: ss,
            });
        }
        let xv = &self.nodes[x.0].value;
        let sv = &self.nodes[s.0].value;
        let mut out = Tensor::zeros(sx.0, sx.1);
        for r in 0..sx.0 {
            let w = sv.get(r, 0);
            for c in 0..sx.1 {
                out.set(r, c, xv.get(r, c) * w);
            }
        }
        Ok(self.push(out, Op::ScaleRows(x.0, s.0), false))
    }

    /// Column-wise mean over rows: `[n×d] -> [1×d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let (rows, cols) = src.shape();
        if rows == 0 {
            return Err(Error::Eval("mean_rows over an empty matrix".into()));
        }
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, &v) in out.iter_mut().zip(src.row_slice(r)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= rows as f64;
        }
        Ok(self.push(Tensor::new(1, cols, out), Op::MeanRows(x.0), false))
    }

    /// Column-wise max over rows: `[n×d] -> [1×d]`. Ties resolve to the
    /// first row, which also receives the gradient.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let (rows, cols) = src.shape();
        if rows == 0 {
            return Err(Error::Eval("max_rows over an empty matrix".into()));
        }
        let mut out = src.row_slice(0).to_vec();
        let mut argmax = vec![0usize; cols];
        for r in 1..rows {
            for (c, &v) in src.row_slice(r).iter().enumerate() {
                if v > out[c] {
                    out[c] = v;
                    argmax[c] = r;
                }
            }
        }
        Ok(self.push(Tensor::new(1, cols, out), Op::MaxRows(x.0, argmax), false))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let total: f64 = self.nodes[x.0].value.data().iter().sum();
        self.push(Tensor::scalar(total), Op::SumAll(x.0), false)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::ScaleConst(x.0, c))
    }

    /// `ln(max(x, floor))` elementwise.
    pub fn log_clamped(&mut self, x: Var, floor: f64) -> Var {
        self.unary(x, |v| v.max(floor).ln(), Op::LogClamped(x.0, floor))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.transpose();
        self.push(value, Op::Transpose(x.0), false)
    }

    /// Reverse pass from a `1×1` loss. Seeds d(loss)/d(loss) = 1, then
    /// visits the tape in reverse order once, accumulating into every node
    /// on a path to a trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.shape() != (1, 1) {
            return Err(Error::Eval(format!(
                "backward requires a 1x1 loss, got {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            self.backprop_node(i);
        }
        Ok(())
    }

    fn add_grad(&mut self, target: usize, contribution: &[f64]) {
        if !self.nodes[target].needs_grad {
            return;
        }
        let len = self.nodes[target].value.len();
        let grad = self.nodes[target]
            .grad
            .get_or_insert_with(|| vec![0.0; len]);
        for (g, &c) in grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    fn backprop_node(&mut self, i: usize) {
        let upstream = self.nodes[i].grad.clone().expect("checked by caller");
        // Ops that need scratch buffers compute contributions against the
        // recorded forward values, then scatter into the input grads.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = self.nodes[a].value.shape();
                let n = self.nodes[b].value.cols();
                if self.nodes[a].needs_grad {
                    // dA = dC · Bᵀ
                    let bv = self.nodes[b].value.data();
                    let mut da = vec![0.0; m * k];
                    for i_ in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += upstream[i_ * n + j] * bv[p * n + j];
                            }
                            da[i_ * k + p] = acc;
                        }
                    }
                    self.add_grad(a, &da);
                }
                if self.nodes[b].needs_grad {
                    // dB = Aᵀ · dC
                    let av = self.nodes[a].value.data();
                    let mut db = vec![0.0; k * n];
                    for i_ in 0..m {
                        for p in 0..k {
                            let a_ip = av[i_ * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += a_ip * upstream[i_ * n + j];
                            }
                        }
                    }
                    self.add_grad(b, &db);
                }
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.add_grad(a, &upstream);
                self.add_grad(b, &upstream);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.nodes[a].needs_grad {
                    let contrib: Vec<f64> = upstream
                        .iter()
                        .zip(self.nodes[b].value.data())
                        .map(|(&u, &bv)| u * bv)
                        .collect();
                    self.add_grad(a, &contrib);
                }
                if self.nodes[b].needs_grad {
                    let contrib: Vec<f64> = upstream
                        .iter()
                        .zip(self.nodes[a].value.data())
                        .map(|(&u, &av)| u * av)
                        .collect();
                    self.add_grad(b, &contrib);
                }
            }
            Op::Relu(x) => {
                let x = *x;
                let contrib: Vec<f64> = upstream
                    .iter()
                    .zip(self.nodes[x].value.data())
                    .map(|(&u, &xv)| if xv > 0.0 { u } else { 0.0 })
                    .collect();
                self.add_grad(x, &contrib);
            }
            Op::Tanh(x) => {
                let x = *x;
                let contrib: Vec<f64> = upstream
                    .iter()
                    .zip(self.nodes[i].value.data())
                    .map(|(&u, &y)| u * (1.0 - y * y))
                    .collect();
                self.add_grad(x, &contrib);
            }
            Op::Sigmoid(x) => {
                let x = *x;
                let contrib: Vec<f64> = upstream
                    .iter()
                    .zip(self.nodes[i].value.data())
                    .map(|(&u, &y)| u * y * (1.0 - y))
                    .collect();
                self.add_grad(x, &contrib);
            }
            Op::RowSoftmax(x) => {
                let x = *x;
                let y = &self.nodes[i].value;
                let (rows, cols) = y.shape();
                let mut contrib = vec![0.0; rows * cols];
                for r in 0..rows {
                    let yr = y.row_slice(r);
                    let ur = &upstream[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(ur).map(|(&p, &u)| p * u).sum();
                    for c in 0..cols {
                        contrib[r * cols + c] = yr[c] * (ur[c] - dot);
                    }
                }
                self.add_grad(x, &contrib);
            }
            Op::ConcatCols(parts) => {
                let parts = parts.clone();
                let rows = self.nodes[i].value.rows();
                let total = self.nodes[i].value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.nodes[p].value.cols();
                    if self.nodes[p].needs_grad {
                        let mut contrib = vec![0.0; rows * w];
                        for r in 0..rows {
                            contrib[r * w..(r + 1) * w].copy_from_slice(
                                &upstream[r * total + offset..r * total + offset + w],
                            );
                        }
                        self.add_grad(p, &contrib);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let parts = parts.clone();
                let cols = self.nodes[i].value.cols();
                let mut offset = 0;
                for p in parts {
                    let r = self.nodes[p].value.rows();
                    if self.nodes[p].needs_grad {
                        self.add_grad(p, &upstream[offset * cols..(offset + r) * cols]);
                    }
                    offset += r;
                }
            }
            Op::GatherRows(x, idx) => {
                let (x, idx) = (*x, idx.clone());
                let (rows, cols) = self.nodes[x].value.shape();
                let mut contrib = vec![0.0; rows * cols];
                for (out_r, &src_r) in idx.iter().enumerate() {
                    for c in 0..cols {
                        contrib[src_r * cols + c] += upstream[out_r * cols + c];
                    }
                }
                self.add_grad(x, &contrib);
            }
            Op::GatherCols(x, idx) => {
                let (x, idx) = (*x, idx.clone());
                let (rows, cols) = self.nodes[x].value.shape();
                let out_cols = idx.len();
                let mut contrib = vec![0.0; rows * cols];
                for r in 0..rows {
                    for (j, &src_c) in idx.iter().enumerate() {
                        contrib[r * cols + src_c] += upstream[r * out_cols + j];
                    }
                }
                self.add_grad(x, &contrib);
            }
            Op::ScaleRows(x, s) => {
                let (x, s) = (*x, *s);
                let (rows, cols) = self.nodes[x].value.shape();
                if self.nodes[x].needs_grad {
                    let sv = &self.nodes[s].value;
                    let mut contrib = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let w = sv.get(r, 0);
                        for c in 0..cols {
                            contrib[r * cols + c] = upstream[r * cols + c] * w;
                        }
                    }
                    self.add_grad(x, &contrib);
                }
                if self.nodes[s].needs_grad {
                    let xv = &self.nodes[x].value;
                    let mut contrib = vec![0.0; rows];
                    for r in 0..rows {
                        let mut acc = 0.0;
                        for c in 0..cols {
                            acc += upstream[r * cols + c] * xv.get(r, c);
                        }
                        contrib[r] = acc;
                    }
                    self.add_grad(s, &contrib);
                }
            }
            Op::MeanRows(x) => {
                let x = *x;
                let (rows, cols) = self.nodes[x].value.shape();
                let inv = 1.0 / rows as f64;
                let mut contrib = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        contrib[r * cols + c] = upstream[c] * inv;
                    }
                }
                self.add_grad(x, &contrib);
            }
            Op::MaxRows(x, argmax) => {
                let (x, argmax) = (*x, argmax.clone());
                let (rows, cols) = self.nodes[x].value.shape();
                let mut contrib = vec![0.0; rows * cols];
                for (c, &r) in argmax.iter().enumerate() {
                    contrib[r * cols + c] = upstream[c];
                }
                self.add_grad(x, &contrib);
            }
            Op::SumAll(x) => {
                let x = *x;
                let contrib = vec![upstream[0]; self.nodes[x].value.len()];
                self.add_grad(x, &contrib);
            }
            Op::ScaleConst(x, c) => {
                let (x, c) = (*x, *c);
                let contrib: Vec<f64> = upstream.iter().map(|&u| u * c).collect();
                self.add_grad(x, &contrib);
            }
            Op::LogClamped(x, floor) => {
                let (x, floor) = (*x, *floor);
                let contrib: Vec<f64> = upstream
                    .iter()
                    .zip(self.nodes[x].value.data())
                    .map(|(&u, &xv)| if xv >= floor { u / xv } else { 0.0 })
                    .collect();
                self.add_grad(x, &contrib);
            }
            Op::Transpose(x) => {
                let x = *x;
                let (rows, cols) = self.nodes[x].value.shape();
                let mut contrib = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        contrib[r * cols + c] = upstream[c * rows + r];
                    }
                }
                self.add_grad(x, &contrib);
            }
        }
    }
}

fn softmax_row(src: &[f64], dst: &mut [f64]) {
    if src.is_empty() {
        return;
    }
    let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (d, &v) in dst.iter_mut().zip(src) {
        *d = (v - max).exp();
        sum += *d;
    }
    for d in dst.iter_mut() {
        *d /= sum;
    }
}

/// Maximum relative disagreement between the tape's analytic gradient of
/// `f` at `x` and central finite differences with step `h`:
/// `max_i |analytic_i - numeric_i| / (|analytic_i| + |numeric_i| + 1e-12)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    assert!(h > 0.0, "grad_check requires a positive step");
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let y = f(&mut tape, xv)?;
    if tape.value(y).shape() != (1, 1) {
        return Err(Error::Eval(format!(
            "grad_check requires a scalar-valued function, got {:?}",
            tape.value(y).shape()
        )));
    }
    tape.backward(y)?;
    let analytic = tape
        .grad_of(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |point: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.param(point.clone());
        let y = f(&mut t, v)?;
        Ok(t.value(y).item())
    };

    let mut max_rel: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
