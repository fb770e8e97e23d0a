//! Reverse-mode tape.
//!
//! A [`Graph`] records every operation of one forward pass. Values are
//! computed eagerly; [`Graph::backward`] walks the tape in reverse and returns
//! the gradient of a scalar loss with respect to every node that requires one.
//! Graphs are cheap to build and are thrown away after each step.

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{dims2, dims3, gemm, ConvGeom, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Logits are clamped to this magnitude before the binary cross-entropy.
pub const BCE_LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone)]
enum Op {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    SumSquares(Var),
    Reshape(Var),
    SwapLast(Var),
    SliceCols { x: Var, start: usize },
    Conv1d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvTranspose1d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Embedding { table: Var, indices: Vec<usize> },
    StraightThrough(Var),
    BceWithLogits { logits: Var, targets: Tensor },
    CrossEntropy { logits: Var, targets: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor; zeros if `var` is not connected to the loss.
    pub fn tensor(&self, var: Var) -> Tensor {
        match self.get(var) {
            Some(g) => Tensor::from_parts(self.shapes[var.0].clone(), g.to_vec()),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Differentiable leaf not tied to a parameter.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf(None), true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf(None), false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push_raw(store.value(id).clone(), Op::Leaf(Some(id)), true)
    }

    pub(crate) fn param_leaves(&self) -> impl Iterator<Item = (Var, ParamId)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Leaf(Some(id)) => Some((Var(i), id)),
            _ => None,
        })
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_parts(x.shape().to_vec(), data)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |p, q| p + q);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |p, q| p - q);
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |p, q| p * q);
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// Broadcast-add a vector `b` of length n over the last axis of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap();
        if self.shape(b) != [n] {
            return Err(Error::shape("add_row", self.shape(x), self.shape(b)));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            row.iter_mut().zip(&bias).for_each(|(v, b)| *v += b);
        }
        self.push("add_row", out, Op::AddRow(x, b), &[x, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        self.push("scale", out, Op::Scale(x, factor), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push("leaky_relu", out, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::tanh);
        self.push("tanh", out, Op::Tanh(x), &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let n = *t.shape().last().unwrap();
        let mut data = t.data().to_vec();
        data.chunks_mut(n).for_each(softmax_in_place);
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push("softmax", out, Op::Softmax(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.push("mean", out, Op::Mean(x), &[x])
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).data().iter().map(|v| v * v).sum());
        self.push("sum_squares", out, Op::SumSquares(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    /// Swap the last two axes of a rank-2 or rank-3 tensor.
    pub fn swap_last(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (n, a, b) = match t.shape() {
            [a, b] => (1, *a, *b),
            [n, a, b] => (*n, *a, *b),
            s => return Err(Error::invalid("swap_last", format!("unsupported shape {s:?}"))),
        };
        let data = swap_last_data(t.data(), n, a, b);
        let mut shape = t.shape().to_vec();
        let r = shape.len();
        shape.swap(r - 1, r - 2);
        self.push("swap_last", Tensor::from_parts(shape, data), Op::SwapLast(x), &[x])
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = dims2("slice_cols", self.value(x))?;
        if start >= end || end > cols {
            return Err(Error::invalid(
                "slice_cols",
                format!("range {start}..{end} invalid for {cols} columns"),
            ));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + end]);
        }
        let out = Tensor::from_parts(vec![rows, end - start], data);
        self.push("slice_cols", out, Op::SliceCols { x, start }, &[x])
    }

    /// `x`: [N, Cin, L]; `w`: [Cout, Cin, K]; optional `b`: [Cout].
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let out = crate::tensor::conv1d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, padding)?;
        let len = self.shape(x)[2];
        let kernel = self.shape(w)[2];
        let geom = ConvGeom::forward("conv1d", len, kernel, stride, padding)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push("conv1d", out, Op::Conv1d { x, w, b, geom }, &inputs)
    }

    /// `x`: [N, Cin, L]; `w`: [Cin, Cout, K]; optional `b`: [Cout].
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let out = crate::tensor::conv_transpose1d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let len = self.shape(x)[2];
        let kernel = self.shape(w)[2];
        let geom = ConvGeom::transposed("conv_transpose1d", len, kernel, stride, padding)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push("conv_transpose1d", out, Op::ConvTranspose1d { x, w, b, geom }, &inputs)
    }

    /// Rows of `table` ([V, D]) selected by `indices`, giving [len, D].
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (vocab, dim) = dims2("embedding", self.value(table))?;
        if indices.is_empty() {
            return Err(Error::invalid("embedding", "no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(Error::invalid("embedding", format!("index {bad} out of range for {vocab} rows")));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_parts(vec![indices.len(), dim], data);
        let op = Op::Embedding {
            table,
            indices: indices.to_vec(),
        };
        self.push("embedding", out, op, &[table])
    }

    /// Forward value `quantized`, backward identity into `z` (straight-through estimator).
    pub fn straight_through(&mut self, z: Var, quantized: Tensor) -> Result<Var> {
        if self.shape(z) != quantized.shape() {
            return Err(Error::shape("straight_through", self.shape(z), quantized.shape()));
        }
        self.push("straight_through", quantized, Op::StraightThrough(z), &[z])
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and `targets`,
    /// computed from logits clamped to ±[`BCE_LOGIT_CLAMP`].
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let o = self.value(logits);
        if o.shape() != targets.shape() {
            return Err(Error::shape("bce_with_logits", o.shape(), targets.shape()));
        }
        let total: f64 = o
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &y)| {
                let x = x.clamp(-BCE_LOGIT_CLAMP, BCE_LOGIT_CLAMP);
                x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
            })
            .sum();
        let out = Tensor::scalar(total / o.len() as f64);
        let op = Op::BceWithLogits {
            logits,
            targets: targets.clone(),
        };
        self.push("bce_with_logits", out, op, &[logits])
    }

    /// Mean softmax cross-entropy of `logits` ([n, V]) against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, vocab) = dims2("cross_entropy", self.value(logits))?;
        if targets.len() != n {
            return Err(Error::invalid(
                "cross_entropy",
                format!("{} targets for {n} rows", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
            return Err(Error::invalid("cross_entropy", format!("target {bad} out of range")));
        }
        let o = self.value(logits);
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let row = o.row(i);
                log_sum_exp(row) - row[t]
            })
            .sum();
        let out = Tensor::scalar(total / n as f64);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
        };
        self.push("cross_entropy", out, op, &[logits])
    }

    /// Gradient of the scalar `loss` with respect to every node that requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2("matmul", self.value(*a)).unwrap();
                let n = self.shape(*b)[1];
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, self.value(*b).data(), true, &mut da, 0.0);
                    accumulate(grads, *a, &da);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, g, false, &mut db, 0.0);
                    accumulate(grads, *b, &db);
                }
            }
            Op::Add(a, b) => {
                self.send(grads, *a, || g.to_vec());
                self.send(grads, *b, || g.to_vec());
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, || g.to_vec());
                self.send(grads, *b, || g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.send(grads, *a, || g.iter().zip(bv).map(|(g, y)| g * y).collect());
                self.send(grads, *b, || g.iter().zip(av).map(|(g, x)| g * x).collect());
            }
            Op::AddRow(x, b) => {
                self.send(grads, *x, || g.to_vec());
                self.send(grads, *b, || {
                    let n = self.shape(*b)[0];
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    db
                });
            }
            Op::Scale(x, f) => self.send(grads, *x, || g.iter().map(|v| v * f).collect()),
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                self.send(grads, *x, || {
                    g.iter()
                        .zip(xv)
                        .map(|(g, &x)| if x > 0.0 { *g } else { g * slope })
                        .collect()
                });
            }
            Op::Sigmoid(x) => {
                self.send(grads, *x, || g.iter().zip(out).map(|(g, s)| g * s * (1.0 - s)).collect());
            }
            Op::Tanh(x) => {
                self.send(grads, *x, || g.iter().zip(out).map(|(g, t)| g * (1.0 - t * t)).collect());
            }
            Op::Softmax(x) => {
                let n = *node.value.shape().last().unwrap();
                self.send(grads, *x, || {
                    let mut dx = Vec::with_capacity(g.len());
                    for (gr, yr) in g.chunks(n).zip(out.chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        dx.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - dot)));
                    }
                    dx
                });
            }
            Op::Sum(x) => self.send(grads, *x, || vec![g[0]; self.value(*x).len()]),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.send(grads, *x, || vec![g[0] / n as f64; n]);
            }
            Op::SumSquares(x) => {
                let xv = self.value(*x).data();
                self.send(grads, *x, || xv.iter().map(|v| 2.0 * v * g[0]).collect());
            }
            Op::Reshape(x) => self.send(grads, *x, || g.to_vec()),
            Op::SwapLast(x) => {
                let s = node.value.shape();
                let r = s.len();
                let n = if r == 3 { s[0] } else { 1 };
                self.send(grads, *x, || swap_last_data(g, n, s[r - 2], s[r - 1]));
            }
            Op::SliceCols { x, start } => {
                let cols = self.shape(*x)[1];
                let width = node.value.shape()[1];
                self.send(grads, *x, || {
                    let mut dx = vec![0.0; self.value(*x).len()];
                    for (r, row) in g.chunks(width).enumerate() {
                        dx[r * cols + start..r * cols + start + width].copy_from_slice(row);
                    }
                    dx
                });
            }
            Op::Conv1d { x, w, b, geom } => self.conv_backward(g, *x, *w, *b, geom, grads),
            Op::ConvTranspose1d { x, w, b, geom } => self.conv_t_backward(g, *x, *w, *b, geom, grads),
            Op::Embedding { table, indices } => {
                let dim = self.shape(*table)[1];
                self.send(grads, *table, || {
                    let mut dt = vec![0.0; self.value(*table).len()];
                    for (row, &idx) in g.chunks(dim).zip(indices) {
                        dt[idx * dim..(idx + 1) * dim]
                            .iter_mut()
                            .zip(row)
                            .for_each(|(d, v)| *d += v);
                    }
                    dt
                });
            }
            Op::StraightThrough(z) => self.send(grads, *z, || g.to_vec()),
            Op::BceWithLogits { logits, targets } => {
                let o = self.value(*logits).data();
                let scale = g[0] / o.len() as f64;
                self.send(grads, *logits, || {
                    o.iter()
                        .zip(targets.data())
                        .map(|(&x, &y)| {
                            if x.abs() > BCE_LOGIT_CLAMP {
                                0.0
                            } else {
                                (sigmoid(x) - y) * scale
                            }
                        })
                        .collect()
                });
            }
            Op::CrossEntropy { logits, targets } => {
                let o = self.value(*logits);
                let vocab = o.shape()[1];
                let scale = g[0] / targets.len() as f64;
                self.send(grads, *logits, || {
                    let mut d = o.data().to_vec();
                    for (row, &t) in d.chunks_mut(vocab).zip(targets) {
                        softmax_in_place(row);
                        row[t] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= scale);
                    }
                    d
                });
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn send(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce() -> Vec<f64>) {
        if self.wants(v) {
            accumulate(grads, v, &f());
        }
    }

    fn conv_backward(
        &self,
        g: &[f64],
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: &ConvGeom,
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (n, cin, len) = dims3("conv1d", self.value(x)).unwrap();
        let (cout, _, kernel) = dims3("conv1d", self.value(w)).unwrap();
        let lout = geom.short;
        let rows = cin * kernel;
        let wv = self.value(w).data();
        let xv = self.value(x).data();
        let (want_x, want_w) = (self.wants(x), self.wants(w));
        let mut dx = if want_x { vec![0.0; n * cin * len] } else { Vec::new() };
        let mut dw = vec![0.0; if want_w { cout * rows } else { 0 }];
        let mut cols = vec![0.0; rows * lout];
        for i in 0..n {
            let gi = &g[i * cout * lout..(i + 1) * cout * lout];
            if want_w {
                geom.im2col(&xv[i * cin * len..(i + 1) * cin * len], cin, &mut cols);
                gemm(cout, lout, rows, gi, false, &cols, true, &mut dw, 1.0);
            }
            if want_x {
                gemm(rows, cout, lout, wv, true, gi, false, &mut cols, 0.0);
                geom.col2im(&cols, cin, &mut dx[i * cin * len..(i + 1) * cin * len]);
            }
        }
        if want_x {
            accumulate(grads, x, &dx);
        }
        if want_w {
            accumulate(grads, w, &dw);
        }
        if let Some(b) = b {
            self.send(grads, b, || channel_sums(g, n, cout, lout));
        }
    }

    fn conv_t_backward(
        &self,
        g: &[f64],
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: &ConvGeom,
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (n, cin, len) = dims3("conv_transpose1d", self.value(x)).unwrap();
        let (_, cout, kernel) = dims3("conv_transpose1d", self.value(w)).unwrap();
        let lout = geom.long;
        let rows = cout * kernel;
        let wv = self.value(w).data();
        let xv = self.value(x).data();
        let (want_x, want_w) = (self.wants(x), self.wants(w));
        let mut dx = if want_x { vec![0.0; n * cin * len] } else { Vec::new() };
        let mut dw = vec![0.0; if want_w { cin * rows } else { 0 }];
        let mut cols = vec![0.0; rows * len];
        for i in 0..n {
            let gi = &g[i * cout * lout..(i + 1) * cout * lout];
            geom.im2col(gi, cout, &mut cols);
            if want_x {
                gemm(cin, rows, len, wv, false, &cols, false, &mut dx[i * cin * len..(i + 1) * cin * len], 0.0);
            }
            if want_w {
                gemm(cin, len, rows, &xv[i * cin * len..(i + 1) * cin * len], false, &cols, true, &mut dw, 1.0);
            }
        }
        if want_x {
            accumulate(grads, x, &dx);
        }
        if want_w {
            accumulate(grads, w, &dw);
        }
        if let Some(b) = b {
            self.send(grads, b, || channel_sums(g, n, cout, lout));
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(delta).for_each(|(e, d)| *e += d),
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

fn channel_sums(g: &[f64], n: usize, channels: usize, len: usize) -> Vec<f64> {
    let mut db = vec![0.0; channels];
    for i in 0..n {
        for (c, d) in db.iter_mut().enumerate() {
            let off = (i * channels + c) * len;
            *d += g[off..off + len].iter().sum::<f64>();
        }
    }
    db
}

fn swap_last_data(src: &[f64], n: usize, a: usize, b: usize) -> Vec<f64> {
    let mut dst = vec![0.0; src.len()];
    for i in 0..n {
        let (s, d) = (&src[i * a * b..(i + 1) * a * b], &mut dst[i * a * b..(i + 1) * a * b]);
        for r in 0..a {
            for c in 0..b {
                d[c * a + r] = s[r * b + c];
            }
        }
    }
    dst
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
