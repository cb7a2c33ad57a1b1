//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive applied to its nodes; [`Graph::backward`]
//! replays the tape in reverse and returns the gradient of a scalar node with
//! respect to every parameter that took part in the computation. Parameters
//! are borrowed from a [`ParamSet`], never copied into the tape.

use super::params::{Gradients, ParamId, ParamSet};
use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, softmax_rows, Tensor};
use super::NnError;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    SoftmaxRows(Var),
    LogClamped(Var, f64),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.value(id),
            _ => &self.nodes[v.0].value,
        }
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Tensor::zeros(&[0]), Op::Param(id))
    }

    fn check(&self, ok: bool, what: impl FnOnce() -> String) -> Result<(), NnError> {
        if ok {
            Ok(())
        } else {
            Err(NnError::ShapeMismatch(what()))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        self.check(k == k2, || format!("matmul {m}x{k} by {k2}x{n}"))?;
        let mut out = vec![0.0; m * n];
        gemm_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        self.check(k == k2, || format!("matmul_nt {m}x{k} by ({n}x{k2})^T"))?;
        let mut out = vec![0.0; m * n];
        gemm_nt_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMulNt(a, b)))
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        self.check(ta.shape() == tb.shape(), || {
            format!("{name} {:?} vs {:?}", ta.shape(), tb.shape())
        })?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn broadcast_row(
        &mut self,
        x: Var,
        row: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NnError> {
        let (rx, cx) = self.dims(x);
        let (rr, cr) = self.dims(row);
        self.check(rr == 1 && cr == cx, || {
            format!("{name}: {rx}x{cx} with row {rr}x{cr}")
        })?;
        let r = self.value(row).data().to_vec();
        let xv = self.value(x);
        let mut data = xv.data().to_vec();
        for chunk in data.chunks_mut(cx) {
            for (v, &b) in chunk.iter_mut().zip(&r) {
                *v = f(*v, b);
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(t, op))
    }

    /// Adds a `1 x c` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NnError> {
        self.broadcast_row(x, row, "add_row", |a, b| a + b, Op::AddRow(x, row))
    }

    /// Multiplies every row of `x` elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var, NnError> {
        self.broadcast_row(x, row, "mul_row", |a, b| a * b, Op::MulRow(x, row))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x).map(|v| v * s);
        self.push(t, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        self.push(t, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        self.push(t, Op::Sigmoid(x))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        let t = self.value(x).map(softplus);
        self.push(t, Op::Softplus(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let t = softmax_rows(self.value(x));
        self.push(t, Op::SoftmaxRows(x))
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log_clamped(&mut self, x: Var, floor: f64) -> Var {
        let t = self.value(x).map(|v| v.max(floor).ln());
        self.push(t, Op::LogClamped(x, floor))
    }

    /// Per-row layer normalization with learnable `1 x d` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NnError> {
        let (rows, d) = self.dims(x);
        self.check(
            self.dims(gain) == (1, d) && self.dims(bias) == (1, d),
            || format!("layer_norm over width {d}"),
        )?;
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        Ok(self.push(
            Tensor::matrix(rows, d, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let rows = self.dims(parts[0]).0;
        self.check(parts.iter().all(|&p| self.dims(p).0 == rows), || {
            "concat_cols with differing row counts".into()
        })?;
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(
            Tensor::matrix(rows, total, out),
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let cols = self.dims(parts[0]).1;
        self.check(parts.iter().all(|&p| self.dims(p).1 == cols), || {
            "concat_rows with differing column counts".into()
        })?;
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rows = out.len() / cols.max(1);
        Ok(self.push(
            Tensor::matrix(rows, cols, out),
            Op::ConcatRows(parts.to_vec()),
        ))
    }

    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var, NnError> {
        let (rows, cols) = self.dims(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(NnError::PositionOutOfRange {
                position: bad,
                limit: rows,
            });
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            out.extend_from_slice(tv.row(i));
        }
        Ok(self.push(
            Tensor::matrix(indices.len(), cols, out),
            Op::GatherRows(table, indices.to_vec()),
        ))
    }

    /// Row-major reinterpretation as `rows x cols`.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var, NnError> {
        let n = self.value(x).len();
        self.check(n == rows * cols, || {
            format!("reshape {n} values to {rows}x{cols}")
        })?;
        let t = Tensor::matrix(rows, cols, self.value(x).data().to_vec());
        Ok(self.push(t, Op::Reshape(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Reverse pass from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        if self.value(loss).len() != 1 {
            return Err(NnError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        let mut out = Gradients::zeros_like(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a);
                    let n = self.dims(*b).1;
                    let mut ga = vec![0.0; m * k];
                    gemm_nt_acc(g.data(), self.value(*b).data(), &mut ga, m, n, k);
                    let mut gb = vec![0.0; k * n];
                    gemm_tn_acc(self.value(*a).data(), g.data(), &mut gb, k, m, n);
                    acc(&mut grads, *a, Tensor::matrix(m, k, ga));
                    acc(&mut grads, *b, Tensor::matrix(k, n, gb));
                }
                Op::MatMulNt(a, b) => {
                    let (m, k) = self.dims(*a);
                    let n = self.dims(*b).0;
                    let mut ga = vec![0.0; m * k];
                    gemm_acc(g.data(), self.value(*b).data(), &mut ga, m, n, k);
                    let mut gb = vec![0.0; n * k];
                    gemm_tn_acc(g.data(), self.value(*a).data(), &mut gb, n, m, k);
                    acc(&mut grads, *a, Tensor::matrix(m, k, ga));
                    acc(&mut grads, *b, Tensor::matrix(n, k, gb));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|v| -v));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = hadamard(&g, self.value(*b));
                    let gb = hadamard(&g, self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(x, row) => {
                    acc(&mut grads, *row, col_sums(&g));
                    acc(&mut grads, *x, g);
                }
                Op::MulRow(x, row) => {
                    let r = self.value(*row).data();
                    let mut gx = g.clone();
                    for chunk in gx.data_mut().chunks_mut(r.len()) {
                        for (v, &s) in chunk.iter_mut().zip(r) {
                            *v *= s;
                        }
                    }
                    let grow = col_sums(&hadamard(&g, self.value(*x)));
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *row, grow);
                }
                Op::Scale(x, s) => acc(&mut grads, *x, g.map(|v| v * s)),
                Op::Relu(x) => {
                    let mut gx = g;
                    for (v, &xv) in gx.data_mut().iter_mut().zip(self.value(*x).data()) {
                        if xv <= 0.0 {
                            *v = 0.0;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let mut gx = g;
                    for (v, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        *v *= y * (1.0 - y);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Softplus(x) => {
                    let mut gx = g;
                    for (v, &xv) in gx.data_mut().iter_mut().zip(self.value(*x).data()) {
                        *v *= sigmoid(xv);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let cols = y.cols();
                    let mut gx = g;
                    for (gr, yr) in gx.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for (gv, &yv) in gr.iter_mut().zip(yr) {
                            *gv = yv * (*gv - dot);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::LogClamped(x, floor) => {
                    let mut gx = g;
                    for (v, &xv) in gx.data_mut().iter_mut().zip(self.value(*x).data()) {
                        *v = if xv > *floor { *v / xv } else { 0.0 };
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (rows, d) = self.dims(*x);
                    let gain_v = self.value(*gain).data();
                    let gd = g.data();
                    let mut gx = vec![0.0; rows * d];
                    let mut ggain = vec![0.0; d];
                    let mut gbias = vec![0.0; d];
                    let mut dxhat = vec![0.0; d];
                    for r in 0..rows {
                        let gr = &gd[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut sum_dx = 0.0;
                        let mut sum_dx_h = 0.0;
                        for c in 0..d {
                            ggain[c] += gr[c] * hr[c];
                            gbias[c] += gr[c];
                            dxhat[c] = gr[c] * gain_v[c];
                            sum_dx += dxhat[c];
                            sum_dx_h += dxhat[c] * hr[c];
                        }
                        let scale = inv_std[r] / d as f64;
                        for c in 0..d {
                            gx[r * d + c] =
                                scale * (d as f64 * dxhat[c] - sum_dx - hr[c] * sum_dx_h);
                        }
                    }
                    acc(&mut grads, *x, Tensor::matrix(rows, d, gx));
                    acc(&mut grads, *gain, Tensor::matrix(1, d, ggain));
                    acc(&mut grads, *bias, Tensor::matrix(1, d, gbias));
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.dims(p).1;
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        acc(&mut grads, p, Tensor::matrix(rows, w, gp));
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let t = self.value(p);
                        let n = t.len();
                        let gp =
                            Tensor::new(t.shape().to_vec(), g.data()[offset..offset + n].to_vec())?;
                        acc(&mut grads, p, gp);
                        offset += n;
                    }
                }
                Op::GatherRows(table, indices) => {
                    let (rows, cols) = self.dims(*table);
                    let mut gt = vec![0.0; rows * cols];
                    for (k, &i) in indices.iter().enumerate() {
                        for (dst, &src) in gt[i * cols..(i + 1) * cols].iter_mut().zip(g.row(k)) {
                            *dst += src;
                        }
                    }
                    acc(&mut grads, *table, Tensor::matrix(rows, cols, gt));
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    acc(&mut grads, *x, Tensor::new(shape, g.into_data())?);
                }
                Op::Sum(x) => {
                    let t = Tensor::filled(self.value(*x).shape(), g.item());
                    acc(&mut grads, *x, t);
                }
            }
        }
        Ok(out)
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn col_sums(t: &Tensor) -> Tensor {
    let cols = t.cols();
    let mut out = vec![0.0; cols];
    for row in t.data().chunks(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::matrix(1, cols, out)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
