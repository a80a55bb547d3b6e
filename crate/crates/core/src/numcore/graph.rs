use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::stable::softmax_in_place;
use super::tensor::{matmul_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    SumAll(Var),
    MaxRows {
        input: Var,
        argmax: Vec<usize>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
        skip_row0: bool,
    },
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Unfold {
        input: Var,
        seq_len: usize,
        width: usize,
        pad_left: usize,
        out_len: usize,
    },
    ScalarFn {
        inputs: Vec<Var>,
        grads: Vec<Vec<f64>>,
    },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// One forward pass worth of recorded operations.
///
/// Parameters are borrowed from the store, never copied. Dropout masks come
/// from the graph's own seeded RNG so that a given `(params, inputs, seed)`
/// always produces the same loss.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    train: bool,
    rng: ChaCha8Rng,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore, train: bool, seed: u64) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let needs = self.params.is_trainable(id);
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: needs,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            left: self.value(a).shape().to_vec(),
            right: self.value(b).shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b)).map_err(|_| self.shape_err("matmul", a, b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("add", a, b));
        }
        let (r, c) = self.shape(a);
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::Add(a, b), needs))
    }

    /// `a[r x c] + b[1 x c]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(b) != (1, c) {
            return Err(self.shape_err("add_row", a, b));
        }
        let bias = self.value(b).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(c) {
            row.iter_mut().zip(&bias).for_each(|(x, y)| *x += y);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::AddRow(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let (r, c) = self.shape(a);
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::Mul(a, b), needs))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let (r, c) = self.shape(a);
        if mask.len() != r * c {
            return Err(Error::Shape {
                op: "mul_const",
                left: vec![r, c],
                right: vec![mask.len()],
            });
        }
        let data = zip_map(self.value(a).data(), &mask, |x, y| x * y);
        let needs = self.needs(a);
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::MulConst(a, mask), needs))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * factor).collect();
        let out = Tensor::matrix(t.rows(), t.cols(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(out, Op::Scale(a, factor), needs)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::matrix(t.rows(), t.cols(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(out, op, needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(self.shape_err("concat_cols", parts[0], p));
            }
            cols += self.shape(p).1;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::ConcatCols(parts.to_vec()), needs))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(self.shape_err("concat_rows", parts[0], p));
            }
            rows += self.shape(p).0;
            data.extend_from_slice(self.value(p).data());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::ConcatRows(parts.to_vec()), needs))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start > end || end > c {
            return Err(Error::range("slice_cols", end, c));
        }
        let t = self.value(a);
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&t.row_slice(i)[start..end]);
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::matrix(r, end - start, data)?, Op::SliceCols(a, start), needs))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start > end || end > r {
            return Err(Error::range("slice_rows", end, r));
        }
        let data = self.value(a).data()[start * c..end * c].to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::matrix(end - start, c, data)?, Op::SliceRows(a, start), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let needs = self.needs(a);
        self.push(out, Op::Transpose(a), needs)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), needs)
    }

    /// Column-wise max over consecutive groups of `group` rows:
    /// `[n*group x c] -> [n x c]`. Ties resolve to the first row.
    pub fn max_rows(&mut self, a: Var, group: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if group == 0 || r % group != 0 {
            return Err(Error::Invalid(format!("max_rows: {r} rows not divisible by group {group}")));
        }
        let n = r / group;
        let t = self.value(a);
        let mut data = vec![f64::NEG_INFINITY; n * c];
        let mut argmax = vec![0usize; n * c];
        for g in 0..n {
            for i in 0..group {
                let row = g * group + i;
                for j in 0..c {
                    let v = t.get(row, j);
                    if v > data[g * c + j] || i == 0 {
                        data[g * c + j] = v;
                        argmax[g * c + j] = row;
                    }
                }
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::matrix(n, c, data)?, Op::MaxRows { input: a, argmax }, needs))
    }

    /// Row lookup `table[ids]`. With `skip_row0`, row 0 (padding) never
    /// receives gradient.
    pub fn gather(&mut self, table: Var, ids: &[usize], skip_row0: bool) -> Result<Var> {
        let (r, c) = self.shape(table);
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(Error::range("gather", id, r));
            }
            data.extend_from_slice(t.row_slice(id));
        }
        let needs = self.needs(table);
        let out = Tensor::matrix(ids.len(), c, data)?;
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
                skip_row0,
            },
            needs,
        ))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            softmax_in_place(row);
        }
        let needs = self.needs(a);
        self.push(Tensor::matrix(r, c, data).expect("same shape"), Op::SoftmaxRows(a), needs)
    }

    /// Per-row layer normalisation with learned `gamma`, `beta` (`1 x c`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(gamma) != (1, c) || self.shape(beta) != (1, c) {
            return Err(self.shape_err("layer_norm", x, gamma));
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let out = Tensor::matrix(r, c, out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    /// Sliding windows for 1-D convolution. The input is `n` stacked
    /// sequences of `seq_len` rows each; every sequence is zero-padded by
    /// `pad_left` / `pad_right` rows and each output row is the
    /// concatenation of `width` consecutive input rows.
    pub fn unfold(&mut self, input: Var, seq_len: usize, width: usize, pad_left: usize, pad_right: usize) -> Result<Var> {
        let (r, d) = self.shape(input);
        if seq_len == 0 || r % seq_len != 0 || width == 0 || seq_len + pad_left + pad_right < width {
            return Err(Error::Invalid(format!("unfold: rows {r}, seq_len {seq_len}, width {width}")));
        }
        let n = r / seq_len;
        let out_len = seq_len + pad_left + pad_right - width + 1;
        let t = self.value(input);
        let mut data = vec![0.0; n * out_len * width * d];
        for s in 0..n {
            for o in 0..out_len {
                let dst = (s * out_len + o) * width * d;
                for j in 0..width {
                    let pos = o + j;
                    if pos < pad_left || pos - pad_left >= seq_len {
                        continue;
                    }
                    let src_row = s * seq_len + pos - pad_left;
                    data[dst + j * d..dst + (j + 1) * d].copy_from_slice(t.row_slice(src_row));
                }
            }
        }
        let needs = self.needs(input);
        let out = Tensor::matrix(n * out_len, width * d, data)?;
        Ok(self.push(
            out,
            Op::Unfold {
                input,
                seq_len,
                width,
                pad_left,
                out_len,
            },
            needs,
        ))
    }

    /// Scalar node whose value and input gradients were computed outside the
    /// graph (CRF likelihood, fused cross-entropy).
    pub fn scalar_fn(&mut self, inputs: Vec<Var>, value: f64, grads: Vec<Vec<f64>>) -> Result<Var> {
        for (&v, g) in inputs.iter().zip(&grads) {
            if self.value(v).len() != g.len() {
                return Err(Error::Shape {
                    op: "scalar_fn",
                    left: self.value(v).shape().to_vec(),
                    right: vec![g.len()],
                });
            }
        }
        let needs = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(Tensor::scalar(value), Op::ScalarFn { inputs, grads }, needs))
    }

    /// Inverted dropout: at train time each unit is kept with probability
    /// `1 - p` and scaled by `1 / (1 - p)`; identity at eval time.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if !self.train || p <= 0.0 {
            return Ok(a);
        }
        let mask = self.dropout_mask(self.value(a).len(), p);
        self.mul_const(a, mask)
    }

    pub fn dropout_mask(&mut self, len: usize, p: f64) -> Vec<f64> {
        let keep = 1.0 / (1.0 - p);
        (0..len).map(|_| if self.rng.gen::<f64>() < p { 0.0 } else { keep }).collect()
    }

    /// Mean token cross-entropy of row-wise softmax(`logits`) against
    /// `targets`; returns the summed loss node (not averaged).
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (r, c) = (t.rows(), t.cols());
        if targets.len() != r {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                left: vec![r, c],
                right: vec![targets.len()],
            });
        }
        let mut grad = t.data().to_vec();
        let mut loss = 0.0;
        for (i, row) in grad.chunks_mut(c).enumerate() {
            let tgt = targets[i];
            if tgt >= c {
                return Err(Error::range("cross_entropy target", tgt, c));
            }
            softmax_in_place(row);
            loss -= row[tgt].max(f64::MIN_POSITIVE).ln();
            row[tgt] -= 1.0;
        }
        self.scalar_fn(vec![logits], loss, vec![grad])
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                left: lt.shape().to_vec(),
                right: vec![1, 1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = ParamGrads::zeros_like(self.params);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>], out: &mut ParamGrads) {
        let node = &self.nodes[idx];
        let y = self.value(Var(idx));
        match &node.op {
            Op::Input => {}
            Op::Param(id) => {
                let slot = out.slot(*id, g.len());
                slot.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if let Some(ga) = self.slot(grads, *a) {
                    // dA = dC * B^T
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let br = &bv.data()[p * n..(p + 1) * n];
                            ga[i * k + p] += dot(gr, br);
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    // dB = A^T * dC
                    let at = av.transpose();
                    matmul_into(at.data(), g, gb, k, m, n);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(s) = self.slot(grads, *v) {
                        s.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                let c = y.cols();
                if let Some(s) = self.slot(grads, *b) {
                    for row in g.chunks(c) {
                        s.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(s) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        s[i] += g[i] * bv[i];
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for i in 0..g.len() {
                        s[i] += g[i] * av[i];
                    }
                }
            }
            Op::MulConst(a, mask) => {
                if let Some(s) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        s[i] += g[i] * mask[i];
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(g).for_each(|(x, y)| *x += y * f);
                }
            }
            Op::Tanh(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    for (i, yv) in y.data().iter().enumerate() {
                        s[i] += g[i] * (1.0 - yv * yv);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    for (i, yv) in y.data().iter().enumerate() {
                        s[i] += g[i] * yv * (1.0 - yv);
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    for (i, yv) in y.data().iter().enumerate() {
                        if *yv > 0.0 {
                            s[i] += g[i];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let rows = y.rows();
                let total = y.cols();
                let mut offset = 0;
                for p in parts {
                    let pc = self.value(*p).cols();
                    if let Some(s) = self.slot(grads, *p) {
                        for r in 0..rows {
                            for j in 0..pc {
                                s[r * pc + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if let Some(s) = self.slot(grads, *p) {
                        s.iter_mut().zip(&g[offset..offset + len]).for_each(|(x, y)| *x += y);
                    }
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                let ac = self.value(*a).cols();
                let w = y.cols();
                if let Some(s) = self.slot(grads, *a) {
                    for r in 0..y.rows() {
                        for j in 0..w {
                            s[r * ac + start + j] += g[r * w + j];
                        }
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let c = y.cols();
                if let Some(s) = self.slot(grads, *a) {
                    s[start * c..start * c + g.len()].iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (y.rows(), y.cols());
                if let Some(s) = self.slot(grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            s[j * r + i] += g[i * c + j];
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::MaxRows { input, argmax } => {
                let c = y.cols();
                if let Some(s) = self.slot(grads, *input) {
                    for (k, &row) in argmax.iter().enumerate() {
                        s[row * c + k % c] += g[k];
                    }
                }
            }
            Op::Gather { table, ids, skip_row0 } => {
                let c = y.cols();
                if let Some(s) = self.slot(grads, *table) {
                    for (i, &id) in ids.iter().enumerate() {
                        if *skip_row0 && id == 0 {
                            continue;
                        }
                        s[id * c..(id + 1) * c]
                            .iter_mut()
                            .zip(&g[i * c..(i + 1) * c])
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let c = y.cols();
                if let Some(s) = self.slot(grads, *a) {
                    for r in 0..y.rows() {
                        let yr = &y.data()[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let inner = dot(yr, gr);
                        for j in 0..c {
                            s[r * c + j] += yr[j] * (gr[j] - inner);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = y.cols();
                let gv = self.value(*gamma).data().to_vec();
                if let Some(s) = self.slot(grads, *beta) {
                    for row in g.chunks(c) {
                        s.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
                if let Some(s) = self.slot(grads, *gamma) {
                    for (row, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            s[j] += row[j] * hrow[j];
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *x) {
                    let n = c as f64;
                    for r in 0..y.rows() {
                        let hr = &xhat[r * c..(r + 1) * c];
                        let dh: Vec<f64> = (0..c).map(|j| g[r * c + j] * gv[j]).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n;
                        let mean_dh_h = dot(&dh, hr) / n;
                        for j in 0..c {
                            s[r * c + j] += inv_std[r] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Unfold {
                input,
                seq_len,
                width,
                pad_left,
                out_len,
            } => {
                let d = self.value(*input).cols();
                let n = self.value(*input).rows() / seq_len;
                if let Some(s) = self.slot(grads, *input) {
                    for sq in 0..n {
                        for o in 0..*out_len {
                            let src = (sq * out_len + o) * width * d;
                            for j in 0..*width {
                                let pos = o + j;
                                if pos < *pad_left || pos - pad_left >= *seq_len {
                                    continue;
                                }
                                let row = sq * seq_len + pos - pad_left;
                                s[row * d..(row + 1) * d]
                                    .iter_mut()
                                    .zip(&g[src + j * d..src + (j + 1) * d])
                                    .for_each(|(a, b)| *a += b);
                            }
                        }
                    }
                }
            }
            Op::ScalarFn { inputs, grads: local } => {
                for (v, lg) in inputs.iter().zip(local) {
                    if let Some(s) = self.slot(grads, *v) {
                        s.iter_mut().zip(lg).for_each(|(a, b)| *a += g[0] * b);
                    }
                }
            }
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropout_identity_cases() {
        let store = ParamStore::new();
        let x = Tensor::row(vec![1.0, -2.0, 3.0]);
        let mut g = Graph::new(&store, true, 7);
        let a = g.input(x.clone());
        let b = g.dropout(a, 0.0).unwrap();
        assert_eq!(g.value(b), &x);

        let mut g = Graph::new(&store, false, 7);
        let a = g.input(x.clone());
        let b = g.dropout(a, 0.5).unwrap();
        assert_eq!(g.value(b), &x);
    }

    #[test]
    fn dropout_scales_kept_units() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, true, 3);
        let a = g.input(Tensor::filled(1, 1000, 1.0));
        let b = g.dropout(a, 0.5).unwrap();
        let v = g.value(b).data();
        assert!(v.iter().all(|&x| x == 0.0 || x == 2.0));
        let kept = v.iter().filter(|&&x| x > 0.0).count();
        assert!((400..600).contains(&kept), "{kept}");
    }

    #[test]
    fn matmul_gradients() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true);
        let mut g = Graph::new(&store, false, 0);
        let x = g.input(Tensor::row(vec![1.0, -1.0]));
        let wv = g.param(w);
        let y = g.matmul(x, wv).unwrap();
        let s = g.sum_all(y);
        let grads = g.backward(s).unwrap();
        // d/dW sum(x W) = x^T * ones
        assert_eq!(grads.get(w).unwrap(), &[1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn shape_error_on_add() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, false, 0);
        let a = g.input(Tensor::zeros(2, 3));
        let b = g.input(Tensor::zeros(3, 2));
        assert!(matches!(g.add(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row(vec![1.0, 2.0]), false);
        let mut g = Graph::new(&store, false, 0);
        let wv = g.param(w);
        let s = g.sum_all(wv);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(w).is_none());
    }
}
