//! Reverse-mode differentiation via an explicit operation tape.
//!
//! A forward pass records one node per primitive; `backward` replays the
//! adjoints in reverse order, visiting each node exactly once.

use super::Tensor;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    /// matrix + row vector broadcast over rows
    AddRow(usize, usize),
    Sub(usize, usize),
    MulElem(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    /// column-wise mean over rows: (r,c) -> (1,c)
    MeanRows(usize),
    SumAll(usize),
    /// concatenate along columns
    ConcatCols(usize, usize),
    SliceCols(usize, usize, usize),
    Row(usize, usize),
    StackRows(Vec<usize>),
    /// mean of the given rows of the source; empty index list yields zeros
    GatherMeanRows(usize, Vec<usize>),
    /// per-row L2 normalization with an epsilon floor
    L2NormRows(usize),
    /// softmax cross-entropy of a (1,V) logit row against a target index
    SoftmaxXent(usize, usize),
}

struct Node {
    value: Tensor,
    grad: Vec<f64>,
    op: Op,
}

/// Named parameter leaves so gradients can be written back to a store.
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

const NORM_EPS: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node { value, grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].grad
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "scalar_value on {}x{} tensor", t.rows, t.cols);
        t.data[0]
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf backed by a named parameter from a store; `write_grads`
    /// accumulates its adjoint back under the same name.
    pub fn param(&mut self, store: &super::ParamStore, name: &str) -> Var {
        let v = self.leaf(store.get(name).clone());
        self.params.push((name.to_string(), v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(
            ta.cols, tb.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            ta.rows, ta.cols, tb.rows, tb.cols
        );
        let (r, k, c) = (ta.rows, ta.cols, tb.cols);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for l in 0..k {
                let av = ta.data[i * k + l];
                if av == 0.0 {
                    continue;
                }
                for j in 0..c {
                    out[i * c + j] += av * tb.data[l * c + j];
                }
            }
        }
        self.push(Tensor::new(r, c, out), Op::MatMul(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(
            (ta.rows, ta.cols),
            (tb.rows, tb.cols),
            "add shape mismatch: {}x{} + {}x{}",
            ta.rows,
            ta.cols,
            tb.rows,
            tb.cols
        );
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        self.push(Tensor::new(ta.rows, ta.cols, data), Op::Add(a.0, b.0))
    }

    /// matrix (r,c) + row (1,c), broadcast over rows
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ta, tr) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        assert_eq!(tr.rows, 1, "add_row: bias must be a row vector");
        assert_eq!(
            ta.cols, tr.cols,
            "add_row shape mismatch: {}x{} + 1x{}",
            ta.rows, ta.cols, tr.cols
        );
        let mut data = ta.data.clone();
        for i in 0..ta.rows {
            for j in 0..ta.cols {
                data[i * ta.cols + j] += tr.data[j];
            }
        }
        self.push(Tensor::new(ta.rows, ta.cols, data), Op::AddRow(a.0, row.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(
            (ta.rows, ta.cols),
            (tb.rows, tb.cols),
            "sub shape mismatch"
        );
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect();
        self.push(Tensor::new(ta.rows, ta.cols, data), Op::Sub(a.0, b.0))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(
            (ta.rows, ta.cols),
            (tb.rows, tb.cols),
            "mul_elem shape mismatch"
        );
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        self.push(Tensor::new(ta.rows, ta.cols, data), Op::MulElem(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|x| x * c).collect();
        self.push(Tensor::new(ta.rows, ta.cols, data), Op::Scale(a.0, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|x| x.tanh()).collect();
        self.push(Tensor::new(ta.rows, ta.cols, data), Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        self.push(Tensor::new(ta.rows, ta.cols, data), Op::Sigmoid(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|x| x.max(0.0)).collect();
        self.push(Tensor::new(ta.rows, ta.cols, data), Op::Relu(a.0))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let (r, c) = (ta.rows, ta.cols);
        let mut data = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                data[j] += ta.data[i * c + j];
            }
        }
        for x in &mut data {
            *x /= r as f64;
        }
        self.push(Tensor::new(1, c, data), Op::MeanRows(a.0))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a.0))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.rows, tb.rows, "concat_cols row mismatch");
        let (r, ca, cb) = (ta.rows, ta.cols, tb.cols);
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(&ta.data[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&tb.data[i * cb..(i + 1) * cb]);
        }
        self.push(Tensor::new(r, ca + cb, data), Op::ConcatCols(a.0, b.0))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ta = &self.nodes[a.0].value;
        assert!(start + len <= ta.cols, "slice_cols out of range");
        let mut data = Vec::with_capacity(ta.rows * len);
        for i in 0..ta.rows {
            data.extend_from_slice(&ta.data[i * ta.cols + start..i * ta.cols + start + len]);
        }
        self.push(Tensor::new(ta.rows, len, data), Op::SliceCols(a.0, start, len))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        let ta = &self.nodes[a.0].value;
        assert!(r < ta.rows, "row index out of range");
        let data = ta.data[r * ta.cols..(r + 1) * ta.cols].to_vec();
        self.push(Tensor::new(1, ta.cols, data), Op::Row(a.0, r))
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows on empty list");
        let c = self.nodes[rows[0].0].value.cols;
        let mut data = Vec::with_capacity(rows.len() * c);
        for v in rows {
            let t = &self.nodes[v.0].value;
            assert_eq!(t.rows, 1, "stack_rows expects row vectors");
            assert_eq!(t.cols, c, "stack_rows column mismatch");
            data.extend_from_slice(&t.data);
        }
        self.push(
            Tensor::new(rows.len(), c, data),
            Op::StackRows(rows.iter().map(|v| v.0).collect()),
        )
    }

    pub fn gather_mean_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let ta = &self.nodes[a.0].value;
        let c = ta.cols;
        let mut data = vec![0.0; c];
        for &i in indices {
            assert!(i < ta.rows, "gather_mean_rows index out of range");
            for j in 0..c {
                data[j] += ta.data[i * c + j];
            }
        }
        if !indices.is_empty() {
            for x in &mut data {
                *x /= indices.len() as f64;
            }
        }
        self.push(
            Tensor::new(1, c, data),
            Op::GatherMeanRows(a.0, indices.to_vec()),
        )
    }

    pub fn l2_norm_rows(&mut self, a: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let (r, c) = (ta.rows, ta.cols);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &ta.data[i * c..(i + 1) * c];
            let norm = (row.iter().map(|x| x * x).sum::<f64>() + NORM_EPS).sqrt();
            for j in 0..c {
                data[i * c + j] = row[j] / norm;
            }
        }
        self.push(Tensor::new(r, c, data), Op::L2NormRows(a.0))
    }

    /// Cross-entropy of softmax(logits) against `target`; logits are (1,V).
    pub fn softmax_xent(&mut self, logits: Var, target: usize) -> Var {
        let tl = &self.nodes[logits.0].value;
        assert_eq!(tl.rows, 1, "softmax_xent expects a logit row");
        assert!(target < tl.cols, "softmax_xent target out of range");
        let p = super::softmax_vec(&tl.data);
        let loss = -(p[target].max(1e-300)).ln();
        self.push(Tensor::scalar(loss), Op::SoftmaxXent(logits.0, target))
    }

    /// Softmax probabilities of a logit row (forward-only helper).
    pub fn softmax_probs(&self, logits: Var) -> Vec<f64> {
        super::softmax_vec(&self.nodes[logits.0].value.data)
    }

    /// Convenience: 0.5-free plain mean squared error between two tensors.
    pub fn mse(&mut self, pred: Var, truth: Var) -> Var {
        let diff = self.sub(pred, truth);
        let sq = self.mul_elem(diff, diff);
        let total = self.sum_all(sq);
        let n = self.nodes[pred.0].value.len() as f64;
        self.scale(total, 1.0 / n)
    }

    /// Seed the adjoint of `loss` with 1 and sweep the tape in reverse.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(
            self.nodes[loss.0].value.len(),
            1,
            "backward expects a scalar loss"
        );
        for n in &mut self.nodes {
            n.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[loss.0].grad[0] = 1.0;

        for idx in (0..self.nodes.len()).rev() {
            let op = self.nodes[idx].op.clone();
            let grad = std::mem::take(&mut self.nodes[idx].grad);
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (r, k, c) = (
                        self.nodes[a].value.rows,
                        self.nodes[a].value.cols,
                        self.nodes[b].value.cols,
                    );
                    // dA += dC * B^T
                    for i in 0..r {
                        for l in 0..k {
                            let mut acc = 0.0;
                            for j in 0..c {
                                acc += grad[i * c + j] * self.nodes[b].value.data[l * c + j];
                            }
                            self.nodes[a].grad[i * k + l] += acc;
                        }
                    }
                    // dB += A^T * dC
                    for l in 0..k {
                        for j in 0..c {
                            let mut acc = 0.0;
                            for i in 0..r {
                                acc += self.nodes[a].value.data[i * k + l] * grad[i * c + j];
                            }
                            self.nodes[b].grad[l * c + j] += acc;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (g, d) in self.nodes[a].grad.iter_mut().zip(&grad) {
                        *g += d;
                    }
                    for (g, d) in self.nodes[b].grad.iter_mut().zip(&grad) {
                        *g += d;
                    }
                }
                Op::AddRow(a, row) => {
                    for (g, d) in self.nodes[a].grad.iter_mut().zip(&grad) {
                        *g += d;
                    }
                    let c = self.nodes[row].value.cols;
                    let r = self.nodes[a].value.rows;
                    for i in 0..r {
                        for j in 0..c {
                            self.nodes[row].grad[j] += grad[i * c + j];
                        }
                    }
                }
                Op::Sub(a, b) => {
                    for (g, d) in self.nodes[a].grad.iter_mut().zip(&grad) {
                        *g += d;
                    }
                    for (g, d) in self.nodes[b].grad.iter_mut().zip(&grad) {
                        *g -= d;
                    }
                }
                Op::MulElem(a, b) => {
                    for i in 0..grad.len() {
                        let (av, bv) = (self.nodes[a].value.data[i], self.nodes[b].value.data[i]);
                        self.nodes[a].grad[i] += grad[i] * bv;
                        self.nodes[b].grad[i] += grad[i] * av;
                    }
                }
                Op::Scale(a, c) => {
                    for (g, d) in self.nodes[a].grad.iter_mut().zip(&grad) {
                        *g += d * c;
                    }
                }
                Op::Tanh(a) => {
                    for i in 0..grad.len() {
                        let y = self.nodes[idx].value.data[i];
                        self.nodes[a].grad[i] += grad[i] * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    for i in 0..grad.len() {
                        let y = self.nodes[idx].value.data[i];
                        self.nodes[a].grad[i] += grad[i] * y * (1.0 - y);
                    }
                }
                Op::Relu(a) => {
                    for i in 0..grad.len() {
                        if self.nodes[a].value.data[i] > 0.0 {
                            self.nodes[a].grad[i] += grad[i];
                        }
                    }
                }
                Op::MeanRows(a) => {
                    let (r, c) = (self.nodes[a].value.rows, self.nodes[a].value.cols);
                    for i in 0..r {
                        for j in 0..c {
                            self.nodes[a].grad[i * c + j] += grad[j] / r as f64;
                        }
                    }
                }
                Op::SumAll(a) => {
                    for g in self.nodes[a].grad.iter_mut() {
                        *g += grad[0];
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (r, ca) = (self.nodes[a].value.rows, self.nodes[a].value.cols);
                    let cb = self.nodes[b].value.cols;
                    for i in 0..r {
                        for j in 0..ca {
                            self.nodes[a].grad[i * ca + j] += grad[i * (ca + cb) + j];
                        }
                        for j in 0..cb {
                            self.nodes[b].grad[i * cb + j] += grad[i * (ca + cb) + ca + j];
                        }
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let ca = self.nodes[a].value.cols;
                    let r = self.nodes[a].value.rows;
                    for i in 0..r {
                        for j in 0..len {
                            self.nodes[a].grad[i * ca + start + j] += grad[i * len + j];
                        }
                    }
                }
                Op::Row(a, r) => {
                    let c = self.nodes[a].value.cols;
                    for j in 0..c {
                        self.nodes[a].grad[r * c + j] += grad[j];
                    }
                }
                Op::StackRows(rows) => {
                    let c = grad.len() / rows.len();
                    for (i, src) in rows.iter().enumerate() {
                        for j in 0..c {
                            self.nodes[*src].grad[j] += grad[i * c + j];
                        }
                    }
                }
                Op::GatherMeanRows(a, indices) => {
                    if !indices.is_empty() {
                        let c = self.nodes[a].value.cols;
                        let w = 1.0 / indices.len() as f64;
                        for &i in &indices {
                            for j in 0..c {
                                self.nodes[a].grad[i * c + j] += grad[j] * w;
                            }
                        }
                    }
                }
                Op::L2NormRows(a) => {
                    let (r, c) = (self.nodes[a].value.rows, self.nodes[a].value.cols);
                    for i in 0..r {
                        let x = &self.nodes[a].value.data[i * c..(i + 1) * c];
                        let norm = (x.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
                        let y: Vec<f64> = x.iter().map(|v| v / norm).collect();
                        let g = &grad[i * c..(i + 1) * c];
                        let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            self.nodes[a].grad[i * c + j] += (g[j] - y[j] * dot) / norm;
                        }
                    }
                }
                Op::SoftmaxXent(a, target) => {
                    let p = super::softmax_vec(&self.nodes[a].value.data);
                    for (j, pj) in p.iter().enumerate() {
                        let delta = if j == target { 1.0 } else { 0.0 };
                        self.nodes[a].grad[j] += grad[0] * (pj - delta);
                    }
                }
            }
            self.nodes[idx].grad = grad;
        }
    }

    /// Accumulate parameter adjoints back into the store's gradient buffers.
    pub fn write_grads(&self, store: &mut super::ParamStore) {
        for (name, var) in &self.params {
            store.accumulate_grad(name, &self.nodes[var.0].grad);
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Dense layer: x (r,in) * w (in,out) + b (1,out).
pub fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let xw = tape.matmul(x, w);
    tape.add_row(xw, b)
}

/// Classical four-gate LSTM cell over a single timestep.
///
/// `w` is ((in+hidden), 4*hidden), gate order [i, f, o, g]; `b` is
/// (1, 4*hidden). Returns (h', c').
pub fn lstm_cell(tape: &mut Tape, x: Var, h: Var, c: Var, w: Var, b: Var) -> (Var, Var) {
    let hidden = tape.value(h).cols;
    let xh = tape.concat_cols(x, h);
    let gates = dense(tape, xh, w, b);
    let i_raw = tape.slice_cols(gates, 0, hidden);
    let f_raw = tape.slice_cols(gates, hidden, hidden);
    let o_raw = tape.slice_cols(gates, 2 * hidden, hidden);
    let g_raw = tape.slice_cols(gates, 3 * hidden, hidden);
    let i = tape.sigmoid(i_raw);
    let f = tape.sigmoid(f_raw);
    let o = tape.sigmoid(o_raw);
    let g = tape.tanh(g_raw);
    let fc = tape.mul_elem(f, c);
    let ig = tape.mul_elem(i, g);
    let c_new = tape.add(fc, ig);
    let c_tanh = tape.tanh(c_new);
    let h_new = tape.mul_elem(o, c_tanh);
    (h_new, c_new)
}
