//! Reverse-mode automatic differentiation over 2-D matrices.
//!
//! A [`Graph`] records operations in execution order; [`Graph::backward`]
//! walks the record in reverse and accumulates gradients. Parameters are
//! borrowed, never copied: their gradients land directly in caller-owned
//! buffers indexed like [`Params`].

use super::tensor::Params;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

pub const LAYER_NORM_EPS: f64 = 1e-12;
pub const BCE_CLAMP: f64 = 1e-12;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

enum Op {
    Input,
    Param(usize),
    Gather { table: Var, ids: Vec<usize> },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Softmax(Var),
    Columns { x: Var, start: usize },
    Rows { x: Var, start: usize },
    Concat(Vec<Var>),
    Bce { pred: Var, label: f64 },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p Params,
    nodes: Vec<Node>,
}

/// `out[n, m] += a[n, k] * b[k, m]`
fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
}

/// `out[n, m] += a[n, k] * b[m, k]^T`
fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * m + j] += s;
        }
    }
}

/// `out[ka, kb] += x[n, ka]^T * y[n, kb]`
fn matmul_tn_acc(x: &[f64], y: &[f64], out: &mut [f64], n: usize, ka: usize, kb: usize) {
    for i in 0..n {
        let yrow = &y[i * kb..(i + 1) * kb];
        for r in 0..ka {
            let v = x[i * ka + r];
            if v == 0.0 {
                continue;
            }
            let orow = &mut out[r * kb..(r + 1) * kb];
            for (o, &w) in orow.iter_mut().zip(yrow) {
                *o += v * w;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Clamped binary cross-entropy on a probability.
pub fn bce(pred: f64, label: f64) -> f64 {
    let p = pred.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p Params) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(i) => self.params.tensors()[i].values(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.dims(v), (1, 1));
        self.value(v)[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(value.len(), rows * cols, "input shape");
        self.push(rows, cols, value, Op::Input)
    }

    pub fn param(&mut self, index: usize) -> Var {
        let (rows, cols) = self.params.tensors()[index].matrix_dims();
        self.push(rows, cols, Vec::new(), Op::Param(index))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let (_, cols) = self.dims(table);
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            out.extend_from_slice(&t[id * cols..(id + 1) * cols]);
        }
        self.push(ids.len(), cols, out, Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "add shapes");
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(r, c, out, Op::Add(a, b))
    }

    /// Adds the single-row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!(self.dims(b), (1, c), "add_row shapes");
        let bv = self.value(b);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            for (o, y) in row.iter_mut().zip(bv) {
                *o += y;
            }
        }
        self.push(r, c, out, Op::AddRow(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "mul shapes");
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push(r, c, out, Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.dims(a);
        let (k2, m) = self.dims(b);
        assert_eq!(k, k2, "matmul inner dims");
        let mut out = vec![0.0; n * m];
        matmul_acc(self.value(a), self.value(b), &mut out, n, k, m);
        self.push(n, m, out, Op::MatMul(a, b))
    }

    /// `a * b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.dims(a);
        let (m, k2) = self.dims(b);
        assert_eq!(k, k2, "matmul_t inner dims");
        let mut out = vec![0.0; n * m];
        matmul_nt_acc(self.value(a), self.value(b), &mut out, n, k, m);
        self.push(n, m, out, Op::MatMulT(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|x| x * factor).collect();
        self.push(r, c, out, Op::Scale(a, factor))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&x| gelu(x)).collect();
        self.push(r, c, out, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(r, c, out, Op::Sigmoid(a))
    }

    /// Row-wise layer normalization with learned gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (r, c) = self.dims(x);
        assert_eq!(self.dims(gain), (1, c), "layer_norm gain");
        assert_eq!(self.dims(bias), (1, c), "layer_norm bias");
        let xv = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in xv.chunks(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        self.push(r, c, out, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    /// Row-wise softmax over the columns where `key_mask` is true; masked
    /// columns get exactly zero weight.
    pub fn masked_softmax(&mut self, x: Var, key_mask: &[bool]) -> Var {
        let (r, c) = self.dims(x);
        assert_eq!(key_mask.len(), c, "softmax mask length");
        let xv = self.value(x);
        let mut out = vec![0.0; r * c];
        for (row, orow) in xv.chunks(c).zip(out.chunks_mut(c)) {
            let max = row
                .iter()
                .zip(key_mask)
                .filter(|(_, &m)| m)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for ((o, v), &m) in orow.iter_mut().zip(row).zip(key_mask) {
                if m {
                    *o = (v - max).exp();
                    sum += *o;
                }
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        self.push(r, c, out, Op::Softmax(x))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let (_, c) = self.dims(x);
        self.masked_softmax(x, &vec![true; c])
    }

    pub fn columns(&mut self, x: Var, start: usize, width: usize) -> Var {
        let (r, c) = self.dims(x);
        assert!(start + width <= c, "column slice out of range");
        let xv = self.value(x);
        let mut out = Vec::with_capacity(r * width);
        for row in xv.chunks(c) {
            out.extend_from_slice(&row[start..start + width]);
        }
        self.push(r, width, out, Op::Columns { x, start })
    }

    pub fn rows(&mut self, x: Var, start: usize, count: usize) -> Var {
        let (r, c) = self.dims(x);
        assert!(start + count <= r, "row slice out of range");
        let out = self.value(x)[start * c..(start + count) * c].to_vec();
        self.push(count, c, out, Op::Rows { x, start })
    }

    /// Concatenates along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let r = self.dims(parts[0]).0;
        assert!(parts.iter().all(|&p| self.dims(p).0 == r), "concat rows");
        let c: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                let pc = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[i * pc..(i + 1) * pc]);
            }
        }
        self.push(r, c, out, Op::Concat(parts.to_vec()))
    }

    /// Clamped binary cross-entropy of a 1x1 probability.
    pub fn bce(&mut self, pred: Var, label: f64) -> Var {
        let loss = bce(self.scalar(pred), label);
        self.push(1, 1, vec![loss], Op::Bce { pred, label })
    }

    /// Backpropagates from the scalar `root`, adding parameter gradients
    /// into `param_grads` (one buffer per parameter, as from
    /// [`Params::zero_grads`]).
    pub fn backward(&self, root: Var, param_grads: &mut [Vec<f64>]) {
        assert_eq!(self.dims(root), (1, 1), "backward needs a scalar root");
        assert_eq!(param_grads.len(), self.params.len(), "one buffer per parameter");
        let mut grads: Vec<Vec<f64>> = (0..self.nodes.len()).map(|_| Vec::new()).collect();
        grads[root.0] = vec![1.0];

        for id in (0..=root.0).rev() {
            let upstream = std::mem::take(&mut grads[id]);
            if upstream.is_empty() {
                continue;
            }
            let node = &self.nodes[id];
            let mut store = GradStore {
                graph: self,
                grads: &mut grads,
                params: param_grads,
            };
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::Gather { table, ids } => {
                    let c = node.cols;
                    let g = store.slot(*table);
                    for (k, &id) in ids.iter().enumerate() {
                        for (o, d) in g[id * c..(id + 1) * c].iter_mut().zip(&upstream[k * c..]) {
                            *o += d;
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(store.slot(*a), &upstream);
                    add_into(store.slot(*b), &upstream);
                }
                Op::AddRow(a, b) => {
                    add_into(store.slot(*a), &upstream);
                    let gb = store.slot(*b);
                    for row in upstream.chunks(node.cols) {
                        add_into(gb, row);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    for ((o, d), y) in store.slot(*a).iter_mut().zip(&upstream).zip(bv) {
                        *o += d * y;
                    }
                    for ((o, d), x) in store.slot(*b).iter_mut().zip(&upstream).zip(av) {
                        *o += d * x;
                    }
                }
                Op::MatMul(a, b) => {
                    let (n, k) = self.dims(*a);
                    let m = node.cols;
                    let (av, bv) = (self.value(*a), self.value(*b));
                    matmul_nt_acc(&upstream, bv, store.slot(*a), n, m, k);
                    matmul_tn_acc(av, &upstream, store.slot(*b), n, k, m);
                }
                Op::MatMulT(a, b) => {
                    let (n, k) = self.dims(*a);
                    let m = node.cols;
                    let (av, bv) = (self.value(*a), self.value(*b));
                    matmul_acc(&upstream, bv, store.slot(*a), n, m, k);
                    matmul_tn_acc(&upstream, av, store.slot(*b), n, m, k);
                }
                Op::Scale(a, factor) => {
                    for (o, d) in store.slot(*a).iter_mut().zip(&upstream) {
                        *o += d * factor;
                    }
                }
                Op::Gelu(a) => {
                    let av = self.value(*a);
                    for ((o, d), &x) in store.slot(*a).iter_mut().zip(&upstream).zip(av) {
                        *o += d * gelu_grad(x);
                    }
                }
                Op::Sigmoid(a) => {
                    for ((o, d), y) in store.slot(*a).iter_mut().zip(&upstream).zip(&node.value) {
                        *o += d * y * (1.0 - y);
                    }
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let c = node.cols;
                    let g = self.value(*gain);
                    let mut dx = vec![0.0; upstream.len()];
                    for (i, (drow, hrow)) in upstream.chunks(c).zip(xhat.chunks(c)).enumerate() {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..c {
                            let dh = drow[j] * g[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hrow[j];
                        }
                        let scale = inv_std[i] / c as f64;
                        for j in 0..c {
                            let dh = drow[j] * g[j];
                            dx[i * c + j] = scale * (c as f64 * dh - sum_dh - hrow[j] * sum_dh_h);
                        }
                    }
                    add_into(store.slot(*x), &dx);
                    let gg = store.slot(*gain);
                    for (drow, hrow) in upstream.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            gg[j] += drow[j] * hrow[j];
                        }
                    }
                    let gb = store.slot(*bias);
                    for drow in upstream.chunks(c) {
                        add_into(gb, drow);
                    }
                }
                Op::Softmax(a) => {
                    let c = node.cols;
                    let ga = store.slot(*a);
                    for (i, (drow, yrow)) in upstream.chunks(c).zip(node.value.chunks(c)).enumerate() {
                        let dot: f64 = drow.iter().zip(yrow).map(|(d, y)| d * y).sum();
                        for j in 0..c {
                            ga[i * c + j] += yrow[j] * (drow[j] - dot);
                        }
                    }
                }
                Op::Columns { x, start } => {
                    let xc = self.dims(*x).1;
                    let w = node.cols;
                    let gx = store.slot(*x);
                    for (i, drow) in upstream.chunks(w).enumerate() {
                        add_into(&mut gx[i * xc + start..i * xc + start + w], drow);
                    }
                }
                Op::Rows { x, start } => {
                    let c = node.cols;
                    let gx = store.slot(*x);
                    add_into(&mut gx[start * c..start * c + upstream.len()], &upstream);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.dims(p).1;
                        let gp = store.slot(p);
                        for (i, drow) in upstream.chunks(node.cols).enumerate() {
                            add_into(&mut gp[i * pc..(i + 1) * pc], &drow[offset..offset + pc]);
                        }
                        offset += pc;
                    }
                }
                Op::Bce { pred, label } => {
                    let p = self.scalar(*pred);
                    let d = if p <= BCE_CLAMP || p >= 1.0 - BCE_CLAMP {
                        0.0
                    } else {
                        -label / p + (1.0 - label) / (1.0 - p)
                    };
                    store.slot(*pred)[0] += upstream[0] * d;
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, s) in dst.iter_mut().zip(src) {
        *o += s;
    }
}

struct GradStore<'a, 'g, 'p> {
    graph: &'g Graph<'p>,
    grads: &'a mut [Vec<f64>],
    params: &'a mut [Vec<f64>],
}

impl GradStore<'_, '_, '_> {
    /// Gradient buffer for `v`, allocated on first use.
    fn slot(&mut self, v: Var) -> &mut [f64] {
        let node = &self.graph.nodes[v.0];
        match node.op {
            Op::Param(i) => &mut self.params[i],
            Op::Input => {
                // Inputs keep a buffer too so callers can inspect them.
                let g = &mut self.grads[v.0];
                if g.is_empty() {
                    *g = vec![0.0; node.rows * node.cols];
                }
                g
            }
            _ => {
                let g = &mut self.grads[v.0];
                if g.is_empty() {
                    *g = vec![0.0; node.rows * node.cols];
                }
                g
            }
        }
    }
}
