//! Reverse-mode differentiation over a per-sample tape of [`Mat`] values.
//!
//! A [`Graph`] is built by a forward pass, then [`Graph::backward`] walks it
//! in reverse and returns gradients for every parameter leaf. Graphs borrow
//! parameters from a [`ParamStore`] rather than copying them, and are cheap
//! to throw away after each sample.

use crate::error::{Error, Result};
use crate::objectives::losses;
use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::{gemm, Mat};

/// Node handle inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

enum Value {
    Owned(Mat),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    AddRow {
        x: Var,
        bias: Var,
    },
    Add(Var, Var),
    Combine(Vec<(Var, f64)>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    SoftmaxRows(Var),
    Attention {
        qkv: Var,
        heads: usize,
        probs: Vec<Mat>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    TransposedConv {
        x: Var,
        weight: Var,
        bias: Var,
        in_h: usize,
        in_w: usize,
    },
    Sigmoid(Var),
    ScalarMul(Var, Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    CosineMean {
        v: Var,
        targets: Mat,
    },
    Bce {
        p: Var,
        y: f64,
    },
    SmoothL1 {
        pred: Var,
        target: Mat,
    },
    Kl {
        target: Vec<f64>,
        p: Var,
    },
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Key-blocking mask for attention; `Some(j)` prevents every query from
/// attending to key `j` (except key `j` attending to itself).
pub type BlockedKey = Option<usize>;

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul { a, b, trans_b: false })
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Mat::zeros(av.rows, bv.rows);
        gemm(1.0, av, false, bv, true, 0.0, &mut out);
        self.push(out, Op::MatMul { a, b, trans_b: true })
    }

    /// Adds a `1×cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        assert_eq!(bv.rows, 1, "add_row: bias must be a row");
        assert_eq!(xv.cols, bv.cols, "add_row: width mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&bv.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow { x, bias })
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape(), "add: shape mismatch");
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Weighted sum of equally shaped nodes.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty());
        let (r, c) = self.value(terms[0].0).shape();
        let mut out = Mat::zeros(r, c);
        for &(v, w) in terms {
            let val = self.value(v);
            assert_eq!(val.shape(), (r, c), "combine: shape mismatch");
            for (o, x) in out.data.iter_mut().zip(&val.data) {
                *o += w * x;
            }
        }
        self.push(out, Op::Combine(terms.to_vec()))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        assert_eq!(g.cols, xv.cols, "layer_norm: gain width");
        let n = xv.cols as f64;
        let mut xhat = Mat::zeros(xv.rows, xv.cols);
        let mut out = Mat::zeros(xv.rows, xv.cols);
        let mut inv_std = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            let xh = xhat.row_mut(r);
            for (h, v) in xh.iter_mut().zip(row) {
                *h = (v - mean) * inv;
            }
            let o = out.row_mut(r);
            for c in 0..o.len() {
                o[c] = xh[c] * g.data[c] + b.data[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            let x = *v;
            let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
            *v = 0.5 * x * (1.0 + t);
        }
        self.push(out, Op::Gelu(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Mat::zeros(xv.rows, xv.cols);
        for r in 0..xv.rows {
            crate::tensor::softmax_into(xv.row(r), out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(x))
    }

    /// Multi-head scaled dot-product self-attention over a packed `n×3d`
    /// query/key/value matrix; returns the `n×d` concatenated head outputs.
    pub fn attention(&mut self, qkv: Var, heads: usize, blocked: BlockedKey) -> Var {
        let qv = self.value(qkv);
        let n = qv.rows;
        assert_eq!(qv.cols % 3, 0, "attention: packed width must be 3d");
        let d = qv.cols / 3;
        assert_eq!(d % heads, 0, "attention: width not divisible by heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros(n, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let q = columns(qv, h * dh, dh);
            let k = columns(qv, d + h * dh, dh);
            let v = columns(qv, 2 * d + h * dh, dh);
            let mut s = Mat::zeros(n, n);
            gemm(scale, &q, false, &k, true, 0.0, &mut s);
            if let Some(j) = blocked {
                for i in 0..n {
                    if i != j {
                        s.set(i, j, f64::NEG_INFINITY);
                    }
                }
            }
            let mut p = Mat::zeros(n, n);
            for i in 0..n {
                crate::tensor::softmax_into(s.row(i), p.row_mut(i));
            }
            let o = p.matmul(&v);
            for i in 0..n {
                out.row_mut(i)[h * dh..(h + 1) * dh].copy_from_slice(o.row(i));
            }
            probs.push(p);
        }
        self.push(out, Op::Attention { qkv, heads, probs })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols, cols, "concat_rows: width mismatch");
            data.extend_from_slice(&v.data);
            rows += v.rows;
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xv = self.value(x);
        assert!(start < end && end <= xv.rows, "slice_rows: bad range");
        let data = xv.data[start * xv.cols..end * xv.cols].to_vec();
        let out = Mat::from_vec(end - start, xv.cols, data);
        self.push(out, Op::SliceRows { x, start })
    }

    /// Stride-2, kernel-4, padding-1 transposed convolution.
    ///
    /// `x` holds an `in_h×in_w` grid as `(in_h·in_w)×c_in` rows; `weight` is
    /// `c_in × (16·c_out)` with tap `ky·4+kx` in column block `ky·4+kx`;
    /// output is a `2in_h×2in_w` grid as rows.
    pub fn transposed_conv(&mut self, x: Var, weight: Var, bias: Var, in_h: usize, in_w: usize) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(weight), self.value(bias));
        assert_eq!(xv.rows, in_h * in_w, "transposed_conv: grid mismatch");
        assert_eq!(wv.cols % 16, 0, "transposed_conv: weight width");
        let cout = wv.cols / 16;
        assert_eq!(bv.cols, cout, "transposed_conv: bias width");
        let taps = xv.matmul(wv);
        let (oh, ow) = (2 * in_h, 2 * in_w);
        let mut out = Mat::zeros(oh * ow, cout);
        for r in 0..out.rows {
            out.row_mut(r).copy_from_slice(&bv.data);
        }
        for i in 0..in_h {
            for j in 0..in_w {
                let trow = taps.row(i * in_w + j);
                for ky in 0..4 {
                    let oy = (2 * i + ky) as isize - 1;
                    if oy < 0 || oy >= oh as isize {
                        continue;
                    }
                    for kx in 0..4 {
                        let ox = (2 * j + kx) as isize - 1;
                        if ox < 0 || ox >= ow as isize {
                            continue;
                        }
                        let t = ky * 4 + kx;
                        let src = &trow[t * cout..(t + 1) * cout];
                        let dst = out.row_mut(oy as usize * ow + ox as usize);
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::TransposedConv {
                x,
                weight,
                bias,
                in_h,
                in_w,
            },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            *v = crate::tensor::sigmoid(*v);
        }
        self.push(out, Op::Sigmoid(x))
    }

    /// Product of two 1×1 nodes.
    pub fn scalar_mul(&mut self, a: Var, b: Var) -> Var {
        let out = Mat::scalar(self.value(a).item() * self.value(b).item());
        self.push(out, Op::ScalarMul(a, b))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            *v = v.clamp(lo, hi);
        }
        self.push(out, Op::Clamp { x, lo, hi })
    }

    /// Mean cosine similarity between the row `v` and each row of `targets`.
    pub fn cosine_mean(&mut self, v: Var, targets: &Mat) -> Result<Var> {
        let vv = self.value(v);
        let s = losses::mean_cosine(&vv.data, targets)?;
        Ok(self.push(
            Mat::scalar(s),
            Op::CosineMean {
                v,
                targets: targets.clone(),
            },
        ))
    }

    pub fn bce(&mut self, p: Var, y: f64) -> Result<Var> {
        let l = losses::bce(self.value(p).item(), y)?;
        Ok(self.push(Mat::scalar(l), Op::Bce { p, y }))
    }

    pub fn smooth_l1(&mut self, pred: Var, target: &Mat) -> Result<Var> {
        let l = losses::smooth_l1(self.value(pred), target)?;
        Ok(self.push(
            Mat::scalar(l),
            Op::SmoothL1 {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// `KL(target ‖ p)` with `p` a `1×M` probability row.
    pub fn kl(&mut self, target: &[f64], p: Var) -> Result<Var> {
        let l = losses::kl_weights(target, &self.value(p).data)?;
        Ok(self.push(
            Mat::scalar(l),
            Op::Kl {
                target: target.to_vec(),
                p,
            },
        ))
    }

    /// Reverse pass from a scalar node; returns parameter gradients.
    pub fn backward(&self, root: Var) -> Grads {
        self.backward_with_inputs(root, &[]).0
    }

    /// Like [`Graph::backward`], also returning gradients with respect to
    /// the given constant leaves (zeros where the root does not depend on them).
    pub fn backward_with_inputs(&self, root: Var, inputs: &[Var]) -> (Grads, Vec<Mat>) {
        assert_eq!(self.value(root).len(), 1, "backward: root must be scalar");
        let mut input_grads: Vec<Mat> = inputs
            .iter()
            .map(|v| {
                let (r, c) = self.value(*v).shape();
                Mat::zeros(r, c)
            })
            .collect();
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Mat::scalar(1.0));
        let mut out = Grads::empty(self.params.len());

        for idx in (0..=root.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let y = match &node.value {
                Value::Owned(m) => m,
                Value::Param(id) => self.params.get(*id),
            };
            match &node.op {
                Op::Leaf => {
                    for (slot, v) in input_grads.iter_mut().zip(inputs) {
                        if v.0 == idx {
                            slot.add_assign(&dy);
                        }
                    }
                }
                Op::Param(id) => out.accumulate(*id, &dy),
                Op::MatMul { a, b, trans_b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = Mat::zeros(av.rows, av.cols);
                    let mut db = Mat::zeros(bv.rows, bv.cols);
                    if *trans_b {
                        gemm(1.0, &dy, false, bv, false, 0.0, &mut da);
                        gemm(1.0, &dy, true, av, false, 0.0, &mut db);
                    } else {
                        gemm(1.0, &dy, false, bv, true, 0.0, &mut da);
                        gemm(1.0, av, true, &dy, false, 0.0, &mut db);
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::AddRow { x, bias } => {
                    let mut db = Mat::zeros(1, dy.cols);
                    for r in 0..dy.rows {
                        for (d, g) in db.data.iter_mut().zip(dy.row(r)) {
                            *d += g;
                        }
                    }
                    acc(&mut grads, *bias, db);
                    acc(&mut grads, *x, dy);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, dy.clone());
                    acc(&mut grads, *b, dy);
                }
                Op::Combine(terms) => {
                    for &(v, w) in terms {
                        let mut g = dy.clone();
                        g.scale(w);
                        acc(&mut grads, v, g);
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let g = self.value(*gain);
                    let n = dy.cols as f64;
                    let mut dx = Mat::zeros(dy.rows, dy.cols);
                    let mut dg = Mat::zeros(1, dy.cols);
                    let mut db = Mat::zeros(1, dy.cols);
                    let mut dxhat = vec![0.0; dy.cols];
                    for r in 0..dy.rows {
                        let (dyr, xh) = (dy.row(r), xhat.row(r));
                        let mut sum = 0.0;
                        let mut sum_x = 0.0;
                        for c in 0..dy.cols {
                            dg.data[c] += dyr[c] * xh[c];
                            db.data[c] += dyr[c];
                            dxhat[c] = dyr[c] * g.data[c];
                            sum += dxhat[c];
                            sum_x += dxhat[c] * xh[c];
                        }
                        let inv = inv_std[r];
                        let dxr = dx.row_mut(r);
                        for c in 0..dxr.len() {
                            dxr[c] = inv * (dxhat[c] - sum / n - xh[c] * sum_x / n);
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gain, dg);
                    acc(&mut grads, *bias, db);
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let mut dx = dy;
                    for (d, &x) in dx.data.iter_mut().zip(&xv.data) {
                        let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        *d *= 0.5 * (1.0 + t) + 0.5 * x * dt;
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::SoftmaxRows(x) => {
                    let mut dx = Mat::zeros(dy.rows, dy.cols);
                    for r in 0..dy.rows {
                        let (yr, dyr) = (y.row(r), dy.row(r));
                        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d = yr[c] * (dyr[c] - dot);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Attention { qkv, heads, probs } => {
                    let qv = self.value(*qkv);
                    let n = qv.rows;
                    let d = qv.cols / 3;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dqkv = Mat::zeros(n, 3 * d);
                    for (h, p) in probs.iter().enumerate() {
                        let q = columns(qv, h * dh, dh);
                        let k = columns(qv, d + h * dh, dh);
                        let v = columns(qv, 2 * d + h * dh, dh);
                        let dout = columns(&dy, h * dh, dh);
                        let mut dv = Mat::zeros(n, dh);
                        gemm(1.0, p, true, &dout, false, 0.0, &mut dv);
                        let mut dp = Mat::zeros(n, n);
                        gemm(1.0, &dout, false, &v, true, 0.0, &mut dp);
                        let mut ds = Mat::zeros(n, n);
                        for i in 0..n {
                            let (pr, dpr) = (p.row(i), dp.row(i));
                            let dot: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
                            for (j, s) in ds.row_mut(i).iter_mut().enumerate() {
                                *s = pr[j] * (dpr[j] - dot);
                            }
                        }
                        let mut dq = Mat::zeros(n, dh);
                        gemm(scale, &ds, false, &k, false, 0.0, &mut dq);
                        let mut dk = Mat::zeros(n, dh);
                        gemm(scale, &ds, true, &q, false, 0.0, &mut dk);
                        for i in 0..n {
                            let row = dqkv.row_mut(i);
                            row[h * dh..(h + 1) * dh].copy_from_slice(dq.row(i));
                            row[d + h * dh..d + (h + 1) * dh].copy_from_slice(dk.row(i));
                            row[2 * d + h * dh..2 * d + (h + 1) * dh].copy_from_slice(dv.row(i));
                        }
                    }
                    acc(&mut grads, *qkv, dqkv);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows;
                        let data = dy.data[offset * dy.cols..(offset + rows) * dy.cols].to_vec();
                        acc(&mut grads, p, Mat::from_vec(rows, dy.cols, data));
                        offset += rows;
                    }
                }
                Op::SliceRows { x, start } => {
                    let xv = self.value(*x);
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    dx.data[start * xv.cols..start * xv.cols + dy.len()].copy_from_slice(&dy.data);
                    acc(&mut grads, *x, dx);
                }
                Op::TransposedConv {
                    x,
                    weight,
                    bias,
                    in_h,
                    in_w,
                } => {
                    let (xv, wv) = (self.value(*x), self.value(*weight));
                    let cout = wv.cols / 16;
                    let (oh, ow) = (2 * in_h, 2 * in_w);
                    let mut dtaps = Mat::zeros(in_h * in_w, 16 * cout);
                    for i in 0..*in_h {
                        for j in 0..*in_w {
                            let trow = dtaps.row_mut(i * in_w + j);
                            for ky in 0..4 {
                                let oy = (2 * i + ky) as isize - 1;
                                if oy < 0 || oy >= oh as isize {
                                    continue;
                                }
                                for kx in 0..4 {
                                    let ox = (2 * j + kx) as isize - 1;
                                    if ox < 0 || ox >= ow as isize {
                                        continue;
                                    }
                                    let t = ky * 4 + kx;
                                    trow[t * cout..(t + 1) * cout]
                                        .copy_from_slice(dy.row(oy as usize * ow + ox as usize));
                                }
                            }
                        }
                    }
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    gemm(1.0, &dtaps, false, wv, true, 0.0, &mut dx);
                    let mut dw = Mat::zeros(wv.rows, wv.cols);
                    gemm(1.0, xv, true, &dtaps, false, 0.0, &mut dw);
                    let mut db = Mat::zeros(1, cout);
                    for r in 0..dy.rows {
                        for (d, g) in db.data.iter_mut().zip(dy.row(r)) {
                            *d += g;
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *weight, dw);
                    acc(&mut grads, *bias, db);
                }
                Op::Sigmoid(x) => {
                    let mut dx = dy;
                    for (d, s) in dx.data.iter_mut().zip(&y.data) {
                        *d *= s * (1.0 - s);
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::ScalarMul(a, b) => {
                    let (av, bv) = (self.value(*a).item(), self.value(*b).item());
                    let g = dy.item();
                    acc(&mut grads, *a, Mat::scalar(g * bv));
                    acc(&mut grads, *b, Mat::scalar(g * av));
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = self.value(*x);
                    let mut dx = dy;
                    for (d, v) in dx.data.iter_mut().zip(&xv.data) {
                        if v < lo || v > hi {
                            *d = 0.0;
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::CosineMean { v, targets } => {
                    let vv = self.value(*v);
                    let g = losses::mean_cosine_grad(&vv.data, targets);
                    let k = dy.item();
                    let dv = Mat::from_vec(vv.rows, vv.cols, g.into_iter().map(|x| x * k).collect());
                    acc(&mut grads, *v, dv);
                }
                Op::Bce { p, y: label } => {
                    let pv = self.value(*p).item();
                    acc(&mut grads, *p, Mat::scalar(dy.item() * losses::bce_grad(pv, *label)));
                }
                Op::SmoothL1 { pred, target } => {
                    let pv = self.value(*pred);
                    let mut g = losses::smooth_l1_grad(pv, target);
                    g.scale(dy.item());
                    acc(&mut grads, *pred, g);
                }
                Op::Kl { target, p } => {
                    let pv = self.value(*p);
                    let g = losses::kl_weights_grad(target, &pv.data);
                    let k = dy.item();
                    let dp = Mat::from_vec(pv.rows, pv.cols, g.into_iter().map(|x| x * k).collect());
                    acc(&mut grads, *p, dp);
                }
            }
        }
        (out, input_grads)
    }
}

fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn columns(m: &Mat, start: usize, width: usize) -> Mat {
    let mut out = Mat::zeros(m.rows, width);
    for r in 0..m.rows {
        out.row_mut(r).copy_from_slice(&m.row(r)[start..start + width]);
    }
    out
}

/// Checks that a value is finite, naming the offending quantity otherwise.
pub fn ensure_finite(m: &Mat, what: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::gradcheck::grad_check;
    use crate::params::trunc_normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Builds a store from random matrices, runs `f` on a graph, and checks
    /// analytic gradients against central differences.
    fn check<F>(shapes: &[(usize, usize)], seed: u64, f: F) -> f64
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (i, &(r, c)) in shapes.iter().enumerate() {
            store.insert(format!("p{i}"), trunc_normal(&mut rng, r, c, 0.5));
        }
        let eval = |store: &ParamStore| -> (f64, Vec<f64>) {
            let mut g = Graph::new(store);
            let vars: Vec<Var> = store.ids().map(|id| g.param(id)).collect();
            let root = f(&mut g, &vars);
            let grads = g.backward(root);
            (g.value(root).item(), grads.flatten(store))
        };
        let x0 = store.flatten();
        let analytic = eval(&store).1;
        let mut work = store.clone();
        let report = grad_check(
            |x| {
                work.assign_flat(x);
                Ok(eval(&work).0)
            },
            &x0,
            &analytic,
            1e-5,
        )
        .unwrap();
        report.max_rel_err
    }

    /// Reduces any node to a scalar with fixed random weights so every entry
    /// of the node carries a distinct gradient.
    fn reduce(g: &mut Graph, x: Var) -> Var {
        let (r, c) = g.value(x).shape();
        let w: Vec<f64> = (0..r * c).map(|i| ((i as f64) * 0.7).sin()).collect();
        let w = g.constant(Mat::from_vec(r * c, 1, w));
        let mut rows = Vec::new();
        for i in 0..r {
            let row = g.slice_rows(x, i, i + 1);
            let wi = g.slice_rows(w, i * c, (i + 1) * c);
            rows.push(g.matmul(row, wi));
        }
        let terms: Vec<(Var, f64)> = rows.into_iter().map(|v| (v, 1.0)).collect();
        g.combine(&terms)
    }

    #[test]
    fn matmul_and_bias() {
        let err = check(&[(3, 4), (4, 2), (1, 2)], 1, |g, v| {
            let y = g.linear(v[0], v[1], v[2]);
            reduce(g, y)
        });
        assert!(err < 1e-7, "{err}");
        let err = check(&[(3, 4), (2, 4)], 2, |g, v| {
            let y = g.matmul_nt(v[0], v[1]);
            reduce(g, y)
        });
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn layer_norm_gelu_softmax() {
        let err = check(&[(3, 5), (1, 5), (1, 5)], 3, |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2]);
            let y = g.gelu(y);
            let y = g.softmax_rows(y);
            reduce(g, y)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn attention_with_and_without_block() {
        for blocked in [None, Some(4)] {
            let err = check(&[(5, 12)], 4, |g, v| {
                let y = g.attention(v[0], 2, blocked);
                reduce(g, y)
            });
            assert!(err < 1e-6, "{blocked:?}: {err}");
        }
    }

    #[test]
    fn transposed_conv() {
        let err = check(&[(6, 3), (3, 16 * 2), (1, 2)], 5, |g, v| {
            let y = g.transposed_conv(v[0], v[1], v[2], 2, 3);
            assert_eq!(g.value(y).shape(), (4 * 6, 2));
            reduce(g, y)
        });
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn transposed_conv_matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (h, w, cin, cout) = (3, 2, 2, 3);
        let mut store = ParamStore::new();
        let x = store.insert("x", trunc_normal(&mut rng, h * w, cin, 1.0));
        let k = store.insert("k", trunc_normal(&mut rng, cin, 16 * cout, 1.0));
        let b = store.insert("b", trunc_normal(&mut rng, 1, cout, 1.0));
        let mut g = Graph::new(&store);
        let (xv, kv, bv) = (g.param(x), g.param(k), g.param(b));
        let y = g.transposed_conv(xv, kv, bv, h, w);
        let got = g.value(y).clone();
        // out[oy, ox, co] = b[co] + Σ x[i, j, ci] · k[ky, kx, ci, co] over oy = 2i-1+ky.
        let (xm, km, bm) = (store.get(x), store.get(k), store.get(b));
        for oy in 0..2 * h {
            for ox in 0..2 * w {
                for co in 0..cout {
                    let mut s = bm.data[co];
                    for i in 0..h {
                        for j in 0..w {
                            let ky = oy as isize + 1 - 2 * i as isize;
                            let kx = ox as isize + 1 - 2 * j as isize;
                            if !(0..4).contains(&ky) || !(0..4).contains(&kx) {
                                continue;
                            }
                            let t = (ky * 4 + kx) as usize;
                            for ci in 0..cin {
                                s += xm.get(i * w + j, ci) * km.get(ci, t * cout + co);
                            }
                        }
                    }
                    assert!((got.get(oy * 2 * w + ox, co) - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn scalar_ops_and_losses() {
        let err = check(&[(1, 1), (1, 1)], 6, |g, v| {
            let k = g.clamp(v[1], -5.0, 5.0);
            let ks = g.scalar_mul(v[0], k);
            let p = g.sigmoid(ks);
            g.bce(p, 1.0).unwrap()
        });
        assert!(err < 1e-7, "{err}");

        let targets = Mat::from_vec(3, 4, (0..12).map(|i| (i as f64 * 1.3).cos()).collect());
        let err = check(&[(1, 4)], 7, |g, v| g.cosine_mean(v[0], &targets).unwrap());
        assert!(err < 1e-7, "{err}");

        let target = Mat::from_vec(2, 3, vec![0.1, 0.9, -0.4, 2.5, 0.0, 0.3]);
        let err = check(&[(2, 3)], 8, |g, v| g.smooth_l1(v[0], &target).unwrap());
        assert!(err < 1e-7, "{err}");

        let err = check(&[(1, 4)], 9, |g, v| {
            let p = g.softmax_rows(v[0]);
            g.kl(&[0.5, 0.0, 0.3, 0.2], p).unwrap()
        });
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn concat_slice_add() {
        let err = check(&[(2, 3), (1, 3), (3, 3)], 10, |g, v| {
            let c = g.concat_rows(&[v[0], v[1]]);
            let s = g.add(c, v[2]);
            let t = g.slice_rows(s, 1, 3);
            let u = g.combine(&[(t, 2.0), (t, -0.5)]);
            reduce(g, u)
        });
        assert!(err < 1e-7, "{err}");
    }
}
