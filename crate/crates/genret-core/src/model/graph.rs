//! Reverse-mode tape over matrix ops used by the transformer.
//!
//! Parameters are read from the borrowed parameter list and their gradients
//! are accumulated into a matching list; only activations live on the tape.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng as _;

use super::matrix::{gemm, Matrix};
use crate::seed::Rng;

pub(crate) type NodeId = usize;

const LN_EPS: f64 = 1e-6;

/// Query rows `q0..q0+qn` attend to key rows `k0..k0+kn`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Segment {
    pub q0: usize,
    pub qn: usize,
    pub k0: usize,
    pub kn: usize,
}

enum Op {
    Input,
    Embed { table: usize, ids: Vec<u32> },
    Linear { x: NodeId, w: usize, b: usize },
    Add(NodeId, NodeId),
    Relu(NodeId),
    LayerNorm { x: NodeId, gain: usize, bias: usize, xhat: Matrix, rstd: Vec<f64> },
    Dropout { x: NodeId, mask: Vec<f64> },
    Attention { q: NodeId, k: NodeId, v: NodeId, segs: Vec<Segment>, heads: usize, probs: Vec<f64> },
    Project { x: NodeId, table: usize, scale: f64 },
    Pawa { h: NodeId, adapt: NodeId, table: usize, scale: f64, u: Matrix },
    CrossEntropy { logits: NodeId, targets: Vec<Option<u32>>, probs: Matrix, count: usize },
    SymKl { a: NodeId, b: NodeId, pa: Matrix, pb: Matrix },
    Contrastive { h1: NodeId, h2: NodeId, groups: Vec<Vec<usize>> },
    Weighted(Vec<(NodeId, f64)>),
}

struct Node {
    value: Matrix,
    op: Op,
}

pub(crate) struct Graph<'p> {
    params: &'p [Matrix],
    nodes: Vec<Node>,
    dropout: Option<(f64, Rng)>,
}

/// Sinusoidal position code for `pos`, dimension `i` of `d`.
#[inline]
pub(crate) fn position_code(pos: usize, i: usize, d: usize) -> f64 {
    let pair = (i / 2) as f64;
    let angle = pos as f64 / Float::powf(10_000.0f64, 2.0 * pair / d as f64);
    if i % 2 == 0 {
        angle.sin()
    } else {
        angle.cos()
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::neg_infinity(), f64::max);
    if !max.is_finite() {
        // propagates NaN/Inf instead of hiding it
        row.iter_mut().for_each(|x| *x = f64::nan());
        return;
    }
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    row.iter_mut().for_each(|x| *x /= sum);
}

/// Row-wise softmax.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut p = m.clone();
    for r in 0..p.rows {
        softmax_in_place(p.row_mut(r));
    }
    p
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p [Matrix], dropout: Option<(f64, Rng)>) -> Self {
        let dropout = dropout.filter(|(p, _)| *p > 0.0);
        Graph { params, nodes: Vec::new(), dropout }
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id].value.data[0]
    }

    pub fn input(&mut self, m: Matrix) -> NodeId {
        self.push(m, Op::Input)
    }

    /// Embedding lookup plus sinusoidal position codes.
    pub fn embed(&mut self, table: usize, ids: &[u32], positions: &[usize]) -> NodeId {
        let t = &self.params[table];
        let d = t.cols;
        let mut out = Matrix::zeros(ids.len(), d);
        for (r, (&id, &pos)) in ids.iter().zip(positions).enumerate() {
            let src = t.row(id as usize);
            for (i, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = src[i] + position_code(pos, i, d);
            }
        }
        self.push(out, Op::Embed { table, ids: ids.to_vec() })
    }

    pub fn linear(&mut self, x: NodeId, w: usize, b: usize) -> NodeId {
        let xv = &self.nodes[x].value;
        let wm = &self.params[w];
        let bias = &self.params[b];
        let mut out = Matrix::zeros(xv.rows, wm.cols);
        for r in 0..out.rows {
            out.row_mut(r).copy_from_slice(&bias.data);
        }
        gemm(xv.rows, xv.cols, wm.cols, &xv.data, false, &wm.data, false, &mut out.data, 1.0);
        self.push(out, Op::Linear { x, w, b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.nodes[a].value.clone();
        out.add_assign(&self.nodes[b].value);
        self.push(out, Op::Add(a, b))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.nodes[x].value.clone();
        out.data.iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: usize, bias: usize) -> NodeId {
        let xv = &self.nodes[x].value;
        let (g, b) = (&self.params[gain].data, &self.params[bias].data);
        let d = xv.cols;
        let mut xhat = Matrix::zeros(xv.rows, d);
        let mut out = Matrix::zeros(xv.rows, d);
        let mut rstd = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(s);
            for i in 0..d {
                let h = (row[i] - mean) * s;
                xhat.data[r * d + i] = h;
                out.data[r * d + i] = h * g[i] + b[i];
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, rstd })
    }

    /// Inverted dropout; identity when the graph has no dropout stream.
    pub fn dropout(&mut self, x: NodeId) -> NodeId {
        let Some((p, rng)) = self.dropout.as_mut() else { return x };
        let p = *p;
        let keep = 1.0 / (1.0 - p);
        let n = self.nodes[x].value.len();
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let mut out = self.nodes[x].value.clone();
        for (o, m) in out.data.iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(out, Op::Dropout { x, mask })
    }

    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, segs: &[Segment], heads: usize, causal: bool) -> NodeId {
        let (qv, kv, vv) = (&self.nodes[q].value, &self.nodes[k].value, &self.nodes[v].value);
        let d = qv.cols;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Matrix::zeros(qv.rows, d);
        let mut probs = Vec::new();
        let mut scores = Vec::new();
        for s in segs {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..s.qn {
                    let qi = &qv.row(s.q0 + i)[off..off + dh];
                    let visible = if causal { (i + 1).min(s.kn) } else { s.kn };
                    scores.clear();
                    scores.extend((0..visible).map(|j| dot(qi, &kv.row(s.k0 + j)[off..off + dh]) * scale));
                    softmax_in_place(&mut scores);
                    let o = &mut out.data[(s.q0 + i) * d + off..(s.q0 + i) * d + off + dh];
                    for (j, &p) in scores.iter().enumerate() {
                        axpy(p, &vv.row(s.k0 + j)[off..off + dh], o);
                    }
                    probs.extend_from_slice(&scores);
                    probs.extend(core::iter::repeat_n(0.0, s.kn - visible));
                }
            }
        }
        self.push(out, Op::Attention { q, k, v, segs: segs.to_vec(), heads, probs })
    }

    /// `scale * x * table^T`: logits against the rows of a parameter table.
    pub fn project(&mut self, x: NodeId, table: usize, scale: f64) -> NodeId {
        let xv = &self.nodes[x].value;
        let t = &self.params[table];
        let mut out = Matrix::zeros(xv.rows, t.rows);
        gemm(xv.rows, xv.cols, t.rows, &xv.data, false, &t.data, true, &mut out.data, 0.0);
        if scale != 1.0 {
            out.data.iter_mut().for_each(|v| *v *= scale);
        }
        self.push(out, Op::Project { x, table, scale })
    }

    /// Prefix-adapted projection: row `r` uses `(I + A_r) h_r` in place of
    /// `h_r`, with `A_r` the `d x d` reshape of `adapt[r]`.
    pub fn pawa(&mut self, h: NodeId, adapt: NodeId, table: usize, scale: f64) -> NodeId {
        let hv = &self.nodes[h].value;
        let av = &self.nodes[adapt].value;
        let d = hv.cols;
        let mut u = hv.clone();
        for r in 0..hv.rows {
            let a = av.row(r);
            let hr = hv.row(r);
            let ur = u.row_mut(r);
            for i in 0..d {
                ur[i] += dot(&a[i * d..(i + 1) * d], hr);
            }
        }
        let t = &self.params[table];
        let mut out = Matrix::zeros(hv.rows, t.rows);
        gemm(hv.rows, d, t.rows, &u.data, false, &t.data, true, &mut out.data, 0.0);
        out.data.iter_mut().for_each(|v| *v *= scale);
        self.push(out, Op::Pawa { h, adapt, table, scale, u })
    }

    /// Mean token cross-entropy over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<u32>]) -> NodeId {
        let probs = softmax_rows(&self.nodes[logits].value);
        let mut total = 0.0;
        let mut count = 0;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                total -= probs.get(r, *t as usize).ln();
                count += 1;
            }
        }
        let value = if count == 0 { 0.0 } else { total / count as f64 };
        self.push(Matrix::from_vec(1, 1, vec![value]), Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count })
    }

    /// Row-averaged symmetric KL between the softmaxes of two logit matrices.
    pub fn sym_kl(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let pa = softmax_rows(&self.nodes[a].value);
        let pb = softmax_rows(&self.nodes[b].value);
        let value = super::loss::sym_kl_rows(&pa, &pb);
        self.push(Matrix::from_vec(1, 1, vec![value]), Op::SymKl { a, b, pa, pb })
    }

    /// In-batch contrastive loss between two passes' hidden rows. Rows in a
    /// group share a decoding position; each row anchors once.
    pub fn contrastive(&mut self, h1: NodeId, h2: NodeId, groups: &[Vec<usize>]) -> NodeId {
        let value = super::loss::contrastive_value(&self.nodes[h1].value, &self.nodes[h2].value, groups);
        self.push(Matrix::from_vec(1, 1, vec![value]), Op::Contrastive { h1, h2, groups: groups.to_vec() })
    }

    pub fn weighted(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        let v = terms.iter().map(|&(n, w)| w * self.scalar(n)).sum();
        self.push(Matrix::from_vec(1, 1, vec![v]), Op::Weighted(terms.to_vec()))
    }

    /// Accumulates d(root)/d(param) into `grads`.
    pub fn backward(&self, root: NodeId, grads: &mut [Matrix]) {
        let mut g: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        g[root] = Some(Matrix::from_vec(1, 1, vec![1.0]));
        for id in (0..=root).rev() {
            let Some(dy) = g[id].take() else { continue };
            self.backward_node(id, &dy, &mut g, grads);
        }
    }

    fn grad_of<'g>(&self, g: &'g mut [Option<Matrix>], id: NodeId) -> &'g mut Matrix {
        let v = &self.nodes[id].value;
        g[id].get_or_insert_with(|| Matrix::zeros(v.rows, v.cols))
    }

    fn backward_node(&self, id: NodeId, dy: &Matrix, g: &mut [Option<Matrix>], grads: &mut [Matrix]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Input => {}
            Op::Embed { table, ids } => {
                let gt = &mut grads[*table];
                for (r, &t) in ids.iter().enumerate() {
                    axpy(1.0, dy.row(r), gt.row_mut(t as usize));
                }
            }
            Op::Linear { x, w, b } => {
                let xv = &self.nodes[*x].value;
                let wm = &self.params[*w];
                let (n, din, dout) = (xv.rows, xv.cols, wm.cols);
                gemm(din, n, dout, &xv.data, true, &dy.data, false, &mut grads[*w].data, 1.0);
                let gb = &mut grads[*b].data;
                for r in 0..n {
                    axpy(1.0, dy.row(r), gb);
                }
                let gx = self.grad_of(g, *x);
                gemm(n, dout, din, &dy.data, false, &wm.data, true, &mut gx.data, 1.0);
            }
            Op::Add(a, b) => {
                self.grad_of(g, *a).add_assign(dy);
                self.grad_of(g, *b).add_assign(dy);
            }
            Op::Relu(x) => {
                let gx = self.grad_of(g, *x);
                for ((o, &d), &v) in gx.data.iter_mut().zip(&dy.data).zip(&node.value.data) {
                    if v > 0.0 {
                        *o += d;
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = xhat.cols;
                let gain_v = &self.params[*gain].data;
                let mut dx = Matrix::zeros(xhat.rows, d);
                let mut dxhat = vec![0.0; d];
                for r in 0..xhat.rows {
                    let (dyr, xh) = (dy.row(r), xhat.row(r));
                    for i in 0..d {
                        grads[*gain].data[i] += dyr[i] * xh[i];
                        grads[*bias].data[i] += dyr[i];
                        dxhat[i] = dyr[i] * gain_v[i];
                    }
                    let sum: f64 = dxhat.iter().sum();
                    let sum_x: f64 = dot(&dxhat, xh);
                    let s = rstd[r] / d as f64;
                    for (i, o) in dx.row_mut(r).iter_mut().enumerate() {
                        *o = s * (d as f64 * dxhat[i] - sum - xh[i] * sum_x);
                    }
                }
                self.grad_of(g, *x).add_assign(&dx);
            }
            Op::Dropout { x, mask } => {
                let gx = self.grad_of(g, *x);
                for ((o, &d), &m) in gx.data.iter_mut().zip(&dy.data).zip(mask) {
                    *o += d * m;
                }
            }
            Op::Attention { q, k, v, segs, heads, probs } => {
                let (qv, kv, vv) = (&self.nodes[*q].value, &self.nodes[*k].value, &self.nodes[*v].value);
                let d = qv.cols;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = Matrix::zeros(qv.rows, d);
                let mut dk = Matrix::zeros(kv.rows, d);
                let mut dv = Matrix::zeros(vv.rows, d);
                let mut dp = Vec::new();
                let mut at = 0;
                for s in segs {
                    for h in 0..*heads {
                        let off = h * dh;
                        for i in 0..s.qn {
                            let p = &probs[at..at + s.kn];
                            at += s.kn;
                            let doi = &dy.row(s.q0 + i)[off..off + dh];
                            dp.clear();
                            dp.extend((0..s.kn).map(|j| if p[j] == 0.0 { 0.0 } else { dot(doi, &vv.row(s.k0 + j)[off..off + dh]) }));
                            let inner: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                            let qi = &qv.row(s.q0 + i)[off..off + dh];
                            for j in 0..s.kn {
                                if p[j] == 0.0 {
                                    continue;
                                }
                                let kr = s.k0 + j;
                                axpy(p[j], doi, &mut dv.data[kr * d + off..kr * d + off + dh]);
                                let ds = p[j] * (dp[j] - inner) * scale;
                                axpy(ds, &kv.row(kr)[off..off + dh], &mut dq.data[(s.q0 + i) * d + off..(s.q0 + i) * d + off + dh]);
                                axpy(ds, qi, &mut dk.data[kr * d + off..kr * d + off + dh]);
                            }
                        }
                    }
                }
                self.grad_of(g, *q).add_assign(&dq);
                self.grad_of(g, *k).add_assign(&dk);
                self.grad_of(g, *v).add_assign(&dv);
            }
            Op::Project { x, table, scale } => {
                let xv = &self.nodes[*x].value;
                let t = &self.params[*table];
                let mut dys = dy.clone();
                dys.data.iter_mut().for_each(|v| *v *= scale);
                gemm(t.rows, xv.rows, xv.cols, &dys.data, true, &xv.data, false, &mut grads[*table].data, 1.0);
                let gx = self.grad_of(g, *x);
                gemm(xv.rows, t.rows, xv.cols, &dys.data, false, &t.data, false, &mut gx.data, 1.0);
            }
            Op::Pawa { h, adapt, table, scale, u } => {
                let hv = &self.nodes[*h].value;
                let av = &self.nodes[*adapt].value;
                let t = &self.params[*table];
                let d = hv.cols;
                let mut dys = dy.clone();
                dys.data.iter_mut().for_each(|v| *v *= scale);
                gemm(t.rows, u.rows, d, &dys.data, true, &u.data, false, &mut grads[*table].data, 1.0);
                let mut du = Matrix::zeros(u.rows, d);
                gemm(u.rows, t.rows, d, &dys.data, false, &t.data, false, &mut du.data, 0.0);
                let mut dh = du.clone();
                let mut da = Matrix::zeros(av.rows, av.cols);
                for r in 0..hv.rows {
                    let (a, hr, dur) = (av.row(r), hv.row(r), du.row(r));
                    let dhr = dh.row_mut(r);
                    for i in 0..d {
                        axpy(dur[i], &a[i * d..(i + 1) * d], dhr);
                    }
                    let dar = da.row_mut(r);
                    for i in 0..d {
                        axpy(dur[i], hr, &mut dar[i * d..(i + 1) * d]);
                    }
                }
                self.grad_of(g, *h).add_assign(&dh);
                self.grad_of(g, *adapt).add_assign(&da);
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                if *count == 0 {
                    return;
                }
                let scale = dy.data[0] / *count as f64;
                let gl = self.grad_of(g, *logits);
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = t else { continue };
                    let row = gl.row_mut(r);
                    axpy(scale, probs.row(r), row);
                    row[*t as usize] -= scale;
                }
            }
            Op::SymKl { a, b, pa, pb } => {
                let (da, db) = super::loss::sym_kl_rows_grad(pa, pb, dy.data[0]);
                self.grad_of(g, *a).add_assign(&da);
                self.grad_of(g, *b).add_assign(&db);
            }
            Op::Contrastive { h1, h2, groups } => {
                let (d1, d2) = super::loss::contrastive_grad(
                    &self.nodes[*h1].value,
                    &self.nodes[*h2].value,
                    groups,
                    dy.data[0],
                );
                self.grad_of(g, *h1).add_assign(&d1);
                self.grad_of(g, *h2).add_assign(&d2);
            }
            Op::Weighted(terms) => {
                for &(n, w) in terms {
                    self.grad_of(g, n).data[0] += w * dy.data[0];
                }
            }
        }
    }
}
