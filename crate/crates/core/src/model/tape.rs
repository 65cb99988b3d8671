//! Reverse-mode tape over [`Tensor2D`] with the handful of ops the
//! encoder–decoder needs. Nodes are appended in evaluation order, so a single
//! reverse sweep visits every consumer before its inputs.

use std::collections::HashMap;

use super::params::{Grads, ParamId, ParamStore};
use crate::numerics::Tensor2D;

pub type NodeId = usize;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

/// Which product inside an attention block a multiply-accumulate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MacCategory {
    QProj,
    KProj,
    VProj,
    OProj,
    Scores,
    Mix,
    Other,
}

impl MacCategory {
    const ALL: [MacCategory; 7] = [
        MacCategory::QProj,
        MacCategory::KProj,
        MacCategory::VProj,
        MacCategory::OProj,
        MacCategory::Scores,
        MacCategory::Mix,
        MacCategory::Other,
    ];

    fn index(self) -> usize {
        Self::ALL.iter().position(|c| *c == self).unwrap()
    }
}

/// Multiply-accumulate tally, filled by every matrix product on a tape that
/// has counting enabled.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MacCounter {
    counts: [u64; 7],
}

impl MacCounter {
    pub fn get(&self, cat: MacCategory) -> u64 {
        self.counts[cat.index()]
    }

    fn add(&mut self, cat: MacCategory, n: u64) {
        self.counts[cat.index()] += n;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Softmax { x: NodeId },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Tensor2D, rstd: Vec<f64> },
    Gelu(NodeId),
    Gather { table: NodeId, ids: Vec<usize> },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceCols { x: NodeId, start: usize },
    MeanRows(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor2D,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, NodeId>,
    macs: Option<MacCounter>,
    category: Option<MacCategory>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_mac_counter() -> Self {
        Self {
            macs: Some(MacCounter::default()),
            ..Self::default()
        }
    }

    pub fn mac_counter(&self) -> Option<&MacCounter> {
        self.macs.as_ref()
    }

    pub(crate) fn set_category(&mut self, cat: MacCategory) {
        self.category = Some(cat);
    }

    pub fn value(&self, id: NodeId) -> &Tensor2D {
        &self.nodes[id].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor2D, op: Op, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        self.nodes.len() - 1
    }

    /// Constant input; never receives a gradient.
    pub fn leaf(&mut self, value: Tensor2D) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        self.nodes.len() - 1
    }

    /// Parameter node, inserted once per tape. Frozen parameters behave like leaves.
    pub fn param(&mut self, store: &ParamStore, id: ParamId, trainable: bool) -> NodeId {
        if let Some(&n) = self.params.get(&id) {
            return n;
        }
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param,
            needs_grad: trainable,
        });
        let n = self.nodes.len() - 1;
        self.params.insert(id, n);
        n
    }

    fn count(&mut self, m: usize, k: usize, n: usize) {
        if let Some(c) = self.macs.as_mut() {
            c.add(self.category.unwrap_or(MacCategory::Other), (m * k * n) as u64);
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = self.nodes[a].value.shape();
        let n = self.nodes[b].value.cols();
        self.count(m, k, n);
        let v = self.nodes[a].value.matmul(&self.nodes[b].value);
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = self.nodes[a].value.shape();
        let n = self.nodes[b].value.rows();
        self.count(m, k, n);
        let v = self.nodes[a].value.matmul_bt(&self.nodes[b].value);
        self.push(v, Op::MatMulBt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.nodes[a].value.clone();
        v.add_assign(&self.nodes[b].value);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    /// Adds the `1 × cols` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.nodes[a].value.clone();
        let bias = &self.nodes[b].value;
        assert_eq!((1, v.cols()), bias.shape(), "add_row bias shape");
        for r in 0..v.rows() {
            for (x, y) in v.row_mut(r).iter_mut().zip(bias.row(0)) {
                *x += y;
            }
        }
        self.push(v, Op::AddRow(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.nodes[a].value.scaled(s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    /// Row softmax. With `causal`, row `i` only sees columns `j ≤ i + (cols − rows)`.
    pub fn softmax(&mut self, x: NodeId, causal: bool) -> NodeId {
        let src = &self.nodes[x].value;
        let (rows, cols) = src.shape();
        let offset = cols as isize - rows as isize;
        let mut v = Tensor2D::zeros(rows, cols);
        for r in 0..rows {
            let limit = if causal {
                ((r as isize + offset + 1).clamp(0, cols as isize)) as usize
            } else {
                cols
            };
            let row = &src.row(r)[..limit];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &a| m.max(a));
            let out = v.row_mut(r);
            let mut sum = 0.0;
            for (o, &a) in out.iter_mut().zip(row) {
                *o = (a - max).exp();
                sum += *o;
            }
            out[..limit].iter_mut().for_each(|o| *o /= sum);
        }
        self.push(v, Op::Softmax { x }, &[x])
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let src = &self.nodes[x].value;
        let (rows, cols) = src.shape();
        let g = self.nodes[gamma].value.row(0);
        let b = self.nodes[beta].value.row(0);
        let mut xhat = Tensor2D::zeros(rows, cols);
        let mut out = Tensor2D::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = src.row(r);
            let mean = row.iter().fold(0.0, |a, v| a + v) / cols as f64;
            let var = row.iter().fold(0.0, |a, v| a + (v - mean) * (v - mean)) / cols as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(s);
            let xh = xhat.row_mut(r);
            for (o, v) in xh.iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = xhat.get(r, c) * g[c] + b[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let src = &self.nodes[x].value;
        let data = src
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
            .collect();
        let v = Tensor2D::from_vec_unchecked(src.rows(), src.cols(), data);
        self.push(v, Op::Gelu(x), &[x])
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = &self.nodes[table].value;
        let mut v = Tensor2D::zeros(ids.len(), t.cols());
        for (i, &id) in ids.iter().enumerate() {
            v.row_mut(i).copy_from_slice(t.row(id));
        }
        self.push(v, Op::Gather { table, ids: ids.to_vec() }, &[table])
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let cols = self.nodes[parts[0]].value.cols();
        let rows: usize = parts.iter().map(|&p| self.nodes[p].value.rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            assert_eq!(self.nodes[p].value.cols(), cols, "concat_rows width");
            data.extend_from_slice(self.nodes[p].value.data());
        }
        let v = Tensor2D::from_vec_unchecked(rows, cols, data);
        self.push(v, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.nodes[parts[0]].value.rows();
        let cols: usize = parts.iter().map(|&p| self.nodes[p].value.cols()).sum();
        let mut v = Tensor2D::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let src = self.nodes[p].value.row(r);
                v.row_mut(r)[c0..c0 + src.len()].copy_from_slice(src);
                c0 += src.len();
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let src = &self.nodes[x].value;
        let mut v = Tensor2D::zeros(src.rows(), len);
        for r in 0..src.rows() {
            v.row_mut(r).copy_from_slice(&src.row(r)[start..start + len]);
        }
        self.push(v, Op::SliceCols { x, start }, &[x])
    }

    /// `1 × cols` mean over rows.
    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let pooled = crate::numerics::mean_pool(&self.nodes[x].value).expect("mean_rows on empty tensor");
        let v = Tensor2D::from_vec_unchecked(1, pooled.len(), pooled);
        self.push(v, Op::MeanRows(x), &[x])
    }

    /// Propagates the seed gradients back to every trainable parameter.
    pub fn backward(&self, seeds: &[(NodeId, &Tensor2D)], n_params: usize) -> Grads {
        let mut grads: Vec<Option<Tensor2D>> = (0..self.nodes.len()).map(|_| None).collect();
        for &(id, g) in seeds {
            assert_eq!(self.nodes[id].value.shape(), g.shape(), "seed shape");
            accumulate(&mut grads, id, g.clone());
        }
        for id in (0..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let ng = |i: NodeId| self.nodes[i].needs_grad;
            match &node.op {
                Op::Leaf => {}
                Op::Param => {
                    grads[id] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if ng(*a) {
                        accumulate(&mut grads, *a, g.matmul_bt(&self.nodes[*b].value));
                    }
                    if ng(*b) {
                        accumulate(&mut grads, *b, self.nodes[*a].value.matmul_at(&g));
                    }
                }
                Op::MatMulBt(a, b) => {
                    if ng(*a) {
                        accumulate(&mut grads, *a, g.matmul(&self.nodes[*b].value));
                    }
                    if ng(*b) {
                        accumulate(&mut grads, *b, g.matmul_at(&self.nodes[*a].value));
                    }
                }
                Op::Add(a, b) => {
                    if ng(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if ng(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddRow(a, b) => {
                    if ng(*b) {
                        let mut gb = Tensor2D::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (o, v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                    if ng(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Scale(a, s) => {
                    if ng(*a) {
                        accumulate(&mut grads, *a, g.scaled(*s));
                    }
                }
                Op::Softmax { x } => {
                    let y = &node.value;
                    let mut dx = Tensor2D::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot = yr.iter().zip(gr).fold(0.0, |a, (p, q)| a + p * q);
                        for ((o, p), q) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = p * (q - dot);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let gm = self.nodes[*gamma].value.row(0);
                    let (rows, cols) = g.shape();
                    if ng(*gamma) || ng(*beta) {
                        let mut dg = Tensor2D::zeros(1, cols);
                        let mut db = Tensor2D::zeros(1, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                dg.row_mut(0)[c] += g.get(r, c) * xhat.get(r, c);
                                db.row_mut(0)[c] += g.get(r, c);
                            }
                        }
                        if ng(*gamma) {
                            accumulate(&mut grads, *gamma, dg);
                        }
                        if ng(*beta) {
                            accumulate(&mut grads, *beta, db);
                        }
                    }
                    if ng(*x) {
                        let mut dx = Tensor2D::zeros(rows, cols);
                        let n = cols as f64;
                        for r in 0..rows {
                            let mut sum_d = 0.0;
                            let mut sum_dx = 0.0;
                            for c in 0..cols {
                                let d = g.get(r, c) * gm[c];
                                sum_d += d;
                                sum_dx += d * xhat.get(r, c);
                            }
                            for c in 0..cols {
                                let d = g.get(r, c) * gm[c];
                                dx.set(r, c, rstd[r] * (d - sum_d / n - xhat.get(r, c) * sum_dx / n));
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Gelu(x) => {
                    let src = &self.nodes[*x].value;
                    let data = src
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| {
                            let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                            let d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                            gv * d
                        })
                        .collect();
                    accumulate(&mut grads, *x, Tensor2D::from_vec_unchecked(src.rows(), src.cols(), data));
                }
                Op::Gather { table, ids } => {
                    let t = &self.nodes[*table].value;
                    let mut dt = Tensor2D::zeros(t.rows(), t.cols());
                    for (i, &row) in ids.iter().enumerate() {
                        for (o, v) in dt.row_mut(row).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for &p in parts {
                        let rows = self.nodes[p].value.rows();
                        if ng(p) {
                            let cols = g.cols();
                            let slice = g.data()[r0 * cols..(r0 + rows) * cols].to_vec();
                            accumulate(&mut grads, p, Tensor2D::from_vec_unchecked(rows, cols, slice));
                        }
                        r0 += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let cols = self.nodes[p].value.cols();
                        if ng(p) {
                            let mut part = Tensor2D::zeros(g.rows(), cols);
                            for r in 0..g.rows() {
                                part.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + cols]);
                            }
                            accumulate(&mut grads, p, part);
                        }
                        c0 += cols;
                    }
                }
                Op::SliceCols { x, start } => {
                    let src = &self.nodes[*x].value;
                    let mut dx = Tensor2D::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::MeanRows(x) => {
                    let src = &self.nodes[*x].value;
                    let inv = 1.0 / src.rows() as f64;
                    let mut dx = Tensor2D::zeros(src.rows(), src.cols());
                    for r in 0..src.rows() {
                        for (o, v) in dx.row_mut(r).iter_mut().zip(g.row(0)) {
                            *o = v * inv;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
            }
        }
        let mut out = Grads::zeros_like_count(n_params);
        for (&pid, &node) in &self.params {
            if let Some(g) = grads[node].take() {
                out.set(pid, g);
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Tensor2D>], id: NodeId, g: Tensor2D) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error, RngSeed, SplitMix64};

    fn rand_t(rows: usize, cols: usize, rng: &mut SplitMix64) -> Tensor2D {
        Tensor2D::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    /// Builds a graph exercising every op, reduces it to a scalar with fixed
    /// weights, and compares the tape gradient with central differences.
    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = SplitMix64::new(RngSeed(1));
        let mut store = ParamStore::default();
        let w = store.insert("w", rand_t(4, 6, &mut rng));
        let g = store.insert("g", rand_t(1, 6, &mut rng));
        let b = store.insert("b", rand_t(1, 6, &mut rng));
        let table = store.insert("table", rand_t(5, 4, &mut rng));
        let x = rand_t(3, 4, &mut rng);
        let readout = rand_t(5, 6, &mut rng);

        let build = |store: &ParamStore, tape: &mut Tape| -> NodeId {
            let xin = tape.leaf(x.clone());
            let tab = tape.param(store, table, true);
            let emb = tape.gather(tab, &[4, 0, 4]);
            let h = tape.add(xin, emb);
            let wn = tape.param(store, w, true);
            let proj = tape.matmul(h, wn);
            let bn = tape.param(store, b, true);
            let proj = tape.add_row(proj, bn);
            let gn = tape.param(store, g, true);
            let normed = tape.layer_norm(proj, gn, bn);
            let act = tape.gelu(normed);
            let left = tape.slice_cols(act, 0, 3);
            let right = tape.slice_cols(act, 3, 3);
            let scores = tape.matmul_bt(left, right);
            let scores = tape.scale(scores, 0.7);
            let attn = tape.softmax(scores, true);
            let mixed = tape.matmul(attn, act);
            let both = tape.concat_cols(&[left, right]);
            let pooled = tape.mean_rows(both);
            tape.concat_rows(&[mixed, pooled, pooled])
        };
        let loss_of = |store: &ParamStore| {
            let mut tape = Tape::new();
            let out = build(store, &mut tape);
            let v = tape.value(out);
            v.data().iter().zip(readout.data()).map(|(a, b)| a * b).sum::<f64>()
        };

        let mut tape = Tape::new();
        let out = build(&store, &mut tape);
        let grads = tape.backward(&[(out, &readout)], store.len());

        for pid in [w, g, b, table] {
            let base = store.value(pid).data().to_vec();
            let f = |p: &[f64]| {
                let mut s = store.clone();
                s.value_mut(pid).data_mut().copy_from_slice(p);
                loss_of(&s)
            };
            let num = finite_diff_grad(f, &base, 1e-5).unwrap();
            let ana = grads.get(pid).expect("gradient present");
            for (a, n) in ana.data().iter().zip(&num) {
                assert!(relative_error(*a, *n, 1e-4) < 1e-6, "param {pid}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParamStore::default();
        let w = store.insert("w", Tensor2D::filled(2, 2, 0.5));
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2D::filled(1, 2, 1.0));
        let wn = tape.param(&store, w, false);
        let y = tape.matmul(x, wn);
        let seed = Tensor2D::filled(1, 2, 1.0);
        let grads = tape.backward(&[(y, &seed)], store.len());
        assert!(grads.get(w).is_none());
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut tape = Tape::new();
        let s = tape.leaf(Tensor2D::zeros(3, 3));
        let p = tape.softmax(s, true);
        let v = tape.value(p);
        assert_eq!(v.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(v.row(1), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn mac_counter_tallies_products() {
        let mut tape = Tape::with_mac_counter();
        let a = tape.leaf(Tensor2D::zeros(3, 4));
        let b = tape.leaf(Tensor2D::zeros(4, 5));
        tape.set_category(MacCategory::QProj);
        tape.matmul(a, b);
        tape.set_category(MacCategory::Scores);
        tape.matmul_bt(a, a);
        let c = tape.mac_counter().unwrap();
        assert_eq!(c.get(MacCategory::QProj), 60);
        assert_eq!(c.get(MacCategory::Scores), 36);
    }
}
