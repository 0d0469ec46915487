//! Reverse-mode differentiation over vector-level primitives.
//!
//! A [`Tape`] records every primitive application in creation order,
//! which is already topological: an op's inputs always exist before the
//! op itself. [`Tape::backward`] walks the record in reverse and
//! accumulates per-parameter gradients into a [`GradientStore`].
//!
//! Each primitive carries a hand-derived backward rule; the contract for
//! all of them is agreement with [`finite_diff_gradient`], the central
//! difference oracle at the bottom of this module.

use crate::error::{Error, Result};
use crate::tensor::{dot, norm, softmax_over_positions, Tensor};

/// Handle to a named parameter tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamRef(usize);

impl ParamRef {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// The trainable tensors of a model, addressed by stable index and name.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamRef {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name:?}"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        ParamRef(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar coordinates across all parameters.
    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, r: ParamRef) -> &Tensor {
        &self.tensors[r.0]
    }

    pub fn get_mut(&mut self, r: ParamRef) -> &mut Tensor {
        &mut self.tensors[r.0]
    }

    pub fn name(&self, r: ParamRef) -> &str {
        &self.names[r.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamRef> {
        self.names.iter().position(|n| n == name).map(ParamRef)
    }

    pub fn refs(&self) -> impl Iterator<Item = ParamRef> {
        (0..self.tensors.len()).map(ParamRef)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

/// Per-parameter gradient accumulators, shaped like a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct GradientStore {
    grads: Vec<Tensor>,
}

impl GradientStore {
    pub fn new(params: &ParamSet) -> Self {
        GradientStore {
            grads: params.tensors.iter().map(Tensor::zeros_like).collect(),
        }
    }

    pub fn get(&self, r: ParamRef) -> &Tensor {
        &self.grads[r.0]
    }

    pub fn get_mut(&mut self, r: ParamRef) -> &mut Tensor {
        &mut self.grads[r.0]
    }

    pub fn zero(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    /// Elementwise `self += other`, used for the fixed-order reduction
    /// across batch chunks.
    pub fn merge(&mut self, other: &GradientStore) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| dot(g.data(), g.data()))
            .sum::<f64>()
            .sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    /// Copy of a whole parameter tensor.
    Leaf(ParamRef),
    /// Constant; no gradient flows.
    Input,
    /// One row of a (usually large) parameter matrix; backward scatters
    /// into just that row.
    TableRow { table: ParamRef, row: usize },
    MatVec { w: NodeId, x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    ScaleConst { x: NodeId, c: f64 },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    Relu { x: NodeId },
    Dot { a: NodeId, b: NodeId },
    StackScalars { xs: Vec<NodeId> },
    Softmax { x: NodeId },
    Concat { a: NodeId, b: NodeId },
    Slice { x: NodeId, start: usize },
    WeightedSum { weights: NodeId, rows: Vec<NodeId> },
    MeanRows { rows: Vec<NodeId> },
    SumRows { rows: Vec<NodeId> },
    Cosine { u: NodeId, v: NodeId },
    Dropout { x: NodeId, mask: Tensor },
    BinaryCrossEntropy { prob: NodeId, label: f64 },
    /// Per-dimension softmax over rows followed by the weighted sum of
    /// the same rows; `beta` keeps the attention matrix for inspection.
    ColSoftmaxWeighted { rows: Vec<NodeId>, beta: Tensor },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded forward pass over a frozen parameter set.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    leaf_cache: Vec<Option<NodeId>>,
}

const BCE_CLAMP: f64 = 1e-7;

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            leaf_cache: vec![None; params.len()],
        }
    }

    pub fn value(&self, n: NodeId) -> &Tensor {
        &self.nodes[n.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf node for a whole parameter tensor; deduplicated so the same
    /// parameter used twice shares one node.
    pub fn param(&mut self, r: ParamRef) -> NodeId {
        if let Some(id) = self.leaf_cache[r.index()] {
            return id;
        }
        let value = self.params.get(r).clone();
        let id = self.push(Op::Leaf(r), value);
        self.leaf_cache[r.index()] = Some(id);
        id
    }

    /// Constant node; gradients stop here.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, t)
    }

    /// Row `row` of parameter matrix `table` as a vector node.
    pub fn table_row(&mut self, table: ParamRef, row: usize) -> NodeId {
        let t = self.params.get(table);
        assert!(row < t.rows(), "table_row: row {row} out of range");
        let value = Tensor::vector(t.row(row).to_vec());
        self.push(Op::TableRow { table, row }, value)
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let (wt, xt) = (&self.nodes[w.0].value, &self.nodes[x.0].value);
        assert_eq!(wt.shape().len(), 2, "matvec: W must be a matrix");
        assert_eq!(wt.cols(), xt.len(), "matvec: inner dimensions differ");
        let mut out = vec![0.0; wt.rows()];
        crate::tensor::matvec(wt, xt.data(), &mut out);
        self.push(Op::MatVec { w, x }, Tensor::vector(out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip(a, b, |x, y| x + y);
        self.push(Op::Add { a, b }, v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip(a, b, |x, y| x - y);
        self.push(Op::Sub { a, b }, v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip(a, b, |x, y| x * y);
        self.push(Op::Mul { a, b }, v)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.map(x, |t| t * c);
        self.push(Op::ScaleConst { x, c }, v)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.map(x, f64::tanh);
        self.push(Op::Tanh { x }, v)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.map(x, |t| 1.0 / (1.0 + (-t).exp()));
        self.push(Op::Sigmoid { x }, v)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.map(x, |t| t.max(0.0));
        self.push(Op::Relu { x }, v)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (at, bt) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(at.len(), bt.len(), "dot: length mismatch");
        let v = Tensor::scalar(dot(at.data(), bt.data()));
        self.push(Op::Dot { a, b }, v)
    }

    /// Collect scalar nodes into one vector node.
    pub fn stack_scalars(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "stack_scalars: empty input");
        let data: Vec<f64> = xs.iter().map(|x| self.nodes[x.0].value.item()).collect();
        self.push(
            Op::StackScalars { xs: xs.to_vec() },
            Tensor::vector(data),
        )
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let v = softmax_over_positions(self.nodes[x.0].value.data())
            .expect("softmax: empty input");
        self.push(Op::Softmax { x }, Tensor::vector(v))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut data = self.nodes[a.0].value.data().to_vec();
        data.extend_from_slice(self.nodes[b.0].value.data());
        self.push(Op::Concat { a, b }, Tensor::vector(data))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let xt = &self.nodes[x.0].value;
        assert!(start + len <= xt.len(), "slice: out of range");
        let data = xt.data()[start..start + len].to_vec();
        self.push(Op::Slice { x, start }, Tensor::vector(data))
    }

    /// `sum_i weights[i] * rows[i]`, gradients flowing into both.
    pub fn weighted_sum(&mut self, weights: NodeId, rows: &[NodeId]) -> NodeId {
        let w = &self.nodes[weights.0].value;
        assert_eq!(w.len(), rows.len(), "weighted_sum: weight/row count");
        assert!(!rows.is_empty(), "weighted_sum: empty input");
        let m = self.nodes[rows[0].0].value.len();
        let mut out = vec![0.0; m];
        for (i, r) in rows.iter().enumerate() {
            let wv = w.data()[i];
            for (o, x) in out.iter_mut().zip(self.nodes[r.0].value.data()) {
                *o += wv * x;
            }
        }
        self.push(
            Op::WeightedSum {
                weights,
                rows: rows.to_vec(),
            },
            Tensor::vector(out),
        )
    }

    pub fn mean_rows(&mut self, rows: &[NodeId]) -> NodeId {
        let v = self.row_sum(rows, 1.0 / rows.len() as f64);
        self.push(Op::MeanRows { rows: rows.to_vec() }, v)
    }

    pub fn sum_rows(&mut self, rows: &[NodeId]) -> NodeId {
        let v = self.row_sum(rows, 1.0);
        self.push(Op::SumRows { rows: rows.to_vec() }, v)
    }

    pub fn cosine(&mut self, u: NodeId, v: NodeId) -> NodeId {
        let (ut, vt) = (&self.nodes[u.0].value, &self.nodes[v.0].value);
        let c = crate::tensor::cosine_similarity(ut.data(), vt.data());
        self.push(Op::Cosine { u, v }, Tensor::scalar(c))
    }

    /// Inverted-scaling dropout: `mask` entries are 0 or `1/keep`, so
    /// inference needs no rescaling.
    pub fn dropout(&mut self, x: NodeId, mask: Tensor) -> NodeId {
        assert_eq!(mask.len(), self.nodes[x.0].value.len(), "dropout: mask len");
        let data: Vec<f64> = self.nodes[x.0]
            .value
            .data()
            .iter()
            .zip(mask.data())
            .map(|(v, m)| v * m)
            .collect();
        self.push(Op::Dropout { x, mask }, Tensor::vector(data))
    }

    /// `-(r ln p + (1-r) ln(1-p))` with `p` clamped away from 0 and 1.
    pub fn binary_cross_entropy(&mut self, prob: NodeId, label: f64) -> NodeId {
        let p = self.nodes[prob.0].value.item().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let loss = -(label * p.ln() + (1.0 - label) * (1.0 - p).ln());
        self.push(Op::BinaryCrossEntropy { prob, label }, Tensor::scalar(loss))
    }

    /// For each output dimension `j`, softmax over the rows of column
    /// `j` and sum the column weighted by those scores. Returns the
    /// output node and the `(n, a)` weight matrix.
    pub fn col_softmax_weighted(&mut self, rows: &[NodeId]) -> (NodeId, Tensor) {
        assert!(!rows.is_empty(), "col_softmax_weighted: empty input");
        let n = rows.len();
        let a = self.nodes[rows[0].0].value.len();
        let mut beta = Tensor::zeros(&[n, a]);
        let mut out = vec![0.0; a];
        let mut col = vec![0.0; n];
        for j in 0..a {
            for (i, r) in rows.iter().enumerate() {
                col[i] = self.nodes[r.0].value.data()[j];
            }
            let w = softmax_over_positions(&col).expect("non-empty column");
            for i in 0..n {
                beta.row_mut(i)[j] = w[i];
                out[j] += w[i] * col[i];
            }
        }
        let id = self.push(
            Op::ColSoftmaxWeighted {
                rows: rows.to_vec(),
                beta: beta.clone(),
            },
            Tensor::vector(out),
        );
        (id, beta)
    }

    fn map(&self, x: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let xt = &self.nodes[x.0].value;
        let mut t = xt.clone();
        t.data_mut().iter_mut().for_each(|v| *v = f(*v));
        t
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (at, bt) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(at.len(), bt.len(), "elementwise op: length mismatch");
        let data = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::vector(data)
    }

    fn row_sum(&self, rows: &[NodeId], scale: f64) -> Tensor {
        assert!(!rows.is_empty(), "row reduction: empty input");
        let m = self.nodes[rows[0].0].value.len();
        let mut out = vec![0.0; m];
        for r in rows {
            let rv = &self.nodes[r.0].value;
            assert_eq!(rv.len(), m, "row reduction: ragged rows");
            for (o, x) in out.iter_mut().zip(rv.data()) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|v| *v *= scale);
        Tensor::vector(out)
    }

    /// Backpropagate from scalar node `out`, adding parameter gradients
    /// into `store`. Nodes are visited in reverse recording order, which
    /// is reverse topological order by construction.
    pub fn backward(&self, out: NodeId, store: &mut GradientStore) {
        assert_eq!(
            self.nodes[out.0].value.len(),
            1,
            "backward: output must be scalar"
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(vec![1.0]);

        for id in (0..=out.0).rev() {
            let Some(go) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {}
                Op::Leaf(r) => {
                    for (g, v) in store.get_mut(*r).data_mut().iter_mut().zip(&go) {
                        *g += v;
                    }
                }
                Op::TableRow { table, row } => {
                    let grow = store.get_mut(*table).row_mut(*row);
                    for (g, v) in grow.iter_mut().zip(&go) {
                        *g += v;
                    }
                }
                Op::MatVec { w, x } => {
                    let wt = &self.nodes[w.0].value;
                    let xt = &self.nodes[x.0].value;
                    let n = wt.cols();
                    {
                        let gw = acc(&mut grads, w.0, wt.len());
                        for (r, gor) in go.iter().enumerate() {
                            let grow = &mut gw[r * n..(r + 1) * n];
                            for (g, xv) in grow.iter_mut().zip(xt.data()) {
                                *g += gor * xv;
                            }
                        }
                    }
                    let gx = acc(&mut grads, x.0, n);
                    for (r, gor) in go.iter().enumerate() {
                        let wrow = wt.row(r);
                        for (g, wv) in gx.iter_mut().zip(wrow) {
                            *g += gor * wv;
                        }
                    }
                }
                Op::Add { a, b } => {
                    add_into(acc(&mut grads, a.0, go.len()), &go, 1.0);
                    add_into(acc(&mut grads, b.0, go.len()), &go, 1.0);
                }
                Op::Sub { a, b } => {
                    add_into(acc(&mut grads, a.0, go.len()), &go, 1.0);
                    add_into(acc(&mut grads, b.0, go.len()), &go, -1.0);
                }
                Op::Mul { a, b } => {
                    mul_into(acc(&mut grads, a.0, go.len()), &go, self.nodes[b.0].value.data());
                    mul_into(acc(&mut grads, b.0, go.len()), &go, self.nodes[a.0].value.data());
                }
                Op::ScaleConst { x, c } => {
                    add_into(acc(&mut grads, x.0, go.len()), &go, *c);
                }
                Op::Tanh { x } => {
                    let y = node.value.data();
                    let gx = acc(&mut grads, x.0, go.len());
                    for i in 0..go.len() {
                        gx[i] += go[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Sigmoid { x } => {
                    let y = node.value.data();
                    let gx = acc(&mut grads, x.0, go.len());
                    for i in 0..go.len() {
                        gx[i] += go[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Relu { x } => {
                    let xv = self.nodes[x.0].value.data();
                    let gx = acc(&mut grads, x.0, go.len());
                    for i in 0..go.len() {
                        if xv[i] > 0.0 {
                            gx[i] += go[i];
                        }
                    }
                }
                Op::Dot { a, b } => {
                    let g = go[0];
                    let bv = self.nodes[b.0].value.data();
                    let av = self.nodes[a.0].value.data();
                    add_into(acc(&mut grads, a.0, bv.len()), bv, g);
                    add_into(acc(&mut grads, b.0, av.len()), av, g);
                }
                Op::StackScalars { xs } => {
                    for (i, x) in xs.iter().enumerate() {
                        acc(&mut grads, x.0, 1)[0] += go[i];
                    }
                }
                Op::Softmax { x } => {
                    let y = node.value.data();
                    let inner: f64 = go.iter().zip(y).map(|(g, v)| g * v).sum();
                    let gx = acc(&mut grads, x.0, go.len());
                    for i in 0..go.len() {
                        gx[i] += y[i] * (go[i] - inner);
                    }
                }
                Op::Concat { a, b } => {
                    let la = self.nodes[a.0].value.len();
                    add_into(acc(&mut grads, a.0, la), &go[..la], 1.0);
                    add_into(acc(&mut grads, b.0, go.len() - la), &go[la..], 1.0);
                }
                Op::Slice { x, start } => {
                    let lx = self.nodes[x.0].value.len();
                    let gx = acc(&mut grads, x.0, lx);
                    for (g, v) in gx[*start..*start + go.len()].iter_mut().zip(&go) {
                        *g += v;
                    }
                }
                Op::WeightedSum { weights, rows } => {
                    let wlen = rows.len();
                    for (i, r) in rows.iter().enumerate() {
                        let rv = self.nodes[r.0].value.data();
                        let wi = self.nodes[weights.0].value.data()[i];
                        let gwi: f64 = go.iter().zip(rv).map(|(g, v)| g * v).sum();
                        acc(&mut grads, weights.0, wlen)[i] += gwi;
                        add_into(acc(&mut grads, r.0, rv.len()), &go, wi);
                    }
                }
                Op::MeanRows { rows } => {
                    let s = 1.0 / rows.len() as f64;
                    for r in rows {
                        add_into(acc(&mut grads, r.0, go.len()), &go, s);
                    }
                }
                Op::SumRows { rows } => {
                    for r in rows {
                        add_into(acc(&mut grads, r.0, go.len()), &go, 1.0);
                    }
                }
                Op::Cosine { u, v } => {
                    let uv = self.nodes[u.0].value.data();
                    let vv = self.nodes[v.0].value.data();
                    let (nu, nv) = (norm(uv), norm(vv));
                    if nu > 0.0 && nv > 0.0 {
                        let g = go[0];
                        let c = dot(uv, vv) / (nu * nv);
                        {
                            let gu = acc(&mut grads, u.0, uv.len());
                            for i in 0..uv.len() {
                                gu[i] += g * (vv[i] / (nu * nv) - c * uv[i] / (nu * nu));
                            }
                        }
                        let gv = acc(&mut grads, v.0, vv.len());
                        for i in 0..vv.len() {
                            gv[i] += g * (uv[i] / (nu * nv) - c * vv[i] / (nv * nv));
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let gx = acc(&mut grads, x.0, go.len());
                    for i in 0..go.len() {
                        gx[i] += go[i] * mask.data()[i];
                    }
                }
                Op::BinaryCrossEntropy { prob, label } => {
                    let p = self.nodes[prob.0]
                        .value
                        .item()
                        .clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    let d = -label / p + (1.0 - label) / (1.0 - p);
                    acc(&mut grads, prob.0, 1)[0] += go[0] * d;
                }
                Op::ColSoftmaxWeighted { rows, beta } => {
                    // out_j = sum_i beta_ij * s_ij with beta the column
                    // softmax; d out_j / d s_tj = beta_tj (1 + s_tj - out_j)
                    let out = node.value.data();
                    for (t, r) in rows.iter().enumerate() {
                        let sv = self.nodes[r.0].value.data();
                        let brow = beta.row(t);
                        let gr = acc(&mut grads, r.0, sv.len());
                        for j in 0..sv.len() {
                            gr[j] += go[j] * brow[j] * (1.0 + sv[j] - out[j]);
                        }
                    }
                }
            }
        }
    }
}

fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], idx: usize, len: usize) -> &'g mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s * scale;
    }
}

fn mul_into(dst: &mut [f64], go: &[f64], other: &[f64]) {
    for i in 0..dst.len() {
        dst[i] += go[i] * other[i];
    }
}

/// Central-difference gradient oracle.
///
/// Perturbs every scalar coordinate of every parameter by `±eps` and
/// evaluates `loss_fn` twice per coordinate. The loss must be
/// deterministic (dropout disabled, fixed seeds); this is checked by
/// evaluating twice up front.
pub fn finite_diff_gradient<F>(
    mut loss_fn: F,
    params: &mut ParamSet,
    eps: f64,
) -> Result<GradientStore>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::Config(format!("finite-difference eps must be > 0, got {eps}")));
    }
    let l1 = loss_fn(params)?;
    let l2 = loss_fn(params)?;
    if l1 != l2 {
        return Err(Error::NonDeterministicLoss(l1, l2));
    }

    let mut store = GradientStore::new(params);
    for r in 0..params.len() {
        let coords = params.tensors[r].len();
        for i in 0..coords {
            let orig = params.tensors[r].data()[i];
            params.tensors[r].data_mut()[i] = orig + eps;
            let fp = loss_fn(params)?;
            params.tensors[r].data_mut()[i] = orig - eps;
            let fm = loss_fn(params)?;
            params.tensors[r].data_mut()[i] = orig;
            store.grads[r].data_mut()[i] = (fp - fm) / (2.0 * eps);
        }
    }
    Ok(store)
}

/// Compare backprop gradients against the oracle coordinate by
/// coordinate. Returns the first violation of
/// `|bp - fd| <= max(abs_tol, rel_tol * max(|bp|, |fd|))`.
pub fn compare_gradients(
    params: &ParamSet,
    backprop: &GradientStore,
    oracle: &GradientStore,
    abs_tol: f64,
    rel_tol: f64,
) -> std::result::Result<(), String> {
    for r in params.refs() {
        let bp = backprop.get(r).data();
        let fd = oracle.get(r).data();
        for i in 0..bp.len() {
            let diff = (bp[i] - fd[i]).abs();
            let tol = abs_tol.max(rel_tol * bp[i].abs().max(fd[i].abs()));
            if diff > tol {
                return Err(format!(
                    "gradient mismatch at {}[{}]: backprop {} vs finite-diff {} (diff {diff:.3e})",
                    params.name(r),
                    i,
                    bp[i],
                    fd[i]
                ));
            }
        }
    }
    Ok(())
}
