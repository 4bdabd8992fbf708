//! Reverse-mode differentiation over a recorded tape of matrix ops.
//!
//! A [`Graph`] borrows a [`ParameterStore`] for the duration of one forward
//! pass. Every op appends a node holding its output value (plus whatever its
//! backward rule needs); [`Graph::backward`] walks the tape in reverse and
//! returns per-node and per-parameter gradients.

use rand::Rng;

use super::params::{ParamId, ParameterStore};
use super::tensor::{gemm_into, Real, Tensor};
use super::NumericsError;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<F> {
    Owned(Tensor<F>),
    Param(ParamId),
}

enum Op<F> {
    Leaf,
    Affine { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Embed { table: Var, ids: Vec<usize> },
    Gather { sources: Vec<Var>, picks: Vec<(usize, usize)> },
    BlendRows { new: Var, old: Var, keep_new: Vec<bool> },
    Dropout { x: Var, mask: Vec<F> },
    Lstm { x: Var, h: Var, c: Var, wx: Var, wh: Var, b: Var, gates: Vec<F>, tanh_c: Vec<F> },
    SegmentAttention { q: Var, mem: Var, segments: Vec<(usize, usize)>, weights: Vec<F>, scale: F },
    MaskedNll { logits: Var, targets: Vec<usize>, mask: Vec<bool>, probs: Vec<F>, count: usize },
}

struct Node<F> {
    value: Value<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<F> {
    nodes: Vec<Option<Tensor<F>>>,
    params: Vec<(ParamId, Var)>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of the loss with respect to any node, if any flowed to it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<F>> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Adds the parameter gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParameterStore<F>) {
        for &(id, var) in &self.params {
            if let Some(g) = &self.nodes[var.0] {
                store.grad_mut(id).add_assign(g);
            }
        }
    }
}

pub struct Graph<'p, F: Real> {
    params: &'p ParameterStore<F>,
    nodes: Vec<Node<F>>,
    param_vars: Vec<Option<Var>>,
    training: bool,
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

impl<'p, F: Real> Graph<'p, F> {
    pub fn new(params: &'p ParameterStore<F>, training: bool) -> Self {
        Self { params, nodes: Vec::new(), param_vars: vec![None; params.len()], training }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced by op");
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.value(*id),
        }
    }

    pub fn scalar(&self, v: Var) -> F {
        self.value(v).get(0, 0)
    }

    /// A leaf that receives gradients (inputs under test).
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that never needs gradients.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Leaf, needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// `x·w + b`, with `b` a single row broadcast over the batch.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = Tensor::zeros(xv.rows(), wv.cols());
        gemm_into(&mut out, xv, false, wv, false, F::zero());
        if let Some(b) = b {
            let bv = self.value(b);
            assert_eq!(bv.shape(), [1, out.cols()], "bias shape");
            for r in 0..out.rows() {
                for (o, &bb) in out.row_mut(r).iter_mut().zip(bv.data()) {
                    *o += bb;
                }
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(out, Op::Affine { x, w, b }, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Tensor::zeros(av.rows(), bv.cols());
        gemm_into(&mut out, av, false, bv, false, F::zero());
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul { a, b, trans_b: false }, ng)
    }

    /// `a·bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Tensor::zeros(av.rows(), bv.rows());
        gemm_into(&mut out, av, false, bv, true, F::zero());
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul { a, b, trans_b: true }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let bv = self.value(b);
        let av = self.value(a);
        assert_eq!(av.shape(), bv.shape());
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, x: Var, s: F) -> Var {
        let out = self.value(x).map(|v| v * s);
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, s), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(F::tanh);
        let ng = self.ng(x);
        self.push(out, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let ng = self.ng(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    /// Row-wise softmax, computed after subtracting each row's maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let ng = self.ng(x);
        self.push(out, Op::SoftmaxRows(x), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols());
        let mut out = Tensor::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        let ng = self.ng(x);
        self.push(out, Op::SliceCols { x, start }, ng)
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let tv = self.value(table);
        let mut out = Tensor::zeros(ids.len(), tv.cols());
        for (i, &id) in ids.iter().enumerate() {
            if id >= tv.rows() {
                return Err(NumericsError::IndexOutOfVocab { index: id, vocab: tv.rows() });
            }
            out.row_mut(i).copy_from_slice(tv.row(id));
        }
        let ng = self.ng(table);
        Ok(self.push(out, Op::Embed { table, ids: ids.to_vec() }, ng))
    }

    /// Stacks selected rows: output row `i` is row `picks[i].1` of `sources[picks[i].0]`.
    pub fn gather(&mut self, sources: &[Var], picks: Vec<(usize, usize)>) -> Var {
        let cols = self.value(sources[0]).cols();
        let mut out = Tensor::zeros(picks.len(), cols);
        for (i, &(s, r)) in picks.iter().enumerate() {
            let sv = self.value(sources[s]);
            assert_eq!(sv.cols(), cols, "gather column mismatch");
            out.row_mut(i).copy_from_slice(sv.row(r));
        }
        let ng = sources.iter().any(|&s| self.ng(s));
        self.push(out, Op::Gather { sources: sources.to_vec(), picks }, ng)
    }

    /// Row `r` comes from `new` where `keep_new[r]`, otherwise from `old`.
    pub fn blend_rows(&mut self, new: Var, old: Var, keep_new: Vec<bool>) -> Var {
        let nv = self.value(new);
        let ov = self.value(old);
        assert_eq!(nv.shape(), ov.shape());
        assert_eq!(keep_new.len(), nv.rows());
        let mut out = ov.clone();
        for (r, &k) in keep_new.iter().enumerate() {
            if k {
                out.row_mut(r).copy_from_slice(nv.row(r));
            }
        }
        let ng = self.ng(new) || self.ng(old);
        self.push(out, Op::BlendRows { new, old, keep_new }, ng)
    }

    /// Inverted dropout. Identity outside training mode or when `p == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
        if !self.training || p == 0.0 {
            return x;
        }
        let keep = F::lit(1.0 / (1.0 - p));
        let xv = self.value(x);
        let mask: Vec<F> = (0..xv.len()).map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep }).collect();
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::from_vec(xv.rows(), xv.cols(), data);
        let ng = self.ng(x);
        self.push(out, Op::Dropout { x, mask }, ng)
    }

    /// One LSTM step for a batch of rows. Gate blocks of `wx`, `wh` and `b`
    /// are ordered input, forget, candidate, output.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, wx: Var, wh: Var, b: Var) -> (Var, Var) {
        let hv = self.value(h);
        let batch = hv.rows();
        let m = hv.cols();
        let mut gates = Tensor::zeros(batch, 4 * m);
        gemm_into(&mut gates, self.value(x), false, self.value(wx), false, F::zero());
        gemm_into(&mut gates, hv, false, self.value(wh), false, F::one());
        let bv = self.value(b);
        assert_eq!(bv.shape(), [1, 4 * m], "lstm bias shape");
        let cv = self.value(c);
        let mut hc = Tensor::zeros(batch, 2 * m);
        let mut tanh_c = vec![F::zero(); batch * m];
        for r in 0..batch {
            let g = gates.row_mut(r);
            for (gi, &bi) in g.iter_mut().zip(bv.data()) {
                *gi += bi;
            }
            for j in 0..m {
                g[j] = sigmoid(g[j]);
                g[m + j] = sigmoid(g[m + j]);
                g[2 * m + j] = g[2 * m + j].tanh();
                g[3 * m + j] = sigmoid(g[3 * m + j]);
            }
            let c_prev = cv.row(r);
            let out = hc.row_mut(r);
            for j in 0..m {
                let c_new = g[m + j] * c_prev[j] + g[j] * g[2 * m + j];
                let tc = c_new.tanh();
                tanh_c[r * m + j] = tc;
                out[j] = g[3 * m + j] * tc;
                out[m + j] = c_new;
            }
        }
        let ng = [x, h, c, wx, wh, b].iter().any(|&v| self.ng(v));
        let node = self.push(hc, Op::Lstm { x, h, c, wx, wh, b, gates: gates.into_vec(), tanh_c }, ng);
        let h_new = self.slice_cols(node, 0, m);
        let c_new = self.slice_cols(node, m, m);
        (h_new, c_new)
    }

    /// Scaled dot-product attention of each query row over its own segment
    /// of `mem` rows: row `i` of the output is
    /// `softmax(q_i · mem[s..s+len]ᵀ / √d) · mem[s..s+len]`.
    pub fn segment_attention(&mut self, q: Var, mem: Var, segments: Vec<(usize, usize)>) -> Var {
        let qv = self.value(q);
        let mv = self.value(mem);
        assert_eq!(qv.rows(), segments.len(), "one segment per query row");
        assert_eq!(qv.cols(), mv.cols());
        let d = qv.cols();
        let scale = F::one() / F::lit(d as f64).sqrt();
        let mut out = Tensor::zeros(qv.rows(), d);
        let mut weights = Vec::with_capacity(segments.iter().map(|s| s.1).sum());
        for (i, &(start, len)) in segments.iter().enumerate() {
            assert!(len > 0 && start + len <= mv.rows(), "bad attention segment");
            let qi = qv.row(i);
            let mut w: Vec<F> =
                (start..start + len).map(|t| dot(qi, mv.row(t)) * scale).collect();
            softmax_in_place(&mut w);
            let o = out.row_mut(i);
            for (k, &wk) in w.iter().enumerate() {
                for (oj, &mj) in o.iter_mut().zip(mv.row(start + k)) {
                    *oj += wk * mj;
                }
            }
            weights.extend(w);
        }
        let ng = self.ng(q) || self.ng(mem);
        self.push(out, Op::SegmentAttention { q, mem, segments, weights, scale }, ng)
    }

    /// Attention weights recorded by a [`Graph::segment_attention`] node, one
    /// vector per query row.
    pub fn attention_weights(&self, v: Var) -> Option<Vec<Vec<F>>> {
        match &self.nodes[v.0].op {
            Op::SegmentAttention { segments, weights, .. } => {
                let mut out = Vec::with_capacity(segments.len());
                let mut offset = 0;
                for &(_, len) in segments {
                    out.push(weights[offset..offset + len].to_vec());
                    offset += len;
                }
                Some(out)
            }
            _ => None,
        }
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, over the rows where `mask` is true.
    pub fn masked_nll(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var, NumericsError> {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len());
        assert_eq!(lv.rows(), mask.len());
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(NumericsError::AllMasked);
        }
        let v = lv.cols();
        let mut probs = vec![F::zero(); lv.len()];
        let mut total = F::zero();
        for r in 0..lv.rows() {
            if !mask[r] {
                continue;
            }
            if targets[r] >= v {
                return Err(NumericsError::IndexOutOfVocab { index: targets[r], vocab: v });
            }
            let row = lv.row(r);
            let p = &mut probs[r * v..(r + 1) * v];
            p.copy_from_slice(row);
            let max = p.iter().copied().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for x in p.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            let lse = max + sum.ln();
            total += lse - row[targets[r]];
            for x in p.iter_mut() {
                *x = *x / sum;
            }
        }
        let loss = total / F::lit(count as f64);
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::filled(1, 1, loss),
            Op::MaskedNll { logits, targets: targets.to_vec(), mask: mask.to_vec(), probs, count },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<F> {
        assert_eq!(self.value(loss).shape(), [1, 1], "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(1, 1, F::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.backward_op(&node.op, idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }

        let params = self.param_vars.iter().enumerate().filter_map(|(i, v)| v.map(|v| (ParamId(i), v))).collect();
        Gradients { nodes: grads, params }
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor<F>>], v: Var) -> Option<&'g mut Tensor<F>> {
        if !self.ng(v) {
            return None;
        }
        let shape = self.value(v).shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape[0], shape[1])))
    }

    fn backward_op(&self, op: &Op<F>, idx: usize, dy: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let out = self.value(Var(idx));
        match op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if let Some(gx) = self.grad_slot(grads, *x) {
                    gemm_into(gx, dy, false, wv, true, F::one());
                }
                if let Some(gw) = self.grad_slot(grads, *w) {
                    gemm_into(gw, xv, true, dy, false, F::one());
                }
                if let Some(b) = b {
                    if let Some(gb) = self.grad_slot(grads, *b) {
                        col_sum_into(gb.data_mut(), dy);
                    }
                }
            }
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.grad_slot(grads, *a) {
                    // y = a·b  => da = dy·bᵀ ; y = a·bᵀ => da = dy·b
                    gemm_into(ga, dy, false, bv, !trans_b, F::one());
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    if *trans_b {
                        gemm_into(gb, dy, true, av, false, F::one());
                    } else {
                        gemm_into(gb, av, true, dy, false, F::one());
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(g) = self.grad_slot(grads, *v) {
                        g.add_assign(dy);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).clone(), self.value(*b).clone());
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for ((g, &d), &o) in ga.data_mut().iter_mut().zip(dy.data()).zip(bv.data()) {
                        *g += d * o;
                    }
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    for ((g, &d), &o) in gb.data_mut().iter_mut().zip(dy.data()).zip(av.data()) {
                        *g += d * o;
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(g) = self.grad_slot(grads, *x) {
                    for (gi, &d) in g.data_mut().iter_mut().zip(dy.data()) {
                        *gi += d * *s;
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(g) = self.grad_slot(grads, *x) {
                    for ((gi, &d), &y) in g.data_mut().iter_mut().zip(dy.data()).zip(out.data()) {
                        *gi += d * (F::one() - y * y);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(g) = self.grad_slot(grads, *x) {
                    for ((gi, &d), &y) in g.data_mut().iter_mut().zip(dy.data()).zip(out.data()) {
                        *gi += d * y * (F::one() - y);
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                if let Some(g) = self.grad_slot(grads, *x) {
                    for r in 0..out.rows() {
                        let y = out.row(r);
                        let d = dy.row(r);
                        let inner = dot(y, d);
                        for ((gi, &yi), &di) in g.row_mut(r).iter_mut().zip(y).zip(d) {
                            *gi += yi * (di - inner);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let cols = self.value(*p).cols();
                    if let Some(g) = self.grad_slot(grads, *p) {
                        for r in 0..dy.rows() {
                            for (gi, &d) in g.row_mut(r).iter_mut().zip(&dy.row(r)[offset..offset + cols]) {
                                *gi += d;
                            }
                        }
                    }
                    offset += cols;
                }
            }
            Op::SliceCols { x, start } => {
                if let Some(g) = self.grad_slot(grads, *x) {
                    for r in 0..dy.rows() {
                        for (gi, &d) in g.row_mut(r)[*start..*start + dy.cols()].iter_mut().zip(dy.row(r)) {
                            *gi += d;
                        }
                    }
                }
            }
            Op::Embed { table, ids } => {
                if let Some(g) = self.grad_slot(grads, *table) {
                    for (i, &id) in ids.iter().enumerate() {
                        for (gi, &d) in g.row_mut(id).iter_mut().zip(dy.row(i)) {
                            *gi += d;
                        }
                    }
                }
            }
            Op::Gather { sources, picks } => {
                for (i, &(s, r)) in picks.iter().enumerate() {
                    if let Some(g) = self.grad_slot(grads, sources[s]) {
                        for (gi, &d) in g.row_mut(r).iter_mut().zip(dy.row(i)) {
                            *gi += d;
                        }
                    }
                }
            }
            Op::BlendRows { new, old, keep_new } => {
                for (v, want) in [(new, true), (old, false)] {
                    if let Some(g) = self.grad_slot(grads, *v) {
                        for (r, &k) in keep_new.iter().enumerate() {
                            if k == want {
                                for (gi, &d) in g.row_mut(r).iter_mut().zip(dy.row(r)) {
                                    *gi += d;
                                }
                            }
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(g) = self.grad_slot(grads, *x) {
                    for ((gi, &d), &m) in g.data_mut().iter_mut().zip(dy.data()).zip(mask) {
                        *gi += d * m;
                    }
                }
            }
            Op::Lstm { x, h, c, wx, wh, b, gates, tanh_c } => {
                let m = out.cols() / 2;
                let batch = out.rows();
                let cv = self.value(*c);
                let mut dgates = Tensor::zeros(batch, 4 * m);
                let mut dc_prev = Tensor::zeros(batch, m);
                for r in 0..batch {
                    let g = &gates[r * 4 * m..(r + 1) * 4 * m];
                    let d = dy.row(r);
                    let c_prev = cv.row(r);
                    let dg = dgates.row_mut(r);
                    for j in 0..m {
                        let (i_g, f_g, c_g, o_g) = (g[j], g[m + j], g[2 * m + j], g[3 * m + j]);
                        let tc = tanh_c[r * m + j];
                        let dh = d[j];
                        let dc = d[m + j] + dh * o_g * (F::one() - tc * tc);
                        dg[j] = dc * c_g * i_g * (F::one() - i_g);
                        dg[m + j] = dc * c_prev[j] * f_g * (F::one() - f_g);
                        dg[2 * m + j] = dc * i_g * (F::one() - c_g * c_g);
                        dg[3 * m + j] = dh * tc * o_g * (F::one() - o_g);
                        dc_prev.row_mut(r)[j] = dc * f_g;
                    }
                }
                if let Some(gc) = self.grad_slot(grads, *c) {
                    gc.add_assign(&dc_prev);
                }
                let (wxv, whv) = (self.value(*wx), self.value(*wh));
                if let Some(gx) = self.grad_slot(grads, *x) {
                    gemm_into(gx, &dgates, false, wxv, true, F::one());
                }
                if let Some(gh) = self.grad_slot(grads, *h) {
                    gemm_into(gh, &dgates, false, whv, true, F::one());
                }
                let (xv, hv) = (self.value(*x), self.value(*h));
                if let Some(gwx) = self.grad_slot(grads, *wx) {
                    gemm_into(gwx, xv, true, &dgates, false, F::one());
                }
                if let Some(gwh) = self.grad_slot(grads, *wh) {
                    gemm_into(gwh, hv, true, &dgates, false, F::one());
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    col_sum_into(gb.data_mut(), &dgates);
                }
            }
            Op::SegmentAttention { q, mem, segments, weights, scale } => {
                let qv = self.value(*q);
                let mv = self.value(*mem);
                let d = qv.cols();
                let mut dq = Tensor::zeros(qv.rows(), d);
                let mut dmem = Tensor::zeros(mv.rows(), d);
                let mut offset = 0;
                for (i, &(start, len)) in segments.iter().enumerate() {
                    let w = &weights[offset..offset + len];
                    offset += len;
                    let du = dy.row(i);
                    let dw: Vec<F> = (0..len).map(|k| dot(du, mv.row(start + k))).collect();
                    let inner = dot(w, &dw);
                    for k in 0..len {
                        let ds = w[k] * (dw[k] - inner) * *scale;
                        let row = dmem.row_mut(start + k);
                        for j in 0..d {
                            row[j] += w[k] * du[j] + ds * qv.get(i, j);
                        }
                        let mrow = mv.row(start + k);
                        for (dqj, &mj) in dq.row_mut(i).iter_mut().zip(mrow) {
                            *dqj += ds * mj;
                        }
                    }
                }
                if let Some(g) = self.grad_slot(grads, *q) {
                    g.add_assign(&dq);
                }
                if let Some(g) = self.grad_slot(grads, *mem) {
                    g.add_assign(&dmem);
                }
            }
            Op::MaskedNll { logits, targets, mask, probs, count } => {
                if let Some(g) = self.grad_slot(grads, *logits) {
                    let v = g.cols();
                    let coef = dy.get(0, 0) / F::lit(*count as f64);
                    for r in 0..g.rows() {
                        if !mask[r] {
                            continue;
                        }
                        let p = &probs[r * v..(r + 1) * v];
                        let row = g.row_mut(r);
                        for (gi, &pi) in row.iter_mut().zip(p) {
                            *gi += pi * coef;
                        }
                        row[targets[r]] -= coef;
                    }
                }
            }
        }
    }
}

pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    // Four independent accumulators so the loop vectorises.
    let mut acc = [F::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub(crate) fn softmax_in_place<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
}

fn col_sum_into<F: Real>(acc: &mut [F], m: &Tensor<F>) {
    for r in 0..m.rows() {
        for (a, &v) in acc.iter_mut().zip(m.row(r)) {
            *a += v;
        }
    }
}
