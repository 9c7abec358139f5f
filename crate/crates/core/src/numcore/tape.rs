//! Reverse-mode gradient tape over row-major matrices.
//!
//! Every node holds a `rows × cols` value. Leaves are registered from
//! tensors (copied), interior nodes record the op that produced them. Nodes
//! that cannot reach a gradient-requiring leaf are never visited by
//! `backward`, so frozen weights cost nothing beyond the forward pass.

use super::scalar::{gemm_into, Scalar};
use super::tensor::{log_sum_exp, softmax_in_place, Tensor};
use crate::error::{dim_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Mul(Var, Var),
    Gelu(Var),
    LayerNorm { x: Var, rstd: Vec<T> },
    PrependRows { prefix: Var, x: Var, blocks: usize },
    Attention { q: Var, k: Var, v: Var, blocks: usize, heads: usize, probs: Vec<T> },
    SelectRows { x: Var, idx: Vec<usize> },
    GatherCols { x: Var, cols: Vec<usize> },
    Sum(Var),
    SoftmaxRows(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    op: Op<T>,
    track: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

const LN_EPS: f64 = 1e-5;

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>, track: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { rows, cols, value, op, track });
        Var(self.nodes.len() - 1)
    }

    fn n(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    /// Registers a leaf that receives a gradient iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, t.data().to_vec(), Op::Leaf, t.requires_grad)
    }

    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, t.data().to_vec(), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_raw(&mut self, rows: usize, cols: usize, value: Vec<T>) -> Result<Var> {
        if rows * cols != value.len() {
            return dim_err(format!("{rows}x{cols} constant with {} values", value.len()));
        }
        Ok(self.push(rows, cols, value, Op::Leaf, false))
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.n(v);
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.n(v).value
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = self.n(v);
        Tensor::new(&[n.rows, n.cols], n.value.clone()).expect("node shape is consistent")
    }

    pub fn scalar(&self, v: Var) -> Result<T> {
        let n = self.n(v);
        if n.value.len() != 1 {
            return Err(Error::Contract(format!("expected scalar, node is {}x{}", n.rows, n.cols)));
        }
        Ok(n.value[0])
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.n(v).track
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return dim_err(format!("matmul {m}x{k} · {k2}x{n}"));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_into(m, k, n, &self.n(a).value, false, &self.n(b).value, false, &mut out, T::one(), false);
        let track = self.n(a).track || self.n(b).track;
        Ok(self.push(m, n, out, Op::MatMul(a, b), track))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return dim_err(format!("add {:?} + {:?}", self.shape(a), self.shape(b)));
        }
        let (r, c) = self.shape(a);
        let out = self.n(a).value.iter().zip(&self.n(b).value).map(|(&x, &y)| x + y).collect();
        let track = self.n(a).track || self.n(b).track;
        Ok(self.push(r, c, out, Op::Add(a, b), track))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.n(bias).value.len() != c {
            return dim_err(format!("bias of {} for {c} columns", self.n(bias).value.len()));
        }
        let b = &self.n(bias).value;
        let mut out = self.n(a).value.clone();
        for row in out.chunks_mut(c.max(1)) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let track = self.n(a).track || self.n(bias).track;
        Ok(self.push(r, c, out, Op::AddBias(a, bias), track))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let (r, c) = self.shape(a);
        let out = self.n(a).value.iter().map(|&x| x * s).collect();
        let track = self.n(a).track;
        self.push(r, c, out, Op::Scale(a, s), track)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return dim_err(format!("mul {:?} * {:?}", self.shape(a), self.shape(b)));
        }
        let (r, c) = self.shape(a);
        let out = self.n(a).value.iter().zip(&self.n(b).value).map(|(&x, &y)| x * y).collect();
        let track = self.n(a).track || self.n(b).track;
        Ok(self.push(r, c, out, Op::Mul(a, b), track))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.n(a).value.iter().map(|&x| gelu(x)).collect();
        let track = self.n(a).track;
        self.push(r, c, out, Op::Gelu(a), track)
    }

    /// Per-row normalization to zero mean and unit variance, no affine terms.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let x = &self.n(a).value;
        let mut out = vec![T::zero(); r * c];
        let mut rstd = Vec::with_capacity(r);
        let cn = T::c(c as f64);
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() / cn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cn;
            let rs = T::one() / (var + T::c(LN_EPS)).sqrt();
            for (o, &v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (v - mean) * rs;
            }
            rstd.push(rs);
        }
        let track = self.n(a).track;
        self.push(r, c, out, Op::LayerNorm { x: a, rstd }, track)
    }

    /// `x` holds `blocks` stacked sequences; `prefix` rows are inserted in
    /// front of each of them.
    pub fn prepend_rows(&mut self, prefix: Var, x: Var, blocks: usize) -> Result<Var> {
        let (p, cp) = self.shape(prefix);
        let (rx, c) = self.shape(x);
        if p > 0 && cp != c {
            return dim_err(format!("prefix width {cp} vs {c}"));
        }
        if blocks == 0 || rx % blocks != 0 {
            return dim_err(format!("{rx} rows do not split into {blocks} blocks"));
        }
        let s = rx / blocks;
        let mut out = Vec::with_capacity((s + p) * blocks * c);
        let pv = &self.n(prefix).value;
        let xv = &self.n(x).value;
        for b in 0..blocks {
            out.extend_from_slice(&pv[..p * c]);
            out.extend_from_slice(&xv[b * s * c..(b + 1) * s * c]);
        }
        let track = self.n(x).track || (p > 0 && self.n(prefix).track);
        Ok(self.push((s + p) * blocks, c, out, Op::PrependRows { prefix, x, blocks }, track))
    }

    /// Multi-head scaled dot-product attention over `blocks` independent
    /// sequences: `q` is `blocks·sq × d`, `k` and `v` are `blocks·sk × d`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, blocks: usize, heads: usize) -> Result<Var> {
        let (rq, d) = self.shape(q);
        let (rk, dk) = self.shape(k);
        if self.shape(v) != (rk, dk) || dk != d {
            return dim_err(format!("attention q {:?} k {:?} v {:?}", self.shape(q), self.shape(k), self.shape(v)));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("{d} not divisible by {heads} heads")));
        }
        if blocks == 0 || rq % blocks != 0 || rk % blocks != 0 {
            return dim_err(format!("attention rows {rq}/{rk} vs {blocks} blocks"));
        }
        let (sq, sk, dh) = (rq / blocks, rk / blocks, d / heads);
        let scale = T::one() / T::c(dh as f64).sqrt();
        let (qv, kv, vv) = (&self.n(q).value, &self.n(k).value, &self.n(v).value);
        let mut probs = vec![T::zero(); blocks * heads * sq * sk];
        let mut out = vec![T::zero(); rq * d];
        for b in 0..blocks {
            for h in 0..heads {
                let pbase = (b * heads + h) * sq * sk;
                for i in 0..sq {
                    let qrow = &qv[(b * sq + i) * d + h * dh..(b * sq + i) * d + (h + 1) * dh];
                    let prow = &mut probs[pbase + i * sk..pbase + (i + 1) * sk];
                    for j in 0..sk {
                        let krow = &kv[(b * sk + j) * d + h * dh..(b * sk + j) * d + (h + 1) * dh];
                        prow[j] = dot(qrow, krow) * scale;
                    }
                    if sk > 0 {
                        softmax_in_place(prow);
                    }
                    let orow = &mut out[(b * sq + i) * d + h * dh..(b * sq + i) * d + (h + 1) * dh];
                    for j in 0..sk {
                        let pj = prow[j];
                        let vrow = &vv[(b * sk + j) * d + h * dh..(b * sk + j) * d + (h + 1) * dh];
                        for (o, &x) in orow.iter_mut().zip(vrow) {
                            *o += pj * x;
                        }
                    }
                }
            }
        }
        let track = self.n(q).track || self.n(k).track || self.n(v).track;
        Ok(self.push(rq, d, out, Op::Attention { q, k, v, blocks, heads, probs }, track))
    }

    /// Attention probabilities recorded by an attention node, laid out as
    /// `[block][head][query][key]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.n(v).op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::Index(format!("row {bad} of {r}")));
        }
        let xv = &self.n(x).value;
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&xv[i * c..(i + 1) * c]);
        }
        let track = self.n(x).track;
        Ok(self.push(idx.len(), c, out, Op::SelectRows { x, idx: idx.to_vec() }, track))
    }

    pub fn gather_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(x);
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(Error::Index(format!("column {bad} of {c}")));
        }
        let xv = &self.n(x).value;
        let mut out = Vec::with_capacity(r * cols.len());
        for i in 0..r {
            for &j in cols {
                out.push(xv[i * c + j]);
            }
        }
        let track = self.n(x).track;
        Ok(self.push(r, cols.len(), out, Op::GatherCols { x, cols: cols.to_vec() }, track))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.n(x).value.iter().copied().sum();
        let track = self.n(x).track;
        self.push(1, 1, vec![s], Op::Sum(x), track)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.n(x).value.len().max(1);
        let s = self.sum(x);
        self.scale(s, T::one() / T::c(n as f64))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        let mut out = self.n(x).value.clone();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("softmax input contains NaN or Inf".into()));
        }
        if c > 0 {
            for row in out.chunks_mut(c) {
                softmax_in_place(row);
            }
        }
        let track = self.n(x).track;
        Ok(self.push(r, c, out, Op::SoftmaxRows(x), track))
    }

    /// Mean cross-entropy of row-wise softmax against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if targets.len() != r {
            return dim_err(format!("{} targets for {r} rows", targets.len()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Index(format!("target {bad} with {c} classes")));
        }
        let lv = &self.n(logits).value;
        if lv.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("logits contain NaN or Inf".into()));
        }
        let mut probs = lv.clone();
        let mut total = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            let row = &lv[i * c..(i + 1) * c];
            total += log_sum_exp(row) - row[t];
            softmax_in_place(&mut probs[i * c..(i + 1) * c]);
        }
        let loss = total / T::c(r.max(1) as f64);
        let track = self.n(logits).track;
        Ok(self.push(1, 1, vec![loss], Op::CrossEntropy { logits, targets: targets.to_vec(), probs }, track))
    }

    /// Propagates d(loss)/d(node) to every tracked node. `loss` must be 1×1.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ln = self.n(loss);
        if ln.value.len() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got {}x{}", ln.rows, ln.cols)));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.track {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let (r, c) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = c;
                if self.n(*a).track {
                    let ga = slot(grads, *a, m * k);
                    gemm_into(m, n, k, g, false, &self.n(*b).value, true, ga, T::one(), true);
                }
                if self.n(*b).track {
                    let gb = slot(grads, *b, k * n);
                    gemm_into(k, m, n, &self.n(*a).value, true, g, false, gb, T::one(), true);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.n(v).track {
                        add_into(slot(grads, v, r * c), g);
                    }
                }
            }
            Op::AddBias(a, bias) => {
                if self.n(*a).track {
                    add_into(slot(grads, *a, r * c), g);
                }
                if self.n(*bias).track {
                    let gb = slot(grads, *bias, c);
                    for row in g.chunks(c.max(1)) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Scale(a, s) => {
                if self.n(*a).track {
                    let ga = slot(grads, *a, r * c);
                    for (o, &v) in ga.iter_mut().zip(g) {
                        *o += v * *s;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.n(*a).value, &self.n(*b).value);
                if self.n(*a).track {
                    let ga = slot(grads, *a, r * c);
                    for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gv * y;
                    }
                }
                if self.n(*b).track {
                    let gb = slot(grads, *b, r * c);
                    for ((o, &gv), &x) in gb.iter_mut().zip(g).zip(av) {
                        *o += gv * x;
                    }
                }
            }
            Op::Gelu(a) => {
                let av = &self.n(*a).value;
                let ga = slot(grads, *a, r * c);
                for ((o, &gv), &x) in ga.iter_mut().zip(g).zip(av) {
                    *o += gv * gelu_grad(x);
                }
            }
            Op::LayerNorm { x, rstd } => {
                let y = &node.value;
                let gx = slot(grads, *x, r * c);
                let cn = T::c(c as f64);
                for row in 0..r {
                    let gy = &g[row * c..(row + 1) * c];
                    let yr = &y[row * c..(row + 1) * c];
                    let mg = gy.iter().copied().sum::<T>() / cn;
                    let mgy = gy.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / cn;
                    for j in 0..c {
                        gx[row * c + j] += rstd[row] * (gy[j] - mg - yr[j] * mgy);
                    }
                }
            }
            Op::PrependRows { prefix, x, blocks } => {
                let p = self.shape(*prefix).0;
                let s = r / blocks - p;
                if p > 0 && self.n(*prefix).track {
                    let gp = slot(grads, *prefix, p * c);
                    for b in 0..*blocks {
                        let base = b * (s + p) * c;
                        add_into(gp, &g[base..base + p * c]);
                    }
                }
                if self.n(*x).track {
                    let gx = slot(grads, *x, s * blocks * c);
                    for b in 0..*blocks {
                        let base = b * (s + p) * c + p * c;
                        add_into(&mut gx[b * s * c..(b + 1) * s * c], &g[base..base + s * c]);
                    }
                }
            }
            Op::Attention { q, k, v, blocks, heads, probs } => {
                self.attention_backward(g, *q, *k, *v, *blocks, *heads, probs, grads);
            }
            Op::SelectRows { x, idx } => {
                let rx = self.shape(*x).0;
                let gx = slot(grads, *x, rx * c);
                for (o, &src) in idx.iter().enumerate() {
                    add_into(&mut gx[src * c..(src + 1) * c], &g[o * c..(o + 1) * c]);
                }
            }
            Op::GatherCols { x, cols } => {
                let cx = self.shape(*x).1;
                let gx = slot(grads, *x, r * cx);
                for row in 0..r {
                    for (o, &j) in cols.iter().enumerate() {
                        gx[row * cx + j] += g[row * c + o];
                    }
                }
            }
            Op::Sum(x) => {
                let n = self.n(*x).value.len();
                let gx = slot(grads, *x, n);
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let gx = slot(grads, *x, r * c);
                for row in 0..r {
                    let yr = &y[row * c..(row + 1) * c];
                    let gy = &g[row * c..(row + 1) * c];
                    let dotv: T = yr.iter().zip(gy).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        gx[row * c + j] += yr[j] * (gy[j] - dotv);
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let (n, cl) = self.shape(*logits);
                let gl = slot(grads, *logits, n * cl);
                let w = g[0] / T::c(n.max(1) as f64);
                for (row, &t) in targets.iter().enumerate() {
                    for j in 0..cl {
                        let ind = if j == t { T::one() } else { T::zero() };
                        gl[row * cl + j] += w * (probs[row * cl + j] - ind);
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[T],
        q: Var,
        k: Var,
        v: Var,
        blocks: usize,
        heads: usize,
        probs: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (rq, d) = self.shape(q);
        let rk = self.shape(k).0;
        let (sq, sk, dh) = (rq / blocks, rk / blocks, d / heads);
        let scale = T::one() / T::c(dh as f64).sqrt();
        let (qv, kv, vv) = (&self.n(q).value, &self.n(k).value, &self.n(v).value);
        let (tq, tk, tv) = (self.n(q).track, self.n(k).track, self.n(v).track);
        let mut gq = if tq { vec![T::zero(); rq * d] } else { Vec::new() };
        let mut gk = if tk { vec![T::zero(); rk * d] } else { Vec::new() };
        let mut gv = if tv { vec![T::zero(); rk * d] } else { Vec::new() };
        let mut dp = vec![T::zero(); sk];
        for b in 0..blocks {
            for h in 0..heads {
                let pbase = (b * heads + h) * sq * sk;
                for i in 0..sq {
                    let prow = &probs[pbase + i * sk..pbase + (i + 1) * sk];
                    let go = &g[(b * sq + i) * d + h * dh..(b * sq + i) * d + (h + 1) * dh];
                    for j in 0..sk {
                        let voff = (b * sk + j) * d + h * dh;
                        dp[j] = dot(go, &vv[voff..voff + dh]);
                        if tv {
                            for (o, &x) in gv[voff..voff + dh].iter_mut().zip(go) {
                                *o += prow[j] * x;
                            }
                        }
                    }
                    if !(tq || tk) {
                        continue;
                    }
                    let s: T = prow.iter().zip(&dp).map(|(&a, &b)| a * b).sum();
                    let qoff = (b * sq + i) * d + h * dh;
                    for j in 0..sk {
                        let ds = prow[j] * (dp[j] - s) * scale;
                        if ds == T::zero() {
                            continue;
                        }
                        let koff = (b * sk + j) * d + h * dh;
                        if tq {
                            for (o, &x) in gq[qoff..qoff + dh].iter_mut().zip(&kv[koff..koff + dh]) {
                                *o += ds * x;
                            }
                        }
                        if tk {
                            for (o, &x) in gk[koff..koff + dh].iter_mut().zip(&qv[qoff..qoff + dh]) {
                                *o += ds * x;
                            }
                        }
                    }
                }
            }
        }
        if tq {
            add_into(slot(grads, q, rq * d), &gq);
        }
        if tk {
            add_into(slot(grads, k, rk * d), &gk);
        }
        if tv {
            add_into(slot(grads, v, rk * d), &gv);
        }
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, n: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044715;

pub fn gelu<T: Scalar>(x: T) -> T {
    let u = T::c(SQRT_2_OVER_PI) * (x + T::c(GELU_C) * x * x * x);
    T::c(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::c(SQRT_2_OVER_PI) * (x + T::c(GELU_C) * x * x * x);
    let th = u.tanh();
    let du = T::c(SQRT_2_OVER_PI) * (T::one() + T::c(3.0 * GELU_C) * x * x);
    T::c(0.5) * (T::one() + th) + T::c(0.5) * x * (T::one() - th * th) * du
}

/// Gradients of one backward pass, indexed by tape node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `t`'s buffer (no-op when `v` received
    /// no gradient).
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor<T>) -> Result<()> {
        match self.wrt(v) {
            Some(g) => t.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(&Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(&Tensor::zeros(&[3, 2]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn square_at_three_gives_six() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(&Tensor::filled(&[1], 3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[6.0]);
    }

    #[test]
    fn repeated_backward_accumulates_into_tensor() {
        let mut t = Tensor::<f64>::filled(&[1], 3.0).with_grad();
        let mut tape = Tape::new();
        let x = tape.leaf(&t);
        let y = tape.mul(x, x).unwrap();
        for _ in 0..2 {
            tape.backward(y).unwrap().accumulate_into(x, &mut t).unwrap();
        }
        assert_eq!(t.grad().unwrap(), &[12.0]);
    }

    #[test]
    fn frozen_branch_gets_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let w = tape.constant(&Tensor::eye(2));
        let x = tape.param(&Tensor::filled(&[1, 2], 1.0));
        let y = tape.matmul(x, w).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.wrt(w).is_none());
        assert_eq!(g.wrt(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn prepend_empty_prefix_is_identity() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(&Tensor::zeros(&[0, 3]));
        let x = tape.constant(&Tensor::filled(&[4, 3], 2.0));
        let y = tape.prepend_rows(p, x, 2).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }
}
