//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! Every operation appends a node holding its forward value. Node inputs
//! always precede the node itself, so walking the tape backwards is a reverse
//! topological order and each node is visited exactly once.

use rand::Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm, log_softmax_in_place, softmax_in_place, Tensor};
use super::NumericsError;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Broadcast a `1 x n` row over every row of an `m x n` matrix.
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    /// Elementwise multiply by a fixed mask (0 or 1/(1-p)).
    Dropout(Var, Vec<f64>),
    /// Replace entries where `keep` is false by a constant.
    MaskFill(Var, Vec<bool>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    /// Pick flat elements into a `1 x n` row.
    Gather(Var, Vec<usize>),
    Sum(Var),
    SumRows(Var),
    Reshape(Var),
    /// `out[target[r]] += weight[r] * x[r]`; rows without a target are dropped.
    ScatterRows(Var, Vec<Option<(usize, f64)>>),
    /// Independent log-softmax over consecutive column groups of every row.
    GroupLogSoftmax(Var, Vec<usize>),
    /// Multi-head self-attention restricted to contiguous row segments.
    SegmentAttention {
        q: Var,
        k: Var,
        v: Var,
        segments: Vec<(usize, usize)>,
        heads: usize,
        /// Attention probabilities per segment and head, row-major.
        probs: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    /// `None` for parameters, whose value lives in the store.
    value: Option<Tensor>,
    op: Op,
}

/// Records a forward computation against a read-only parameter snapshot.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Tape<'p> {
        Tape {
            params,
            nodes: Vec::with_capacity(512),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("node without a value"),
        }
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.value(v).dims2()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, ok: bool, what: impl FnOnce() -> String) -> Result<(), NumericsError> {
        if ok {
            Ok(())
        } else {
            Err(NumericsError::Shape(what()))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        self.check(k == k2, || format!("matmul {m}x{k} by {k2}x{n}"))?;
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        self.check(k == k2, || format!("matmul_bt {m}x{k} by ({n}x{k2})^T"))?;
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), true, &mut out, 0.0);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMulBt(a, b)))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        self.check(ta.shape() == tb.shape(), || {
            format!("elementwise {:?} vs {:?}", ta.shape(), tb.shape())
        })?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip(a, b, f64::min, Op::Minimum(a, b))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(x);
        let rv = self.value(row);
        self.check(rv.numel() == n, || format!("add_row {m}x{n} with {:?}", rv.shape()))?;
        let mut out = self.value(x).clone();
        let r = rv.data().to_vec();
        for chunk in out.data_mut().chunks_mut(n.max(1)) {
            for (o, b) in chunk.iter_mut().zip(&r) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, row)))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, op)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, |v| v * v, Op::Square(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (_, n) = self.dims(x);
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            softmax_in_place(row);
        }
        self.push(out, Op::SoftmaxRows(x))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let (_, n) = self.dims(x);
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            log_softmax_in_place(row);
        }
        self.push(out, Op::LogSoftmaxRows(x))
    }

    /// Row-wise layer norm with per-column gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(x);
        self.check(self.value(gain).numel() == n && self.value(bias).numel() == n, || {
            format!("layer_norm width {n}")
        })?;
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Inverted dropout. Identity (and no node) when not training or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R, training: bool) -> Var {
        if !training || p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Dropout(x, mask))
    }

    /// Entries with `keep == false` become `fill`; gradients flow only through
    /// kept entries.
    pub fn mask_fill(&mut self, x: Var, keep: &[bool], fill: f64) -> Result<Var, NumericsError> {
        let t = self.value(x);
        self.check(keep.len() == t.numel(), || {
            format!("mask of {} for {:?}", keep.len(), t.shape())
        })?;
        let data = t
            .data()
            .iter()
            .zip(keep)
            .map(|(&v, &k)| if k { v } else { fill })
            .collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MaskFill(x, keep.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(x);
        self.check(start <= end && end <= n, || format!("slice_cols {start}..{end} of {n}"))?;
        let w = end - start;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * w);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + end]);
        }
        Ok(self.push(Tensor::matrix(m, w, out), Op::SliceCols(x, start, end)))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(x);
        self.check(start <= end && end <= m, || format!("slice_rows {start}..{end} of {m}"))?;
        let out = self.value(x).data()[start * n..end * n].to_vec();
        Ok(self.push(Tensor::matrix(end - start, n, out), Op::SliceRows(x, start, end)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let m = parts.first().map(|&p| self.dims(p).0).unwrap_or(0);
        self.check(parts.iter().all(|&p| self.dims(p).0 == m), || "concat_cols row mismatch".into())?;
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        Ok(self.push(Tensor::matrix(m, total, out), Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let n = parts.first().map(|&p| self.dims(p).1).unwrap_or(0);
        self.check(parts.iter().all(|&p| self.dims(p).1 == n), || "concat_rows width mismatch".into())?;
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
            m += self.dims(p).0;
        }
        Ok(self.push(Tensor::matrix(m, n, out), Op::ConcatRows(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(x);
        self.check(rows.iter().all(|&r| r < m), || format!("gather_rows index beyond {m}"))?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        Ok(self.push(Tensor::matrix(rows.len(), n, out), Op::GatherRows(x, rows.to_vec())))
    }

    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(x);
        self.check(idx.iter().all(|&i| i < t.numel()), || "gather index out of range".into())?;
        let out = idx.iter().map(|&i| t.data()[i]).collect();
        Ok(self.push(Tensor::row_vector(out), Op::Gather(x, idx.to_vec())))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Column sums as a `1 x n` row.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let (m, n) = self.dims(x);
        let src = self.value(x).data();
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, v) in out.iter_mut().zip(&src[r * n..(r + 1) * n]) {
                *o += v;
            }
        }
        self.push(Tensor::row_vector(out), Op::SumRows(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let t = Tensor::new(shape.to_vec(), self.value(x).data().to_vec())?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Weighted scatter-add of the rows of `x` into an `out_rows x n` matrix.
    pub fn scatter_rows(
        &mut self,
        x: Var,
        targets: &[Option<(usize, f64)>],
        out_rows: usize,
    ) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(x);
        self.check(targets.len() == m, || format!("{} targets for {m} rows", targets.len()))?;
        self.check(targets.iter().flatten().all(|&(t, _)| t < out_rows), || {
            format!("scatter target beyond {out_rows}")
        })?;
        let src = self.value(x).data();
        let mut out = vec![0.0; out_rows * n];
        for (r, t) in targets.iter().enumerate() {
            if let Some((t, w)) = *t {
                for c in 0..n {
                    out[t * n + c] += w * src[r * n + c];
                }
            }
        }
        Ok(self.push(Tensor::matrix(out_rows, n, out), Op::ScatterRows(x, targets.to_vec())))
    }

    pub fn group_log_softmax(&mut self, x: Var, widths: &[usize]) -> Result<Var, NumericsError> {
        let (_, n) = self.dims(x);
        self.check(widths.iter().sum::<usize>() == n, || format!("groups {widths:?} for width {n}"))?;
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            let mut off = 0;
            for &w in widths {
                log_softmax_in_place(&mut row[off..off + w]);
                off += w;
            }
        }
        Ok(self.push(out, Op::GroupLogSoftmax(x, widths.to_vec())))
    }

    /// Scaled dot-product attention with `heads` heads. Rows attend only to
    /// rows of their own `(start, len)` segment; segments must tile the rows.
    pub fn segment_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        segments: &[(usize, usize)],
        heads: usize,
    ) -> Result<Var, NumericsError> {
        let (m, d) = self.dims(q);
        self.check(self.dims(k) == (m, d) && self.dims(v) == (m, d), || "q, k, v shapes differ".into())?;
        self.check(heads > 0 && d % heads == 0, || format!("width {d} not divisible by {heads} heads"))?;
        let mut next = 0;
        for &(s, l) in segments {
            self.check(s == next, || "segments must tile the rows in order".into())?;
            next = s + l;
        }
        self.check(next == m, || format!("segments cover {next} of {m} rows"))?;
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![0.0; m * d];
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for &(s, l) in segments {
            for h in 0..heads {
                let c0 = h * dk;
                let mut p = vec![0.0; l * l];
                for i in 0..l {
                    let qi = &qv[(s + i) * d + c0..(s + i) * d + c0 + dk];
                    for j in 0..l {
                        let kj = &kv[(s + j) * d + c0..(s + j) * d + c0 + dk];
                        p[i * l + j] = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    }
                    softmax_in_place(&mut p[i * l..(i + 1) * l]);
                    let o = &mut out[(s + i) * d + c0..(s + i) * d + c0 + dk];
                    for j in 0..l {
                        let w = p[i * l + j];
                        let vj = &vv[(s + j) * d + c0..(s + j) * d + c0 + dk];
                        for (oc, vc) in o.iter_mut().zip(vj) {
                            *oc += w * vc;
                        }
                    }
                }
                probs.push(p);
            }
        }
        Ok(self.push(
            Tensor::matrix(m, d, out),
            Op::SegmentAttention {
                q,
                k,
                v,
                segments: segments.to_vec(),
                heads,
                probs,
            },
        ))
    }

    /// `x W + b` with `W: in x out` and `b: 1 x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    /// Reverse sweep from a scalar `loss`, accumulating into `grads`.
    /// Parameters the loss does not reach keep their existing gradient.
    pub fn backward_into(&self, loss: Var, grads: &mut Gradients) -> Result<(), NumericsError> {
        self.backward_scaled(loss, 1.0, grads)
    }

    /// Like [`Tape::backward_into`] with the seed gradient set to `seed`.
    pub fn backward_scaled(&self, loss: Var, seed: f64, grads: &mut Gradients) -> Result<(), NumericsError> {
        if self.value(loss).numel() != 1 {
            return Err(NumericsError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![seed])?);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut adj, grads);
        }
        Ok(())
    }

    /// Fresh gradients for every parameter in the store.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let mut grads = self.params.zero_grads();
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    fn propagate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>], grads: &mut Gradients) {
        let shape_of = |v: Var| self.value(v).shape().to_vec();
        let acc = |adj: &mut [Option<Tensor>], v: Var, data: Vec<f64>| {
            let t = Tensor::new(shape_of(v), data).expect("gradient shape");
            match &mut adj[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let gd = g.data();
        let out = self.value(Var(i));
        match &self.nodes[i].op {
            Op::Constant => {}
            Op::Param(id) => grads.get_mut(*id).add_assign(g),
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let (_, n) = self.dims(*b);
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, gd, false, self.value(*b).data(), true, &mut da, 0.0);
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, self.value(*a).data(), true, gd, false, &mut db, 0.0);
                acc(adj, *a, da);
                acc(adj, *b, db);
            }
            Op::MatMulBt(a, b) => {
                // out = a b^T, a: m x k, b: n x k
                let (m, k) = self.dims(*a);
                let (n, _) = self.dims(*b);
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, gd, false, self.value(*b).data(), false, &mut da, 0.0);
                let mut db = vec![0.0; n * k];
                gemm(n, m, k, gd, true, self.value(*a).data(), false, &mut db, 0.0);
                acc(adj, *a, da);
                acc(adj, *b, db);
            }
            Op::Add(a, b) => {
                acc(adj, *a, gd.to_vec());
                acc(adj, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                acc(adj, *a, gd.to_vec());
                acc(adj, *b, gd.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(adj, *a, gd.iter().zip(bv).map(|(g, y)| g * y).collect());
                acc(adj, *b, gd.iter().zip(av).map(|(g, x)| g * x).collect());
            }
            Op::Minimum(a, b) => {
                // ties route the gradient to the first operand
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let first: Vec<bool> = av.iter().zip(bv).map(|(x, y)| x <= y).collect();
                acc(adj, *a, gd.iter().zip(&first).map(|(g, &f)| if f { *g } else { 0.0 }).collect());
                acc(adj, *b, gd.iter().zip(&first).map(|(g, &f)| if f { 0.0 } else { *g }).collect());
            }
            Op::AddRow(x, row) => {
                let (_, n) = self.dims(*x);
                let mut dr = vec![0.0; n];
                for chunk in gd.chunks(n.max(1)) {
                    for (d, v) in dr.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
                acc(adj, *x, gd.to_vec());
                acc(adj, *row, dr);
            }
            Op::Scale(x, s) => acc(adj, *x, gd.iter().map(|v| v * s).collect()),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(adj, *x, gd.iter().zip(xv).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect());
            }
            Op::Exp(x) => acc(adj, *x, gd.iter().zip(out.data()).map(|(g, y)| g * y).collect()),
            Op::Square(x) => {
                let xv = self.value(*x).data();
                acc(adj, *x, gd.iter().zip(xv).map(|(g, v)| 2.0 * g * v).collect());
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                acc(
                    adj,
                    *x,
                    gd.iter()
                        .zip(xv)
                        .map(|(g, v)| if v >= lo && v <= hi { *g } else { 0.0 })
                        .collect(),
                );
            }
            Op::SoftmaxRows(x) => {
                let (_, n) = self.dims(*x);
                let mut dx = vec![0.0; gd.len()];
                for ((dxr, gr), yr) in dx.chunks_mut(n).zip(gd.chunks(n)).zip(out.data().chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for ((d, g), y) in dxr.iter_mut().zip(gr).zip(yr) {
                        *d = y * (g - dot);
                    }
                }
                acc(adj, *x, dx);
            }
            Op::LogSoftmaxRows(x) => {
                let (_, n) = self.dims(*x);
                let mut dx = vec![0.0; gd.len()];
                for ((dxr, gr), yr) in dx.chunks_mut(n).zip(gd.chunks(n)).zip(out.data().chunks(n)) {
                    let total: f64 = gr.iter().sum();
                    for ((d, g), y) in dxr.iter_mut().zip(gr).zip(yr) {
                        *d = g - y.exp() * total;
                    }
                }
                acc(adj, *x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (m, n) = self.dims(*x);
                let gv = self.value(*gain).data();
                let mut dx = vec![0.0; m * n];
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                for r in 0..m {
                    let gr = &gd[r * n..(r + 1) * n];
                    let hr = &xhat[r * n..(r + 1) * n];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for c in 0..n {
                        let dh = gr[c] * gv[c];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[c];
                        dg[c] += gr[c] * hr[c];
                        db[c] += gr[c];
                    }
                    mean_dh /= n as f64;
                    mean_dh_h /= n as f64;
                    for c in 0..n {
                        let dh = gr[c] * gv[c];
                        dx[r * n + c] = inv_std[r] * (dh - mean_dh - hr[c] * mean_dh_h);
                    }
                }
                acc(adj, *x, dx);
                acc(adj, *gain, dg);
                acc(adj, *bias, db);
            }
            Op::Dropout(x, mask) => acc(adj, *x, gd.iter().zip(mask).map(|(g, m)| g * m).collect()),
            Op::MaskFill(x, keep) => {
                acc(adj, *x, gd.iter().zip(keep).map(|(g, &k)| if k { *g } else { 0.0 }).collect())
            }
            Op::SliceCols(x, start, end) => {
                let (m, n) = self.dims(*x);
                let w = end - start;
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    dx[r * n + start..r * n + end].copy_from_slice(&gd[r * w..(r + 1) * w]);
                }
                acc(adj, *x, dx);
            }
            Op::SliceRows(x, start, end) => {
                let (m, n) = self.dims(*x);
                let mut dx = vec![0.0; m * n];
                dx[start * n..end * n].copy_from_slice(gd);
                acc(adj, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let (m, total) = g.dims2();
                let mut offset = 0;
                for &p in parts {
                    let (_, w) = self.dims(p);
                    let mut dp = Vec::with_capacity(m * w);
                    for r in 0..m {
                        dp.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                    }
                    offset += w;
                    acc(adj, p, dp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    acc(adj, p, gd[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::GatherRows(x, rows) => {
                let (m, n) = self.dims(*x);
                let mut dx = vec![0.0; m * n];
                for (i, &r) in rows.iter().enumerate() {
                    for c in 0..n {
                        dx[r * n + c] += gd[i * n + c];
                    }
                }
                acc(adj, *x, dx);
            }
            Op::Gather(x, idx) => {
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (g, &i) in gd.iter().zip(idx) {
                    dx[i] += g;
                }
                acc(adj, *x, dx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                acc(adj, *x, vec![gd[0]; n]);
            }
            Op::SumRows(x) => {
                let (m, n) = self.dims(*x);
                let mut dx = Vec::with_capacity(m * n);
                for _ in 0..m {
                    dx.extend_from_slice(gd);
                }
                acc(adj, *x, dx);
            }
            Op::Reshape(x) => acc(adj, *x, gd.to_vec()),
            Op::ScatterRows(x, targets) => {
                let (m, n) = self.dims(*x);
                let mut dx = vec![0.0; m * n];
                for (r, t) in targets.iter().enumerate() {
                    if let Some((t, w)) = *t {
                        for c in 0..n {
                            dx[r * n + c] = w * gd[t * n + c];
                        }
                    }
                }
                acc(adj, *x, dx);
            }
            Op::GroupLogSoftmax(x, widths) => {
                let (_, n) = self.dims(*x);
                let mut dx = vec![0.0; gd.len()];
                for ((dxr, gr), yr) in dx.chunks_mut(n).zip(gd.chunks(n)).zip(out.data().chunks(n)) {
                    let mut off = 0;
                    for &w in widths {
                        let total: f64 = gr[off..off + w].iter().sum();
                        for c in off..off + w {
                            dxr[c] = gr[c] - yr[c].exp() * total;
                        }
                        off += w;
                    }
                }
                acc(adj, *x, dx);
            }
            Op::SegmentAttention {
                q,
                k,
                v,
                segments,
                heads,
                probs,
            } => {
                let (m, d) = self.dims(*q);
                let dk = d / heads;
                let scale = 1.0 / (dk as f64).sqrt();
                let (qv, kv, vv) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut dq = vec![0.0; m * d];
                let mut dkm = vec![0.0; m * d];
                let mut dv = vec![0.0; m * d];
                let mut pi = 0;
                for &(s, l) in segments {
                    for h in 0..*heads {
                        let c0 = h * dk;
                        let p = &probs[pi];
                        pi += 1;
                        let at = |i: usize| (s + i) * d + c0;
                        // dP = dO V^T, dV = P^T dO
                        let mut ds = vec![0.0; l * l];
                        for i in 0..l {
                            let go = &gd[at(i)..at(i) + dk];
                            for j in 0..l {
                                let vj = &vv[at(j)..at(j) + dk];
                                ds[i * l + j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                                let w = p[i * l + j];
                                for c in 0..dk {
                                    dv[at(j) + c] += w * go[c];
                                }
                            }
                            let dot: f64 = (0..l).map(|j| ds[i * l + j] * p[i * l + j]).sum();
                            for j in 0..l {
                                ds[i * l + j] = p[i * l + j] * (ds[i * l + j] - dot) * scale;
                            }
                        }
                        for i in 0..l {
                            for j in 0..l {
                                let w = ds[i * l + j];
                                if w == 0.0 {
                                    continue;
                                }
                                for c in 0..dk {
                                    dq[at(i) + c] += w * kv[at(j) + c];
                                    dkm[at(j) + c] += w * qv[at(i) + c];
                                }
                            }
                        }
                    }
                }
                acc(adj, *q, dq);
                acc(adj, *k, dkm);
                acc(adj, *v, dv);
            }
        }
    }
}
