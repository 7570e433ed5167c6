//! Eager computation graph with reverse-mode gradients.
//!
//! Each op computes its value immediately and appends a node to the tape.
//! Nodes only reference earlier nodes, so creation order is a topological
//! order and `backward` is a single reverse sweep. A graph lives for one
//! forward/backward pass and is then dropped.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{axpy, dot, gemm_nn, gemm_nt, gemm_tn};
use super::tensor::Tensor;
use crate::diag::Diagnostics;
use crate::math;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    Scalar,
    /// `b` has one value per column of `a`.
    Row,
    /// `b` has one value per row of `a` (shape `[rows, 1]`).
    Col,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Leading axis of a rank-2 tensor (or the only axis of a rank-1 one).
    Rows,
    /// Last axis.
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Div(Var, Var, Bcast),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>, Axis),
    Slice {
        src: Var,
        axis: Axis,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    Exp(Var),
    Square(Var),
    LogSumExp(Var),
    L2NormalizeRows {
        src: Var,
        norms: Vec<f64>,
        eps: f64,
    },
    GatherRows(Var, Arc<[u32]>),
    NeighborLogits {
        query: Var,
        keys: Var,
        nbrs: Arc<[u32]>,
        k: usize,
        heads: usize,
        scale: f64,
    },
    GroupSoftmax {
        src: Var,
        group: usize,
    },
    NeighborAggregate {
        weights: Var,
        values: Var,
        nbrs: Arc<[u32]>,
        k: usize,
        heads: usize,
    },
    GroupMean {
        src: Var,
        idx: Arc<[u32]>,
        group: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
    grad: Option<Vec<f64>>,
}

/// Tape of tensor operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    pub diagnostics: Diagnostics,
}

fn bcast_kind(a: &Tensor, b: &Tensor) -> Option<Bcast> {
    if a.shape() == b.shape() {
        Some(Bcast::Same)
    } else if b.numel() == 1 {
        Some(Bcast::Scalar)
    } else if a.rank() == 2 && b.shape() == [a.shape()[0], 1] {
        Some(Bcast::Col)
    } else if b.numel() == a.cols() && (b.rank() == 1 || (b.rank() == 2 && b.shape()[0] == 1)) {
        Some(Bcast::Row)
    } else {
        None
    }
}

#[inline]
fn bidx(kind: Bcast, i: usize, cols: usize) -> usize {
    match kind {
        Bcast::Same => i,
        Bcast::Scalar => 0,
        Bcast::Row => i % cols,
        Bcast::Col => i / cols,
    }
}

fn acc(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf: gradients accumulate into it on `backward`.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a trainable leaf, if any backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ----- linear algebra -------------------------------------------------

    #[track_caller]
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            panic!(
                "contract violation: matmul shapes {:?} x {:?}",
                av.shape(),
                bv.shape()
            );
        }
        let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; n * m];
        gemm_nn(av.data(), bv.data(), &mut out, n, k, m);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_vec(&[n, m], out), Op::MatMul(a, b), rg)
    }

    #[track_caller]
    pub fn transpose(&mut self, a: Var) -> Var {
        let av = self.value(a);
        if av.rank() != 2 {
            panic!(
                "contract violation: transpose of rank-{} tensor {:?}",
                av.rank(),
                av.shape()
            );
        }
        let (n, m) = (av.shape()[0], av.shape()[1]);
        let src = av.data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = src[i * m + j];
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::from_vec(&[m, n], out), Op::Transpose(a), rg)
    }

    // ----- elementwise ----------------------------------------------------

    #[track_caller]
    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> (Tensor, Bcast) {
        let (av, bv) = (self.value(a), self.value(b));
        let kind = match bcast_kind(av, bv) {
            Some(k) => k,
            None => panic!(
                "contract violation: {name} shapes {:?} and {:?} do not broadcast",
                av.shape(),
                bv.shape()
            ),
        };
        let cols = av.cols();
        let bd = bv.data();
        let out: Vec<f64> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[bidx(kind, i, cols)]))
            .collect();
        (Tensor::from_vec(av.shape(), out), kind)
    }

    /// `a + b`; `b` may be a scalar, a per-column row, or a per-row column.
    #[track_caller]
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (t, k) = self.binary(a, b, "add", |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Add(a, b, k), rg)
    }

    #[track_caller]
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (t, k) = self.binary(a, b, "sub", |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Sub(a, b, k), rg)
    }

    #[track_caller]
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (t, k) = self.binary(a, b, "mul", |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Mul(a, b, k), rg)
    }

    #[track_caller]
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (t, k) = self.binary(a, b, "div", |x, y| x / y);
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Div(a, b, k), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let av = self.value(a);
        let out = av.data().iter().map(|x| x * c).collect();
        let t = Tensor::from_vec(av.shape(), out);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let av = self.value(a);
        let out = av.data().iter().map(|x| x + c).collect();
        let t = Tensor::from_vec(av.shape(), out);
        let rg = self.rg(a);
        self.push(t, Op::AddScalar(a), rg)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let av = self.value(a);
        let out = av.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::from_vec(av.shape(), out);
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), math::sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), math::softplus)
    }

    /// `max(x, 0)`; the gradient at exactly zero is taken as zero.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), math::exp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    // ----- structural -----------------------------------------------------

    #[track_caller]
    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Var {
        assert!(
            !parts.is_empty(),
            "contract violation: concat of zero tensors"
        );
        let first = self.value(parts[0]).shape().to_vec();
        let rg = parts.iter().any(|&p| self.rg(p));
        let t = match axis {
            Axis::Rows => {
                let cols = if first.len() == 1 { 1 } else { first[1] };
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let v = self.value(p);
                    let ok = v.rank() == first.len()
                        && (first.len() == 1 || (v.rank() == 2 && v.shape()[1] == cols));
                    if !ok || v.rank() > 2 {
                        panic!(
                            "contract violation: concat rows {:?} with {:?}",
                            first,
                            v.shape()
                        );
                    }
                    rows += if v.rank() == 1 {
                        v.numel()
                    } else {
                        v.shape()[0]
                    };
                    data.extend_from_slice(v.data());
                }
                if first.len() == 1 {
                    Tensor::from_vec(&[rows], data)
                } else {
                    Tensor::from_vec(&[rows, cols], data)
                }
            }
            Axis::Cols => {
                let rows = self.value(parts[0]).rows();
                let mut total = 0;
                for &p in parts {
                    let v = self.value(p);
                    if v.rows() != rows || v.rank() != first.len() {
                        panic!(
                            "contract violation: concat cols {:?} with {:?}",
                            first,
                            v.shape()
                        );
                    }
                    total += v.cols();
                }
                let mut data = vec![0.0; rows * total];
                let mut off = 0;
                for &p in parts {
                    let v = self.value(p);
                    let c = v.cols();
                    for r in 0..rows {
                        data[r * total + off..r * total + off + c].copy_from_slice(v.row(r));
                    }
                    off += c;
                }
                let mut shape = first.clone();
                *shape.last_mut().unwrap() = total;
                Tensor::from_vec(&shape, data)
            }
        };
        self.push(t, Op::Concat(parts.to_vec(), axis), rg)
    }

    /// `len` entries starting at `start` along `axis`.
    #[track_caller]
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let t = match axis {
            Axis::Rows => {
                let cols = if av.rank() == 1 { 1 } else { av.cols() };
                let rows = av.numel() / cols;
                if av.rank() > 2 || len == 0 || start + len > rows {
                    panic!(
                        "contract violation: slice rows {start}..{} of {:?}",
                        start + len,
                        av.shape()
                    );
                }
                let data = av.data()[start * cols..(start + len) * cols].to_vec();
                if av.rank() == 1 {
                    Tensor::from_vec(&[len], data)
                } else {
                    Tensor::from_vec(&[len, cols], data)
                }
            }
            Axis::Cols => {
                let c = av.cols();
                if len == 0 || start + len > c {
                    panic!(
                        "contract violation: slice cols {start}..{} of {:?}",
                        start + len,
                        av.shape()
                    );
                }
                let rows = av.rows();
                let mut data = Vec::with_capacity(rows * len);
                for r in 0..rows {
                    data.extend_from_slice(&av.row(r)[start..start + len]);
                }
                let mut shape = av.shape().to_vec();
                *shape.last_mut().unwrap() = len;
                Tensor::from_vec(&shape, data)
            }
        };
        let rg = self.rg(a);
        self.push(
            t,
            Op::Slice {
                src: a,
                axis,
                start,
            },
            rg,
        )
    }

    /// Rows of `a` picked by `idx` (repeats allowed).
    #[track_caller]
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[u32]>) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let rows = av.rows();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            let i = i as usize;
            if i >= rows {
                panic!("contract violation: gather row {i} of {:?}", av.shape());
            }
            data.extend_from_slice(av.row(i));
        }
        let t = Tensor::from_vec(&[idx.len(), c], data);
        let rg = self.rg(a);
        self.push(t, Op::GatherRows(a, idx), rg)
    }

    // ----- reductions -----------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Sum over rows: `[n, d] -> [1, d]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let c = v.cols();
        let mut out = vec![0.0; c];
        for r in 0..v.rows() {
            axpy(1.0, v.row(r), &mut out);
        }
        let rg = self.rg(a);
        self.push(Tensor::from_vec(&[1, c], out), Op::SumRows(a), rg)
    }

    /// Mean over rows: `[n, d] -> [1, d]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.value(a).rows();
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum within each row: `[n, d] -> [n, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out: Vec<f64> = (0..v.rows()).map(|r| v.row(r).iter().sum()).collect();
        let n = out.len();
        let rg = self.rg(a);
        self.push(Tensor::from_vec(&[n, 1], out), Op::SumCols(a), rg)
    }

    /// `log(sum(exp(a)))` over all elements, stabilized by max subtraction.
    pub fn logsumexp(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let mx = v.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = v.data().iter().map(|&x| math::exp(x - mx)).sum();
        let out = mx + math::log(s);
        let rg = self.rg(a);
        self.push(Tensor::scalar(out), Op::LogSumExp(a), rg)
    }

    /// Scalar dot product of two same-shape tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let m = self.mul(a, b);
        self.sum(m)
    }

    // ----- normalization and similarity ------------------------------------

    /// Rows scaled to unit L2 norm. Rows with norm below `eps` are divided
    /// by `eps` instead and counted in `diagnostics.zero_norm_floors`.
    pub fn l2_normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let v = self.value(a);
        let c = v.cols();
        let mut norms = Vec::with_capacity(v.rows());
        let mut out = Vec::with_capacity(v.numel());
        let mut floored = 0;
        for r in 0..v.rows() {
            let row = v.row(r);
            let n = math::sqrt(dot(row, row));
            let d = if n < eps {
                floored += 1;
                eps
            } else {
                n
            };
            norms.push(n);
            out.extend(row.iter().map(|x| x / d));
        }
        let t = Tensor::from_vec(v.shape(), out);
        let _ = c;
        self.diagnostics.zero_norm_floors += floored;
        let rg = self.rg(a);
        self.push(t, Op::L2NormalizeRows { src: a, norms, eps }, rg)
    }

    /// Pairwise cosine similarity of the rows of `a` (`[n, d]`) and `b`
    /// (`[m, d]`), giving `[n, m]`.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Var {
        let an = self.l2_normalize_rows(a, NORM_EPS);
        let bn = self.l2_normalize_rows(b, NORM_EPS);
        let bt = self.transpose(bn);
        self.matmul(an, bt)
    }

    // ----- neighborhood attention ------------------------------------------

    /// Per-head scaled dot products between each query row and its `k`
    /// neighbor rows of `keys`.
    ///
    /// `query` is `[nq, d]`, `keys` is `[n, d]`, `nbrs` holds `nq * k`
    /// indices into `keys`. Channels split into `heads` contiguous groups;
    /// the result is `[nq * k, heads]`.
    #[track_caller]
    pub fn neighbor_logits(
        &mut self,
        query: Var,
        keys: Var,
        nbrs: Arc<[u32]>,
        k: usize,
        heads: usize,
        scale: f64,
    ) -> Var {
        let (q, kv) = (self.value(query), self.value(keys));
        let d = q.cols();
        if kv.cols() != d || d % heads != 0 || nbrs.len() != q.rows() * k {
            panic!(
                "contract violation: neighbor_logits query {:?} keys {:?} heads {heads} k {k} nbrs {}",
                q.shape(),
                kv.shape(),
                nbrs.len()
            );
        }
        let dh = d / heads;
        let nq = q.rows();
        let mut out = vec![0.0; nq * k * heads];
        for i in 0..nq {
            let qr = q.row(i);
            for j in 0..k {
                let kr = kv.row(nbrs[i * k + j] as usize);
                for h in 0..heads {
                    out[(i * k + j) * heads + h] =
                        scale * dot(&qr[h * dh..(h + 1) * dh], &kr[h * dh..(h + 1) * dh]);
                }
            }
        }
        let rg = self.rg(query) || self.rg(keys);
        self.push(
            Tensor::from_vec(&[nq * k, heads], out),
            Op::NeighborLogits {
                query,
                keys,
                nbrs,
                k,
                heads,
                scale,
            },
            rg,
        )
    }

    /// Softmax down each column within consecutive blocks of `group` rows.
    #[track_caller]
    pub fn group_softmax(&mut self, a: Var, group: usize) -> Var {
        let v = self.value(a);
        let (rows, cols) = (v.rows(), v.cols());
        if group == 0 || rows % group != 0 {
            panic!("contract violation: group_softmax group {group} over {rows} rows");
        }
        let src = v.data();
        let mut out = vec![0.0; src.len()];
        for g in 0..rows / group {
            for c in 0..cols {
                let at = |j: usize| (g * group + j) * cols + c;
                let mx = (0..group)
                    .map(|j| src[at(j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for j in 0..group {
                    let e = math::exp(src[at(j)] - mx);
                    out[at(j)] = e;
                    s += e;
                }
                for j in 0..group {
                    out[at(j)] /= s;
                }
            }
        }
        let t = Tensor::from_vec(v.shape(), out);
        let rg = self.rg(a);
        self.push(t, Op::GroupSoftmax { src: a, group }, rg)
    }

    /// Weighted sum of neighbor rows: `out[i, c] = sum_j w[i*k+j, head(c)] * values[nbrs[i*k+j], c]`.
    ///
    /// `weights` is `[nq * k, heads]`, `values` is `[n, d]`; result `[nq, d]`.
    #[track_caller]
    pub fn neighbor_aggregate(
        &mut self,
        weights: Var,
        values: Var,
        nbrs: Arc<[u32]>,
        k: usize,
        heads: usize,
    ) -> Var {
        let (w, v) = (self.value(weights), self.value(values));
        let d = v.cols();
        if k == 0
            || w.cols() != heads
            || d % heads != 0
            || w.rows() != nbrs.len()
            || !nbrs.len().is_multiple_of(k)
        {
            panic!(
                "contract violation: neighbor_aggregate weights {:?} values {:?} heads {heads} k {k}",
                w.shape(),
                v.shape()
            );
        }
        let dh = d / heads;
        let nq = nbrs.len() / k;
        let wd = w.data();
        let mut out = vec![0.0; nq * d];
        for i in 0..nq {
            let orow = &mut out[i * d..(i + 1) * d];
            for j in 0..k {
                let r = i * k + j;
                let vr = v.row(nbrs[r] as usize);
                for h in 0..heads {
                    axpy(
                        wd[r * heads + h],
                        &vr[h * dh..(h + 1) * dh],
                        &mut orow[h * dh..(h + 1) * dh],
                    );
                }
            }
        }
        let rg = self.rg(weights) || self.rg(values);
        self.push(
            Tensor::from_vec(&[nq, d], out),
            Op::NeighborAggregate {
                weights,
                values,
                nbrs,
                k,
                heads,
            },
            rg,
        )
    }

    /// Mean of consecutive groups of gathered rows: `out[i] = mean_j a[idx[i*group+j]]`.
    #[track_caller]
    pub fn group_mean(&mut self, a: Var, idx: Arc<[u32]>, group: usize) -> Var {
        let v = self.value(a);
        if group == 0 || !idx.len().is_multiple_of(group) {
            panic!(
                "contract violation: group_mean group {group} over {} indices",
                idx.len()
            );
        }
        let d = v.cols();
        let ng = idx.len() / group;
        let inv = 1.0 / group as f64;
        let mut out = vec![0.0; ng * d];
        for g in 0..ng {
            for j in 0..group {
                let src = idx[g * group + j] as usize;
                if src >= v.rows() {
                    panic!(
                        "contract violation: group_mean row {src} of {:?}",
                        v.shape()
                    );
                }
                axpy(inv, v.row(src), &mut out[g * d..(g + 1) * d]);
            }
        }
        let rg = self.rg(a);
        self.push(
            Tensor::from_vec(&[ng, d], out),
            Op::GroupMean { src: a, idx, group },
            rg,
        )
    }

    // ----- backward --------------------------------------------------------

    /// Propagates gradients from a scalar root into every reachable
    /// trainable leaf. Repeated calls accumulate.
    #[track_caller]
    pub fn backward(&mut self, root: Var) {
        let n = self.value(root).numel();
        if n != 1 {
            panic!(
                "contract violation: backward from non-scalar root of shape {:?}",
                self.shape(root)
            );
        }
        self.backward_seeded(root, &[1.0]);
    }

    /// Propagates `seed` (same shape as `root`) as the upstream gradient.
    #[track_caller]
    pub fn backward_seeded(&mut self, root: Var, seed: &[f64]) {
        assert_eq!(
            seed.len(),
            self.value(root).numel(),
            "contract violation: seed length"
        );
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(seed.to_vec());
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                adj[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        for (i, a) in adj.into_iter().enumerate() {
            if let Some(g) = a {
                let node = &mut self.nodes[i];
                if matches!(node.op, Op::Leaf) && node.requires_grad {
                    match &mut node.grad {
                        Some(existing) => axpy(1.0, &g, existing),
                        None => node.grad = Some(g),
                    }
                }
            }
        }
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if rg(*a) {
                    gemm_nt(g, bv.data(), acc(adj, *a, n * k), n, m, k);
                }
                if rg(*b) {
                    gemm_tn(av.data(), g, acc(adj, *b, k * m), n, k, m);
                }
            }
            Op::Transpose(a) => {
                if rg(*a) {
                    let av = val(*a);
                    let (n, m) = (av.shape()[0], av.shape()[1]);
                    let d = acc(adj, *a, n * m);
                    for i in 0..n {
                        for j in 0..m {
                            d[i * m + j] += g[j * n + i];
                        }
                    }
                }
            }
            Op::Add(a, b, k) | Op::Sub(a, b, k) => {
                let sign = if matches!(node.op, Op::Add(..)) {
                    1.0
                } else {
                    -1.0
                };
                if rg(*a) {
                    axpy(1.0, g, acc(adj, *a, g.len()));
                }
                if rg(*b) {
                    let cols = val(*a).cols();
                    let bl = val(*b).numel();
                    let d = acc(adj, *b, bl);
                    for (i, &gv) in g.iter().enumerate() {
                        d[bidx(*k, i, cols)] += sign * gv;
                    }
                }
            }
            Op::Mul(a, b, k) => {
                let (av, bv) = (val(*a), val(*b));
                let cols = av.cols();
                if rg(*a) {
                    let d = acc(adj, *a, g.len());
                    let bd = bv.data();
                    for (i, &gv) in g.iter().enumerate() {
                        d[i] += gv * bd[bidx(*k, i, cols)];
                    }
                }
                if rg(*b) {
                    let d = acc(adj, *b, bv.numel());
                    let ad = av.data();
                    for (i, &gv) in g.iter().enumerate() {
                        d[bidx(*k, i, cols)] += gv * ad[i];
                    }
                }
            }
            Op::Div(a, b, k) => {
                let (av, bv) = (val(*a), val(*b));
                let cols = av.cols();
                let bd = bv.data();
                if rg(*a) {
                    let d = acc(adj, *a, g.len());
                    for (i, &gv) in g.iter().enumerate() {
                        d[i] += gv / bd[bidx(*k, i, cols)];
                    }
                }
                if rg(*b) {
                    let d = acc(adj, *b, bv.numel());
                    let ad = av.data();
                    for (i, &gv) in g.iter().enumerate() {
                        let j = bidx(*k, i, cols);
                        d[j] -= gv * ad[i] / (bd[j] * bd[j]);
                    }
                }
            }
            Op::Scale(a, c) => {
                if rg(*a) {
                    axpy(*c, g, acc(adj, *a, g.len()));
                }
            }
            Op::AddScalar(a) => {
                if rg(*a) {
                    axpy(1.0, g, acc(adj, *a, g.len()));
                }
            }
            Op::Concat(parts, axis) => {
                let total_cols = node.value.cols();
                let mut off = 0;
                for p in parts {
                    let pv = val(*p);
                    match axis {
                        Axis::Rows => {
                            let len = pv.numel();
                            if rg(*p) {
                                axpy(1.0, &g[off..off + len], acc(adj, *p, len));
                            }
                            off += len;
                        }
                        Axis::Cols => {
                            let c = pv.cols();
                            if rg(*p) {
                                let rows = pv.rows();
                                let d = acc(adj, *p, pv.numel());
                                for r in 0..rows {
                                    axpy(
                                        1.0,
                                        &g[r * total_cols + off..r * total_cols + off + c],
                                        &mut d[r * c..(r + 1) * c],
                                    );
                                }
                            }
                            off += c;
                        }
                    }
                }
            }
            Op::Slice { src, axis, start } => {
                if rg(*src) {
                    let sv = val(*src);
                    let d = acc(adj, *src, sv.numel());
                    match axis {
                        Axis::Rows => {
                            let cols = if sv.rank() == 1 { 1 } else { sv.cols() };
                            axpy(1.0, g, &mut d[start * cols..start * cols + g.len()]);
                        }
                        Axis::Cols => {
                            let c = sv.cols();
                            let len = node.value.cols();
                            for r in 0..sv.rows() {
                                axpy(
                                    1.0,
                                    &g[r * len..(r + 1) * len],
                                    &mut d[r * c + start..r * c + start + len],
                                );
                            }
                        }
                    }
                }
            }
            Op::Sum(a) | Op::Mean(a) => {
                if rg(*a) {
                    let n = val(*a).numel();
                    let s = if matches!(node.op, Op::Mean(_)) {
                        g[0] / n as f64
                    } else {
                        g[0]
                    };
                    for x in acc(adj, *a, n).iter_mut() {
                        *x += s;
                    }
                }
            }
            Op::SumRows(a) => {
                if rg(*a) {
                    let av = val(*a);
                    let c = av.cols();
                    let d = acc(adj, *a, av.numel());
                    for r in 0..av.rows() {
                        axpy(1.0, g, &mut d[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::SumCols(a) => {
                if rg(*a) {
                    let av = val(*a);
                    let c = av.cols();
                    let d = acc(adj, *a, av.numel());
                    for r in 0..av.rows() {
                        for x in &mut d[r * c..(r + 1) * c] {
                            *x += g[r];
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if rg(*a) {
                    let y = node.value.data();
                    let d = acc(adj, *a, g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
            }
            Op::Softplus(a) => {
                if rg(*a) {
                    let x = val(*a).data();
                    let d = acc(adj, *a, g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * math::sigmoid(x[i]);
                    }
                }
            }
            Op::Relu(a) => {
                if rg(*a) {
                    let x = val(*a).data();
                    let d = acc(adj, *a, g.len());
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                }
            }
            Op::Exp(a) => {
                if rg(*a) {
                    let y = node.value.data();
                    let d = acc(adj, *a, g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * y[i];
                    }
                }
            }
            Op::Square(a) => {
                if rg(*a) {
                    let x = val(*a).data();
                    let d = acc(adj, *a, g.len());
                    for i in 0..g.len() {
                        d[i] += 2.0 * g[i] * x[i];
                    }
                }
            }
            Op::LogSumExp(a) => {
                if rg(*a) {
                    let x = val(*a).data();
                    let y = node.value.item();
                    let d = acc(adj, *a, x.len());
                    for i in 0..x.len() {
                        d[i] += g[0] * math::exp(x[i] - y);
                    }
                }
            }
            Op::L2NormalizeRows { src, norms, eps } => {
                if rg(*src) {
                    let y = &node.value;
                    let c = y.cols();
                    let d = acc(adj, *src, y.numel());
                    for (r, &n) in norms.iter().enumerate() {
                        let gr = &g[r * c..(r + 1) * c];
                        let dr = &mut d[r * c..(r + 1) * c];
                        if n < *eps {
                            axpy(1.0 / eps, gr, dr);
                        } else {
                            let yr = y.row(r);
                            let yg = dot(yr, gr);
                            for j in 0..c {
                                dr[j] += (gr[j] - yr[j] * yg) / n;
                            }
                        }
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                if rg(*a) {
                    let av = val(*a);
                    let c = av.cols();
                    let d = acc(adj, *a, av.numel());
                    for (r, &src) in idx.iter().enumerate() {
                        let s = src as usize;
                        axpy(1.0, &g[r * c..(r + 1) * c], &mut d[s * c..(s + 1) * c]);
                    }
                }
            }
            Op::NeighborLogits {
                query,
                keys,
                nbrs,
                k,
                heads,
                scale,
            } => {
                let (q, kv) = (val(*query), val(*keys));
                let dcols = q.cols();
                let dh = dcols / heads;
                let nq = q.rows();
                if rg(*query) {
                    let dq = acc(adj, *query, q.numel());
                    for i in 0..nq {
                        for j in 0..*k {
                            let kr = kv.row(nbrs[i * k + j] as usize);
                            for h in 0..*heads {
                                let gv = scale * g[(i * k + j) * heads + h];
                                axpy(
                                    gv,
                                    &kr[h * dh..(h + 1) * dh],
                                    &mut dq[i * dcols + h * dh..i * dcols + (h + 1) * dh],
                                );
                            }
                        }
                    }
                }
                if rg(*keys) {
                    let dk = acc(adj, *keys, kv.numel());
                    for i in 0..nq {
                        let qr = q.row(i);
                        for j in 0..*k {
                            let nb = nbrs[i * k + j] as usize;
                            for h in 0..*heads {
                                let gv = scale * g[(i * k + j) * heads + h];
                                axpy(
                                    gv,
                                    &qr[h * dh..(h + 1) * dh],
                                    &mut dk[nb * dcols + h * dh..nb * dcols + (h + 1) * dh],
                                );
                            }
                        }
                    }
                }
            }
            Op::GroupSoftmax { src, group } => {
                if rg(*src) {
                    let y = node.value.data();
                    let cols = node.value.cols();
                    let rows = node.value.rows();
                    let d = acc(adj, *src, y.len());
                    for gi in 0..rows / group {
                        for c in 0..cols {
                            let at = |j: usize| (gi * group + j) * cols + c;
                            let s: f64 = (0..*group).map(|j| y[at(j)] * g[at(j)]).sum();
                            for j in 0..*group {
                                d[at(j)] += y[at(j)] * (g[at(j)] - s);
                            }
                        }
                    }
                }
            }
            Op::NeighborAggregate {
                weights,
                values,
                nbrs,
                k,
                heads,
            } => {
                let (w, v) = (val(*weights), val(*values));
                let dcols = v.cols();
                let dh = dcols / heads;
                let nq = nbrs.len() / k;
                if rg(*weights) {
                    let dw = acc(adj, *weights, w.numel());
                    for i in 0..nq {
                        let gr = &g[i * dcols..(i + 1) * dcols];
                        for j in 0..*k {
                            let r = i * k + j;
                            let vr = v.row(nbrs[r] as usize);
                            for h in 0..*heads {
                                dw[r * heads + h] +=
                                    dot(&gr[h * dh..(h + 1) * dh], &vr[h * dh..(h + 1) * dh]);
                            }
                        }
                    }
                }
                if rg(*values) {
                    let wd = w.data();
                    let dv = acc(adj, *values, v.numel());
                    for i in 0..nq {
                        let gr = &g[i * dcols..(i + 1) * dcols];
                        for j in 0..*k {
                            let r = i * k + j;
                            let nb = nbrs[r] as usize;
                            for h in 0..*heads {
                                axpy(
                                    wd[r * heads + h],
                                    &gr[h * dh..(h + 1) * dh],
                                    &mut dv[nb * dcols + h * dh..nb * dcols + (h + 1) * dh],
                                );
                            }
                        }
                    }
                }
            }
            Op::GroupMean { src, idx, group } => {
                if rg(*src) {
                    let sv = val(*src);
                    let c = sv.cols();
                    let inv = 1.0 / *group as f64;
                    let d = acc(adj, *src, sv.numel());
                    for (r, &s) in idx.iter().enumerate() {
                        let gi = r / group;
                        let s = s as usize;
                        axpy(inv, &g[gi * c..(gi + 1) * c], &mut d[s * c..(s + 1) * c]);
                    }
                }
            }
        }
    }
}

/// Norm floor used by normalization and cosine similarity.
pub const NORM_EPS: f64 = 1e-12;
