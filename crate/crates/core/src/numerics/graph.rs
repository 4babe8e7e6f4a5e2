//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every forward op together with whatever the backward
//! pass needs (softmax probabilities, layer-norm statistics, argmax indices).
//! Parameters from a [`ParamStore`] are bound once per graph; frozen
//! parameters are bound as constants so they never receive a gradient.
//!
//! Shape errors inside the graph are programming errors and panic. Public
//! model entry points validate their inputs before building a graph.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{numel, order_free_mean, order_free_sum, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Exp(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    MeanPool {
        x: Var,
        axis: usize,
    },
    MaxPool {
        x: Var,
        axis: usize,
        argmax: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    SigmoidBce {
        logits: Var,
        signs: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        causal: bool,
        probs: Vec<f64>,
    },
    Sum(Var),
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
    },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Permute(x, _)
            | Op::Reshape(x)
            | Op::Softmax(x)
            | Op::Gelu(x)
            | Op::Exp(x)
            | Op::Sum(x) => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Embedding { table, .. } => vec![*table],
            Op::MeanPool { x, .. }
            | Op::MaxPool { x, .. }
            | Op::Slice { x, .. }
            | Op::L2Normalize { x, .. } => vec![*x],
            Op::Concat { parts, .. } => parts.clone(),
            Op::CrossEntropy { logits, .. } | Op::SigmoidBce { logits, .. } => vec![*logits],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Target value that [`Graph::cross_entropy`] skips.
pub const IGNORE_TARGET: usize = usize::MAX;

/// Options for [`Graph::attention`].
#[derive(Clone, Copy, Debug, Default)]
pub struct AttentionOpts {
    /// Query `i` only sees keys up to its own position (aligned at the end
    /// of the key sequence).
    pub causal: bool,
    /// Reduce over keys in sorted order so the output is bit-identical under
    /// any permutation of the keys.
    pub order_free: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

/// `c (+)= op(a) · op(b)` with `op(a)` of size m×k and `op(b)` k×n.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover every element addressed by the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let nd = shape.len();
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; nd];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

fn gelu_fwd(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        debug_assert!(
            !op.parents().iter().all(|p| self.nodes[p.0].value.is_finite()) || value.is_finite(),
            "non-finite forward value"
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a stored parameter (once per graph).
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = if p.frozen {
            self.constant(p.value.clone())
        } else {
            self.leaf(p.value.clone())
        };
        self.bound.insert(id, v);
        v
    }

    /// Routes later `param(store, id)` calls to `v`, so gradients with
    /// respect to a stored parameter can be checked against a leaf.
    pub fn bind_param(&mut self, id: ParamId, v: Var) {
        self.bound.insert(id, v);
    }

    pub(crate) fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.bound.iter().map(|(&id, &v)| (id, v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(
            is_suffix(bv.shape(), av.shape()),
            "add: {:?} does not broadcast onto {:?}",
            bv.shape(),
            av.shape()
        );
        let nb = bv.len();
        let out = Tensor::from_fn(av.shape(), |i| av.data()[i] + bv.data()[i % nb]);
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(
            is_suffix(bv.shape(), av.shape()),
            "mul: {:?} does not broadcast onto {:?}",
            bv.shape(),
            av.shape()
        );
        let nb = bv.len();
        let out = Tensor::from_fn(av.shape(), |i| av.data()[i] * bv.data()[i % nb]);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    /// `x[..., k] · w[k, m] -> [..., m]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(wv.ndim(), 2, "matmul: weight must be 2-D");
        let (k, m) = (wv.shape()[0], wv.shape()[1]);
        assert_eq!(xv.last_dim(), k, "matmul: inner dims {:?} x {:?}", xv.shape(), wv.shape());
        let rows = xv.len() / k;
        let mut out = vec![0.0; rows * m];
        gemm(rows, k, m, xv.data(), false, wv.data(), false, &mut out, false);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        let t = Tensor::new(shape, out).expect("matmul shape");
        self.push(t, Op::MatMul(x, w))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let xv = self.value(x);
        assert_eq!(perm.len(), xv.ndim(), "permute: rank mismatch");
        let (shape, data) = permute_data(xv.data(), xv.shape(), perm);
        let t = Tensor::new(shape, data).expect("permute shape");
        self.push(t, Op::Permute(x, perm.to_vec()))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        self.permute(x, &[1, 0])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshape(shape).expect("reshape");
        self.push(t, Op::Reshape(x))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let d = xv.last_dim();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(d) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out).unwrap();
        self.push(t, Op::Softmax(x))
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.last_dim();
        assert!(gv.len() == d && bv.len() == d, "layer_norm: affine width");
        let rows = xv.len() / d;
        let mut out = vec![0.0; xv.len()];
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            for c in 0..d {
                out[r * d + c] = (row[c] - mean) * rstd * gv.data()[c] + bv.data()[c];
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let t = Tensor::new(xv.shape().to_vec(), out).unwrap();
        self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean: means,
                rstd: rstds,
            },
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu_fwd);
        self.push(out, Op::Gelu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        self.push(out, Op::Exp(x))
    }

    /// Rows of `table[V, D]` at `ids`, giving `[ids.len(), D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        assert_eq!(tv.ndim(), 2, "embedding: table must be 2-D");
        let (vocab, d) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < vocab, "embedding: id {id} >= {vocab}");
            out.extend_from_slice(tv.row(id));
        }
        let t = Tensor::new(vec![ids.len(), d], out).expect("embedding shape");
        self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Mean over `axis` (removed from the shape). Exact for identical slices
    /// and independent of the slice order.
    pub fn mean_pool(&mut self, x: Var, axis: usize) -> Var {
        let xv = self.value(x);
        let (outer, len, inner) = axis_split(xv.shape(), axis);
        let mut out = Vec::with_capacity(outer * inner);
        let mut buf = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                for (l, b) in buf.iter_mut().enumerate() {
                    *b = xv.data()[(o * len + l) * inner + i];
                }
                out.push(order_free_mean(&mut buf));
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let t = Tensor::new(shape, out).expect("mean_pool shape");
        self.push(t, Op::MeanPool { x, axis })
    }

    /// Max over `axis` (removed from the shape).
    pub fn max_pool(&mut self, x: Var, axis: usize) -> Var {
        let xv = self.value(x);
        let (outer, len, inner) = axis_split(xv.shape(), axis);
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                let mut bv = f64::NEG_INFINITY;
                for l in 0..len {
                    let v = xv.data()[(o * len + l) * inner + i];
                    if v > bv {
                        bv = v;
                        best = l;
                    }
                }
                out.push(bv);
                argmax.push(best);
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let t = Tensor::new(shape, out).expect("max_pool shape");
        self.push(t, Op::MaxPool { x, axis, argmax })
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat: no parts");
        let first = self.value(parts[0]).shape().to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            assert_eq!(s.len(), first.len(), "concat: rank mismatch");
            for (ax, (&a, &b)) in s.iter().zip(&first).enumerate() {
                assert!(ax == axis || a == b, "concat: {s:?} vs {first:?} on axis {axis}");
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let pv = self.value(p);
                let len = pv.shape()[axis];
                out.extend_from_slice(&pv.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let t = Tensor::new(shape, out).expect("concat shape");
        self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        )
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let (outer, full, inner) = axis_split(xv.shape(), axis);
        assert!(start + len <= full && len > 0, "slice out of range");
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&xv.data()[base..base + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let t = Tensor::new(shape, out).expect("slice shape");
        self.push(t, Op::Slice { x, axis, start })
    }

    /// Mean softmax cross-entropy of `logits[N, C]` against class targets.
    /// Rows whose target is [`IGNORE_TARGET`] are left out of the mean.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        let c = lv.last_dim();
        let n = lv.len() / c;
        assert_eq!(targets.len(), n, "cross_entropy: target count");
        let counted = targets.iter().filter(|&&t| t != IGNORE_TARGET).count();
        assert!(counted > 0, "cross_entropy: every row ignored");
        let mut probs = lv.data().to_vec();
        let mut loss = 0.0;
        for (r, row) in probs.chunks_mut(c).enumerate() {
            if targets[r] == IGNORE_TARGET {
                continue;
            }
            assert!(targets[r] < c, "cross_entropy: target out of range");
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[targets[r]];
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let t = Tensor::scalar(loss / counted as f64);
        self.push(
            t,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// `Σ log(1 + exp(-s·x))` over all elements, with labels `s = ±1`.
    pub fn sigmoid_bce(&mut self, logits: Var, signs: &[f64]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.len(), signs.len(), "sigmoid_bce: sign count");
        let loss: f64 = lv
            .data()
            .iter()
            .zip(signs)
            .map(|(&x, &s)| softplus(-s * x))
            .sum();
        self.push(
            Tensor::scalar(loss),
            Op::SigmoidBce {
                logits,
                signs: signs.to_vec(),
            },
        )
    }

    /// Multi-head scaled dot-product attention on `[N, L, D]` sequences.
    /// Projections are the caller's business; this op only mixes.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, opts: AttentionOpts) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        assert!(qv.ndim() == 3 && kv.ndim() == 3 && vv.ndim() == 3, "attention: rank");
        let (n, lq, d) = (qv.shape()[0], qv.shape()[1], qv.shape()[2]);
        let lk = kv.shape()[1];
        assert_eq!(kv.shape(), vv.shape(), "attention: k/v shapes");
        assert!(kv.shape()[0] == n && kv.shape()[2] == d, "attention: q/k shapes");
        assert!(d % heads == 0, "attention: width not divisible by heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut out = vec![0.0; n * lq * d];
        let mut probs = vec![0.0; n * heads * lq * lk];
        let mut scores = vec![0.0; lk];
        let mut buf = vec![0.0; lk];
        for b in 0..n {
            for h in 0..heads {
                for i in 0..lq {
                    let visible = if opts.causal {
                        (i + 1 + lk.saturating_sub(lq)).min(lk)
                    } else {
                        lk
                    };
                    let qi = &qd[(b * lq + i) * d + h * dh..][..dh];
                    for (j, s) in scores.iter_mut().enumerate().take(visible) {
                        let kj = &kd[(b * lk + j) * d + h * dh..][..dh];
                        *s = qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>() * scale;
                    }
                    let max = scores[..visible]
                        .iter()
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max);
                    let p = &mut probs[((b * heads + h) * lq + i) * lk..][..lk];
                    for j in 0..visible {
                        p[j] = (scores[j] - max).exp();
                    }
                    let denom = if opts.order_free {
                        buf[..visible].copy_from_slice(&p[..visible]);
                        order_free_sum(&mut buf[..visible])
                    } else {
                        p[..visible].iter().sum()
                    };
                    for pj in p[..visible].iter_mut() {
                        *pj /= denom;
                    }
                    let o = &mut out[(b * lq + i) * d + h * dh..][..dh];
                    if opts.order_free {
                        for (c, oc) in o.iter_mut().enumerate() {
                            for j in 0..visible {
                                buf[j] = p[j] * vd[(b * lk + j) * d + h * dh + c];
                            }
                            *oc = order_free_sum(&mut buf[..visible]);
                        }
                    } else {
                        for j in 0..visible {
                            let vj = &vd[(b * lk + j) * d + h * dh..][..dh];
                            for (oc, vc) in o.iter_mut().zip(vj) {
                                *oc += p[j] * vc;
                            }
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![n, lq, d], out).expect("attention shape");
        self.push(
            t,
            Op::Attention {
                q,
                k,
                v,
                heads,
                causal: opts.causal,
                probs,
            },
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        self.push(t, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Scales every row (last axis) to unit L2 norm.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let d = xv.last_dim();
        let mut out = xv.data().to_vec();
        let mut norms = Vec::with_capacity(out.len() / d);
        for row in out.chunks_mut(d) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in row.iter_mut() {
                *v /= norm;
            }
            norms.push(norm);
        }
        let t = Tensor::new(xv.shape().to_vec(), out).unwrap();
        self.push(t, Op::L2Normalize { x, norms })
    }

    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward from a non-scalar");
        self.backward_with(loss, Tensor::full(self.value(loss).shape().to_vec().as_slice(), 1.0))
    }

    /// Backpropagates an explicit upstream gradient for `out`.
    pub fn backward_with(&self, out: Var, seed: Tensor) -> Gradients {
        assert_eq!(seed.shape(), self.value(out).shape(), "seed shape");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(node.value.shape()).clone());
        f(slot.data_mut());
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| {
                    for (x, y) in ga.iter_mut().zip(gd) {
                        *x += y;
                    }
                });
                let nb = self.value(*b).len();
                self.acc(grads, *b, |gb| {
                    for (i, y) in gd.iter().enumerate() {
                        gb[i % nb] += y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let nb = bv.len();
                self.acc(grads, *a, |ga| {
                    for (i, y) in gd.iter().enumerate() {
                        ga[i] += y * bv[i % nb];
                    }
                });
                self.acc(grads, *b, |gb| {
                    for (i, y) in gd.iter().enumerate() {
                        gb[i % nb] += y * av[i];
                    }
                });
            }
            Op::Scale(x, c) => self.acc(grads, *x, |gx| {
                for (x, y) in gx.iter_mut().zip(gd) {
                    *x += c * y;
                }
            }),
            Op::MatMul(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (k, m) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.len() / k;
                self.acc(grads, *x, |gx| {
                    gemm(rows, m, k, gd, false, wv.data(), true, gx, true);
                });
                self.acc(grads, *w, |gw| {
                    gemm(k, rows, m, xv.data(), true, gd, false, gw, true);
                });
            }
            Op::Permute(x, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let (_, back) = permute_data(gd, g.shape(), &inv);
                self.acc(grads, *x, |gx| {
                    for (x, y) in gx.iter_mut().zip(&back) {
                        *x += y;
                    }
                });
            }
            Op::Reshape(x) => self.acc(grads, *x, |gx| {
                for (x, y) in gx.iter_mut().zip(gd) {
                    *x += y;
                }
            }),
            Op::Softmax(x) => {
                let y = node.value.data();
                let d = node.value.last_dim();
                self.acc(grads, *x, |gx| {
                    for r in 0..y.len() / d {
                        let yr = &y[r * d..(r + 1) * d];
                        let gr = &gd[r * d..(r + 1) * d];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..d {
                            gx[r * d + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let xv = self.value(*x).data();
                let gam = self.value(*gamma).data();
                let d = gam.len();
                let rows = xv.len() / d;
                let xhat = |r: usize, c: usize| (xv[r * d + c] - mean[r]) * rstd[r];
                self.acc(grads, *x, |gx| {
                    for r in 0..rows {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for c in 0..d {
                            let dxh = gd[r * d + c] * gam[c];
                            m1 += dxh;
                            m2 += dxh * xhat(r, c);
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for c in 0..d {
                            let dxh = gd[r * d + c] * gam[c];
                            gx[r * d + c] += rstd[r] * (dxh - m1 - xhat(r, c) * m2);
                        }
                    }
                });
                self.acc(grads, *gamma, |gg| {
                    for r in 0..rows {
                        for c in 0..d {
                            gg[c] += gd[r * d + c] * xhat(r, c);
                        }
                    }
                });
                self.acc(grads, *beta, |gb| {
                    for r in 0..rows {
                        for c in 0..d {
                            gb[c] += gd[r * d + c];
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += gd[i] * gelu_grad(xv[i]);
                    }
                });
            }
            Op::Exp(x) => {
                let y = node.value.data();
                self.acc(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += gd[i] * y[i];
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = node.value.last_dim();
                self.acc(grads, *table, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            gt[id * d + c] += gd[r * d + c];
                        }
                    }
                });
            }
            Op::MeanPool { x, axis } => {
                let (outer, len, inner) = axis_split(self.value(*x).shape(), *axis);
                self.acc(grads, *x, |gx| {
                    for o in 0..outer {
                        for l in 0..len {
                            for i in 0..inner {
                                gx[(o * len + l) * inner + i] += gd[o * inner + i] / len as f64;
                            }
                        }
                    }
                });
            }
            Op::MaxPool { x, axis, argmax } => {
                let (outer, len, inner) = axis_split(self.value(*x).shape(), *axis);
                self.acc(grads, *x, |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let l = argmax[o * inner + i];
                            gx[(o * len + l) * inner + i] += gd[o * inner + i];
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).shape()[*axis];
                    self.acc(grads, p, |gp| {
                        for o in 0..outer {
                            let src = &gd[(o * total + offset) * inner..][..len * inner];
                            for (x, y) in gp[o * len * inner..][..len * inner].iter_mut().zip(src) {
                                *x += y;
                            }
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, full, inner) = axis_split(self.value(*x).shape(), *axis);
                let len = node.value.shape()[*axis];
                self.acc(grads, *x, |gx| {
                    for o in 0..outer {
                        let dst = &mut gx[(o * full + start) * inner..][..len * inner];
                        for (x, y) in dst.iter_mut().zip(&gd[o * len * inner..][..len * inner]) {
                            *x += y;
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = self.value(*logits).last_dim();
                let n = targets.iter().filter(|&&t| t != IGNORE_TARGET).count() as f64;
                let up = gd[0];
                self.acc(grads, *logits, |gl| {
                    for (r, &t) in targets.iter().enumerate() {
                        if t == IGNORE_TARGET {
                            continue;
                        }
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            gl[r * c + j] += up * (probs[r * c + j] - onehot) / n;
                        }
                    }
                });
            }
            Op::SigmoidBce { logits, signs } => {
                let lv = self.value(*logits).data();
                let up = gd[0];
                self.acc(grads, *logits, |gl| {
                    for i in 0..gl.len() {
                        gl[i] += up * -signs[i] * sigmoid(-signs[i] * lv[i]);
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                causal,
                probs,
            } => self.attention_backward(node, gd, *q, *k, *v, *heads, *causal, probs, grads),
            Op::Sum(x) => {
                let up = gd[0];
                self.acc(grads, *x, |gx| {
                    for v in gx.iter_mut() {
                        *v += up;
                    }
                });
            }
            Op::L2Normalize { x, norms } => {
                let y = node.value.data();
                let d = node.value.last_dim();
                self.acc(grads, *x, |gx| {
                    for (r, norm) in norms.iter().enumerate() {
                        let yr = &y[r * d..(r + 1) * d];
                        let gr = &gd[r * d..(r + 1) * d];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..d {
                            gx[r * d + c] += (gr[c] - yr[c] * dot) / norm;
                        }
                    }
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        node: &Node,
        gd: &[f64],
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        causal: bool,
        probs: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, lq, d) = (node.value.shape()[0], node.value.shape()[1], node.value.shape()[2]);
        let lk = kv.shape()[1];
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut dq = vec![0.0; qd.len()];
        let mut dk = vec![0.0; kd.len()];
        let mut dv = vec![0.0; vd.len()];
        let mut dp = vec![0.0; lk];
        for b in 0..n {
            for h in 0..heads {
                for i in 0..lq {
                    let visible = if causal {
                        (i + 1 + lk.saturating_sub(lq)).min(lk)
                    } else {
                        lk
                    };
                    let p = &probs[((b * heads + h) * lq + i) * lk..][..lk];
                    let go = &gd[(b * lq + i) * d + h * dh..][..dh];
                    let mut s = 0.0;
                    for j in 0..visible {
                        let vj = &vd[(b * lk + j) * d + h * dh..][..dh];
                        dp[j] = go.iter().zip(vj).map(|(a, c)| a * c).sum();
                        s += p[j] * dp[j];
                    }
                    let qi_off = (b * lq + i) * d + h * dh;
                    for j in 0..visible {
                        let kj_off = (b * lk + j) * d + h * dh;
                        let ds = p[j] * (dp[j] - s) * scale;
                        for c in 0..dh {
                            dq[qi_off + c] += ds * kd[kj_off + c];
                            dk[kj_off + c] += ds * qd[qi_off + c];
                            dv[kj_off + c] += p[j] * go[c];
                        }
                    }
                }
            }
        }
        for (var, local) in [(q, dq), (k, dk), (v, dv)] {
            self.acc(grads, var, |g| {
                for (x, y) in g.iter_mut().zip(&local) {
                    *x += y;
                }
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_forward() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let w = g.constant(t(&[3, 2], &[1., 0., 0., 1., 1., 1.]));
        let y = g.matmul(a, w);
        assert_eq!(g.value(y).data(), &[4., 5., 10., 11.]);
    }

    #[test]
    fn permute_round_trip() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
        let y = g.permute(x, &[2, 0, 1]);
        assert_eq!(g.shape(y), &[4, 2, 3]);
        // y[c, a, b] == x[a, b, c]
        assert_eq!(g.value(y).data()[6 + 3 + 2], (12 + 2 * 4 + 1) as f64);
        let z = g.permute(y, &[1, 2, 0]);
        assert_eq!(g.value(z), g.value(x));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3], &[1000., 1001., 999., -3., 0., 2.]));
        let y = g.softmax(x);
        for r in 0..2 {
            let row = g.value(y).row(r);
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_identities() {
        let mut g = Graph::new();
        let row = [0.3, -1.7, 2.5];
        let x = g.constant(t(&[4, 3], &[row, row, row, row].concat()));
        let m = g.mean_pool(x, 0);
        assert_eq!(g.value(m).data(), &row);
        let r = g.constant(Tensor::from_fn(&[3, 5, 2], |i| ((i * 37) % 11) as f64 - 5.0));
        let mean = g.mean_pool(r, 1);
        let max = g.max_pool(r, 1);
        for (a, b) in g.value(max).data().iter().zip(g.value(mean).data()) {
            assert!(a >= b);
        }
    }

    #[test]
    fn frozen_constants_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[1., 2.]));
        let b = g.leaf(t(&[2], &[3., 4.]));
        let y = g.mul(a, b);
        let s = g.sum(y);
        let grads = g.backward(s);
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap().data(), &[1., 2.]);
    }

    #[test]
    fn causal_attention_hides_future() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_fn(&[1, 3, 2], |i| (i as f64).sin()));
        let k = g.constant(Tensor::from_fn(&[1, 3, 2], |i| (i as f64).cos()));
        let v1 = g.constant(Tensor::from_fn(&[1, 3, 2], |i| i as f64));
        let mut changed = g.value(v1).clone();
        changed.data_mut()[4] = 100.0; // position 2
        let v2 = g.constant(changed);
        let opts = AttentionOpts {
            causal: true,
            ..Default::default()
        };
        let a = g.attention(q, k, v1, 1, opts);
        let b = g.attention(q, k, v2, 1, opts);
        assert_eq!(g.value(a).data()[..4], g.value(b).data()[..4]);
        assert_ne!(g.value(a).data()[4], g.value(b).data()[4]);
    }
}
