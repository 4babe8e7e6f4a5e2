//! Downstream heads over frozen encoder features `F_V [T, D]`.

mod commentary;
mod vocab;

pub use commentary::{CommentaryConfig, CommentaryHead, Decoder, GenerationMode, Perceiver, PERCEIVER_QUERIES};
pub(crate) use commentary::argmax;
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};

use serde::{Deserialize, Serialize};

use crate::encoder::batch_of;
use crate::error::{Error, Result};
use crate::nn::{Attention, LayerNorm, Linear, Mlp};
use crate::numerics::{AttentionOpts, Graph, ParamGroup, ParamId, ParamStore, Rng, Tensor, Var};
use crate::taxonomy::NUM_LABELS;

pub const FOUL_CLASSES: usize = 8;
pub const SEVERITY_LEVELS: usize = 4;

pub(crate) fn check_features(fv: &Tensor, dim: usize) -> Result<()> {
    if fv.ndim() != 2 || fv.shape()[1] != dim {
        return Err(Error::ShapeMismatch(format!(
            "features {:?} are not [T, {dim}]",
            fv.shape()
        )));
    }
    Ok(())
}

/// Learnable `[cls]` query attending once over the frame features, then a
/// linear classifier. Frame positions are not re-added, so the logits are
/// invariant to frame order.
#[derive(Clone, Debug)]
pub struct EventHead {
    pub cls: ParamId,
    pub ln: LayerNorm,
    pub attn: Attention,
    pub classifier: Linear,
    pub dim: usize,
    pub classes: usize,
}

impl EventHead {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, prefix: &str, dim: usize, heads: usize) -> Self {
        Self::with_classes(store, rng, prefix, dim, heads, NUM_LABELS)
    }

    pub fn with_classes(store: &mut ParamStore, rng: &mut Rng, prefix: &str, dim: usize, heads: usize, classes: usize) -> Self {
        let g = ParamGroup::NewInit;
        Self {
            cls: store.weight(format!("{prefix}.cls"), &[dim], g, rng),
            ln: LayerNorm::new(store, &format!("{prefix}.ln"), dim, g),
            attn: Attention::new(store, rng, &format!("{prefix}.attn"), dim, heads, g),
            classifier: Linear::new(store, rng, &format!("{prefix}.classifier"), dim, classes, g),
            dim,
            classes,
        }
    }

    /// `fv [B, T, D]` → logits `[B, classes]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, fv: Var) -> Var {
        let b = g.shape(fv)[0];
        let zeros = g.constant(Tensor::zeros(&[b, 1, self.dim]));
        let cls = g.param(store, self.cls);
        let q = g.add(zeros, cls);
        let ctx = self.ln.forward(g, store, fv);
        let opts = AttentionOpts {
            causal: false,
            order_free: true,
        };
        let a = self.attn.forward(g, store, q, ctx, opts);
        let pooled = g.add(q, a);
        let pooled = g.reshape(pooled, &[b, self.dim]);
        self.classifier.forward(g, store, pooled)
    }

    pub fn classify_event(&self, store: &ParamStore, fv: &Tensor) -> Result<Vec<f64>> {
        check_features(fv, self.dim)?;
        let mut g = Graph::new();
        let x = g.constant(batch_of(&[fv]));
        let out = self.forward(&mut g, store, x);
        Ok(g.value(out).data().to_vec())
    }

    /// Logits `[N, classes]` for a set of equally long feature sequences.
    pub fn classify_batch(&self, store: &ParamStore, fvs: &[&Tensor]) -> Result<Tensor> {
        for fv in fvs {
            check_features(fv, self.dim)?;
        }
        let mut g = Graph::new();
        let x = g.constant(batch_of(fvs));
        let out = self.forward(&mut g, store, x);
        Ok(g.value(out).clone())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewPooling {
    #[default]
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolOrder {
    #[default]
    FrameThenView,
    ViewThenFrame,
}

/// Pools several views into one vector, then a shared MLP feeds a foul-type
/// and a severity classifier.
#[derive(Clone, Debug)]
pub struct FoulHead {
    pub pooling: ViewPooling,
    pub order: PoolOrder,
    pub mlp: Mlp,
    pub foul: Linear,
    pub severity: Linear,
    pub dim: usize,
}

impl FoulHead {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, prefix: &str, dim: usize, pooling: ViewPooling) -> Self {
        let g = ParamGroup::NewInit;
        Self {
            pooling,
            order: PoolOrder::default(),
            mlp: Mlp::new(store, rng, &format!("{prefix}.mlp"), dim, dim, dim, g),
            foul: Linear::new(store, rng, &format!("{prefix}.foul"), dim, FOUL_CLASSES, g),
            severity: Linear::new(store, rng, &format!("{prefix}.severity"), dim, SEVERITY_LEVELS, g),
            dim,
        }
    }

    fn pool_across_views(&self, g: &mut Graph, x: Var) -> Var {
        match self.pooling {
            ViewPooling::Mean => g.mean_pool(x, 0),
            ViewPooling::Max => g.max_pool(x, 0),
        }
    }

    /// `views [V, T, D]` → pooled `[1, D]`. Frames are averaged; views are
    /// combined by the configured mode.
    pub fn pool_views(&self, g: &mut Graph, views: Var) -> Var {
        let pooled = match self.order {
            PoolOrder::FrameThenView => {
                let per_view = g.mean_pool(views, 1);
                self.pool_across_views(g, per_view)
            }
            PoolOrder::ViewThenFrame => {
                let per_frame = self.pool_across_views(g, views);
                g.mean_pool(per_frame, 0)
            }
        };
        g.reshape(pooled, &[1, self.dim])
    }

    /// Pooled features `[B, D]` → (foul logits `[B, 8]`, severity logits `[B, 4]`).
    pub fn forward_pooled(&self, g: &mut Graph, store: &ParamStore, pooled: Var) -> (Var, Var) {
        let h = self.mlp.forward(g, store, pooled);
        (self.foul.forward(g, store, h), self.severity.forward(g, store, h))
    }

    pub fn check_views(&self, views: &[Tensor]) -> Result<()> {
        let first = views.first().ok_or(Error::EmptyViews)?;
        for v in views {
            check_features(v, self.dim)?;
            if v.shape() != first.shape() {
                return Err(Error::ShapeMismatch("views differ in frame count".into()));
            }
        }
        Ok(())
    }

    pub fn recognize_foul(&self, store: &ParamStore, views: &[Tensor]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_views(views)?;
        let mut g = Graph::new();
        let refs: Vec<&Tensor> = views.iter().collect();
        let v = g.constant(batch_of(&refs));
        let pooled = self.pool_views(&mut g, v);
        let (f, s) = self.forward_pooled(&mut g, store, pooled);
        Ok((g.value(f).data().to_vec(), g.value(s).data().to_vec()))
    }
}

/// Sum of the foul-type and severity cross-entropies over a batch (each
/// averaged over the batch).
pub fn foul_loss_var(g: &mut Graph, foul_logits: Var, severity_logits: Var, fouls: &[usize], severities: &[usize]) -> Result<Var> {
    for &f in fouls {
        if f >= FOUL_CLASSES {
            return Err(Error::LabelOutOfRange {
                label: f,
                classes: FOUL_CLASSES,
            });
        }
    }
    for &s in severities {
        if s >= SEVERITY_LEVELS {
            return Err(Error::LabelOutOfRange {
                label: s,
                classes: SEVERITY_LEVELS,
            });
        }
    }
    let a = g.cross_entropy(foul_logits, fouls);
    let b = g.cross_entropy(severity_logits, severities);
    Ok(g.add(a, b))
}

pub fn foul_loss(foul_logits: &[f64], severity_logits: &[f64], foul: usize, severity: usize) -> Result<f64> {
    if foul_logits.len() != FOUL_CLASSES || severity_logits.len() != SEVERITY_LEVELS {
        return Err(Error::ShapeMismatch(format!(
            "expected {FOUL_CLASSES} + {SEVERITY_LEVELS} logits, got {} + {}",
            foul_logits.len(),
            severity_logits.len()
        )));
    }
    let mut g = Graph::new();
    let f = g.constant(Tensor::new(vec![1, FOUL_CLASSES], foul_logits.to_vec())?);
    let s = g.constant(Tensor::new(vec![1, SEVERITY_LEVELS], severity_logits.to_vec())?);
    let l = foul_loss_var(&mut g, f, s, &[foul], &[severity])?;
    Ok(g.value(l).item())
}

/// `y = W·x + (α/r)·B·(A·x)` with `W [out, in]`, `B [out, r]`, `A [r, in]`;
/// `x` is `[in]` or `[N, in]` (rows).
pub fn lora_linear(x: &Tensor, w: &Tensor, b: &Tensor, a: &Tensor, alpha: f64) -> Result<Tensor> {
    let bad = |m: &str| Error::ShapeMismatch(format!("lora_linear: {m}"));
    if w.ndim() != 2 || b.ndim() != 2 || a.ndim() != 2 {
        return Err(bad("W, B and A must be matrices"));
    }
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    let r = a.shape()[0];
    if b.shape() != [out, r] || a.shape() != [r, inp] || r == 0 {
        return Err(bad("B must be [out, r] and A [r, in]"));
    }
    if x.last_dim() != inp {
        return Err(bad("input width"));
    }
    let rows = x.len() / inp;
    let scale = alpha / r as f64;
    let mut y = Vec::with_capacity(rows * out);
    for xr in x.data().chunks(inp) {
        let ax: Vec<f64> = (0..r).map(|k| (0..inp).map(|i| a.data()[k * inp + i] * xr[i]).sum()).collect();
        for o in 0..out {
            let base: f64 = (0..inp).map(|i| w.data()[o * inp + i] * xr[i]).sum();
            let delta: f64 = (0..r).map(|k| b.data()[o * r + k] * ax[k]).sum();
            y.push(base + scale * delta);
        }
    }
    let shape = if x.ndim() == 1 { vec![out] } else { vec![rows, out] };
    Tensor::new(shape, y)
}
