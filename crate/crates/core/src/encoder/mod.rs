//! The spatiotemporal video encoder and the toy text encoder.
//!
//! A segment `[T, 3, H, W]` is cut into `M = (H/P)·(W/P)` patches per frame,
//! linearly embedded to width `D`, given a spatial position embedding and a
//! learned `[cls]` token, and then a temporal position embedding across
//! frames. `K` blocks of temporal attention → spatial attention → MLP (all
//! pre-norm, residual) follow, and a separate aggregation attention pools
//! each frame into its `[cls]` token, giving per-frame features `[T, D]`.

mod features;
mod text;

pub use features::{features_from_bytes, features_to_bytes, read_features, write_features, FeatureRecord, FEATURE_MAGIC, FEATURE_VERSION};
pub use text::{TextEncoder, DEFAULT_TEXT_MAX_LEN};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Attention, LayerNorm, Linear, Mlp};
use crate::numerics::{AttentionOpts, Graph, ParamGroup, ParamId, ParamStore, Rng, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub text_vocab: usize,
    pub text_layers: usize,
    pub text_max_len: usize,
}

impl EncoderConfig {
    /// Small profile used for tests and the synthetic corpus.
    pub fn desk() -> Self {
        Self {
            frames: 8,
            height: 32,
            width: 32,
            patch: 16,
            dim: 64,
            blocks: 2,
            heads: 4,
            text_vocab: 512,
            text_layers: 1,
            text_max_len: DEFAULT_TEXT_MAX_LEN,
        }
    }

    /// 30 one-second frames at 224×224, ViT-B/16 widths.
    pub fn full() -> Self {
        Self {
            frames: 30,
            height: 224,
            width: 224,
            patch: 16,
            dim: 768,
            blocks: 12,
            heads: 12,
            text_vocab: 32_000,
            text_layers: 12,
            text_max_len: DEFAULT_TEXT_MAX_LEN,
        }
    }

    pub fn num_patches(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ShapeMismatch(m));
        if self.patch == 0 || !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return bad(format!(
                "frame {}x{} not divisible by patch {}",
                self.height, self.width, self.patch
            ));
        }
        if self.num_patches() == 0 || self.frames == 0 {
            return bad("need at least one frame and one patch".into());
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!("width {} not divisible by {} heads", self.dim, self.heads));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub match_id: String,
    pub half: u8,
    pub timestamp: String,
}

/// Normalized frames `[T, 3, H, W]` with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSegment {
    pub frames: Tensor,
    pub meta: SegmentMeta,
}

impl VideoSegment {
    pub fn new(frames: Tensor, meta: SegmentMeta) -> Result<Self> {
        if frames.ndim() != 4 || frames.shape()[1] != 3 {
            return Err(Error::ShapeMismatch(format!(
                "segment frames must be [T, 3, H, W], got {:?}",
                frames.shape()
            )));
        }
        if frames.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::ShapeMismatch("segment values outside [-1, 1]".into()));
        }
        Ok(Self { frames, meta })
    }

    /// Builds a segment from raw pixel intensities in `[0, 1]`, applying the
    /// mean 0.5 / std 0.5 normalization.
    pub fn from_unit_pixels(pixels: Tensor, meta: SegmentMeta) -> Result<Self> {
        Self::new(pixels.map(|v| (v - 0.5) / 0.5), meta)
    }

    pub fn check(&self, cfg: &EncoderConfig) -> Result<()> {
        let want = [cfg.frames, 3, cfg.height, cfg.width];
        if self.frames.shape() != want {
            return Err(Error::ShapeMismatch(format!(
                "segment {:?} does not match encoder input {want:?}",
                self.frames.shape()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SpatioTemporalBlock {
    pub ln_temporal: LayerNorm,
    pub temporal: Attention,
    pub ln_spatial: LayerNorm,
    pub spatial: Attention,
    pub ln_mlp: LayerNorm,
    pub mlp: Mlp,
}

#[derive(Clone, Debug)]
pub struct VideoEncoder {
    pub cfg: EncoderConfig,
    pub patch_embed: Linear,
    pub cls: ParamId,
    pub pos_spatial: ParamId,
    pub pos_temporal: ParamId,
    pub blocks: Vec<SpatioTemporalBlock>,
    pub agg_ln: LayerNorm,
    pub agg: Attention,
    pub out_ln: LayerNorm,
}

impl VideoEncoder {
    /// Registers encoder parameters under `prefix`. Token embedding, spatial
    /// attention, MLPs and the aggregation layer belong to the
    /// pretrained-init group; temporal attention and temporal positions are
    /// new-init.
    pub fn new(store: &mut ParamStore, rng: &mut Rng, prefix: &str, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let pre = ParamGroup::PretrainedInit;
        let new = ParamGroup::NewInit;
        let d = cfg.dim;
        let patch_dim = 3 * cfg.patch * cfg.patch;
        let patch_embed = Linear::new(store, rng, &format!("{prefix}.patch_embed"), patch_dim, d, pre);
        let cls = store.weight(format!("{prefix}.cls"), &[d], pre, rng);
        let pos_spatial = store.weight(format!("{prefix}.pos_spatial"), &[cfg.num_patches(), d], pre, rng);
        let pos_temporal = store.weight(format!("{prefix}.pos_temporal"), &[cfg.frames, d], new, rng);
        let blocks = (0..cfg.blocks)
            .map(|i| {
                let b = format!("{prefix}.blocks.{i}");
                SpatioTemporalBlock {
                    ln_temporal: LayerNorm::new(store, &format!("{b}.ln_temporal"), d, new),
                    temporal: Attention::new(store, rng, &format!("{b}.temporal"), d, cfg.heads, new),
                    ln_spatial: LayerNorm::new(store, &format!("{b}.ln_spatial"), d, pre),
                    spatial: Attention::new(store, rng, &format!("{b}.spatial"), d, cfg.heads, pre),
                    ln_mlp: LayerNorm::new(store, &format!("{b}.ln_mlp"), d, pre),
                    mlp: Mlp::new(store, rng, &format!("{b}.mlp"), d, 4 * d, d, pre),
                }
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            patch_embed,
            cls,
            pos_spatial,
            pos_temporal,
            blocks,
            agg_ln: LayerNorm::new(store, &format!("{prefix}.agg_ln"), d, pre),
            agg: Attention::new(store, rng, &format!("{prefix}.agg"), d, cfg.heads, pre),
            out_ln: LayerNorm::new(store, &format!("{prefix}.out_ln"), d, pre),
        })
    }

    /// `frames [B, T, 3, H, W]` → tokens `z [B, T, M+1, D]`.
    pub fn embed(&self, g: &mut Graph, store: &ParamStore, frames: Var) -> Var {
        let c = &self.cfg;
        let b = g.shape(frames)[0];
        let (t, p) = (c.frames, c.patch);
        let (hp, wp) = (c.height / p, c.width / p);
        let m = hp * wp;
        let x = g.reshape(frames, &[b, t, 3, hp, p, wp, p]);
        let x = g.permute(x, &[0, 1, 3, 5, 2, 4, 6]);
        let x = g.reshape(x, &[b, t, m, 3 * p * p]);
        let x = self.patch_embed.forward(g, store, x);
        let pos_s = g.param(store, self.pos_spatial);
        let x = g.add(x, pos_s);
        let zeros = g.constant(Tensor::zeros(&[b, t, 1, c.dim]));
        let cls = g.param(store, self.cls);
        let cls = g.add(zeros, cls);
        let y = g.concat(&[cls, x], 2);
        // Temporal positions broadcast over tokens: add in [B, M+1, T, D].
        let y = g.permute(y, &[0, 2, 1, 3]);
        let pos_t = g.param(store, self.pos_temporal);
        let y = g.add(y, pos_t);
        g.permute(y, &[0, 2, 1, 3])
    }

    /// Attention among the `T` tokens at each spatial index, plus residual.
    pub fn temporal_attention(&self, g: &mut Graph, store: &ParamStore, block: usize, z: Var) -> Var {
        let [b, t, s, d] = dims4(g.shape(z));
        let blk = &self.blocks[block];
        let x = g.permute(z, &[0, 2, 1, 3]);
        let x = g.reshape(x, &[b * s, t, d]);
        let h = blk.ln_temporal.forward(g, store, x);
        let a = blk.temporal.forward(g, store, h, h, AttentionOpts::default());
        let a = g.reshape(a, &[b, s, t, d]);
        let a = g.permute(a, &[0, 2, 1, 3]);
        g.add(z, a)
    }

    /// Attention among the `M+1` tokens of each frame, plus residual.
    pub fn spatial_attention(&self, g: &mut Graph, store: &ParamStore, block: usize, z: Var) -> Var {
        let [b, t, s, d] = dims4(g.shape(z));
        let blk = &self.blocks[block];
        let x = g.reshape(z, &[b * t, s, d]);
        let h = blk.ln_spatial.forward(g, store, x);
        let a = blk.spatial.forward(g, store, h, h, AttentionOpts::default());
        let a = g.reshape(a, &[b, t, s, d]);
        g.add(z, a)
    }

    fn mlp(&self, g: &mut Graph, store: &ParamStore, block: usize, z: Var) -> Var {
        let blk = &self.blocks[block];
        let h = blk.ln_mlp.forward(g, store, z);
        let m = blk.mlp.forward(g, store, h);
        g.add(z, m)
    }

    /// Per-frame aggregation: each `[cls]` attends over its frame's tokens.
    /// Returns `[B, T, D]`.
    pub fn aggregate(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Var {
        let [b, t, s, d] = dims4(g.shape(z));
        let x = g.reshape(z, &[b * t, s, d]);
        let h = self.agg_ln.forward(g, store, x);
        let q = g.slice(h, 1, 0, 1);
        let a = self.agg.forward(g, store, q, h, AttentionOpts::default());
        let cls = g.slice(x, 1, 0, 1);
        let cls = g.add(cls, a);
        let out = self.out_ln.forward(g, store, cls);
        g.reshape(out, &[b, t, d])
    }

    /// Full encoder on a batch `[B, T, 3, H, W]`, giving `F_V` as `[B, T, D]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, frames: Var) -> Var {
        let mut z = self.embed(g, store, frames);
        for k in 0..self.blocks.len() {
            z = self.temporal_attention(g, store, k, z);
            z = self.spatial_attention(g, store, k, z);
            z = self.mlp(g, store, k, z);
        }
        self.aggregate(g, store, z)
    }

    pub fn check_batch(&self, frames: &Tensor) -> Result<()> {
        let c = &self.cfg;
        let s = frames.shape();
        if s.len() != 5 || s[1..] != [c.frames, 3, c.height, c.width] {
            return Err(Error::ShapeMismatch(format!(
                "batch {s:?} does not match encoder input [B, {}, 3, {}, {}]",
                c.frames, c.height, c.width
            )));
        }
        Ok(())
    }

    fn check_tokens(&self, z: &Tensor) -> Result<()> {
        let want = [self.cfg.frames, self.cfg.tokens_per_frame(), self.cfg.dim];
        if z.shape() != want {
            return Err(Error::ShapeMismatch(format!(
                "tokens {:?} do not match {want:?}",
                z.shape()
            )));
        }
        Ok(())
    }

    /// Tokenized segment `[T, M+1, D]`.
    pub fn embed_segment(&self, store: &ParamStore, seg: &VideoSegment) -> Result<Tensor> {
        seg.check(&self.cfg)?;
        let mut g = Graph::new();
        let f = g.constant(batch_of(&[&seg.frames]));
        let z = self.embed(&mut g, store, f);
        Ok(unbatch(g.value(z)))
    }

    /// Applies one block's temporal attention layer to `z [T, M+1, D]`.
    pub fn apply_temporal(&self, store: &ParamStore, block: usize, z: &Tensor) -> Result<Tensor> {
        self.check_tokens(z)?;
        let mut g = Graph::new();
        let zv = g.constant(batch_of(&[z]));
        let out = self.temporal_attention(&mut g, store, block, zv);
        Ok(unbatch(g.value(out)))
    }

    /// Applies one block's spatial attention layer to `z [T, M+1, D]`.
    pub fn apply_spatial(&self, store: &ParamStore, block: usize, z: &Tensor) -> Result<Tensor> {
        self.check_tokens(z)?;
        if z.shape()[1] < 2 {
            return Err(Error::ShapeMismatch("spatial attention needs at least one patch".into()));
        }
        let mut g = Graph::new();
        let zv = g.constant(batch_of(&[z]));
        let out = self.spatial_attention(&mut g, store, block, zv);
        Ok(unbatch(g.value(out)))
    }

    /// `F_V [T, D]` for one segment.
    pub fn encode_video(&self, store: &ParamStore, seg: &VideoSegment) -> Result<Tensor> {
        seg.check(&self.cfg)?;
        Ok(self.encode_batch(store, &[&seg.frames])?.remove(0))
    }

    /// Inference on several segments at once, one `[T, D]` per input.
    pub fn encode_batch(&self, store: &ParamStore, frames: &[&Tensor]) -> Result<Vec<Tensor>> {
        let batch = batch_of(frames);
        self.check_batch(&batch)?;
        let mut g = Graph::new();
        let f = g.constant(batch);
        let out = self.forward(&mut g, store, f);
        let fv = g.value(out);
        let (t, d) = (self.cfg.frames, self.cfg.dim);
        Ok((0..frames.len())
            .map(|i| Tensor::new(vec![t, d], fv.data()[i * t * d..(i + 1) * t * d].to_vec()).unwrap())
            .collect())
    }
}

fn dims4(s: &[usize]) -> [usize; 4] {
    s.try_into().expect("expected a rank-4 tensor")
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn batch_of(items: &[&Tensor]) -> Tensor {
    assert!(!items.is_empty(), "empty batch");
    let mut shape = vec![items.len()];
    shape.extend_from_slice(items[0].shape());
    let mut data = Vec::with_capacity(items.len() * items[0].len());
    for t in items {
        assert_eq!(t.shape(), items[0].shape(), "batch items differ in shape");
        data.extend_from_slice(t.data());
    }
    Tensor::new(shape, data).unwrap()
}

fn unbatch(t: &Tensor) -> Tensor {
    t.clone().reshape(&t.shape()[1..]).unwrap()
}
