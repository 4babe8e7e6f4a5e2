use serde::{Deserialize, Serialize};

use super::check_features;
use super::vocab::{BOS, EOS, PAD};
use crate::encoder::batch_of;
use crate::error::{Error, Result};
use crate::nn::{Attention, LayerNorm, Linear, Mlp, TransformerBlock};
use crate::numerics::{AttentionOpts, Graph, ParamGroup, ParamId, ParamStore, Rng, Tensor, Var, IGNORE_TARGET};

pub const PERCEIVER_QUERIES: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommentaryConfig {
    /// Encoder feature width `D`.
    pub dim: usize,
    pub heads: usize,
    pub queries: usize,
    pub perceiver_blocks: usize,
    /// Decoder width `D_lm`.
    pub lm_dim: usize,
    pub lm_layers: usize,
    pub lm_heads: usize,
    pub vocab: usize,
    /// Longest token sequence, `BOS` and `EOS` included.
    pub max_len: usize,
}

impl CommentaryConfig {
    pub fn new(dim: usize, vocab: usize) -> Self {
        Self {
            dim,
            heads: 4,
            queries: PERCEIVER_QUERIES,
            perceiver_blocks: 2,
            lm_dim: 64,
            lm_layers: 2,
            lm_heads: 4,
            vocab,
            max_len: 48,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PerceiverBlock {
    pub ln_q: LayerNorm,
    pub ln_kv: LayerNorm,
    pub cross: Attention,
    pub ln_mlp: LayerNorm,
    pub mlp: Mlp,
}

/// Fixed set of learned queries cross-attending to frame features.
#[derive(Clone, Debug)]
pub struct Perceiver {
    pub queries: ParamId,
    pub blocks: Vec<PerceiverBlock>,
    pub num_queries: usize,
    pub dim: usize,
}

impl Perceiver {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, prefix: &str, dim: usize, heads: usize, queries: usize, depth: usize) -> Self {
        let g = ParamGroup::NewInit;
        Self {
            queries: store.weight(format!("{prefix}.queries"), &[queries, dim], g, rng),
            blocks: (0..depth)
                .map(|i| {
                    let b = format!("{prefix}.blocks.{i}");
                    PerceiverBlock {
                        ln_q: LayerNorm::new(store, &format!("{b}.ln_q"), dim, g),
                        ln_kv: LayerNorm::new(store, &format!("{b}.ln_kv"), dim, g),
                        cross: Attention::new(store, rng, &format!("{b}.cross"), dim, heads, g),
                        ln_mlp: LayerNorm::new(store, &format!("{b}.ln_mlp"), dim, g),
                        mlp: Mlp::new(store, rng, &format!("{b}.mlp"), dim, 4 * dim, dim, g),
                    }
                })
                .collect(),
            num_queries: queries,
            dim,
        }
    }

    /// `fv [B, T, D]` → `[B, Q, D]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, fv: Var) -> Var {
        let b = g.shape(fv)[0];
        let zeros = g.constant(Tensor::zeros(&[b, self.num_queries, self.dim]));
        let q = g.param(store, self.queries);
        let mut x = g.add(zeros, q);
        for blk in &self.blocks {
            let hq = blk.ln_q.forward(g, store, x);
            let hkv = blk.ln_kv.forward(g, store, fv);
            let a = blk.cross.forward(g, store, hq, hkv, AttentionOpts::default());
            x = g.add(x, a);
            let h = blk.ln_mlp.forward(g, store, x);
            let m = blk.mlp.forward(g, store, h);
            x = g.add(x, m);
        }
        x
    }

    pub fn perceiver_aggregate(&self, store: &ParamStore, fv: &Tensor) -> Result<Tensor> {
        check_features(fv, self.dim)?;
        let mut g = Graph::new();
        let x = g.constant(batch_of(&[fv]));
        let out = self.forward(&mut g, store, x);
        g.value(out).clone().reshape(&[self.num_queries, self.dim])
    }
}

/// Small causal language model that reads a prefix of embeddings before
/// the token sequence.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub ln_f: LayerNorm,
    pub lm_head: Linear,
    pub dim: usize,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, prefix: &str, cfg: &CommentaryConfig) -> Self {
        let g = ParamGroup::PretrainedInit;
        let d = cfg.lm_dim;
        Self {
            tok_emb: store.weight(format!("{prefix}.tok_emb"), &[cfg.vocab, d], g, rng),
            pos_emb: store.weight(format!("{prefix}.pos_emb"), &[cfg.queries + cfg.max_len, d], g, rng),
            blocks: (0..cfg.lm_layers)
                .map(|i| TransformerBlock::new(store, rng, &format!("{prefix}.blocks.{i}"), d, cfg.lm_heads, g))
                .collect(),
            ln_f: LayerNorm::new(store, &format!("{prefix}.ln_f"), d, g),
            lm_head: Linear::new(store, rng, &format!("{prefix}.lm_head"), d, cfg.vocab, g),
            dim: d,
        }
    }

    /// `prefix [B, Q, L]` and `ids` (B rows of equal length n) → logits
    /// `[B, n, V]` at the token positions.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, prefix: Var, ids: &[Vec<usize>]) -> Var {
        let b = ids.len();
        let n = ids[0].len();
        let q = g.shape(prefix)[1];
        let flat: Vec<usize> = ids.iter().flatten().copied().collect();
        let table = g.param(store, self.tok_emb);
        let e = g.embedding(table, &flat);
        let e = g.reshape(e, &[b, n, self.dim]);
        let x = g.concat(&[prefix, e], 1);
        let pos = g.param(store, self.pos_emb);
        let pos = g.slice(pos, 0, 0, q + n);
        let mut x = g.add(x, pos);
        for blk in &self.blocks {
            x = blk.forward(g, store, x, true);
        }
        let x = self.ln_f.forward(g, store, x);
        let x = g.slice(x, 1, q, n);
        self.lm_head.forward(g, store, x)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    #[default]
    Greedy,
}

/// Perceiver aggregator, projection MLP into the decoder width, and the
/// prefix-conditioned decoder.
#[derive(Clone, Debug)]
pub struct CommentaryHead {
    pub cfg: CommentaryConfig,
    pub perceiver: Perceiver,
    pub proj: Mlp,
    pub decoder: Decoder,
    pub prefix: String,
}

impl CommentaryHead {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, prefix: &str, cfg: &CommentaryConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            perceiver: Perceiver::new(
                store,
                rng,
                &format!("{prefix}.perceiver"),
                cfg.dim,
                cfg.heads,
                cfg.queries,
                cfg.perceiver_blocks,
            ),
            proj: Mlp::new(store, rng, &format!("{prefix}.proj"), cfg.dim, cfg.lm_dim, cfg.lm_dim, ParamGroup::NewInit),
            decoder: Decoder::new(store, rng, &format!("{prefix}.decoder"), cfg),
            prefix: prefix.to_string(),
        }
    }

    /// Attaches rank-`rank` adapters to every decoder attention projection
    /// and freezes the rest of the decoder.
    pub fn enable_adapters(&mut self, store: &mut ParamStore, rng: &mut Rng, rank: usize, alpha: f64) {
        let mut adapter_ids = Vec::new();
        for blk in &mut self.decoder.blocks {
            for lin in blk.attn.linears_mut() {
                lin.attach_adapter(store, rng, rank, alpha);
                let a = lin.adapter.as_ref().unwrap();
                adapter_ids.extend([a.down, a.up]);
            }
        }
        store.set_frozen(&format!("{}.decoder.", self.prefix), true);
        for id in adapter_ids {
            store.get_mut(id).frozen = false;
        }
    }

    /// Decoder prefix `[B, Q, L]` from features `[B, T, D]`.
    pub fn prefix_embeddings(&self, g: &mut Graph, store: &ParamStore, fv: Var) -> Var {
        let p = self.perceiver.forward(g, store, fv);
        self.proj.forward(g, store, p)
    }

    pub fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.len() < 2 || tokens[0] != BOS || tokens[tokens.len() - 1] != EOS {
            return Err(Error::Schema("target must start with BOS and end with EOS".into()));
        }
        if tokens.len() > self.cfg.max_len {
            return Err(Error::TooLong {
                len: tokens.len(),
                max: self.cfg.max_len,
            });
        }
        if let Some(&id) = tokens.iter().find(|&&t| t >= self.cfg.vocab) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: self.cfg.vocab,
            });
        }
        Ok(())
    }

    /// Teacher-forced logits `[B, n-1, V]` and targets (padding ignored).
    pub fn teacher_forced(&self, g: &mut Graph, store: &ParamStore, fv: Var, seqs: &[Vec<usize>]) -> (Var, Vec<usize>) {
        let n = seqs.iter().map(|s| s.len()).max().unwrap() - 1;
        let mut inputs = Vec::with_capacity(seqs.len());
        let mut targets = Vec::with_capacity(seqs.len() * n);
        for s in seqs {
            let mut inp = s[..s.len() - 1].to_vec();
            inp.resize(n, PAD);
            inputs.push(inp);
            targets.extend_from_slice(&s[1..]);
            targets.resize(targets.len() + n + 1 - s.len(), IGNORE_TARGET);
        }
        let prefix = self.prefix_embeddings(g, store, fv);
        (self.decoder.forward(g, store, prefix, &inputs), targets)
    }

    /// Mean next-token negative log-likelihood over all target tokens.
    pub fn nll(&self, g: &mut Graph, store: &ParamStore, fv: Var, seqs: &[Vec<usize>]) -> Var {
        let (logits, targets) = self.teacher_forced(g, store, fv, seqs);
        let v = self.cfg.vocab;
        let flat = g.reshape(logits, &[targets.len(), v]);
        g.cross_entropy(flat, &targets)
    }

    pub fn commentary_nll(&self, store: &ParamStore, fv: &Tensor, tokens: &[usize]) -> Result<f64> {
        check_features(fv, self.cfg.dim)?;
        self.check_tokens(tokens)?;
        let mut g = Graph::new();
        let x = g.constant(batch_of(&[fv]));
        let loss = self.nll(&mut g, store, x, &[tokens.to_vec()]);
        Ok(g.value(loss).item())
    }

    /// Number of correctly predicted next tokens and the number predicted.
    pub fn teacher_forced_hits(&self, store: &ParamStore, fv: &Tensor, tokens: &[usize]) -> Result<(usize, usize)> {
        check_features(fv, self.cfg.dim)?;
        self.check_tokens(tokens)?;
        let mut g = Graph::new();
        let x = g.constant(batch_of(&[fv]));
        let (logits, targets) = self.teacher_forced(&mut g, store, x, &[tokens.to_vec()]);
        let lv = g.value(logits);
        let v = self.cfg.vocab;
        let hits = targets
            .iter()
            .enumerate()
            .filter(|&(i, &t)| argmax(&lv.data()[i * v..(i + 1) * v]) == t)
            .count();
        Ok((hits, targets.len()))
    }

    /// Greedy decoding from `BOS`; returns the generated tokens (without
    /// `BOS`, with the final `EOS` if one was produced).
    pub fn generate(&self, store: &ParamStore, fv: &Tensor, max_len: usize, mode: GenerationMode) -> Result<Vec<usize>> {
        let GenerationMode::Greedy = mode;
        check_features(fv, self.cfg.dim)?;
        let max_len = max_len.min(self.cfg.max_len - 1);
        let mut g = Graph::new();
        let x = g.constant(batch_of(&[fv]));
        let prefix = self.prefix_embeddings(&mut g, store, x);
        let prefix = g.value(prefix).clone();
        let mut seq = vec![BOS];
        let v = self.cfg.vocab;
        while seq.len() <= max_len {
            let mut step = Graph::new();
            let p = step.constant(prefix.clone());
            let logits = self.decoder.forward(&mut step, store, p, &[seq.clone()]);
            let lv = step.value(logits).data();
            let last = argmax(&lv[lv.len() - v..]);
            seq.push(last);
            if last == EOS {
                break;
            }
        }
        Ok(seq[1..].to_vec())
    }
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::Vocabulary;

    fn setup(vocab: usize) -> (ParamStore, CommentaryHead) {
        let mut store = ParamStore::new();
        let cfg = CommentaryConfig {
            lm_dim: 16,
            lm_heads: 2,
            heads: 2,
            max_len: 12,
            ..CommentaryConfig::new(8, vocab)
        };
        let head = CommentaryHead::new(&mut store, &mut Rng::new(3), "cmt", &cfg);
        (store, head)
    }

    fn features(t: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(&[t, 8], |_| rng.normal())
    }

    #[test]
    fn perceiver_output_is_fixed_length() {
        let (store, head) = setup(10);
        for t in [1, 5, 30] {
            let out = head.perceiver.perceiver_aggregate(&store, &features(t, t as u64)).unwrap();
            assert_eq!(out.shape(), &[32, 8]);
            assert!(out.is_finite());
        }
    }

    #[test]
    fn uniform_decoder_gives_log_vocab() {
        let (mut store, head) = setup(10);
        store.set_value(head.decoder.lm_head.weight, Tensor::zeros(&[16, 10]));
        let nll = head.commentary_nll(&store, &features(4, 1), &[BOS, 5, 6, 7, EOS]).unwrap();
        assert!((nll - 10f64.ln()).abs() < 1e-12);
        let short = head.commentary_nll(&store, &features(4, 1), &[BOS, EOS]).unwrap();
        assert!((short - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn token_validation() {
        let (store, head) = setup(10);
        let fv = features(4, 1);
        assert!(matches!(
            head.commentary_nll(&store, &fv, &[BOS, 10, EOS]),
            Err(Error::TokenOutOfRange { id: 10, .. })
        ));
        assert!(head.commentary_nll(&store, &fv, &[5, EOS]).is_err());
        assert!(matches!(
            head.commentary_nll(&store, &fv, &[vec![BOS], vec![4; 11], vec![EOS]].concat()),
            Err(Error::TooLong { .. })
        ));
    }

    #[test]
    fn padding_does_not_change_per_sequence_loss() {
        let (store, head) = setup(10);
        let fv = features(3, 2);
        let a = vec![BOS, 4, 5, EOS];
        let b = vec![BOS, 6, 7, 8, 9, EOS];
        let single = head.commentary_nll(&store, &fv, &a).unwrap();
        let mut g = Graph::new();
        let x = g.constant(batch_of(&[&fv, &fv]));
        let (logits, targets) = head.teacher_forced(&mut g, &store, x, &[a.clone(), b]);
        assert_eq!(targets[3..5], [IGNORE_TARGET, IGNORE_TARGET]);
        let flat = g.reshape(logits, &[targets.len(), 10]);
        let only_a: Vec<usize> = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| if i < 5 { t } else { IGNORE_TARGET })
            .collect();
        let loss = g.cross_entropy(flat, &only_a);
        assert!((g.value(loss).item() - single).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic_and_bounded() {
        let (store, head) = setup(10);
        let fv = features(4, 5);
        let a = head.generate(&store, &fv, 6, GenerationMode::Greedy).unwrap();
        assert_eq!(a, head.generate(&store, &fv, 6, GenerationMode::Greedy).unwrap());
        assert!(!a.is_empty() && a.len() <= 6);
        assert_eq!(head.generate(&store, &fv, 1, GenerationMode::Greedy).unwrap().len(), 1);
    }

    #[test]
    fn adapters_start_as_identity_and_freeze_the_base() {
        let (mut store, mut head) = setup(10);
        let fv = features(4, 6);
        let toks = vec![BOS, 4, 5, EOS];
        let before = head.commentary_nll(&store, &fv, &toks).unwrap();
        head.enable_adapters(&mut store, &mut Rng::new(1), 16, 16.0);
        assert_eq!(before, head.commentary_nll(&store, &fv, &toks).unwrap());
        let w = head.decoder.blocks[0].attn.q.weight;
        assert!(store.get(w).frozen);
        assert!(!store.get(head.decoder.blocks[0].attn.q.adapter.as_ref().unwrap().up).frozen);
        assert!(!store.get(head.perceiver.queries).frozen);
    }

    #[test]
    fn vocabulary_feeds_the_head() {
        let v = Vocabulary::build(["[PLAYER] scores", "corner for [TEAM]"]);
        let (store, head) = setup(v.len());
        let ids = v.encode("corner for [TEAM]");
        assert!(head.commentary_nll(&store, &features(2, 1), &ids).unwrap().is_finite());
    }
}
