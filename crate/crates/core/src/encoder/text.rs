use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::nn::TransformerBlock;
use crate::numerics::{Graph, ParamGroup, ParamId, ParamStore, Rng, Tensor, Var};

pub const DEFAULT_TEXT_MAX_LEN: usize = 77;

/// Token + position embeddings, a few self-attention blocks, mean pooling
/// and L2 normalization. Output width matches the video encoder.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub vocab: usize,
    pub max_len: usize,
}

impl TextEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, prefix: &str, cfg: &EncoderConfig) -> Self {
        let g = ParamGroup::PretrainedInit;
        let d = cfg.dim;
        Self {
            tok_emb: store.weight(format!("{prefix}.tok_emb"), &[cfg.text_vocab, d], g, rng),
            pos_emb: store.weight(format!("{prefix}.pos_emb"), &[cfg.text_max_len, d], g, rng),
            blocks: (0..cfg.text_layers)
                .map(|i| TransformerBlock::new(store, rng, &format!("{prefix}.blocks.{i}"), d, cfg.heads, g))
                .collect(),
            vocab: cfg.text_vocab,
            max_len: cfg.text_max_len,
        }
    }

    pub fn check(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::ShapeMismatch("empty token sequence".into()));
        }
        if tokens.len() > self.max_len {
            return Err(Error::TooLong {
                len: tokens.len(),
                max: self.max_len,
            });
        }
        if let Some(&id) = tokens.iter().find(|&&t| t >= self.vocab) {
            return Err(Error::TokenOutOfRange { id, vocab: self.vocab });
        }
        Ok(())
    }

    /// Embeds one sequence as a `[1, D]` unit row.
    pub fn forward_one(&self, g: &mut Graph, store: &ParamStore, tokens: &[usize]) -> Var {
        let n = tokens.len();
        let table = g.param(store, self.tok_emb);
        let x = g.embedding(table, tokens);
        let pos = g.param(store, self.pos_emb);
        let pos = g.slice(pos, 0, 0, n);
        let x = g.add(x, pos);
        let d = g.shape(x)[1];
        let mut x = g.reshape(x, &[1, n, d]);
        for blk in &self.blocks {
            x = blk.forward(g, store, x, false);
        }
        let pooled = g.mean_pool(x, 1);
        g.l2_normalize(pooled)
    }

    /// Embeds a batch of sequences as `[B, D]` unit rows.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, batch: &[Vec<usize>]) -> Var {
        let rows: Vec<Var> = batch.iter().map(|t| self.forward_one(g, store, t)).collect();
        g.concat(&rows, 0)
    }

    pub fn encode_text(&self, store: &ParamStore, tokens: &[usize]) -> Result<Tensor> {
        self.check(tokens)?;
        let mut g = Graph::new();
        let v = self.forward_one(&mut g, store, tokens);
        let t = g.value(v).clone();
        let d = t.len();
        t.reshape(&[d])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (ParamStore, TextEncoder) {
        let mut store = ParamStore::new();
        let cfg = EncoderConfig {
            dim: 8,
            heads: 2,
            text_vocab: 10,
            text_layers: 2,
            text_max_len: 6,
            ..EncoderConfig::desk()
        };
        let enc = TextEncoder::new(&mut store, &mut Rng::new(11), "text", &cfg);
        (store, enc)
    }

    #[test]
    fn unit_norm_and_deterministic() {
        let (store, enc) = setup();
        let a = enc.encode_text(&store, &[1, 4, 2]).unwrap();
        let norm: f64 = a.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_eq!(a, enc.encode_text(&store, &[1, 4, 2]).unwrap());
    }

    #[test]
    fn input_errors() {
        let (store, enc) = setup();
        assert!(matches!(
            enc.encode_text(&store, &[10]),
            Err(Error::TokenOutOfRange { id: 10, .. })
        ));
        assert!(matches!(enc.encode_text(&store, &[1; 7]), Err(Error::TooLong { .. })));
    }

    #[test]
    fn zeroed_blocks_reduce_to_normalized_embedding_sum() {
        let (mut store, enc) = setup();
        for blk in &enc.blocks {
            for lin in [&blk.attn.q, &blk.attn.k, &blk.attn.v, &blk.attn.o, &blk.mlp.fc1, &blk.mlp.fc2] {
                let w = store.value(lin.weight).shape().to_vec();
                store.set_value(lin.weight, Tensor::zeros(&w));
            }
        }
        let out = enc.encode_text(&store, &[3]).unwrap();
        let tok = store.value(enc.tok_emb).row(3).to_vec();
        let pos = store.value(enc.pos_emb).row(0).to_vec();
        let sum: Vec<f64> = tok.iter().zip(&pos).map(|(a, b)| a + b).collect();
        let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (o, s) in out.data().iter().zip(&sum) {
            assert!((o - s / norm).abs() < 1e-12);
        }
    }
}
