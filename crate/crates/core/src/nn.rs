//! Layer building blocks shared by the encoder, objectives and heads.

use crate::numerics::{AttentionOpts, Graph, ParamGroup, ParamId, ParamStore, Rng, Var, LN_EPS};

/// Low-rank update `scale · x·Aᵀ·Bᵀ` attached to a [`Linear`].
/// `down` is stored as `[in, r]` (Aᵀ) and `up` as `[r, out]` (Bᵀ).
#[derive(Clone, Debug)]
pub struct Adapter {
    pub down: ParamId,
    pub up: ParamId,
    pub rank: usize,
    pub alpha: f64,
}

impl Adapter {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub adapter: Option<Adapter>,
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, d_in: usize, d_out: usize, group: ParamGroup) -> Self {
        Self {
            weight: store.weight(format!("{name}.weight"), &[d_in, d_out], group, rng),
            bias: store.zeros(format!("{name}.bias"), &[d_out], group),
            adapter: None,
            name: name.to_string(),
            d_in,
            d_out,
        }
    }

    /// Attaches a rank-`rank` adapter. The up-projection starts at zero so the
    /// layer's output is unchanged until it trains.
    pub fn attach_adapter(&mut self, store: &mut ParamStore, rng: &mut Rng, rank: usize, alpha: f64) {
        let down = store.weight(
            format!("{}.lora_down", self.name),
            &[self.d_in, rank],
            ParamGroup::NewInit,
            rng,
        );
        let up = store.zeros(format!("{}.lora_up", self.name), &[rank, self.d_out], ParamGroup::NewInit);
        self.adapter = Some(Adapter {
            down,
            up,
            rank,
            alpha,
        });
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w);
        let mut y = g.add(y, b);
        if let Some(a) = &self.adapter {
            let down = g.param(store, a.down);
            let up = g.param(store, a.up);
            let h = g.matmul(x, down);
            let h = g.matmul(h, up);
            let h = g.scale(h, a.scale());
            y = g.add(y, h);
        }
        y
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, group: ParamGroup) -> Self {
        Self {
            gamma: store.ones(format!("{name}.gamma"), &[d], group),
            beta: store.zeros(format!("{name}.beta"), &[d], group),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

/// Two-layer GELU MLP.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, d: usize, hidden: usize, d_out: usize, group: ParamGroup) -> Self {
        Self {
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), d, hidden, group),
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), hidden, d_out, group),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = self.fc1.forward(g, store, x);
        let h = g.gelu(h);
        self.fc2.forward(g, store, h)
    }
}

/// Multi-head attention with separate q/k/v/output projections.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, d: usize, heads: usize, group: ParamGroup) -> Self {
        assert!(d.is_multiple_of(heads), "width {d} not divisible by {heads} heads");
        Self {
            q: Linear::new(store, rng, &format!("{name}.q"), d, d, group),
            k: Linear::new(store, rng, &format!("{name}.k"), d, d, group),
            v: Linear::new(store, rng, &format!("{name}.v"), d, d, group),
            o: Linear::new(store, rng, &format!("{name}.o"), d, d, group),
            heads,
        }
    }

    /// `queries [N, Lq, D]` attend over `context [N, Lk, D]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, queries: Var, context: Var, opts: AttentionOpts) -> Var {
        let q = self.q.forward(g, store, queries);
        let k = self.k.forward(g, store, context);
        let v = self.v.forward(g, store, context);
        let a = g.attention(q, k, v, self.heads, opts);
        self.o.forward(g, store, a)
    }

    pub fn linears_mut(&mut self) -> [&mut Linear; 4] {
        [&mut self.q, &mut self.k, &mut self.v, &mut self.o]
    }
}

/// Pre-norm self-attention + MLP block over `[N, L, D]` sequences.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln_attn: LayerNorm,
    pub attn: Attention,
    pub ln_mlp: LayerNorm,
    pub mlp: Mlp,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, d: usize, heads: usize, group: ParamGroup) -> Self {
        Self {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), d, group),
            attn: Attention::new(store, rng, &format!("{name}.attn"), d, heads, group),
            ln_mlp: LayerNorm::new(store, &format!("{name}.ln_mlp"), d, group),
            mlp: Mlp::new(store, rng, &format!("{name}.mlp"), d, 4 * d, d, group),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, causal: bool) -> Var {
        let h = self.ln_attn.forward(g, store, x);
        let opts = AttentionOpts {
            causal,
            order_free: false,
        };
        let a = self.attn.forward(g, store, h, h, opts);
        let x = g.add(x, a);
        let h = self.ln_mlp.forward(g, store, x);
        let m = self.mlp.forward(g, store, h);
        g.add(x, m)
    }
}
