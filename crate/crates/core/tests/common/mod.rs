#![allow(dead_code)]

pub mod oracles;

use matchvision::heads::Perceiver;
use matchvision::nn::Linear;
use matchvision::numerics::{
    grad_check, AttentionOpts, GradCheckReport, Graph, ParamGroup, ParamId, ParamStore, Rng, Tensor, Var,
    IGNORE_TARGET,
};

pub const EPS: f64 = 1e-6;
pub const TOL: f64 = 1e-5;

pub fn randn(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// `Σ w ⊙ x` with fixed random `w`, so every output element matters.
fn project(g: &mut Graph, x: Var, w: &Tensor) -> Var {
    let wv = g.constant(w.clone());
    let p = g.mul(x, wv);
    g.sum(p)
}

fn check(inputs: Vec<Tensor>, out_shape: &[usize], seed: u64, f: impl Fn(&mut Graph, &[Var]) -> Var) -> GradCheckReport {
    let w = randn(out_shape, &mut Rng::new(seed ^ 0xabcd));
    grad_check(
        |g, v| {
            let y = f(g, v);
            project(g, y, &w)
        },
        &inputs,
        EPS,
        TOL,
    )
    .unwrap()
}

/// Parameter values plus an input, with the parameters rebound to leaves.
fn check_with_params(
    store: &ParamStore,
    ids: &[ParamId],
    input: Tensor,
    out_shape: &[usize],
    seed: u64,
    f: impl Fn(&mut Graph, &ParamStore, Var) -> Var,
) -> GradCheckReport {
    let mut inputs = vec![input];
    inputs.extend(ids.iter().map(|&id| store.value(id).clone()));
    check(inputs, out_shape, seed, |g, v| {
        for (&id, &var) in ids.iter().zip(&v[1..]) {
            g.bind_param(id, var);
        }
        f(g, store, v[0])
    })
}

pub struct OpCheck {
    pub op: &'static str,
    pub shape: String,
    pub report: GradCheckReport,
}

fn all_ids(store: &ParamStore) -> Vec<ParamId> {
    store.iter().map(|(id, _)| id).collect()
}

/// Finite-difference checks of every differentiable operation on three
/// seeded shapes each.
pub fn gradient_suite() -> Vec<OpCheck> {
    let mut out = Vec::new();
    let mut push = |op, shape: String, report| out.push(OpCheck { op, shape, report });

    for (seed, &(n, l, d, heads, causal, order_free)) in [
        (1, 3, 4, 2, false, false),
        (2, 4, 6, 3, true, false),
        (1, 5, 8, 4, false, true),
    ]
    .iter()
    .enumerate()
    {
        let mut rng = Rng::new(seed as u64);
        let lk = if causal { l } else { l + 1 };
        let ins = vec![randn(&[n, l, d], &mut rng), randn(&[n, lk, d], &mut rng), randn(&[n, lk, d], &mut rng)];
        let r = check(ins, &[n, l, d], seed as u64, |g, v| {
            g.attention(v[0], v[1], v[2], heads, AttentionOpts { causal, order_free })
        });
        push("attention", format!("[{n},{l},{d}] h={heads} causal={causal} order_free={order_free}"), r);
    }

    for (seed, shape) in [vec![2, 3], vec![3, 5], vec![2, 2, 4]].into_iter().enumerate() {
        let mut rng = Rng::new(10 + seed as u64);
        let d = *shape.last().unwrap();
        let ins = vec![randn(&shape, &mut rng), randn(&[d], &mut rng), randn(&[d], &mut rng)];
        let r = check(ins, &shape, seed as u64, |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
        push("layer_norm", format!("{shape:?}"), r);
    }

    for (seed, (vocab, d, ids)) in [(4, 3, vec![0, 2, 2]), (6, 2, vec![5, 1, 0, 1]), (3, 4, vec![1])]
        .into_iter()
        .enumerate()
    {
        let mut rng = Rng::new(20 + seed as u64);
        let n = ids.len();
        let r = check(vec![randn(&[vocab, d], &mut rng)], &[n, d], seed as u64, |g, v| g.embedding(v[0], &ids));
        push("embedding", format!("[{vocab},{d}] ids={ids:?}"), r);
    }

    for (seed, (b, c, targets)) in [
        (2, 3, vec![0, 2]),
        (3, 5, vec![4, IGNORE_TARGET, 1]),
        (4, 24, vec![23, 0, 7, 7]),
    ]
    .into_iter()
    .enumerate()
    {
        let mut rng = Rng::new(30 + seed as u64);
        let r = grad_check(|g, v| g.cross_entropy(v[0], &targets), &[randn(&[b, c], &mut rng)], EPS, TOL).unwrap();
        push("cross_entropy", format!("[{b},{c}]"), r);
    }

    for (seed, (b, c)) in [(2, 2), (3, 3), (1, 5)].into_iter().enumerate() {
        let mut rng = Rng::new(40 + seed as u64);
        let signs: Vec<f64> = (0..b * c).map(|i| if (i + seed) % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let r = grad_check(|g, v| g.sigmoid_bce(v[0], &signs), &[randn(&[b, c], &mut rng)], EPS, TOL).unwrap();
        push("sigmoid_bce", format!("[{b},{c}]"), r);
    }

    for (seed, (shape, axis)) in [(vec![3, 4], 0), (vec![2, 3, 4], 1), (vec![4, 2, 3], 0)].into_iter().enumerate() {
        let mut rng = Rng::new(50 + seed as u64);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let x = randn(&shape, &mut rng);
        let r = check(vec![x.clone()], &out_shape, seed as u64, |g, v| g.mean_pool(v[0], axis));
        push("mean_pool", format!("{shape:?} axis={axis}"), r);
        let r = check(vec![x], &out_shape, seed as u64, |g, v| g.max_pool(v[0], axis));
        push("max_pool", format!("{shape:?} axis={axis}"), r);
    }

    for (seed, &(b, t, d, q, depth, heads)) in [(1, 3, 8, 4, 1, 2), (2, 4, 8, 2, 2, 4), (1, 5, 4, 3, 1, 1)]
        .iter()
        .enumerate()
    {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(60 + seed as u64);
        let p = Perceiver::new(&mut store, &mut rng, "p", d, heads, q, depth);
        let ids = all_ids(&store);
        let r = check_with_params(&store, &ids, randn(&[b, t, d], &mut rng), &[b, q, d], seed as u64, |g, s, x| {
            p.forward(g, s, x)
        });
        push("perceiver", format!("B={b} T={t} D={d} Q={q} depth={depth}"), r);
    }

    for (seed, &(n, d_in, d_out, rank)) in [(2, 5, 3, 2), (3, 4, 4, 1), (1, 6, 2, 3)].iter().enumerate() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(70 + seed as u64);
        let mut lin = Linear::new(&mut store, &mut rng, "lin", d_in, d_out, ParamGroup::NewInit);
        lin.attach_adapter(&mut store, &mut rng, rank, 8.0);
        let up = lin.adapter.as_ref().unwrap().up;
        store.set_value(up, randn(&[rank, d_out], &mut rng));
        let ids = all_ids(&store);
        let r = check_with_params(&store, &ids, randn(&[n, d_in], &mut rng), &[n, d_out], seed as u64, |g, s, x| {
            lin.forward(g, s, x)
        });
        push("lora_adapter", format!("[{n},{d_in}]→{d_out} r={rank}"), r);
    }

    for (seed, shape) in [vec![2, 3], vec![3, 4], vec![2, 2, 5]].into_iter().enumerate() {
        let mut rng = Rng::new(80 + seed as u64);
        let x = randn(&shape, &mut rng);
        let r = check(vec![x.clone()], &shape, seed as u64, |g, v| g.softmax(v[0]));
        push("softmax", format!("{shape:?}"), r);
        let r = check(vec![x.clone()], &shape, seed as u64, |g, v| g.gelu(v[0]));
        push("gelu", format!("{shape:?}"), r);
        let r = check(vec![x.clone()], &shape, seed as u64, |g, v| g.l2_normalize(v[0]));
        push("l2_normalize", format!("{shape:?}"), r);
        let r = check(vec![x.clone()], &shape, seed as u64, |g, v| {
            let s = g.scale(v[0], 0.3);
            g.exp(s)
        });
        push("exp", format!("{shape:?}"), r);
        let k = *shape.last().unwrap();
        let w = randn(&[k, 3], &mut rng);
        let mut mshape = shape.clone();
        *mshape.last_mut().unwrap() = 3;
        let r = check(vec![x.clone(), w], &mshape, seed as u64, |g, v| g.matmul(v[0], v[1]));
        push("matmul", format!("{shape:?}x[{k},3]"), r);
        let y = randn(&shape, &mut rng);
        let mut cshape = shape.clone();
        cshape[0] *= 2;
        let r = check(vec![x.clone(), y], &cshape, seed as u64, |g, v| g.concat(&[v[0], v[1]], 0));
        push("concat", format!("2×{shape:?}"), r);
        let mut sshape = shape.clone();
        sshape[1] -= 1;
        let r = check(vec![x], &sshape, seed as u64, |g, v| g.slice(v[0], 1, 1, shape[1] - 1));
        push("slice", format!("{shape:?}"), r);
    }
    out
}
