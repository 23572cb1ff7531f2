//! Pre-norm transformer encoder and decoder stacks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::Result;

use super::ModelConfig;

pub(crate) const LN_EPS: f64 = 1e-5;
const MASKED: f64 = -1e9;

/// Resolves parameter names to bound graph nodes.
pub(crate) trait Weights {
    fn w(&self, name: &str) -> NodeId;
}

/// Inverted dropout driven by an explicit generator; `None` disables it.
pub(crate) struct Dropout<'a> {
    pub rate: f64,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl Dropout<'_> {
    pub fn apply(&mut self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let Some(rng) = self.rng.as_deref_mut() else { return Ok(x) };
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let (r, c) = g.value(x).dims2()?;
        let keep = 1.0 / (1.0 - self.rate);
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if rng.gen::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        let m = g.constant(Tensor::matrix(r, c, mask)?);
        g.mul(x, m)
    }
}

pub(crate) fn layer_norm(g: &mut Graph, w: &impl Weights, x: NodeId, prefix: &str) -> Result<NodeId> {
    let n = g.layer_norm(x, LN_EPS)?;
    let n = g.mul(n, w.w(&format!("{prefix}.g")))?;
    g.add(n, w.w(&format!("{prefix}.b")))
}

fn causal_mask(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            data[i * n + j] = MASKED;
        }
    }
    Tensor::from_raw(vec![n, n], data)
}

/// Multi-head scaled dot-product attention from `x` over `memory`.
pub(crate) fn attention(
    g: &mut Graph,
    w: &impl Weights,
    cfg: &ModelConfig,
    x: NodeId,
    memory: NodeId,
    prefix: &str,
    causal: bool,
) -> Result<NodeId> {
    let inv = 1.0 / (cfg.head_dim() as f64).sqrt();
    let mask = if causal {
        let n = g.value(x).rows();
        Some(g.constant(causal_mask(n)))
    } else {
        None
    };
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let q = g.matmul(x, w.w(&format!("{prefix}.h{h}.wq")))?;
        let k = g.matmul(memory, w.w(&format!("{prefix}.h{h}.wk")))?;
        let v = g.matmul(memory, w.w(&format!("{prefix}.h{h}.wv")))?;
        let s = g.matmul_bt(q, k)?;
        let mut s = g.scale(s, inv)?;
        if let Some(m) = mask {
            s = g.add(s, m)?;
        }
        let a = g.softmax(s)?;
        heads.push(g.matmul(a, v)?);
    }
    let cat = if heads.len() == 1 { heads[0] } else { g.concat(&heads)? };
    let o = g.matmul(cat, w.w(&format!("{prefix}.wo")))?;
    g.add(o, w.w(&format!("{prefix}.bo")))
}

fn feed_forward(g: &mut Graph, w: &impl Weights, x: NodeId, prefix: &str) -> Result<NodeId> {
    let h = g.matmul(x, w.w(&format!("{prefix}.w1")))?;
    let h = g.add(h, w.w(&format!("{prefix}.b1")))?;
    let h = g.tanh(h)?;
    let o = g.matmul(h, w.w(&format!("{prefix}.w2")))?;
    g.add(o, w.w(&format!("{prefix}.b2")))
}

/// Token plus positional embeddings. Each input row is the mean of the
/// listed token-embedding rows.
pub(crate) fn embed(g: &mut Graph, w: &impl Weights, groups: Vec<Vec<usize>>, drop: &mut Dropout) -> Result<NodeId> {
    let n = groups.len();
    let tok = g.row_mean(w.w("tok_emb"), groups)?;
    let pos = g.embedding(w.w("pos_emb"), &(0..n).collect::<Vec<_>>())?;
    let x = g.add(tok, pos)?;
    drop.apply(g, x)
}

pub(crate) fn encoder(
    g: &mut Graph,
    w: &impl Weights,
    cfg: &ModelConfig,
    doc_ids: &[usize],
    drop: &mut Dropout,
) -> Result<NodeId> {
    let mut x = embed(g, w, doc_ids.iter().map(|&t| vec![t]).collect(), drop)?;
    for l in 0..cfg.n_enc_layers {
        let p = format!("enc.{l}");
        let n = layer_norm(g, w, x, &format!("{p}.ln1"))?;
        let a = attention(g, w, cfg, n, n, &format!("{p}.attn"), false)?;
        let a = drop.apply(g, a)?;
        x = g.add(x, a)?;
        let n = layer_norm(g, w, x, &format!("{p}.ln2"))?;
        let f = feed_forward(g, w, n, &format!("{p}.ff"))?;
        let f = drop.apply(g, f)?;
        x = g.add(x, f)?;
    }
    layer_norm(g, w, x, "enc.ln")
}

pub(crate) fn decoder(
    g: &mut Graph,
    w: &impl Weights,
    cfg: &ModelConfig,
    input_groups: Vec<Vec<usize>>,
    memory: NodeId,
    drop: &mut Dropout,
) -> Result<NodeId> {
    let mut x = embed(g, w, input_groups, drop)?;
    for l in 0..cfg.n_dec_layers {
        let p = format!("dec.{l}");
        let n = layer_norm(g, w, x, &format!("{p}.ln1"))?;
        let a = attention(g, w, cfg, n, n, &format!("{p}.self"), true)?;
        let a = drop.apply(g, a)?;
        x = g.add(x, a)?;
        let n = layer_norm(g, w, x, &format!("{p}.ln2"))?;
        let a = attention(g, w, cfg, n, memory, &format!("{p}.cross"), false)?;
        let a = drop.apply(g, a)?;
        x = g.add(x, a)?;
        let n = layer_norm(g, w, x, &format!("{p}.ln3"))?;
        let f = feed_forward(g, w, n, &format!("{p}.ff"))?;
        let f = drop.apply(g, f)?;
        x = g.add(x, f)?;
    }
    layer_norm(g, w, x, "dec.ln")
}

/// Parameter names and shapes in initialization order.
pub(crate) fn layout(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
    let (d, dh, ff, v) = (cfg.d_model, cfg.head_dim(), cfg.d_ff, cfg.vocab_size);
    let mut out: Vec<(String, usize, usize)> = Vec::new();
    let mut push = |name: String, r: usize, c: usize| out.push((name, r, c));
    push("tok_emb".into(), v, d);
    push("pos_emb".into(), cfg.max_positions(), d);
    let ln = |push: &mut dyn FnMut(String, usize, usize), p: String| {
        push(format!("{p}.g"), 1, d);
        push(format!("{p}.b"), 1, d);
    };
    let attn = |push: &mut dyn FnMut(String, usize, usize), p: String| {
        for h in 0..cfg.n_heads {
            push(format!("{p}.h{h}.wq"), d, dh);
            push(format!("{p}.h{h}.wk"), d, dh);
            push(format!("{p}.h{h}.wv"), d, dh);
        }
        push(format!("{p}.wo"), d, d);
        push(format!("{p}.bo"), 1, d);
    };
    let ffn = |push: &mut dyn FnMut(String, usize, usize), p: String| {
        push(format!("{p}.w1"), d, ff);
        push(format!("{p}.b1"), 1, ff);
        push(format!("{p}.w2"), ff, d);
        push(format!("{p}.b2"), 1, d);
    };
    for l in 0..cfg.n_enc_layers {
        ln(&mut push, format!("enc.{l}.ln1"));
        attn(&mut push, format!("enc.{l}.attn"));
        ln(&mut push, format!("enc.{l}.ln2"));
        ffn(&mut push, format!("enc.{l}.ff"));
    }
    ln(&mut push, "enc.ln".into());
    for l in 0..cfg.n_dec_layers {
        ln(&mut push, format!("dec.{l}.ln1"));
        attn(&mut push, format!("dec.{l}.self"));
        ln(&mut push, format!("dec.{l}.ln2"));
        attn(&mut push, format!("dec.{l}.cross"));
        ln(&mut push, format!("dec.{l}.ln3"));
        ffn(&mut push, format!("dec.{l}.ff"));
    }
    ln(&mut push, "dec.ln".into());
    push("gen.w".into(), d, v);
    push("gen.b".into(), 1, v);
    push("copy.q".into(), d, d);
    push("copy.k".into(), d, d);
    for p in ["gate", "gr"] {
        push(format!("{p}.w1"), d, d);
        push(format!("{p}.b1"), 1, d);
        push(format!("{p}.w2"), 1, d);
        push(format!("{p}.b2"), 1, 1);
    }
    out
}
