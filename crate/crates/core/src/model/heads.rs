//! The span-copy heads and objectives as graph functions.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::entity::EntityTable;
use crate::{Error, Result};

/// Weights of a `d → d (tanh) → 1` scorer. `w2` is stored as a `[1×d]` row.
#[derive(Debug, Clone, Copy)]
pub struct ScorerWeights {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

fn scorer_hidden(g: &mut Graph, x: NodeId, w: &ScorerWeights) -> Result<NodeId> {
    let h = g.matmul(x, w.w1)?;
    let h = g.add(h, w.b1)?;
    g.tanh(h)
}

/// Mean of the encoder states over each entity's canonical span.
pub fn entity_representations(g: &mut Graph, encoder_states: NodeId, doc: &EntityTable) -> Result<NodeId> {
    let spans = (0..doc.num_entities())
        .map(|e| {
            let (s, t) = doc.canonical_span(e);
            (s..t).collect()
        })
        .collect();
    g.row_mean(encoder_states, spans)
}

/// Copy logits `o_c[i][j] = (h_d[i] · Q) · (e[j] · K)`, unscaled.
pub fn span_copier(g: &mut Graph, h_d: NodeId, e: NodeId, q: NodeId, k: NodeId) -> Result<NodeId> {
    let qh = g.matmul(h_d, q)?;
    let ke = g.matmul(e, k)?;
    g.matmul_bt(qh, ke)
}

/// Per-step copy probability `[m×1]`.
pub fn copy_gate(g: &mut Graph, h_d: NodeId, w: &ScorerWeights) -> Result<NodeId> {
    let h = scorer_hidden(g, h_d, w)?;
    let s = g.matmul_bt(h, w.w2)?;
    let s = g.add(s, w.b2)?;
    g.sigmoid(s)
}

/// Relevance logits of the entities as a `[1×|E|]` row.
pub fn global_relevance_logits(g: &mut Graph, e: NodeId, w: &ScorerWeights) -> Result<NodeId> {
    let h = scorer_hidden(g, e, w)?;
    let s = g.matmul_bt(w.w2, h)?;
    g.add(s, w.b2)
}

/// Per-entity relevance prior `[1×|E|]`.
pub fn global_relevance(g: &mut Graph, e: NodeId, w: &ScorerWeights) -> Result<NodeId> {
    let s = global_relevance_logits(g, e, w)?;
    g.sigmoid(s)
}

/// Combined logits `[(1 − p)·o_g, p·o_c·gr]`; a missing `o_c` means an
/// empty entity block and a missing `gr` means no prior.
pub fn combined_logits(
    g: &mut Graph,
    o_g: NodeId,
    o_c: Option<NodeId>,
    p_copy: NodeId,
    gr: Option<NodeId>,
) -> Result<NodeId> {
    let keep = g.affine(p_copy, -1.0, 1.0)?;
    let gen = g.mul(o_g, keep)?;
    let Some(o_c) = o_c else { return Ok(gen) };
    let mut copy = g.mul(o_c, p_copy)?;
    if let Some(gr) = gr {
        copy = g.mul(copy, gr)?;
    }
    g.concat(&[gen, copy])
}

/// Final distribution: softmax over the combined logits.
pub fn combine_distribution(
    g: &mut Graph,
    o_g: NodeId,
    o_c: Option<NodeId>,
    p_copy: NodeId,
    gr: Option<NodeId>,
) -> Result<NodeId> {
    let z = combined_logits(g, o_g, o_c, p_copy, gr)?;
    g.softmax(z)
}

/// Probability-level alternative: `[(1 − p)·softmax(o_g), p·softmax(o_c·gr)]`.
pub fn mixture_distribution(
    g: &mut Graph,
    o_g: NodeId,
    o_c: Option<NodeId>,
    p_copy: NodeId,
    gr: Option<NodeId>,
) -> Result<NodeId> {
    let pg = g.softmax(o_g)?;
    let Some(o_c) = o_c else { return Ok(pg) };
    let keep = g.affine(p_copy, -1.0, 1.0)?;
    let gen = g.mul(pg, keep)?;
    let c = match gr {
        Some(gr) => g.mul(o_c, gr)?,
        None => o_c,
    };
    let pc = g.softmax(c)?;
    let copy = g.mul(pc, p_copy)?;
    g.concat(&[gen, copy])
}

/// Mean per-step cross-entropy from combined logits.
pub fn loss_l1(g: &mut Graph, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
    g.cross_entropy(logits, targets)
}

/// `(1 − β)·L1 + β·L_gr` with `L_gr` the mean binary cross-entropy of the
/// relevance prior. Without entities `L_gr` is taken as 0.
pub fn loss_l2(
    g: &mut Graph,
    l1: NodeId,
    gr_logits: Option<NodeId>,
    gr_labels: &[u8],
    beta: f64,
) -> Result<NodeId> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta must lie in [0, 1], got {beta}")));
    }
    let a = g.scale(l1, 1.0 - beta)?;
    let Some(gl) = gr_logits else {
        if !gr_labels.is_empty() {
            return Err(Error::Input("relevance labels given without relevance logits".into()));
        }
        let zero = g.constant(Tensor::scalar(0.0));
        return g.add(a, zero);
    };
    let labels: Vec<f64> = gr_labels.iter().map(|&y| f64::from(y)).collect();
    if labels.len() != g.value(gl).len() {
        return Err(Error::Shape {
            op: "loss_l2",
            left: g.value(gl).shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    let lgr = g.bce_with_logits(gl, &labels)?;
    let b = g.scale(lgr, beta)?;
    g.add(a, b)
}

/// `mean_i −ln p_final[i][t_i]` over a probability matrix.
pub fn loss_l1_from_probs(p_final: &Tensor, targets: &[usize]) -> Result<f64> {
    let (rows, cols) = p_final.dims2()?;
    if rows != targets.len() || rows == 0 {
        return Err(Error::Shape {
            op: "loss_l1",
            left: vec![rows, cols],
            right: vec![targets.len()],
        });
    }
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t >= cols {
            return Err(Error::LabelRange { label: t, width: cols });
        }
        total -= p_final.get(r, t).ln();
    }
    Ok(total / rows as f64)
}
