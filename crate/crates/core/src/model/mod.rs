//! The span-copy summarizer.

mod config;
mod heads;
mod train;
mod transformer;

pub use config::ModelConfig;
pub use heads::{
    combine_distribution, combined_logits, copy_gate, entity_representations, global_relevance,
    global_relevance_logits, loss_l1, loss_l1_from_probs, loss_l2, mixture_distribution, span_copier,
    ScorerWeights,
};
pub use train::{TrainConfig, TrainStats, Trainer, GR_FROZEN_BIAS};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{log_sum_exp, Graph, NodeId, ParamSet, Tensor};
use crate::entity::AnnotatedExample;
use crate::{Error, Result};
use transformer::{Dropout, Weights};

/// Overrides used by tests and by the no-copy baseline.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardOptions {
    /// Pins every gate output to this value.
    pub gate_override: Option<f64>,
    /// Replaces the relevance prior (length `|E|`).
    pub gr_override: Option<Vec<f64>>,
}

/// Values of one teacher-forced forward pass over `m` decoder steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `[m×|V|]`
    pub o_g: Tensor,
    /// `[m×|E|]`, zero columns when the document has no entities or the
    /// copier is disabled.
    pub o_c: Tensor,
    pub p_copy: Vec<f64>,
    /// All ones when the relevance prior is off.
    pub gr: Vec<f64>,
    /// `[m×(|V|+|E|)]`
    pub p_final: Tensor,
}

pub(crate) struct Bound<'a> {
    params: &'a ParamSet,
    ids: &'a [NodeId],
}

impl Weights for Bound<'_> {
    fn w(&self, name: &str) -> NodeId {
        let i = self
            .params
            .position(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from a validated set"));
        self.ids[i]
    }
}

pub(crate) struct HeadNodes {
    pub o_g: NodeId,
    pub o_c: Option<NodeId>,
    pub p_copy: NodeId,
    pub gr: Option<NodeId>,
    pub gr_logits: Option<NodeId>,
    /// Combined logits, or probabilities in mixture mode.
    pub z: NodeId,
}

#[derive(Debug, Clone)]
pub struct SpanCopyModel {
    config: ModelConfig,
    params: ParamSet,
}

impl SpanCopyModel {
    /// Seeded initialization: layer-norm gains 1, biases 0, every other
    /// tensor uniform in `±init_scale`, drawn in layout order.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let a = config.init_scale;
        let mut params = ParamSet::new();
        for (name, r, c) in transformer::layout(&config) {
            let t = if name.ends_with(".g") {
                Tensor::full(r, c, 1.0)
            } else if is_bias(&name) {
                Tensor::zeros(r, c)
            } else {
                let data = (0..r * c).map(|_| rng.gen_range(-a..=a)).collect();
                Tensor::matrix(r, c, data)?
            };
            params.insert(name, t);
        }
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let layout = transformer::layout(&config);
        if layout.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, r, c), (have, t)) in layout.iter().zip(params.names().iter().zip(params.tensors())) {
            if name != have || t.shape() != [*r, *c] {
                return Err(Error::Checkpoint(format!(
                    "tensor {have} {:?} does not match expected {name} [{r}, {c}]",
                    t.shape()
                )));
            }
        }
        if !params.all_finite() {
            return Err(Error::NonFinite("checkpoint holds non-finite values".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Label sequence the model is trained to emit for `ex`.
    pub fn targets<'a>(&self, ex: &'a AnnotatedExample) -> &'a [usize] {
        if self.config.copy_enabled {
            &ex.copy_targets
        } else {
            &ex.tokenized.summary_ids
        }
    }

    /// Number of entity labels the model exposes for `ex`.
    pub fn num_copy_labels(&self, ex: &AnnotatedExample) -> usize {
        if self.config.copy_enabled {
            ex.num_entities()
        } else {
            0
        }
    }

    fn check_example(&self, ex: &AnnotatedExample) -> Result<()> {
        let cfg = &self.config;
        if ex.vocab_size != cfg.vocab_size {
            return Err(Error::Input(format!(
                "example {} was annotated with |V| = {}, model has {}",
                ex.id(),
                ex.vocab_size,
                cfg.vocab_size
            )));
        }
        let n = ex.tokenized.doc_ids.len();
        if n == 0 || n > cfg.max_doc_len {
            return Err(Error::Input(format!(
                "example {}: document length {n} outside 1..={}",
                ex.id(),
                cfg.max_doc_len
            )));
        }
        let width = cfg.vocab_size + self.num_copy_labels(ex);
        let targets = self.targets(ex);
        if targets.is_empty() || targets.len() > cfg.max_summary_len {
            return Err(Error::Input(format!(
                "example {}: target length {} outside 1..={}",
                ex.id(),
                targets.len(),
                cfg.max_summary_len
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= width) {
            return Err(Error::LabelRange { label: t, width });
        }
        Ok(())
    }

    /// Token-embedding rows averaged to form the decoder input after `label`.
    pub(crate) fn feedback_group(&self, ex: &AnnotatedExample, label: usize) -> Result<Vec<usize>> {
        let v = self.config.vocab_size;
        if label < v {
            Ok(vec![label])
        } else if label - v < self.num_copy_labels(ex) {
            Ok(ex.entity_token_ids(label - v).to_vec())
        } else {
            Err(Error::LabelRange {
                label,
                width: v + self.num_copy_labels(ex),
            })
        }
    }

    /// Decoder inputs for a label prefix: BOS followed by the feedback of
    /// every label.
    pub(crate) fn decoder_inputs(&self, ex: &AnnotatedExample, prefix: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut groups = Vec::with_capacity(prefix.len() + 1);
        groups.push(vec![crate::corpus::Vocabulary::BOS]);
        for &t in prefix {
            groups.push(self.feedback_group(ex, t)?);
        }
        Ok(groups)
    }

    pub(crate) fn heads(
        &self,
        g: &mut Graph,
        w: &impl Weights,
        h_d: NodeId,
        memory: NodeId,
        ex: &AnnotatedExample,
        opts: &ForwardOptions,
    ) -> Result<HeadNodes> {
        let cfg = &self.config;
        let m = g.value(h_d).rows();
        let o_g = g.matmul(h_d, w.w("gen.w"))?;
        let o_g = g.add(o_g, w.w("gen.b"))?;

        let scorer = |p: &str| ScorerWeights {
            w1: w.w(&format!("{p}.w1")),
            b1: w.w(&format!("{p}.b1")),
            w2: w.w(&format!("{p}.w2")),
            b2: w.w(&format!("{p}.b2")),
        };
        let n_e = self.num_copy_labels(ex);
        let e = if n_e > 0 {
            Some(entity_representations(g, memory, &ex.doc_entities)?)
        } else {
            None
        };
        let o_c = match e {
            Some(e) => Some(span_copier(g, h_d, e, w.w("copy.q"), w.w("copy.k"))?),
            None => None,
        };
        let p_copy = match (cfg.copy_enabled, opts.gate_override) {
            (_, Some(v)) => g.constant(Tensor::full(m, 1, v)),
            (false, None) => g.constant(Tensor::zeros(m, 1)),
            (true, None) => copy_gate(g, h_d, &scorer("gate"))?,
        };
        let gr_logits = match e {
            Some(e) if cfg.use_gr => Some(global_relevance_logits(g, e, &scorer("gr"))?),
            _ => None,
        };
        let gr = match (&opts.gr_override, gr_logits) {
            (Some(v), _) if n_e > 0 => {
                if v.len() != n_e {
                    return Err(Error::Shape {
                        op: "gr_override",
                        left: vec![1, n_e],
                        right: vec![1, v.len()],
                    });
                }
                Some(g.constant(Tensor::matrix(1, n_e, v.clone())?))
            }
            (_, Some(l)) => Some(g.sigmoid(l)?),
            _ => None,
        };
        let z = if cfg.mixture_mode {
            mixture_distribution(g, o_g, o_c, p_copy, gr)?
        } else {
            combined_logits(g, o_g, o_c, p_copy, gr)?
        };
        Ok(HeadNodes {
            o_g,
            o_c,
            p_copy,
            gr,
            gr_logits,
            z,
        })
    }

    fn build(
        &self,
        g: &mut Graph,
        w: &impl Weights,
        ex: &AnnotatedExample,
        opts: &ForwardOptions,
        drop: &mut Dropout,
    ) -> Result<HeadNodes> {
        self.check_example(ex)?;
        let targets = self.targets(ex);
        let memory = transformer::encoder(g, w, &self.config, &ex.tokenized.doc_ids, drop)?;
        let inputs = self.decoder_inputs(ex, &targets[..targets.len() - 1])?;
        let h_d = transformer::decoder(g, w, &self.config, inputs, memory, drop)?;
        self.heads(g, w, h_d, memory, ex, opts)
    }

    /// Training objective: `L1`, or `L2` when the relevance prior is on.
    fn objective(&self, g: &mut Graph, h: &HeadNodes, ex: &AnnotatedExample) -> Result<NodeId> {
        let targets = self.targets(ex);
        let l1 = if self.config.mixture_mode {
            g.nll_probs(h.z, targets)?
        } else {
            loss_l1(g, h.z, targets)?
        };
        if !self.config.use_gr {
            return Ok(l1);
        }
        let labels: &[u8] = if h.gr_logits.is_some() { &ex.gr_labels } else { &[] };
        loss_l2(g, l1, h.gr_logits, labels, self.config.beta)
    }

    /// Builds the loss of `ex` on `g` with parameters already bound to
    /// `bound` (in parameter order). Dropout is off.
    pub fn graph_loss(&self, g: &mut Graph, bound: &[NodeId], ex: &AnnotatedExample) -> Result<NodeId> {
        let w = Bound {
            params: &self.params,
            ids: bound,
        };
        let mut drop = Dropout { rate: 0.0, rng: None };
        let h = self.build(g, &w, ex, &ForwardOptions::default(), &mut drop)?;
        self.objective(g, &h, ex)
    }

    pub fn forward(&self, ex: &AnnotatedExample, opts: &ForwardOptions) -> Result<ForwardOutput> {
        let mut g = Graph::new();
        let ids = self.params.bind(&mut g);
        let w = Bound {
            params: &self.params,
            ids: &ids,
        };
        let mut drop = Dropout { rate: 0.0, rng: None };
        let h = self.build(&mut g, &w, ex, opts, &mut drop)?;
        let m = g.value(h.o_g).rows();
        let p_final = if self.config.mixture_mode {
            g.value(h.z).clone()
        } else {
            let p = g.softmax(h.z)?;
            g.value(p).clone()
        };
        let n_e = self.num_copy_labels(ex);
        Ok(ForwardOutput {
            o_g: g.value(h.o_g).clone(),
            o_c: h.o_c.map_or_else(|| Tensor::zeros(m, 0), |n| g.value(n).clone()),
            p_copy: g.value(h.p_copy).data().to_vec(),
            gr: h.gr.map_or_else(|| vec![1.0; n_e], |n| g.value(n).data().to_vec()),
            p_final,
        })
    }

    /// Loss of one example with dropout off.
    pub fn loss(&self, ex: &AnnotatedExample) -> Result<f64> {
        let mut g = Graph::new();
        let ids = self.params.bind(&mut g);
        let l = self.graph_loss(&mut g, &ids, ex)?;
        Ok(g.value(l).data()[0])
    }

    /// Mean loss over a batch and its gradient for every parameter, built
    /// as a single graph.
    pub fn batch_gradients(
        &self,
        batch: &[&AnnotatedExample],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<Tensor>)> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let mut g = Graph::new();
        let ids = self.params.bind(&mut g);
        let w = Bound {
            params: &self.params,
            ids: &ids,
        };
        let mut drop = Dropout {
            rate: self.config.dropout,
            rng: dropout_rng,
        };
        let mut losses = Vec::with_capacity(batch.len());
        for ex in batch {
            let h = self.build(&mut g, &w, ex, &ForwardOptions::default(), &mut drop)?;
            losses.push(self.objective(&mut g, &h, ex)?);
        }
        let total = if losses.len() == 1 { losses[0] } else { g.concat(&losses)? };
        let total = g.sum(total)?;
        let mean = g.scale(total, 1.0 / batch.len() as f64)?;
        let loss = g.value(mean).data()[0];
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("batch loss is {loss}")));
        }
        let mut grads = g.backward(mean)?;
        let out = ids
            .iter()
            .zip(self.params.tensors())
            .map(|(&id, t)| {
                grads
                    .take(id)
                    .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
            })
            .collect();
        Ok((loss, out))
    }

    /// Encoder states `[n×d_model]` of a document, dropout off.
    pub fn encode(&self, doc_ids: &[usize]) -> Result<Tensor> {
        let n = doc_ids.len();
        if n == 0 || n > self.config.max_doc_len {
            return Err(Error::Input(format!(
                "document length {n} outside 1..={}",
                self.config.max_doc_len
            )));
        }
        if let Some(&t) = doc_ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::LabelRange {
                label: t,
                width: self.config.vocab_size,
            });
        }
        let mut g = Graph::new();
        let ids = self.params.bind(&mut g);
        let w = Bound {
            params: &self.params,
            ids: &ids,
        };
        let mut drop = Dropout { rate: 0.0, rng: None };
        let mem = transformer::encoder(&mut g, &w, &self.config, doc_ids, &mut drop)?;
        Ok(g.value(mem).clone())
    }

    /// Encodes a document once for step-wise decoding.
    pub fn decode_context<'a>(&'a self, ex: &'a AnnotatedExample) -> Result<DecodeContext<'a>> {
        if ex.vocab_size != self.config.vocab_size {
            return Err(Error::Input(format!(
                "example {} was annotated with |V| = {}, model has {}",
                ex.id(),
                ex.vocab_size,
                self.config.vocab_size
            )));
        }
        Ok(DecodeContext {
            model: self,
            ex,
            memory: self.encode(&ex.tokenized.doc_ids)?,
        })
    }
}

fn is_bias(name: &str) -> bool {
    [".b", ".b1", ".b2", ".bo"].iter().any(|s| name.ends_with(s))
}

/// A document encoded once, scoring the next label for any prefix.
pub struct DecodeContext<'a> {
    model: &'a SpanCopyModel,
    ex: &'a AnnotatedExample,
    memory: Tensor,
}

impl DecodeContext<'_> {
    pub fn example(&self) -> &AnnotatedExample {
        self.ex
    }

    pub fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    pub fn num_copy_labels(&self) -> usize {
        self.model.num_copy_labels(self.ex)
    }

    /// Natural-log probabilities of every label at the step after `prefix`.
    pub fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let model = self.model;
        let mut g = Graph::new();
        let ids = model.params.bind(&mut g);
        let w = Bound {
            params: &model.params,
            ids: &ids,
        };
        let mut drop = Dropout { rate: 0.0, rng: None };
        let memory = g.constant(self.memory.clone());
        let inputs = model.decoder_inputs(self.ex, prefix)?;
        let h_d = transformer::decoder(&mut g, &w, &model.config, inputs, memory, &mut drop)?;
        let h = model.heads(&mut g, &w, h_d, memory, self.ex, &ForwardOptions::default())?;
        let z = g.value(h.z);
        let row = z.row(z.rows() - 1);
        if model.config.mixture_mode {
            Ok(row.iter().map(|p| p.ln()).collect())
        } else {
            let lse = log_sum_exp(row);
            Ok(row.iter().map(|x| x - lse).collect())
        }
    }
}

