//! Mini-batch gradient descent with global-norm clipping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::entity::AnnotatedExample;
use crate::{Error, Result};

use super::SpanCopyModel;

/// Output bias that saturates a zero-weight relevance scorer to exactly 1.
pub const GR_FROZEN_BIAS: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Maximum global gradient norm; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    /// Pins the relevance scorer to an all-ones output and excludes it
    /// from updates.
    pub freeze_gr: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            steps: 1000,
            batch_size: 8,
            grad_clip: 1.0,
            seed: 1,
            freeze_gr: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config(format!("grad_clip must be >= 0, got {}", self.grad_clip)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

pub struct Trainer {
    model: SpanCopyModel,
    cfg: TrainConfig,
    order_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
    trainable: Vec<bool>,
}

impl Trainer {
    pub fn new(mut model: SpanCopyModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut trainable = vec![true; model.params().len()];
        if cfg.freeze_gr {
            for (i, name) in model.params().names().to_vec().iter().enumerate() {
                if let Some(suffix) = name.strip_prefix("gr.") {
                    trainable[i] = false;
                    let t = model.params_mut().get_mut(name).expect("name from the same set");
                    let fill = if suffix == "b2" { GR_FROZEN_BIAS } else { 0.0 };
                    t.data_mut().iter_mut().for_each(|v| *v = fill);
                }
            }
        }
        Ok(Self {
            model,
            order_rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            dropout_rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15)),
            cfg,
            order: Vec::new(),
            cursor: 0,
            step: 0,
            trainable,
        })
    }

    pub fn model(&self) -> &SpanCopyModel {
        &self.model
    }

    pub fn into_model(self) -> SpanCopyModel {
        self.model
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.cfg.batch_size);
        while out.len() < self.cfg.batch_size.min(n) {
            if self.cursor == self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.order_rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    /// One update. Parameters are left untouched when the loss or the
    /// gradient is not finite.
    pub fn step(&mut self, data: &[AnnotatedExample]) -> Result<TrainStats> {
        if data.is_empty() {
            return Err(Error::Input("training set is empty".into()));
        }
        let idx = self.next_batch(data.len());
        let batch: Vec<&AnnotatedExample> = idx.iter().map(|&i| &data[i]).collect();
        let (loss, grads) = self.model.batch_gradients(&batch, Some(&mut self.dropout_rng))?;
        let sq: f64 = grads
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &t)| t)
            .map(|(g, _)| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum();
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm is {norm} at step {}", self.step + 1)));
        }
        let clip = if self.cfg.grad_clip > 0.0 && norm > self.cfg.grad_clip {
            self.cfg.grad_clip / norm
        } else {
            1.0
        };
        let lr = self.cfg.learning_rate * clip;
        let trainable = &self.trainable;
        for ((p, g), &t) in self.model.params_mut().tensors_mut().iter_mut().zip(&grads).zip(trainable) {
            if t {
                sgd(p, g, lr);
            }
        }
        if !self.model.params().all_finite() {
            return Err(Error::NonFinite(format!("parameters diverged at step {}", self.step + 1)));
        }
        self.step += 1;
        Ok(TrainStats {
            step: self.step,
            loss,
            grad_norm: norm,
        })
    }
}

fn sgd(p: &mut Tensor, g: &Tensor, lr: f64) {
    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
        *x -= lr * d;
    }
}
