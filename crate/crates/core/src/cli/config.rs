//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::corpus::GeneratorSpec;
use crate::decode::{DecodeConfig, Strategy};
use crate::model::{ModelConfig, TrainConfig};
use crate::{Error, Result};

/// Every setting of a run. `seed` drives corpus generation, parameter
/// initialization and batch order; `vocab_size` is taken from the
/// vocabulary at training time.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub decode: DecodeConfig,
    pub generator: GeneratorSpec,
    pub corpus_size: usize,
    pub max_vocab: usize,
    pub train: TrainConfig,
    /// Steps between checkpoint writes; 0 writes only at the end.
    pub checkpoint_every: usize,
    pub gradcheck_threshold: f64,
    pub gradcheck_step: f64,
    pub corpus: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            model: ModelConfig::default(),
            decode: DecodeConfig::default(),
            generator: GeneratorSpec::default(),
            corpus_size: 1000,
            max_vocab: 2000,
            train: TrainConfig::default(),
            checkpoint_every: 500,
            gradcheck_threshold: 1e-4,
            gradcheck_step: 1e-3,
            corpus: None,
            gazetteer: None,
            checkpoint: None,
            output: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "seed" => {
                self.seed = parse(key, v)?;
                self.model.seed = self.seed;
                self.train.seed = self.seed;
            }
            "d_model" => self.model.d_model = parse(key, v)?,
            "n_heads" => self.model.n_heads = parse(key, v)?,
            "n_enc_layers" => self.model.n_enc_layers = parse(key, v)?,
            "n_dec_layers" => self.model.n_dec_layers = parse(key, v)?,
            "d_ff" => self.model.d_ff = parse(key, v)?,
            "e_max" => self.model.e_max = parse(key, v)?,
            "use_gr" => self.model.use_gr = parse(key, v)?,
            "beta" => self.model.beta = parse(key, v)?,
            "dropout" => self.model.dropout = parse(key, v)?,
            "max_doc_len" => self.model.max_doc_len = parse(key, v)?,
            "max_summary_len" => self.model.max_summary_len = parse(key, v)?,
            "copy_enabled" => self.model.copy_enabled = parse(key, v)?,
            "mixture_mode" => self.model.mixture_mode = parse(key, v)?,
            "init_scale" => self.model.init_scale = parse(key, v)?,
            "strategy" => self.decode.strategy = v.parse::<Strategy>()?,
            "beam_width" => self.decode.beam_width = parse(key, v)?,
            "max_steps" => self.decode.max_steps = parse(key, v)?,
            "length_penalty" => self.decode.length_penalty = parse(key, v)?,
            "corpus_size" => self.corpus_size = parse(key, v)?,
            "hallucination_rate" => self.generator.hallucination_rate = parse(key, v)?,
            "min_entities" => self.generator.min_entities = parse(key, v)?,
            "max_entities" => self.generator.max_entities = parse(key, v)?,
            "max_summary_entities" => self.generator.max_summary_entities = parse(key, v)?,
            "max_vocab" => self.max_vocab = parse(key, v)?,
            "learning_rate" => self.train.learning_rate = parse(key, v)?,
            "steps" => self.train.steps = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "grad_clip" => self.train.grad_clip = parse(key, v)?,
            "freeze_gr" => self.train.freeze_gr = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "gradcheck_threshold" => self.gradcheck_threshold = parse(key, v)?,
            "gradcheck_step" => self.gradcheck_step = parse(key, v)?,
            "corpus" => self.corpus = path(v),
            "gazetteer" => self.gazetteer = path(v),
            "checkpoint" => self.checkpoint = path(v),
            "output" => self.output = path(v),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// All keys with their current values, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let d = &self.decode;
        let g = &self.generator;
        let t = &self.train;
        let strategy = match d.strategy {
            Strategy::Greedy => "greedy",
            Strategy::Beam => "beam",
        };
        vec![
            ("seed", self.seed.to_string()),
            ("d_model", m.d_model.to_string()),
            ("n_heads", m.n_heads.to_string()),
            ("n_enc_layers", m.n_enc_layers.to_string()),
            ("n_dec_layers", m.n_dec_layers.to_string()),
            ("d_ff", m.d_ff.to_string()),
            ("e_max", m.e_max.to_string()),
            ("use_gr", m.use_gr.to_string()),
            ("beta", m.beta.to_string()),
            ("dropout", m.dropout.to_string()),
            ("max_doc_len", m.max_doc_len.to_string()),
            ("max_summary_len", m.max_summary_len.to_string()),
            ("copy_enabled", m.copy_enabled.to_string()),
            ("mixture_mode", m.mixture_mode.to_string()),
            ("init_scale", m.init_scale.to_string()),
            ("strategy", strategy.to_string()),
            ("beam_width", d.beam_width.to_string()),
            ("max_steps", d.max_steps.to_string()),
            ("length_penalty", d.length_penalty.to_string()),
            ("corpus_size", self.corpus_size.to_string()),
            ("hallucination_rate", g.hallucination_rate.to_string()),
            ("min_entities", g.min_entities.to_string()),
            ("max_entities", g.max_entities.to_string()),
            ("max_summary_entities", g.max_summary_entities.to_string()),
            ("max_vocab", self.max_vocab.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("steps", t.steps.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("grad_clip", t.grad_clip.to_string()),
            ("freeze_gr", t.freeze_gr.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("gradcheck_threshold", self.gradcheck_threshold.to_string()),
            ("gradcheck_step", self.gradcheck_step.to_string()),
            ("corpus", show_path(&self.corpus)),
            ("gazetteer", show_path(&self.gazetteer)),
            ("checkpoint", show_path(&self.checkpoint)),
            ("output", show_path(&self.output)),
        ]
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment;
    /// blank lines are ignored; repeated keys are rejected.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found {line:?}")))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(err(format!("duplicate key {k:?}")));
            }
            cfg.set(k, v.trim()).map_err(|e| err(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.decode.validate()?;
        self.train.validate()?;
        let mut m = self.model.clone();
        m.vocab_size = m.vocab_size.max(4);
        m.validate()?;
        if self.max_vocab < 4 {
            return Err(Error::Config("max_vocab must be >= 4".into()));
        }
        if !(self.gradcheck_step > 0.0) || !(self.gradcheck_threshold > 0.0) {
            return Err(Error::Config("gradcheck_step and gradcheck_threshold must be > 0".into()));
        }
        Ok(())
    }
}
