//! Greedy and beam decoding with entity span expansion.

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{detokenize, Vocabulary};
use crate::entity::AnnotatedExample;
use crate::model::{DecodeContext, SpanCopyModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Beam,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "beam" => Ok(Self::Beam),
            other => Err(Error::Config(format!("unknown decoding strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_width: usize,
    pub max_steps: usize,
    /// Exponent `α` of the emitted-token count dividing a hypothesis score.
    pub length_penalty: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            beam_width: 4,
            max_steps: 32,
            length_penalty: 1.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::Config("beam_width must be >= 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        if !(self.length_penalty >= 0.0 && self.length_penalty.is_finite()) {
            return Err(Error::Config(format!("length_penalty must be >= 0, got {}", self.length_penalty)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedSummary {
    pub tokens: Vec<String>,
    pub label_trace: Vec<usize>,
    /// Steps whose label was an entity copy.
    pub copy_positions: Vec<usize>,
    /// Length-normalized log-probability of the trace.
    pub score: f64,
}

/// Next-label distribution of a decoder plus the surface form of labels.
pub trait StepScorer {
    /// Labels `0..vocab_size()` are vocabulary entries; the rest are copies.
    fn vocab_size(&self) -> usize;
    fn num_labels(&self) -> usize;
    fn eos(&self) -> usize {
        Vocabulary::EOS
    }
    /// Natural-log probabilities of all labels after `prefix`.
    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
    /// Tokens emitted for `label`; empty for EOS.
    fn expand(&self, label: usize) -> Vec<String>;
}

/// Emitted-token count of a label sequence.
pub fn emitted_tokens<S: StepScorer + ?Sized>(scorer: &S, trace: &[usize]) -> usize {
    trace.iter().map(|&l| scorer.expand(l).len()).sum()
}

/// `logp / max(tokens, 1)^α`
pub fn normalized_score(log_prob: f64, tokens: usize, alpha: f64) -> f64 {
    log_prob / (tokens.max(1) as f64).powf(alpha)
}

/// Raw log-probability of `trace` under `scorer`.
pub fn trace_log_prob<S: StepScorer + ?Sized>(scorer: &S, trace: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..trace.len() {
        total += scorer.next_log_probs(&trace[..i])?[trace[i]];
    }
    Ok(total)
}

fn finish<S: StepScorer + ?Sized>(scorer: &S, trace: Vec<usize>, log_prob: f64, alpha: f64) -> DecodedSummary {
    let tokens: Vec<String> = trace.iter().flat_map(|&l| scorer.expand(l)).collect();
    let copy_positions = trace
        .iter()
        .enumerate()
        .filter(|(_, &l)| l >= scorer.vocab_size())
        .map(|(i, _)| i)
        .collect();
    let score = normalized_score(log_prob, tokens.len(), alpha);
    DecodedSummary {
        tokens,
        label_trace: trace,
        copy_positions,
        score,
    }
}

fn check_row(row: &[f64], width: usize) -> Result<()> {
    if row.len() != width {
        return Err(Error::Shape {
            op: "next_log_probs",
            left: vec![1, width],
            right: vec![1, row.len()],
        });
    }
    if row.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("next-label distribution contains NaN".into()));
    }
    Ok(())
}

/// Index of the largest value, lowest index on ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_decode<S: StepScorer + ?Sized>(scorer: &S, cfg: &DecodeConfig) -> Result<DecodedSummary> {
    cfg.validate()?;
    let mut trace = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..cfg.max_steps {
        let row = scorer.next_log_probs(&trace)?;
        check_row(&row, scorer.num_labels())?;
        let best = argmax(&row);
        log_prob += row[best];
        trace.push(best);
        if best == scorer.eos() {
            break;
        }
    }
    Ok(finish(scorer, trace, log_prob, cfg.length_penalty))
}

struct Hyp {
    trace: Vec<usize>,
    log_prob: f64,
}

/// Beam search over label sequences. Candidates are ranked by raw
/// log-probability (ties toward the earlier hypothesis, then the lower
/// label); complete hypotheses are compared by normalized score. The
/// greedy trace is also scored and returned if it ranks higher, so the
/// result never scores below greedy decoding.
pub fn beam_decode<S: StepScorer + ?Sized>(scorer: &S, cfg: &DecodeConfig) -> Result<DecodedSummary> {
    cfg.validate()?;
    let width = scorer.num_labels();
    let alpha = cfg.length_penalty;
    let mut alive = vec![Hyp {
        trace: Vec::new(),
        log_prob: 0.0,
    }];
    let mut done: Vec<Hyp> = Vec::new();
    for _ in 0..cfg.max_steps {
        if alive.is_empty() {
            break;
        }
        let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(alive.len() * width);
        for (h, hyp) in alive.iter().enumerate() {
            let row = scorer.next_log_probs(&hyp.trace)?;
            check_row(&row, width)?;
            cands.extend(row.iter().enumerate().map(|(l, &lp)| (hyp.log_prob + lp, h, l)));
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        cands.truncate(cfg.beam_width);
        let mut next = Vec::with_capacity(cands.len());
        for (lp, h, l) in cands {
            let mut trace = alive[h].trace.clone();
            trace.push(l);
            let hyp = Hyp { trace, log_prob: lp };
            if l == scorer.eos() {
                done.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        alive = next;
    }
    done.extend(alive);

    let score = |h: &Hyp| normalized_score(h.log_prob, emitted_tokens(scorer, &h.trace), alpha);
    let mut best: Option<(f64, Hyp)> = None;
    for h in done {
        let s = score(&h);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, h));
        }
    }
    let (best_score, best) = best.expect("beam search keeps at least one hypothesis");
    let greedy = greedy_decode(scorer, cfg)?;
    if greedy.score > best_score {
        return Ok(greedy);
    }
    Ok(finish(scorer, best.trace, best.log_prob, alpha))
}

pub fn decode<S: StepScorer + ?Sized>(scorer: &S, cfg: &DecodeConfig) -> Result<DecodedSummary> {
    match cfg.strategy {
        Strategy::Greedy => greedy_decode(scorer, cfg),
        Strategy::Beam => beam_decode(scorer, cfg),
    }
}

/// Step scorer backed by a trained model and a vocabulary.
pub struct ModelScorer<'a> {
    ctx: DecodeContext<'a>,
    vocab: &'a Vocabulary,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a SpanCopyModel, vocab: &'a Vocabulary, ex: &'a AnnotatedExample) -> Result<Self> {
        if vocab.len() != model.config().vocab_size {
            return Err(Error::Input(format!(
                "vocabulary has {} entries, model expects {}",
                vocab.len(),
                model.config().vocab_size
            )));
        }
        Ok(Self {
            ctx: model.decode_context(ex)?,
            vocab,
        })
    }
}

impl StepScorer for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.ctx.vocab_size()
    }

    fn num_labels(&self) -> usize {
        self.ctx.vocab_size() + self.ctx.num_copy_labels()
    }

    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        self.ctx.next_log_probs(prefix)
    }

    fn expand(&self, label: usize) -> Vec<String> {
        let v = self.vocab_size();
        if label == self.eos() {
            Vec::new()
        } else if label < v {
            vec![self.vocab.token(label).to_string()]
        } else {
            let ex = self.ctx.example();
            let (s, e) = ex.doc_entities.canonical_span(label - v);
            ex.tokenized.doc_tokens[s..e].to_vec()
        }
    }
}

/// Decodes one annotated document. Decoding stops after at most
/// `max_summary_len` steps of the model regardless of `cfg.max_steps`.
pub fn decode_example(
    model: &SpanCopyModel,
    vocab: &Vocabulary,
    ex: &AnnotatedExample,
    cfg: &DecodeConfig,
) -> Result<DecodedSummary> {
    let scorer = ModelScorer::new(model, vocab, ex)?;
    let cfg = DecodeConfig {
        max_steps: cfg.max_steps.min(model.config().max_summary_len),
        ..*cfg
    };
    decode(&scorer, &cfg)
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub summary: String,
    pub label_trace: Vec<usize>,
    pub copy_positions: Vec<usize>,
}

impl Prediction {
    pub fn new(id: &str, d: &DecodedSummary) -> Self {
        Self {
            id: id.to_string(),
            summary: detokenize(&d.tokens),
            label_trace: d.label_trace.clone(),
            copy_positions: d.copy_positions.clone(),
        }
    }
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut buf = Vec::new();
    for p in preds {
        serde_json::to_writer(&mut buf, p).map_err(|e| Error::Input(e.to_string()))?;
        buf.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed distributions per prefix length; labels `4..` are copies of
    /// two-token mentions.
    struct Table {
        vocab: usize,
        rows: Vec<Vec<f64>>,
    }

    impl StepScorer for Table {
        fn vocab_size(&self) -> usize {
            self.vocab
        }
        fn num_labels(&self) -> usize {
            self.rows[0].len()
        }
        fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
            let r = &self.rows[prefix.len().min(self.rows.len() - 1)];
            Ok(r.iter().map(|p| p.ln()).collect())
        }
        fn expand(&self, label: usize) -> Vec<String> {
            match label {
                l if l == Vocabulary::EOS => vec![],
                l if l < self.vocab => vec![format!("t{l}")],
                l => vec![format!("E{l}"), "x".into()],
            }
        }
    }

    #[test]
    fn copy_label_expands_to_full_mention() {
        let t = Table {
            vocab: 4,
            rows: vec![vec![0.1, 0.0, 0.1, 0.1, 0.2, 0.5], vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]],
        };
        let cfg = DecodeConfig::default();
        let d = greedy_decode(&t, &cfg).unwrap();
        assert_eq!(d.label_trace, vec![5, 2]);
        assert_eq!(d.tokens, vec!["E5", "x"]);
        assert_eq!(d.copy_positions, vec![0]);
    }

    #[test]
    fn eos_first_gives_empty_summary_and_ties_go_low() {
        let t = Table {
            vocab: 4,
            rows: vec![vec![0.0, 0.0, 1.0, 0.0]],
        };
        let d = greedy_decode(&t, &DecodeConfig::default()).unwrap();
        assert!(d.tokens.is_empty());
        assert_eq!(d.label_trace, vec![2]);

        let mut row = vec![0.01; 12];
        row[3] = 0.4;
        row[9] = 0.4;
        let t = Table { vocab: 12, rows: vec![row] };
        let cfg = DecodeConfig { max_steps: 1, ..DecodeConfig::default() };
        assert_eq!(greedy_decode(&t, &cfg).unwrap().label_trace, vec![3]);
    }

    #[test]
    fn alpha_zero_scores_raw_sum() {
        let t = Table {
            vocab: 4,
            rows: vec![vec![0.1, 0.6, 0.2, 0.1], vec![0.1, 0.1, 0.7, 0.1]],
        };
        let cfg = DecodeConfig {
            length_penalty: 0.0,
            ..DecodeConfig::default()
        };
        let d = greedy_decode(&t, &cfg).unwrap();
        assert!((d.score - (0.6f64.ln() + 0.7f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn invalid_config_rejected() {
        let t = Table { vocab: 4, rows: vec![vec![0.25; 4]] };
        for cfg in [
            DecodeConfig { beam_width: 0, ..DecodeConfig::default() },
            DecodeConfig { max_steps: 0, ..DecodeConfig::default() },
            DecodeConfig { length_penalty: -1.0, ..DecodeConfig::default() },
        ] {
            assert!(beam_decode(&t, &cfg).is_err());
        }
        assert!("sample".parse::<Strategy>().is_err());
    }
}
