//! Python bindings for the span-copy summarizer.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use spancopy_core::autodiff::{grad_check_with, Stencil};
use spancopy_core::corpus::{self, GeneratorSpec, RawExample};
use spancopy_core::decode::{decode_example, DecodeConfig, Strategy};
use spancopy_core::entity::{self, AnnotateOptions, Gazetteer};
use spancopy_core::metrics;
use spancopy_core::model::{self, ForwardOptions, ModelConfig, TrainConfig};
use spancopy_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::NonFinite(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Converts a serializable value to plain Python objects via `json`.
fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn gazetteer(path: Option<PathBuf>) -> PyResult<Gazetteer> {
    match path {
        Some(p) => Gazetteer::load(&p).map_err(err),
        None => Ok(Gazetteer::bundled()),
    }
}

#[pyclass(frozen)]
struct Vocabulary {
    inner: corpus::Vocabulary,
}

#[pymethods]
impl Vocabulary {
    #[new]
    fn new(tokens: Vec<String>) -> PyResult<Self> {
        corpus::Vocabulary::from_tokens(tokens).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        corpus::Vocabulary::load(&path).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (examples, max_size = 2000))]
    fn build(examples: Vec<PyRef<'_, Example>>, max_size: usize) -> PyResult<Self> {
        let raw: Vec<RawExample> = examples.iter().map(|e| e.inner.clone()).collect();
        corpus::build_vocabulary(&raw, max_size).map(|inner| Self { inner }).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn id(&self, token: &str) -> usize {
        self.inner.id(token)
    }

    fn token(&self, id: usize) -> PyResult<String> {
        if id >= self.inner.len() {
            return Err(PyValueError::new_err(format!("id {id} outside vocabulary")));
        }
        Ok(self.inner.token(id).to_string())
    }

    fn tokens(&self) -> Vec<String> {
        self.inner.tokens().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// A raw document/summary pair.
#[pyclass(frozen, name = "RawExample")]
struct Example {
    inner: RawExample,
}

#[pymethods]
impl Example {
    #[new]
    fn new(id: String, document: String, summary: String) -> Self {
        Self {
            inner: RawExample { id, document, summary },
        }
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn document(&self) -> &str {
        &self.inner.document
    }

    #[getter]
    fn summary(&self) -> &str {
        &self.inner.summary
    }

    fn __repr__(&self) -> String {
        format!("RawExample(id={:?})", self.inner.id)
    }
}

#[pyclass(frozen)]
struct AnnotatedExample {
    inner: entity::AnnotatedExample,
}

fn mentions(t: &entity::EntityTable) -> Vec<(usize, usize, String, String)> {
    t.mentions()
        .iter()
        .map(|m| (m.start, m.end, m.kind.as_str().to_string(), m.surface.clone()))
        .collect()
}

#[pymethods]
impl AnnotatedExample {
    #[staticmethod]
    fn from_json(line: &str) -> PyResult<Self> {
        entity::AnnotatedExample::from_json_line(line)
            .map(|inner| Self { inner })
            .map_err(PyValueError::new_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json_line()
    }

    #[getter]
    fn id(&self) -> &str {
        self.inner.id()
    }

    #[getter]
    fn doc_tokens(&self) -> Vec<String> {
        self.inner.tokenized.doc_tokens.clone()
    }

    #[getter]
    fn summary_tokens(&self) -> Vec<String> {
        self.inner.tokenized.summary_tokens.clone()
    }

    /// `(start, end, kind, surface)` for each document mention.
    #[getter]
    fn doc_entities(&self) -> Vec<(usize, usize, String, String)> {
        mentions(&self.inner.doc_entities)
    }

    #[getter]
    fn summary_entities(&self) -> Vec<(usize, usize, String, String)> {
        mentions(&self.inner.summary_entities)
    }

    #[getter]
    fn num_entities(&self) -> usize {
        self.inner.num_entities()
    }

    #[getter]
    fn copy_targets(&self) -> Vec<usize> {
        self.inner.copy_targets.clone()
    }

    #[getter]
    fn gr_labels(&self) -> Vec<u8> {
        self.inner.gr_labels.clone()
    }

    /// Ground-truth source precision in `[0, 100]`.
    fn src_p_gt(&self) -> f64 {
        corpus::ground_truth_src_p(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "AnnotatedExample(id={:?}, entities={})",
            self.inner.id(),
            self.inner.num_entities()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (seed, size, hallucination_rate = 0.0, gazetteer_path = None))]
fn generate_corpus(
    seed: u64,
    size: usize,
    hallucination_rate: f64,
    gazetteer_path: Option<PathBuf>,
) -> PyResult<Vec<Example>> {
    let spec = GeneratorSpec {
        hallucination_rate,
        ..GeneratorSpec::default()
    };
    let gaz = gazetteer(gazetteer_path)?;
    let raw = corpus::generate_synthetic_corpus(seed, size, &spec, &gaz).map_err(err)?;
    Ok(raw.into_iter().map(|inner| Example { inner }).collect())
}

#[pyfunction]
#[pyo3(signature = (example, vocab, max_doc_len = 128, max_summary_len = 32, gazetteer_path = None))]
fn annotate(
    example: &Example,
    vocab: &Vocabulary,
    max_doc_len: usize,
    max_summary_len: usize,
    gazetteer_path: Option<PathBuf>,
) -> PyResult<AnnotatedExample> {
    let opts = AnnotateOptions {
        max_doc_len,
        max_summary_len,
        ..AnnotateOptions::default()
    };
    let gaz = gazetteer(gazetteer_path)?;
    let (inner, _) = entity::annotate(&example.inner, &vocab.inner, &gaz, &opts);
    Ok(AnnotatedExample { inner })
}

/// `(start, end, kind, surface)` for every entity found in `tokens`.
#[pyfunction]
#[pyo3(signature = (tokens, gazetteer_path = None))]
fn extract_entities(tokens: Vec<String>, gazetteer_path: Option<PathBuf>) -> PyResult<Vec<(usize, usize, String, String)>> {
    let gaz = gazetteer(gazetteer_path)?;
    Ok(mentions(&entity::extract_entities(&tokens, &gaz, usize::MAX)))
}

fn annotated(examples: &[PyRef<'_, AnnotatedExample>]) -> Vec<entity::AnnotatedExample> {
    examples.iter().map(|e| e.inner.clone()).collect()
}

#[pyfunction]
fn filter_corpus(examples: Vec<PyRef<'_, AnnotatedExample>>) -> Vec<AnnotatedExample> {
    corpus::filter_corpus(&annotated(&examples))
        .into_iter()
        .map(|inner| AnnotatedExample { inner })
        .collect()
}

#[pyfunction]
fn corpus_stats(py: Python<'_>, examples: Vec<PyRef<'_, AnnotatedExample>>) -> PyResult<Py<PyAny>> {
    let stats = corpus::corpus_stats(&annotated(&examples)).map_err(err)?;
    to_py(py, &stats)
}

/// `(precision, recall, f1)`
#[pyfunction]
fn rouge_n(generated: Vec<String>, reference: Vec<String>, n: usize) -> (f64, f64, f64) {
    let p = metrics::rouge_n(&generated, &reference, n);
    (p.precision, p.recall, p.f1)
}

#[pyfunction]
fn rouge_l(generated: Vec<String>, reference: Vec<String>) -> (f64, f64, f64) {
    let p = metrics::rouge_l(&generated, &reference);
    (p.precision, p.recall, p.f1)
}

/// Entity scores of generated tokens against the reference summary and
/// document of `example`. Undefined scores come back as `None`.
#[pyfunction]
#[pyo3(signature = (generated, example, gazetteer_path = None))]
fn evaluate(
    py: Python<'_>,
    generated: Vec<String>,
    example: &AnnotatedExample,
    gazetteer_path: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let gaz = gazetteer(gazetteer_path)?;
    let gen = entity::extract_entities(&generated, &gaz, usize::MAX);
    let ex = &example.inner;
    let report = metrics::example_report(
        &generated,
        &ex.tokenized.summary_tokens,
        &gen,
        &ex.summary_entities,
        &ex.doc_entities,
    );
    to_py(py, &report)
}

#[pyclass(frozen)]
struct SpanCopyModel {
    inner: model::SpanCopyModel,
}

#[pymethods]
impl SpanCopyModel {
    #[new]
    #[pyo3(signature = (
        vocab_size, *, d_model = 32, n_heads = 2, n_layers = 1, d_ff = 64, use_gr = false,
        beta = 0.1, copy_enabled = true, mixture_mode = false, max_doc_len = 128,
        max_summary_len = 32, seed = 1
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        vocab_size: usize,
        d_model: usize,
        n_heads: usize,
        n_layers: usize,
        d_ff: usize,
        use_gr: bool,
        beta: f64,
        copy_enabled: bool,
        mixture_mode: bool,
        max_doc_len: usize,
        max_summary_len: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = ModelConfig {
            vocab_size,
            d_model,
            n_heads,
            n_enc_layers: n_layers,
            n_dec_layers: n_layers,
            d_ff,
            use_gr,
            beta,
            copy_enabled,
            mixture_mode,
            max_doc_len,
            max_summary_len,
            seed,
            ..ModelConfig::default()
        };
        model::SpanCopyModel::init(cfg).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        spancopy_core::cli::load_model(&path).map(|inner| Self { inner }).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let meta = serde_json::json!({ "model": self.inner.config(), "step": 0 });
        self.inner.params().save(&path, meta).map_err(err)
    }

    #[getter]
    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, self.inner.config())
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.params().num_values()
    }

    /// Teacher-forced loss of one example.
    fn loss(&self, example: &AnnotatedExample) -> PyResult<f64> {
        self.inner.loss(&example.inner).map_err(err)
    }

    /// Dict with `p_final` (list of rows), `p_copy` and `gr`.
    #[pyo3(signature = (example, gate = None))]
    fn forward(&self, py: Python<'_>, example: &AnnotatedExample, gate: Option<f64>) -> PyResult<Py<PyAny>> {
        let opts = ForwardOptions {
            gate_override: gate,
            gr_override: None,
        };
        let out = self.inner.forward(&example.inner, &opts).map_err(err)?;
        let v = serde_json::json!({
            "p_final": out.p_final.to_rows(),
            "p_copy": out.p_copy,
            "gr": out.gr,
        });
        to_py(py, &v)
    }

    /// Dict with `tokens`, `label_trace`, `copy_positions` and `score`.
    #[pyo3(signature = (example, vocab, strategy = "greedy", beam_width = 4, max_steps = 32, length_penalty = 1.0))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        &self,
        py: Python<'_>,
        example: &AnnotatedExample,
        vocab: &Vocabulary,
        strategy: &str,
        beam_width: usize,
        max_steps: usize,
        length_penalty: f64,
    ) -> PyResult<Py<PyAny>> {
        let cfg = DecodeConfig {
            strategy: strategy.parse::<Strategy>().map_err(err)?,
            beam_width,
            max_steps,
            length_penalty,
        };
        cfg.validate().map_err(err)?;
        let d = decode_example(&self.inner, &vocab.inner, &example.inner, &cfg).map_err(err)?;
        let v = serde_json::json!({
            "tokens": d.tokens,
            "label_trace": d.label_trace,
            "copy_positions": d.copy_positions,
            "score": d.score,
        });
        to_py(py, &v)
    }

    /// Largest relative error between analytic and finite-difference
    /// gradients of the loss on `example`.
    #[pyo3(signature = (example, step = 1e-3))]
    fn grad_check(&self, example: &AnnotatedExample, step: f64) -> PyResult<f64> {
        let rep = grad_check_with(
            |g, p| self.inner.graph_loss(g, p, &example.inner),
            self.inner.params().tensors(),
            step,
            Stencil::FivePoint,
        )
        .map_err(err)?;
        Ok(rep.max_rel_error)
    }
}

#[pyclass]
struct Trainer {
    inner: model::Trainer,
}

#[pymethods]
impl Trainer {
    #[new]
    #[pyo3(signature = (model, *, learning_rate = 0.1, batch_size = 8, grad_clip = 1.0, seed = 1, freeze_gr = false))]
    fn new(
        model: &SpanCopyModel,
        learning_rate: f64,
        batch_size: usize,
        grad_clip: f64,
        seed: u64,
        freeze_gr: bool,
    ) -> PyResult<Self> {
        let cfg = TrainConfig {
            learning_rate,
            batch_size,
            grad_clip,
            seed,
            freeze_gr,
            ..TrainConfig::default()
        };
        model::Trainer::new(model.inner.clone(), cfg)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    /// One update; returns `(loss, grad_norm)`.
    fn step(&mut self, examples: Vec<PyRef<'_, AnnotatedExample>>) -> PyResult<(f64, f64)> {
        let s = self.inner.step(&annotated(&examples)).map_err(err)?;
        Ok((s.loss, s.grad_norm))
    }

    #[getter]
    fn steps_done(&self) -> usize {
        self.inner.steps_done()
    }

    /// Snapshot of the current parameters.
    fn model(&self) -> SpanCopyModel {
        SpanCopyModel {
            inner: self.inner.model().clone(),
        }
    }
}

#[pymodule]
fn spancopy(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Vocabulary>()?;
    m.add_class::<Example>()?;
    m.add_class::<AnnotatedExample>()?;
    m.add_class::<SpanCopyModel>()?;
    m.add_class::<Trainer>()?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(annotate, m)?)?;
    m.add_function(wrap_pyfunction!(extract_entities, m)?)?;
    m.add_function(wrap_pyfunction!(filter_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_stats, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_n, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
