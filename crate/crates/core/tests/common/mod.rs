#![allow(dead_code)]

use spancopy_core::corpus::{build_vocabulary, generate_synthetic_corpus, GeneratorSpec, RawExample, Vocabulary};
use spancopy_core::entity::{annotate, AnnotateOptions, AnnotatedExample, Gazetteer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spancopy_core::model::{ModelConfig, SpanCopyModel};

/// Four-entity document, six-label summary, `|V| = 50`.
pub fn tiny_example() -> (Vocabulary, AnnotatedExample) {
    let raw = RawExample {
        id: "tiny".into(),
        document: "Alice Hartley visited Portsmouth with Clara Voss on June 5 .".into(),
        summary: "Alice Hartley praised Portsmouth staff .".into(),
    };
    let mut words: Vec<String> = "alice hartley visited portsmouth with clara voss on june 5 . praised staff"
        .split(' ')
        .map(str::to_string)
        .collect();
    let mut i = 0;
    while words.len() < 46 {
        words.push(format!("w{i}"));
        i += 1;
    }
    let vocab = Vocabulary::from_tokens(words).unwrap();
    let (ex, _) = annotate(&raw, &vocab, &Gazetteer::bundled(), &AnnotateOptions::default());
    (vocab, ex)
}

pub fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        d_ff: 16,
        vocab_size,
        max_doc_len: 16,
        max_summary_len: 8,
        ..ModelConfig::default()
    }
}

/// Synthetic corpus annotated with a vocabulary built from it.
pub fn synthetic(seed: u64, size: usize, rate: f64, max_vocab: usize) -> (Vocabulary, Vec<RawExample>, Vec<AnnotatedExample>) {
    let gaz = Gazetteer::bundled();
    let spec = GeneratorSpec {
        hallucination_rate: rate,
        ..GeneratorSpec::default()
    };
    let raw = generate_synthetic_corpus(seed, size, &spec, &gaz).unwrap();
    let vocab = build_vocabulary(&raw, max_vocab).unwrap();
    let ann = raw
        .iter()
        .map(|r| annotate(r, &vocab, &gaz, &AnnotateOptions::default()).0)
        .collect();
    (vocab, raw, ann)
}

/// Seeded model whose parameters are all shifted by uniform noise, so
/// layer-norm gains and biases are exercised too.
pub fn perturbed(cfg: ModelConfig, seed: u64, amount: f64) -> SpanCopyModel {
    let mut model = SpanCopyModel::init(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-amount..amount);
        }
    }
    model
}

pub fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_spancopy")
}
