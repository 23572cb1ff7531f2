//! Corpus ingestion, vocabulary, synthetic corpus generation and
//! source-precision filtering.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entity::{AnnotatedExample, EntityKind, Gazetteer};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExample {
    pub id: String,
    pub document: String,
    pub summary: String,
}

/// Splits on whitespace; every non-alphanumeric character becomes a token
/// of its own. Surface case is preserved.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.push(ch);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    pub const UNK: usize = 3;
    pub const SPECIALS: [&'static str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

    /// Specials followed by `tokens` (duplicates and specials rejected).
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self> {
        let mut all: Vec<String> = Self::SPECIALS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        Self::from_full_list(all)
    }

    fn from_full_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 4 || tokens[..4] != Self::SPECIALS {
            return Err(Error::Input(format!(
                "vocabulary must start with {:?}",
                Self::SPECIALS
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Index of a token after lowercasing, `UNK` when absent.
    pub fn id(&self, token: &str) -> usize {
        let key = token.to_lowercase();
        self.index.get(&key).copied().unwrap_or(Self::UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(&token.to_lowercase())
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; line number is the index.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        Self::from_full_list(tokens).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: e.to_string(),
        })
    }
}

/// Token ids of `text` (lowercased lookup, unknowns to `UNK`).
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<usize> {
    split_tokens(text).iter().map(|t| vocab.id(t)).collect()
}

/// Keeps the `max_size − 4` most frequent lowercased tokens of documents
/// and summaries; frequency ties are broken lexicographically.
pub fn build_vocabulary(corpus: &[RawExample], max_size: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Input("cannot build a vocabulary from an empty corpus".into()));
    }
    if max_size < 4 {
        return Err(Error::Config(format!("vocabulary size must be >= 4, got {max_size}")));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for ex in corpus {
        for text in [&ex.document, &ex.summary] {
            for t in split_tokens(text) {
                *counts.entry(t.to_lowercase()).or_default() += 1;
            }
        }
    }
    for s in Vocabulary::SPECIALS {
        counts.remove(s);
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - 4);
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

/// Vocabulary ids and surface tokens of one example.
///
/// `summary_ids` is `summary_tokens` mapped through the vocabulary followed
/// by a final EOS, so it is one longer than `summary_tokens`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedExample {
    pub id: String,
    pub doc_ids: Vec<usize>,
    pub summary_ids: Vec<usize>,
    pub doc_tokens: Vec<String>,
    pub summary_tokens: Vec<String>,
}

impl TokenizedExample {
    /// Tokenizes and hard-truncates; returns the example plus whether the
    /// document and the summary were truncated.
    pub fn new(
        raw: &RawExample,
        vocab: &Vocabulary,
        max_doc_len: usize,
        max_summary_len: usize,
    ) -> (Self, bool, bool) {
        let mut doc_tokens = split_tokens(&raw.document);
        let mut summary_tokens = split_tokens(&raw.summary);
        let doc_cut = doc_tokens.len() > max_doc_len;
        doc_tokens.truncate(max_doc_len);
        let body_max = max_summary_len.saturating_sub(1);
        let summ_cut = summary_tokens.len() > body_max;
        summary_tokens.truncate(body_max);
        let doc_ids = doc_tokens.iter().map(|t| vocab.id(t)).collect();
        let mut summary_ids: Vec<usize> = summary_tokens.iter().map(|t| vocab.id(t)).collect();
        summary_ids.push(Vocabulary::EOS);
        (
            Self {
                id: raw.id.clone(),
                doc_ids,
                summary_ids,
                doc_tokens,
                summary_tokens,
            },
            doc_cut,
            summ_cut,
        )
    }

    /// Summary ids without the trailing EOS.
    pub fn summary_body_ids(&self) -> &[usize] {
        &self.summary_ids[..self.summary_ids.len() - 1]
    }
}

fn parse_raw_line(line: &str) -> std::result::Result<RawExample, String> {
    let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let field = |name: &str| -> std::result::Result<String, String> {
        match v.get(name) {
            Some(serde_json::Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(format!("field `{name}` must be a string")),
            None => Err(format!("missing field `{name}`")),
        }
    };
    let ex = RawExample {
        id: field("id")?,
        document: field("document")?,
        summary: field("summary")?,
    };
    if ex.document.trim().is_empty() {
        return Err("empty document".into());
    }
    if ex.summary.trim().is_empty() {
        return Err("empty summary".into());
    }
    Ok(ex)
}

/// Reads a JSON-lines corpus with `id`, `document` and `summary` fields.
pub fn read_corpus(path: &Path) -> Result<Vec<RawExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path)
}

pub fn parse_corpus(text: &str, origin: &Path) -> Result<Vec<RawExample>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            msg,
        };
        let ex = parse_raw_line(line).map_err(err)?;
        if !seen.insert(ex.id.clone()) {
            return Err(err(format!("duplicate id {:?}", ex.id)));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, examples: &[RawExample]) -> Result<()> {
    fs::write(path, corpus_to_string(examples)).map_err(|e| Error::io(path, e))
}

pub fn corpus_to_string(examples: &[RawExample]) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex).expect("example serializes"));
        out.push('\n');
    }
    out
}

/// Parameters of the synthetic template corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// Fraction of examples whose summary mentions one entity absent from
    /// the document.
    pub hallucination_rate: f64,
    pub min_entities: usize,
    pub max_entities: usize,
    /// Upper bound on entities referenced by a summary.
    pub max_summary_entities: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            hallucination_rate: 0.0,
            min_entities: 2,
            max_entities: 6,
            max_summary_entities: 3,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hallucination_rate) {
            return Err(Error::Config(format!(
                "hallucination_rate must lie in [0, 1], got {}",
                self.hallucination_rate
            )));
        }
        if self.min_entities == 0 || self.min_entities > self.max_entities {
            return Err(Error::Config(format!(
                "entity range {}..={} is invalid",
                self.min_entities, self.max_entities
            )));
        }
        if self.max_summary_entities == 0 {
            return Err(Error::Config("max_summary_entities must be >= 1".into()));
        }
        Ok(())
    }
}

const DOC_TEMPLATES: [(EntityKind, &str); 16] = [
    (EntityKind::Person, "{} said the proposal had been discussed for several months ."),
    (EntityKind::Person, "according to {} , the project was delayed again ."),
    (EntityKind::Person, "{} described the decision as a serious mistake ."),
    (EntityKind::Person, "a statement from {} called for calm ."),
    (EntityKind::Place, "the event was held in {} last week ."),
    (EntityKind::Place, "crowds gathered outside the hall in {} ."),
    (EntityKind::Place, "officials in {} confirmed the new schedule ."),
    (EntityKind::Place, "the plan would affect thousands of people living near {} ."),
    (EntityKind::Org, "a spokesperson for {} declined to comment ."),
    (EntityKind::Org, "{} announced a review of its policy ."),
    (EntityKind::Org, "the report was published by {} ."),
    (EntityKind::Org, "members of {} voted in favour of the change ."),
    (EntityKind::Date, "the decision was announced on {} ."),
    (EntityKind::Date, "work is expected to begin on {} ."),
    (EntityKind::Date, "the deadline was moved to {} ."),
    (EntityKind::Date, "the figures were first collected on {} ."),
];

const FILLERS: [&str; 5] = [
    "the statement was released late in the evening .",
    "critics said the move was unnecessary .",
    "no further details were given .",
    "campaigners have promised to continue their efforts .",
    "the issue has divided opinion for some time .",
];

const REPEAT_TEMPLATE: &str = "supporters of {} remain hopeful .";

const SUMMARY_PHRASES: [(EntityKind, &str); 8] = [
    (EntityKind::Person, "{} criticised the plan"),
    (EntityKind::Person, "{} spoke out"),
    (EntityKind::Place, "residents in {} reacted"),
    (EntityKind::Place, "a row erupted in {}"),
    (EntityKind::Org, "{} backed the proposal"),
    (EntityKind::Org, "{} launched a review"),
    (EntityKind::Date, "a deadline was set for {}"),
    (EntityKind::Date, "talks began on {}"),
];

fn pick_template<'a, R: Rng>(rng: &mut R, table: &'a [(EntityKind, &'a str)], kind: EntityKind) -> &'a str {
    let options: Vec<&str> = table.iter().filter(|(k, _)| *k == kind).map(|(_, t)| *t).collect();
    options[rng.gen_range(0..options.len())]
}

/// Deterministic template corpus over gazetteer entities.
///
/// Each document mentions `min_entities..=max_entities` distinct entities;
/// its summary references the first few of them in document order. With
/// probability `hallucination_rate` the summary also mentions one
/// gazetteer entity the document does not contain.
pub fn generate_synthetic_corpus(
    seed: u64,
    size: usize,
    spec: &GeneratorSpec,
    gazetteer: &Gazetteer,
) -> Result<Vec<RawExample>> {
    spec.validate()?;
    if size == 0 {
        return Err(Error::Config("corpus size must be > 0".into()));
    }
    let by_kind: Vec<(EntityKind, Vec<&str>)> = EntityKind::ALL
        .iter()
        .map(|&k| (k, gazetteer.of_kind(k).map(|e| e.surface.as_str()).collect::<Vec<_>>()))
        .filter(|(_, v)| !v.is_empty())
        .collect();
    let total: usize = by_kind.iter().map(|(_, v)| v.len()).sum();
    if total <= spec.max_entities {
        return Err(Error::Config(format!(
            "gazetteer has {total} entries, need more than max_entities = {}",
            spec.max_entities
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(size);
    for i in 0..size {
        let k = rng.gen_range(spec.min_entities..=spec.max_entities);
        let mut chosen: Vec<(EntityKind, &str)> = Vec::with_capacity(k);
        while chosen.len() < k {
            let (kind, pool) = &by_kind[rng.gen_range(0..by_kind.len())];
            let surface = pool[rng.gen_range(0..pool.len())];
            let norm = crate::entity::normalize(surface);
            if chosen.iter().all(|(_, s)| crate::entity::normalize(s) != norm) {
                chosen.push((*kind, surface));
            }
        }

        let mut sentences = Vec::new();
        for (kind, surface) in &chosen {
            if rng.gen_bool(0.3) {
                sentences.push(FILLERS[rng.gen_range(0..FILLERS.len())].to_string());
            }
            sentences.push(pick_template(&mut rng, &DOC_TEMPLATES, *kind).replace("{}", surface));
        }
        if rng.gen_bool(0.3) {
            sentences.push(REPEAT_TEMPLATE.replace("{}", chosen[0].1));
        }

        let n_summ = rng.gen_range(1..=spec.max_summary_entities.min(k));
        let mut phrases: Vec<String> = chosen[..n_summ]
            .iter()
            .map(|(kind, s)| pick_template(&mut rng, &SUMMARY_PHRASES, *kind).replace("{}", s))
            .collect();
        if rng.gen::<f64>() < spec.hallucination_rate {
            let in_doc: HashSet<String> = chosen.iter().map(|(_, s)| crate::entity::normalize(s)).collect();
            let (kind, surface) = loop {
                let (kind, pool) = &by_kind[rng.gen_range(0..by_kind.len())];
                let s = pool[rng.gen_range(0..pool.len())];
                if !in_doc.contains(&crate::entity::normalize(s)) {
                    break (*kind, s);
                }
            };
            phrases.push(pick_template(&mut rng, &SUMMARY_PHRASES, kind).replace("{}", surface));
            phrases.shuffle(&mut rng);
        }
        out.push(RawExample {
            id: format!("syn-{seed}-{i:06}"),
            document: sentences.join(" "),
            summary: format!("{} .", phrases.join(" ; ")),
        });
    }
    Ok(out)
}

/// Keeps examples whose summary entity set is a subset of the document
/// entity set. Order is preserved.
pub fn filter_corpus(examples: &[AnnotatedExample]) -> Vec<AnnotatedExample> {
    examples
        .iter()
        .filter(|ex| ex.summary_entities_in_doc())
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub examples: usize,
    pub l_doc: f64,
    pub l_summ: f64,
    pub n_doc: f64,
    pub n_summ: f64,
    /// Mean ground-truth source precision in `[0, 100]`.
    pub src_p_gt: f64,
}

/// Ground-truth source precision of one example in `[0, 100]`; a summary
/// with no entities scores 100.
pub fn ground_truth_src_p(ex: &AnnotatedExample) -> f64 {
    let summ = ex.summary_entities.entity_set();
    if summ.is_empty() {
        return 100.0;
    }
    let doc = ex.doc_entities.entity_set();
    let hit = summ.iter().filter(|s| doc.contains(*s)).count();
    100.0 * hit as f64 / summ.len() as f64
}

pub fn corpus_stats(examples: &[AnnotatedExample]) -> Result<CorpusStats> {
    if examples.is_empty() {
        return Err(Error::Input("corpus statistics of an empty corpus".into()));
    }
    let n = examples.len() as f64;
    let mean = |f: &dyn Fn(&AnnotatedExample) -> f64| examples.iter().map(f).sum::<f64>() / n;
    let src_p_gt = mean(&ground_truth_src_p);
    Ok(CorpusStats {
        examples: examples.len(),
        l_doc: mean(&|e| e.tokenized.doc_tokens.len() as f64),
        l_summ: mean(&|e| e.tokenized.summary_tokens.len() as f64),
        n_doc: mean(&|e| e.doc_entities.num_entities() as f64),
        n_summ: mean(&|e| e.summary_entities.num_entities() as f64),
        src_p_gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entity::{annotate, AnnotateOptions};

    fn raw(id: &str, doc: &str, summ: &str) -> RawExample {
        RawExample {
            id: id.into(),
            document: doc.into(),
            summary: summ.into(),
        }
    }

    #[test]
    fn tokenize_basics() {
        let vocab = Vocabulary::from_tokens(["a", "b", "c", "the", "seafront"].map(String::from)).unwrap();
        assert_eq!(tokenize("", &vocab), Vec::<usize>::new());
        assert_eq!(vocab.id("the"), 7);
        assert_eq!(tokenize("the the", &vocab), vec![7, 7]);
        assert_eq!(
            tokenize("Portsmouth seafront", &vocab),
            vec![Vocabulary::UNK, vocab.id("seafront")]
        );
        assert_eq!(split_tokens("Hi, there!  (x)"), vec!["Hi", ",", "there", "!", "(", "x", ")"]);
    }

    #[test]
    fn vocabulary_orders_by_frequency_then_lexicographically() {
        let v = build_vocabulary(&[raw("1", "a a b", "b y x")], 10).unwrap();
        assert_eq!(&v.tokens()[4..], &["a", "b", "x", "y"]);
        let v = build_vocabulary(&[raw("1", "a a b", "q")], 5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.token(4), "a");
        assert!(build_vocabulary(&[], 10).is_err());
        assert!(build_vocabulary(&[raw("1", "a", "b")], 3).is_err());
    }

    #[test]
    fn vocabulary_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = build_vocabulary(&[raw("1", "one two", "three")], 10).unwrap();
        v.save(&p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("<pad>\n<s>\n</s>\n<unk>\n"));
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }

    #[test]
    fn corpus_reader_reports_line_numbers() {
        let text = "{\"id\":\"a\",\"document\":\"x\",\"summary\":\"y\"}\n{\"id\":\"b\",\"document\":\"x\"}\n";
        let err = parse_corpus(text, Path::new("c.jsonl")).unwrap_err().to_string();
        assert!(err.starts_with("c.jsonl:2:") && err.contains("summary"), "{err}");
        let dup = "{\"id\":\"a\",\"document\":\"x\",\"summary\":\"y\"}\n{\"id\":\"a\",\"document\":\"x\",\"summary\":\"y\"}\n";
        assert!(parse_corpus(dup, Path::new("c")).is_err());
        let blank = "{\"id\":\"a\",\"document\":\"  \",\"summary\":\"y\"}\n";
        assert!(parse_corpus(blank, Path::new("c")).is_err());
    }

    #[test]
    fn synthetic_corpus_is_deterministic_and_validated() {
        let g = Gazetteer::bundled();
        let spec = GeneratorSpec::default();
        let a = generate_synthetic_corpus(1, 20, &spec, &g).unwrap();
        let b = generate_synthetic_corpus(1, 20, &spec, &g).unwrap();
        assert_eq!(corpus_to_string(&a), corpus_to_string(&b));
        let bad = GeneratorSpec {
            hallucination_rate: 1.5,
            ..spec
        };
        assert!(matches!(generate_synthetic_corpus(1, 2, &bad, &g), Err(Error::Config(_))));
        assert!(generate_synthetic_corpus(1, 0, &spec, &g).is_err());
    }

    fn annotate_all(raws: &[RawExample]) -> Vec<AnnotatedExample> {
        let vocab = build_vocabulary(raws, 5000).unwrap();
        let g = Gazetteer::bundled();
        raws.iter()
            .map(|r| annotate(r, &vocab, &g, &AnnotateOptions::default()).0)
            .collect()
    }

    #[test]
    fn zero_hallucination_keeps_summary_entities_in_document() {
        let raws = generate_synthetic_corpus(1, 1, &GeneratorSpec::default(), &Gazetteer::bundled()).unwrap();
        let ann = annotate_all(&raws);
        assert!(ann[0].summary_entities.num_entities() >= 1);
        assert!(ann[0].summary_entities_in_doc());
        assert!(ann[0].doc_entities.num_entities() >= 2);
    }

    #[test]
    fn filter_examples() {
        let raws = vec![
            raw("empty", "Portsmouth seafront", "a statue"),
            raw("kept", "Royal Marine in the Falklands", "Royal Marine statue"),
            raw("dropped", "statue in Portsmouth", "statue in Hampshire"),
        ];
        let ann = annotate_all(&raws);
        let filtered = filter_corpus(&ann);
        let kept: Vec<&str> = filtered.iter().map(|e| e.id()).collect();
        assert_eq!(kept, vec!["empty", "kept"]);
    }

    #[test]
    fn stats_examples() {
        let raws = vec![raw("a", "one two three four five six seven eight nine ten", "x y z")];
        let s = corpus_stats(&annotate_all(&raws)).unwrap();
        assert_eq!((s.l_doc, s.l_summ, s.src_p_gt), (10.0, 3.0, 100.0));

        let raws = vec![
            raw("a", "Oxford", "York"),
            raw("b", "Oxford and York", "Oxford and Truro"),
        ];
        let ann = annotate_all(&raws);
        assert_eq!(ground_truth_src_p(&ann[0]), 0.0);
        assert_eq!(ground_truth_src_p(&ann[1]), 50.0);
        let raws = vec![raw("a", "Oxford", "Oxford"), raw("b", "Oxford and York", "Oxford and Truro")];
        assert_eq!(corpus_stats(&annotate_all(&raws)).unwrap().src_p_gt, 75.0);
        assert!(corpus_stats(&[]).is_err());
    }

    #[test]
    fn hallucination_rate_shapes_the_corpus() {
        let g = Gazetteer::bundled();
        let spec = GeneratorSpec {
            hallucination_rate: 0.3,
            ..GeneratorSpec::default()
        };
        let raws = generate_synthetic_corpus(1, 1000, &spec, &g).unwrap();
        let ann = annotate_all(&raws);
        let hallucinated = ann.iter().filter(|e| !e.summary_entities_in_doc()).count();
        assert!((250..=350).contains(&hallucinated), "{hallucinated}");
        let filtered = filter_corpus(&ann);
        assert_eq!(filtered.len(), 1000 - hallucinated);
        assert_eq!(corpus_stats(&filtered).unwrap().src_p_gt, 100.0);
        assert_eq!(filter_corpus(&filtered), filtered);
    }

    proptest::proptest! {
        #[test]
        fn detokenized_tokens_retokenize_identically(s in "[A-Za-z0-9 ,.;'!-]{0,60}") {
            let toks = split_tokens(&s);
            proptest::prop_assert_eq!(split_tokens(&detokenize(&toks)), toks);
        }
    }
}
