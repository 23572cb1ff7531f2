//! Rule-based entity extraction, cross-text matching and the construction
//! of copy-aware labels.
//!
//! Persons, places and organizations come from a gazetteer (longest match,
//! case-insensitive); dates come from token patterns. A document's distinct
//! normalized forms are its entities, numbered by first mention, and the
//! first mention is the canonical span used for both the entity's encoder
//! representation and its surface realization when copied.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_tokens, RawExample, TokenizedExample, Vocabulary};
use crate::{Error, Result};

pub const DEFAULT_E_MAX: usize = 64;

static BUNDLED_GAZETTEER: &str = include_str!("../data/gazetteer.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EntityKind {
    Person,
    Place,
    Org,
    Date,
}

impl EntityKind {
    pub const ALL: [EntityKind; 4] = [Self::Person, Self::Place, Self::Org, Self::Date];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Person => "PERSON",
            Self::Place => "PLACE",
            Self::Org => "ORG",
            Self::Date => "DATE",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "PERSON" => Ok(Self::Person),
            "PLACE" => Ok(Self::Place),
            "ORG" => Ok(Self::Org),
            "DATE" => Ok(Self::Date),
            other => Err(Error::Input(format!("unknown entity kind {other:?}"))),
        }
    }
}

/// Lowercase with internal whitespace collapsed to single spaces.
pub fn normalize(surface: &str) -> String {
    surface
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GazetteerEntry {
    pub kind: EntityKind,
    pub surface: String,
    pub tokens: Vec<String>,
}

/// Surface forms grouped by kind, indexed by their lowercased token
/// sequence.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
    lookup: HashMap<String, EntityKind>,
    max_tokens: usize,
}

impl Gazetteer {
    /// Parses `kind<TAB>surface form` lines. Blank lines and `#` comments
    /// are skipped.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (kind, surface) = line
                .split_once('\t')
                .ok_or_else(|| err("expected `kind<TAB>surface`".into()))?;
            let kind: EntityKind = kind.parse().map_err(|e: Error| err(e.to_string()))?;
            let tokens = split_tokens(surface);
            if tokens.is_empty() {
                return Err(err("empty surface form".into()));
            }
            entries.push(GazetteerEntry {
                kind,
                surface: surface.trim().to_string(),
                tokens,
            });
        }
        Ok(Self::from_entries(entries))
    }

    pub fn from_entries(entries: Vec<GazetteerEntry>) -> Self {
        let mut lookup = HashMap::new();
        let mut max_tokens = 0;
        for e in &entries {
            lookup.entry(normalize(&e.tokens.join(" "))).or_insert(e.kind);
            max_tokens = max_tokens.max(e.tokens.len());
        }
        Self {
            entries,
            lookup,
            max_tokens,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// The gazetteer shipped with the crate (~200 entries over all kinds).
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_GAZETTEER, Path::new("<bundled>")).expect("bundled gazetteer parses")
    }

    pub fn entries(&self) -> &[GazetteerEntry] {
        &self.entries
    }

    pub fn of_kind(&self, kind: EntityKind) -> impl Iterator<Item = &GazetteerEntry> {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A half-open token span `[start, end)` recognized as an entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub normalized: String,
    pub kind: EntityKind,
}

impl EntityMention {
    pub fn new(tokens: &[String], start: usize, end: usize, kind: EntityKind) -> Self {
        let surface = tokens[start..end].join(" ");
        let normalized = normalize(&surface);
        Self {
            start,
            end,
            surface,
            normalized,
            kind,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Mentions of one text plus the canonical entity numbering.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntityTable {
    mentions: Vec<EntityMention>,
    index: HashMap<String, usize>,
    /// For each entity id, the mention index of its first mention.
    canonical: Vec<usize>,
    overflow: bool,
}

impl EntityTable {
    /// Numbers distinct normalized forms by first mention. Entities past
    /// `e_max` are dropped together with all their mentions.
    pub fn from_mentions(mut mentions: Vec<EntityMention>, e_max: usize) -> Self {
        mentions.sort_by_key(|m| (m.start, m.end));
        let mut index = HashMap::new();
        let mut kept = Vec::with_capacity(mentions.len());
        let mut canonical = Vec::new();
        let mut overflow = false;
        for m in mentions {
            match index.get(&m.normalized) {
                Some(_) => kept.push(m),
                None if canonical.len() < e_max => {
                    index.insert(m.normalized.clone(), canonical.len());
                    canonical.push(kept.len());
                    kept.push(m);
                }
                None => overflow = true,
            }
        }
        Self {
            mentions: kept,
            index,
            canonical,
            overflow,
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn mentions(&self) -> &[EntityMention] {
        &self.mentions
    }

    /// Number of distinct entities, `|E|`.
    pub fn num_entities(&self) -> usize {
        self.canonical.len()
    }

    pub fn is_empty(&self) -> bool {
        self.canonical.is_empty()
    }

    pub fn overflowed(&self) -> bool {
        self.overflow
    }

    pub fn entity_id(&self, normalized: &str) -> Option<usize> {
        self.index.get(normalized).copied()
    }

    pub fn canonical_mention(&self, entity: usize) -> &EntityMention {
        &self.mentions[self.canonical[entity]]
    }

    pub fn canonical_span(&self, entity: usize) -> (usize, usize) {
        let m = self.canonical_mention(entity);
        (m.start, m.end)
    }

    pub fn normalized_forms(&self) -> Vec<&str> {
        (0..self.num_entities())
            .map(|e| self.canonical_mention(e).normalized.as_str())
            .collect()
    }

    pub fn entity_set(&self) -> HashSet<&str> {
        self.index.keys().map(String::as_str).collect()
    }

    /// Entity id of the mention starting at token `pos`, if any.
    pub fn mention_starting_at(&self, pos: usize) -> Option<&EntityMention> {
        self.mentions
            .binary_search_by_key(&pos, |m| m.start)
            .ok()
            .map(|i| &self.mentions[i])
    }
}

fn month_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            "(?i)^(january|february|march|april|may|june|july|august|september|october|november|december)$",
        )
        .unwrap()
    })
}

fn day_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new("^(0?[1-9]|[12][0-9]|3[01])$").unwrap())
}

fn year_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new("^(19|20)[0-9]{2}$").unwrap())
}

fn date_candidates(tokens: &[String], out: &mut Vec<(usize, usize, EntityKind)>) {
    let n = tokens.len();
    for i in 0..n {
        if year_re().is_match(&tokens[i]) {
            out.push((i, i + 1, EntityKind::Date));
        }
        if i + 1 < n && month_re().is_match(&tokens[i]) && day_re().is_match(&tokens[i + 1]) {
            let mut end = i + 2;
            if end < n && year_re().is_match(&tokens[end]) {
                end += 1;
            } else if end + 1 < n && tokens[end] == "," && year_re().is_match(&tokens[end + 1]) {
                end += 2;
            }
            out.push((i, end, EntityKind::Date));
        }
    }
}

/// Extracts entity mentions from a token sequence.
///
/// All gazetteer and date candidates are collected, then accepted
/// longest-span-first (leftmost on ties) when they do not overlap an
/// already accepted span.
pub fn extract_entities(tokens: &[String], gazetteer: &Gazetteer, e_max: usize) -> EntityTable {
    let n = tokens.len();
    let lower: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    let mut candidates = Vec::new();
    for start in 0..n {
        let mut key = String::new();
        for end in start + 1..=(start + gazetteer.max_tokens).min(n) {
            if end > start + 1 {
                key.push(' ');
            }
            key.push_str(&lower[end - 1]);
            if let Some(&kind) = gazetteer.lookup.get(&key) {
                candidates.push((start, end, kind));
            }
        }
    }
    date_candidates(tokens, &mut candidates);
    // stable: gazetteer candidates win exact-span ties against patterns
    candidates.sort_by_key(|&(s, e, _)| (std::cmp::Reverse(e - s), s));

    let mut taken = vec![false; n];
    let mut mentions = Vec::new();
    for (s, e, kind) in candidates {
        if taken[s..e].iter().any(|&t| t) {
            continue;
        }
        taken[s..e].iter_mut().for_each(|t| *t = true);
        mentions.push(EntityMention::new(tokens, s, e, kind));
    }
    EntityTable::from_mentions(mentions, e_max)
}

/// For each summary entity id, the document entity with the same
/// normalized form.
pub fn match_entities(summary: &EntityTable, doc: &EntityTable) -> Vec<Option<usize>> {
    (0..summary.num_entities())
        .map(|e| doc.entity_id(&summary.canonical_mention(e).normalized))
        .collect()
}

/// Copy-aware labels over `[0, |V|)` ∪ `[|V|, |V|+|E|)`.
///
/// A summary mention matching document entity `e` collapses to the single
/// label `|V| + e`; everything else is labeled with its vocabulary index.
/// The sequence always ends with EOS.
pub fn build_copy_targets(
    ex: &TokenizedExample,
    doc: &EntityTable,
    summary: &EntityTable,
    vocab_size: usize,
) -> Vec<usize> {
    let body = ex.summary_body_ids();
    let mut out = Vec::with_capacity(body.len() + 1);
    let mut i = 0;
    while i < body.len() {
        if let Some(m) = summary.mention_starting_at(i) {
            if let Some(e) = doc.entity_id(&m.normalized) {
                out.push(vocab_size + e);
                i = m.end;
                continue;
            }
        }
        out.push(body[i]);
        i += 1;
    }
    out.push(Vocabulary::EOS);
    out
}

/// `1` for each document entity whose normalized form occurs in the summary.
pub fn build_gr_labels(doc: &EntityTable, summary: &EntityTable) -> Vec<u8> {
    doc.normalized_forms()
        .into_iter()
        .map(|f| u8::from(summary.entity_id(f).is_some()))
        .collect()
}

/// Maps copy-aware labels back to plain vocabulary ids, replacing each copy
/// label with the token ids of the entity's canonical document mention.
pub fn expand_labels(labels: &[usize], doc_ids: &[usize], doc: &EntityTable, vocab_size: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(labels.len());
    for &l in labels {
        if l >= vocab_size {
            let (s, e) = doc.canonical_span(l - vocab_size);
            out.extend_from_slice(&doc_ids[s..e]);
        } else {
            out.push(l);
        }
    }
    out
}

/// A tokenized example with entity annotations and training labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedExample {
    pub tokenized: TokenizedExample,
    pub doc_entities: EntityTable,
    pub summary_entities: EntityTable,
    pub copy_targets: Vec<usize>,
    pub gr_labels: Vec<u8>,
    pub vocab_size: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationFlags {
    pub doc_truncated: bool,
    pub summary_truncated: bool,
    pub entity_overflow: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnotateOptions {
    pub max_doc_len: usize,
    pub max_summary_len: usize,
    pub e_max: usize,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        Self {
            max_doc_len: 128,
            max_summary_len: 32,
            e_max: DEFAULT_E_MAX,
        }
    }
}

impl AnnotatedExample {
    pub fn id(&self) -> &str {
        &self.tokenized.id
    }

    pub fn num_entities(&self) -> usize {
        self.doc_entities.num_entities()
    }

    /// Width of the combined label space, `|V| + |E|`.
    pub fn label_width(&self) -> usize {
        self.vocab_size + self.num_entities()
    }

    /// Copy-label feedback groups: for each entity, the vocabulary ids of
    /// its canonical document mention.
    pub fn entity_token_ids(&self, entity: usize) -> &[usize] {
        let (s, e) = self.doc_entities.canonical_span(entity);
        &self.tokenized.doc_ids[s..e]
    }

    /// True when every summary entity also occurs in the document.
    pub fn summary_entities_in_doc(&self) -> bool {
        let doc = self.doc_entities.entity_set();
        self.summary_entities.entity_set().is_subset(&doc)
    }
}

/// Tokenizes, extracts entities from both sides, and builds the copy-aware
/// targets and relevance labels.
pub fn annotate(
    raw: &RawExample,
    vocab: &Vocabulary,
    gazetteer: &Gazetteer,
    opts: &AnnotateOptions,
) -> (AnnotatedExample, AnnotationFlags) {
    let (tokenized, doc_truncated, summary_truncated) =
        TokenizedExample::new(raw, vocab, opts.max_doc_len, opts.max_summary_len);
    let doc_entities = extract_entities(&tokenized.doc_tokens, gazetteer, opts.e_max);
    let summary_entities = extract_entities(&tokenized.summary_tokens, gazetteer, usize::MAX);
    let copy_targets = build_copy_targets(&tokenized, &doc_entities, &summary_entities, vocab.len());
    let gr_labels = build_gr_labels(&doc_entities, &summary_entities);
    let flags = AnnotationFlags {
        doc_truncated,
        summary_truncated,
        entity_overflow: doc_entities.overflowed(),
    };
    (
        AnnotatedExample {
            tokenized,
            doc_entities,
            summary_entities,
            copy_targets,
            gr_labels,
            vocab_size: vocab.len(),
        },
        flags,
    )
}

/// `[start, end, kind, surface]`
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MentionRecord(usize, usize, EntityKind, String);

#[derive(Debug, Serialize, Deserialize)]
struct AnnotatedRecord {
    id: String,
    doc_tokens: Vec<String>,
    summary_tokens: Vec<String>,
    doc_ids: Vec<usize>,
    summary_ids: Vec<usize>,
    doc_mentions: Vec<MentionRecord>,
    summary_mentions: Vec<MentionRecord>,
    copy_targets: Vec<usize>,
    gr_labels: Vec<u8>,
    vocab_size: usize,
    #[serde(default)]
    entity_overflow: bool,
}

fn mention_records(t: &EntityTable) -> Vec<MentionRecord> {
    t.mentions()
        .iter()
        .map(|m| MentionRecord(m.start, m.end, m.kind, m.surface.clone()))
        .collect()
}

fn table_from_records(tokens: &[String], recs: &[MentionRecord]) -> std::result::Result<EntityTable, String> {
    let mut mentions = Vec::with_capacity(recs.len());
    for MentionRecord(s, e, kind, surface) in recs {
        if !(s < e && *e <= tokens.len()) {
            return Err(format!("mention span [{s}, {e}) outside {} tokens", tokens.len()));
        }
        let m = EntityMention::new(tokens, *s, *e, *kind);
        if &m.surface != surface {
            return Err(format!("mention surface {surface:?} does not match tokens {:?}", m.surface));
        }
        mentions.push(m);
    }
    Ok(EntityTable::from_mentions(mentions, usize::MAX))
}

impl AnnotatedExample {
    pub fn to_json_line(&self) -> String {
        let t = &self.tokenized;
        let rec = AnnotatedRecord {
            id: t.id.clone(),
            doc_tokens: t.doc_tokens.clone(),
            summary_tokens: t.summary_tokens.clone(),
            doc_ids: t.doc_ids.clone(),
            summary_ids: t.summary_ids.clone(),
            doc_mentions: mention_records(&self.doc_entities),
            summary_mentions: mention_records(&self.summary_entities),
            copy_targets: self.copy_targets.clone(),
            gr_labels: self.gr_labels.clone(),
            vocab_size: self.vocab_size,
            entity_overflow: self.doc_entities.overflowed(),
        };
        serde_json::to_string(&rec).expect("record serializes")
    }

    pub fn from_json_line(line: &str) -> std::result::Result<Self, String> {
        let rec: AnnotatedRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if rec.doc_ids.len() != rec.doc_tokens.len() {
            return Err("doc_ids and doc_tokens differ in length".into());
        }
        if rec.summary_ids.len() != rec.summary_tokens.len() + 1
            || rec.summary_ids.last() != Some(&Vocabulary::EOS)
        {
            return Err("summary_ids must be the summary tokens followed by EOS".into());
        }
        let mut doc_entities = table_from_records(&rec.doc_tokens, &rec.doc_mentions)?;
        doc_entities.overflow = rec.entity_overflow;
        let summary_entities = table_from_records(&rec.summary_tokens, &rec.summary_mentions)?;
        let width = rec.vocab_size + doc_entities.num_entities();
        if let Some(&bad) = rec.copy_targets.iter().find(|&&l| l >= width) {
            return Err(format!("copy target {bad} out of range for width {width}"));
        }
        if rec.gr_labels.len() != doc_entities.num_entities() {
            return Err("gr_labels length differs from the number of document entities".into());
        }
        if let Some(&bad) = rec.doc_ids.iter().chain(&rec.summary_ids).find(|&&i| i >= rec.vocab_size) {
            return Err(format!("token id {bad} out of range for vocabulary size {}", rec.vocab_size));
        }
        Ok(Self {
            tokenized: TokenizedExample {
                id: rec.id,
                doc_ids: rec.doc_ids,
                summary_ids: rec.summary_ids,
                doc_tokens: rec.doc_tokens,
                summary_tokens: rec.summary_tokens,
            },
            doc_entities,
            summary_entities,
            copy_targets: rec.copy_targets,
            gr_labels: rec.gr_labels,
            vocab_size: rec.vocab_size,
        })
    }
}

pub fn write_annotated(path: &Path, examples: &[AnnotatedExample]) -> Result<()> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&ex.to_json_line());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_annotated(path: &Path) -> Result<Vec<AnnotatedExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex = AnnotatedExample::from_json_line(line).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        })?;
        out.push(ex);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;

    fn toks(s: &str) -> Vec<String> {
        split_tokens(s)
    }

    fn table(text: &str) -> EntityTable {
        extract_entities(&toks(text), &Gazetteer::bundled(), DEFAULT_E_MAX)
    }

    #[test]
    fn extracts_place_from_headline() {
        let t = table("Plans to move a statue in Portsmouth");
        assert_eq!(t.mentions().len(), 1);
        let m = &t.mentions()[0];
        assert_eq!((m.start, m.end, m.kind), (6, 7, EntityKind::Place));
        assert_eq!(m.surface, "Portsmouth");
    }

    #[test]
    fn empty_tokens_give_empty_table() {
        let t = extract_entities(&[], &Gazetteer::bundled(), DEFAULT_E_MAX);
        assert!(t.is_empty());
        assert!(t.mentions().is_empty());
    }

    #[test]
    fn repeated_mention_shares_one_entity() {
        let t = table("Royal Marine Royal Marine");
        assert_eq!(t.mentions().len(), 2);
        assert_eq!(t.num_entities(), 1);
        assert_eq!(t.canonical_span(0), (0, 2));
        assert_eq!(t.mentions()[1].start, 2);
    }

    #[test]
    fn longest_match_wins() {
        let t = table("at the Falklands War Memorial today");
        assert_eq!(t.num_entities(), 1);
        assert_eq!(t.canonical_mention(0).normalized, "falklands war memorial");
    }

    #[test]
    fn case_insensitive_lookup_keeps_surface() {
        let t = table("the ROYAL marine band");
        assert_eq!(t.canonical_mention(0).surface, "ROYAL marine");
        assert_eq!(t.canonical_mention(0).normalized, "royal marine");
    }

    #[test]
    fn date_patterns() {
        let t = extract_entities(&toks("on March 3, 2015 and May 9 and in 1999 or 2150 or 3 May"), &Gazetteer::from_entries(vec![]), 64);
        let forms = t.normalized_forms();
        assert_eq!(forms, vec!["march 3 , 2015", "may 9", "1999"]);
        assert!(t.mentions().iter().all(|m| m.kind == EntityKind::Date));
    }

    #[test]
    fn overflow_keeps_first_entities() {
        let t = extract_entities(&toks("Oxford York Truro Oxford Kendal"), &Gazetteer::bundled(), 2);
        assert!(t.overflowed());
        assert_eq!(t.normalized_forms(), vec!["oxford", "york"]);
        assert_eq!(t.mentions().len(), 3);
    }

    #[test]
    fn matching_is_by_normalized_form() {
        let summary = table("a Royal Marine statue");
        let doc = table("Falklands and royal   marine");
        assert_eq!(doc.normalized_forms(), vec!["falklands", "royal marine"]);
        assert_eq!(match_entities(&summary, &doc), vec![Some(1)]);

        let summary = table("statue in Hampshire");
        let doc = table("statue in Portsmouth");
        assert_eq!(match_entities(&summary, &doc), vec![None]);

        assert!(match_entities(&EntityTable::empty(), &doc).is_empty());
    }

    fn raw(doc: &str, summ: &str) -> RawExample {
        RawExample {
            id: "x".into(),
            document: doc.into(),
            summary: summ.into(),
        }
    }

    #[test]
    fn copy_targets_collapse_matched_mentions() {
        let r = raw("the Falklands and Portsmouth and Royal Marine", "a Royal Marine statue");
        let vocab = build_vocabulary(std::slice::from_ref(&r), 100).unwrap();
        let (ex, _) = annotate(&r, &vocab, &Gazetteer::bundled(), &AnnotateOptions::default());
        assert_eq!(ex.doc_entities.entity_id("royal marine"), Some(2));
        let v = vocab.len();
        assert_eq!(
            ex.copy_targets,
            vec![vocab.id("a"), v + 2, vocab.id("statue"), Vocabulary::EOS]
        );
    }

    #[test]
    fn copy_targets_without_entities_are_plain_ids() {
        let r = raw("nothing here", "plain words only");
        let vocab = build_vocabulary(std::slice::from_ref(&r), 100).unwrap();
        let (ex, _) = annotate(&r, &vocab, &Gazetteer::bundled(), &AnnotateOptions::default());
        assert_eq!(ex.copy_targets, ex.tokenized.summary_ids);
    }

    #[test]
    fn unmatched_summary_entity_is_generated_token_by_token() {
        let r = raw("a statue in Portsmouth", "statue in Isle of Wight");
        let vocab = build_vocabulary(std::slice::from_ref(&r), 100).unwrap();
        let (ex, _) = annotate(&r, &vocab, &Gazetteer::bundled(), &AnnotateOptions::default());
        assert_eq!(ex.copy_targets, ex.tokenized.summary_ids);
        assert!(!ex.summary_entities_in_doc());
    }

    #[test]
    fn gr_labels_mark_summary_entities() {
        let doc = table("Oxford York Truro");
        let summary = table("York");
        assert_eq!(build_gr_labels(&doc, &summary), vec![0, 1, 0]);
        assert_eq!(build_gr_labels(&doc, &EntityTable::empty()), vec![0, 0, 0]);
        let all = table("Truro York Oxford Kendal");
        assert_eq!(build_gr_labels(&doc, &all), vec![1, 1, 1]);
    }

    #[test]
    fn annotated_json_roundtrip() {
        let r = raw("Portsmouth , Royal Marine and Portsmouth", "Royal Marine in Hampshire");
        let vocab = build_vocabulary(std::slice::from_ref(&r), 100).unwrap();
        let (ex, _) = annotate(&r, &vocab, &Gazetteer::bundled(), &AnnotateOptions::default());
        let line = ex.to_json_line();
        assert!(line.contains(r#"[0,1,"PLACE","Portsmouth"]"#), "{line}");
        let back = AnnotatedExample::from_json_line(&line).unwrap();
        assert_eq!(back, ex);
    }

    #[test]
    fn gazetteer_parse_errors_carry_line_numbers() {
        let err = Gazetteer::parse("PERSON\tAda\nnonsense\n", Path::new("g.tsv")).unwrap_err();
        assert!(err.to_string().starts_with("g.tsv:2:"), "{err}");
        assert!(Gazetteer::parse("ANIMAL\tcat\n", Path::new("g.tsv")).is_err());
        assert!(Gazetteer::bundled().len() >= 190);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn word() -> impl Strategy<Value = String> {
            prop_oneof![
                Just("Royal".to_string()),
                Just("Marine".to_string()),
                Just("Portsmouth".to_string()),
                Just("Falklands".to_string()),
                Just("War".to_string()),
                Just("Memorial".to_string()),
                Just("March".to_string()),
                Just("3".to_string()),
                Just(",".to_string()),
                Just("2015".to_string()),
                Just("the".to_string()),
                Just("statue".to_string()),
                Just("York".to_string()),
            ]
        }

        proptest! {
            #[test]
            fn mentions_never_overlap(tokens in proptest::collection::vec(word(), 0..30)) {
                let t = extract_entities(&tokens, &Gazetteer::bundled(), 64);
                for w in t.mentions().windows(2) {
                    prop_assert!(w[0].end <= w[1].start);
                }
                for m in t.mentions() {
                    prop_assert!(m.start < m.end && m.end <= tokens.len());
                    prop_assert_eq!(&m.surface, &tokens[m.start..m.end].join(" "));
                }
            }

            #[test]
            fn copy_targets_expand_to_summary(
                doc in proptest::collection::vec(word(), 1..25),
                summ in proptest::collection::vec(word(), 1..15),
            ) {
                let r = RawExample { id: "p".into(), document: doc.join(" "), summary: summ.join(" ") };
                let vocab = build_vocabulary(std::slice::from_ref(&r), 100).unwrap();
                let (ex, _) = annotate(&r, &vocab, &Gazetteer::bundled(), &AnnotateOptions::default());
                let expanded = expand_labels(&ex.copy_targets, &ex.tokenized.doc_ids, &ex.doc_entities, vocab.len());
                prop_assert_eq!(&expanded, &ex.tokenized.summary_ids);
                prop_assert!(ex.copy_targets.len() <= ex.tokenized.summary_ids.len());
                let matched = match_entities(&ex.summary_entities, &ex.doc_entities).iter().flatten().count();
                prop_assert_eq!(ex.gr_labels.iter().map(|&x| x as usize).sum::<usize>(), matched);
            }

            #[test]
            fn matching_iff_normalized_equal(a in proptest::collection::vec(word(), 0..12), b in proptest::collection::vec(word(), 0..12)) {
                let g = Gazetteer::bundled();
                let s = extract_entities(&a, &g, 64);
                let d = extract_entities(&b, &g, 64);
                for (se, de) in match_entities(&s, &d).into_iter().enumerate() {
                    let sn = &s.canonical_mention(se).normalized;
                    match de {
                        Some(de) => prop_assert_eq!(sn, &d.canonical_mention(de).normalized),
                        None => prop_assert!(d.normalized_forms().iter().all(|f| f != sn)),
                    }
                }
            }
        }
    }
}
