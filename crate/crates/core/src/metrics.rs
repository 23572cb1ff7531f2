//! ROUGE and entity-level precision, recall and source precision.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::entity::EntityTable;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn prf(overlap: usize, gen_total: usize, ref_total: usize) -> Prf {
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let p = ratio(overlap, gen_total);
    let r = ratio(overlap, ref_total);
    Prf {
        precision: p,
        recall: r,
        f1: harmonic_mean(p, r),
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    out
}

/// Clipped n-gram overlap.
pub fn rouge_n<S: AsRef<str>>(gen: &[S], reference: &[S], n: usize) -> Prf {
    let g = ngram_counts(gen, n);
    let r = ngram_counts(reference, n);
    let overlap = g.iter().map(|(k, &c)| c.min(r.get(k).copied().unwrap_or(0))).sum();
    prf(overlap, g.values().sum(), r.values().sum())
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<S: AsRef<str>>(gen: &[S], reference: &[S]) -> Prf {
    prf(lcs_len(gen, reference), gen.len(), reference.len())
}

/// Set sizes behind the entity scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCounts {
    pub doc: usize,
    pub reference: usize,
    pub generated: usize,
    /// `|NE(S_ref) ∩ NE(S_gen)|`
    pub gen_in_reference: usize,
    /// `|NE(D) ∩ NE(S_gen)|`
    pub gen_in_doc: usize,
}

/// `None` marks a score whose denominator set is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntityScores {
    pub sum_p: Option<f64>,
    pub sum_r: Option<f64>,
    pub sum_f: Option<f64>,
    pub src_p: Option<f64>,
    pub counts: EntityCounts,
}

/// Scores over distinct normalized entity forms.
pub fn entity_metrics(gen: &EntityTable, reference: &EntityTable, doc: &EntityTable) -> EntityScores {
    let g = gen.entity_set();
    let r = reference.entity_set();
    let d = doc.entity_set();
    let counts = EntityCounts {
        doc: d.len(),
        reference: r.len(),
        generated: g.len(),
        gen_in_reference: g.intersection(&r).count(),
        gen_in_doc: g.intersection(&d).count(),
    };
    if counts.generated == 0 {
        return EntityScores {
            sum_p: None,
            sum_r: None,
            sum_f: None,
            src_p: None,
            counts,
        };
    }
    let sum_p = counts.gen_in_reference as f64 / counts.generated as f64;
    let sum_r = (counts.reference > 0).then(|| counts.gen_in_reference as f64 / counts.reference as f64);
    EntityScores {
        sum_p: Some(sum_p),
        sum_r,
        // 2pr / (p + r) reduced to counts: 2|G ∩ R| / (|G| + |R|)
        sum_f: sum_r.map(|_| 2.0 * counts.gen_in_reference as f64 / (counts.generated + counts.reference) as f64),
        src_p: Some(counts.gen_in_doc as f64 / counts.generated as f64),
        counts,
    }
}

/// Number of examples left out of each mean because the field was undefined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusions {
    pub sum_p: usize,
    pub sum_r: usize,
    pub sum_f: usize,
    pub src_p: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub examples: usize,
    pub rouge1: Prf,
    pub rouge2: Prf,
    #[serde(rename = "rougeL")]
    pub rouge_l: Prf,
    pub sum_p: Option<f64>,
    pub sum_r: Option<f64>,
    pub sum_f: Option<f64>,
    pub src_p: Option<f64>,
    pub counts: EntityCounts,
    pub excluded: Exclusions,
}

/// Per-example report. ROUGE compares lowercased tokens.
pub fn example_report<S: AsRef<str>>(
    gen_tokens: &[S],
    ref_tokens: &[S],
    gen_entities: &EntityTable,
    ref_entities: &EntityTable,
    doc_entities: &EntityTable,
) -> MetricsReport {
    let lower = |t: &[S]| t.iter().map(|s| s.as_ref().to_lowercase()).collect::<Vec<_>>();
    let (g, r) = (lower(gen_tokens), lower(ref_tokens));
    let e = entity_metrics(gen_entities, ref_entities, doc_entities);
    let miss = |v: Option<f64>| usize::from(v.is_none());
    MetricsReport {
        examples: 1,
        rouge1: rouge_n(&g, &r, 1),
        rouge2: rouge_n(&g, &r, 2),
        rouge_l: rouge_l(&g, &r),
        sum_p: e.sum_p,
        sum_r: e.sum_r,
        sum_f: e.sum_f,
        src_p: e.src_p,
        counts: e.counts,
        excluded: Exclusions {
            sum_p: miss(e.sum_p),
            sum_r: miss(e.sum_r),
            sum_f: miss(e.sum_f),
            src_p: miss(e.src_p),
        },
    }
}

fn mean_defined(values: impl Iterator<Item = (Option<f64>, usize)>) -> Option<f64> {
    let (mut total, mut weight) = (0.0, 0usize);
    for (v, w) in values {
        if let Some(v) = v {
            total += v * w as f64;
            weight += w;
        }
    }
    (weight > 0).then(|| total / weight as f64)
}

/// Corpus-level means weighted by each report's example count; undefined
/// entity scores are excluded and counted.
pub fn aggregate(reports: &[MetricsReport]) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::Input("cannot aggregate zero reports".into()));
    }
    if reports.len() == 1 {
        return Ok(reports[0]);
    }
    let examples: usize = reports.iter().map(|r| r.examples).sum();
    let prf_mean = |f: fn(&MetricsReport) -> Prf| {
        let n = examples as f64;
        let sum = |g: fn(&Prf) -> f64| reports.iter().map(|r| g(&f(r)) * r.examples as f64).sum::<f64>() / n;
        Prf {
            precision: sum(|p| p.precision),
            recall: sum(|p| p.recall),
            f1: sum(|p| p.f1),
        }
    };
    // a report's defined value stands for its examples minus its exclusions
    let field = |v: fn(&MetricsReport) -> Option<f64>, x: fn(&Exclusions) -> usize| {
        mean_defined(reports.iter().map(|r| (v(r), r.examples - x(&r.excluded))))
    };
    let sum_counts = |f: fn(&EntityCounts) -> usize| reports.iter().map(|r| f(&r.counts)).sum();
    let sum_excl = |f: fn(&Exclusions) -> usize| reports.iter().map(|r| f(&r.excluded)).sum();
    Ok(MetricsReport {
        examples,
        rouge1: prf_mean(|r| r.rouge1),
        rouge2: prf_mean(|r| r.rouge2),
        rouge_l: prf_mean(|r| r.rouge_l),
        sum_p: field(|r| r.sum_p, |e| e.sum_p),
        sum_r: field(|r| r.sum_r, |e| e.sum_r),
        sum_f: field(|r| r.sum_f, |e| e.sum_f),
        src_p: field(|r| r.src_p, |e| e.src_p),
        counts: EntityCounts {
            doc: sum_counts(|c| c.doc),
            reference: sum_counts(|c| c.reference),
            generated: sum_counts(|c| c.generated),
            gen_in_reference: sum_counts(|c| c.gen_in_reference),
            gen_in_doc: sum_counts(|c| c.gen_in_doc),
        },
        excluded: Exclusions {
            sum_p: sum_excl(|e| e.sum_p),
            sum_r: sum_excl(|e| e.sum_r),
            sum_f: sum_excl(|e| e.sum_f),
            src_p: sum_excl(|e| e.src_p),
        },
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// `metric<TAB>value<TAB>excluded`, one row per metric.
    pub fn to_tsv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "UNDEFINED".to_string(), |x| format!("{x:.6}"));
        let mut out = String::from("metric\tvalue\texcluded\n");
        let mut row = |name: &str, v: Option<f64>, excl: usize| {
            let _ = writeln!(out, "{name}\t{}\t{excl}", fmt(v));
        };
        for (name, p) in [("rouge1", self.rouge1), ("rouge2", self.rouge2), ("rougeL", self.rouge_l)] {
            row(&format!("{name}_p"), Some(p.precision), 0);
            row(&format!("{name}_r"), Some(p.recall), 0);
            row(&format!("{name}_f"), Some(p.f1), 0);
        }
        row("sum_p", self.sum_p, self.excluded.sum_p);
        row("sum_r", self.sum_r, self.excluded.sum_r);
        row("sum_f", self.sum_f, self.excluded.sum_f);
        row("src_p", self.src_p, self.excluded.src_p);
        for (name, c) in [
            ("ne_doc", self.counts.doc),
            ("ne_ref", self.counts.reference),
            ("ne_gen", self.counts.generated),
            ("ne_gen_in_ref", self.counts.gen_in_reference),
            ("ne_gen_in_doc", self.counts.gen_in_doc),
            ("examples", self.examples),
        ] {
            let _ = writeln!(out, "{name}\t{c}\t0");
        }
        out
    }

    pub fn write(&self, json_path: &Path, tsv_path: &Path) -> Result<()> {
        fs::write(json_path, self.to_json()).map_err(|e| Error::io(json_path, e))?;
        fs::write(tsv_path, self.to_tsv()).map_err(|e| Error::io(tsv_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entity::{EntityKind, EntityMention};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn table(names: &[&str]) -> EntityTable {
        let tokens: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let mentions = (0..tokens.len())
            .map(|i| EntityMention::new(&tokens, i, i + 1, EntityKind::Place))
            .collect();
        EntityTable::from_mentions(mentions, usize::MAX)
    }

    #[test]
    fn rouge_examples() {
        let x = toks("the cat sat on the mat");
        for n in [1, 2] {
            assert_eq!(rouge_n(&x, &x, n), Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        }
        let r1 = rouge_n(&toks("the cat"), &toks("the cat sat"), 1);
        assert_eq!(r1.precision, 1.0);
        assert!((r1.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((r1.f1 - 0.8).abs() < 1e-15);
        assert_eq!(rouge_n(&toks("a b"), &toks("c d"), 1), Prf::default());
        assert_eq!(rouge_n(&toks("a"), &toks("a"), 2), Prf::default());
        // clipping: repeated generated token only matches once
        assert_eq!(rouge_n(&toks("a a a"), &toks("a b"), 1).precision, 1.0 / 3.0);
    }

    #[test]
    fn rouge_l_examples() {
        let l = rouge_l(&toks("a b c"), &toks("a c"));
        assert!((l.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(l.recall, 1.0);
        assert_eq!(rouge_l(&toks("a b"), &[] as &[String]), Prf::default());
        let x = toks("x y z");
        assert_eq!(rouge_l(&x, &x).f1, 1.0);
    }

    #[test]
    fn entity_metric_examples() {
        let s = entity_metrics(&table(&["a", "b", "c"]), &table(&["a", "b"]), &table(&["a", "b", "d"]));
        assert!((s.sum_p.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.sum_r, Some(1.0));
        assert!((s.sum_f.unwrap() - 0.8).abs() < 1e-15);
        assert!((s.src_p.unwrap() - 2.0 / 3.0).abs() < 1e-15);

        let s = entity_metrics(&table(&["a"]), &table(&["z"]), &table(&["a", "q"]));
        assert_eq!(s.src_p, Some(1.0));

        let s = entity_metrics(&table(&[]), &table(&["a"]), &table(&["a"]));
        assert_eq!((s.sum_p, s.sum_r, s.sum_f, s.src_p), (None, None, None, None));

        let s = entity_metrics(&table(&["a"]), &table(&[]), &table(&[]));
        assert_eq!((s.sum_p, s.sum_r, s.sum_f, s.src_p), (Some(0.0), None, None, Some(0.0)));

        // repeated mentions count once
        let s = entity_metrics(&table(&["a", "A"]), &table(&["a"]), &table(&["a"]));
        assert_eq!(s.counts.generated, 1);
        assert_eq!(s.sum_p, Some(1.0));
    }

    fn report(src_p: Option<f64>) -> MetricsReport {
        MetricsReport {
            examples: 1,
            rouge1: Prf::default(),
            rouge2: Prf::default(),
            rouge_l: Prf::default(),
            sum_p: src_p,
            sum_r: None,
            sum_f: None,
            src_p,
            counts: EntityCounts::default(),
            excluded: Exclusions {
                sum_p: usize::from(src_p.is_none()),
                sum_r: 1,
                sum_f: 1,
                src_p: usize::from(src_p.is_none()),
            },
        }
    }

    #[test]
    fn aggregate_rules() {
        let r = report(Some(0.4));
        assert_eq!(aggregate(&[r]).unwrap(), r);
        let a = aggregate(&[report(Some(1.0)), report(Some(0.5))]).unwrap();
        assert_eq!(a.src_p, Some(0.75));
        assert_eq!(a.examples, 2);
        let a = aggregate(&[report(Some(0.3)), report(None)]).unwrap();
        assert_eq!(a.src_p, Some(0.3));
        assert_eq!(a.excluded.src_p, 1);
        assert_eq!(a.sum_r, None);
        assert_eq!(a.excluded.sum_r, 2);
        assert!(aggregate(&[]).is_err());
        // nesting aggregates keeps example weighting
        let inner = aggregate(&[report(Some(1.0)), report(Some(1.0))]).unwrap();
        let outer = aggregate(&[inner, report(Some(0.0)), report(None)]).unwrap();
        assert!((outer.src_p.unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tsv_marks_undefined() {
        let tsv = report(None).to_tsv();
        assert!(tsv.contains("src_p\tUNDEFINED\t1"));
        assert!(tsv.lines().count() > 15);
        let json = report(None).to_json();
        assert!(json.contains("\"src_p\": null"));
        assert!(json.contains("\"rougeL\""));
    }

    proptest::proptest! {
        #[test]
        fn rouge_l_is_transposed(a in proptest::collection::vec(0u8..4, 0..12), b in proptest::collection::vec(0u8..4, 0..12)) {
            let a: Vec<String> = a.iter().map(u8::to_string).collect();
            let b: Vec<String> = b.iter().map(u8::to_string).collect();
            proptest::prop_assert_eq!(rouge_l(&a, &b).precision, rouge_l(&b, &a).recall);
        }

        #[test]
        fn adding_matched_entity_never_lowers_recall(
            gen in proptest::collection::btree_set(0u8..8, 0..6),
            refs in proptest::collection::btree_set(0u8..8, 1..6),
        ) {
            let name = |v: &u8| format!("e{v}");
            let g: Vec<String> = gen.iter().map(name).collect();
            let r: Vec<String> = refs.iter().map(name).collect();
            let doc = table(&[]);
            let gt: Vec<&str> = g.iter().map(String::as_str).collect();
            let rt: Vec<&str> = r.iter().map(String::as_str).collect();
            let before = entity_metrics(&table(&gt), &table(&rt), &doc).sum_r.unwrap_or(0.0);
            let mut more = gt.clone();
            more.push(rt[0]);
            let after = entity_metrics(&table(&more), &table(&rt), &doc).sum_r.unwrap();
            proptest::prop_assert!(after >= before);
        }
    }
}
