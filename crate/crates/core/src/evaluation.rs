//! DocRED-style scoring: micro P/R/F1, Ign F1, per-relation tables and
//! stage-count reports.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{fold, index_by_title, Document, RelationRegistry};
use crate::error::{Error, Result};
use crate::parsing::GroundingDiagnostics;
use crate::pipeline::{DocumentResult, StageCounts, StageDiagnostics};

/// One predicted fact in DocRED submission form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Prediction {
    pub title: String,
    pub h_idx: usize,
    pub t_idx: usize,
    pub r: String,
}

/// 0/0 is defined as 0.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted: usize,
    pub correct: usize,
    pub gold: usize,
}

impl Metrics {
    pub fn from_counts(predicted: usize, correct: usize, gold: usize) -> Self {
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        Self { precision, recall, f1: f1(precision, recall), predicted, correct, gold }
    }
}

/// Precision with correct in-train predictions removed from both sides of
/// the ratio; recall is the plain recall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgnMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted: usize,
    pub correct: usize,
    pub gold: usize,
    pub correct_in_train: usize,
}

type Fact = (String, usize, usize, String);

struct Checked<'a> {
    docs: BTreeMap<&'a str, &'a Document>,
    gold: HashSet<Fact>,
    predictions: Vec<&'a Prediction>,
}

fn check<'a>(predictions: &'a [Prediction], gold_docs: &'a [Document]) -> Result<Checked<'a>> {
    let docs = index_by_title(gold_docs)?;
    if !gold_docs.is_empty() && gold_docs.iter().all(|d| d.gold.is_empty()) {
        return Err(Error::Validation("gold documents carry no labels (unlabeled split?)".into()));
    }
    let mut offenders = Vec::new();
    let mut seen = HashSet::new();
    let mut unique = Vec::new();
    for p in predictions {
        match docs.get(p.title.as_str()) {
            None => offenders.push(format!("unknown title {:?}", p.title)),
            Some(doc) if p.h_idx >= doc.entities.len() || p.t_idx >= doc.entities.len() => offenders.push(format!(
                "{:?}: index ({}, {}) out of bounds for {} entities",
                p.title,
                p.h_idx,
                p.t_idx,
                doc.entities.len()
            )),
            Some(_) => {
                if seen.insert(p) {
                    unique.push(p);
                }
            }
        }
    }
    if !offenders.is_empty() {
        let total = offenders.len();
        offenders.truncate(10);
        let more = if total > 10 { format!(" (and {} more)", total - 10) } else { String::new() };
        return Err(Error::Validation(format!("{total} invalid predictions: {}{more}", offenders.join("; "))));
    }
    let gold = gold_docs.iter().flat_map(|d| d.gold.iter().map(|g| (d.title.clone(), g.h, g.t, g.r.clone()))).collect();
    Ok(Checked { docs, gold, predictions: unique })
}

fn fact(p: &Prediction) -> Fact {
    (p.title.clone(), p.h_idx, p.t_idx, p.r.clone())
}

/// Micro P/R/F1. Duplicate predictions count once.
pub fn score(predictions: &[Prediction], gold_docs: &[Document]) -> Result<Metrics> {
    let c = check(predictions, gold_docs)?;
    let correct = c.predictions.iter().filter(|p| c.gold.contains(&fact(p))).count();
    Ok(Metrics::from_counts(c.predictions.len(), correct, c.gold.len()))
}

/// (head mention, tail mention, relation) with names case-folded.
pub type TrainFacts = HashSet<(String, String, String)>;

/// Every gold triple of the training documents, expanded over all pairs of
/// head and tail mention names.
pub fn build_train_fact_set(train_docs: &[Document]) -> TrainFacts {
    let mut facts = HashSet::new();
    for doc in train_docs {
        for g in &doc.gold {
            for h in doc.entities[g.h].mention_names() {
                for t in doc.entities[g.t].mention_names() {
                    facts.insert((fold(h), fold(t), g.r.clone()));
                }
            }
        }
    }
    facts
}

fn in_train(doc: &Document, p: &Prediction, facts: &TrainFacts) -> bool {
    let heads = doc.entities[p.h_idx].mention_names();
    let tails = doc.entities[p.t_idx].mention_names();
    heads.iter().any(|h| {
        let h = fold(h);
        tails.iter().any(|t| facts.contains(&(h.clone(), fold(t), p.r.clone())))
    })
}

pub fn ign_score(predictions: &[Prediction], gold_docs: &[Document], train_facts: &TrainFacts) -> Result<IgnMetrics> {
    let c = check(predictions, gold_docs)?;
    let mut correct = 0;
    let mut correct_in_train = 0;
    for p in &c.predictions {
        if c.gold.contains(&fact(p)) {
            correct += 1;
            if in_train(c.docs[p.title.as_str()], p, train_facts) {
                correct_in_train += 1;
            }
        }
    }
    let predicted = c.predictions.len();
    let precision = ratio(correct - correct_in_train, predicted - correct_in_train);
    let recall = ratio(correct, c.gold.len());
    Ok(IgnMetrics {
        precision,
        recall,
        f1: f1(precision, recall),
        predicted,
        correct,
        gold: c.gold.len(),
        correct_in_train,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationScore {
    pub relation: String,
    pub name: Option<String>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted: usize,
    pub correct: usize,
    /// Gold count.
    pub support: usize,
}

/// Per-relation scores for every relation that is predicted or gold,
/// sorted by F1 descending, then support descending, then code.
pub fn per_relation_f1(
    predictions: &[Prediction],
    gold_docs: &[Document],
    registry: Option<&RelationRegistry>,
) -> Result<Vec<RelationScore>> {
    let c = check(predictions, gold_docs)?;
    let mut counts: HashMap<&str, (usize, usize, usize)> = HashMap::new();
    for p in &c.predictions {
        let e = counts.entry(p.r.as_str()).or_default();
        e.0 += 1;
        if c.gold.contains(&fact(p)) {
            e.1 += 1;
        }
    }
    for (_, _, _, r) in &c.gold {
        counts.entry(r.as_str()).or_default().2 += 1;
    }
    let mut rows: Vec<RelationScore> = counts
        .into_iter()
        .map(|(r, (predicted, correct, support))| {
            let m = Metrics::from_counts(predicted, correct, support);
            RelationScore {
                relation: r.to_string(),
                name: registry.and_then(|reg| reg.name_of(r)).map(str::to_string),
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                predicted,
                correct,
                support,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.f1.total_cmp(&a.f1).then(b.support.cmp(&a.support)).then(a.relation.cmp(&b.relation)));
    Ok(rows)
}

pub fn relation_table_csv(rows: &[RelationScore]) -> String {
    let mut out = String::from("relation,name,precision,recall,f1,predicted,correct,support\n");
    for r in rows {
        let name = r.name.as_deref().unwrap_or("");
        let name =
            if name.contains([',', '"']) { format!("\"{}\"", name.replace('"', "\"\"")) } else { name.to_string() };
        let _ = writeln!(
            out,
            "{},{name},{:.4},{:.4},{:.4},{},{},{}",
            r.relation, r.precision, r.recall, r.f1, r.predicted, r.correct, r.support
        );
    }
    out
}

/// Contents of the metrics JSON file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ign_precision: f64,
    pub ign_recall: f64,
    pub ign_f1: f64,
    pub predicted: usize,
    pub correct: usize,
    pub gold: usize,
    pub correct_in_train: usize,
}

impl MetricsReport {
    pub fn new(m: &Metrics, ign: &IgnMetrics) -> Self {
        Self {
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            ign_precision: ign.precision,
            ign_recall: ign.recall,
            ign_f1: ign.f1,
            predicted: m.predicted,
            correct: m.correct,
            gold: m.gold,
            correct_in_train: ign.correct_in_train,
        }
    }
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.to_path_buf(), record: None, source: e })
}

/// Gold triples of `docs` as predictions, sorted.
pub fn gold_predictions(docs: &[Document]) -> Vec<Prediction> {
    let mut out: Vec<Prediction> = docs
        .iter()
        .flat_map(|d| {
            d.gold_facts().into_iter().map(|(h, t, r)| Prediction { title: d.title.clone(), h_idx: h, t_idx: t, r })
        })
        .collect();
    out.sort();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub documents: usize,
    pub incomplete: usize,
    pub counts: StageCounts,
    pub diagnostics: StageDiagnostics,
}

/// Sums stage counts and diagnostics over per-document results.
pub fn stage_report(results: &[DocumentResult]) -> StageReport {
    let mut counts = StageCounts::default();
    let mut diagnostics = StageDiagnostics::default();
    for r in results {
        counts += r.stage_counts;
        diagnostics += r.diagnostics;
    }
    StageReport {
        documents: results.len(),
        incomplete: results.iter().filter(|r| !r.complete).count(),
        counts,
        diagnostics,
    }
}

impl StageReport {
    fn rows(&self) -> Vec<(String, usize)> {
        let c = &self.counts;
        let mut rows: Vec<(String, usize)> = vec![
            ("documents".into(), self.documents),
            ("incomplete_documents".into(), self.incomplete),
            ("backend_calls".into(), c.calls),
            ("epf_pairs".into(), c.epf_pairs),
            ("epf_triples".into(), c.epf_triples),
            ("head_candidates".into(), c.head_candidates),
            ("tail_candidates".into(), c.tail_candidates),
            ("rm_triples".into(), c.rm_triples),
            ("rm_added".into(), c.rm_added),
            ("fused_triples".into(), c.fused),
            ("off_target_dropped".into(), c.off_target),
        ];
        let d = &self.diagnostics;
        for (stage, diag) in [("epf", d.epf), ("rc", d.rc), ("head", d.head), ("tail", d.tail)] {
            for (name, v) in diag_fields(&diag) {
                rows.push((format!("{stage}.{name}"), v));
            }
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,count\n");
        for (k, v) in self.rows() {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    pub fn to_text(&self) -> String {
        let rows = self.rows();
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v:>8}");
        }
        out
    }
}

fn diag_fields(d: &GroundingDiagnostics) -> [(&'static str, usize); 6] {
    [
        ("malformed_tuples", d.malformed_tuples),
        ("unresolved_entities", d.unresolved_entities),
        ("out_of_set_relations", d.out_of_set_relations),
        ("self_loops_dropped", d.self_loops_dropped),
        ("duplicates_dropped", d.duplicates_dropped),
        ("negative_judgments", d.negative_judgments),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Entity, EntityType, GoldTriple, Mention};
    use crate::fixtures::selftest_corpus;
    use proptest::prelude::*;

    fn entity(index: usize, names: &[&str]) -> Entity {
        Entity {
            index,
            mentions: names
                .iter()
                .map(|n| Mention { name: n.to_string(), sent_id: 0, span: (0, 1), etype: EntityType::Misc })
                .collect(),
        }
    }

    fn doc(title: &str, names: &[&[&str]], gold: &[(usize, usize, &str)]) -> Document {
        Document {
            title: title.into(),
            sents: vec![vec!["x".into()]],
            entities: names.iter().enumerate().map(|(i, n)| entity(i, n)).collect(),
            gold: gold.iter().map(|&(h, t, r)| GoldTriple { h, t, r: r.into(), evidence: vec![] }).collect(),
        }
    }

    fn pred(title: &str, h: usize, t: usize, r: &str) -> Prediction {
        Prediction { title: title.into(), h_idx: h, t_idx: t, r: r.into() }
    }

    #[test]
    fn hand_counted_scores() {
        let docs = vec![doc("A", &[&["a"], &["b"], &["c"]], &[(0, 1, "P1"), (1, 2, "P1")])];
        let m = score(&[pred("A", 0, 1, "P1"), pred("A", 0, 2, "P1")], &docs).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
        let empty = score(&[], &docs).unwrap();
        assert_eq!((empty.precision, empty.recall, empty.f1), (0.0, 0.0, 0.0));
        let perfect = score(&gold_predictions(&docs), &docs).unwrap();
        assert_eq!(perfect.f1, 1.0);
    }

    #[test]
    fn invalid_predictions_are_listed() {
        let docs = vec![doc("A", &[&["a"], &["b"]], &[(0, 1, "P1")])];
        let err = score(&[pred("Z", 0, 1, "P1"), pred("A", 0, 9, "P1")], &docs).unwrap_err().to_string();
        assert!(err.contains("\"Z\"") && err.contains("out of bounds"), "{err}");
        let unlabeled = vec![doc("A", &[&["a"], &["b"]], &[])];
        assert!(score(&[], &unlabeled).is_err());
    }

    #[test]
    fn train_facts_expand_mentions() {
        let train = vec![doc("T", &[&["Paris", "paris", "City of Light"], &["France"]], &[(0, 1, "P17")])];
        let facts = build_train_fact_set(&train);
        assert_eq!(facts.len(), 2);
        assert!(facts.contains(&("city of light".into(), "france".into(), "P17".into())));
        assert!(build_train_fact_set(&[]).is_empty());
    }

    #[test]
    fn ign_fixture() {
        // three predictions, two correct, one of those already in train; gold has two facts
        let train = vec![doc("T", &[&["Alpha"], &["Beta"]], &[(0, 1, "P1")])];
        let dev = vec![doc("D", &[&["alpha", "A."], &["Beta"], &["Gamma"]], &[(0, 1, "P1"), (1, 2, "P2")])];
        let preds = [pred("D", 0, 1, "P1"), pred("D", 1, 2, "P2"), pred("D", 2, 0, "P2")];
        let ign = ign_score(&preds, &dev, &build_train_fact_set(&train)).unwrap();
        assert_eq!(ign.correct_in_train, 1);
        assert_eq!(ign.precision, 0.5);
        assert_eq!(ign.recall, 1.0);
        assert!((ign.f1 - 2.0 / 3.0).abs() < 1e-12);

        let plain = score(&preds, &dev).unwrap();
        let no_train = ign_score(&preds, &dev, &TrainFacts::new()).unwrap();
        assert_eq!((no_train.precision, no_train.recall, no_train.f1), (plain.precision, plain.recall, plain.f1));

        let only_train = ign_score(&preds[..1], &dev, &build_train_fact_set(&train)).unwrap();
        assert_eq!(only_train.precision, 0.0);
    }

    #[test]
    fn stage_report_renders() {
        let mut r = DocumentResult {
            title: "A".into(),
            complete: false,
            epf_pairs: vec![],
            epf_triples: vec![],
            rm_triples: vec![],
            fused_triples: vec![],
            stage_counts: StageCounts { epf_triples: 3, rm_added: 2, fused: 5, ..Default::default() },
            diagnostics: StageDiagnostics::default(),
            errors: vec![],
        };
        r.diagnostics.rc.out_of_set_relations = 4;
        let mut r2 = r.clone();
        r2.complete = true;
        let report = stage_report(&[r, r2]);
        assert_eq!((report.documents, report.incomplete, report.counts.fused), (2, 1, 10));
        let csv = report.to_csv();
        assert!(csv.contains("epf_triples,6\n") && csv.contains("rc.out_of_set_relations,8\n"));
        assert!(report.to_text().contains("fused_triples"));
    }

    #[test]
    fn relation_csv_quotes_commas() {
        let docs = selftest_corpus();
        let reg = RelationRegistry::docred();
        let rows = per_relation_f1(&gold_predictions(&docs), &docs, Some(&reg)).unwrap();
        assert!(rows.iter().all(|r| r.f1 == 1.0));
        let csv = relation_table_csv(&rows);
        assert!(csv.contains("\"dissolved, abolished or demolished\""));
    }

    fn micro_corpus() -> impl Strategy<Value = (Vec<Document>, Vec<Prediction>)> {
        let docs = prop::collection::vec(
            (2..6usize).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n, 0..3usize), 1..6))),
            1..4,
        );
        docs.prop_flat_map(|specs| {
            let docs: Vec<Document> = specs
                .iter()
                .enumerate()
                .map(|(i, (n, gold))| {
                    let names: Vec<Vec<String>> = (0..*n).map(|e| vec![format!("e{e}")]).collect();
                    let refs: Vec<Vec<&str>> = names.iter().map(|v| v.iter().map(String::as_str).collect()).collect();
                    let slices: Vec<&[&str]> = refs.iter().map(Vec::as_slice).collect();
                    let g: Vec<(usize, usize, &str)> = gold
                        .iter()
                        .filter(|(h, t, _)| h != t)
                        .map(|&(h, t, r)| (h, t, ["P1", "P2", "P3"][r]))
                        .collect();
                    doc(&format!("d{i}"), &slices, &g)
                })
                .collect();
            let sizes: Vec<usize> = docs.iter().map(|d| d.entities.len()).collect();
            let preds =
                prop::collection::vec((0..docs.len(), 0..6usize, 0..6usize, 0..3usize), 0..15).prop_map(move |raw| {
                    raw.into_iter()
                        .map(|(d, h, t, r)| pred(&format!("d{d}"), h % sizes[d], t % sizes[d], ["P1", "P2", "P3"][r]))
                        .collect::<Vec<_>>()
                });
            (Just(docs), preds)
        })
    }

    proptest! {
        #[test]
        fn score_is_order_and_duplicate_invariant((docs, preds) in micro_corpus()) {
            prop_assume!(docs.iter().any(|d| !d.gold.is_empty()));
            let base = score(&preds, &docs).unwrap();
            let mut shuffled = preds.clone();
            shuffled.reverse();
            shuffled.extend(preds.iter().cloned());
            prop_assert_eq!(score(&shuffled, &docs).unwrap(), base);
            let rows = per_relation_f1(&preds, &docs, None).unwrap();
            prop_assert_eq!(rows.iter().map(|r| r.correct).sum::<usize>(), base.correct);
        }

        #[test]
        fn ign_shrinks_both_sides_equally((docs, preds) in micro_corpus()) {
            prop_assume!(docs.iter().any(|d| !d.gold.is_empty()));
            let train = build_train_fact_set(&docs[..1]);
            let plain = score(&preds, &docs).unwrap();
            let ign = ign_score(&preds, &docs, &train).unwrap();
            prop_assert_eq!(ign.recall, plain.recall);
            prop_assert!(ign.correct_in_train <= ign.correct);
            let expected = ratio(plain.correct - ign.correct_in_train, plain.predicted - ign.correct_in_train);
            prop_assert_eq!(ign.precision, expected);
        }
    }
}
