//! DocRED / Re-DocRED documents: loading, validation, candidate pairs and
//! corpus statistics.

mod docred;
mod registry;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use docred::{documents_to_json, write_corpus};
pub(crate) use registry::fold;
pub use registry::{bundled_label_variants, is_property_code, load_relation_registry, RelationId, RelationRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntityType {
    #[serde(rename = "PER")]
    Person,
    #[serde(rename = "LOC")]
    Location,
    #[serde(rename = "ORG")]
    Organization,
    #[serde(rename = "TIME")]
    Time,
    #[serde(rename = "NUM")]
    Number,
    #[serde(rename = "MISC")]
    Misc,
}

impl EntityType {
    pub fn tag(self) -> &'static str {
        match self {
            EntityType::Person => "PER",
            EntityType::Location => "LOC",
            EntityType::Organization => "ORG",
            EntityType::Time => "TIME",
            EntityType::Number => "NUM",
            EntityType::Misc => "MISC",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "PER" => EntityType::Person,
            "LOC" => EntityType::Location,
            "ORG" => EntityType::Organization,
            "TIME" => EntityType::Time,
            "NUM" => EntityType::Number,
            "MISC" => EntityType::Misc,
            _ => return None,
        })
    }
}

/// One occurrence of an entity. `span` is a half-open token interval within
/// sentence `sent_id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub name: String,
    pub sent_id: usize,
    pub span: (usize, usize),
    pub etype: EntityType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub index: usize,
    pub mentions: Vec<Mention>,
}

impl Entity {
    /// Longest mention name; the first one wins on ties.
    pub fn representative_name(&self) -> &str {
        let mut best = self.mentions[0].name.as_str();
        for m in &self.mentions[1..] {
            if m.name.chars().count() > best.chars().count() {
                best = &m.name;
            }
        }
        best
    }

    /// Distinct mention names in first-occurrence order.
    pub fn mention_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::with_capacity(self.mentions.len());
        for m in &self.mentions {
            if !names.contains(&m.name.as_str()) {
                names.push(&m.name);
            }
        }
        names
    }
}

/// An annotated fact. `r` holds the relation's property code.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GoldTriple {
    pub h: usize,
    pub t: usize,
    pub r: String,
    pub evidence: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub title: String,
    pub sents: Vec<Vec<String>>,
    pub entities: Vec<Entity>,
    pub gold: Vec<GoldTriple>,
}

impl Document {
    /// Sentences joined with single spaces, tokens within a sentence likewise.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for tok in self.sents.iter().flatten() {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(tok);
        }
        out
    }

    pub fn entity_name(&self, idx: usize) -> Option<&str> {
        self.entities.get(idx).map(Entity::representative_name)
    }

    /// Distinct `(h, t)` pairs carrying at least one gold triple, sorted.
    pub fn gold_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<_> = self.gold.iter().map(|g| (g.h, g.t)).collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    /// Distinct `(h, t, r)` facts, sorted.
    pub fn gold_facts(&self) -> Vec<(usize, usize, String)> {
        let mut facts: Vec<_> = self.gold.iter().map(|g| (g.h, g.t, g.r.clone())).collect();
        facts.sort();
        facts.dedup();
        facts
    }

    /// Checks every structural invariant of the document.
    pub fn validate(&self) -> Result<()> {
        for (i, entity) in self.entities.iter().enumerate() {
            if entity.index != i {
                return Err(Error::invalid_doc(
                    &self.title,
                    format!("vertexSet[{i}]"),
                    format!("entity index {} does not match position", entity.index),
                ));
            }
            if entity.mentions.is_empty() {
                return Err(Error::invalid_doc(&self.title, format!("vertexSet[{i}]"), "entity has no mentions"));
            }
            for (j, m) in entity.mentions.iter().enumerate() {
                self.check_mention(m)
                    .map_err(|msg| Error::invalid_doc(&self.title, format!("vertexSet[{i}][{j}]"), msg))?;
            }
        }
        for (k, g) in self.gold.iter().enumerate() {
            self.check_triple(g).map_err(|msg| Error::invalid_doc(&self.title, format!("labels[{k}]"), msg))?;
        }
        Ok(())
    }

    /// Checks that every gold relation code exists in `registry`.
    pub fn validate_relations(&self, registry: &RelationRegistry) -> Result<()> {
        for (k, g) in self.gold.iter().enumerate() {
            if !registry.contains(&g.r) {
                return Err(Error::invalid_doc(
                    &self.title,
                    format!("labels[{k}].r"),
                    format!("relation {} is not in the registry", g.r),
                ));
            }
        }
        Ok(())
    }

    fn check_mention(&self, m: &Mention) -> std::result::Result<(), String> {
        let Some(sent) = self.sents.get(m.sent_id) else {
            return Err(format!("sent_id {} out of range ({} sentences)", m.sent_id, self.sents.len()));
        };
        let (start, end) = m.span;
        if start >= end || end > sent.len() {
            return Err(format!("pos [{start}, {end}) invalid for sentence of {} tokens", sent.len()));
        }
        if m.name.trim().is_empty() {
            return Err("empty mention name".into());
        }
        Ok(())
    }

    fn check_triple(&self, g: &GoldTriple) -> std::result::Result<(), String> {
        let n = self.entities.len();
        if g.h >= n || g.t >= n {
            return Err(format!("entity index out of range (h={}, t={}, n={n})", g.h, g.t));
        }
        if g.h == g.t {
            return Err(format!("self-loop on entity {}", g.h));
        }
        if !is_property_code(&g.r) {
            return Err(format!("{:?} is not a property code", g.r));
        }
        if let Some(&bad) = g.evidence.iter().find(|&&e| e >= self.sents.len()) {
            return Err(format!("evidence sentence {bad} out of range"));
        }
        Ok(())
    }
}

/// All ordered pairs of distinct entity indices, lexicographic.
pub fn candidate_pairs(doc: &Document) -> Vec<(usize, usize)> {
    let n = doc.entities.len();
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1));
    for h in 0..n {
        for t in 0..n {
            if h != t {
                pairs.push((h, t));
            }
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Require a "labels" key on every record.
    pub expect_gold: bool,
    /// Drop invalid mentions and triples (and documents left without a usable
    /// entity) instead of failing.
    pub permissive: bool,
}

/// What permissive loading threw away.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DropCounts {
    pub documents: usize,
    pub mentions: usize,
    pub triples: usize,
}

impl DropCounts {
    pub fn is_empty(&self) -> bool {
        self.documents == 0 && self.mentions == 0 && self.triples == 0
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub documents: Vec<Document>,
    pub dropped: DropCounts,
}

/// Strict load of a DocRED-format JSON array.
pub fn load_corpus(path: &Path, expect_gold: bool) -> Result<Vec<Document>> {
    let opts = LoadOptions { expect_gold, permissive: false };
    load_corpus_with(path, opts).map(|c| c.documents)
}

pub fn load_corpus_with(path: &Path, opts: LoadOptions) -> Result<LoadedCorpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    docred::parse_corpus(&text, opts).map_err(|e| match e {
        docred::ParseError::Syntax(source) => Error::Json { path: path.to_path_buf(), record: None, source },
        docred::ParseError::Record(record, source) => {
            Error::Json { path: path.to_path_buf(), record: Some(record), source }
        }
        docred::ParseError::Invalid(err) => err,
    })
}

/// Parses corpus JSON held in memory (used for bundled fixtures).
pub fn parse_corpus_str(json: &str, opts: LoadOptions) -> Result<LoadedCorpus> {
    docred::parse_corpus(json, opts).map_err(|e| match e {
        docred::ParseError::Syntax(source) => Error::Json { path: "<memory>".into(), record: None, source },
        docred::ParseError::Record(record, source) => {
            Error::Json { path: "<memory>".into(), record: Some(record), source }
        }
        docred::ParseError::Invalid(err) => err,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub mean_entities: f64,
    pub mean_sentences: f64,
    pub mean_triples: f64,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Number of documents           {}", self.n_docs)?;
        writeln!(f, "Avg. entities per document    {:.1}", self.mean_entities)?;
        writeln!(f, "Avg. sentences per document   {:.1}", self.mean_sentences)?;
        write!(f, "Avg. triples per document     {:.1}", self.mean_triples)
    }
}

pub fn corpus_stats(docs: &[Document]) -> Result<CorpusStats> {
    if docs.is_empty() {
        return Err(Error::Validation("corpus statistics need at least one document".into()));
    }
    let n = docs.len() as f64;
    let sum = |f: fn(&Document) -> usize| docs.iter().map(f).sum::<usize>() as f64;
    Ok(CorpusStats {
        n_docs: docs.len(),
        mean_entities: sum(|d| d.entities.len()) / n,
        mean_sentences: sum(|d| d.sents.len()) / n,
        mean_triples: sum(|d| d.gold.len()) / n,
    })
}

/// Index of documents by title. Fails on duplicate titles.
pub fn index_by_title(docs: &[Document]) -> Result<BTreeMap<&str, &Document>> {
    let mut map = BTreeMap::new();
    for doc in docs {
        if map.insert(doc.title.as_str(), doc).is_some() {
            return Err(Error::Validation(format!("duplicate document title {:?}", doc.title)));
        }
    }
    Ok(map)
}
