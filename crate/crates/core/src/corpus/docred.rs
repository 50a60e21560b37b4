// DocRED JSON schema: title, sents, vertexSet, labels.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Document, DropCounts, Entity, EntityType, GoldTriple, LoadOptions, LoadedCorpus, Mention};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct RawDoc {
    title: String,
    sents: Vec<Vec<String>>,
    #[serde(rename = "vertexSet")]
    vertex_set: Vec<Vec<RawMention>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<RawLabel>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawMention {
    name: String,
    sent_id: usize,
    pos: Vec<usize>,
    #[serde(rename = "type")]
    etype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawLabel {
    h: usize,
    t: usize,
    r: String,
    #[serde(default)]
    evidence: Vec<usize>,
}

pub(super) enum ParseError {
    Syntax(serde_json::Error),
    Record(usize, serde_json::Error),
    Invalid(Error),
}

pub(super) fn parse_corpus(json: &str, opts: LoadOptions) -> std::result::Result<LoadedCorpus, ParseError> {
    let records: Vec<Value> = serde_json::from_str(json).map_err(ParseError::Syntax)?;
    let mut out = LoadedCorpus::default();
    out.documents.reserve(records.len());
    for (i, record) in records.into_iter().enumerate() {
        let raw: RawDoc = serde_json::from_value(record).map_err(|e| ParseError::Record(i, e))?;
        if opts.expect_gold && raw.labels.is_none() {
            return Err(ParseError::Invalid(Error::invalid_doc(&raw.title, "labels", "missing gold labels")));
        }
        match convert(raw, opts.permissive, &mut out.dropped) {
            Ok(Some(doc)) => out.documents.push(doc),
            Ok(None) => out.dropped.documents += 1,
            Err(e) => return Err(ParseError::Invalid(e)),
        }
    }
    if !out.dropped.is_empty() {
        log::warn!(
            "permissive load dropped {} documents, {} mentions, {} triples",
            out.dropped.documents,
            out.dropped.mentions,
            out.dropped.triples
        );
    }
    Ok(out)
}

fn convert(raw: RawDoc, permissive: bool, dropped: &mut DropCounts) -> Result<Option<Document>> {
    let mut doc = Document {
        title: raw.title,
        sents: raw.sents,
        entities: Vec::with_capacity(raw.vertex_set.len()),
        gold: Vec::new(),
    };

    for (i, raw_entity) in raw.vertex_set.into_iter().enumerate() {
        let mut mentions = Vec::with_capacity(raw_entity.len());
        for (j, rm) in raw_entity.into_iter().enumerate() {
            let field = || format!("vertexSet[{i}][{j}]");
            let mention = match to_mention(rm) {
                Ok(m) => m,
                Err(msg) if permissive => {
                    log::debug!("{:?} {}: {msg}", doc.title, field());
                    dropped.mentions += 1;
                    continue;
                }
                Err(msg) => return Err(Error::invalid_doc(&doc.title, field(), msg)),
            };
            match doc.check_mention(&mention) {
                Ok(()) => mentions.push(mention),
                Err(_) if permissive => dropped.mentions += 1,
                Err(msg) => return Err(Error::invalid_doc(&doc.title, field(), msg)),
            }
        }
        if mentions.is_empty() {
            if permissive {
                return Ok(None);
            }
            return Err(Error::invalid_doc(&doc.title, format!("vertexSet[{i}]"), "entity has no mentions"));
        }
        doc.entities.push(Entity { index: i, mentions });
    }

    for (k, label) in raw.labels.unwrap_or_default().into_iter().enumerate() {
        let triple = GoldTriple { h: label.h, t: label.t, r: label.r, evidence: label.evidence };
        match doc.check_triple(&triple) {
            Ok(()) => doc.gold.push(triple),
            Err(_) if permissive => dropped.triples += 1,
            Err(msg) => return Err(Error::invalid_doc(&doc.title, format!("labels[{k}]"), msg)),
        }
    }
    Ok(Some(doc))
}

fn to_mention(rm: RawMention) -> std::result::Result<Mention, String> {
    let [start, end] = rm.pos[..] else {
        return Err(format!("pos must have two elements, got {}", rm.pos.len()));
    };
    let etype = EntityType::from_tag(&rm.etype).ok_or_else(|| format!("unknown entity type {:?}", rm.etype))?;
    Ok(Mention { name: rm.name, sent_id: rm.sent_id, span: (start, end), etype })
}

fn to_raw(doc: &Document) -> RawDoc {
    RawDoc {
        title: doc.title.clone(),
        sents: doc.sents.clone(),
        vertex_set: doc
            .entities
            .iter()
            .map(|e| {
                e.mentions
                    .iter()
                    .map(|m| RawMention {
                        name: m.name.clone(),
                        sent_id: m.sent_id,
                        pos: vec![m.span.0, m.span.1],
                        etype: m.etype.tag().to_string(),
                    })
                    .collect()
            })
            .collect(),
        labels: Some(
            doc.gold
                .iter()
                .map(|g| RawLabel { h: g.h, t: g.t, r: g.r.clone(), evidence: g.evidence.clone() })
                .collect(),
        ),
    }
}

/// Serializes documents back into the DocRED schema.
pub fn documents_to_json(docs: &[Document]) -> String {
    let raw: Vec<RawDoc> = docs.iter().map(to_raw).collect();
    serde_json::to_string(&raw).expect("documents serialize")
}

pub fn write_corpus(docs: &[Document], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(documents_to_json(docs).as_bytes()).map_err(|e| Error::io(path, e))
}
