//! Instruction-format training data for the four tasks.
//!
//! Targets use exactly the tuple grammar the parsers accept, so every record
//! can be checked by parsing its own output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{candidate_pairs, Document, RelationRegistry};
use crate::error::{Error, Result};
use crate::prompt::{Prompt, PromptSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

impl InstructionRecord {
    fn new(prompt: Prompt, output: String) -> Self {
        Self { instruction: prompt.instruction, input: prompt.input, output }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// One record per document listing all sampled pairs.
    #[default]
    DocumentLevel,
    /// One record per sampled pair, target "(h, 1, t)" or "(h, 0, t)".
    PerPair,
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "document-level" | "document" => Ok(SamplingMode::DocumentLevel),
            "per-pair" | "pair" => Ok(SamplingMode::PerPair),
            other => {
                Err(Error::Validation(format!("unknown sampling mode {other:?} (expected document-level or per-pair)")))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Negatives per positive pair.
    pub neg_ratio: f64,
    pub seed: u64,
    pub mode: SamplingMode,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { neg_ratio: 1.0, seed: 13, mode: SamplingMode::DocumentLevel }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.neg_ratio.is_finite() || self.neg_ratio < 0.0 {
            return Err(Error::Validation(format!("neg_ratio {} must be a finite number >= 0", self.neg_ratio)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ExportDiagnostics {
    pub skipped_no_entities: usize,
    pub skipped_no_gold: usize,
    /// Documents with fewer unrelated pairs than the ratio asked for.
    pub negatives_short: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<InstructionRecord>,
    pub diagnostics: ExportDiagnostics,
}

fn doc_rng(seed: u64, title: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(b"epf-negatives");
    h.update(title.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn pair_line(doc: &Document, h: usize, label: &str, t: usize) -> String {
    format!("({}, {label}, {})", doc.entities[h].representative_name(), doc.entities[t].representative_name())
}

fn relation_name<'r>(registry: &'r RelationRegistry, doc: &Document, code: &str) -> Result<&'r str> {
    registry
        .name_of(code)
        .ok_or_else(|| Error::invalid_doc(&doc.title, "labels", format!("relation {code} not in registry")))
}

fn position(registry: &RelationRegistry, code: &str) -> usize {
    registry.position(code).unwrap_or(usize::MAX)
}

/// Positives plus sampled unrelated pairs for one document, shuffled.
/// Returns the listed pairs and whether the pool ran short.
pub fn sample_epf_pairs(doc: &Document, cfg: &SamplingConfig) -> (Vec<(usize, usize)>, bool) {
    let positives = doc.gold_pairs();
    let pool: Vec<(usize, usize)> =
        candidate_pairs(doc).into_iter().filter(|p| positives.binary_search(p).is_err()).collect();
    let wanted = (cfg.neg_ratio * positives.len() as f64).floor() as usize;
    let k = wanted.min(pool.len());
    let mut rng = doc_rng(cfg.seed, &doc.title);
    let mut negatives: Vec<(usize, usize)> = sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
    negatives.sort_unstable();
    let mut listed = positives;
    listed.extend(negatives);
    listed.shuffle(&mut rng);
    (listed, k < wanted)
}

pub fn build_epf_dataset(
    docs: &[Document],
    registry: &RelationRegistry,
    prompts: &PromptSet,
    cfg: &SamplingConfig,
) -> Result<Dataset> {
    cfg.validate()?;
    let mut records = Vec::new();
    let mut diagnostics = ExportDiagnostics::default();
    for doc in docs {
        if doc.entities.is_empty() {
            diagnostics.skipped_no_entities += 1;
            continue;
        }
        if doc.gold.is_empty() {
            diagnostics.skipped_no_gold += 1;
            continue;
        }
        doc.validate_relations(registry)?;
        let positives = doc.gold_pairs();
        let (listed, short) = sample_epf_pairs(doc, cfg);
        if short {
            log::debug!("{:?}: not enough unrelated pairs for the negative ratio", doc.title);
            diagnostics.negatives_short += 1;
        }
        match cfg.mode {
            SamplingMode::DocumentLevel => {
                let prompt = prompts.render_epf_pairs(doc, registry, &listed)?;
                let output: Vec<String> = positives.iter().map(|&(h, t)| pair_line(doc, h, "1", t)).collect();
                records.push(InstructionRecord::new(prompt, output.join("\n")));
            }
            SamplingMode::PerPair => {
                for (h, t) in listed {
                    let prompt = prompts.render_epf_pairs(doc, registry, &[(h, t)])?;
                    let label = if positives.binary_search(&(h, t)).is_ok() { "1" } else { "0" };
                    records.push(InstructionRecord::new(prompt, pair_line(doc, h, label, t)));
                }
            }
        }
    }
    Ok(Dataset { records, diagnostics })
}

pub fn build_rc_dataset(docs: &[Document], registry: &RelationRegistry, prompts: &PromptSet) -> Result<Dataset> {
    let mut records = Vec::new();
    let mut diagnostics = ExportDiagnostics::default();
    for doc in docs {
        if doc.gold.is_empty() {
            diagnostics.skipped_no_gold += 1;
            continue;
        }
        let mut facts = doc.gold_facts();
        for (_, _, r) in &facts {
            relation_name(registry, doc, r)?;
        }
        facts.sort_by_key(|(h, t, r)| (*h, *t, position(registry, r)));
        let prompt = prompts.render_rc(doc, registry, &doc.gold_pairs())?;
        let mut lines = Vec::with_capacity(facts.len());
        for (h, t, r) in &facts {
            lines.push(pair_line(doc, *h, relation_name(registry, doc, r)?, *t));
        }
        records.push(InstructionRecord::new(prompt, lines.join("\n")));
    }
    Ok(Dataset { records, diagnostics })
}

/// Distinct relation codes of a document in registry order.
fn doc_relations(doc: &Document, registry: &RelationRegistry) -> Result<Vec<String>> {
    let mut codes: Vec<String> = Vec::new();
    for g in &doc.gold {
        relation_name(registry, doc, &g.r)?;
        if !codes.contains(&g.r) {
            codes.push(g.r.clone());
        }
    }
    codes.sort_by_key(|c| position(registry, c));
    Ok(codes)
}

fn build_candidate_dataset(
    docs: &[Document],
    registry: &RelationRegistry,
    prompts: &PromptSet,
    head: bool,
) -> Result<Dataset> {
    let mut records = Vec::new();
    let mut diagnostics = ExportDiagnostics::default();
    for doc in docs {
        if doc.gold.is_empty() {
            diagnostics.skipped_no_gold += 1;
            continue;
        }
        let relations = doc_relations(doc, registry)?;
        let mut cands: Vec<(usize, &str)> =
            doc.gold.iter().map(|g| (if head { g.h } else { g.t }, g.r.as_str())).collect();
        cands.sort_by_key(|&(e, r)| (e, position(registry, r)));
        cands.dedup();
        let mut lines = Vec::with_capacity(cands.len());
        for (e, r) in cands {
            let name = doc.entities[e].representative_name();
            let rel = relation_name(registry, doc, r)?;
            lines.push(if head { format!("({name}, {rel})") } else { format!("({rel}, {name})") });
        }
        let prompt = if head {
            prompts.render_head(doc, registry, &relations)?
        } else {
            prompts.render_tail(doc, registry, &relations)?
        };
        records.push(InstructionRecord::new(prompt, lines.join("\n")));
    }
    Ok(Dataset { records, diagnostics })
}

pub fn build_head_dataset(docs: &[Document], registry: &RelationRegistry, prompts: &PromptSet) -> Result<Dataset> {
    build_candidate_dataset(docs, registry, prompts, true)
}

pub fn build_tail_dataset(docs: &[Document], registry: &RelationRegistry, prompts: &PromptSet) -> Result<Dataset> {
    build_candidate_dataset(docs, registry, prompts, false)
}

/// One JSON object per line, keys "instruction", "input", "output".
pub fn write_jsonl(records: &[InstructionRecord], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut w, record).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            record: None,
            source: e,
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
