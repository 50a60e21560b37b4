//! Per-document stage orchestration and corpus runs.
//!
//! Stage order per document is EPF (pair filtering) → RC (classification of
//! the surviving pairs) → RM (head and tail candidates for the predicted
//! relations, merged on equal relation) → fusion.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, CompletionRequest, DecodingParams, TaskContext, TaskPayload};
use crate::corpus::{candidate_pairs, index_by_title, Document, RelationRegistry};
use crate::error::{Error, Result};
use crate::evaluation::Prediction;
use crate::parsing::{parse_epf, parse_head, parse_rc, parse_tail, GroundingDiagnostics};
use crate::prompt::{Prompt, PromptSet};
use crate::task::TaskKind;

/// Which stage produced a triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Epf,
    Rm,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PredictedTriple {
    pub title: String,
    pub h: usize,
    pub t: usize,
    pub r: String,
    pub stage: Stage,
}

impl PredictedTriple {
    pub fn key(&self) -> (usize, &str, usize) {
        (self.h, self.r.as_str(), self.t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairJudgment {
    pub h: usize,
    pub t: usize,
    pub related: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HeadCandidate {
    pub entity: usize,
    pub r: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TailCandidate {
    pub r: String,
    pub entity: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// EPF triples, then RM triples not already present.
    #[default]
    Union,
    /// As `Union`, but RM triples on pairs EPF did not approve are dropped.
    Strict,
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "union" => Ok(FusionMode::Union),
            "strict" => Ok(FusionMode::Strict),
            other => Err(Error::Validation(format!("unknown fusion mode {other:?} (expected union or strict)"))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Union => "union",
            FusionMode::Strict => "strict",
        })
    }
}

/// Decoding parameters per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageDecoding {
    pub epf: DecodingParams,
    pub rc: DecodingParams,
    pub head: DecodingParams,
    pub tail: DecodingParams,
}

impl StageDecoding {
    pub fn uniform(params: DecodingParams) -> Self {
        Self { epf: params, rc: params, head: params, tail: params }
    }

    pub fn for_kind(&self, kind: TaskKind) -> DecodingParams {
        match kind {
            TaskKind::Epf => self.epf,
            TaskKind::Rc => self.rc,
            TaskKind::Head => self.head,
            TaskKind::Tail => self.tail,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub fusion: FusionMode,
    /// List candidate pairs in the EPF prompt instead of the entity set.
    pub epf_enumerate_pairs: bool,
    /// Estimated-token ceiling for one EPF prompt; larger documents are
    /// split into entity chunks. `None` disables chunking.
    pub token_budget: Option<usize>,
    /// 1: pairs within each chunk only. 2: also pairs across chunks.
    pub chunk_passes: u8,
    /// One head and one tail call per relation instead of per document.
    pub rm_per_relation: bool,
    pub decoding: StageDecoding,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fusion: FusionMode::Union,
            epf_enumerate_pairs: false,
            token_budget: None,
            chunk_passes: 2,
            rm_per_relation: false,
            decoding: StageDecoding::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.chunk_passes, 1 | 2) {
            return Err(Error::Validation(format!("chunk_passes {} must be 1 or 2", self.chunk_passes)));
        }
        if self.token_budget == Some(0) {
            return Err(Error::Validation("token_budget must be positive".into()));
        }
        for kind in TaskKind::ALL {
            self.decoding.for_kind(kind).validate().map_err(|e| Error::Validation(format!("{kind} decoding: {e}")))?;
        }
        Ok(())
    }
}

/// Rough token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Parsed items of one stage plus bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutput<T> {
    pub items: Vec<T>,
    pub diagnostics: GroundingDiagnostics,
    pub calls: usize,
    /// Parsed items outside the stage's input (pairs not asked about,
    /// relations not requested), dropped.
    pub off_target: usize,
}

impl<T> StageOutput<T> {
    fn empty() -> Self {
        Self { items: Vec::new(), diagnostics: GroundingDiagnostics::default(), calls: 0, off_target: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RmOutput {
    pub heads: Vec<HeadCandidate>,
    pub tails: Vec<TailCandidate>,
    pub triples: Vec<PredictedTriple>,
    pub head_diagnostics: GroundingDiagnostics,
    pub tail_diagnostics: GroundingDiagnostics,
    pub calls: usize,
    pub off_target: usize,
}

/// Relation-equality merge: every head candidate joined with every tail
/// candidate of the same relation, self-pairs excluded. Output follows head
/// order, then tail order, without duplicates.
pub fn merge_candidates(heads: &[HeadCandidate], tails: &[TailCandidate]) -> Vec<(usize, String, usize)> {
    let mut by_relation: HashMap<&str, Vec<usize>> = HashMap::new();
    for tail in tails {
        by_relation.entry(tail.r.as_str()).or_default().push(tail.entity);
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for head in heads {
        for &t in by_relation.get(head.r.as_str()).into_iter().flatten() {
            if head.entity != t && seen.insert((head.entity, head.r.as_str(), t)) {
                out.push((head.entity, head.r.clone(), t));
            }
        }
    }
    out
}

/// Fuses EPF and RM triples. EPF triples come first and keep their tag;
/// RM triples are appended when new. In strict mode RM triples must also
/// sit on a pair in `related_pairs`.
pub fn fuse(
    epf: &[PredictedTriple],
    rm: &[PredictedTriple],
    mode: FusionMode,
    related_pairs: &[(usize, usize)],
) -> Vec<PredictedTriple> {
    let related: HashSet<(usize, usize)> = related_pairs.iter().copied().collect();
    let mut seen: HashSet<(usize, &str, usize)> = HashSet::new();
    let mut out = Vec::with_capacity(epf.len() + rm.len());
    for triple in epf {
        if seen.insert(triple.key()) {
            out.push(PredictedTriple { stage: Stage::Epf, ..triple.clone() });
        }
    }
    for triple in rm {
        if mode == FusionMode::Strict && !related.contains(&(triple.h, triple.t)) {
            continue;
        }
        if seen.insert(triple.key()) {
            out.push(PredictedTriple { stage: Stage::Rm, ..triple.clone() });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub calls: usize,
    pub epf_pairs: usize,
    pub epf_triples: usize,
    pub head_candidates: usize,
    pub tail_candidates: usize,
    pub rm_triples: usize,
    /// RM triples kept by fusion.
    pub rm_added: usize,
    pub fused: usize,
    pub off_target: usize,
}

impl std::ops::AddAssign for StageCounts {
    fn add_assign(&mut self, o: Self) {
        self.calls += o.calls;
        self.epf_pairs += o.epf_pairs;
        self.epf_triples += o.epf_triples;
        self.head_candidates += o.head_candidates;
        self.tail_candidates += o.tail_candidates;
        self.rm_triples += o.rm_triples;
        self.rm_added += o.rm_added;
        self.fused += o.fused;
        self.off_target += o.off_target;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub epf: GroundingDiagnostics,
    pub rc: GroundingDiagnostics,
    pub head: GroundingDiagnostics,
    pub tail: GroundingDiagnostics,
}

impl StageDiagnostics {
    pub fn total(&self) -> GroundingDiagnostics {
        let mut sum = self.epf;
        sum += self.rc;
        sum += self.head;
        sum += self.tail;
        sum
    }
}

impl std::ops::AddAssign for StageDiagnostics {
    fn add_assign(&mut self, o: Self) {
        self.epf += o.epf;
        self.rc += o.rc;
        self.head += o.head;
        self.tail += o.tail;
    }
}

/// A backend failure tagged with the stage that hit it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageFailure {
    pub stage: TaskKind,
    pub error: BackendError,
}

impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageFailure {}

fn at(stage: TaskKind) -> impl Fn(BackendError) -> StageFailure {
    move |error| StageFailure { stage, error }
}

fn invalid(stage: TaskKind) -> impl Fn(Error) -> StageFailure {
    move |e| StageFailure { stage, error: BackendError::InvalidRequest(e.to_string()) }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: TaskKind,
    pub message: String,
    pub transient: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentResult {
    pub title: String,
    pub complete: bool,
    pub epf_pairs: Vec<(usize, usize)>,
    pub epf_triples: Vec<PredictedTriple>,
    pub rm_triples: Vec<PredictedTriple>,
    pub fused_triples: Vec<PredictedTriple>,
    pub stage_counts: StageCounts,
    pub diagnostics: StageDiagnostics,
    pub errors: Vec<StageError>,
}

impl DocumentResult {
    fn new(title: &str) -> Self {
        Self {
            title: title.to_string(),
            complete: true,
            epf_pairs: Vec::new(),
            epf_triples: Vec::new(),
            rm_triples: Vec::new(),
            fused_triples: Vec::new(),
            stage_counts: StageCounts::default(),
            diagnostics: StageDiagnostics::default(),
            errors: Vec::new(),
        }
    }

    fn fail(&mut self, failure: StageFailure) {
        log::warn!("{:?}: {failure}", self.title);
        self.complete = false;
        self.errors.push(StageError {
            stage: failure.stage,
            message: failure.error.to_string(),
            transient: failure.error.is_transient(),
        });
    }

    pub fn predictions(&self) -> Vec<Prediction> {
        self.fused_triples
            .iter()
            .map(|t| Prediction { title: t.title.clone(), h_idx: t.h, t_idx: t.t, r: t.r.clone() })
            .collect()
    }
}

/// One EPF call: the entities shown (entity-set prompts) and the pairs
/// under judgment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpfBatch {
    pub entities: Vec<usize>,
    pub pairs: Vec<(usize, usize)>,
}

fn ordered_pairs_within(entities: &[usize]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for &h in entities {
        for &t in entities {
            if h != t {
                pairs.push((h, t));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

fn ordered_pairs_across(a: &[usize], b: &[usize]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(2 * a.len() * b.len());
    for &x in a {
        for &y in b {
            pairs.push((x, y));
            pairs.push((y, x));
        }
    }
    pairs.sort_unstable();
    pairs
}

pub struct Pipeline<'a> {
    backend: &'a dyn Backend,
    registry: &'a RelationRegistry,
    prompts: &'a PromptSet,
    config: &'a PipelineConfig,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        backend: &'a dyn Backend,
        registry: &'a RelationRegistry,
        prompts: &'a PromptSet,
        config: &'a PipelineConfig,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self { backend, registry, prompts, config })
    }

    pub fn config(&self) -> &PipelineConfig {
        self.config
    }

    fn call(
        &self,
        doc: &Document,
        kind: TaskKind,
        payload: TaskPayload,
        prompt: Prompt,
    ) -> std::result::Result<String, BackendError> {
        let ctx = TaskContext::new(kind, doc.title.clone(), payload)?;
        let request = CompletionRequest::new(prompt.text(), ctx, self.config.decoding.for_kind(kind))?;
        self.backend.generate(&request)
    }

    fn epf_prompt(&self, doc: &Document, batch: &EpfBatch) -> Result<Prompt> {
        if self.config.epf_enumerate_pairs {
            self.prompts.render_epf_pairs(doc, self.registry, &batch.pairs)
        } else {
            self.prompts.render_epf_entities(doc, self.registry, &batch.entities)
        }
    }

    /// Splits the EPF work for `doc` into calls that respect the token budget.
    pub fn epf_batches(&self, doc: &Document) -> Result<Vec<EpfBatch>> {
        let all: Vec<usize> = (0..doc.entities.len()).collect();
        let whole = EpfBatch { pairs: candidate_pairs(doc), entities: all.clone() };
        let Some(budget) = self.config.token_budget else {
            return Ok(vec![whole]);
        };
        let fits = |entities: &[usize]| -> Result<bool> {
            let batch = EpfBatch { entities: entities.to_vec(), pairs: ordered_pairs_within(entities) };
            Ok(estimate_tokens(&self.epf_prompt(doc, &batch)?.text()) <= budget)
        };
        if fits(&all)? {
            return Ok(vec![whole]);
        }
        let mut chunks: Vec<Vec<usize>> = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        for e in all {
            current.push(e);
            if current.len() > 1 && !fits(&current)? {
                current.pop();
                chunks.push(std::mem::replace(&mut current, vec![e]));
            }
        }
        chunks.push(current);
        if chunks.iter().any(|c| c.len() == 1) {
            log::warn!("{:?}: token budget {budget} admits single-entity EPF chunks", doc.title);
        }
        let mut batches: Vec<EpfBatch> = chunks
            .iter()
            .filter(|c| c.len() > 1)
            .map(|c| EpfBatch { entities: c.clone(), pairs: ordered_pairs_within(c) })
            .collect();
        if self.config.chunk_passes == 2 {
            for i in 0..chunks.len() {
                for j in i + 1..chunks.len() {
                    let mut entities = chunks[i].clone();
                    entities.extend(&chunks[j]);
                    batches.push(EpfBatch { pairs: ordered_pairs_across(&chunks[i], &chunks[j]), entities });
                }
            }
        }
        Ok(batches)
    }

    /// Stage 1: pairs the model judges related, first-occurrence order.
    pub fn run_epf(&self, doc: &Document) -> std::result::Result<StageOutput<PairJudgment>, StageFailure> {
        let mut out = StageOutput::empty();
        if doc.entities.len() < 2 {
            return Ok(out);
        }
        let batches = self.epf_batches(doc).map_err(invalid(TaskKind::Epf))?;
        let mut seen = HashSet::new();
        for batch in batches {
            let prompt = self.epf_prompt(doc, &batch).map_err(invalid(TaskKind::Epf))?;
            let asked: HashSet<(usize, usize)> = batch.pairs.iter().copied().collect();
            let response =
                self.call(doc, TaskKind::Epf, TaskPayload::Pairs(batch.pairs), prompt).map_err(at(TaskKind::Epf))?;
            out.calls += 1;
            let parsed = parse_epf(&response, doc);
            out.diagnostics += parsed.diagnostics;
            for (h, t) in parsed.items {
                if !asked.contains(&(h, t)) {
                    out.off_target += 1;
                } else if seen.insert((h, t)) {
                    out.items.push(PairJudgment { h, t, related: true });
                }
            }
        }
        Ok(out)
    }

    /// Stage 2: relation labels for the approved pairs.
    pub fn run_rc(
        &self,
        doc: &Document,
        pairs: &[(usize, usize)],
    ) -> std::result::Result<StageOutput<PredictedTriple>, StageFailure> {
        let mut out = StageOutput::empty();
        if pairs.is_empty() {
            return Ok(out);
        }
        let prompt = self.prompts.render_rc(doc, self.registry, pairs).map_err(invalid(TaskKind::Rc))?;
        let response =
            self.call(doc, TaskKind::Rc, TaskPayload::Pairs(pairs.to_vec()), prompt).map_err(at(TaskKind::Rc))?;
        out.calls = 1;
        let asked: HashSet<(usize, usize)> = pairs.iter().copied().collect();
        let parsed = parse_rc(&response, doc, self.registry);
        out.diagnostics = parsed.diagnostics;
        for (h, r, t) in parsed.items {
            if asked.contains(&(h, t)) {
                out.items.push(PredictedTriple { title: doc.title.clone(), h, t, r, stage: Stage::Epf });
            } else {
                out.off_target += 1;
            }
        }
        Ok(out)
    }

    /// Stage 3: head and tail candidates for `relations`, merged.
    pub fn run_rm(&self, doc: &Document, relations: &[String]) -> std::result::Result<RmOutput, StageFailure> {
        let mut out = RmOutput {
            heads: Vec::new(),
            tails: Vec::new(),
            triples: Vec::new(),
            head_diagnostics: GroundingDiagnostics::default(),
            tail_diagnostics: GroundingDiagnostics::default(),
            calls: 0,
            off_target: 0,
        };
        let relations = crate::prompt::registry_ordered(self.registry, relations).map_err(invalid(TaskKind::Head))?;
        if relations.is_empty() {
            return Ok(out);
        }
        let groups: Vec<Vec<String>> = if self.config.rm_per_relation {
            relations.iter().map(|r| vec![r.clone()]).collect()
        } else {
            vec![relations]
        };
        let mut seen_heads = HashSet::new();
        let mut seen_tails = HashSet::new();
        for group in groups {
            let wanted: HashSet<&str> = group.iter().map(String::as_str).collect();
            let prompt = self.prompts.render_head(doc, self.registry, &group).map_err(invalid(TaskKind::Head))?;
            let text = self
                .call(doc, TaskKind::Head, TaskPayload::Relations(group.clone()), prompt)
                .map_err(at(TaskKind::Head))?;
            out.calls += 1;
            let parsed = parse_head(&text, doc, self.registry);
            out.head_diagnostics += parsed.diagnostics;
            for (entity, r) in parsed.items {
                if !wanted.contains(r.as_str()) {
                    out.off_target += 1;
                } else if seen_heads.insert((entity, r.clone())) {
                    out.heads.push(HeadCandidate { entity, r });
                }
            }

            let prompt = self.prompts.render_tail(doc, self.registry, &group).map_err(invalid(TaskKind::Tail))?;
            let text = self
                .call(doc, TaskKind::Tail, TaskPayload::Relations(group.clone()), prompt)
                .map_err(at(TaskKind::Tail))?;
            out.calls += 1;
            let parsed = parse_tail(&text, doc, self.registry);
            out.tail_diagnostics += parsed.diagnostics;
            for (r, entity) in parsed.items {
                if !wanted.contains(r.as_str()) {
                    out.off_target += 1;
                } else if seen_tails.insert((r.clone(), entity)) {
                    out.tails.push(TailCandidate { r, entity });
                }
            }
        }
        out.triples = merge_candidates(&out.heads, &out.tails)
            .into_iter()
            .map(|(h, r, t)| PredictedTriple { title: doc.title.clone(), h, t, r, stage: Stage::Rm })
            .collect();
        Ok(out)
    }

    /// EPF → RC → RM → fuse for one document. Backend failures are recorded
    /// in the result, which is then marked incomplete.
    pub fn run_document(&self, doc: &Document) -> DocumentResult {
        let mut result = DocumentResult::new(&doc.title);
        let counts = &mut result.stage_counts;

        match self.run_epf(doc) {
            Ok(epf) => {
                counts.calls += epf.calls;
                counts.off_target += epf.off_target;
                result.diagnostics.epf = epf.diagnostics;
                result.epf_pairs = epf.items.iter().map(|j| (j.h, j.t)).collect();
            }
            Err(e) => {
                result.fail(e);
                return result;
            }
        }
        result.stage_counts.epf_pairs = result.epf_pairs.len();

        match self.run_rc(doc, &result.epf_pairs) {
            Ok(rc) => {
                result.stage_counts.calls += rc.calls;
                result.stage_counts.off_target += rc.off_target;
                result.diagnostics.rc = rc.diagnostics;
                result.epf_triples = rc.items;
            }
            Err(e) => {
                result.fail(e);
                return result;
            }
        }
        result.stage_counts.epf_triples = result.epf_triples.len();

        let mut relations: Vec<String> = Vec::new();
        for t in &result.epf_triples {
            if !relations.contains(&t.r) {
                relations.push(t.r.clone());
            }
        }
        match self.run_rm(doc, &relations) {
            Ok(rm) => {
                let c = &mut result.stage_counts;
                c.calls += rm.calls;
                c.off_target += rm.off_target;
                c.head_candidates = rm.heads.len();
                c.tail_candidates = rm.tails.len();
                c.rm_triples = rm.triples.len();
                result.diagnostics.head = rm.head_diagnostics;
                result.diagnostics.tail = rm.tail_diagnostics;
                result.rm_triples = rm.triples;
            }
            Err(e) => result.fail(e),
        }

        result.fused_triples = fuse(&result.epf_triples, &result.rm_triples, self.config.fusion, &result.epf_pairs);
        result.stage_counts.fused = result.fused_triples.len();
        result.stage_counts.rm_added = result.fused_triples.iter().filter(|t| t.stage == Stage::Rm).count();
        result
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusOptions {
    pub max_concurrency: usize,
    /// Process only the first `k` documents, as if the run were interrupted.
    pub stop_after: Option<usize>,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self { max_concurrency: 4, stop_after: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRun {
    /// Sorted by title.
    pub results: Vec<DocumentResult>,
    /// Sorted by title, then head, tail, relation.
    pub predictions: Vec<Prediction>,
}

impl CorpusRun {
    pub fn incomplete(&self) -> usize {
        self.results.iter().filter(|r| !r.complete).count()
    }

    pub fn totals(&self) -> (StageCounts, StageDiagnostics) {
        let mut counts = StageCounts::default();
        let mut diags = StageDiagnostics::default();
        for r in &self.results {
            counts += r.stage_counts;
            diags += r.diagnostics;
        }
        (counts, diags)
    }
}

/// Runs every document with up to `max_concurrency` workers. Output order
/// does not depend on scheduling.
pub fn run_corpus(docs: &[Document], pipeline: &Pipeline<'_>, opts: CorpusOptions) -> Result<CorpusRun> {
    if opts.max_concurrency == 0 {
        return Err(Error::Validation("max_concurrency must be positive".into()));
    }
    index_by_title(docs)?;
    let docs = &docs[..opts.stop_after.unwrap_or(docs.len()).min(docs.len())];
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(docs.len()));
    let workers = opts.max_concurrency.min(docs.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(doc) = docs.get(i) else { break };
                let result = pipeline.run_document(doc);
                log::debug!("{:?}: {} fused triples", doc.title, result.fused_triples.len());
                results.lock().expect("results lock").push(result);
            });
        }
    });
    let mut results = results.into_inner().expect("results lock");
    results.sort_by(|a, b| a.title.cmp(&b.title));
    let mut predictions: Vec<Prediction> = results.iter().flat_map(DocumentResult::predictions).collect();
    predictions.sort_by(|a, b| (&a.title, a.h_idx, a.t_idx, &a.r).cmp(&(&b.title, b.h_idx, b.t_idx, &b.r)));
    Ok(CorpusRun { results, predictions })
}

/// Predictions as a JSON array in DocRED submission form.
pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut text = serde_json::to_string(predictions).expect("predictions serialize");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_results(path: &Path, results: &[DocumentResult]) -> Result<()> {
    let mut text = String::new();
    for r in results {
        text.push_str(&serde_json::to_string(r).expect("result serializes"));
        text.push('\n');
    }
    write_file(path, text.as_bytes())
}

pub fn read_results(path: &Path) -> Result<Vec<DocumentResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Json { path: path.to_path_buf(), record: Some(i), source: e })
        })
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Distinct `(h, t)` pairs in a triple list, sorted. Handy for reports.
pub fn pairs_of(triples: &[PredictedTriple]) -> Vec<(usize, usize)> {
    triples.iter().map(|t| (t.h, t.t)).collect::<BTreeSet<_>>().into_iter().collect()
}
