//! Command implementations behind the `relprior` binary.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use relprior_core::backend::{Backend, CachingBackend, HttpBackend, NoiseConfig, OracleBackend, ReplayBackend, RunLog};
use relprior_core::corpus::{
    corpus_stats, load_corpus_with, load_relation_registry, Document, LoadOptions, RelationRegistry,
};
use relprior_core::evaluation::{
    build_train_fact_set, ign_score, per_relation_f1, read_predictions, relation_table_csv, score, stage_report,
    MetricsReport, TrainFacts,
};
use relprior_core::finetune::{
    build_epf_dataset, build_head_dataset, build_rc_dataset, build_tail_dataset, write_jsonl,
};
use relprior_core::fixtures::selftest_corpus;
use relprior_core::pipeline::{
    read_results, run_corpus, write_predictions, write_results, CorpusOptions, CorpusRun, Pipeline,
};
use relprior_core::prompt::PromptSet;
use relprior_core::task::TaskKind;
use relprior_core::Error;

pub use config::{AppConfig, Engine};

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(Error),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Selftest(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Backend(_) => 2,
            CliError::Selftest(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Backend(b) => CliError::Backend(b.to_string()),
            other => CliError::Validation(other),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn registry(config: &AppConfig) -> CliResult<RelationRegistry> {
    let registry = match &config.paths.rel_info {
        Some(path) => load_relation_registry(path, config.paths.aliases.as_deref())?,
        None => {
            let reg = RelationRegistry::docred();
            match &config.paths.aliases {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    reg.with_aliases_json(&text)?
                }
                None => reg,
            }
        }
    };
    if registry.has_aliases() {
        log::info!("relation alias table active ({} entries)", registry.alias_count());
    }
    Ok(registry)
}

pub fn prompts(config: &AppConfig) -> CliResult<PromptSet> {
    Ok(match &config.paths.templates {
        Some(dir) => PromptSet::load_dir(dir)?,
        None => PromptSet::bundled(),
    })
}

pub fn load_split(config: &AppConfig, split: &str, expect_gold: bool) -> CliResult<Vec<Document>> {
    let path = config.split(split)?;
    let loaded = load_corpus_with(path, LoadOptions { expect_gold, permissive: config.permissive })?;
    if !loaded.dropped.is_empty() {
        log::warn!(
            "{split}: dropped {} documents, {} mentions, {} triples",
            loaded.dropped.documents,
            loaded.dropped.mentions,
            loaded.dropped.triples
        );
    }
    Ok(loaded.documents)
}

/// `stats`: corpus statistics for the named splits (all configured when empty).
pub fn cmd_stats(config: &AppConfig, splits: &[String]) -> CliResult<String> {
    let names: Vec<String> = if splits.is_empty() { config.splits.keys().cloned().collect() } else { splits.to_vec() };
    if names.is_empty() {
        return Err(Error::Validation("no splits configured".into()).into());
    }
    let mut out = String::new();
    for name in names {
        let docs = load_split(config, &name, false)?;
        let stats = corpus_stats(&docs)?;
        let _ = writeln!(out, "[{name}]\n{stats}\n");
    }
    Ok(out)
}

/// `export`: fine-tuning JSONL for one task or all four. Returns the files written.
pub fn cmd_export(config: &AppConfig, split: &str, task: Option<TaskKind>) -> CliResult<Vec<PathBuf>> {
    let registry = registry(config)?;
    let prompts = prompts(config)?;
    let docs = load_split(config, split, true)?;
    let dir = config.paths.output_dir.join("finetune");
    let tasks: Vec<TaskKind> = task.map(|t| vec![t]).unwrap_or_else(|| TaskKind::ALL.to_vec());
    let mut written = Vec::new();
    for kind in tasks {
        let ds = match kind {
            TaskKind::Epf => build_epf_dataset(&docs, &registry, &prompts, &config.sampling)?,
            TaskKind::Rc => build_rc_dataset(&docs, &registry, &prompts)?,
            TaskKind::Head => build_head_dataset(&docs, &registry, &prompts)?,
            TaskKind::Tail => build_tail_dataset(&docs, &registry, &prompts)?,
        };
        let d = ds.diagnostics;
        log::info!(
            "{kind}: {} records (skipped {} without entities, {} without labels; {} short of negatives)",
            ds.records.len(),
            d.skipped_no_entities,
            d.skipped_no_gold,
            d.negatives_short
        );
        let path = dir.join(format!("{split}.{kind}.jsonl"));
        write_jsonl(&ds.records, &path)?;
        written.push(path);
    }
    Ok(written)
}

pub fn predictions_path(config: &AppConfig, split: &str) -> PathBuf {
    config.paths.output_dir.join(format!("{split}.predictions.json"))
}

pub fn results_path(config: &AppConfig, split: &str) -> PathBuf {
    config.paths.output_dir.join(format!("{split}.results.jsonl"))
}

#[derive(Debug)]
pub struct RunSummary {
    pub run: CorpusRun,
    pub predictions_path: PathBuf,
    pub results_path: PathBuf,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

impl RunSummary {
    pub fn render(&self) -> String {
        let (counts, diags) = self.run.totals();
        format!(
            "documents {} (incomplete {})\nbackend calls {} (cache hits {}, misses {})\nfused triples {} \
             (epf {}, rm added {})\ndropped by parser {}\npredictions {}\nresults {}\n",
            self.run.results.len(),
            self.run.incomplete(),
            counts.calls,
            self.cache_hits,
            self.cache_misses,
            counts.fused,
            counts.epf_triples,
            counts.rm_added,
            diags.total().dropped(),
            self.predictions_path.display(),
            self.results_path.display()
        )
    }
}

fn execute(
    config: &AppConfig,
    docs: &[Document],
    registry: &RelationRegistry,
    backend: &dyn Backend,
    stop_after: Option<usize>,
) -> CliResult<CorpusRun> {
    let prompts = prompts(config)?;
    let pipeline = Pipeline::new(backend, registry, &prompts, &config.pipeline)?;
    let opts = CorpusOptions { max_concurrency: config.backend.max_concurrency, stop_after };
    Ok(run_corpus(docs, &pipeline, opts)?)
}

/// `run`: the full pipeline over a split, resumable through the run log.
/// Outputs are written even when some documents fail; those failures then
/// surface as a backend error.
pub fn cmd_run(config: &AppConfig, split: &str, stop_after: Option<usize>) -> CliResult<RunSummary> {
    let registry = registry(config)?;
    let docs = load_split(config, split, false)?;
    let (run, hits, misses) = match config.backend.engine {
        Engine::Replay => {
            let replay = ReplayBackend::open(&config.paths.run_log)?;
            (execute(config, &docs, &registry, &replay, stop_after)?, 0, 0)
        }
        Engine::Oracle => {
            let oracle = OracleBackend::new(&docs, registry.clone(), config.oracle)?;
            let cached = CachingBackend::new(oracle, RunLog::open(&config.paths.run_log)?);
            let run = execute(config, &docs, &registry, &cached, stop_after)?;
            (run, cached.hits(), cached.misses())
        }
        Engine::Http => {
            let http = HttpBackend::new(config.http_config())?;
            let cached = CachingBackend::new(http, RunLog::open(&config.paths.run_log)?);
            let run = execute(config, &docs, &registry, &cached, stop_after)?;
            (run, cached.hits(), cached.misses())
        }
    };
    let summary = RunSummary {
        predictions_path: predictions_path(config, split),
        results_path: results_path(config, split),
        cache_hits: hits,
        cache_misses: misses,
        run,
    };
    write_predictions(&summary.predictions_path, &summary.run.predictions)?;
    write_results(&summary.results_path, &summary.run.results)?;
    let incomplete = summary.run.incomplete();
    if incomplete > 0 {
        let first = summary.run.results.iter().find(|r| !r.complete).expect("an incomplete result");
        return Err(CliError::Backend(format!(
            "{incomplete} documents incomplete; first: {:?}: {}",
            first.title,
            first.errors.first().map(|e| e.message.as_str()).unwrap_or("unknown error")
        )));
    }
    Ok(summary)
}

pub struct EvalOutput {
    pub report: MetricsReport,
    pub metrics_path: PathBuf,
    pub relations_path: PathBuf,
}

/// `eval`: metrics JSON and per-relation CSV for a predictions file.
pub fn cmd_eval(
    config: &AppConfig,
    predictions: &Path,
    split: &str,
    train_split: Option<&str>,
) -> CliResult<EvalOutput> {
    let registry = registry(config)?;
    let gold = load_split(config, split, true)?;
    let preds = read_predictions(predictions)?;
    let train_facts = match train_split {
        Some(name) => build_train_fact_set(&load_split(config, name, true)?),
        None => {
            log::warn!("no training split given; Ign F1 equals F1");
            TrainFacts::new()
        }
    };
    let metrics = score(&preds, &gold)?;
    let ign = ign_score(&preds, &gold, &train_facts)?;
    let report = MetricsReport::new(&metrics, &ign);
    let rows = per_relation_f1(&preds, &gold, Some(&registry))?;

    let dir = &config.paths.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let metrics_path = dir.join(format!("{split}.metrics.json"));
    let mut json = serde_json::to_string_pretty(&report).expect("metrics serialize");
    json.push('\n');
    std::fs::write(&metrics_path, json).map_err(|e| Error::io(&metrics_path, e))?;
    let relations_path = dir.join(format!("{split}.per_relation.csv"));
    std::fs::write(&relations_path, relation_table_csv(&rows)).map_err(|e| Error::io(&relations_path, e))?;
    Ok(EvalOutput { report, metrics_path, relations_path })
}

pub fn render_metrics(r: &MetricsReport) -> String {
    format!(
        "P {:.4}  R {:.4}  F1 {:.4}\nIgn P {:.4}  Ign R {:.4}  Ign F1 {:.4}\npredicted {}  correct {}  gold {}  correct in train {}\n",
        r.precision, r.recall, r.f1, r.ign_precision, r.ign_recall, r.ign_f1, r.predicted, r.correct, r.gold, r.correct_in_train
    )
}

/// `report`: stage counts from a per-document results file.
pub fn cmd_report(results: &Path, csv: Option<&Path>) -> CliResult<String> {
    let report = stage_report(&read_results(results)?);
    if let Some(path) = csv {
        std::fs::write(path, report.to_csv()).map_err(|e| Error::io(path, e))?;
    }
    Ok(report.to_text())
}

/// `selftest`: the noise-free oracle through the whole pipeline on the
/// bundled documents. Anything short of F1 = 1 is a failure.
pub fn cmd_selftest(config: &AppConfig) -> CliResult<String> {
    let docs = selftest_corpus();
    let registry = RelationRegistry::docred();
    let oracle = OracleBackend::new(&docs, registry.clone(), NoiseConfig::clean(config.oracle.seed))?;
    let run = execute(config, &docs, &registry, &oracle, None)?;
    let metrics = score(&run.predictions, &docs)?;
    let ign = ign_score(&run.predictions, &docs, &TrainFacts::new())?;
    let text = format!("selftest on {} documents\n{}", docs.len(), render_metrics(&MetricsReport::new(&metrics, &ign)));
    if metrics.f1 != 1.0 || run.incomplete() > 0 {
        return Err(CliError::Selftest(format!("{text}selftest failed: expected F1 = 1.0")));
    }
    Ok(text + "selftest passed\n")
}
