use relprior_core::backend::{CachingBackend, NoiseConfig, OracleBackend, ReplayBackend, RunLog};
use relprior_core::corpus::{Document, Entity, EntityType, GoldTriple, Mention, RelationRegistry};
use relprior_core::evaluation::score;
use relprior_core::fixtures::{selftest_corpus, synthetic_corpus};
use relprior_core::pipeline::{run_corpus, CorpusOptions, CorpusRun, FusionMode, Pipeline, PipelineConfig};
use relprior_core::prompt::PromptSet;

fn run(backend: &dyn relprior_core::backend::Backend, docs: &[Document], config: &PipelineConfig) -> CorpusRun {
    let registry = RelationRegistry::docred();
    let prompts = PromptSet::bundled();
    let pipeline = Pipeline::new(backend, &registry, &prompts, config).unwrap();
    run_corpus(docs, &pipeline, CorpusOptions { max_concurrency: 3, stop_after: None }).unwrap()
}

#[test]
fn noisy_run_replays_identically_from_its_log() {
    let registry = RelationRegistry::docred();
    let mut docs = selftest_corpus();
    docs.extend(synthetic_corpus(8, 21, &registry));
    let noise = NoiseConfig { omission_rate: 0.3, spurious_rate: 0.5, label_corruption_rate: 0.2, seed: 4 };
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("run_log.jsonl");
    let config = PipelineConfig::default();

    let oracle = OracleBackend::new(&docs, registry.clone(), noise).unwrap();
    let cached = CachingBackend::new(oracle, RunLog::open(&log_path).unwrap());
    let live = run(&cached, &docs, &config);
    assert_eq!(live.incomplete(), 0);
    assert!(cached.misses() > 0);
    drop(cached);

    let replay = ReplayBackend::open(&log_path).unwrap();
    let replayed = run(&replay, &docs, &config);
    assert_eq!(replayed.predictions, live.predictions);
    assert_eq!(replayed.results, live.results);

    let m = score(&replayed.predictions, &docs).unwrap();
    assert!(m.f1 > 0.0 && m.f1 < 1.0, "noisy run should be imperfect, got {m:?}");
}

fn doc_with_gold(gold: &[(usize, &str, usize)]) -> Document {
    let names = ["Aldenport", "Norland", "Corvale", "Vesk"];
    Document {
        title: "non-biclique".into(),
        sents: names.iter().map(|n| vec![n.to_string(), ".".into()]).collect(),
        entities: names
            .iter()
            .enumerate()
            .map(|(i, n)| Entity {
                index: i,
                mentions: vec![Mention { name: n.to_string(), sent_id: i, span: (0, 1), etype: EntityType::Location }],
            })
            .collect(),
        gold: gold.iter().map(|&(h, r, t)| GoldTriple { h, t, r: r.into(), evidence: vec![] }).collect(),
    }
}

// With a noise-free oracle, the head and tail calls return exactly the gold
// heads and tails per relation, so the merge produces their full cross
// product. When the gold triples of one relation do not form a complete
// bipartite graph, fusion adds triples that are not gold.
#[test]
fn clean_oracle_is_not_perfect_when_gold_is_not_a_cross_product() {
    let docs = vec![doc_with_gold(&[(0, "P131", 1), (2, "P131", 3), (2, "P17", 1)])];
    let oracle = OracleBackend::new(&docs, RelationRegistry::docred(), NoiseConfig::clean(0)).unwrap();

    let union = score(&run(&oracle, &docs, &PipelineConfig::default()).predictions, &docs).unwrap();
    assert_eq!(union.recall, 1.0);
    assert_eq!((union.correct, union.predicted), (3, 5));

    // strict fusion keeps RM triples only on pairs EPF marked related, which
    // removes (0, P131, 3) but not (2, P131, 1)
    let strict_config = PipelineConfig { fusion: FusionMode::Strict, ..Default::default() };
    let strict = score(&run(&oracle, &docs, &strict_config).predictions, &docs).unwrap();
    assert_eq!(strict.recall, 1.0);
    assert_eq!((strict.correct, strict.predicted), (3, 4));

    // a cross-product gold structure is recovered exactly
    let biclique = vec![doc_with_gold(&[(0, "P131", 1), (0, "P131", 3), (2, "P131", 1), (2, "P131", 3)])];
    let oracle = OracleBackend::new(&biclique, RelationRegistry::docred(), NoiseConfig::clean(0)).unwrap();
    let exact = score(&run(&oracle, &biclique, &PipelineConfig::default()).predictions, &biclique).unwrap();
    assert_eq!(exact.f1, 1.0);
}
