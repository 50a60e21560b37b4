use relprior_core::corpus::{
    candidate_pairs, corpus_stats, load_corpus, load_corpus_with, write_corpus, LoadOptions, RelationRegistry,
};
use relprior_core::fixtures::{selftest_corpus, synthetic_corpus};

const ONE_DOC: &str = r#"[{
  "title": "Lake Orrin",
  "sents": [["Lake", "Orrin", "lies", "in", "Norland", "."], ["Norland", "borders", "Vesk", "."]],
  "vertexSet": [
    [{"name": "Lake Orrin", "sent_id": 0, "pos": [0, 2], "type": "LOC"}],
    [{"name": "Norland", "sent_id": 0, "pos": [4, 5], "type": "LOC"},
     {"name": "Norland", "sent_id": 1, "pos": [0, 1], "type": "LOC"}],
    [{"name": "Vesk", "sent_id": 1, "pos": [2, 3], "type": "LOC"}]
  ],
  "labels": [
    {"h": 0, "t": 1, "r": "P17", "evidence": [0]},
    {"h": 1, "t": 2, "r": "P131", "evidence": [1]}
  ]
}]"#;

#[test]
fn hand_written_document_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.json");
    std::fs::write(&path, ONE_DOC).unwrap();
    let docs = load_corpus(&path, true).unwrap();
    assert_eq!(docs.len(), 1);
    let doc = &docs[0];
    assert_eq!(doc.entities.len(), 3);
    assert_eq!(doc.entities[1].mentions.len(), 2);
    assert_eq!(doc.entity_name(2), Some("Vesk"));
    assert_eq!(doc.gold_pairs(), vec![(0, 1), (1, 2)]);
    doc.validate_relations(&RelationRegistry::docred()).unwrap();

    let stats = corpus_stats(&docs).unwrap();
    assert_eq!(stats.n_docs, 1);
    assert_eq!(stats.mean_entities, 3.0);
    assert_eq!(stats.mean_sentences, 2.0);
    assert_eq!(stats.mean_triples, 2.0);
}

#[test]
fn write_then_load_round_trips() {
    let mut docs = selftest_corpus();
    docs.extend(synthetic_corpus(10, 2, &RelationRegistry::docred()));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.json");
    write_corpus(&docs, &path).unwrap();
    assert_eq!(load_corpus(&path, true).unwrap(), docs);
}

#[test]
fn out_of_range_label_is_rejected_unless_permissive() {
    let bad = ONE_DOC.replace(r#""h": 1, "t": 2"#, r#""h": 1, "t": 9"#);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, bad).unwrap();
    assert!(load_corpus(&path, true).is_err());
    let loaded = load_corpus_with(&path, LoadOptions { expect_gold: true, permissive: true }).unwrap();
    assert_eq!(loaded.documents[0].gold.len(), 1);
    assert_eq!(loaded.dropped.triples, 1);
}

#[test]
fn nineteen_entities_give_342_candidate_pairs() {
    let mut doc = synthetic_corpus(1, 0, &RelationRegistry::docred()).remove(0);
    let template = doc.entities[0].clone();
    doc.entities = (0..19)
        .map(|i| {
            let mut e = template.clone();
            e.index = i;
            e
        })
        .collect();
    let pairs = candidate_pairs(&doc);
    assert_eq!(pairs.len(), 342);
    assert!(pairs.iter().all(|(h, t)| h != t));
}
