//! Bundled sample corpus in DocRED format, and a seeded generator of
//! synthetic documents for smoke tests.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    parse_corpus_str, Document, Entity, EntityType, GoldTriple, LoadOptions, Mention, RelationRegistry,
};

const SELFTEST_FIXTURE: &str = include_str!("../assets/selftest_fixture.json");

/// Five annotated documents used by `relprior selftest`.
pub fn selftest_corpus() -> Vec<Document> {
    let opts = LoadOptions { expect_gold: true, permissive: false };
    parse_corpus_str(SELFTEST_FIXTURE, opts).expect("bundled fixture is valid").documents
}

pub fn selftest_json() -> &'static str {
    SELFTEST_FIXTURE
}

const FIRST: &[&str] = &[
    "Anna", "Bruno", "Clara", "Dmitri", "Elif", "Farid", "Greta", "Hiro", "Ines", "Jonas", "Kaveh", "Lena", "Mateo",
    "Nadia", "Oskar", "Priya",
];
const LAST: &[&str] = &[
    "Albrecht",
    "Baptiste",
    "Castell",
    "Dunmore",
    "Eriksen",
    "Falk",
    "Garrow",
    "Halloran",
    "Ivers",
    "Jansky",
    "Kovacs",
    "Lindqvist",
    "Marchetti",
    "Novak",
];
const PLACES: &[&str] = &[
    "Aldenport",
    "Brightwater",
    "Corvale",
    "Dunhollow",
    "Eastmere",
    "Fallowby",
    "Greywick",
    "Hartsfield",
    "Ironbridge",
    "Juniper Falls",
];
const REGIONS: &[&str] = &["Texas", "Ontario", "Bavaria", "Queensland", "Lombardy"];
const FILLER: &[&str] = &["the", "was", "in", "and", "later", "near", "with", "of"];

/// `n_docs` random documents with unique entity names (some containing
/// commas), one to three mentions per entity, and random gold triples drawn
/// from `registry`. Deterministic in `seed`.
pub fn synthetic_corpus(n_docs: usize, seed: u64, registry: &RelationRegistry) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes: Vec<&str> = registry.entries().iter().map(|r| r.code.as_str()).collect();
    (0..n_docs).map(|i| synthetic_doc(&mut rng, i, &codes)).collect()
}

fn synthetic_doc(rng: &mut ChaCha8Rng, index: usize, codes: &[&str]) -> Document {
    let n = rng.random_range(3..=12);
    let mut names: Vec<(String, EntityType)> = Vec::new();
    let mut used = HashSet::new();
    while names.len() < n {
        let (name, etype) = match rng.random_range(0..3) {
            0 => (format!("{} {}", FIRST.choose(rng).unwrap(), LAST.choose(rng).unwrap()), EntityType::Person),
            1 => (PLACES.choose(rng).unwrap().to_string(), EntityType::Location),
            _ => (format!("{}, {}", PLACES.choose(rng).unwrap(), REGIONS.choose(rng).unwrap()), EntityType::Location),
        };
        if used.insert(name.clone()) {
            names.push((name, etype));
        }
    }
    let mut sents: Vec<Vec<String>> = Vec::new();
    let mut entities = Vec::with_capacity(n);
    for (e, (name, etype)) in names.iter().enumerate() {
        let mut surfaces = vec![name.clone()];
        for _ in 0..rng.random_range(0..=2) {
            let short = if *etype == EntityType::Person {
                name.split(' ').next_back().unwrap().to_string()
            } else {
                name.clone()
            };
            surfaces.push(short);
        }
        let mentions = surfaces
            .into_iter()
            .map(|surface| {
                let mut sent: Vec<String> =
                    (0..rng.random_range(0..3)).map(|_| FILLER.choose(rng).unwrap().to_string()).collect();
                let start = sent.len();
                sent.extend(surface.split(' ').map(str::to_string));
                let end = sent.len();
                sent.push(FILLER.choose(rng).unwrap().to_string());
                sent.push(".".into());
                sents.push(sent);
                Mention { name: surface, sent_id: sents.len() - 1, span: (start, end), etype: *etype }
            })
            .collect();
        entities.push(Entity { index: e, mentions });
    }
    let mut gold = Vec::new();
    let mut seen = HashSet::new();
    for _ in 0..rng.random_range(1..=15) {
        let h = rng.random_range(0..n);
        let t = rng.random_range(0..n);
        let r = *codes.choose(rng).unwrap();
        if h != t && seen.insert((h, t, r)) {
            gold.push(GoldTriple { h, t, r: r.to_string(), evidence: vec![entities[h].mentions[0].sent_id] });
        }
    }
    Document { title: format!("Synthetic document {index}"), sents, entities, gold }
}
