//! Gold-label oracle.
//!
//! Answers each stage from the document's annotations, formatted exactly as a
//! well-behaved model would. Three noise knobs emulate typical model failures:
//!
//! * `omission_rate`: each gold line is dropped with this probability.
//! * `spurious_rate`: EPF answers gain `round(rate * gold pairs)` unrelated
//!   pairs drawn uniformly from the non-gold pairs under judgment.
//! * `label_corruption_rate`: in RC / HEAD / TAIL answers each relation name
//!   is replaced by an out-of-registry paraphrase with this probability.
//!
//! Randomness comes from a ChaCha8 stream seeded from (seed, title, task,
//! payload), so answers do not depend on call order or thread scheduling.
//! Per line, the omission draw comes first, then (RC / HEAD / TAIL only) the
//! corruption draw; EPF spurious pairs are sampled after all gold lines.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, CompletionRequest, TaskPayload};
use crate::corpus::{bundled_label_variants, Document, RelationRegistry};
use crate::error::{Error, Result};
use crate::task::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub omission_rate: f64,
    pub spurious_rate: f64,
    pub label_corruption_rate: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::clean(0)
    }
}

impl NoiseConfig {
    pub fn clean(seed: u64) -> Self {
        Self { omission_rate: 0.0, spurious_rate: 0.0, label_corruption_rate: 0.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("omission_rate", self.omission_rate),
            ("spurious_rate", self.spurious_rate),
            ("label_corruption_rate", self.label_corruption_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Seeds one oracle answer; exposed so tests can replay the draw sequence.
pub fn oracle_rng(seed: u64, title: &str, kind: TaskKind, payload: &TaskPayload) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in [title.as_bytes(), kind.as_str().as_bytes()] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hasher.update(serde_json::to_vec(payload).expect("payload serializes"));
    let digest = hasher.finalize();
    let mut seed_bytes = [0u8; 32];
    seed_bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed_bytes)
}

#[derive(Debug, Clone)]
pub struct OracleBackend {
    docs: HashMap<String, Document>,
    registry: RelationRegistry,
    noise: NoiseConfig,
    variants: HashMap<String, String>,
}

impl OracleBackend {
    pub fn new(docs: &[Document], registry: RelationRegistry, noise: NoiseConfig) -> Result<Self> {
        noise.validate()?;
        let mut map = HashMap::with_capacity(docs.len());
        for doc in docs {
            doc.validate_relations(&registry)?;
            if map.insert(doc.title.clone(), doc.clone()).is_some() {
                return Err(Error::Validation(format!("duplicate document title {:?}", doc.title)));
            }
        }
        let mut variants = bundled_label_variants();
        for entry in registry.entries() {
            variants.entry(entry.code.clone()).or_insert_with(|| {
                let mut label = format!("{} related", entry.name);
                while registry.by_name(&label).is_some() {
                    label.push_str(" thing");
                }
                label
            });
        }
        Ok(Self { docs: map, registry, noise, variants })
    }

    pub fn noise(&self) -> &NoiseConfig {
        &self.noise
    }

    /// The out-of-registry label used when corrupting `code`.
    pub fn corrupted_label(&self, code: &str) -> &str {
        &self.variants[code]
    }

    fn label(&self, code: &str, rng: &mut ChaCha8Rng) -> String {
        let corrupt = rng.random::<f64>() < self.noise.label_corruption_rate;
        if corrupt {
            self.variants[code].clone()
        } else {
            self.registry.name_of(code).expect("gold code in registry").to_string()
        }
    }

    fn omitted(&self, rng: &mut ChaCha8Rng) -> bool {
        rng.random::<f64>() < self.noise.omission_rate
    }

    fn answer(&self, doc: &Document, kind: TaskKind, payload: &TaskPayload, rng: &mut ChaCha8Rng) -> Vec<String> {
        let name = |i: usize| doc.entities[i].representative_name();
        let reg_pos = |code: &str| self.registry.position(code).expect("gold code in registry");
        let mut lines = Vec::new();
        match (kind, payload) {
            (TaskKind::Epf, TaskPayload::Pairs(pairs)) => {
                let asked: BTreeSet<(usize, usize)> = pairs.iter().copied().collect();
                let gold: BTreeSet<(usize, usize)> =
                    doc.gold_pairs().into_iter().filter(|p| asked.contains(p)).collect();
                let mut kept: BTreeSet<(usize, usize)> = BTreeSet::new();
                for &pair in &gold {
                    if !self.omitted(rng) {
                        kept.insert(pair);
                    }
                }
                let pool: Vec<(usize, usize)> = asked.difference(&gold).copied().collect();
                let k = ((self.noise.spurious_rate * gold.len() as f64).round() as usize).min(pool.len());
                if k > 0 {
                    for i in sample(rng, pool.len(), k) {
                        kept.insert(pool[i]);
                    }
                }
                for (h, t) in kept {
                    lines.push(format!("({}, 1, {})", name(h), name(t)));
                }
            }
            (TaskKind::Rc, TaskPayload::Pairs(pairs)) => {
                let asked: HashSet<(usize, usize)> = pairs.iter().copied().collect();
                let mut facts: Vec<(usize, usize, &str)> =
                    doc.gold.iter().filter(|g| asked.contains(&(g.h, g.t))).map(|g| (g.h, g.t, g.r.as_str())).collect();
                facts.sort_by_key(|&(h, t, r)| (h, t, reg_pos(r)));
                facts.dedup();
                for (h, t, r) in facts {
                    if self.omitted(rng) {
                        continue;
                    }
                    let label = self.label(r, rng);
                    lines.push(format!("({}, {label}, {})", name(h), name(t)));
                }
            }
            (TaskKind::Head | TaskKind::Tail, TaskPayload::Relations(relations)) => {
                let wanted: HashSet<&str> = relations.iter().map(String::as_str).collect();
                let mut cands: Vec<(usize, &str)> = doc
                    .gold
                    .iter()
                    .filter(|g| wanted.contains(g.r.as_str()))
                    .map(|g| (if kind == TaskKind::Head { g.h } else { g.t }, g.r.as_str()))
                    .collect();
                cands.sort_by_key(|&(e, r)| (e, reg_pos(r)));
                cands.dedup();
                for (e, r) in cands {
                    if self.omitted(rng) {
                        continue;
                    }
                    let label = self.label(r, rng);
                    lines.push(if kind == TaskKind::Head {
                        format!("({}, {label})", name(e))
                    } else {
                        format!("({label}, {})", name(e))
                    });
                }
            }
            _ => unreachable!("context shape checked at construction"),
        }
        lines
    }
}

impl Backend for OracleBackend {
    fn generate(&self, request: &CompletionRequest) -> std::result::Result<String, BackendError> {
        let ctx = &request.context;
        let doc = self
            .docs
            .get(&ctx.doc_title)
            .ok_or_else(|| BackendError::Permanent(format!("oracle has no document {:?}", ctx.doc_title)))?;
        if let TaskPayload::Pairs(pairs) = &ctx.payload {
            let n = doc.entities.len();
            if pairs.iter().any(|&(h, t)| h >= n || t >= n) {
                return Err(BackendError::InvalidRequest("pair index out of bounds".into()));
            }
        }
        if let TaskPayload::Relations(relations) = &ctx.payload {
            if let Some(bad) = relations.iter().find(|r| !self.registry.contains(r)) {
                return Err(BackendError::InvalidRequest(format!("unknown relation {bad}")));
            }
        }
        let mut rng = oracle_rng(self.noise.seed, &ctx.doc_title, ctx.kind, &ctx.payload);
        Ok(self.answer(doc, ctx.kind, &ctx.payload, &mut rng).join("\n"))
    }

    fn name(&self) -> &str {
        "oracle"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{DecodingParams, TaskContext};
    use crate::corpus::candidate_pairs;
    use crate::parsing::{parse_epf, parse_head, parse_rc, parse_tail};
    use crate::testutil::fixture_doc;

    fn ask(oracle: &OracleBackend, doc: &Document, kind: TaskKind, payload: TaskPayload) -> String {
        let ctx = TaskContext::new(kind, doc.title.clone(), payload).unwrap();
        let req = CompletionRequest::new("ignored".into(), ctx, DecodingParams::default()).unwrap();
        oracle.generate(&req).unwrap()
    }

    fn oracle(noise: NoiseConfig) -> (OracleBackend, Document, RelationRegistry) {
        let doc = fixture_doc();
        let reg = RelationRegistry::docred();
        (OracleBackend::new(std::slice::from_ref(&doc), reg.clone(), noise).unwrap(), doc, reg)
    }

    #[test]
    fn clean_epf_lists_gold_pairs() {
        let (o, doc, _) = oracle(NoiseConfig::clean(7));
        let text = ask(&o, &doc, TaskKind::Epf, TaskPayload::Pairs(candidate_pairs(&doc)));
        // brute-force projection of gold triples onto pairs
        let mut expected: Vec<(usize, usize)> = Vec::new();
        for g in &doc.gold {
            if !expected.contains(&(g.h, g.t)) {
                expected.push((g.h, g.t));
            }
        }
        expected.sort();
        let lines: Vec<String> = expected
            .iter()
            .map(|&(h, t)| format!("({}, 1, {})", doc.entity_name(h).unwrap(), doc.entity_name(t).unwrap()))
            .collect();
        assert_eq!(text, lines.join("\n"));
        assert_eq!(parse_epf(&text, &doc).items, expected);
    }

    #[test]
    fn clean_answers_round_trip_every_task() {
        let (o, doc, reg) = oracle(NoiseConfig::clean(1));
        let pairs = doc.gold_pairs();
        let rc = ask(&o, &doc, TaskKind::Rc, TaskPayload::Pairs(pairs));
        let mut got: Vec<_> = parse_rc(&rc, &doc, &reg).items.into_iter().map(|(h, r, t)| (h, t, r)).collect();
        got.sort();
        assert_eq!(got, doc.gold_facts());

        let rels: Vec<String> = reg.entries().iter().map(|r| r.code.clone()).collect();
        let head = ask(&o, &doc, TaskKind::Head, TaskPayload::Relations(rels.clone()));
        let mut heads: Vec<_> = parse_head(&head, &doc, &reg).items;
        heads.sort();
        let mut expect: Vec<_> = doc.gold.iter().map(|g| (g.h, g.r.clone())).collect();
        expect.sort();
        expect.dedup();
        assert_eq!(heads, expect);

        let tail = ask(&o, &doc, TaskKind::Tail, TaskPayload::Relations(rels));
        let mut tails: Vec<_> = parse_tail(&tail, &doc, &reg).items;
        tails.sort();
        let mut expect: Vec<_> = doc.gold.iter().map(|g| (g.r.clone(), g.t)).collect();
        expect.sort();
        expect.dedup();
        assert_eq!(tails, expect);
    }

    #[test]
    fn full_omission_gives_empty_body() {
        let noise = NoiseConfig { omission_rate: 1.0, ..NoiseConfig::clean(3) };
        let (o, doc, _) = oracle(noise);
        assert_eq!(ask(&o, &doc, TaskKind::Epf, TaskPayload::Pairs(candidate_pairs(&doc))), "");
        assert_eq!(ask(&o, &doc, TaskKind::Rc, TaskPayload::Pairs(doc.gold_pairs())), "");
    }

    #[test]
    fn full_corruption_uses_out_of_set_labels() {
        let noise = NoiseConfig { label_corruption_rate: 1.0, ..NoiseConfig::clean(3) };
        let (o, doc, reg) = oracle(noise);
        let text = ask(&o, &doc, TaskKind::Rc, TaskPayload::Pairs(vec![(0, 3)]));
        assert_eq!(text, "(Dieter Eppler, nationality, Federal Republic of Germany)");
        let parsed = parse_rc(&text, &doc, &reg);
        assert!(parsed.items.is_empty());
        assert_eq!(parsed.diagnostics.out_of_set_relations, 1);
        let healed = parse_rc(&text, &doc, &reg.clone().with_bundled_aliases().unwrap());
        assert_eq!(healed.items, vec![(0, "P27".to_string(), 3)]);
    }

    #[test]
    fn spurious_pairs_match_independent_replay() {
        let noise = NoiseConfig { spurious_rate: 0.5, omission_rate: 0.25, ..NoiseConfig::clean(11) };
        let (o, doc, _) = oracle(noise);
        let payload = TaskPayload::Pairs(candidate_pairs(&doc));
        let text = ask(&o, &doc, TaskKind::Epf, payload.clone());

        // replay the documented draw order by hand
        let mut rng = oracle_rng(11, &doc.title, TaskKind::Epf, &payload);
        let gold: Vec<(usize, usize)> = doc.gold_pairs();
        let mut expected: Vec<(usize, usize)> = gold.iter().copied().filter(|_| rng.random::<f64>() >= 0.25).collect();
        let pool: Vec<(usize, usize)> = candidate_pairs(&doc).into_iter().filter(|p| !gold.contains(p)).collect();
        let k = (0.5 * gold.len() as f64).round() as usize;
        for i in sample(&mut rng, pool.len(), k) {
            expected.push(pool[i]);
        }
        expected.sort();

        let got = parse_epf(&text, &doc).items;
        assert_eq!(got, expected);
        let spurious = got.iter().filter(|p| !gold.contains(p)).count();
        assert_eq!(spurious, k);
    }

    #[test]
    fn deterministic_across_instances() {
        let noise = NoiseConfig { omission_rate: 0.3, spurious_rate: 0.3, label_corruption_rate: 0.3, seed: 5 };
        let (a, doc, _) = oracle(noise);
        let (b, _, _) = oracle(noise);
        for kind in [TaskKind::Epf, TaskKind::Rc] {
            let p = TaskPayload::Pairs(candidate_pairs(&doc));
            assert_eq!(ask(&a, &doc, kind, p.clone()), ask(&b, &doc, kind, p));
        }
        let (c, _, _) = oracle(NoiseConfig { seed: 6, ..noise });
        let p = TaskPayload::Pairs(candidate_pairs(&doc));
        let differs =
            (0..1).any(|_| ask(&a, &doc, TaskKind::Epf, p.clone()) != ask(&c, &doc, TaskKind::Epf, p.clone()));
        assert!(differs);
    }

    #[test]
    fn rejects_bad_rates_and_unknown_titles() {
        let doc = fixture_doc();
        let reg = RelationRegistry::docred();
        let bad = NoiseConfig { omission_rate: 1.5, ..Default::default() };
        assert!(OracleBackend::new(std::slice::from_ref(&doc), reg.clone(), bad).is_err());
        let o = OracleBackend::new(&[], reg, NoiseConfig::default()).unwrap();
        let ctx = TaskContext::new(TaskKind::Epf, "missing", TaskPayload::Pairs(vec![])).unwrap();
        let req = CompletionRequest::new(String::new(), ctx, DecodingParams::default()).unwrap();
        assert!(matches!(o.generate(&req), Err(BackendError::Permanent(_))));
    }
}
