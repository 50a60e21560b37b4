//! Turning raw model output into grounded tuples.
//!
//! Every parser here is total: arbitrary text goes in, a (possibly empty)
//! list of tuples plus [`GroundingDiagnostics`] comes out. Each parenthesized
//! group found in the text ends up either as an output item or in exactly one
//! diagnostic counter, so `items + diagnostics.dropped() == groups` always
//! holds.
//!
//! Tuple fields are separated by top-level commas. The canonical split for a
//! triple uses the first and last comma and for a pair the first comma. When
//! a group has more commas than its arity needs, every other split is kept as
//! an alternative and the grounding parsers take the first split whose fields
//! all resolve. Entity names like "Paris, Texas" and relation names like
//! "languages spoken, written or signed" are recovered that way.

use std::collections::{HashMap, HashSet};
use std::ops::{AddAssign, Range};

use serde::{Deserialize, Serialize};

use crate::corpus::{fold, Document, RelationId, RelationRegistry};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTuple {
    /// Canonical split, trimmed.
    pub parts: Vec<String>,
    /// Other splits with all fields non-empty, canonical excluded.
    pub alternatives: Vec<Vec<String>>,
    /// Byte range of the group in the source text, parentheses included.
    pub source_span: Range<usize>,
}

impl RawTuple {
    pub fn arity(&self) -> usize {
        self.parts.len()
    }

    /// Canonical split followed by the alternatives.
    pub fn candidates(&self) -> impl Iterator<Item = &[String]> {
        std::iter::once(self.parts.as_slice()).chain(self.alternatives.iter().map(Vec::as_slice))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingDiagnostics {
    pub malformed_tuples: usize,
    pub unresolved_entities: usize,
    pub out_of_set_relations: usize,
    pub self_loops_dropped: usize,
    pub duplicates_dropped: usize,
    /// EPF tuples carrying an explicit "0" (unrelated) judgment.
    pub negative_judgments: usize,
}

impl GroundingDiagnostics {
    /// Total groups that did not become an output item.
    pub fn dropped(&self) -> usize {
        self.malformed_tuples
            + self.unresolved_entities
            + self.out_of_set_relations
            + self.self_loops_dropped
            + self.duplicates_dropped
            + self.negative_judgments
    }
}

impl AddAssign for GroundingDiagnostics {
    fn add_assign(&mut self, rhs: Self) {
        self.malformed_tuples += rhs.malformed_tuples;
        self.unresolved_entities += rhs.unresolved_entities;
        self.out_of_set_relations += rhs.out_of_set_relations;
        self.self_loops_dropped += rhs.self_loops_dropped;
        self.duplicates_dropped += rhs.duplicates_dropped;
        self.negative_judgments += rhs.negative_judgments;
    }
}

/// Result of one parse pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseOutput<T> {
    pub items: Vec<T>,
    pub diagnostics: GroundingDiagnostics,
    /// Parenthesized groups seen, malformed ones included.
    pub groups: usize,
}

/// Scans `text` for top-level parenthesized groups and splits each into
/// `expected_arity` fields (2 or 3).
pub fn extract_tuples(text: &str, expected_arity: usize) -> (Vec<RawTuple>, GroundingDiagnostics) {
    assert!(matches!(expected_arity, 2 | 3), "arity must be 2 or 3");
    let mut tuples = Vec::new();
    let mut diag = GroundingDiagnostics::default();

    let mut depth = 0usize;
    let mut open = 0usize;
    let mut commas: Vec<usize> = Vec::new();
    for (i, ch) in text.char_indices() {
        match ch {
            '(' => {
                if depth == 0 {
                    open = i;
                    commas.clear();
                }
                depth += 1;
            }
            ')' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    let body = &text[open + 1..i];
                    let rel: Vec<usize> = commas.iter().map(|c| c - open - 1).collect();
                    match split_group(body, &rel, expected_arity) {
                        Some((parts, alternatives)) => {
                            tuples.push(RawTuple { parts, alternatives, source_span: open..i + 1 })
                        }
                        None => diag.malformed_tuples += 1,
                    }
                }
            }
            ',' if depth == 1 => commas.push(i),
            _ => {}
        }
    }
    if depth > 0 {
        // unclosed trailing group
        diag.malformed_tuples += 1;
    }
    (tuples, diag)
}

fn split_group(body: &str, commas: &[usize], arity: usize) -> Option<(Vec<String>, Vec<Vec<String>>)> {
    let field = |a: usize, b: usize| body[a..b].trim().to_string();
    let mut splits: Vec<Vec<String>> = Vec::new();
    match arity {
        2 => {
            for &c in commas {
                splits.push(vec![field(0, c), field(c + 1, body.len())]);
            }
        }
        _ => {
            if commas.len() >= 2 {
                let (first, last) = (commas[0], commas[commas.len() - 1]);
                splits.push(vec![field(0, first), field(first + 1, last), field(last + 1, body.len())]);
                for i in 0..commas.len() {
                    for j in i + 1..commas.len() {
                        if i == 0 && j == commas.len() - 1 {
                            continue;
                        }
                        let (a, b) = (commas[i], commas[j]);
                        splits.push(vec![field(0, a), field(a + 1, b), field(b + 1, body.len())]);
                    }
                }
            }
        }
    }
    let mut valid = splits.into_iter().filter(|s| s.iter().all(|p| !p.is_empty()));
    let canonical = valid.next()?;
    Some((canonical, valid.collect()))
}

/// Resolves surface names to entity indices of one document.
///
/// Resolution order: exact representative name, exact mention name,
/// case-folded mention name, case-folded with internal whitespace collapsed.
/// Within a tier the lowest entity index wins.
#[derive(Debug, Clone)]
pub struct EntityGrounder {
    representative: HashMap<String, usize>,
    exact: HashMap<String, usize>,
    folded: HashMap<String, usize>,
    collapsed: HashMap<String, usize>,
}

fn collapse(s: &str) -> String {
    fold(s).split_whitespace().collect::<Vec<_>>().join(" ")
}

impl EntityGrounder {
    pub fn new(doc: &Document) -> Self {
        let mut g = Self {
            representative: HashMap::new(),
            exact: HashMap::new(),
            folded: HashMap::new(),
            collapsed: HashMap::new(),
        };
        for entity in &doc.entities {
            g.representative.entry(entity.representative_name().to_string()).or_insert(entity.index);
            for m in &entity.mentions {
                g.exact.entry(m.name.clone()).or_insert(entity.index);
                g.folded.entry(fold(&m.name)).or_insert(entity.index);
                g.collapsed.entry(collapse(&m.name)).or_insert(entity.index);
            }
        }
        g
    }

    pub fn ground(&self, name: &str) -> Option<usize> {
        let name = name.trim();
        self.representative
            .get(name)
            .or_else(|| self.exact.get(name))
            .or_else(|| self.folded.get(&fold(name)))
            .or_else(|| self.collapsed.get(&collapse(name)))
            .copied()
    }
}

pub fn ground_entity(name: &str, doc: &Document) -> Option<usize> {
    EntityGrounder::new(doc).ground(name)
}

/// Code, then case-folded name, then alias table.
pub fn normalize_relation<'r>(label: &str, registry: &'r RelationRegistry) -> Option<&'r RelationId> {
    let label = label.trim();
    registry.by_code(label).or_else(|| registry.by_name(label)).or_else(|| registry.by_alias(label))
}

enum Reject {
    Malformed,
    Negative,
    Unresolved,
    OutOfSet,
}

fn record(diag: &mut GroundingDiagnostics, reject: Reject) {
    match reject {
        Reject::Malformed => diag.malformed_tuples += 1,
        Reject::Negative => diag.negative_judgments += 1,
        Reject::Unresolved => diag.unresolved_entities += 1,
        Reject::OutOfSet => diag.out_of_set_relations += 1,
    }
}

/// Shared driver: resolve each tuple through its candidate splits, then drop
/// self-loops and duplicates, keeping first-occurrence order.
fn parse_with<T, F, L>(text: &str, arity: usize, resolve: F, is_loop: L) -> ParseOutput<T>
where
    T: Clone + Eq + std::hash::Hash,
    F: Fn(&[String]) -> Result<T, Reject>,
    L: Fn(&T) -> bool,
{
    let (tuples, mut diagnostics) = extract_tuples(text, arity);
    let groups = tuples.len() + diagnostics.malformed_tuples;
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for tuple in &tuples {
        let mut first_err = None;
        let mut resolved = None;
        for parts in tuple.candidates() {
            match resolve(parts) {
                Ok(item) => {
                    resolved = Some(item);
                    break;
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        let item = match resolved {
            Some(item) => item,
            None => {
                record(&mut diagnostics, first_err.unwrap_or(Reject::Malformed));
                continue;
            }
        };
        if is_loop(&item) {
            diagnostics.self_loops_dropped += 1;
        } else if !seen.insert(item.clone()) {
            diagnostics.duplicates_dropped += 1;
        } else {
            items.push(item);
        }
    }
    ParseOutput { items, diagnostics, groups }
}

/// `(head, 1, tail)` lines into ordered entity pairs.
pub fn parse_epf(text: &str, doc: &Document) -> ParseOutput<(usize, usize)> {
    let grounder = EntityGrounder::new(doc);
    parse_with(
        text,
        3,
        |p| {
            match p[1].as_str() {
                "1" => {}
                "0" => return Err(Reject::Negative),
                _ => return Err(Reject::Malformed),
            }
            match (grounder.ground(&p[0]), grounder.ground(&p[2])) {
                (Some(h), Some(t)) => Ok((h, t)),
                _ => Err(Reject::Unresolved),
            }
        },
        |&(h, t)| h == t,
    )
}

/// `(head, relation, tail)` lines into `(h, code, t)`.
pub fn parse_rc(text: &str, doc: &Document, registry: &RelationRegistry) -> ParseOutput<(usize, String, usize)> {
    let grounder = EntityGrounder::new(doc);
    parse_with(
        text,
        3,
        |p| {
            let rel = normalize_relation(&p[1], registry).ok_or(Reject::OutOfSet)?;
            match (grounder.ground(&p[0]), grounder.ground(&p[2])) {
                (Some(h), Some(t)) => Ok((h, rel.code.clone(), t)),
                _ => Err(Reject::Unresolved),
            }
        },
        |(h, _, t)| h == t,
    )
}

/// `(entity, relation)` lines into head candidates.
pub fn parse_head(text: &str, doc: &Document, registry: &RelationRegistry) -> ParseOutput<(usize, String)> {
    let grounder = EntityGrounder::new(doc);
    parse_with(
        text,
        2,
        |p| {
            let rel = normalize_relation(&p[1], registry).ok_or(Reject::OutOfSet)?;
            let h = grounder.ground(&p[0]).ok_or(Reject::Unresolved)?;
            Ok((h, rel.code.clone()))
        },
        |_| false,
    )
}

/// `(relation, entity)` lines into tail candidates.
pub fn parse_tail(text: &str, doc: &Document, registry: &RelationRegistry) -> ParseOutput<(String, usize)> {
    let grounder = EntityGrounder::new(doc);
    parse_with(
        text,
        2,
        |p| {
            let rel = normalize_relation(&p[0], registry).ok_or(Reject::OutOfSet)?;
            let t = grounder.ground(&p[1]).ok_or(Reject::Unresolved)?;
            Ok((rel.code.clone(), t))
        },
        |_| false,
    )
}
