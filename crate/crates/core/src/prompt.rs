//! Prompt templates and rendering.
//!
//! A template file has an instruction section and an input section separated
//! by a line reading exactly `### Input`. Both sections may use the
//! placeholders `{text}`, `{relation_set}`, `{entities}` (alias `{entity}`),
//! `{pairs}` and `{relations}`; `{{` and `}}` produce literal braces. The
//! rendered prompt sent to a model is the instruction, a line `Input:`, then
//! the input. Fine-tuning records use the two sections as their `instruction`
//! and `input` fields.

use std::fmt;
use std::path::Path;

use crate::corpus::{Document, RelationRegistry};
use crate::error::{Error, Result};

const INPUT_MARKER: &str = "### Input";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateKind {
    /// Entity filtering over the entity set.
    Epf,
    /// Entity filtering over an explicit pair list.
    EpfPairs,
    Rc,
    Head,
    Tail,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 5] =
        [TemplateKind::Epf, TemplateKind::EpfPairs, TemplateKind::Rc, TemplateKind::Head, TemplateKind::Tail];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateKind::Epf => "epf.txt",
            TemplateKind::EpfPairs => "epf_pairs.txt",
            TemplateKind::Rc => "rc.txt",
            TemplateKind::Head => "head.txt",
            TemplateKind::Tail => "tail.txt",
        }
    }

    fn bundled_source(self) -> &'static str {
        match self {
            TemplateKind::Epf => include_str!("../assets/templates/epf.txt"),
            TemplateKind::EpfPairs => include_str!("../assets/templates/epf_pairs.txt"),
            TemplateKind::Rc => include_str!("../assets/templates/rc.txt"),
            TemplateKind::Head => include_str!("../assets/templates/head.txt"),
            TemplateKind::Tail => include_str!("../assets/templates/tail.txt"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Text,
    RelationSet,
    Entities,
    Pairs,
    Relations,
}

impl Slot {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "text" => Slot::Text,
            "relation_set" => Slot::RelationSet,
            "entities" | "entity" => Slot::Entities,
            "pairs" => Slot::Pairs,
            "relations" => Slot::Relations,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(Slot),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    instruction: Vec<Segment>,
    input: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(kind: TemplateKind, source: &str) -> Result<Self> {
        let source = source.replace("\r\n", "\n");
        let mut instruction = Vec::new();
        let mut input = Vec::new();
        let mut seen_marker = false;
        for line in source.lines() {
            if line.trim_end() == INPUT_MARKER && !seen_marker {
                seen_marker = true;
                continue;
            }
            let target = if seen_marker { &mut input } else { &mut instruction };
            target.push(line);
        }
        if !seen_marker {
            return Err(Error::Template(format!("{}: missing `{INPUT_MARKER}` separator line", kind.file_name())));
        }
        let instruction = tokenize(kind, instruction.join("\n").trim_end())?;
        let input = tokenize(kind, input.join("\n").trim_end())?;
        Ok(Self { kind, instruction, input })
    }

    /// The literal text of the template's output-format example, i.e. the
    /// last quoted parenthesized group in the instruction.
    pub fn declared_format(&self) -> Option<String> {
        let literal: String = self
            .instruction
            .iter()
            .filter_map(|s| match s {
                Segment::Literal(l) => Some(l.as_str()),
                Segment::Slot(_) => None,
            })
            .collect();
        let end = literal.rfind(")'")?;
        let start = literal[..end].rfind("'(")?;
        Some(literal[start + 1..end + 1].to_string())
    }
}

fn tokenize(kind: TemplateKind, body: &str) -> Result<Vec<Segment>> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut chars = body.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                literal.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                literal.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(ch) => name.push(ch),
                        None => {
                            return Err(Error::Template(format!(
                                "{}: unterminated placeholder {{{name}",
                                kind.file_name()
                            )))
                        }
                    }
                }
                let slot = Slot::parse(name.trim())
                    .ok_or_else(|| Error::Template(format!("{}: unknown placeholder {{{name}}}", kind.file_name())))?;
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Slot(slot));
            }
            '}' => {
                return Err(Error::Template(format!(
                    "{}: unmatched `}}` (use `}}}}` for a literal brace)",
                    kind.file_name()
                )))
            }
            _ => literal.push(c),
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

/// A rendered prompt in its two parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub instruction: String,
    pub input: String,
}

impl Prompt {
    pub fn text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\nInput:\n{}", self.instruction, self.input)
    }
}

struct Bindings<'a> {
    doc: &'a Document,
    registry: &'a RelationRegistry,
    entities: Option<&'a [usize]>,
    pairs: &'a [(usize, usize)],
    relations: &'a [String],
}

impl Bindings<'_> {
    fn value(&self, slot: Slot) -> String {
        match slot {
            Slot::Text => self.doc.text(),
            Slot::RelationSet => join_names(self.registry.entries().iter().map(|r| r.name.as_str())),
            Slot::Entities => match self.entities {
                Some(indices) => {
                    indices.iter().map(|&i| self.doc.entities[i].representative_name()).collect::<Vec<_>>().join("\n")
                }
                None => self.doc.entities.iter().map(|e| e.representative_name()).collect::<Vec<_>>().join("\n"),
            },
            Slot::Pairs => self.pairs.iter().map(|&(h, t)| format_pair(self.doc, h, t)).collect::<Vec<_>>().join("\n"),
            Slot::Relations => join_names(self.relations.iter().filter_map(|code| self.registry.name_of(code))),
        }
    }
}

fn join_names<'a>(names: impl Iterator<Item = &'a str>) -> String {
    names.collect::<Vec<_>>().join("; ")
}

fn format_pair(doc: &Document, h: usize, t: usize) -> String {
    format!("({}, {})", doc.entities[h].representative_name(), doc.entities[t].representative_name())
}

fn render(template: &PromptTemplate, b: &Bindings<'_>) -> Prompt {
    // each slot computed once per render
    let mut cache: Vec<(Slot, String)> = Vec::new();
    let mut expand = |segments: &[Segment]| {
        let mut out = String::new();
        for seg in segments {
            match seg {
                Segment::Literal(l) => out.push_str(l),
                Segment::Slot(slot) => {
                    if let Some((_, v)) = cache.iter().find(|(s, _)| s == slot) {
                        out.push_str(v);
                    } else {
                        let v = b.value(*slot);
                        out.push_str(&v);
                        cache.push((*slot, v));
                    }
                }
            }
        }
        out
    };
    let instruction = expand(&template.instruction);
    let input = expand(&template.input);
    Prompt { instruction, input }
}

fn check_pairs(doc: &Document, pairs: &[(usize, usize)]) -> Result<()> {
    let n = doc.entities.len();
    if let Some(&(h, t)) = pairs.iter().find(|&&(h, t)| h >= n || t >= n) {
        return Err(Error::Validation(format!(
            "document {:?}: pair ({h}, {t}) out of bounds for {n} entities",
            doc.title
        )));
    }
    Ok(())
}

/// Deduplicates relation codes into registry order; fails on unknown codes.
pub fn registry_ordered(registry: &RelationRegistry, codes: &[String]) -> Result<Vec<String>> {
    let mut positions = Vec::with_capacity(codes.len());
    for code in codes {
        let pos = registry
            .position(code)
            .ok_or_else(|| Error::Validation(format!("relation {code} is not in the registry")))?;
        positions.push(pos);
    }
    positions.sort_unstable();
    positions.dedup();
    Ok(positions.into_iter().map(|p| registry.entries()[p].code.clone()).collect())
}

/// The full set of templates used by the pipeline.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: Vec<PromptTemplate>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::bundled()
    }
}

impl PromptSet {
    pub fn bundled() -> Self {
        let templates = TemplateKind::ALL
            .iter()
            .map(|&k| PromptTemplate::parse(k, k.bundled_source()).expect("bundled template parses"))
            .collect();
        Self { templates }
    }

    /// Bundled templates, overridden by any `<kind>.txt` present in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut set = Self::bundled();
        for kind in TemplateKind::ALL {
            let path = dir.join(kind.file_name());
            if path.exists() {
                let source = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                set.set(PromptTemplate::parse(kind, &source)?);
                log::info!("using template override {}", path.display());
            }
        }
        Ok(set)
    }

    pub fn set(&mut self, template: PromptTemplate) {
        let slot = self.templates.iter_mut().find(|t| t.kind == template.kind).expect("every kind present");
        *slot = template;
    }

    pub fn get(&self, kind: TemplateKind) -> &PromptTemplate {
        self.templates.iter().find(|t| t.kind == kind).expect("every kind present")
    }

    /// EPF prompt listing the document's whole entity set.
    pub fn render_epf(&self, doc: &Document, registry: &RelationRegistry) -> Prompt {
        render(self.get(TemplateKind::Epf), &Bindings { doc, registry, entities: None, pairs: &[], relations: &[] })
    }

    /// EPF prompt restricted to a subset of entities, in the given order.
    pub fn render_epf_entities(
        &self,
        doc: &Document,
        registry: &RelationRegistry,
        entities: &[usize],
    ) -> Result<Prompt> {
        if let Some(&bad) = entities.iter().find(|&&i| i >= doc.entities.len()) {
            return Err(Error::Validation(format!("document {:?}: entity {bad} out of bounds", doc.title)));
        }
        Ok(render(
            self.get(TemplateKind::Epf),
            &Bindings { doc, registry, entities: Some(entities), pairs: &[], relations: &[] },
        ))
    }

    /// EPF prompt enumerating candidate pairs explicitly.
    pub fn render_epf_pairs(
        &self,
        doc: &Document,
        registry: &RelationRegistry,
        pairs: &[(usize, usize)],
    ) -> Result<Prompt> {
        check_pairs(doc, pairs)?;
        Ok(render(self.get(TemplateKind::EpfPairs), &Bindings { doc, registry, entities: None, pairs, relations: &[] }))
    }

    pub fn render_rc(&self, doc: &Document, registry: &RelationRegistry, pairs: &[(usize, usize)]) -> Result<Prompt> {
        check_pairs(doc, pairs)?;
        Ok(render(self.get(TemplateKind::Rc), &Bindings { doc, registry, entities: None, pairs, relations: &[] }))
    }

    pub fn render_head(&self, doc: &Document, registry: &RelationRegistry, relations: &[String]) -> Result<Prompt> {
        let relations = registry_ordered(registry, relations)?;
        Ok(render(
            self.get(TemplateKind::Head),
            &Bindings { doc, registry, entities: None, pairs: &[], relations: &relations },
        ))
    }

    pub fn render_tail(&self, doc: &Document, registry: &RelationRegistry, relations: &[String]) -> Result<Prompt> {
        let relations = registry_ordered(registry, relations)?;
        Ok(render(
            self.get(TemplateKind::Tail),
            &Bindings { doc, registry, entities: None, pairs: &[], relations: &relations },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parsing::extract_tuples;
    use crate::testutil::fixture_doc;

    fn setup() -> (PromptSet, Document, RelationRegistry) {
        (PromptSet::bundled(), fixture_doc(), RelationRegistry::docred())
    }

    #[test]
    fn epf_prompt_contents() {
        let (set, doc, reg) = setup();
        let p = set.render_epf(&doc, &reg).text();
        assert!(p.contains("(head entity, 1, tail entity)"));
        assert!(p.contains(&doc.text()));
        assert!(p.contains("country of citizenship; "));
        assert!(p.ends_with("Input:\nDieter Eppler\nStuttgart\nThe Country Doctor\nFederal Republic of Germany\nWest Germany\nGerman\n12 April 2008\n11 February 1927"));
        assert!(!p.contains('{'));
    }

    #[test]
    fn epf_without_entities_still_renders() {
        let (set, mut doc, reg) = setup();
        doc.entities.clear();
        let p = set.render_epf(&doc, &reg);
        assert!(p.input.is_empty());
        assert!(p.instruction.contains("(head entity, 1, tail entity)"));
    }

    #[test]
    fn title_does_not_leak_into_prompt() {
        let (set, doc, reg) = setup();
        let mut other = doc.clone();
        other.title = "Something else".into();
        assert_eq!(set.render_epf(&doc, &reg), set.render_epf(&other, &reg));
        other.sents[0][0] = "Dietrich".into();
        let a = set.render_epf(&doc, &reg).text();
        let b = set.render_epf(&other, &reg).text();
        let diff: Vec<_> = a.split(' ').zip(b.split(' ')).filter(|(x, y)| x != y).collect();
        assert_eq!(diff, vec![("Dieter", "Dietrich")]);
    }

    #[test]
    fn rc_pairs_keep_order_and_check_bounds() {
        let (set, doc, reg) = setup();
        let p = set.render_rc(&doc, &reg, &[(2, 0), (1, 0)]).unwrap();
        assert!(p.instruction.contains("'(head entity, tail entity)'"));
        assert_eq!(p.input, "(The Country Doctor, Dieter Eppler)\n(Stuttgart, Dieter Eppler)");
        assert!(set.render_rc(&doc, &reg, &[]).unwrap().input.is_empty());
        assert!(set.render_rc(&doc, &reg, &[(0, 99)]).is_err());
    }

    #[test]
    fn head_and_tail_prompts() {
        let (set, doc, reg) = setup();
        let rels = vec!["P495".to_string(), "P161".to_string(), "P161".to_string()];
        let head = set.render_head(&doc, &reg, &rels).unwrap();
        assert!(head.instruction.contains("subject of the relation"));
        assert!(head.instruction.starts_with("Given cast member; country of origin."));
        let tail = set.render_tail(&doc, &reg, &rels).unwrap();
        assert!(tail.instruction.contains("object of the relation"));
        assert!(tail.instruction.contains("'(relation1, entity1)'"));
        assert!(set.render_head(&doc, &reg, &["P9999".into()]).is_err());
        let empty = set.render_head(&doc, &reg, &[]).unwrap();
        assert!(empty.instruction.starts_with("Given . Now"));
    }

    #[test]
    fn declared_formats_parse_with_their_parsers() {
        let set = PromptSet::bundled();
        let expect = [
            (TemplateKind::Epf, 3, vec!["head entity", "1", "tail entity"]),
            (TemplateKind::EpfPairs, 3, vec!["head entity", "1", "tail entity"]),
            (TemplateKind::Rc, 3, vec!["head entity", "relation", "tail entity"]),
            (TemplateKind::Head, 2, vec!["entity1", "relation1"]),
            (TemplateKind::Tail, 2, vec!["relation1", "entity1"]),
        ];
        for (kind, arity, parts) in expect {
            let format = set.get(kind).declared_format().unwrap();
            let (tuples, diag) = extract_tuples(&format, arity);
            assert_eq!(diag.dropped(), 0, "{kind:?}");
            assert_eq!(tuples[0].parts, parts, "{kind:?}");
        }
    }

    #[test]
    fn template_errors() {
        assert!(PromptTemplate::parse(TemplateKind::Rc, "no marker {text}").is_err());
        assert!(PromptTemplate::parse(TemplateKind::Rc, "{bogus}\n### Input\n").is_err());
        assert!(PromptTemplate::parse(TemplateKind::Rc, "{text\n### Input\n").is_err());
        assert!(PromptTemplate::parse(TemplateKind::Rc, "a } b\n### Input\n").is_err());
        let t = PromptTemplate::parse(TemplateKind::Head, "{{json}} {relations}\n### Input\n{entity}").unwrap();
        let (_, doc, reg) = setup();
        let mut set = PromptSet::bundled();
        set.set(t);
        let p = set.render_head(&doc, &reg, &["P161".into()]).unwrap();
        assert_eq!(p.instruction, "{json} cast member");
        assert!(p.input.starts_with("Dieter Eppler\n"));
    }

    #[test]
    fn load_dir_overrides_only_present_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("rc.txt"), "Classify.\n### Input\n{pairs}").unwrap();
        let set = PromptSet::load_dir(dir.path()).unwrap();
        let (_, doc, reg) = setup();
        assert_eq!(
            set.render_rc(&doc, &reg, &[(1, 0)]).unwrap().text(),
            "Classify.\nInput:\n(Stuttgart, Dieter Eppler)"
        );
        assert_eq!(set.get(TemplateKind::Epf), PromptSet::bundled().get(TemplateKind::Epf));
    }
}
