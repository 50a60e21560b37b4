//! The predefined relation set.
//!
//! A registry is loaded from a DocRED-style `rel_info.json` (an object
//! mapping Wikidata property codes to names). Declaration order is kept and
//! serves as "registry order" wherever the pipeline needs a stable relation
//! ordering. An optional alias table maps extra surface labels onto codes;
//! alias lookups are only ever consulted after code and name lookups fail.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::de::{Deserializer, MapAccess, Visitor};

use crate::error::{Error, Result};

const DOCRED_REL_INFO: &str = include_str!("../../assets/rel_info.json");
const BUNDLED_ALIASES: &str = include_str!("../../assets/relation_aliases.json");

/// One relation type: a Wikidata property code and its label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RelationId {
    pub code: String,
    pub name: String,
}

impl RelationId {
    pub fn new(code: impl Into<String>, name: impl Into<String>) -> Result<Self> {
        let code = code.into();
        let name = name.into();
        if !is_property_code(&code) {
            return Err(Error::Registry(format!("{code:?} is not a property code (expected P followed by digits)")));
        }
        if name.trim().is_empty() {
            return Err(Error::Registry(format!("relation {code} has an empty name")));
        }
        Ok(Self { code, name })
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.code, self.name)
    }
}

/// Returns true for strings of the form `P<digits>`.
pub fn is_property_code(s: &str) -> bool {
    s.len() > 1 && s.starts_with('P') && s[1..].bytes().all(|b| b.is_ascii_digit())
}

pub(crate) fn fold(s: &str) -> String {
    s.to_lowercase()
}

#[derive(Debug, Clone, Default)]
pub struct RelationRegistry {
    entries: Vec<RelationId>,
    by_code: HashMap<String, usize>,
    by_name: HashMap<String, usize>,
    aliases: HashMap<String, usize>,
}

impl RelationRegistry {
    pub fn from_entries(entries: impl IntoIterator<Item = RelationId>) -> Result<Self> {
        let mut registry = Self::default();
        for entry in entries {
            if registry.by_code.contains_key(&entry.code) {
                return Err(Error::Registry(format!("duplicate code {}", entry.code)));
            }
            let folded = fold(&entry.name);
            if registry.by_name.contains_key(&folded) {
                return Err(Error::Registry(format!("duplicate name {:?}", entry.name)));
            }
            let idx = registry.entries.len();
            registry.by_code.insert(entry.code.clone(), idx);
            registry.by_name.insert(folded, idx);
            registry.entries.push(entry);
        }
        if registry.entries.is_empty() {
            return Err(Error::Registry("no relations defined".into()));
        }
        Ok(registry)
    }

    /// Parses a `{"P17": "country", ...}` JSON object.
    pub fn from_json_str(json: &str) -> Result<Self> {
        let pairs = parse_object(json)?;
        let mut entries = Vec::with_capacity(pairs.len());
        for (code, name) in pairs {
            entries.push(RelationId::new(code, name)?);
        }
        Self::from_entries(entries)
    }

    /// The 96-relation DocRED set bundled with the crate.
    pub fn docred() -> Self {
        Self::from_json_str(DOCRED_REL_INFO).expect("bundled rel_info.json is valid")
    }

    /// Adds `label -> code` aliases from a JSON object.
    pub fn with_aliases_json(mut self, json: &str) -> Result<Self> {
        for (label, code) in parse_object(json)? {
            self.add_alias(&label, &code)?;
        }
        Ok(self)
    }

    /// Adds the bundled alias table covering common out-of-set paraphrases.
    pub fn with_bundled_aliases(self) -> Result<Self> {
        self.with_aliases_json(BUNDLED_ALIASES)
    }

    pub fn add_alias(&mut self, label: &str, code: &str) -> Result<()> {
        let Some(&idx) = self.by_code.get(code) else {
            return Err(Error::Registry(format!("alias {label:?} targets unknown code {code}")));
        };
        let folded = fold(label.trim());
        if folded.is_empty() {
            return Err(Error::Registry("empty alias label".into()));
        }
        if let Some(&existing) = self.by_name.get(&folded) {
            if existing != idx {
                log::warn!("alias {label:?} -> {code} shadowed by relation name of {}", self.entries[existing].code);
            }
        }
        self.aliases.insert(folded, idx);
        Ok(())
    }

    pub fn entries(&self) -> &[RelationId] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn has_aliases(&self) -> bool {
        !self.aliases.is_empty()
    }

    pub fn alias_count(&self) -> usize {
        self.aliases.len()
    }

    pub fn contains(&self, code: &str) -> bool {
        self.by_code.contains_key(code)
    }

    pub fn by_code(&self, code: &str) -> Option<&RelationId> {
        self.by_code.get(code).map(|&i| &self.entries[i])
    }

    /// Case-folded exact name lookup.
    pub fn by_name(&self, name: &str) -> Option<&RelationId> {
        self.by_name.get(&fold(name)).map(|&i| &self.entries[i])
    }

    /// Case-folded alias lookup.
    pub fn by_alias(&self, label: &str) -> Option<&RelationId> {
        self.aliases.get(&fold(label)).map(|&i| &self.entries[i])
    }

    /// Position of `code` in registry order.
    pub fn position(&self, code: &str) -> Option<usize> {
        self.by_code.get(code).copied()
    }

    pub fn name_of(&self, code: &str) -> Option<&str> {
        self.by_code(code).map(|r| r.name.as_str())
    }

    /// Iterates `(alias label, code)` pairs; labels are case-folded.
    pub fn aliases(&self) -> impl Iterator<Item = (&str, &str)> {
        self.aliases.iter().map(|(label, &i)| (label.as_str(), self.entries[i].code.as_str()))
    }
}

/// Loads a relation-info file plus an optional alias file.
pub fn load_relation_registry(path: &Path, alias_path: Option<&Path>) -> Result<RelationRegistry> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::Registry(format!("{} is empty", path.display())));
    }
    let mut registry =
        RelationRegistry::from_json_str(&text).map_err(|e| Error::Registry(format!("{}: {e}", path.display())))?;
    if let Some(alias_path) = alias_path {
        let aliases = std::fs::read_to_string(alias_path).map_err(|e| Error::io(alias_path, e))?;
        registry = registry
            .with_aliases_json(&aliases)
            .map_err(|e| Error::Registry(format!("{}: {e}", alias_path.display())))?;
        log::info!("loaded {} relation aliases from {}", registry.alias_count(), alias_path.display());
    }
    Ok(registry)
}

/// Out-of-registry paraphrase for each DocRED relation code, the inverse of the
/// bundled alias table.
pub fn bundled_label_variants() -> HashMap<String, String> {
    parse_object(BUNDLED_ALIASES)
        .expect("bundled aliases are valid")
        .into_iter()
        .map(|(label, code)| (code, label))
        .collect()
}

/// A JSON object of string values, in document order, duplicates kept.
struct OrderedPairs(Vec<(String, String)>);

impl<'de> serde::Deserialize<'de> for OrderedPairs {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct PairsVisitor;

        impl<'de> Visitor<'de> for PairsVisitor {
            type Value = OrderedPairs;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object with string values")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<OrderedPairs, A::Error> {
                let mut pairs = Vec::with_capacity(map.size_hint().unwrap_or(0));
                while let Some((k, v)) = map.next_entry::<String, String>()? {
                    pairs.push((k, v));
                }
                Ok(OrderedPairs(pairs))
            }
        }

        deserializer.deserialize_map(PairsVisitor)
    }
}

fn parse_object(json: &str) -> Result<Vec<(String, String)>> {
    serde_json::from_str::<OrderedPairs>(json).map(|p| p.0).map_err(|e| Error::Registry(format!("malformed JSON: {e}")))
}
