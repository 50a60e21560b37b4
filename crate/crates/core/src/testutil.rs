use crate::corpus::{Document, RelationId, RelationRegistry};
use crate::fixtures::selftest_corpus;

/// The "Dieter Eppler" document from the bundled fixture.
pub fn fixture_doc() -> Document {
    selftest_corpus().remove(0)
}

/// A registry without DocRED's own "country" (P17) relation.
pub fn mini_registry() -> RelationRegistry {
    RelationRegistry::from_entries([
        RelationId::new("P27", "country of citizenship").unwrap(),
        RelationId::new("P161", "cast member").unwrap(),
        RelationId::new("P569", "date of birth").unwrap(),
    ])
    .unwrap()
}
