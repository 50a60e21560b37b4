//! Document-level relation extraction with relations as priors.
//!
//! The pipeline runs four model tasks per document: entity pair filtering
//! (EPF), relation classification (RC) on the surviving pairs, and head / tail
//! candidate inference for the predicted relations (relation matching, RM),
//! whose candidates are merged on equal relation. EPF and RM triples are then
//! fused. Models sit behind the [`backend::Backend`] trait; the gold oracle
//! and replay engines make every stage testable offline.

pub mod backend;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod finetune;
pub mod fixtures;
pub mod parsing;
pub mod pipeline;
pub mod prompt;
pub mod task;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use task::TaskKind;
