//! Completion engines behind one interface.
//!
//! * [`HttpBackend`]: any OpenAI-compatible `/chat/completions` service.
//! * [`OracleBackend`]: answers from gold annotations, with seeded noise.
//! * [`ReplayBackend`]: serves responses recorded in a [`RunLog`].
//!
//! [`CachingBackend`] wraps any engine with a run log so interrupted corpus
//! runs pick up where they stopped.

mod http;
mod oracle;
mod retry;
mod runlog;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::task::TaskKind;

pub use http::{HttpBackend, HttpConfig};
pub use oracle::{NoiseConfig, OracleBackend};
pub use retry::RetryPolicy;
pub use runlog::{CachingBackend, ReplayBackend, RunLog, RunRecord};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Retryable failure that outlived the retry budget.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend failure: {0}")]
    Permanent(String),
    #[error("no recorded response for request {key}")]
    CacheMiss { key: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transient(_))
    }
}

/// Structured stage input, so engines that know the gold data (the oracle)
/// need not parse prompts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskPayload {
    /// Ordered entity pairs under judgment (EPF and RC).
    Pairs(Vec<(usize, usize)>),
    /// Relation codes (HEAD and TAIL).
    Relations(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskContext {
    pub kind: TaskKind,
    pub doc_title: String,
    pub payload: TaskPayload,
}

impl TaskContext {
    pub fn new(kind: TaskKind, doc_title: impl Into<String>, payload: TaskPayload) -> Result<Self, BackendError> {
        let shape_ok = matches!(
            (kind, &payload),
            (TaskKind::Epf | TaskKind::Rc, TaskPayload::Pairs(_))
                | (TaskKind::Head | TaskKind::Tail, TaskPayload::Relations(_))
        );
        if !shape_ok {
            return Err(BackendError::InvalidRequest(format!(
                "{kind} task cannot carry a {} payload",
                match payload {
                    TaskPayload::Pairs(_) => "pair",
                    TaskPayload::Relations(_) => "relation",
                }
            )));
        }
        Ok(Self { kind, doc_title: doc_title.into(), payload })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self { temperature: 0.1, top_p: 0.9, max_tokens: 1024 }
    }
}

impl DecodingParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.temperature) {
            return Err(BackendError::InvalidRequest(format!("temperature {} outside (0, 1)", self.temperature)));
        }
        if !open_unit(self.top_p) {
            return Err(BackendError::InvalidRequest(format!("top_p {} outside (0, 1)", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub context: TaskContext,
    pub params: DecodingParams,
}

impl CompletionRequest {
    pub fn new(prompt: String, context: TaskContext, params: DecodingParams) -> Result<Self, BackendError> {
        params.validate()?;
        Ok(Self { prompt, context, params })
    }
}

/// Stable hex key over (kind, title, prompt, temperature, top_p).
///
/// Fields are length-prefixed so no two distinct field tuples hash the same
/// byte stream.
pub fn cache_key(request: &CompletionRequest) -> String {
    let mut hasher = Sha256::new();
    let mut field = |bytes: &[u8]| {
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    };
    field(request.context.kind.as_str().as_bytes());
    field(request.context.doc_title.as_bytes());
    field(request.prompt.as_bytes());
    field(&request.params.temperature.to_bits().to_le_bytes());
    field(&request.params.top_p.to_bits().to_le_bytes());
    hex::encode(hasher.finalize())
}

/// A completion engine. Implementations must tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn generate(&self, request: &CompletionRequest) -> Result<String, BackendError>;

    fn name(&self) -> &str;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn generate(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).generate(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn generate(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).generate(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn generate(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).generate(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn request(prompt: &str, title: &str) -> CompletionRequest {
        let ctx = TaskContext::new(TaskKind::Rc, title, TaskPayload::Pairs(vec![(0, 1)])).unwrap();
        CompletionRequest::new(prompt.to_string(), ctx, DecodingParams::default()).unwrap()
    }

    #[test]
    fn context_shape_is_checked() {
        assert!(TaskContext::new(TaskKind::Epf, "t", TaskPayload::Relations(vec![])).is_err());
        assert!(TaskContext::new(TaskKind::Head, "t", TaskPayload::Pairs(vec![])).is_err());
        assert!(TaskContext::new(TaskKind::Tail, "t", TaskPayload::Relations(vec![])).is_ok());
    }

    #[test]
    fn decoding_params_open_interval() {
        let ctx = TaskContext::new(TaskKind::Rc, "t", TaskPayload::Pairs(vec![])).unwrap();
        for (t, p) in [(0.0, 0.5), (1.0, 0.5), (0.5, 0.0), (0.5, 1.0), (-0.1, 0.5)] {
            let params = DecodingParams { temperature: t, top_p: p, max_tokens: 10 };
            assert!(CompletionRequest::new("x".into(), ctx.clone(), params).is_err());
        }
        let zero_tokens = DecodingParams { max_tokens: 0, ..Default::default() };
        assert!(zero_tokens.validate().is_err());
    }

    #[test]
    fn cache_key_ignores_payload_and_max_tokens() {
        let a = request("p", "t");
        let mut b = a.clone();
        b.context.payload = TaskPayload::Pairs(vec![(3, 4)]);
        b.params.max_tokens = 7;
        assert_eq!(cache_key(&a), cache_key(&b));
        let mut c = a.clone();
        c.params.temperature = 0.2;
        assert_ne!(cache_key(&a), cache_key(&c));
        let mut d = a.clone();
        d.context.kind = TaskKind::Epf;
        assert_ne!(cache_key(&a), cache_key(&d));
    }

    proptest! {
        #[test]
        fn distinct_prompts_never_collide(a in ".{0,64}", b in ".{0,64}", title in "[a-z]{0,8}") {
            prop_assume!(a != b);
            prop_assert_ne!(cache_key(&request(&a, &title)), cache_key(&request(&b, &title)));
        }

        #[test]
        fn title_prompt_boundary_is_unambiguous(a in "[ab]{0,6}", b in "[ab]{0,6}", c in "[ab]{0,6}", d in "[ab]{0,6}") {
            prop_assume!((a.clone(), b.clone()) != (c.clone(), d.clone()));
            prop_assert_ne!(cache_key(&request(&b, &a)), cache_key(&request(&d, &c)));
        }
    }
}
