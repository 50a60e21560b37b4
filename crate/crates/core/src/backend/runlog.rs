//! Append-only JSONL run log, and the engines built on it.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{cache_key, Backend, BackendError, CompletionRequest};
use crate::error::{Error, Result};
use crate::task::TaskKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub key: String,
    pub kind: TaskKind,
    pub title: String,
    pub prompt: String,
    pub response: String,
    /// Unix seconds.
    pub ts: u64,
}

/// Recorded responses keyed by [`cache_key`]. Appends go through a single
/// writer and are flushed line by line.
#[derive(Debug)]
pub struct RunLog {
    path: PathBuf,
    entries: RwLock<HashMap<String, String>>,
    writer: Option<Mutex<File>>,
}

impl RunLog {
    /// Opens (creating if needed) a log for reading and appending.
    pub fn open(path: &Path) -> Result<Self> {
        let entries = if path.exists() { read_entries(path)? } else { HashMap::new() };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), entries: RwLock::new(entries), writer: Some(Mutex::new(file)) })
    }

    /// Opens an existing log without write access.
    pub fn read_only(path: &Path) -> Result<Self> {
        Ok(Self { path: path.to_path_buf(), entries: RwLock::new(read_entries(path)?), writer: None })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("run log lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.read().expect("run log lock").get(key).cloned()
    }

    pub fn append(&self, record: &RunRecord) -> std::result::Result<(), BackendError> {
        let Some(writer) = &self.writer else {
            return Err(BackendError::Permanent(format!("run log {} is read-only", self.path.display())));
        };
        let mut line = serde_json::to_string(record).expect("run record serializes");
        line.push('\n');
        {
            let mut file = writer.lock().expect("run log writer");
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| BackendError::Permanent(format!("writing {}: {e}", self.path.display())))?;
        }
        self.entries
            .write()
            .expect("run log lock")
            .entry(record.key.clone())
            .or_insert_with(|| record.response.clone());
        Ok(())
    }
}

fn read_entries(path: &Path) -> Result<HashMap<String, String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord = serde_json::from_str(&line).map_err(|e| Error::RunLog {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.entry(record.key).or_insert(record.response);
    }
    Ok(entries)
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Serves recorded responses only.
#[derive(Debug)]
pub struct ReplayBackend {
    log: RunLog,
}

impl ReplayBackend {
    pub fn new(log: RunLog) -> Self {
        Self { log }
    }

    pub fn open(path: &Path) -> Result<Self> {
        RunLog::read_only(path).map(Self::new)
    }
}

impl Backend for ReplayBackend {
    fn generate(&self, request: &CompletionRequest) -> std::result::Result<String, BackendError> {
        let key = cache_key(request);
        self.log.get(&key).ok_or(BackendError::CacheMiss { key })
    }

    fn name(&self) -> &str {
        "replay"
    }
}

/// Any engine fronted by a run log: hits are served from the log, misses go
/// to the inner engine and are recorded.
pub struct CachingBackend<B> {
    inner: B,
    log: RunLog,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<B: Backend> CachingBackend<B> {
    pub fn new(inner: B, log: RunLog) -> Self {
        Self { inner, log, hits: AtomicUsize::new(0), misses: AtomicUsize::new(0) }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }
}

impl<B: Backend> Backend for CachingBackend<B> {
    fn generate(&self, request: &CompletionRequest) -> std::result::Result<String, BackendError> {
        let key = cache_key(request);
        if let Some(response) = self.log.get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(response);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let response = self.inner.generate(request)?;
        self.log.append(&RunRecord {
            key,
            kind: request.context.kind,
            title: request.context.doc_title.clone(),
            prompt: request.prompt.clone(),
            response: response.clone(),
            ts: now_secs(),
        })?;
        Ok(response)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{DecodingParams, TaskContext, TaskPayload};

    struct Counting(AtomicUsize);

    impl Backend for Counting {
        fn generate(&self, request: &CompletionRequest) -> std::result::Result<String, BackendError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(format!("echo: {}", request.prompt))
        }

        fn name(&self) -> &str {
            "counting"
        }
    }

    fn req(prompt: &str) -> CompletionRequest {
        let ctx = TaskContext::new(TaskKind::Head, "Doc", TaskPayload::Relations(vec!["P17".into()])).unwrap();
        CompletionRequest::new(prompt.into(), ctx, DecodingParams::default()).unwrap()
    }

    #[test]
    fn caching_records_then_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs/log.jsonl");
        {
            let cache = CachingBackend::new(Counting(AtomicUsize::new(0)), RunLog::open(&path).unwrap());
            assert_eq!(cache.generate(&req("a")).unwrap(), "echo: a");
            assert_eq!(cache.generate(&req("a")).unwrap(), "echo: a");
            assert_eq!(cache.generate(&req("b")).unwrap(), "echo: b");
            assert_eq!(cache.inner.0.load(Ordering::SeqCst), 2);
            assert_eq!((cache.hits(), cache.misses()), (1, 2));
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["key", "kind", "title", "prompt", "response", "ts"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        assert_eq!(first["kind"], "head");

        let replay = ReplayBackend::open(&path).unwrap();
        assert_eq!(replay.generate(&req("b")).unwrap(), "echo: b");
        assert!(matches!(replay.generate(&req("c")), Err(BackendError::CacheMiss { .. })));

        // a resumed cache serves old entries without touching the engine
        let resumed = CachingBackend::new(Counting(AtomicUsize::new(0)), RunLog::open(&path).unwrap());
        resumed.generate(&req("a")).unwrap();
        assert_eq!(resumed.inner.0.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn corrupt_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let good = serde_json::to_string(&RunRecord {
            key: "k".into(),
            kind: TaskKind::Epf,
            title: "t".into(),
            prompt: "p".into(),
            response: "r".into(),
            ts: 0,
        })
        .unwrap();
        std::fs::write(&path, format!("{good}\n\n{{\"key\": 1\n")).unwrap();
        match RunLog::open(&path) {
            Err(Error::RunLog { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn read_only_log_rejects_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(&path, "").unwrap();
        let log = RunLog::read_only(&path).unwrap();
        assert!(log.is_empty());
        let record = RunRecord {
            key: "k".into(),
            kind: TaskKind::Rc,
            title: "t".into(),
            prompt: "p".into(),
            response: "r".into(),
            ts: 1,
        };
        assert!(log.append(&record).is_err());
    }
}
