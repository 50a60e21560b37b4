//! OpenAI-compatible chat completions over HTTP.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Backend, BackendError, CompletionRequest, RetryPolicy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    /// Base URL; `/chat/completions` is appended unless already present.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding a bearer token, if the service needs one.
    pub api_key_env: Option<String>,
    pub timeout: Duration,
    pub max_concurrency: usize,
    pub retry: RetryPolicy,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1".into(),
            model: "default".into(),
            api_key_env: None,
            timeout: Duration::from_secs(120),
            max_concurrency: 4,
            retry: RetryPolicy::default(),
        }
    }
}

impl HttpConfig {
    pub fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

pub struct HttpBackend {
    config: HttpConfig,
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    slots: Slots,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("url", &self.url).field("model", &self.config.model).finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self> {
        if config.max_concurrency == 0 {
            return Err(Error::Validation("max_concurrency must be positive".into()));
        }
        if config.model.trim().is_empty() {
            return Err(Error::Validation("model must not be empty".into()));
        }
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| Error::Validation(format!("environment variable {var} (API key) is not set")))?,
            ),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Ok(Self {
            url: config.url(),
            slots: Slots { free: Mutex::new(config.max_concurrency), cv: Condvar::new() },
            config,
            api_key,
            agent,
        })
    }

    fn attempt(&self, request: &CompletionRequest) -> std::result::Result<String, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
            "max_tokens": request.params.max_tokens,
        });
        let mut call = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send_json(&body).map_err(classify)?;
        let status = response.status().as_u16();
        if status != 200 {
            let text = response.body_mut().read_to_string().unwrap_or_default();
            let snippet: String = text.chars().take(200).collect();
            let msg = format!("HTTP {status}: {snippet}");
            return Err(if status == 429 || status >= 500 {
                BackendError::Transient(msg)
            } else {
                BackendError::Permanent(msg)
            });
        }
        let parsed: ChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Permanent(format!("malformed completion body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content.unwrap_or_default())
            .ok_or_else(|| BackendError::Permanent("completion has no choices".into()))
    }
}

fn classify(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Io(_)
        | ureq::Error::Timeout(_)
        | ureq::Error::HostNotFound
        | ureq::Error::ConnectionFailed
        | ureq::Error::BodyStalled => BackendError::Transient(e.to_string()),
        other => BackendError::Permanent(other.to_string()),
    }
}

impl Backend for HttpBackend {
    fn generate(&self, request: &CompletionRequest) -> std::result::Result<String, BackendError> {
        request.params.validate()?;
        let _slot = self.slots.acquire();
        self.config.retry.run(|_| self.attempt(request), std::thread::sleep)
    }

    fn name(&self) -> &str {
        "http"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{DecodingParams, TaskContext, TaskPayload};
    use crate::task::TaskKind;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Serves one canned (status, body) per connection, in order, and records
    /// each request body.
    fn mock(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>, std::thread::JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen2 = Arc::clone(&seen);
        let handle = std::thread::spawn(move || {
            for (status, body) in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                let mut headers = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    headers.push_str(&line);
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen2.lock().unwrap().push(format!("{headers}\n{}", String::from_utf8(buf).unwrap()));
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1"), seen, handle)
    }

    fn ok_body(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    fn request() -> CompletionRequest {
        let ctx = TaskContext::new(TaskKind::Rc, "Doc", TaskPayload::Pairs(vec![(0, 1)])).unwrap();
        CompletionRequest::new("classify this".into(), ctx, DecodingParams::default()).unwrap()
    }

    fn config(endpoint: String) -> HttpConfig {
        HttpConfig {
            endpoint,
            model: "m".into(),
            timeout: Duration::from_secs(5),
            retry: RetryPolicy {
                max_attempts: 3,
                base_delay: Duration::from_millis(1),
                max_delay: Duration::from_millis(2),
            },
            ..Default::default()
        }
    }

    #[test]
    fn sends_chat_request_and_reads_content() {
        let (url, seen, handle) = mock(vec![(200, ok_body("(a, country, b)"))]);
        let backend = HttpBackend::new(config(url)).unwrap();
        assert_eq!(backend.generate(&request()).unwrap(), "(a, country, b)");
        handle.join().unwrap();
        let seen = seen.lock().unwrap();
        assert!(seen[0].starts_with("POST /v1/chat/completions") || seen[0].contains("classify this"));
        let body: serde_json::Value = serde_json::from_str(seen[0].split("\n\n").last().unwrap()).unwrap();
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["content"], "classify this");
        assert_eq!(body["temperature"], 0.1);
        assert_eq!(body["top_p"], 0.9);
    }

    #[test]
    fn retries_server_errors() {
        let replies = vec![(503, "{}".to_string()), (429, "{}".to_string()), (200, ok_body("done"))];
        let (url, seen, handle) = mock(replies);
        let backend = HttpBackend::new(config(url)).unwrap();
        assert_eq!(backend.generate(&request()).unwrap(), "done");
        handle.join().unwrap();
        assert_eq!(seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn client_errors_are_permanent() {
        let (url, seen, handle) = mock(vec![(401, "{\"error\":\"bad key\"}".to_string())]);
        let backend = HttpBackend::new(config(url)).unwrap();
        let err = backend.generate(&request()).unwrap_err();
        assert!(matches!(err, BackendError::Permanent(ref m) if m.contains("401")), "{err}");
        handle.join().unwrap();
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn exhausted_retries_are_transient() {
        let replies = vec![(500, "{}".to_string()); 3];
        let (url, _, handle) = mock(replies);
        let backend = HttpBackend::new(config(url)).unwrap();
        let err = backend.generate(&request()).unwrap_err();
        assert!(err.is_transient());
        handle.join().unwrap();
    }

    #[test]
    fn unreachable_host_is_transient() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let mut cfg = config(format!("http://127.0.0.1:{port}"));
        cfg.retry.max_attempts = 1;
        let err = HttpBackend::new(cfg).unwrap().generate(&request()).unwrap_err();
        assert!(err.is_transient(), "{err}");
    }

    #[test]
    fn bearer_token_from_environment() {
        let var = "RELPRIOR_TEST_KEY_7731";
        // SAFETY: the variable name is unique to this test.
        unsafe { std::env::set_var(var, "sekrit") };
        let (url, seen, handle) = mock(vec![(200, ok_body("x"))]);
        let mut cfg = config(url);
        cfg.api_key_env = Some(var.into());
        HttpBackend::new(cfg).unwrap().generate(&request()).unwrap();
        handle.join().unwrap();
        assert!(seen.lock().unwrap()[0].to_ascii_lowercase().contains("authorization: bearer sekrit"));

        let mut missing = config("http://localhost".into());
        missing.api_key_env = Some("RELPRIOR_TEST_KEY_UNSET_9912".into());
        assert!(HttpBackend::new(missing).is_err());
    }

    #[test]
    fn url_joining() {
        assert_eq!(config("http://h/v1/".into()).url(), "http://h/v1/chat/completions");
        assert_eq!(config("http://h/v1/chat/completions".into()).url(), "http://h/v1/chat/completions");
    }

    #[test]
    fn semaphore_bounds_in_flight() {
        let slots = Arc::new(Slots { free: Mutex::new(2), cv: Condvar::new() });
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let (slots, live, peak) = (Arc::clone(&slots), Arc::clone(&live), Arc::clone(&peak));
                s.spawn(move || {
                    let _g = slots.acquire();
                    let n = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(n, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(*slots.free.lock().unwrap(), 2);
    }
}
