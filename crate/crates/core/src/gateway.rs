//! Chat-completion client with response caching, retries and an offline
//! replay mode.
//!
//! Requests go to an OpenAI-compatible `/chat/completions` endpoint as a
//! single user message. Responses can be cached in an append-only JSON
//! lines file keyed by a hash of (model, prompt, settings); replay mode
//! serves exclusively from that file and never touches the transport.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication failed (HTTP {0})")]
    Auth(u16),
    #[error("endpoint returned HTTP {status} after retries: {body}")]
    Endpoint { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected response body: {0}")]
    MalformedResponse(String),
    #[error("no cached response for key {0}")]
    CacheMiss(String),
    #[error("cache file {path}: {source}")]
    Cache {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Sampling parameters sent with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
}

impl GenerationSettings {
    /// Greedy decoding defaults: temperature 0, 500 tokens, top_p 1,
    /// frequency penalty 0.1, presence penalty 0.
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            temperature: 0.0,
            max_tokens: 500,
            top_p: 1.0,
            frequency_penalty: 0.1,
            presence_penalty: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("model is empty".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(
                "temperature must be >= 0".into(),
            ));
        }
        if self.max_tokens < 1 {
            return Err(GatewayError::InvalidRequest(
                "max_tokens must be >= 1".into(),
            ));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::InvalidRequest(
                "top_p must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub settings: GenerationSettings,
    pub prompt: String,
}

impl CompletionRequest {
    pub fn new(
        settings: GenerationSettings,
        prompt: impl Into<String>,
    ) -> Result<Self, GatewayError> {
        let prompt = prompt.into();
        if prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        settings.validate()?;
        Ok(Self { settings, prompt })
    }

    /// Stable hex digest of model, prompt and settings.
    pub fn cache_key(&self) -> String {
        let canonical = serde_json::json!({
            "model": self.settings.model,
            "prompt": self.prompt,
            "settings": {
                "temperature": self.settings.temperature,
                "max_tokens": self.settings.max_tokens,
                "top_p": self.settings.top_p,
                "frequency_penalty": self.settings.frequency_penalty,
                "presence_penalty": self.settings.presence_penalty,
            },
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }

    /// JSON body for the chat-completions endpoint.
    pub fn body(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.settings.model,
            "messages": [{"role": "user", "content": self.prompt}],
            "temperature": self.settings.temperature,
            "max_tokens": self.settings.max_tokens,
            "top_p": self.settings.top_p,
            "frequency_penalty": self.settings.frequency_penalty,
            "presence_penalty": self.settings.presence_penalty,
        })
    }
}

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("{0}")]
    Connection(String),
}

/// Sends one JSON POST.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let mut request = self
            .client
            .post(url)
            .timeout(timeout)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(key) = bearer {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connection(e.to_string())
            }
        })?;
        let status = response.status().as_u16();
        let body = response
            .text()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// A transport that fails every call and counts the attempts.
#[derive(Debug, Default)]
pub struct RefusingTransport {
    attempts: AtomicUsize,
}

impl RefusingTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }
}

impl Transport for RefusingTransport {
    fn post_json(
        &self,
        _: &str,
        _: Option<&str>,
        _: &str,
        _: Duration,
    ) -> Result<HttpResponse, TransportError> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        Err(TransportError::Connection("network access refused".into()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    model: String,
    response_text: String,
    timestamp: u64,
}

/// Append-only response cache. Unreadable lines are skipped.
pub struct ResponseCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, String>>,
    writer: Mutex<Option<File>>,
    skipped: usize,
}

impl ResponseCache {
    /// Opens (or, when `writable`, creates) the cache file at `path`.
    pub fn open(path: impl AsRef<Path>, writable: bool) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| GatewayError::Cache {
            path: path.clone(),
            source,
        };
        let mut entries = HashMap::new();
        let mut skipped = 0;
        match File::open(&path) {
            Ok(file) => {
                for line in BufReader::new(file).lines() {
                    let line = line.map_err(io_err)?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    match serde_json::from_str::<CacheLine>(&line) {
                        Ok(entry) => {
                            entries.insert(entry.key, entry.response_text);
                        }
                        Err(err) => {
                            log::warn!(
                                "skipping unreadable cache entry in {}: {err}",
                                path.display()
                            );
                            skipped += 1;
                        }
                    }
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && writable => {}
            Err(e) => return Err(io_err(e)),
        }
        let writer = if writable {
            Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(io_err)?,
            )
        } else {
            None
        };
        Ok(Self {
            path,
            entries: RwLock::new(entries),
            writer: Mutex::new(writer),
            skipped,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lines that could not be read when the cache was opened.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.read().unwrap().get(key).cloned()
    }

    pub fn put(&self, key: &str, model: &str, response_text: &str) -> Result<(), GatewayError> {
        let mut writer = self.writer.lock().unwrap();
        if let Some(file) = writer.as_mut() {
            let line = CacheLine {
                key: key.to_string(),
                model: model.to_string(),
                response_text: response_text.to_string(),
                timestamp: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            };
            let mut text = serde_json::to_string(&line).expect("cache line serializes");
            text.push('\n');
            file.write_all(text.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| GatewayError::Cache {
                    path: self.path.clone(),
                    source,
                })?;
        }
        self.entries
            .write()
            .unwrap()
            .insert(key.to_string(), response_text.to_string());
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.to_string(),
            api_key: None,
            max_retries: 5,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
            timeout: Duration::from_secs(60),
            max_in_flight: 4,
        }
    }
}

struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut available = self.available.lock().unwrap();
        while *available == 0 {
            available = self.freed.wait(available).unwrap();
        }
        *available -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

enum CachePolicy {
    Off,
    ReadWrite(ResponseCache),
    ReplayOnly(ResponseCache),
}

/// Shared handle for issuing completions.
pub struct Gateway {
    config: GatewayConfig,
    transport: Arc<dyn Transport>,
    cache: CachePolicy,
    permits: Permits,
    requests: AtomicUsize,
}

impl Gateway {
    /// Live gateway without a cache.
    pub fn live(config: GatewayConfig, transport: Arc<dyn Transport>) -> Self {
        Self::build(config, transport, CachePolicy::Off)
    }

    /// Live gateway that serves hits from, and appends misses to, `cache_path`.
    pub fn recording(
        config: GatewayConfig,
        transport: Arc<dyn Transport>,
        cache_path: impl AsRef<Path>,
    ) -> Result<Self, GatewayError> {
        let cache = ResponseCache::open(cache_path, true)?;
        Ok(Self::build(
            config,
            transport,
            CachePolicy::ReadWrite(cache),
        ))
    }

    /// Gateway that answers only from `cache_path`; misses are errors.
    pub fn replay_mode(cache_path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let cache = ResponseCache::open(cache_path, false)?;
        Ok(Self::build(
            GatewayConfig::default(),
            Arc::new(RefusingTransport::new()),
            CachePolicy::ReplayOnly(cache),
        ))
    }

    fn build(config: GatewayConfig, transport: Arc<dyn Transport>, cache: CachePolicy) -> Self {
        let permits = Permits::new(config.max_in_flight);
        Self {
            config,
            transport,
            cache,
            permits,
            requests: AtomicUsize::new(0),
        }
    }

    /// HTTP requests issued so far, retries included.
    pub fn requests_sent(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        request.settings.validate()?;
        if request.prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        let key = request.cache_key();
        match &self.cache {
            CachePolicy::ReplayOnly(cache) => cache.get(&key).ok_or(GatewayError::CacheMiss(key)),
            CachePolicy::ReadWrite(cache) => {
                if let Some(hit) = cache.get(&key) {
                    return Ok(hit);
                }
                let text = self.send(request)?;
                cache.put(&key, &request.settings.model, &text)?;
                Ok(text)
            }
            CachePolicy::Off => self.send(request),
        }
    }

    fn send(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let _permit = self.permits.acquire();
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let body = request.body().to_string();
        let mut backoff = self.config.initial_backoff;
        let mut attempt = 0;
        loop {
            self.requests.fetch_add(1, Ordering::SeqCst);
            let outcome = self.transport.post_json(
                &url,
                self.config.api_key.as_deref(),
                &body,
                self.config.timeout,
            );
            let error = match outcome {
                Ok(resp) if (200..300).contains(&resp.status) => return first_choice(&resp.body),
                Ok(resp) if resp.status == 401 || resp.status == 403 => {
                    return Err(GatewayError::Auth(resp.status))
                }
                Ok(resp) if resp.status == 429 || resp.status >= 500 => GatewayError::Endpoint {
                    status: resp.status,
                    body: resp.body,
                },
                Ok(resp) => {
                    return Err(GatewayError::Endpoint {
                        status: resp.status,
                        body: resp.body,
                    })
                }
                Err(TransportError::Timeout) => GatewayError::Timeout,
                Err(TransportError::Connection(msg)) => GatewayError::Transport(msg),
            };
            if attempt >= self.config.max_retries {
                return Err(error);
            }
            log::debug!("transient failure ({error}); retrying in {backoff:?}");
            std::thread::sleep(backoff);
            backoff = (backoff * 2).min(self.config.max_backoff);
            attempt += 1;
        }
    }
}

fn first_choice(body: &str) -> Result<String, GatewayError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| GatewayError::MalformedResponse("missing choices[0].message.content".into()))
}

/// Scripted HTTP endpoint for exercising the gateway in tests.
#[cfg(any(test, feature = "testing"))]
pub mod testing {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
    use std::sync::{Arc, Mutex};
    use std::thread::JoinHandle;

    type Handler = dyn Fn(&serde_json::Value) -> (u16, String) + Send + Sync;

    /// Minimal single-threaded HTTP/1.1 server on 127.0.0.1.
    pub struct StubServer {
        addr: std::net::SocketAddr,
        hits: Arc<AtomicUsize>,
        bodies: Arc<Mutex<Vec<serde_json::Value>>>,
        stop: Arc<AtomicBool>,
        thread: Option<JoinHandle<()>>,
    }

    /// Chat-completions response body carrying `content`.
    pub fn chat_response(content: &str) -> String {
        serde_json::json!({
            "id": "stub",
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        })
        .to_string()
    }

    /// Prompt text of a chat-completions request body.
    pub fn prompt_of(body: &serde_json::Value) -> &str {
        body.pointer("/messages/0/content")
            .and_then(|v| v.as_str())
            .unwrap_or("")
    }

    impl StubServer {
        pub fn start<F>(handler: F) -> Self
        where
            F: Fn(&serde_json::Value) -> (u16, String) + Send + Sync + 'static,
        {
            let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
            let addr = listener.local_addr().unwrap();
            let hits = Arc::new(AtomicUsize::new(0));
            let bodies = Arc::new(Mutex::new(Vec::new()));
            let stop = Arc::new(AtomicBool::new(false));
            let handler: Arc<Handler> = Arc::new(handler);
            let thread = {
                let (hits, bodies, stop) = (hits.clone(), bodies.clone(), stop.clone());
                std::thread::spawn(move || {
                    for stream in listener.incoming() {
                        if stop.load(Ordering::SeqCst) {
                            break;
                        }
                        if let Ok(stream) = stream {
                            serve(stream, &*handler, &hits, &bodies);
                        }
                    }
                })
            };
            Self {
                addr,
                hits,
                bodies,
                stop,
                thread: Some(thread),
            }
        }

        /// Answers with `script` in order, repeating the last entry.
        pub fn scripted(script: Vec<(u16, String)>) -> Self {
            let next = AtomicUsize::new(0);
            Self::start(move |_| {
                let i = next.fetch_add(1, Ordering::SeqCst).min(script.len() - 1);
                script[i].clone()
            })
        }

        pub fn base_url(&self) -> String {
            format!("http://{}", self.addr)
        }

        pub fn hits(&self) -> usize {
            self.hits.load(Ordering::SeqCst)
        }

        pub fn bodies(&self) -> Vec<serde_json::Value> {
            self.bodies.lock().unwrap().clone()
        }
    }

    impl Drop for StubServer {
        fn drop(&mut self) {
            self.stop.store(true, Ordering::SeqCst);
            let _ = TcpStream::connect(self.addr);
            if let Some(t) = self.thread.take() {
                let _ = t.join();
            }
        }
    }

    fn serve(
        stream: TcpStream,
        handler: &Handler,
        hits: &AtomicUsize,
        bodies: &Mutex<Vec<serde_json::Value>>,
    ) {
        let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
        let mut content_length = 0usize;
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line).unwrap_or(0) == 0 {
                return;
            }
            let trimmed = line.trim_end();
            if trimmed.is_empty() {
                break;
            }
            if let Some((name, value)) = trimmed.split_once(':') {
                if name.eq_ignore_ascii_case("content-length") {
                    content_length = value.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0u8; content_length];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        hits.fetch_add(1, Ordering::SeqCst);
        let json: serde_json::Value =
            serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
        let (status, payload) = handler(&json);
        bodies.lock().unwrap().push(json);
        let response = format!(
            "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
            payload.len()
        );
        let mut stream = stream;
        let _ = stream.write_all(response.as_bytes());
        let _ = stream.flush();
    }
}
