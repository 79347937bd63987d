//! Chat-completion client with live, record and replay modes.
//!
//! Requests are keyed by the SHA-256 of their canonical JSON form, so a
//! fixture recorded once replays without network access.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corpus_io::read_jsonl;
use crate::error::{Error, Result};

pub const GENERATION_TEMPERATURE: f64 = 0.7;
pub const EDITING_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MODEL: &str = "gpt-4o";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    #[serde(default)]
    pub system: Option<String>,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(model: &str, user: impl Into<String>, temperature: f64, max_tokens: u32) -> Self {
        CompletionRequest { model: model.to_owned(), system: None, user: user.into(), temperature, max_tokens }
    }

    /// JSON with keys in sorted order and no insignificant whitespace.
    pub fn canonical_json(&self) -> String {
        // serde_json's Value map is ordered by key
        let v = serde_json::to_value(self).expect("request serializes");
        v.to_string()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Short human-readable description for error messages.
    pub fn summary(&self) -> String {
        let head: String = self.user.chars().take(60).collect();
        let more = if self.user.chars().count() > 60 { "..." } else { "" };
        format!("model={} temperature={} user={head:?}{more}", self.model, self.temperature)
    }

    fn validate(&self) -> Result<()> {
        if self.user.trim().is_empty() {
            return Err(Error::Invalid("completion request with empty user message".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Invalid(format!("negative temperature {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderExchange {
    pub request_hash: String,
    pub response_text: String,
    pub provider_name: String,
    pub recorded_at: DateTime<Utc>,
}

pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<String>;
}

pub fn complete(provider: &dyn ChatProvider, request: &CompletionRequest) -> Result<String> {
    request.validate()?;
    provider.complete(request)
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

/// Any endpoint speaking the chat-completions shape.
pub struct LiveProvider {
    base_url: String,
    api_key: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

enum Attempt {
    Transient(String),
    Fatal(String),
}

impl LiveProvider {
    pub fn new(base_url: &str, api_key: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        LiveProvider {
            base_url: base_url.trim_end_matches('/').to_owned(),
            api_key: api_key.to_owned(),
            agent,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn body(request: &CompletionRequest) -> Value {
        let mut messages = Vec::new();
        if let Some(system) = &request.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": request.user}));
        json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    fn attempt(&self, body: &Value) -> std::result::Result<String, Attempt> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| Attempt::Transient(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Transient(format!("HTTP {status}: {text}")));
        }
        if status >= 400 {
            return Err(Attempt::Fatal(format!("HTTP {status}: {text}")));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| Attempt::Fatal(format!("bad JSON body: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| Attempt::Fatal(format!("response without choices[0].message.content: {text}")))
    }
}

impl ChatProvider for LiveProvider {
    fn name(&self) -> &str {
        "live"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let body = Self::body(request);
        let mut last = String::new();
        for attempt in 0..self.retry.max_attempts {
            if attempt > 0 {
                thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(msg)) => return Err(Error::Provider(msg)),
                Err(Attempt::Transient(msg)) => last = msg,
            }
        }
        Err(Error::Provider(format!("gave up after {} attempts: {last}", self.retry.max_attempts)))
    }
}

/// Wraps another provider and appends every exchange to a fixture file.
pub struct RecordingProvider {
    inner: Box<dyn ChatProvider>,
    path: PathBuf,
    writer: Mutex<fs::File>,
}

impl RecordingProvider {
    pub fn new(inner: Box<dyn ChatProvider>, path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(RecordingProvider { inner, path: path.to_path_buf(), writer: Mutex::new(file) })
    }
}

impl ChatProvider for RecordingProvider {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let text = self.inner.complete(request)?;
        let exchange = ProviderExchange {
            request_hash: request.hash(),
            response_text: text.clone(),
            provider_name: self.inner.name().to_owned(),
            recorded_at: Utc::now(),
        };
        let line = serde_json::to_string(&exchange).expect("exchange serializes");
        let mut w = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io(&self.path, e))?;
        Ok(text)
    }
}

/// Serves responses from a fixture; never touches the network.
pub struct ReplayProvider {
    entries: HashMap<String, ProviderExchange>,
}

impl ReplayProvider {
    pub fn load(path: &Path) -> Result<Self> {
        let list: Vec<ProviderExchange> = read_jsonl(path)?;
        Ok(Self::from_exchanges(list))
    }

    /// Later entries for the same hash win, so re-recording overrides.
    pub fn from_exchanges(list: Vec<ProviderExchange>) -> Self {
        ReplayProvider { entries: list.into_iter().map(|x| (x.request_hash.clone(), x)).collect() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatProvider for ReplayProvider {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let hash = request.hash();
        match self.entries.get(&hash) {
            Some(x) => Ok(x.response_text.clone()),
            None => Err(Error::FixtureMiss { hash, summary: request.summary() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderMode {
    Live,
    Record,
    Replay,
}

impl FromStr for ProviderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "live" => Ok(ProviderMode::Live),
            "record" => Ok(ProviderMode::Record),
            "replay" => Ok(ProviderMode::Replay),
            other => Err(Error::Invalid(format!("unknown provider mode {other:?} (live, record, replay)"))),
        }
    }
}

impl fmt::Display for ProviderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderMode::Live => "live",
            ProviderMode::Record => "record",
            ProviderMode::Replay => "replay",
        })
    }
}

/// Provider settings; unset fields fall back to the `LAMP_*` environment.
#[derive(Debug, Clone, Default)]
pub struct ProviderSettings {
    pub mode: Option<ProviderMode>,
    pub fixture: Option<PathBuf>,
    pub base_url: Option<String>,
    pub api_key: Option<String>,
}

impl ProviderSettings {
    pub fn with_env(mut self) -> Result<Self> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        if self.mode.is_none() {
            self.mode = var("LAMP_PROVIDER_MODE").map(|m| m.parse()).transpose()?;
        }
        self.fixture = self.fixture.or_else(|| var("LAMP_FIXTURE_PATH").map(PathBuf::from));
        self.base_url = self.base_url.or_else(|| var("LAMP_BASE_URL"));
        self.api_key = self.api_key.or_else(|| var("LAMP_API_KEY"));
        Ok(self)
    }

    pub fn build(&self) -> Result<Box<dyn ChatProvider>> {
        let mode = self.mode.unwrap_or(ProviderMode::Live);
        let fixture = || {
            self.fixture
                .as_deref()
                .ok_or_else(|| Error::Invalid(format!("{mode} mode needs a fixture path (--fixture or LAMP_FIXTURE_PATH)")))
        };
        let live = || -> Result<LiveProvider> {
            let base = self.base_url.as_deref().unwrap_or("https://api.openai.com/v1");
            let key = self
                .api_key
                .as_deref()
                .ok_or_else(|| Error::Invalid("live provider needs LAMP_API_KEY".into()))?;
            Ok(LiveProvider::new(base, key))
        };
        Ok(match mode {
            ProviderMode::Replay => Box::new(ReplayProvider::load(fixture()?)?),
            ProviderMode::Record => Box::new(RecordingProvider::new(Box::new(live()?), fixture()?)?),
            ProviderMode::Live => Box::new(live()?),
        })
    }
}

pub fn model_from_env() -> String {
    std::env::var("LAMP_MODEL").ok().filter(|m| !m.is_empty()).unwrap_or_else(|| DEFAULT_MODEL.to_owned())
}
