//! Provider-agnostic chat-completion client.
//!
//! One wire dialect is spoken: OpenAI-style `POST <base_url>/chat/completions`
//! with images sent as base64 data-URI parts. A [`Client`] runs in one of
//! three modes:
//!
//! * `live` issues HTTP calls, rate-limited and retried with exponential
//!   backoff on 429/5xx/timeouts;
//! * `replay` answers from a recorded transcript keyed by request tag;
//! * `script` answers from a programmed [`Script`].
//!
//! Replay and script modes never touch the transport.

mod ratelimit;
mod script;
mod transcript;
mod transport;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use ratelimit::{Backoff, Clock, RateLimiter, SimulatedClock, SystemClock};
pub use script::{Script, ScriptRule, ScriptRules};
pub use transcript::{ReplayStore, TranscriptLine, TranscriptRecorder, TranscriptResponse};
pub use transport::{ForbiddenTransport, HttpReply, HttpTransport, Transport, TransportError};

/// Upper bound on one encoded image payload.
pub const MAX_IMAGE_BYTES: usize = 8 * 1024 * 1024;

pub const API_KEY_ENV_PREFIX: &str = "QUAKE3M_API_KEY_";

#[derive(Debug, Error)]
pub enum MllmError {
    #[error("no API credential for backend {backend}: set {env_var}")]
    MissingCredential { backend: String, env_var: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("no recorded response for request tag {tag}")]
    ReplayMiss { tag: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("image {uri} is {bytes} bytes encoded (limit {MAX_IMAGE_BYTES})")]
    ImageTooLarge { uri: String, bytes: usize },
    #[error("cannot read image {uri}: {source}")]
    ImageRead {
        uri: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed backend payload: {0}")]
    Decode(String),
    #[error("script: {0}")]
    Script(String),
    #[error("transcript {path}: {source}")]
    Transcript {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("backend {backend} is in {mode} mode: {reason}")]
    Mode {
        backend: String,
        mode: BackendMode,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Live,
    Replay,
    Script,
}

impl std::fmt::Display for BackendMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendMode::Live => "live",
            BackendMode::Replay => "replay",
            BackendMode::Script => "script",
        })
    }
}

/// One chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub name: String,
    #[serde(default)]
    pub base_url: String,
    pub model_id: String,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    pub mode: BackendMode,
}

fn default_rpm() -> u32 {
    60
}

fn default_retries() -> u32 {
    5
}

impl BackendProfile {
    pub fn scripted(name: &str, model_id: &str) -> Self {
        BackendProfile {
            name: name.into(),
            base_url: String::new(),
            model_id: model_id.into(),
            requests_per_minute: default_rpm(),
            max_retries: default_retries(),
            mode: BackendMode::Script,
        }
    }

    /// `QUAKE3M_API_KEY_<NAME>` with the name upper-cased and non
    /// alphanumerics replaced by `_`.
    pub fn credential_env_var(&self) -> String {
        let suffix: String = self
            .name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() {
                    c.to_ascii_uppercase()
                } else {
                    '_'
                }
            })
            .collect();
        format!("{API_KEY_ENV_PREFIX}{suffix}")
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.name.trim().is_empty() {
            problems.push("backend.name is empty".to_string());
        }
        if self.model_id.trim().is_empty() {
            problems.push("backend.model_id is empty".to_string());
        }
        if self.requests_per_minute == 0 {
            problems.push("backend.requests_per_minute must be positive".to_string());
        }
        if self.mode == BackendMode::Live
            && !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://"))
        {
            problems.push(format!("backend.base_url {:?} is not an http(s) URL", self.base_url));
        }
        problems
    }
}

/// An image reference: local path, `http(s)` URL, or `data:` URI. Files are
/// read and encoded only when a live request is sent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub uri: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum UserPart {
    Text { text: String },
    Image { image: ImageRef },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: Option<String>,
    pub user_parts: Vec<UserPart>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    /// Single text part, temperature 0.
    pub fn text(prompt: impl Into<String>) -> Self {
        ChatRequest {
            system_text: None,
            user_parts: vec![UserPart::Text { text: prompt.into() }],
            temperature: 0.0,
            max_output_tokens: 1024,
        }
    }

    pub fn with_image(mut self, uri: impl Into<String>) -> Self {
        self.user_parts.push(UserPart::Image {
            image: ImageRef { uri: uri.into() },
        });
        self
    }

    /// All text parts joined with newlines.
    pub fn text_content(&self) -> String {
        self.user_parts
            .iter()
            .filter_map(|p| match p {
                UserPart::Text { text } => Some(text.as_str()),
                UserPart::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn image_count(&self) -> usize {
        self.user_parts
            .iter()
            .filter(|p| matches!(p, UserPart::Image { .. }))
            .count()
    }

    /// Appends a text instruction to the last text part.
    pub fn append_instruction(&mut self, instruction: &str) {
        for part in self.user_parts.iter_mut() {
            if let UserPart::Text { text } = part {
                text.push('\n');
                text.push_str(instruction);
                return;
            }
        }
        self.user_parts.push(UserPart::Text {
            text: instruction.to_string(),
        });
    }

    pub fn validate(&self) -> Result<(), MllmError> {
        if self.user_parts.is_empty() {
            return Err(MllmError::InvalidRequest("no user parts".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(MllmError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        if self.max_output_tokens == 0 {
            return Err(MllmError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Stable content hash of `(model_id, system_text, user_parts,
    /// temperature)`. Keys are hashed in sorted order.
    pub fn tag_for(&self, model_id: &str) -> String {
        let value = json!({
            "model_id": model_id,
            "system_text": self.system_text,
            "user_parts": self.user_parts,
            "temperature": self.temperature,
        });
        sha256_hex(&canonical_json(&value))
    }

    /// Hash of the whole request including decoding limits.
    pub fn digest_for(&self, model_id: &str) -> String {
        let value = json!({
            "model_id": model_id,
            "system_text": self.system_text,
            "user_parts": self.user_parts,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
        });
        sha256_hex(&canonical_json(&value))
    }
}

/// serde_json maps are ordered by key, so this is stable across field order.
fn canonical_json(value: &Value) -> String {
    serde_json::to_string(value).expect("json value serializes")
}

pub fn sha256_hex(data: &str) -> String {
    hex::encode(Sha256::digest(data.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Complete,
    Truncated,
    Refused,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
}

impl ChatResponse {
    pub fn complete(text: impl Into<String>) -> Self {
        ChatResponse {
            text: text.into(),
            finish_reason: FinishReason::Complete,
            latency_ms: 0,
        }
    }
}

/// Chat-completion client. Safe to share across threads.
pub struct Client {
    profile: BackendProfile,
    transport: Arc<dyn Transport>,
    clock: Arc<dyn Clock>,
    limiter: RateLimiter,
    backoff: Backoff,
    replay: Option<ReplayStore>,
    script: Option<Arc<dyn Script>>,
    recorder: Option<Arc<TranscriptRecorder>>,
    credential: Option<String>,
    calls: AtomicUsize,
}

impl Client {
    pub fn new(profile: BackendProfile) -> Self {
        let limiter = RateLimiter::per_minute(profile.requests_per_minute);
        Client {
            profile,
            transport: Arc::new(HttpTransport::default()),
            clock: Arc::new(SystemClock::default()),
            limiter,
            backoff: Backoff::new(None),
            replay: None,
            script: None,
            recorder: None,
            credential: None,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_transport(mut self, transport: Arc<dyn Transport>) -> Self {
        self.transport = transport;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_jitter_seed(mut self, seed: u64) -> Self {
        self.backoff = Backoff::new(Some(seed));
        self
    }

    /// In replay mode: the transcript to answer from. In live mode: responses
    /// already recorded are served from here instead of the network.
    pub fn with_replay(mut self, store: ReplayStore) -> Self {
        self.replay = Some(store);
        self
    }

    pub fn with_script(mut self, script: Arc<dyn Script>) -> Self {
        self.script = Some(script);
        self
    }

    pub fn with_recorder(mut self, recorder: Arc<TranscriptRecorder>) -> Self {
        self.recorder = Some(recorder);
        self
    }

    /// Overrides the environment-variable credential.
    pub fn with_credential(mut self, key: impl Into<String>) -> Self {
        self.credential = Some(key.into());
        self
    }

    pub fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    /// Number of `complete` calls made so far.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, MllmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        request.validate()?;
        let tag = request.tag_for(&self.profile.model_id);
        let response = match self.profile.mode {
            BackendMode::Replay => {
                let store = self.replay.as_ref().ok_or_else(|| MllmError::Mode {
                    backend: self.profile.name.clone(),
                    mode: BackendMode::Replay,
                    reason: "no transcript loaded".into(),
                })?;
                return store.get(&tag).cloned().ok_or(MllmError::ReplayMiss { tag });
            }
            BackendMode::Script => {
                let script = self.script.as_ref().ok_or_else(|| MllmError::Mode {
                    backend: self.profile.name.clone(),
                    mode: BackendMode::Script,
                    reason: "no script programmed".into(),
                })?;
                script.respond(request)?
            }
            BackendMode::Live => {
                if let Some(hit) = self.replay.as_ref().and_then(|s| s.get(&tag)) {
                    return Ok(hit.clone());
                }
                self.complete_live(request)?
            }
        };
        if let Some(recorder) = &self.recorder {
            recorder.record(&tag, &request.digest_for(&self.profile.model_id), &response)?;
        }
        Ok(response)
    }

    fn credential(&self) -> Result<String, MllmError> {
        if let Some(key) = &self.credential {
            return Ok(key.clone());
        }
        let var = self.profile.credential_env_var();
        match std::env::var(&var) {
            Ok(v) if !v.trim().is_empty() => Ok(v),
            _ => Err(MllmError::MissingCredential {
                backend: self.profile.name.clone(),
                env_var: var,
            }),
        }
    }

    fn complete_live(&self, request: &ChatRequest) -> Result<ChatResponse, MllmError> {
        let key = self.credential()?;
        let body = wire_body(&self.profile.model_id, request)?.to_string();
        let url = format!("{}/chat/completions", self.profile.base_url.trim_end_matches('/'));
        let mut retry = 0u32;
        loop {
            self.limiter.acquire(self.clock.as_ref());
            let started = Instant::now();
            let failure = match self.transport.post_json(&url, &key, &body) {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    let mut response = parse_wire_response(&reply.body)?;
                    response.latency_ms = started.elapsed().as_millis() as u64;
                    return Ok(response);
                }
                Ok(reply) if reply.status == 429 || reply.status >= 500 => format!("HTTP {}", reply.status),
                Ok(reply) => {
                    return Err(MllmError::Http {
                        status: reply.status,
                        body: reply.body,
                    })
                }
                Err(e) => e.to_string(),
            };
            if retry >= self.profile.max_retries {
                return Err(MllmError::RetriesExhausted {
                    attempts: retry + 1,
                    last: failure,
                });
            }
            log::warn!(
                "{}: transient failure ({failure}), retry {}",
                self.profile.name,
                retry + 1
            );
            self.clock.sleep(self.backoff.delay(retry));
            retry += 1;
        }
    }
}

/// Checks the mode and opens a transcript sink for recording.
pub fn record_transcript(profile: &BackendProfile, sink: &Path) -> Result<Arc<TranscriptRecorder>, MllmError> {
    if profile.mode == BackendMode::Replay {
        return Err(MllmError::Mode {
            backend: profile.name.clone(),
            mode: profile.mode,
            reason: "cannot record while replaying".into(),
        });
    }
    Ok(Arc::new(TranscriptRecorder::open(sink)?))
}

fn image_url(image: &ImageRef) -> Result<String, MllmError> {
    let uri = image.uri.as_str();
    if uri.starts_with("http://") || uri.starts_with("https://") {
        return Ok(uri.to_string());
    }
    let encoded = if uri.starts_with("data:") {
        uri.to_string()
    } else {
        let bytes = std::fs::read(uri).map_err(|source| MllmError::ImageRead {
            uri: uri.to_string(),
            source,
        })?;
        let mime = match uri.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase()).as_deref() {
            Some("png") => "image/png",
            Some("gif") => "image/gif",
            Some("webp") => "image/webp",
            Some("bmp") => "image/bmp",
            _ => "image/jpeg",
        };
        format!(
            "data:{mime};base64,{}",
            base64::engine::general_purpose::STANDARD.encode(bytes)
        )
    };
    if encoded.len() > MAX_IMAGE_BYTES {
        return Err(MllmError::ImageTooLarge {
            uri: uri.to_string(),
            bytes: encoded.len(),
        });
    }
    Ok(encoded)
}

/// The chat-completions request body.
pub fn wire_body(model_id: &str, request: &ChatRequest) -> Result<Value, MllmError> {
    let mut messages = Vec::new();
    if let Some(system) = &request.system_text {
        messages.push(json!({"role": "system", "content": system}));
    }
    let content = request
        .user_parts
        .iter()
        .map(|part| match part {
            UserPart::Text { text } => Ok(json!({"type": "text", "text": text})),
            UserPart::Image { image } => Ok(json!({"type": "image_url", "image_url": {"url": image_url(image)?}})),
        })
        .collect::<Result<Vec<_>, MllmError>>()?;
    messages.push(json!({"role": "user", "content": content}));
    Ok(json!({
        "model": model_id,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    }))
}

/// Extracts text and finish reason from a chat-completions response body.
pub fn parse_wire_response(body: &str) -> Result<ChatResponse, MllmError> {
    let v: Value = serde_json::from_str(body).map_err(|e| MllmError::Decode(e.to_string()))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| MllmError::Decode("no choices".into()))?;
    let content = choice.get("message").and_then(|m| m.get("content"));
    let text = match content {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(parts)) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        _ => String::new(),
    };
    let finish = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") | Some("max_tokens") => FinishReason::Truncated,
        Some("content_filter") | Some("safety") => FinishReason::Refused,
        _ => FinishReason::Complete,
    };
    // empty text is only meaningful as a refusal
    let finish_reason = if text.is_empty() { FinishReason::Refused } else { finish };
    Ok(ChatResponse {
        text,
        finish_reason,
        latency_ms: 0,
    })
}
