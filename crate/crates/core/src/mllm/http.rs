//! Chat-completions client for OpenAI-compatible endpoints.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::{cache_key, Backend, BackendError, ChatRequest, Completion, Limiter};
use super::MllmError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the API key; unset means no auth header.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Base delay of the exponential backoff between retries.
    pub backoff_ms: u64,
    pub max_parallel: usize,
    pub cache_dir: Option<PathBuf>,
    /// When set, every request/response pair is written here as JSON.
    pub audit_dir: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120,
            max_retries: 3,
            backoff_ms: 1000,
            max_parallel: 4,
            cache_dir: None,
            audit_dir: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), MllmError> {
        if self.timeout_secs == 0 {
            return Err(MllmError::Config("timeout_secs must be positive".into()));
        }
        if self.max_parallel == 0 {
            return Err(MllmError::Config("max_parallel must be positive".into()));
        }
        if self.model.trim().is_empty() {
            return Err(MllmError::Config("model id is empty".into()));
        }
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return Err(MllmError::Config(format!(
                "endpoint '{}' is not an http(s) URL",
                self.endpoint
            )));
        }
        Ok(())
    }
}

pub struct HttpBackend {
    cfg: BackendConfig,
    agent: ureq::Agent,
    limiter: Arc<Limiter>,
    audit_seq: AtomicU64,
}

/// JSON body of a chat-completions request: one user turn with the prompt
/// followed by each image as a base64 PNG data URL.
pub fn chat_body(model: &str, req: &ChatRequest) -> Result<Value, BackendError> {
    let mut content = vec![json!({"type": "text", "text": req.prompt})];
    for img in &req.images {
        let png = img.encode_png().map_err(|e| BackendError::Protocol(e.to_string()))?;
        let b64 = base64::engine::general_purpose::STANDARD.encode(png);
        content.push(json!({
            "type": "image_url",
            "image_url": {"url": format!("data:image/png;base64,{b64}")}
        }));
    }
    Ok(json!({
        "model": model,
        "temperature": 0,
        "messages": [{"role": "user", "content": content}],
    }))
}

/// Assistant text from a chat-completions response.
pub fn reply_text(body: &Value) -> Result<String, BackendError> {
    let content = body
        .pointer("/choices/0/message/content")
        .ok_or_else(|| BackendError::Protocol("response has no choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        other => Err(BackendError::Protocol(format!("unexpected content {other}"))),
    }
}

impl HttpBackend {
    /// `limiter` bounds in-flight calls; share it with other remote clients.
    pub fn new(cfg: BackendConfig, limiter: Arc<Limiter>) -> Result<Self, MllmError> {
        cfg.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            cfg,
            agent,
            limiter,
            audit_seq: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    fn attempt(&self, body: &Value) -> Result<String, BackendError> {
        let mut request = self
            .agent
            .post(&self.cfg.endpoint)
            .header("Content-Type", "application/json");
        if let Ok(key) = std::env::var(&self.cfg.api_key_env) {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let _permit = self.limiter.acquire();
        let resp = request
            .send_json(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .into_body()
            .with_config()
            .limit(64 << 20)
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            200..=299 => {
                let v: Value = serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))?;
                reply_text(&v)
            }
            401 | 403 => Err(BackendError::Auth(format!("HTTP {status}: {}", truncate(&text)))),
            _ => Err(BackendError::Http {
                status,
                body: truncate(&text),
            }),
        }
    }

    fn audit(&self, req: &ChatRequest, outcome: &Result<String, BackendError>, elapsed: Duration) {
        let Some(dir) = &self.cfg.audit_dir else { return };
        let seq = self.audit_seq.fetch_add(1, Ordering::SeqCst);
        let record = json!({
            "model": self.cfg.model,
            "purpose": req.purpose,
            "cache_key": cache_key(&self.cfg.model, req),
            "prompt": req.prompt,
            "images": req.images.iter().map(|i| super::backend::image_digest(i)).collect::<Vec<_>>(),
            "reply": outcome.as_ref().ok(),
            "error": outcome.as_ref().err().map(|e| e.to_string()),
            "elapsed_ms": elapsed.as_millis() as u64,
        });
        let path = dir.join(format!("{}-{seq:06}.json", std::process::id()));
        let written = std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(&path, serde_json::to_vec_pretty(&record).unwrap_or_default()));
        if let Err(e) = written {
            log::warn!("audit log {}: {e}", path.display());
        }
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(500).collect()
}

fn retryable(e: &BackendError) -> bool {
    match e {
        BackendError::Transport(_) => true,
        BackendError::Http { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}@{}", self.cfg.model, self.cfg.endpoint)
    }

    fn model(&self) -> &str {
        &self.cfg.model
    }

    fn complete(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        let body = chat_body(&self.cfg.model, req)?;
        let start = Instant::now();
        let mut attempt = 0;
        let outcome = loop {
            match self.attempt(&body) {
                Err(e) if retryable(&e) && attempt < self.cfg.max_retries => {
                    let delay = self.cfg.backoff_ms.saturating_mul(1 << attempt.min(16));
                    log::warn!(
                        "{} request failed ({e}); retry {} in {delay} ms",
                        req.purpose.as_str(),
                        attempt + 1
                    );
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                other => break other,
            }
        };
        self.audit(req, &outcome, start.elapsed());
        outcome.map(Completion::fresh)
    }
}
