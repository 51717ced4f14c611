use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::imaging::Image;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("cache error: {0}")]
    Cache(String),
}

/// Which pipeline step a request serves. Used for logging and by mocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Classify,
    Analyze,
    Judge,
    Locate,
}

impl Purpose {
    pub fn as_str(&self) -> &'static str {
        match self {
            Purpose::Classify => "classify",
            Purpose::Analyze => "analyze",
            Purpose::Judge => "judge",
            Purpose::Locate => "locate",
        }
    }
}

/// One chat turn: a text prompt plus images attached in order.
#[derive(Clone, Debug, PartialEq)]
pub struct ChatRequest {
    pub purpose: Purpose,
    pub prompt: String,
    pub images: Vec<Arc<Image>>,
}

impl ChatRequest {
    pub fn new(purpose: Purpose, prompt: impl Into<String>, images: Vec<Arc<Image>>) -> Self {
        Self {
            purpose,
            prompt: prompt.into(),
            images,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub text: String,
    pub cache_hit: bool,
}

impl Completion {
    pub fn fresh(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            cache_hit: false,
        }
    }
}

/// A multimodal chat model.
pub trait Backend: Send + Sync {
    /// Human-readable identity recorded in provenance logs.
    fn id(&self) -> String;
    /// Model identifier; part of every cache key.
    fn model(&self) -> &str;
    fn complete(&self, req: &ChatRequest) -> Result<Completion, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn model(&self) -> &str {
        (**self).model()
    }

    fn complete(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        (**self).complete(req)
    }
}

fn hash_image(h: &mut Sha256, img: &Image) {
    h.update((img.width() as u64).to_le_bytes());
    h.update((img.height() as u64).to_le_bytes());
    h.update((img.channels() as u64).to_le_bytes());
    h.update(img.data());
}

/// SHA-256 over dimensions and raw pixels, hex encoded.
pub fn image_digest(img: &Image) -> String {
    let mut h = Sha256::new();
    hash_image(&mut h, img);
    hex::encode(h.finalize())
}

/// Content digest of a fully serialized request: model id, prompt text and
/// every attached image's pixels, each length-prefixed.
pub fn cache_key(model: &str, req: &ChatRequest) -> String {
    let mut h = Sha256::new();
    for field in [model.as_bytes(), req.prompt.as_bytes()] {
        h.update((field.len() as u64).to_le_bytes());
        h.update(field);
    }
    h.update((req.images.len() as u64).to_le_bytes());
    for img in &req.images {
        hash_image(&mut h, img);
    }
    hex::encode(h.finalize())
}

/// Counting semaphore bounding in-flight remote calls.
#[derive(Debug)]
pub struct Limiter {
    available: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Limiter {
    pub fn new(permits: usize) -> Arc<Self> {
        Arc::new(Self {
            available: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        })
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit { limiter: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.limiter.cv.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn req(img: Image) -> ChatRequest {
        ChatRequest::new(Purpose::Classify, "what is this?", vec![Arc::new(img)])
    }

    #[test]
    fn cache_key_properties() {
        let img = Image::from_gray_fn(8, 8, |x, y| (x * y) as u8).unwrap();
        let a = cache_key("m1", &req(img.clone()));
        assert_eq!(a, cache_key("m1", &req(img.clone())));
        assert_ne!(a, cache_key("m2", &req(img.clone())));
        let mut changed = img.clone();
        changed.data_mut()[5] ^= 1;
        assert_ne!(a, cache_key("m1", &req(changed)));
        let mut other_prompt = req(img);
        other_prompt.prompt.push('!');
        assert_ne!(a, cache_key("m1", &other_prompt));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn limiter_bounds_concurrency() {
        let limiter = Limiter::new(2);
        let active = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let _p = limiter.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(std::time::Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
