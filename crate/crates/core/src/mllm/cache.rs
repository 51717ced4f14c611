//! On-disk reply cache keyed by request content.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::backend::{cache_key, Backend, BackendError, ChatRequest, Completion, Purpose};

#[derive(Serialize, Deserialize)]
struct Entry {
    model: String,
    purpose: Purpose,
    text: String,
}

/// Wraps a backend with a directory of `<cache_key>.json` replies.
///
/// Entries are written to a temporary file and renamed into place, so
/// concurrent readers never observe a partial entry.
pub struct CachedBackend<B> {
    inner: B,
    dir: PathBuf,
    inner_calls: AtomicUsize,
    tmp_counter: AtomicU64,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| BackendError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            inner,
            dir,
            inner_calls: AtomicUsize::new(0),
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    /// Requests forwarded to the wrapped backend so far.
    pub fn inner_calls(&self) -> usize {
        self.inner_calls.load(Ordering::SeqCst)
    }

    fn lookup(&self, key: &str) -> Option<String> {
        let bytes = std::fs::read(self.dir.join(format!("{key}.json"))).ok()?;
        match serde_json::from_slice::<Entry>(&bytes) {
            Ok(e) if e.model == self.inner.model() => Some(e.text),
            Ok(_) => None,
            Err(e) => {
                log::warn!("ignoring corrupt cache entry {key}: {e}");
                None
            }
        }
    }

    fn store(&self, key: &str, req: &ChatRequest, text: &str) -> Result<(), BackendError> {
        let entry = Entry {
            model: self.inner.model().to_string(),
            purpose: req.purpose,
            text: text.to_string(),
        };
        let body = serde_json::to_vec_pretty(&entry).map_err(|e| BackendError::Cache(e.to_string()))?;
        let n = self.tmp_counter.fetch_add(1, Ordering::SeqCst);
        let tmp = self.dir.join(format!(".{key}.{}.{n}.tmp", std::process::id()));
        let dst = self.dir.join(format!("{key}.json"));
        std::fs::write(&tmp, body)
            .and_then(|_| std::fs::rename(&tmp, &dst))
            .map_err(|e| BackendError::Cache(format!("{}: {e}", dst.display())))
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn id(&self) -> String {
        format!("cached({})", self.inner.id())
    }

    fn model(&self) -> &str {
        self.inner.model()
    }

    fn complete(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        let key = cache_key(self.inner.model(), req);
        if let Some(text) = self.lookup(&key) {
            return Ok(Completion { text, cache_hit: true });
        }
        self.inner_calls.fetch_add(1, Ordering::SeqCst);
        let reply = self.inner.complete(req)?;
        if let Err(e) = self.store(&key, req, &reply.text) {
            log::warn!("could not write cache entry: {e}");
        }
        Ok(Completion {
            text: reply.text,
            cache_hit: false,
        })
    }
}
