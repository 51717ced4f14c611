//! Scripted offline backend.
//!
//! A mock directory may contain:
//!
//! * `<cache_key>.txt`: exact reply for the request with that key;
//! * `scenario.json`: `{"model": "...", "rules": [...]}` where each rule has
//!   optional matchers `purpose`, `image` (file name in the mock directory,
//!   matched by pixel digest), `image_digest`, `prompt_contains`, and either
//!   `reply` or `replies` (consumed in order, the last one repeating).
//!
//! The first matching source wins; unmatched requests fail with
//! [`BackendError::Unavailable`].

use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::Deserialize;

use super::backend::{cache_key, image_digest, Backend, BackendError, ChatRequest, Completion, Purpose};
use crate::imaging::load_image;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default)]
    pub purpose: Option<Purpose>,
    /// Image file relative to the mock directory; resolved to a digest at load.
    #[serde(default)]
    pub image: Option<String>,
    #[serde(default)]
    pub image_digest: Option<String>,
    #[serde(default)]
    pub prompt_contains: Option<String>,
    #[serde(default)]
    pub reply: Option<String>,
    #[serde(default)]
    pub replies: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Scenario {
    #[serde(default = "default_model")]
    model: String,
    #[serde(default)]
    rules: Vec<MockRule>,
}

fn default_model() -> String {
    "mock".into()
}

type ReplyFn = dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync;

enum Source {
    Rules {
        rules: Vec<MockRule>,
        cursors: Mutex<Vec<usize>>,
        dir: Option<std::path::PathBuf>,
    },
    Func(Box<ReplyFn>),
    Unreachable,
}

pub struct MockBackend {
    model: String,
    source: Source,
    log: Mutex<Vec<ChatRequest>>,
}

impl MockBackend {
    pub fn from_rules(model: impl Into<String>, rules: Vec<MockRule>) -> Self {
        let n = rules.len();
        Self {
            model: model.into(),
            source: Source::Rules {
                rules,
                cursors: Mutex::new(vec![0; n]),
                dir: None,
            },
            log: Mutex::new(Vec::new()),
        }
    }

    /// Loads `scenario.json` (optional) and keyed replies from `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, BackendError> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(BackendError::Unavailable(format!(
                "mock directory {} not found",
                dir.display()
            )));
        }
        let scenario_path = dir.join("scenario.json");
        let scenario = if scenario_path.exists() {
            let text = std::fs::read_to_string(&scenario_path)
                .map_err(|e| BackendError::Unavailable(format!("{}: {e}", scenario_path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| BackendError::Unavailable(format!("{}: {e}", scenario_path.display())))?
        } else {
            Scenario {
                model: default_model(),
                rules: Vec::new(),
            }
        };
        let mut rules = scenario.rules;
        for rule in &mut rules {
            if let Some(name) = &rule.image {
                let img = load_image(dir.join(name)).map_err(|e| BackendError::Unavailable(e.to_string()))?;
                rule.image_digest = Some(image_digest(&img));
            }
        }
        let mut mock = Self::from_rules(scenario.model, rules);
        if let Source::Rules { dir: d, .. } = &mut mock.source {
            *d = Some(dir.to_path_buf());
        }
        Ok(mock)
    }

    /// Replies computed by `f`.
    pub fn from_fn(
        model: impl Into<String>,
        f: impl Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            model: model.into(),
            source: Source::Func(Box::new(f)),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Every call fails as if the service were down.
    pub fn unreachable() -> Self {
        Self {
            model: "unreachable".into(),
            source: Source::Unreachable,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Requests received so far, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn into_arc(self) -> Arc<Self> {
        Arc::new(self)
    }

    fn matches(rule: &MockRule, req: &ChatRequest) -> bool {
        if rule.purpose.is_some_and(|p| p != req.purpose) {
            return false;
        }
        if let Some(needle) = &rule.prompt_contains {
            if !req.prompt.contains(needle.as_str()) {
                return false;
            }
        }
        if let Some(d) = &rule.image_digest {
            match req.images.first() {
                Some(img) if image_digest(img) == *d => {}
                _ => return false,
            }
        }
        true
    }
}

impl Backend for MockBackend {
    fn id(&self) -> String {
        format!("mock:{}", self.model)
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(req.clone());
        let text = match &self.source {
            Source::Unreachable => return Err(BackendError::Unavailable("mock backend is unreachable".into())),
            Source::Func(f) => f(req)?,
            Source::Rules { rules, cursors, dir } => {
                let keyed = dir
                    .as_ref()
                    .map(|d| d.join(format!("{}.txt", cache_key(&self.model, req))))
                    .filter(|p| p.exists());
                if let Some(path) = keyed {
                    std::fs::read_to_string(&path).map_err(|e| BackendError::Unavailable(e.to_string()))?
                } else {
                    let idx = rules.iter().position(|r| Self::matches(r, req)).ok_or_else(|| {
                        BackendError::Unavailable(format!("no mock reply for {} request", req.purpose.as_str()))
                    })?;
                    let rule = &rules[idx];
                    if rule.replies.is_empty() {
                        rule.reply.clone().unwrap_or_default()
                    } else {
                        let mut cur = cursors.lock().unwrap_or_else(|e| e.into_inner());
                        let i = cur[idx].min(rule.replies.len() - 1);
                        cur[idx] += 1;
                        rule.replies[i].clone()
                    }
                }
            }
        };
        Ok(Completion::fresh(text))
    }
}
