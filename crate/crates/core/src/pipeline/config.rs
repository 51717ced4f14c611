use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::ffd::{DetectorKind, DetectorParams};
use crate::grounding::GroundingConfig;
use crate::mllm::{BackendConfig, JudgeReference};

/// How the image-level detection score is derived from the analysis reply.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    /// The model's stated probability of tampering.
    #[default]
    Confidence,
    /// 1 for a tampered verdict, 0 otherwise.
    Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Classify first and use the type-aligned prompt; off = generic prompt.
    pub type_prior: bool,
    /// Attach a duplicate-region hint for copy-move images.
    pub ffd: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            type_prior: true,
            ffd: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FfdConfig {
    pub method: DetectorKind,
    #[serde(flatten)]
    pub params: DetectorParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub enabled: bool,
    pub backend: BackendConfig,
    pub reference: JudgeReference,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            backend: BackendConfig::default(),
            reference: JudgeReference::MaskOverlay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Scores at or above this count as a tampering detection.
    pub detection_threshold: f64,
    pub score_source: ScoreSource,
    /// Samples processed concurrently during evaluation.
    pub workers: usize,
    /// Directory overriding the built-in prompt templates.
    pub prompts_dir: Option<PathBuf>,
    pub ablation: Ablation,
    pub ffd: FfdConfig,
    pub backend: BackendConfig,
    pub judge: JudgeConfig,
    pub grounding: GroundingConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detection_threshold: 0.5,
            score_source: ScoreSource::Confidence,
            workers: 4,
            prompts_dir: None,
            ablation: Ablation::default(),
            ffd: FfdConfig::default(),
            backend: BackendConfig::default(),
            judge: JudgeConfig::default(),
            grounding: GroundingConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a TOML file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p {
                if inner.is_relative() {
                    *inner = base.join(&*inner);
                }
            }
        };
        rebase(&mut cfg.prompts_dir);
        rebase(&mut cfg.backend.cache_dir);
        rebase(&mut cfg.backend.audit_dir);
        rebase(&mut cfg.judge.backend.cache_dir);
        rebase(&mut cfg.judge.backend.audit_dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&self.detection_threshold) {
            return Err(PipelineError::Config(format!(
                "detection_threshold {} outside [0, 1]",
                self.detection_threshold
            )));
        }
        if self.workers == 0 {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        for method in [DetectorKind::Block, DetectorKind::Keypoint, DetectorKind::Noise] {
            self.ffd
                .params
                .validate(method)
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        self.grounding
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.backend
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.judge.enabled {
            self.judge
                .backend
                .validate()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Short hex digest of the canonical TOML form; names run directories.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_toml().as_bytes());
        hex::encode(h.finalize())[..12].to_string()
    }
}
