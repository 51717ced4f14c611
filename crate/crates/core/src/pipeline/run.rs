use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, ScoreSource};
use super::PipelineError;
use crate::ffd::{generate_hint, DetectorKind, HintImage};
use crate::grounding::{ground_and_segment, HttpSegmentService, ScoredBox, SegBackend, SegmentService};
use crate::imaging::{BinaryMask, Image, ScoreMap};
use crate::mllm::{
    self, Backend, BackendError, CachedBackend, ChatRequest, Completion, Explanation, HttpBackend, Judgement, Limiter,
    MockBackend, PromptLibrary, Purpose, TamperType,
};

/// Pipeline step a provenance entry or failure belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Classify,
    Ffd,
    Analyze,
    Locate,
    Ground,
    Judge,
}

impl From<Purpose> for Stage {
    fn from(p: Purpose) -> Self {
        match p {
            Purpose::Classify => Stage::Classify,
            Purpose::Analyze => Stage::Analyze,
            Purpose::Judge => Stage::Judge,
            Purpose::Locate => Stage::Locate,
        }
    }
}

/// One executed step: which component ran, how, and whether it succeeded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub stage: Stage,
    pub backend: String,
    /// Set for chat-model calls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_hit: Option<bool>,
    pub latency_ms: u64,
    /// Images attached to a chat request.
    pub attachments: usize,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Default)]
struct Provenance(Mutex<Vec<ProvenanceEntry>>);

impl Provenance {
    fn push(&self, e: ProvenanceEntry) {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).push(e);
    }

    fn take(&self) -> Vec<ProvenanceEntry> {
        std::mem::take(&mut *self.0.lock().unwrap_or_else(|e| e.into_inner()))
    }
}

fn millis(d: Duration) -> u64 {
    d.as_millis().min(u64::MAX as u128) as u64
}

/// Logs every chat call made through it.
struct Recording<'a> {
    inner: &'a dyn Backend,
    log: &'a Provenance,
}

impl Backend for Recording<'_> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn model(&self) -> &str {
        self.inner.model()
    }

    fn complete(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        let start = Instant::now();
        let out = self.inner.complete(req);
        self.log.push(ProvenanceEntry {
            stage: req.purpose.into(),
            backend: self.inner.id(),
            cache_hit: Some(out.as_ref().is_ok_and(|c| c.cache_hit)),
            latency_ms: millis(start.elapsed()),
            attachments: req.images.len(),
            ok: out.is_ok(),
            detail: out.as_ref().err().map(|e| e.to_string()),
        });
        out
    }
}

/// Backends and prompts shared by every run.
#[derive(Clone)]
pub struct Services {
    pub mllm: Arc<dyn Backend>,
    pub judge: Option<Arc<dyn Backend>>,
    pub segmenter: Option<Arc<dyn SegmentService>>,
    pub prompts: PromptLibrary,
}

/// How [`Services::from_config`] picks implementations.
#[derive(Clone, Debug, Default)]
pub struct ServiceOptions {
    /// Serve every chat call from this mock directory; the judge uses its
    /// `judge/` subdirectory when present. No remote segmentation is used.
    pub mock_dir: Option<PathBuf>,
    /// Skip the segmentation service and always use the local fallback.
    pub no_remote_seg: bool,
}

fn with_cache(b: Arc<dyn Backend>, dir: Option<&Path>) -> Result<Arc<dyn Backend>, PipelineError> {
    Ok(match dir {
        Some(d) => Arc::new(CachedBackend::new(b, d).map_err(|e| PipelineError::Backend(e.to_string()))?),
        None => b,
    })
}

impl Services {
    pub fn new(mllm: Arc<dyn Backend>) -> Self {
        Self {
            mllm,
            judge: None,
            segmenter: None,
            prompts: PromptLibrary::default(),
        }
    }

    pub fn with_judge(mut self, judge: Arc<dyn Backend>) -> Self {
        self.judge = Some(judge);
        self
    }

    pub fn with_segmenter(mut self, seg: Arc<dyn SegmentService>) -> Self {
        self.segmenter = Some(seg);
        self
    }

    pub fn with_prompts(mut self, prompts: PromptLibrary) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn from_config(cfg: &PipelineConfig, opts: &ServiceOptions) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let backend_err = |e: &dyn std::fmt::Display| PipelineError::Backend(e.to_string());
        let prompts = match &cfg.prompts_dir {
            Some(dir) => PromptLibrary::load(dir).map_err(|e| PipelineError::Config(e.to_string()))?,
            None => PromptLibrary::default(),
        };
        let limiter = Limiter::new(cfg.backend.max_parallel);
        let (mllm, judge): (Arc<dyn Backend>, Option<Arc<dyn Backend>>) = match &opts.mock_dir {
            Some(dir) => {
                let main: Arc<dyn Backend> = Arc::new(MockBackend::from_dir(dir).map_err(|e| backend_err(&e))?);
                let judge = cfg.judge.enabled.then(|| -> Result<Arc<dyn Backend>, PipelineError> {
                    let jdir = dir.join("judge");
                    Ok(if jdir.is_dir() {
                        Arc::new(MockBackend::from_dir(&jdir).map_err(|e| backend_err(&e))?)
                    } else {
                        main.clone()
                    })
                });
                (main, judge.transpose()?)
            }
            None => {
                let main: Arc<dyn Backend> =
                    Arc::new(HttpBackend::new(cfg.backend.clone(), limiter.clone()).map_err(|e| backend_err(&e))?);
                let judge = cfg.judge.enabled.then(|| -> Result<Arc<dyn Backend>, PipelineError> {
                    Ok(Arc::new(
                        HttpBackend::new(cfg.judge.backend.clone(), limiter.clone()).map_err(|e| backend_err(&e))?,
                    ))
                });
                (main, judge.transpose()?)
            }
        };
        let mllm = with_cache(mllm, cfg.backend.cache_dir.as_deref())?;
        let judge = judge
            .map(|j| with_cache(j, cfg.judge.backend.cache_dir.as_deref()))
            .transpose()?;
        let segmenter: Option<Arc<dyn SegmentService>> = match (&cfg.grounding.service_url, &opts.mock_dir) {
            (Some(url), None) if !opts.no_remote_seg => Some(Arc::new(HttpSegmentService::new(
                url.clone(),
                Duration::from_secs(cfg.grounding.timeout_secs),
                limiter,
            ))),
            _ => None,
        };
        Ok(Self {
            mllm,
            judge,
            segmenter,
            prompts,
        })
    }
}

/// Outcome of one image run.
#[derive(Clone, Debug, PartialEq)]
pub struct ForensicReport {
    /// Classified category; `Others` when the type prior is disabled.
    pub tamper_type: TamperType,
    pub type_prior: bool,
    pub explanation: Explanation,
    pub detection_score: f64,
    /// `detection_score` reached the configured threshold.
    pub detected: bool,
    pub hint_used: bool,
    pub hint: Option<HintImage>,
    pub mask: BinaryMask,
    pub probability: ScoreMap,
    pub seg_backend: Option<SegBackend>,
    pub boxes: Vec<ScoredBox>,
    pub provenance: Vec<ProvenanceEntry>,
}

/// JSON-friendly view of a report without the rasters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub tamper_type: TamperType,
    pub type_prior: bool,
    pub explanation: Explanation,
    pub detection_score: f64,
    pub detected: bool,
    pub hint_used: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint_method: Option<DetectorKind>,
    #[serde(default)]
    pub hint_pairs: usize,
    pub mask_pixels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seg_backend: Option<SegBackend>,
    #[serde(default)]
    pub boxes: Vec<ScoredBox>,
    pub provenance: Vec<ProvenanceEntry>,
}

impl ForensicReport {
    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            tamper_type: self.tamper_type,
            type_prior: self.type_prior,
            explanation: self.explanation.clone(),
            detection_score: self.detection_score,
            detected: self.detected,
            hint_used: self.hint_used,
            hint_method: self.hint.as_ref().map(|h| h.method),
            hint_pairs: self.hint.as_ref().map_or(0, |h| h.matches.pairs.len()),
            mask_pixels: self.mask.count(),
            seg_backend: self.seg_backend,
            boxes: self.boxes.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Steps of `stage` that ran, successful or not.
    pub fn invocations(&self, stage: Stage) -> usize {
        self.provenance.iter().filter(|e| e.stage == stage).count()
    }

    /// Writes `report.json`, `mask.png`, `probability.png` and, when a hint
    /// was produced, `hint.png` into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        let json = serde_json::to_string_pretty(&self.summary()).expect("report serializes");
        let path = dir.join("report.json");
        std::fs::write(&path, json).map_err(|e| PipelineError::io(&path, e))?;
        let img_err = |e: crate::imaging::ImagingError| PipelineError::Image(e.to_string());
        self.mask.save_png(dir.join("mask.png")).map_err(img_err)?;
        let prob = self.probability.encode_png16().map_err(img_err)?;
        let path = dir.join("probability.png");
        std::fs::write(&path, prob).map_err(|e| PipelineError::io(&path, e))?;
        if let Some(h) = &self.hint {
            h.image.save_png(dir.join("hint.png")).map_err(img_err)?;
        }
        Ok(())
    }
}

/// A run that stopped early, with whatever was produced before the failure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{stage:?} stage failed: {error}")]
pub struct PipelineFailure {
    pub stage: Stage,
    pub error: String,
    pub tamper_type: Option<TamperType>,
    pub explanation: Option<Explanation>,
    pub hint_used: bool,
    pub provenance: Vec<ProvenanceEntry>,
}

/// Runs the full detection and localization sequence on one image.
///
/// 1. classify the manipulation type (skipped without the type prior);
/// 2. for copy-move with the hint enabled, run the configured detector and
///    attach its overlay as a second image;
/// 3. analyze with the type-aligned (or generic) prompt;
/// 4. for a tampered verdict, ground the region description into a mask;
///    otherwise return an empty mask.
pub fn run(img: &Arc<Image>, cfg: &PipelineConfig, services: &Services) -> Result<ForensicReport, PipelineFailure> {
    let log = Provenance::default();
    let rec = Recording {
        inner: services.mllm.as_ref(),
        log: &log,
    };
    let lib = &services.prompts;
    let mut tamper_type = None;
    let mut hint_used = false;
    let fail = |stage: Stage, error: String, tamper_type, explanation, hint_used| PipelineFailure {
        stage,
        error,
        tamper_type,
        explanation,
        hint_used,
        provenance: log.take(),
    };
    if let Err(e) = cfg.validate() {
        return Err(fail(Stage::Config, e.to_string(), None, None, false));
    }

    let ty = if cfg.ablation.type_prior {
        mllm::classify_type(&rec, lib, img).map_err(|e| fail(Stage::Classify, e.to_string(), None, None, false))?
    } else {
        TamperType::Others
    };
    tamper_type.replace(ty);
    let template = if cfg.ablation.type_prior {
        lib.analysis(ty)
    } else {
        &lib.generic
    };

    let hint = if cfg.ablation.type_prior && ty == TamperType::CopyMove && cfg.ablation.ffd {
        let start = Instant::now();
        let out = generate_hint(img, cfg.ffd.method, &cfg.ffd.params);
        log.push(ProvenanceEntry {
            stage: Stage::Ffd,
            backend: format!("ffd:{}", cfg.ffd.method.as_str()),
            cache_hit: None,
            latency_ms: millis(start.elapsed()),
            attachments: 0,
            ok: out.is_ok(),
            detail: Some(match &out {
                Ok(h) => format!("{} pairs", h.matches.pairs.len()),
                Err(e) => e.to_string(),
            }),
        });
        Some(out.map_err(|e| fail(Stage::Ffd, e.to_string(), tamper_type, None, false))?)
    } else {
        None
    };
    hint_used |= hint.is_some();

    let hint_img = hint.as_ref().map(|h| Arc::new(h.image.clone()));
    let explanation = mllm::analyze(&rec, lib, template, img, hint_img.as_ref())
        .map_err(|e| fail(Stage::Analyze, e.to_string(), tamper_type, None, hint_used))?;

    let (w, h) = img.dims();
    let (mask, probability, seg_backend, boxes) = if explanation.is_tampered() {
        let start = Instant::now();
        let seg = ground_and_segment(
            img,
            &explanation.description,
            &cfg.grounding,
            services.segmenter.as_deref(),
            &rec,
            lib,
        );
        log.push(ProvenanceEntry {
            stage: Stage::Ground,
            backend: match (&seg, &services.segmenter) {
                (Ok(s), Some(svc)) if s.backend == SegBackend::Remote => svc.id(),
                (Ok(_), _) => "fallback".into(),
                (Err(_), Some(svc)) => svc.id(),
                (Err(_), None) => "none".into(),
            },
            cache_hit: None,
            latency_ms: millis(start.elapsed()),
            attachments: 0,
            ok: seg.is_ok(),
            detail: seg.as_ref().err().map(|e| e.to_string()),
        });
        let seg = seg.map_err(|e| {
            fail(
                Stage::Ground,
                e.to_string(),
                tamper_type,
                Some(explanation.clone()),
                hint_used,
            )
        })?;
        (seg.mask, seg.probability, Some(seg.backend), seg.boxes)
    } else {
        (BinaryMask::empty(w, h), ScoreMap::zeros(w, h), None, Vec::new())
    };

    let detection_score = match cfg.score_source {
        ScoreSource::Confidence => explanation.confidence,
        ScoreSource::Verdict => explanation.is_tampered() as u8 as f64,
    };
    Ok(ForensicReport {
        tamper_type: ty,
        type_prior: cfg.ablation.type_prior,
        detected: detection_score >= cfg.detection_threshold,
        detection_score,
        explanation,
        hint_used,
        hint,
        mask,
        probability,
        seg_backend,
        boxes,
        provenance: log.take(),
    })
}

/// Rubric scores for a report's explanation against the ground-truth mask.
pub fn judge_report(
    explanation: &Explanation,
    img: &Arc<Image>,
    gt: &BinaryMask,
    cfg: &PipelineConfig,
    services: &Services,
) -> Option<Result<Judgement, mllm::MllmError>> {
    let judge = services.judge.as_ref()?;
    Some(mllm::judge_explanation(
        judge.as_ref(),
        &services.prompts,
        img,
        gt,
        explanation,
        cfg.judge.reference,
    ))
}
