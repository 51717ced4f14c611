//! Multimodal-LLM reasoning: tamper-type classification, type-aligned
//! analysis, rubric judging and region localization over a pluggable
//! chat backend.

mod backend;
mod cache;
mod http;
mod mock;
pub mod parse;
mod prompts;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use backend::{cache_key, image_digest, Backend, BackendError, ChatRequest, Completion, Limiter, Permit, Purpose};
pub use cache::CachedBackend;
pub use http::{chat_body, reply_text, BackendConfig, HttpBackend};
pub use mock::{MockBackend, MockRule};
pub use prompts::{PromptLibrary, Template, HINT_REF, IMAGE_REF, REFERENCE_REF};

use crate::imaging::{self, BinaryMask, BoundingBox, Image};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum MllmError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("unparseable {purpose} reply: {reason}")]
    Parse { purpose: &'static str, reason: String },
    #[error("prompt error: {0}")]
    Prompt(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// Manipulation category assigned before analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TamperType {
    #[serde(rename = "copy-move")]
    CopyMove,
    #[serde(rename = "deepfake")]
    Deepfake,
    #[serde(rename = "aigc")]
    Aigc,
    #[serde(rename = "others")]
    Others,
}

impl TamperType {
    pub const ALL: [TamperType; 4] = [
        TamperType::CopyMove,
        TamperType::Deepfake,
        TamperType::Aigc,
        TamperType::Others,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TamperType::CopyMove => "copy-move",
            TamperType::Deepfake => "deepfake",
            TamperType::Aigc => "aigc",
            TamperType::Others => "others",
        }
    }
}

impl fmt::Display for TamperType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TamperType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse::scan_type_keywords(s).ok_or_else(|| format!("unknown tamper type '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Authentic,
    Tampered,
}

/// Structured outcome of the analysis step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// Long-form rationale.
    pub explanation: String,
    /// Short phrase naming the suspected region; may be empty when authentic.
    pub description: String,
    pub verdict: Verdict,
    /// Probability in `[0, 1]` that the image is tampered.
    pub confidence: f64,
}

impl Explanation {
    pub fn is_tampered(&self) -> bool {
        self.verdict == Verdict::Tampered
    }
}

/// Four-dimension rubric, each score in `[0, 5]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RubricScores {
    pub accuracy: f64,
    pub details: f64,
    pub hallucination: f64,
    pub readability: f64,
}

impl RubricScores {
    /// Clamps every score into `[0, 5]`; the flag reports whether any moved.
    pub fn clamped(&self) -> (RubricScores, bool) {
        let c = |v: f64| v.clamp(0.0, 5.0);
        let out = RubricScores {
            accuracy: c(self.accuracy),
            details: c(self.details),
            hallucination: c(self.hallucination),
            readability: c(self.readability),
        };
        let changed = out != *self;
        (out, changed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Judgement {
    pub scores: RubricScores,
    /// The judge returned at least one score outside `[0, 5]`.
    pub clamped: bool,
}

/// What the judge sees as ground truth next to the image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeReference {
    /// The image with ground-truth pixels tinted.
    #[default]
    MaskOverlay,
    /// The binary ground-truth mask alone.
    Mask,
}

fn parse_err(purpose: Purpose, reason: impl Into<String>) -> MllmError {
    MllmError::Parse {
        purpose: purpose.as_str(),
        reason: reason.into(),
    }
}

/// Assigns one of the four categories, even to authentic-looking images.
pub fn classify_type(backend: &dyn Backend, lib: &PromptLibrary, img: &Arc<Image>) -> Result<TamperType, MllmError> {
    let prompt = lib.classification.render(&[("image", IMAGE_REF)]);
    let req = ChatRequest::new(Purpose::Classify, prompt, vec![img.clone()]);
    let reply = backend.complete(&req)?;
    parse::parse_type(&reply.text).ok_or_else(|| parse_err(Purpose::Classify, truncate(&reply.text)))
}

/// Runs the analysis prompt. With a hint, the original image is attached
/// first and the hint second. A malformed reply is re-asked once with the
/// library's format reminder appended.
pub fn analyze(
    backend: &dyn Backend,
    lib: &PromptLibrary,
    template: &Template,
    img: &Arc<Image>,
    hint: Option<&Arc<Image>>,
) -> Result<Explanation, MllmError> {
    let hint_text = if hint.is_some() { HINT_REF } else { "" };
    let prompt = template.render(&[("image", IMAGE_REF), ("hint_image", hint_text)]);
    let mut images = vec![img.clone()];
    images.extend(hint.cloned());
    let first = backend.complete(&ChatRequest::new(Purpose::Analyze, prompt.clone(), images.clone()))?;
    match parse::parse_explanation(&first.text) {
        Ok(e) => Ok(e),
        Err(reason) => {
            log::warn!("malformed analysis reply ({reason}); re-asking once");
            let retry = ChatRequest::new(Purpose::Analyze, format!("{prompt}{}", lib.format_reminder), images);
            let second = backend.complete(&retry)?;
            parse::parse_explanation(&second.text).map_err(|r| parse_err(Purpose::Analyze, r))
        }
    }
}

/// Scores `exp` against the ground truth with the rubric prompt.
pub fn judge_explanation(
    backend: &dyn Backend,
    lib: &PromptLibrary,
    img: &Arc<Image>,
    gt_mask: &BinaryMask,
    exp: &Explanation,
    reference: JudgeReference,
) -> Result<Judgement, MllmError> {
    let reference_img = match reference {
        JudgeReference::MaskOverlay => imaging::tint_region(img, gt_mask, imaging::SOURCE_TINT),
        JudgeReference::Mask => gt_mask.to_image(),
    };
    let prompt = lib.judge.render(&[
        ("image", IMAGE_REF),
        ("reference", REFERENCE_REF),
        ("explanation", exp.explanation.as_str()),
    ]);
    let req = ChatRequest::new(Purpose::Judge, prompt, vec![img.clone(), Arc::new(reference_img)]);
    let reply = backend.complete(&req)?;
    let raw = parse::parse_scores(&reply.text).map_err(|r| parse_err(Purpose::Judge, r))?;
    let (scores, clamped) = raw.clamped();
    if clamped {
        log::warn!("judge returned out-of-range scores {raw:?}; clamped to [0, 5]");
    }
    Ok(Judgement { scores, clamped })
}

/// Asks for a normalized bounding box around `description`.
pub fn locate_region(
    backend: &dyn Backend,
    lib: &PromptLibrary,
    img: &Arc<Image>,
    description: &str,
) -> Result<BoundingBox, MllmError> {
    let prompt = lib.locate.render(&[("image", IMAGE_REF), ("description", description)]);
    let req = ChatRequest::new(Purpose::Locate, prompt, vec![img.clone()]);
    let reply = backend.complete(&req)?;
    let coords = parse::parse_box(&reply.text).map_err(|r| parse_err(Purpose::Locate, r))?;
    BoundingBox::from_normalized(coords, img.width(), img.height())
        .map_err(|e| parse_err(Purpose::Locate, e.to_string()))
}

fn truncate(s: &str) -> String {
    let t: String = s.chars().take(200).collect();
    if t.len() < s.len() {
        format!("{t}...")
    } else {
        t
    }
}
