//! Training-free image forgery detection and localization.
//!
//! A multimodal chat model first assigns a manipulation category, then
//! reasons about the image with a category-specific prompt. Copy-move
//! candidates get a duplicate-region hint from classical detectors, and the
//! suspected region named in the reply is segmented into a pixel mask.

pub mod degrade;
pub mod ffd;
pub mod grounding;
pub mod imaging;
pub mod metrics;
pub mod mllm;
pub mod pipeline;
pub mod synth;

pub use degrade::Degradation;
pub use ffd::{DetectorKind, DetectorParams, HintImage, MatchPair, MatchSet};
pub use grounding::{GroundingConfig, SegBackend, SegResult};
pub use imaging::{BinaryMask, BoundingBox, Image, ScoreMap};
pub use metrics::{EvalSummary, SampleResult};
pub use mllm::{Backend, Explanation, PromptLibrary, RubricScores, TamperType, Verdict};
pub use pipeline::{ForensicReport, Manifest, ManifestRecord, PipelineConfig, Services};
