//! Text-grounded segmentation of the region named by an explanation.
//!
//! The primary path calls a remote segmentation service. When it is down and
//! the fallback is enabled, the chat model is asked for a bounding box and the
//! box is refined locally by color similarity.

use std::sync::Arc;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::imaging::{self, binarize, BinaryMask, BoundingBox, Image, MorphOp, ScoreMap};
use crate::mllm::{self, Backend, Limiter, PromptLibrary};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum GroundingError {
    #[error("region description is empty")]
    EmptyDescription,
    #[error("grounding unavailable: {0}")]
    Unavailable(String),
    #[error("invalid grounding configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundingConfig {
    /// Base URL of the segmentation service; `None` skips straight to the fallback.
    pub service_url: Option<String>,
    pub box_threshold: f64,
    pub text_threshold: f64,
    pub mask_threshold: f64,
    pub fallback: bool,
    pub timeout_secs: u64,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self {
            service_url: None,
            box_threshold: 0.35,
            text_threshold: 0.25,
            mask_threshold: 0.05,
            fallback: true,
            timeout_secs: 120,
        }
    }
}

impl GroundingConfig {
    pub fn validate(&self) -> Result<(), GroundingError> {
        for (name, v) in [
            ("box_threshold", self.box_threshold),
            ("text_threshold", self.text_threshold),
            ("mask_threshold", self.mask_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(GroundingError::InvalidConfig(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.timeout_secs == 0 {
            return Err(GroundingError::InvalidConfig("timeout_secs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegBackend {
    Remote,
    Fallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BoundingBox,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegResult {
    pub mask: BinaryMask,
    pub probability: ScoreMap,
    /// Sorted by score, highest first.
    pub boxes: Vec<ScoredBox>,
    pub backend: SegBackend,
}

/// Raw answer of a segmentation service.
#[derive(Clone, Debug, PartialEq)]
pub struct RemoteSegmentation {
    pub boxes: Vec<ScoredBox>,
    pub probability: ScoreMap,
    pub mask: Option<BinaryMask>,
}

pub trait SegmentService: Send + Sync {
    fn id(&self) -> String;
    fn segment(&self, img: &Image, query: &str, cfg: &GroundingConfig) -> Result<RemoteSegmentation, GroundingError>;
}

/// Client for the JSON segmentation service (`POST /segment`, `GET /health`).
pub struct HttpSegmentService {
    base_url: String,
    agent: ureq::Agent,
    limiter: Arc<Limiter>,
}

fn b64() -> base64::engine::GeneralPurpose {
    base64::engine::general_purpose::STANDARD
}

impl HttpSegmentService {
    pub fn new(base_url: impl Into<String>, timeout: Duration, limiter: Arc<Limiter>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
            limiter,
        }
    }

    /// `GET /health` payload when the service reports ready.
    pub fn health(&self) -> Result<Value, GroundingError> {
        let _permit = self.limiter.acquire();
        let resp = self
            .agent
            .get(&format!("{}/health", self.base_url))
            .call()
            .map_err(|e| GroundingError::Unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .into_body()
            .read_to_string()
            .map_err(|e| GroundingError::Unavailable(e.to_string()))?;
        if status != 200 {
            return Err(GroundingError::Unavailable(format!("health HTTP {status}: {body}")));
        }
        serde_json::from_str(&body).map_err(|e| GroundingError::Unavailable(e.to_string()))
    }
}

/// Request body of `POST /segment`.
pub fn segment_request_body(img: &Image, query: &str, cfg: &GroundingConfig) -> Result<Value, GroundingError> {
    let png = img
        .encode_png()
        .map_err(|e| GroundingError::Unavailable(e.to_string()))?;
    Ok(json!({
        "image": b64().encode(png),
        "query": query,
        "box_threshold": cfg.box_threshold,
        "text_threshold": cfg.text_threshold,
        "mask_threshold": cfg.mask_threshold,
    }))
}

/// Decodes a `POST /segment` response for an image of the given size.
pub fn parse_segment_response(body: &Value, width: usize, height: usize) -> Result<RemoteSegmentation, GroundingError> {
    let bad = |m: String| GroundingError::Unavailable(format!("malformed segment response: {m}"));
    let decode = |key: &str| -> Result<Option<Vec<u8>>, GroundingError> {
        match body.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => b64().decode(s).map(Some).map_err(|e| bad(format!("{key}: {e}"))),
            Some(_) => Err(bad(format!("{key} is not a string"))),
        }
    };
    let prob_bytes = decode("probability")?.ok_or_else(|| bad("missing probability".into()))?;
    let probability = ScoreMap::decode_png16(&prob_bytes).map_err(|e| bad(e.to_string()))?;
    if probability.dims() != (width, height) {
        return Err(bad(format!(
            "probability is {:?}, image is {:?}",
            probability.dims(),
            (width, height)
        )));
    }
    let mask = match decode("mask")? {
        Some(bytes) => {
            let img = Image::decode(&bytes).map_err(|e| bad(e.to_string()))?;
            let m = BinaryMask::from_image(&img);
            if m.dims() != (width, height) {
                return Err(bad(format!("mask is {:?}, image is {:?}", m.dims(), (width, height))));
            }
            Some(m)
        }
        None => None,
    };
    let mut boxes = Vec::new();
    for b in body.get("boxes").and_then(Value::as_array).into_iter().flatten() {
        let f = |k: &str| {
            b.get(k)
                .and_then(Value::as_f64)
                .ok_or_else(|| bad(format!("box field {k}")))
        };
        let clampx = |v: f64| v.round().clamp(0.0, width as f64) as usize;
        let clampy = |v: f64| v.round().clamp(0.0, height as f64) as usize;
        let (x0, y0, x1, y1) = (clampx(f("x0")?), clampy(f("y0")?), clampx(f("x1")?), clampy(f("y1")?));
        match BoundingBox::new(x0, y0, x1, y1, width, height) {
            Ok(bbox) => boxes.push(ScoredBox {
                bbox,
                score: f("score")?.clamp(0.0, 1.0),
            }),
            Err(e) => log::warn!("dropping degenerate remote box: {e}"),
        }
    }
    Ok(RemoteSegmentation {
        boxes,
        probability,
        mask,
    })
}

impl SegmentService for HttpSegmentService {
    fn id(&self) -> String {
        format!("segment:{}", self.base_url)
    }

    fn segment(&self, img: &Image, query: &str, cfg: &GroundingConfig) -> Result<RemoteSegmentation, GroundingError> {
        let body = segment_request_body(img, query, cfg)?;
        let _permit = self.limiter.acquire();
        let resp = self
            .agent
            .post(&format!("{}/segment", self.base_url))
            .send_json(&body)
            .map_err(|e| GroundingError::Unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .into_body()
            .with_config()
            .limit(256 << 20)
            .read_to_string()
            .map_err(|e| GroundingError::Unavailable(e.to_string()))?;
        if status != 200 {
            return Err(GroundingError::Unavailable(format!(
                "segment HTTP {status}: {}",
                text.chars().take(300).collect::<String>()
            )));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| GroundingError::Unavailable(e.to_string()))?;
        parse_segment_response(&v, img.width(), img.height())
    }
}

/// Local stand-in for the remote segmenter.
///
/// Inside `bbox` a pixel scores `1 − ‖c − μ‖ / (255·√channels)`, where `μ` is
/// the mean color of the box; outside it scores 0. The mask is the
/// thresholded map closed with radius 2, which never leaves the box.
pub fn fallback_segment(img: &Image, bbox: &BoundingBox, mask_threshold: f64) -> SegResult {
    let (w, h) = img.dims();
    let c = img.channels();
    let mut mean = vec![0.0f64; c];
    for y in bbox.y0..bbox.y1 {
        for x in bbox.x0..bbox.x1 {
            for (m, &v) in mean.iter_mut().zip(img.pixel(x, y)) {
                *m += v as f64;
            }
        }
    }
    let n = bbox.area() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let norm = 255.0 * (c as f64).sqrt();
    let mut data = vec![0.0; w * h];
    for y in bbox.y0..bbox.y1 {
        for x in bbox.x0..bbox.x1 {
            let d2: f64 = img
                .pixel(x, y)
                .iter()
                .zip(&mean)
                .map(|(&v, m)| (v as f64 - m).powi(2))
                .sum();
            data[y * w + x] = (1.0 - d2.sqrt() / norm).clamp(0.0, 1.0);
        }
    }
    let probability = ScoreMap::new(w, h, data).expect("scores in [0, 1]");
    let mask = imaging::morphology(&binarize(&probability, mask_threshold), MorphOp::Close, 2);
    SegResult {
        mask,
        probability,
        boxes: vec![ScoredBox {
            bbox: *bbox,
            score: 1.0,
        }],
        backend: SegBackend::Fallback,
    }
}

/// Localizes `desc` in `img`: remote service first, fallback second.
pub fn ground_and_segment(
    img: &Arc<Image>,
    desc: &str,
    cfg: &GroundingConfig,
    service: Option<&dyn SegmentService>,
    backend: &dyn Backend,
    lib: &PromptLibrary,
) -> Result<SegResult, GroundingError> {
    cfg.validate()?;
    let desc = desc.trim();
    if desc.is_empty() {
        return Err(GroundingError::EmptyDescription);
    }
    let remote_err = match service {
        Some(svc) => match svc.segment(img, desc, cfg) {
            Ok(seg) => return Ok(from_remote(seg, cfg)),
            Err(e) => {
                log::warn!("remote segmentation via {} failed: {e}", svc.id());
                e.to_string()
            }
        },
        None => "no segmentation service configured".to_string(),
    };
    if !cfg.fallback {
        return Err(GroundingError::Unavailable(format!("{remote_err}; fallback disabled")));
    }
    let bbox = mllm::locate_region(backend, lib, img, desc)
        .map_err(|e| GroundingError::Unavailable(format!("{remote_err}; box elicitation failed: {e}")))?;
    Ok(fallback_segment(img, &bbox, cfg.mask_threshold))
}

fn from_remote(seg: RemoteSegmentation, cfg: &GroundingConfig) -> SegResult {
    let mask = binarize(&seg.probability, cfg.mask_threshold);
    if seg.mask.as_ref().is_some_and(|m| *m != mask) {
        log::warn!("remote mask disagrees with its probability map; using the thresholded map");
    }
    let mut boxes: Vec<ScoredBox> = seg.boxes.into_iter().filter(|b| b.score >= cfg.box_threshold).collect();
    boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
    SegResult {
        mask,
        probability: seg.probability,
        boxes,
        backend: SegBackend::Remote,
    }
}
