//! Training-free copy-move evidence extraction and hint-image generation.
//!
//! Three interchangeable detectors share one output vocabulary: a
//! [`MatchSet`] of duplicated-region pairs (block and keypoint methods) and a
//! per-pixel [`ScoreMap`]. [`generate_hint`] turns either into a
//! [`HintImage`] that can be attached next to the original image.

mod block;
mod keypoint;
mod noise;

use serde::{Deserialize, Serialize};

use crate::imaging::{self, BinaryMask, BoundingBox, Image, ScoreMap};

pub use block::{detect_block, BlockParams};
pub use keypoint::{detect_keypoint, harris_keypoints, Keypoint, KeypointParams};
pub use noise::{detect_noise, NoiseParams};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum FfdError {
    #[error("image {width}x{height} is too small: minimum dimension must be at least {min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("invalid detector parameters: {0}")]
    InvalidParams(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Block,
    #[default]
    Keypoint,
    Noise,
}

impl DetectorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DetectorKind::Block => "block",
            DetectorKind::Keypoint => "keypoint",
            DetectorKind::Noise => "noise",
        }
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = FfdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "block" => Ok(DetectorKind::Block),
            "keypoint" | "point" => Ok(DetectorKind::Keypoint),
            "noise" => Ok(DetectorKind::Noise),
            other => Err(FfdError::InvalidParams(format!("unknown detector {other:?}"))),
        }
    }
}

/// One duplicated region: `target` is a translated copy of `source`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchPair {
    pub source: BoundingBox,
    pub target: BoundingBox,
    /// Target origin minus source origin.
    pub offset: (i64, i64),
    /// Number of matches sharing this pair's offset cluster.
    pub support: usize,
    /// Index of the offset cluster this pair belongs to.
    pub cluster: usize,
}

impl MatchPair {
    pub fn distance(&self) -> f64 {
        ((self.offset.0 * self.offset.0 + self.offset.1 * self.offset.1) as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSet {
    pub method: DetectorKind,
    pub pairs: Vec<MatchPair>,
}

impl MatchSet {
    pub fn empty(method: DetectorKind) -> Self {
        Self {
            method,
            pairs: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs grouped by cluster id, in ascending id order.
    pub fn clusters(&self) -> Vec<Vec<&MatchPair>> {
        let mut ids: Vec<usize> = self.pairs.iter().map(|p| p.cluster).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter()
            .map(|id| self.pairs.iter().filter(|p| p.cluster == id).collect())
            .collect()
    }

    /// Offset of the cluster with the highest support.
    pub fn dominant_offset(&self) -> Option<(i64, i64)> {
        self.pairs
            .iter()
            .max_by(|a, b| a.support.cmp(&b.support).then(b.cluster.cmp(&a.cluster)))
            .map(|p| p.offset)
    }
}

/// Sign convention shared by block and keypoint matching: an offset and its
/// negation describe the same duplication, so offsets are normalized to
/// `dx > 0 || (dx == 0 && dy > 0)`. Returns `(offset, swapped)`.
pub(crate) fn canonical_offset(dx: i64, dy: i64) -> ((i64, i64), bool) {
    if dx < 0 || (dx == 0 && dy < 0) {
        ((-dx, -dy), true)
    } else {
        ((dx, dy), false)
    }
}

/// Rendered cue image plus the per-pixel evidence behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct HintImage {
    pub image: Image,
    pub region_map: ScoreMap,
    pub method: DetectorKind,
    pub matches: MatchSet,
}

/// Parameters for all three detectors; only the selected one is used.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    pub block: BlockParams,
    pub keypoint: KeypointParams,
    pub noise: NoiseParams,
}

impl DetectorParams {
    pub fn validate(&self, method: DetectorKind) -> Result<(), FfdError> {
        match method {
            DetectorKind::Block => self.block.validate(),
            DetectorKind::Keypoint => self.keypoint.validate(),
            DetectorKind::Noise => self.noise.validate(),
        }
    }
}

pub const NOISE_TINT: [u8; 3] = [255, 0, 255];

pub fn generate_hint(img: &Image, method: DetectorKind, params: &DetectorParams) -> Result<HintImage, FfdError> {
    params.validate(method)?;
    let (matches, region_map) = match method {
        DetectorKind::Block => detect_block(img, &params.block)?,
        DetectorKind::Keypoint => detect_keypoint(img, &params.keypoint)?,
        DetectorKind::Noise => (MatchSet::empty(DetectorKind::Noise), detect_noise(img, &params.noise)?),
    };
    let image = match method {
        DetectorKind::Noise if region_map.is_zero() => img.clone(),
        DetectorKind::Noise => {
            let (w, h) = region_map.dims();
            let flagged = region_map.data().iter().map(|&v| v > 0.0).collect();
            let mask = BinaryMask::new(w, h, flagged).expect("map dimensions");
            imaging::tint_region(img, &mask, NOISE_TINT)
        }
        _ => imaging::render_hint_overlay(img, &matches),
    };
    Ok(HintImage {
        image,
        region_map,
        method,
        matches,
    })
}
