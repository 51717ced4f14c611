//! Block matching on quantized low-frequency DCT coefficients.
//!
//! Overlapping blocks are described by their first zigzag DCT coefficients,
//! sorted lexicographically so that near-identical blocks land next to each
//! other, and matched against a short window of sorted neighbours. Matches
//! vote for their displacement; only displacements with enough votes survive.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{canonical_offset, DetectorKind, FfdError, MatchPair, MatchSet};
use crate::imaging::{BoundingBox, Image, ScoreMap};

/// Sorted neighbours each entry is compared against.
const NEIGHBOR_WINDOW: usize = 10;

/// Top-left corner of a block.
type Origin = (usize, usize);

/// Quantization step applied to DCT coefficients.
const QUANT_STEP: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockParams {
    pub block_size: usize,
    pub stride: usize,
    /// Raise the stride to 4 for images whose larger side exceeds 512 px.
    pub auto_stride: bool,
    pub dct_coeffs: usize,
    pub feature_tolerance: f64,
    pub min_offset: f64,
    pub min_support: usize,
    pub variance_floor: f64,
}

impl Default for BlockParams {
    fn default() -> Self {
        Self {
            block_size: 16,
            stride: 1,
            auto_stride: true,
            dct_coeffs: 16,
            feature_tolerance: 2.0,
            min_offset: 32.0,
            min_support: 10,
            variance_floor: 4.0,
        }
    }
}

impl BlockParams {
    pub fn validate(&self) -> Result<(), FfdError> {
        let b = self.block_size;
        if b < 4 {
            return Err(FfdError::InvalidParams(format!("block_size {b} < 4")));
        }
        if self.stride < 1 {
            return Err(FfdError::InvalidParams("stride must be at least 1".into()));
        }
        if self.dct_coeffs == 0 || self.dct_coeffs > b * b {
            return Err(FfdError::InvalidParams(format!(
                "dct_coeffs {} must be in 1..={}",
                self.dct_coeffs,
                b * b
            )));
        }
        if self.min_offset.is_nan() || self.min_offset < b as f64 {
            return Err(FfdError::InvalidParams(format!(
                "min_offset {} must be at least the block size {b}",
                self.min_offset
            )));
        }
        if [self.feature_tolerance, self.variance_floor]
            .iter()
            .any(|v| v.is_nan() || *v < 0.0)
        {
            return Err(FfdError::InvalidParams("tolerances must be non-negative".into()));
        }
        if self.min_support == 0 {
            return Err(FfdError::InvalidParams("min_support must be at least 1".into()));
        }
        Ok(())
    }

    pub fn effective_stride(&self, width: usize, height: usize) -> usize {
        if self.auto_stride && width.max(height) > 512 {
            self.stride.max(4)
        } else {
            self.stride
        }
    }
}

/// `(row, col)` = `(vertical, horizontal)` frequency pairs in JPEG zigzag order.
pub(crate) fn zigzag(n: usize, count: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(count);
    for s in 0..(2 * n - 1) {
        let lo = s.saturating_sub(n - 1);
        let hi = s.min(n - 1);
        if s % 2 == 0 {
            for row in (lo..=hi).rev() {
                out.push((row, s - row));
            }
        } else {
            for row in lo..=hi {
                out.push((row, s - row));
            }
        }
        if out.len() >= count {
            break;
        }
    }
    out.truncate(count);
    out
}

/// Orthonormal DCT-II basis, `basis[k][x]`.
fn dct_basis(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            let alpha = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            (0..n)
                .map(|x| alpha * ((2 * x + 1) as f64 * k as f64 * PI / (2 * n) as f64).cos())
                .collect()
        })
        .collect()
}

struct BlockFeature {
    x: usize,
    y: usize,
    q: Vec<i32>,
}

struct FeatureExtractor {
    b: usize,
    order: Vec<(usize, usize)>,
    max_col: usize,
    basis: Vec<Vec<f64>>,
}

impl FeatureExtractor {
    fn new(b: usize, k: usize) -> Self {
        let order = zigzag(b, k);
        let max_col = order.iter().map(|&(_, c)| c).max().unwrap_or(0);
        Self {
            b,
            order,
            max_col,
            basis: dct_basis(b),
        }
    }

    /// Returns `None` for blocks below the variance floor.
    fn extract(&self, gray: &[f64], width: usize, x0: usize, y0: usize, floor: f64) -> Option<Vec<i32>> {
        let b = self.b;
        let n = (b * b) as f64;
        let (mut sum, mut sq) = (0.0, 0.0);
        for y in 0..b {
            for &v in &gray[(y0 + y) * width + x0..(y0 + y) * width + x0 + b] {
                sum += v;
                sq += v * v;
            }
        }
        let mean = sum / n;
        let variance = (sq / n - mean * mean).max(0.0);
        if variance < floor {
            return None;
        }
        // Horizontal pass restricted to the columns the zigzag prefix needs.
        let cols = self.max_col + 1;
        let mut rows = vec![0.0; b * cols];
        for y in 0..b {
            let line = &gray[(y0 + y) * width + x0..(y0 + y) * width + x0 + b];
            for u in 0..cols {
                rows[y * cols + u] = line.iter().zip(&self.basis[u]).map(|(a, c)| a * c).sum();
            }
        }
        Some(
            self.order
                .iter()
                .map(|&(v, u)| {
                    let c: f64 = (0..b).map(|y| self.basis[v][y] * rows[y * cols + u]).sum();
                    (c / QUANT_STEP).round() as i32
                })
                .collect(),
        )
    }
}

fn feature_distance(a: &[i32], b: &[i32]) -> f64 {
    let sq: i64 = a.iter().zip(b).map(|(x, y)| ((x - y) as i64).pow(2)).sum();
    (sq as f64).sqrt() * QUANT_STEP
}

/// Detects plain-translation copy-move duplication by block matching.
///
/// Returns the surviving block pairs and a map holding, per pixel, the
/// highest normalized offset support among the matched blocks covering it
/// (grayscale-opened with radius 1).
pub fn detect_block(img: &Image, p: &BlockParams) -> Result<(MatchSet, ScoreMap), FfdError> {
    p.validate()?;
    let (w, h) = img.dims();
    let b = p.block_size;
    if w.min(h) < 2 * b {
        return Err(FfdError::ImageTooSmall {
            width: w,
            height: h,
            min: 2 * b,
        });
    }
    let gray: Vec<f64> = img.to_gray_f32().into_iter().map(f64::from).collect();
    let stride = p.effective_stride(w, h);
    let extractor = FeatureExtractor::new(b, p.dct_coeffs);

    let positions: Vec<(usize, usize)> = (0..=h - b)
        .step_by(stride)
        .flat_map(|y| (0..=w - b).step_by(stride).map(move |x| (x, y)))
        .collect();
    let mut features: Vec<BlockFeature> = positions
        .par_iter()
        .filter_map(|&(x, y)| {
            extractor
                .extract(&gray, w, x, y, p.variance_floor)
                .map(|q| BlockFeature { x, y, q })
        })
        .collect();
    features.par_sort_unstable_by(|a, b| a.q.cmp(&b.q).then((a.y, a.x).cmp(&(b.y, b.x))));

    // Candidate pairs, keyed by canonical offset.
    let candidates: Vec<((i64, i64), Origin, Origin)> = (0..features.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = &features[i];
            let end = (i + 1 + NEIGHBOR_WINDOW).min(features.len());
            let features = &features;
            (i + 1..end).filter_map(move |j| {
                let c = &features[j];
                if feature_distance(&a.q, &c.q) > p.feature_tolerance {
                    return None;
                }
                let dx = c.x as i64 - a.x as i64;
                let dy = c.y as i64 - a.y as i64;
                if (((dx * dx + dy * dy) as f64).sqrt()) < p.min_offset {
                    return None;
                }
                let (offset, swapped) = canonical_offset(dx, dy);
                let (src, dst) = if swapped {
                    ((c.x, c.y), (a.x, a.y))
                } else {
                    ((a.x, a.y), (c.x, c.y))
                };
                Some((offset, src, dst))
            })
        })
        .collect();

    let mut histogram: BTreeMap<(i64, i64), Vec<(Origin, Origin)>> = BTreeMap::new();
    for (offset, src, dst) in candidates {
        histogram.entry(offset).or_default().push((src, dst));
    }
    histogram.retain(|_, v| v.len() >= p.min_support);

    let mut pairs = Vec::new();
    for (cluster, (offset, mut members)) in histogram.into_iter().enumerate() {
        members.sort_unstable();
        members.dedup();
        let support = members.len();
        for (src, dst) in members {
            pairs.push(MatchPair {
                source: BoundingBox::square(src.0, src.1, b),
                target: BoundingBox::square(dst.0, dst.1, b),
                offset,
                support,
                cluster,
            });
        }
    }

    let map = support_map(w, h, b, &pairs);
    Ok((
        MatchSet {
            method: DetectorKind::Block,
            pairs,
        },
        map,
    ))
}

fn support_map(w: usize, h: usize, b: usize, pairs: &[MatchPair]) -> ScoreMap {
    let max_support = pairs.iter().map(|p| p.support).max().unwrap_or(0);
    if max_support == 0 {
        return ScoreMap::zeros(w, h);
    }
    let mut data = vec![0.0f64; w * h];
    for p in pairs {
        let v = p.support as f64 / max_support as f64;
        for bx in [&p.source, &p.target] {
            for y in bx.y0..bx.y0 + b {
                for px in &mut data[y * w + bx.x0..y * w + bx.x0 + b] {
                    *px = px.max(v);
                }
            }
        }
    }
    ScoreMap::new(w, h, data).expect("scores in [0, 1]").opened(1)
}
