//! Keypoint matching: Harris corners, gradient-orientation histogram
//! descriptors, a ratio test against non-local neighbours, and clustering of
//! accepted matches by displacement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{canonical_offset, DetectorKind, FfdError, MatchPair, MatchSet};
use crate::imaging::{self, BinaryMask, BoundingBox, Image, MorphOp, ScoreMap};

const PATCH: usize = 16;
const CELLS: usize = 4;
const BINS: usize = 8;
pub const DESCRIPTOR_LEN: usize = CELLS * CELLS * BINS;
/// Keypoints closer than this to the border have no complete descriptor patch.
const MARGIN: usize = PATCH / 2 + 1;
const NMS_RADIUS: usize = 2;
const WINDOW_SIGMA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeypointParams {
    pub harris_k: f64,
    /// Fraction of the strongest corner response below which corners are dropped.
    pub response_floor: f64,
    pub ratio_test: f64,
    pub min_offset: f64,
    pub cluster_radius: f64,
    pub min_cluster: usize,
    pub region_dilate: usize,
    /// Strongest corners kept before matching.
    pub max_keypoints: usize,
}

impl Default for KeypointParams {
    fn default() -> Self {
        Self {
            harris_k: 0.04,
            response_floor: 1e-4,
            ratio_test: 0.75,
            min_offset: 24.0,
            cluster_radius: 8.0,
            min_cluster: 4,
            region_dilate: 12,
            max_keypoints: 4000,
        }
    }
}

impl KeypointParams {
    pub fn validate(&self) -> Result<(), FfdError> {
        if !(self.ratio_test > 0.0 && self.ratio_test < 1.0) {
            return Err(FfdError::InvalidParams(format!(
                "ratio_test {} must be in (0, 1)",
                self.ratio_test
            )));
        }
        if self.cluster_radius.is_nan() || self.cluster_radius <= 0.0 {
            return Err(FfdError::InvalidParams("cluster_radius must be positive".into()));
        }
        if [self.response_floor, self.min_offset]
            .iter()
            .any(|v| v.is_nan() || *v < 0.0)
        {
            return Err(FfdError::InvalidParams("thresholds must be non-negative".into()));
        }
        if self.min_cluster == 0 || self.max_keypoints == 0 {
            return Err(FfdError::InvalidParams(
                "min_cluster and max_keypoints must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Keypoint {
    pub x: usize,
    pub y: usize,
    pub response: f64,
    pub descriptor: [f32; DESCRIPTOR_LEN],
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn at(data: &[f64], w: usize, h: usize, x: i64, y: i64) -> f64 {
    let x = x.clamp(0, w as i64 - 1) as usize;
    let y = y.clamp(0, h as i64 - 1) as usize;
    data[y * w + x]
}

fn separable_blur(data: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * at(data, w, h, x as i64 + i as i64 - r, y as i64))
                .sum();
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * at(&tmp, w, h, x as i64, y as i64 + i as i64 - r))
                .sum();
        }
    }
    out
}

fn harris_response(gray: &[f64], w: usize, h: usize, k: f64) -> Vec<f64> {
    let mut ixx = vec![0.0; gray.len()];
    let mut iyy = vec![0.0; gray.len()];
    let mut ixy = vec![0.0; gray.len()];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let p = |dx: i64, dy: i64| at(gray, w, h, x + dx, y + dy);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let i = y as usize * w + x as usize;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let kernel = gaussian_kernel(WINDOW_SIGMA);
    let sxx = separable_blur(&ixx, w, h, &kernel);
    let syy = separable_blur(&iyy, w, h, &kernel);
    let sxy = separable_blur(&ixy, w, h, &kernel);
    (0..gray.len())
        .map(|i| {
            let det = sxx[i] * syy[i] - sxy[i] * sxy[i];
            let tr = sxx[i] + syy[i];
            det - k * tr * tr
        })
        .collect()
}

fn describe(gray: &[f64], w: usize, cx: usize, cy: usize) -> Option<[f32; DESCRIPTOR_LEN]> {
    let mut hist = [0f64; DESCRIPTOR_LEN];
    let (x0, y0) = (cx - PATCH / 2, cy - PATCH / 2);
    for py in 0..PATCH {
        for px in 0..PATCH {
            let (x, y) = (x0 + px, y0 + py);
            let gx = gray[y * w + x + 1] - gray[y * w + x - 1];
            let gy = gray[(y + 1) * w + x] - gray[(y - 1) * w + x];
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).rem_euclid(2.0 * std::f64::consts::PI);
            let bin = ((angle / (2.0 * std::f64::consts::PI) * BINS as f64) as usize).min(BINS - 1);
            let cell = (py / (PATCH / CELLS)) * CELLS + px / (PATCH / CELLS);
            hist[cell * BINS + bin] += mag;
        }
    }
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    let mut out = [0f32; DESCRIPTOR_LEN];
    for (o, v) in out.iter_mut().zip(hist) {
        *o = (v / norm) as f32;
    }
    Some(out)
}

/// Harris corners after non-maximum suppression, with L2-normalized
/// 128-bin gradient-orientation descriptors over a 16×16 patch.
///
/// Output is sorted by descending response, ties broken by raster order.
pub fn harris_keypoints(img: &Image, p: &KeypointParams) -> Vec<Keypoint> {
    let (w, h) = img.dims();
    if w <= 2 * MARGIN || h <= 2 * MARGIN {
        return Vec::new();
    }
    let gray: Vec<f64> = img.to_gray_f32().into_iter().map(f64::from).collect();
    let response = harris_response(&gray, w, h, p.harris_k);
    let max = response.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let floor = p.response_floor * max;
    let r = NMS_RADIUS as i64;

    let mut corners: Vec<(usize, usize, f64)> = (MARGIN..h - MARGIN)
        .into_par_iter()
        .flat_map_iter(|y| {
            let response = &response;
            (MARGIN..w - MARGIN).filter_map(move |x| {
                let v = response[y * w + x];
                if v <= floor {
                    return None;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let n = at(response, w, h, x as i64 + dx, y as i64 + dy);
                        // Earlier raster neighbours win ties.
                        let earlier = dy < 0 || (dy == 0 && dx < 0);
                        if n > v || (earlier && n == v) {
                            return None;
                        }
                    }
                }
                Some((x, y, v))
            })
        })
        .collect();
    corners.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.1, a.0).cmp(&(b.1, b.0))));
    corners.truncate(p.max_keypoints);

    corners
        .into_par_iter()
        .filter_map(|(x, y, response)| {
            describe(&gray, w, x, y).map(|descriptor| Keypoint {
                x,
                y,
                response,
                descriptor,
            })
        })
        .collect()
}

fn descriptor_distance(a: &[f32; DESCRIPTOR_LEN], b: &[f32; DESCRIPTOR_LEN]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

struct Cluster {
    sum: (f64, f64),
    members: Vec<(usize, usize, (i64, i64))>,
}

impl Cluster {
    fn center(&self) -> (f64, f64) {
        let n = self.members.len() as f64;
        (self.sum.0 / n, self.sum.1 / n)
    }
}

fn patch_box(kp: &Keypoint) -> BoundingBox {
    BoundingBox::square(kp.x - PATCH / 2, kp.y - PATCH / 2, PATCH)
}

/// Detects copy-move duplication by matching keypoints within one image.
///
/// A keypoint's nearest and second-nearest descriptor neighbours are taken
/// only among keypoints at least `min_offset` pixels away; the match is kept
/// when their distance ratio passes `ratio_test`. Accepted matches are
/// clustered by displacement; clusters smaller than `min_cluster` are noise.
pub fn detect_keypoint(img: &Image, p: &KeypointParams) -> Result<(MatchSet, ScoreMap), FfdError> {
    p.validate()?;
    let (w, h) = img.dims();
    let kps = harris_keypoints(img, p);
    let min_sq = p.min_offset * p.min_offset;

    let accepted: Vec<(usize, usize)> = (0..kps.len())
        .into_par_iter()
        .filter_map(|i| {
            let a = &kps[i];
            let (mut best, mut second) = ((f64::INFINITY, usize::MAX), f64::INFINITY);
            for (j, b) in kps.iter().enumerate() {
                let dx = b.x as f64 - a.x as f64;
                let dy = b.y as f64 - a.y as f64;
                if dx * dx + dy * dy < min_sq {
                    continue;
                }
                let d = descriptor_distance(&a.descriptor, &b.descriptor);
                if d < best.0 {
                    second = best.0;
                    best = (d, j);
                } else if d < second {
                    second = d;
                }
            }
            if !second.is_finite() || second == 0.0 || best.0 / second > p.ratio_test {
                return None;
            }
            Some((i.min(best.1), i.max(best.1)))
        })
        .collect();
    let mut accepted = accepted;
    accepted.sort_unstable();
    accepted.dedup();

    let mut matches: Vec<(usize, usize, (i64, i64))> = accepted
        .into_iter()
        .map(|(i, j)| {
            let dx = kps[j].x as i64 - kps[i].x as i64;
            let dy = kps[j].y as i64 - kps[i].y as i64;
            let (offset, swapped) = canonical_offset(dx, dy);
            if swapped {
                (j, i, offset)
            } else {
                (i, j, offset)
            }
        })
        .collect();
    matches.sort_by_key(|&(s, t, o)| (o, kps[s].y, kps[s].x, t));

    let mut clusters: Vec<Cluster> = Vec::new();
    for m in matches {
        let o = (m.2 .0 as f64, m.2 .1 as f64);
        let slot = clusters.iter_mut().find(|c| {
            let (cx, cy) = c.center();
            ((cx - o.0).powi(2) + (cy - o.1).powi(2)).sqrt() <= p.cluster_radius
        });
        match slot {
            Some(c) => {
                c.sum.0 += o.0;
                c.sum.1 += o.1;
                c.members.push(m);
            }
            None => clusters.push(Cluster {
                sum: o,
                members: vec![m],
            }),
        }
    }
    clusters.retain(|c| c.members.len() >= p.min_cluster);
    clusters.sort_by(|a, b| {
        let (ax, ay) = a.center();
        let (bx, by) = b.center();
        ax.total_cmp(&bx).then(ay.total_cmp(&by))
    });

    let mut pairs = Vec::new();
    let mut matched = BinaryMask::empty(w, h);
    for (cluster, c) in clusters.iter().enumerate() {
        let support = c.members.len();
        for &(s, t, offset) in &c.members {
            matched.set(kps[s].x, kps[s].y, true);
            matched.set(kps[t].x, kps[t].y, true);
            pairs.push(MatchPair {
                source: patch_box(&kps[s]),
                target: patch_box(&kps[t]),
                offset,
                support,
                cluster,
            });
        }
    }
    let region = imaging::morphology(&matched, MorphOp::Dilate, p.region_dilate);
    Ok((
        MatchSet {
            method: DetectorKind::Keypoint,
            pairs,
        },
        ScoreMap::from_mask(&region),
    ))
}
