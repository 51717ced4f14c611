//! Intra-image noise inconsistency: tiles whose median-filter residual
//! spread deviates strongly from the rest of the image.

use serde::{Deserialize, Serialize};

use super::FfdError;
use crate::imaging::{Image, ScoreMap};

/// MAD to standard deviation under a normal model.
const MAD_SCALE: f64 = 1.4826;
/// `|z|` at which a flagged tile saturates to score 1.
const Z_SATURATION: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    pub tile: usize,
    pub z_threshold: f64,
    /// Minimum 4-connected flagged tiles for a region to be reported.
    pub min_region: usize,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            tile: 8,
            z_threshold: 2.5,
            min_region: 4,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<(), FfdError> {
        if self.tile < 2 {
            return Err(FfdError::InvalidParams(format!("tile {} < 2", self.tile)));
        }
        if self.z_threshold.is_nan() || self.z_threshold <= 0.0 {
            return Err(FfdError::InvalidParams("z_threshold must be positive".into()));
        }
        Ok(())
    }
}

fn median3(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; plane.len()];
    let mut win = [0.0f64; 9];
    for y in 0..h {
        for x in 0..w {
            let mut n = 0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    win[n] = plane[yy * w + xx];
                    n += 1;
                }
            }
            win.sort_unstable_by(f64::total_cmp);
            out[y * w + x] = win[4];
        }
    }
    out
}

/// `img − median3(img)` per channel, averaged over channels.
fn residual(img: &Image) -> Vec<f64> {
    let (w, h) = img.dims();
    let c = img.channels();
    let mut acc = vec![0.0; w * h];
    for ch in 0..c {
        let plane: Vec<f64> = img.data().iter().skip(ch).step_by(c).map(|&v| v as f64).collect();
        let med = median3(&plane, w, h);
        for (a, (p, m)) in acc.iter_mut().zip(plane.iter().zip(&med)) {
            *a += (p - m) / c as f64;
        }
    }
    acc
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Scores tiles whose residual standard deviation is a robust outlier.
///
/// The z-score of each tile is taken against the median and MAD of all tile
/// deviations. A tile scores `min(1, |z| / 5)` when `|z|` exceeds the
/// threshold and it belongs to a 4-connected group of at least `min_region`
/// such tiles. Pixels in the partial last row/column of tiles inherit the
/// nearest full tile. A zero MAD yields an all-zero map.
pub fn detect_noise(img: &Image, p: &NoiseParams) -> Result<ScoreMap, FfdError> {
    p.validate()?;
    let (w, h) = img.dims();
    if w.min(h) < 2 * p.tile {
        return Err(FfdError::ImageTooSmall {
            width: w,
            height: h,
            min: 2 * p.tile,
        });
    }
    let res = residual(img);
    let (nx, ny) = (w / p.tile, h / p.tile);
    let tile_of = |x: usize, y: usize| ((y / p.tile).min(ny - 1)) * nx + (x / p.tile).min(nx - 1);

    let mut sum = vec![0.0; nx * ny];
    let mut sq = vec![0.0; nx * ny];
    let mut count = vec![0usize; nx * ny];
    for y in 0..h {
        for x in 0..w {
            let t = tile_of(x, y);
            let v = res[y * w + x];
            sum[t] += v;
            sq[t] += v * v;
            count[t] += 1;
        }
    }
    let sd: Vec<f64> = (0..nx * ny)
        .map(|t| {
            let n = count[t] as f64;
            let mean = sum[t] / n;
            (sq[t] / n - mean * mean).max(0.0).sqrt()
        })
        .collect();

    let mut scratch = sd.clone();
    let med = median(&mut scratch);
    let mut dev: Vec<f64> = sd.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&mut dev);
    if mad == 0.0 {
        return Ok(ScoreMap::zeros(w, h));
    }
    let z: Vec<f64> = sd.iter().map(|v| (v - med) / (MAD_SCALE * mad)).collect();
    let flagged: Vec<bool> = z.iter().map(|v| v.abs() > p.z_threshold).collect();

    let mut keep = vec![false; nx * ny];
    let mut seen = vec![false; nx * ny];
    for start in 0..nx * ny {
        if !flagged[start] || seen[start] {
            continue;
        }
        let mut component = vec![start];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(t) = stack.pop() {
            let (tx, ty) = (t % nx, t / nx);
            let mut neighbors = Vec::with_capacity(4);
            if tx > 0 {
                neighbors.push(t - 1);
            }
            if tx + 1 < nx {
                neighbors.push(t + 1);
            }
            if ty > 0 {
                neighbors.push(t - nx);
            }
            if ty + 1 < ny {
                neighbors.push(t + nx);
            }
            for n in neighbors {
                if flagged[n] && !seen[n] {
                    seen[n] = true;
                    component.push(n);
                    stack.push(n);
                }
            }
        }
        if component.len() >= p.min_region {
            for t in component {
                keep[t] = true;
            }
        }
    }

    let tile_score: Vec<f64> = (0..nx * ny)
        .map(|t| {
            if keep[t] {
                (z[t].abs() / Z_SATURATION).min(1.0)
            } else {
                0.0
            }
        })
        .collect();
    let mut data = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            data[y * w + x] = tile_score[tile_of(x, y)];
        }
    }
    Ok(ScoreMap::new(w, h, data).expect("scores in [0, 1]"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_degenerate() {
        let img = Image::filled(64, 64, 3, 10).unwrap();
        assert!(detect_noise(&img, &NoiseParams::default()).unwrap().is_zero());
    }

    #[test]
    fn too_small() {
        let img = Image::filled(15, 64, 1, 10).unwrap();
        assert!(matches!(
            detect_noise(&img, &NoiseParams::default()),
            Err(FfdError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn residual_of_isolated_spike() {
        let mut data = vec![0u8; 25];
        data[12] = 90;
        let img = Image::new(5, 5, 1, data).unwrap();
        let r = residual(&img);
        assert_eq!(r[12], 90.0);
        assert_eq!(r.iter().filter(|&&v| v != 0.0).count(), 1);
    }
}
