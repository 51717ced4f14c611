//! Deterministic JPEG recompression and additive Gaussian noise.

use std::fmt;
use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::ExtendedColorType;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::imaging::{Image, ImagingError};
use crate::synth::mix64;

#[derive(thiserror::Error, Debug)]
pub enum DegradeError {
    #[error("JPEG quality {0} outside 1..=100")]
    InvalidQuality(u8),
    #[error("noise variance {0} must be finite and non-negative")]
    InvalidVariance(f64),
    #[error("JPEG encoding failed: {0}")]
    Encode(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Degradation {
    Jpeg {
        quality: u8,
    },
    /// `variance` is in squared 8-bit intensity units.
    Gaussian {
        variance: f64,
        seed: u64,
    },
}

impl Degradation {
    /// The four robustness settings: JPEG quality 70 and 80, Gaussian
    /// variance 5 and 10.
    pub fn presets() -> Vec<Degradation> {
        vec![
            Degradation::Jpeg { quality: 70 },
            Degradation::Jpeg { quality: 80 },
            Degradation::Gaussian { variance: 5.0, seed: 1 },
            Degradation::Gaussian {
                variance: 10.0,
                seed: 1,
            },
        ]
    }

    pub fn validate(&self) -> Result<(), DegradeError> {
        match *self {
            Degradation::Jpeg { quality } if !(1..=100).contains(&quality) => {
                Err(DegradeError::InvalidQuality(quality))
            }
            Degradation::Gaussian { variance, .. } if !(variance.is_finite() && variance >= 0.0) => {
                Err(DegradeError::InvalidVariance(variance))
            }
            _ => Ok(()),
        }
    }

    /// Short descriptor used in file names and summaries, e.g. `jpeg-q70`.
    pub fn tag(&self) -> String {
        match self {
            Degradation::Jpeg { quality } => format!("jpeg-q{quality}"),
            Degradation::Gaussian { variance, seed } => format!("gauss-v{variance}-s{seed}"),
        }
    }

    pub fn apply(&self, img: &Image) -> Result<Image, DegradeError> {
        self.validate()?;
        match *self {
            Degradation::Jpeg { quality } => jpeg_compress(img, quality),
            Degradation::Gaussian { variance, seed } => add_gaussian_noise(img, variance, seed),
        }
    }

    /// Same degradation with a seed derived from `key`, so every sample of a
    /// dataset draws independent noise.
    pub fn keyed(&self, key: &str) -> Degradation {
        match *self {
            Degradation::Gaussian { variance, seed } => Degradation::Gaussian {
                variance,
                seed: key.bytes().fold(mix64(seed), |h, b| mix64(h ^ b as u64)),
            },
            ref other => other.clone(),
        }
    }
}

impl fmt::Display for Degradation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

/// Baseline JPEG bytes at `quality`.
pub fn jpeg_encode(img: &Image, quality: u8) -> Result<Vec<u8>, DegradeError> {
    if !(1..=100).contains(&quality) {
        return Err(DegradeError::InvalidQuality(quality));
    }
    let (w, h) = img.dims();
    let color = if img.channels() == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    let mut bytes = Vec::new();
    JpegEncoder::new_with_quality(Cursor::new(&mut bytes), quality)
        .encode(img.data(), w as u32, h as u32, color)
        .map_err(|e| DegradeError::Encode(e.to_string()))?;
    Ok(bytes)
}

/// Baseline JPEG round trip at `quality`, decoded back to the input's
/// channel count.
pub fn jpeg_compress(img: &Image, quality: u8) -> Result<Image, DegradeError> {
    let decoded = Image::decode(&jpeg_encode(img, quality)?)?;
    Ok(if img.channels() == 1 {
        decoded.to_gray()
    } else {
        decoded.to_rgb()
    })
}

/// Standard normal draw for one `(seed, pixel, channel)` counter.
///
/// Two 53-bit uniforms come from `mix64` of the counter mixed with the seed;
/// Box–Muller turns them into one normal deviate. No state is carried
/// between draws, so the noise field is independent of traversal order.
pub fn normal_at(seed: u64, pixel: u64, channel: u64) -> f64 {
    let base = mix64(seed ^ mix64(pixel.wrapping_mul(4).wrapping_add(channel)));
    let u1 = ((mix64(base) >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
    let u2 = (mix64(base ^ 0xD1B5_4A32_D192_ED03) >> 11) as f64 / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Adds i.i.d. `N(0, variance)` noise to every channel, rounds and clamps.
pub fn add_gaussian_noise(img: &Image, variance: f64, seed: u64) -> Result<Image, DegradeError> {
    if !(variance.is_finite() && variance >= 0.0) {
        return Err(DegradeError::InvalidVariance(variance));
    }
    if variance == 0.0 {
        return Ok(img.clone());
    }
    let sigma = variance.sqrt();
    let (w, _) = img.dims();
    let c = img.channels();
    let mut out = img.clone();
    out.data_mut().par_chunks_mut(w * c).enumerate().for_each(|(y, row)| {
        for (i, v) in row.iter_mut().enumerate() {
            let pixel = (y * w + i / c) as u64;
            let n = normal_at(seed, pixel, (i % c) as u64);
            *v = (*v as f64 + sigma * n).round().clamp(0.0, 255.0) as u8;
        }
    });
    Ok(out)
}
