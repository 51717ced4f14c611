//! Raster types shared by every stage: 8-bit images, real-valued score maps,
//! binary masks and bounding boxes, plus I/O, binarization, morphology and
//! hint-overlay rendering.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::ffd::MatchSet;

#[derive(thiserror::Error, Debug)]
pub enum ImagingError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to decode image: {0}")]
    Decode(String),
    #[error("failed to encode image: {0}")]
    Encode(String),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
}

pub type Result<T> = std::result::Result<T, ImagingError>;

/// Row-major 8-bit raster with one (gray) or three (RGB) interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidRaster(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(ImagingError::InvalidRaster(format!(
                "expected 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(ImagingError::InvalidRaster(format!(
                "buffer holds {} bytes, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// An image filled with a single value in every channel.
    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_gray_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, 1, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// ITU-R BT.601 luma as reals; gray images are returned as-is.
    pub fn to_gray_f32(&self) -> Vec<f32> {
        match self.channels {
            1 => self.data.iter().map(|&v| v as f32).collect(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
                .collect(),
        }
    }

    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .to_gray_f32()
            .into_iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    pub(crate) fn from_dynamic(img: DynamicImage) -> Result<Self> {
        // Anything carrying color becomes RGB8, everything else L8. The
        // conversions in `image` rescale 16-bit and float sources to 8-bit.
        let has_color = img.color().has_color();
        let (w, h) = (img.width() as usize, img.height() as usize);
        if has_color {
            Image::new(w, h, 3, img.into_rgb8().into_raw())
        } else {
            Image::new(w, h, 1, img.into_luma8().into_raw())
        }
    }

    fn to_dynamic(&self) -> DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            1 => DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, self.data.clone()).expect("valid raster")),
            _ => DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, self.data.clone()).expect("valid raster")),
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        self.to_dynamic()
            .write_to(&mut out, ImageFormat::Png)
            .map_err(|e| ImagingError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|e| ImagingError::Decode(e.to_string()))?;
        Self::from_dynamic(img)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.encode_png()?;
        write_file(path.as_ref(), &bytes)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| ImagingError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Decodes a PNG or JPEG file into an 8-bit gray or RGB [`Image`].
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ImagingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match image::guess_format(&bytes) {
        Ok(ImageFormat::Png) | Ok(ImageFormat::Jpeg) => {}
        Ok(other) => {
            return Err(ImagingError::Decode(format!(
                "unsupported format {other:?} in {}",
                path.display()
            )))
        }
        Err(e) => return Err(ImagingError::Decode(format!("{}: {e}", path.display()))),
    }
    Image::decode(&bytes)
}

/// Row-major per-pixel scores in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScoreMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(ImagingError::InvalidRaster(format!(
                "score buffer holds {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImagingError::InvalidRaster(format!("score {bad} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Complement `1 - s` at every pixel.
    pub fn inverted(&self) -> ScoreMap {
        ScoreMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| 1.0 - v).collect(),
        }
    }

    /// Treats a binary mask as a two-level score map.
    pub fn from_mask(mask: &BinaryMask) -> ScoreMap {
        ScoreMap {
            width: mask.width,
            height: mask.height,
            data: mask.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Grayscale opening with a `(2r+1)²` square: min filter then max filter.
    pub fn opened(&self, radius: usize) -> ScoreMap {
        if radius == 0 {
            return self.clone();
        }
        let eroded = window_filter(&self.data, self.width, self.height, radius, f64::min, f64::INFINITY);
        let data = window_filter(&eroded, self.width, self.height, radius, f64::max, f64::NEG_INFINITY);
        ScoreMap {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// 16-bit grayscale PNG with scores scaled to `[0, 65535]`.
    pub fn encode_png16(&self) -> Result<Vec<u8>> {
        let raw: Vec<u16> = self.data.iter().map(|v| (v * 65535.0).round() as u16).collect();
        let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(self.width as u32, self.height as u32, raw)
            .expect("valid raster");
        let mut out = Cursor::new(Vec::new());
        DynamicImage::ImageLuma16(buf)
            .write_to(&mut out, ImageFormat::Png)
            .map_err(|e| ImagingError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }

    /// Inverse of [`ScoreMap::encode_png16`]; 8-bit inputs are scaled by 1/255.
    pub fn decode_png16(bytes: &[u8]) -> Result<ScoreMap> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| ImagingError::Decode(e.to_string()))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = match img {
            DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
            other => other
                .into_luma16()
                .into_raw()
                .into_iter()
                .map(|v| v as f64 / 65535.0)
                .collect(),
        };
        ScoreMap::new(w, h, data)
    }

    /// 8-bit grayscale rendering for inspection.
    pub fn to_image(&self) -> Image {
        let data = self.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        Image::new(self.width, self.height, 1, data).expect("valid raster")
    }
}

/// Per-pixel boolean raster; `true` marks tampered pixels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(ImagingError::InvalidRaster(format!(
                "mask buffer holds {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_box(width: usize, height: usize, bbox: &BoundingBox) -> Self {
        let mut m = Self::empty(width, height);
        for y in bbox.y0..bbox.y1.min(height) {
            for x in bbox.x0..bbox.x1.min(width) {
                m.data[y * width + x] = true;
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!(self.dims(), other.dims());
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
        }
    }

    /// Centroid `(x, y)` of the true pixels, if any.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (i, _) in self.data.iter().enumerate().filter(|(_, &b)| b) {
            sx += (i % self.width) as f64;
            sy += (i / self.width) as f64;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Tight bounding box of the true pixels.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bounds = Some(match bounds {
                        None => (x, y, x + 1, y + 1),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                    });
                }
            }
        }
        bounds.map(|(x0, y0, x1, y1)| BoundingBox { x0, y0, x1, y1 })
    }

    /// 8-bit grayscale PNG, 0 = authentic and 255 = tampered.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        self.to_image().encode_png()
    }

    pub fn to_image(&self) -> Image {
        let data = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        Image::new(self.width, self.height, 1, data).expect("valid raster")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_image().save_png(path)
    }

    /// Reads a ground-truth mask; any channel value above 127 marks a tampered pixel.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = load_image(path)?;
        Ok(Self::from_image(&img))
    }

    pub fn from_image(img: &Image) -> Self {
        let gray = img.to_gray();
        BinaryMask {
            width: gray.width,
            height: gray.height,
            data: gray.data.iter().map(|&v| v > 127).collect(),
        }
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    /// Validates the box against an image of the given size.
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize, width: usize, height: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 || x1 > width || y1 > height {
            return Err(ImagingError::InvalidRaster(format!(
                "box ({x0},{y0})-({x1},{y1}) invalid for {width}x{height} image"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn square(x0: usize, y0: usize, side: usize) -> Self {
        Self {
            x0,
            y0,
            x1: x0 + side,
            y1: y0 + side,
        }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 + self.x1) as f64 / 2.0 - 0.5,
            (self.y0 + self.y1) as f64 / 2.0 - 0.5,
        )
    }

    /// Maps normalized `[0, 1]` corner coordinates onto pixel space.
    pub fn from_normalized(coords: [f64; 4], width: usize, height: usize) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(ImagingError::InvalidRaster("non-finite box coordinate".into()));
        }
        let sx = |v: f64| (v.clamp(0.0, 1.0) * width as f64).round() as usize;
        let sy = |v: f64| (v.clamp(0.0, 1.0) * height as f64).round() as usize;
        let (x0, x1) = (sx(coords[0].min(coords[2])), sx(coords[0].max(coords[2])));
        let (y0, y1) = (sy(coords[1].min(coords[3])), sy(coords[1].max(coords[3])));
        Self::new(x0, y0, x1, y1, width, height)
    }
}

/// Pixel true iff its score is at least `threshold`.
pub fn binarize(map: &ScoreMap, threshold: f64) -> BinaryMask {
    BinaryMask {
        width: map.width,
        height: map.height,
        data: map.data.iter().map(|&s| s >= threshold).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphOp {
    Dilate,
    Erode,
    Open,
    Close,
}

/// Binary morphology with a `(2r+1)²` square structuring element.
///
/// Out-of-image neighbours are ignored, so erosion does not eat into
/// foreground touching the border and closing stays extensive.
pub fn morphology(mask: &BinaryMask, op: MorphOp, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    match op {
        MorphOp::Dilate => dilate(mask, radius),
        MorphOp::Erode => erode(mask, radius),
        MorphOp::Open => dilate(&erode(mask, radius), radius),
        MorphOp::Close => erode(&dilate(mask, radius), radius),
    }
}

fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let rows = bool_pass(&mask.data, mask.width, mask.height, radius, true, true);
    let data = bool_pass(&rows, mask.width, mask.height, radius, false, true);
    BinaryMask {
        width: mask.width,
        height: mask.height,
        data,
    }
}

fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let rows = bool_pass(&mask.data, mask.width, mask.height, radius, true, false);
    let data = bool_pass(&rows, mask.width, mask.height, radius, false, false);
    BinaryMask {
        width: mask.width,
        height: mask.height,
        data,
    }
}

/// One separable pass of a square max (`any`) or min (`all`) filter,
/// counted with prefix sums so cost is independent of the radius.
fn bool_pass(data: &[bool], w: usize, h: usize, r: usize, horizontal: bool, any: bool) -> Vec<bool> {
    let mut out = vec![false; data.len()];
    let (outer, inner) = if horizontal { (h, w) } else { (w, h) };
    let idx = |o: usize, i: usize| if horizontal { o * w + i } else { i * w + o };
    let mut prefix = vec![0usize; inner + 1];
    for o in 0..outer {
        for i in 0..inner {
            prefix[i + 1] = prefix[i] + data[idx(o, i)] as usize;
        }
        for i in 0..inner {
            let lo = i.saturating_sub(r);
            let hi = (i + r + 1).min(inner);
            let ones = prefix[hi] - prefix[lo];
            out[idx(o, i)] = if any { ones > 0 } else { ones == hi - lo };
        }
    }
    out
}

fn window_filter(data: &[f64], w: usize, h: usize, r: usize, f: fn(f64, f64) -> f64, init: f64) -> Vec<f64> {
    let mut tmp = vec![init; data.len()];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r + 1).min(w));
            tmp[y * w + x] = data[y * w + lo..y * w + hi].iter().copied().fold(init, f);
        }
    }
    let mut out = vec![init; data.len()];
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            out[y * w + x] = (lo..hi).map(|yy| tmp[yy * w + x]).fold(init, f);
        }
    }
    out
}

pub const SOURCE_TINT: [u8; 3] = [255, 0, 0];
pub const TARGET_TINT: [u8; 3] = [0, 96, 255];
pub const CONNECTOR_COLOR: [u8; 3] = [255, 255, 0];

fn blend(px: &mut [u8], tint: [u8; 3]) {
    for c in 0..3 {
        px[c] = (px[c] as u16 + tint[c] as u16).div_ceil(2) as u8;
    }
}

/// Tints every pixel where `region` is true at 50% alpha.
pub fn tint_region(base: &Image, region: &BinaryMask, tint: [u8; 3]) -> Image {
    let mut out = base.to_rgb();
    for (i, px) in out.data.chunks_exact_mut(3).enumerate() {
        if region.data[i] {
            blend(px, tint);
        }
    }
    out
}

/// Renders duplication evidence onto a copy of `base`.
///
/// For every match cluster the union of its source boxes is tinted red,
/// the union of its target boxes blue (both at 50% alpha), and a yellow
/// line joins the two centroids. With no matches the base is returned as-is.
pub fn render_hint_overlay(base: &Image, matches: &MatchSet) -> Image {
    if matches.pairs.is_empty() {
        return base.clone();
    }
    let (w, h) = base.dims();
    let mut source_all = BinaryMask::empty(w, h);
    let mut target_all = BinaryMask::empty(w, h);
    let mut connectors = Vec::new();
    for cluster in matches.clusters() {
        let mut src = BinaryMask::empty(w, h);
        let mut dst = BinaryMask::empty(w, h);
        for p in cluster {
            src = src.union(&BinaryMask::from_box(w, h, &p.source));
            dst = dst.union(&BinaryMask::from_box(w, h, &p.target));
        }
        if let (Some(a), Some(b)) = (src.centroid(), dst.centroid()) {
            connectors.push((a, b));
        }
        source_all = source_all.union(&src);
        target_all = target_all.union(&dst);
    }
    let mut out = tint_region(base, &source_all, SOURCE_TINT);
    out = tint_region(&out, &target_all, TARGET_TINT);
    for (a, b) in connectors {
        draw_line(&mut out, a, b, CONNECTOR_COLOR);
    }
    out
}

/// Pixels visited by [`draw_line`] between two points (Bresenham).
pub fn line_pixels(a: (f64, f64), b: (f64, f64)) -> Vec<(i64, i64)> {
    let (mut x0, mut y0) = (a.0.round() as i64, a.1.round() as i64);
    let (x1, y1) = (b.0.round() as i64, b.1.round() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut pts = Vec::new();
    loop {
        pts.push((x0, y0));
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
    pts
}

fn draw_line(img: &mut Image, a: (f64, f64), b: (f64, f64), color: [u8; 3]) {
    let (w, h) = img.dims();
    for (x, y) in line_pixels(a, b) {
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            let i = (y as usize * w + x as usize) * 3;
            img.data[i..i + 3].copy_from_slice(&color);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ffd::{DetectorKind, MatchPair};

    fn mask_from(w: usize, h: usize, rows: &[&str]) -> BinaryMask {
        let data = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
        BinaryMask::new(w, h, data).unwrap()
    }

    #[test]
    fn rejects_inconsistent_buffers() {
        assert!(Image::new(2, 2, 1, vec![0; 3]).is_err());
        assert!(Image::new(0, 2, 1, vec![]).is_err());
        assert!(Image::new(1, 1, 2, vec![0; 2]).is_err());
        assert!(ScoreMap::new(1, 1, vec![1.5]).is_err());
    }

    #[test]
    fn constant_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.png");
        Image::filled(2, 2, 1, 255).unwrap().save_png(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img, Image::new(2, 2, 1, vec![255; 4]).unwrap());
    }

    #[test]
    fn sixteen_bit_png_is_rescaled() {
        let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(2, 1, vec![0u16, 65535]).unwrap();
        let mut bytes = Cursor::new(Vec::new());
        DynamicImage::ImageLuma16(buf)
            .write_to(&mut bytes, ImageFormat::Png)
            .unwrap();
        let img = Image::decode(&bytes.into_inner()).unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.data(), &[0, 255]);
    }

    #[test]
    fn missing_and_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_image(dir.path().join("nope.png")),
            Err(ImagingError::Io { .. })
        ));
        let bad = dir.path().join("bad.png");
        std::fs::write(&bad, b"definitely not an image").unwrap();
        assert!(matches!(load_image(&bad), Err(ImagingError::Decode(_))));
        let gif = dir.path().join("x.gif");
        std::fs::write(&gif, b"GIF89a\x01\x00\x01\x00\x00\x00\x00;").unwrap();
        assert!(matches!(load_image(&gif), Err(ImagingError::Decode(_))));
    }

    #[test]
    fn binarize_examples() {
        let zeros = ScoreMap::zeros(3, 3);
        assert_eq!(binarize(&zeros, 0.5).count(), 0);
        let halves = ScoreMap::new(2, 2, vec![0.5; 4]).unwrap();
        assert_eq!(binarize(&halves, 0.5).count(), 4);
        let m = ScoreMap::new(3, 1, vec![0.04, 0.05, 0.7]).unwrap();
        assert_eq!(binarize(&m, 0.05).data(), &[false, true, true]);
    }

    #[test]
    fn radius_zero_is_identity() {
        let m = mask_from(3, 2, &["#.#", ".#."]);
        for op in [MorphOp::Dilate, MorphOp::Erode, MorphOp::Open, MorphOp::Close] {
            assert_eq!(morphology(&m, op, 0), m);
        }
    }

    #[test]
    fn dilate_single_pixel() {
        let mut m = BinaryMask::empty(5, 5);
        m.set(2, 2, true);
        let d = morphology(&m, MorphOp::Dilate, 1);
        assert_eq!(d.count(), 9);
        assert!(d.get(1, 1) && d.get(3, 3) && !d.get(0, 0));

        let mut corner = BinaryMask::empty(5, 5);
        corner.set(0, 0, true);
        assert_eq!(morphology(&corner, MorphOp::Dilate, 1).count(), 4);
    }

    #[test]
    fn closing_fills_hole() {
        let m = mask_from(
            9,
            9,
            &[
                ".........",
                ".........",
                "..#####..",
                "..#####..",
                "..##.##..",
                "..#####..",
                "..#####..",
                ".........",
                ".........",
            ],
        );
        let c = morphology(&m, MorphOp::Close, 1);
        assert_eq!(c, BinaryMask::from_box(9, 9, &BoundingBox::square(2, 2, 5)));
    }

    #[test]
    fn closing_is_extensive_at_borders() {
        let full = BinaryMask::from_box(
            6,
            4,
            &BoundingBox {
                x0: 0,
                y0: 0,
                x1: 6,
                y1: 4,
            },
        );
        assert_eq!(morphology(&full, MorphOp::Close, 2), full);
        assert_eq!(morphology(&full, MorphOp::Erode, 2), full);
    }

    #[test]
    fn box_from_normalized_coordinates() {
        let b = BoundingBox::from_normalized([0.25, 0.25, 0.75, 0.75], 100, 100).unwrap();
        assert_eq!(
            b,
            BoundingBox {
                x0: 25,
                y0: 25,
                x1: 75,
                y1: 75
            }
        );
        assert!(BoundingBox::from_normalized([0.5, 0.5, 0.5, 0.9], 100, 100).is_err());
    }

    #[test]
    fn score_map_png16_round_trip() {
        let m = ScoreMap::new(3, 1, vec![0.0, 0.05, 1.0]).unwrap();
        let back = ScoreMap::decode_png16(&m.encode_png16().unwrap()).unwrap();
        for (a, b) in m.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0);
        }
    }

    #[test]
    fn overlay_of_empty_match_set_is_identity() {
        let base = Image::from_gray_fn(8, 8, |x, y| (x * 8 + y) as u8).unwrap();
        let empty = MatchSet::empty(DetectorKind::Block);
        assert_eq!(render_hint_overlay(&base, &empty), base);
    }

    #[test]
    fn overlay_is_local() {
        let base = Image::from_gray_fn(40, 20, |x, y| (x * 3 + y * 5) as u8).unwrap();
        let source = BoundingBox::square(2, 2, 6);
        let target = BoundingBox::square(30, 10, 6);
        let set = MatchSet {
            method: DetectorKind::Block,
            pairs: vec![MatchPair {
                source,
                target,
                offset: (28, 8),
                support: 1,
                cluster: 0,
            }],
        };
        let out = render_hint_overlay(&base, &set);
        assert_eq!(out.dims(), base.dims());
        let rgb = base.to_rgb();
        let line: Vec<_> = line_pixels(source.center(), target.center());
        let mut changed_src = 0;
        let mut changed_dst = 0;
        for y in 0..20 {
            for x in 0..40 {
                let on_line = line.contains(&(x as i64, y as i64));
                if out.pixel(x, y) != rgb.pixel(x, y) {
                    assert!(source.contains(x, y) || target.contains(x, y) || on_line);
                    if source.contains(x, y) && !on_line {
                        changed_src += 1;
                    }
                    if target.contains(x, y) && !on_line {
                        changed_dst += 1;
                    }
                }
            }
        }
        assert!(changed_src > 0 && changed_dst > 0);
        // Two distinguishable tints.
        assert_ne!(out.pixel(2, 7), out.pixel(35, 15));
    }
}
