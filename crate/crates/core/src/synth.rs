//! Seeded synthetic fixtures with recorded ground truth.
//!
//! Every generator here is a pure function of its seed, so fixtures double
//! as oracles: a planted copy-move forgery knows its own source, target and
//! mask before any detector runs.

use crate::imaging::{BinaryMask, BoundingBox, Image};

/// SplitMix64 finalizer; also the mixing step of the counter-based noise
/// generator in [`crate::degrade`].
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Small sequential generator for fixture construction.
#[derive(Clone, Debug)]
pub struct SplitMix {
    state: u64,
}

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `lo..hi`.
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() % (hi - lo) as u64) as usize
    }
}

fn value_noise(rng: &mut SplitMix, w: usize, h: usize, cell: usize) -> Vec<f64> {
    let gw = w / cell + 2;
    let gh = h / cell + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.next_f64()).collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let fy = y as f64 / cell as f64;
        let (iy, ty) = (fy as usize, fy.fract());
        for x in 0..w {
            let fx = x as f64 / cell as f64;
            let (ix, tx) = (fx as usize, fx.fract());
            let l = |i: usize, j: usize| lattice[j * gw + i];
            let top = l(ix, iy) * (1.0 - tx) + l(ix + 1, iy) * tx;
            let bottom = l(ix, iy + 1) * (1.0 - tx) + l(ix + 1, iy + 1) * tx;
            out[y * w + x] = top * (1.0 - ty) + bottom * ty;
        }
    }
    out
}

/// Multi-scale value-noise texture, gray, with strong local gradients.
pub fn texture(seed: u64, width: usize, height: usize) -> Image {
    let mut rng = SplitMix::new(seed);
    let coarse = value_noise(&mut rng, width, height, 32);
    let mid = value_noise(&mut rng, width, height, 7);
    let fine = value_noise(&mut rng, width, height, 3);
    let data = (0..width * height)
        .map(|i| {
            let v = 0.35 * coarse[i] + 0.4 * mid[i] + 0.25 * fine[i];
            (20.0 + v * 215.0).round() as u8
        })
        .collect();
    Image::new(width, height, 1, data).expect("valid raster")
}

/// Independent uniform noise over `0..=255`, one channel.
pub fn uniform_noise(seed: u64, width: usize, height: usize) -> Image {
    let mut rng = SplitMix::new(seed);
    let data = (0..width * height).map(|_| (rng.next_u64() >> 56) as u8).collect();
    Image::new(width, height, 1, data).expect("valid raster")
}

/// Smooth RGB scene (gradients, soft discs, mild grain) resembling a photograph.
pub fn photographic(seed: u64, width: usize, height: usize) -> Image {
    let mut rng = SplitMix::new(seed);
    let grain = value_noise(&mut rng, width, height, 2);
    let shading = value_noise(&mut rng, width, height, 64);
    let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..6)
        .map(|_| {
            (
                rng.next_f64() * width as f64,
                rng.next_f64() * height as f64,
                10.0 + rng.next_f64() * width as f64 / 5.0,
                [rng.next_f64() * 255.0, rng.next_f64() * 255.0, rng.next_f64() * 255.0],
            )
        })
        .collect();
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let gx = x as f64 / width as f64;
            let gy = y as f64 / height as f64;
            let mut px = [60.0 + 120.0 * gx, 80.0 + 100.0 * gy, 150.0 - 60.0 * gx * gy];
            for &(cx, cy, r, col) in &discs {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                let a = ((r - d) / 4.0).clamp(0.0, 1.0);
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - a) + col[c] * a;
                }
            }
            for p in px {
                let v = p * (0.8 + 0.4 * shading[i]) + (grain[i] - 0.5) * 12.0;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::new(width, height, 3, data).expect("valid raster")
}

/// A plain-translation copy-move forgery with its ground truth.
#[derive(Clone, Debug)]
pub struct CopyMoveFixture {
    pub image: Image,
    pub source: BoundingBox,
    pub target: BoundingBox,
    /// Target origin minus source origin.
    pub offset: (i64, i64),
    /// Source and target regions.
    pub gt_mask: BinaryMask,
}

impl CopyMoveFixture {
    /// Copies the `side × side` patch at `src` onto `dst` in `base`.
    pub fn plant(base: &Image, src: (usize, usize), dst: (usize, usize), side: usize) -> Self {
        let (w, h) = base.dims();
        let c = base.channels();
        let source = BoundingBox::new(src.0, src.1, src.0 + side, src.1 + side, w, h).expect("source inside image");
        let target = BoundingBox::new(dst.0, dst.1, dst.0 + side, dst.1 + side, w, h).expect("target inside image");
        let mut image = base.clone();
        for y in 0..side {
            let from = ((src.1 + y) * w + src.0) * c;
            let to = ((dst.1 + y) * w + dst.0) * c;
            let row = base.data()[from..from + side * c].to_vec();
            image.data_mut()[to..to + side * c].copy_from_slice(&row);
        }
        let gt_mask = BinaryMask::from_box(w, h, &source).union(&BinaryMask::from_box(w, h, &target));
        Self {
            image,
            source,
            target,
            offset: (dst.0 as i64 - src.0 as i64, dst.1 as i64 - src.1 as i64),
            gt_mask,
        }
    }

    /// Member of the 256×256 translation-forgery family: textured background,
    /// square patch with side in `48..=80`, source and target disjoint.
    pub fn random(seed: u64) -> Self {
        const SIZE: usize = 256;
        let base = texture(seed, SIZE, SIZE);
        let mut rng = SplitMix::new(seed ^ 0xC0FF_EE00_D15E_A5E5);
        let side = rng.range(48, 81);
        loop {
            let src = (rng.range(0, SIZE - side + 1), rng.range(0, SIZE - side + 1));
            let dst = (rng.range(0, SIZE - side + 1), rng.range(0, SIZE - side + 1));
            let disjoint = src.0.abs_diff(dst.0) >= side || src.1.abs_diff(dst.1) >= side;
            if disjoint {
                return Self::plant(&base, src, dst, side);
            }
        }
    }

    /// The target region only: what a localizer should flag as inserted content.
    pub fn target_mask(&self) -> BinaryMask {
        let (w, h) = self.image.dims();
        BinaryMask::from_box(w, h, &self.target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(texture(5, 64, 48), texture(5, 64, 48));
        assert_ne!(texture(5, 64, 48), texture(6, 64, 48));
        assert_eq!(photographic(1, 32, 32), photographic(1, 32, 32));
    }

    #[test]
    fn planted_copy_is_exact() {
        let f = CopyMoveFixture::plant(&texture(42, 256, 256), (32, 32), (160, 96), 64);
        assert_eq!(f.offset, (128, 64));
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(f.image.pixel(32 + x, 32 + y), f.image.pixel(160 + x, 96 + y));
            }
        }
        assert_eq!(f.gt_mask.count(), 2 * 64 * 64);
    }

    #[test]
    fn random_fixtures_are_disjoint() {
        for seed in 0..50 {
            let f = CopyMoveFixture::random(seed);
            assert!(f.source.width() >= 48 && f.source.width() <= 80);
            assert_eq!(f.gt_mask.count(), 2 * f.source.area());
        }
    }
}
