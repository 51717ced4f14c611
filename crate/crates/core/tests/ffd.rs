use tamperscope::ffd::{
    detect_block, detect_keypoint, detect_noise, generate_hint, harris_keypoints, BlockParams, DetectorKind,
    DetectorParams, KeypointParams, NoiseParams,
};
use tamperscope::imaging::{binarize, BinaryMask, BoundingBox, Image, SOURCE_TINT, TARGET_TINT};
use tamperscope::metrics::iou;
use tamperscope::synth::{self, CopyMoveFixture};

fn seed42_fixture() -> CopyMoveFixture {
    CopyMoveFixture::plant(&synth::texture(42, 256, 256), (32, 32), (160, 96), 64)
}

fn mirror(img: &Image) -> Image {
    let (w, h) = img.dims();
    let c = img.channels();
    let mut data = Vec::with_capacity(img.data().len());
    for y in 0..h {
        for x in (0..w).rev() {
            data.extend_from_slice(img.pixel(x, y));
        }
    }
    Image::new(w, h, c, data).unwrap()
}

/// Centroid of the pixels that differ from `base` and lean towards `tint`.
fn tinted_centroid(out: &Image, base: &Image, tint: [u8; 3]) -> Option<(f64, f64)> {
    let (w, h) = base.dims();
    let rgb = base.to_rgb();
    let mut mask = BinaryMask::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            let (o, b) = (out.pixel(x, y), rgb.pixel(x, y));
            if o == b {
                continue;
            }
            // A 50% blend moves every channel halfway to the tint.
            let expected: Vec<u8> = (0..3)
                .map(|c| (b[c] as u16 + tint[c] as u16).div_ceil(2) as u8)
                .collect();
            if o == expected.as_slice() {
                mask.set(x, y, true);
            }
        }
    }
    mask.centroid()
}

fn box_centroid(b: &BoundingBox) -> (f64, f64) {
    b.center()
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

#[test]
fn block_recovers_seed42_forgery() {
    let f = seed42_fixture();
    let (set, map) = detect_block(&f.image, &BlockParams::default()).unwrap();
    assert_eq!(set.dominant_offset(), Some((128, 64)));
    let score = iou(&binarize(&map, 0.5), &f.gt_mask).unwrap();
    assert!(score >= 0.5, "iou {score}");
    for p in &set.pairs {
        assert!(p.distance() >= BlockParams::default().min_offset);
        assert_eq!(
            p.offset,
            (
                p.target.x0 as i64 - p.source.x0 as i64,
                p.target.y0 as i64 - p.source.y0 as i64
            )
        );
        assert!(p.support >= 1);
    }
}

#[test]
fn block_hint_tints_planted_regions() {
    let f = seed42_fixture();
    let hint = generate_hint(&f.image, DetectorKind::Block, &DetectorParams::default()).unwrap();
    assert_eq!(hint.image.dims(), f.image.dims());
    assert_eq!(hint.region_map.dims(), f.image.dims());
    let src = tinted_centroid(&hint.image, &f.image, SOURCE_TINT).unwrap();
    let dst = tinted_centroid(&hint.image, &f.image, TARGET_TINT).unwrap();
    assert!(dist(src, box_centroid(&f.source)) <= 8.0, "{src:?}");
    assert!(dist(dst, box_centroid(&f.target)) <= 8.0, "{dst:?}");
}

#[test]
fn block_is_deterministic_and_mirror_equivariant() {
    let f = seed42_fixture();
    let p = BlockParams::default();
    let (a_set, a_map) = detect_block(&f.image, &p).unwrap();
    let (b_set, b_map) = detect_block(&f.image, &p).unwrap();
    assert_eq!(a_set, b_set);
    assert_eq!(a_map, b_map);

    let (_, m_map) = detect_block(&mirror(&f.image), &p).unwrap();
    let (w, h) = a_map.dims();
    for y in 0..h {
        for x in 0..w {
            assert_eq!(a_map.get(x, y), m_map.get(w - 1 - x, y), "({x},{y})");
        }
    }
}

#[test]
fn block_on_rotated_copy_is_not_required_to_detect() {
    // Plain translation only: a 90° rotated paste is a documented non-capability.
    let base = synth::texture(42, 256, 256);
    let mut img = base.clone();
    for y in 0..64 {
        for x in 0..64 {
            let v = base.pixel(32 + y, 32 + 63 - x)[0];
            img.data_mut()[(96 + y) * 256 + 160 + x] = v;
        }
    }
    let (set, map) = detect_block(&img, &BlockParams::default()).unwrap();
    assert_eq!(map.dims(), (256, 256));
    assert!(set.pairs.iter().all(|p| p.distance() >= 32.0));
}

fn seed7_fixture(offset: (usize, usize)) -> CopyMoveFixture {
    CopyMoveFixture::plant(
        &synth::texture(7, 256, 256),
        (40, 60),
        (40 + offset.0, 60 + offset.1),
        80,
    )
}

#[test]
fn keypoint_recovers_seed7_duplication() {
    let f = seed7_fixture((96, 40));
    let p = KeypointParams::default();
    let (set, map) = detect_keypoint(&f.image, &p).unwrap();
    assert!(!set.is_empty());

    // Mean offset of the dominant cluster.
    let clusters = set.clusters();
    let best = clusters.iter().max_by_key(|c| c.len()).unwrap();
    let n = best.len() as f64;
    let mx = best.iter().map(|p| p.offset.0 as f64).sum::<f64>() / n;
    let my = best.iter().map(|p| p.offset.1 as f64).sum::<f64>() / n;
    assert!(dist((mx, my), (96.0, 40.0)) <= 2.0, "({mx},{my})");

    // Ground truth: corners whose whole descriptor patch lies inside the source patch.
    let inner = BoundingBox {
        x0: f.source.x0 + 9,
        y0: f.source.y0 + 9,
        x1: f.source.x1 - 9,
        y1: f.source.y1 - 9,
    };
    let planted: Vec<_> = harris_keypoints(&f.image, &p)
        .into_iter()
        .filter(|k| inner.contains(k.x, k.y))
        .collect();
    assert!(planted.len() >= 5, "only {} planted keypoints", planted.len());
    let matched = planted
        .iter()
        .filter(|k| {
            set.pairs
                .iter()
                .any(|pr| pr.source.x0 + 8 == k.x && pr.source.y0 + 8 == k.y)
        })
        .count();
    assert!(
        matched as f64 >= 0.8 * planted.len() as f64,
        "{matched}/{} planted keypoints matched",
        planted.len()
    );
    assert!(map.get(f.source.x0 + 40, f.source.y0 + 40) > 0.0 || map.max() == 1.0);
}

#[test]
fn keypoint_respects_minimum_offset() {
    let f = seed7_fixture((10, 0));
    let (set, _) = detect_keypoint(&f.image, &KeypointParams::default()).unwrap();
    assert!(set.is_empty(), "{} pairs", set.pairs.len());
}

#[test]
fn noise_on_iid_image_is_clean() {
    let img = synth::uniform_noise(3, 256, 256);
    let map = detect_noise(&img, &NoiseParams::default()).unwrap();
    assert!(map.is_zero());
}

#[test]
fn noise_flags_smoothed_paste() {
    let mut img = synth::uniform_noise(11, 256, 256);
    let src = img.clone();
    let (x0, y0, side) = (80usize, 64usize, 96usize);
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            let mut acc = 0u32;
            for dy in 0..5 {
                for dx in 0..5 {
                    acc += src.pixel(x + dx - 2, y + dy - 2)[0] as u32;
                }
            }
            img.data_mut()[y * 256 + x] = (acc as f64 / 25.0).round() as u8;
        }
    }
    let map = detect_noise(&img, &NoiseParams::default()).unwrap();
    // Every tile fully inside the pasted region.
    for ty in (y0 + 8) / 8..(y0 + side) / 8 - 1 {
        for tx in (x0 + 8) / 8..(x0 + side) / 8 - 1 {
            assert!(map.get(tx * 8 + 4, ty * 8 + 4) > 0.0, "tile ({tx},{ty})");
        }
    }
    assert_eq!(map.get(10, 10), 0.0);
}

#[test]
fn noise_hint_tints_only_flagged_pixels() {
    let img = synth::uniform_noise(3, 128, 128);
    let hint = generate_hint(&img, DetectorKind::Noise, &DetectorParams::default()).unwrap();
    assert!(hint.matches.is_empty());
    if hint.region_map.is_zero() {
        assert_eq!(hint.image, img);
    }
}
