mod common;

use std::sync::Arc;
use std::time::Duration;

use base64::Engine as _;
use common::{dead_url, TestServer};
use serde_json::json;
use tamperscope::grounding::{
    fallback_segment, ground_and_segment, GroundingConfig, GroundingError, HttpSegmentService, SegBackend,
    SegmentService,
};
use tamperscope::imaging::{binarize, BinaryMask, BoundingBox, Image, ScoreMap};
use tamperscope::mllm::{Limiter, MockBackend, PromptLibrary, Purpose};

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

/// Probability ramp along x with values straddling the 0.05 threshold.
fn known_map(w: usize, h: usize) -> ScoreMap {
    let data = (0..w * h).map(|i| (i % w) as f64 / (w - 1) as f64 * 0.1).collect();
    ScoreMap::new(w, h, data).unwrap()
}

fn segment_server(map: ScoreMap) -> TestServer {
    let prob = b64(&map.encode_png16().unwrap());
    let mask = b64(&binarize(&map, 0.05).encode_png().unwrap());
    TestServer::start(move |req| match req.path.as_str() {
        "/segment" => (
            200,
            json!({
                "boxes": [
                    {"x0": 1, "y0": 1, "x1": 10, "y1": 10, "score": 0.4},
                    {"x0": 0, "y0": 0, "x1": 20, "y1": 12, "score": 0.9},
                    {"x0": 2, "y0": 2, "x1": 5, "y1": 5, "score": 0.1}
                ],
                "probability": prob,
                "mask": mask
            })
            .to_string(),
        ),
        "/health" => (
            200,
            json!({"status": "ok", "detector": "d", "segmenter": "s", "device": "cpu"}).to_string(),
        ),
        _ => (404, "{}".into()),
    })
}

fn locate_mock(reply: &'static str) -> MockBackend {
    MockBackend::from_fn("m", move |req| {
        assert_eq!(req.purpose, Purpose::Locate);
        Ok(reply.to_string())
    })
}

#[test]
fn remote_map_is_binarized_at_mask_threshold() {
    let (w, h) = (21, 12);
    let map = known_map(w, h);
    let server = segment_server(map.clone());
    let svc = HttpSegmentService::new(&server.url, Duration::from_secs(10), Limiter::new(2));
    let img = Arc::new(Image::filled(w, h, 3, 50).unwrap());
    let cfg = GroundingConfig::default();
    let mllm = MockBackend::unreachable();
    let seg = ground_and_segment(
        &img,
        "the left door",
        &cfg,
        Some(&svc),
        &mllm,
        &PromptLibrary::default(),
    )
    .unwrap();
    assert_eq!(seg.backend, SegBackend::Remote);
    // Round trip through the 16-bit transport: compare with the decoded map.
    let transported = ScoreMap::decode_png16(&map.encode_png16().unwrap()).unwrap();
    assert_eq!(seg.mask, binarize(&transported, 0.05));
    assert_eq!(seg.probability, transported);
    assert!(seg.mask.get(w - 1, 0) && !seg.mask.get(0, 0));
    // Below box_threshold dropped, the rest sorted by score.
    let scores: Vec<f64> = seg.boxes.iter().map(|b| b.score).collect();
    assert_eq!(scores, [0.9, 0.4]);
    assert!(mllm.requests().is_empty());

    let sent = server.requests()[0].json();
    assert_eq!(sent["query"], "the left door");
    assert_eq!(sent["mask_threshold"], 0.05);
    assert_eq!(sent["box_threshold"], 0.35);
    assert_eq!(sent["text_threshold"], 0.25);
    let png = base64::engine::general_purpose::STANDARD
        .decode(sent["image"].as_str().unwrap())
        .unwrap();
    assert_eq!(Image::decode(&png).unwrap(), *img);

    assert_eq!(svc.health().unwrap()["status"], "ok");
}

#[test]
fn remote_down_falls_back_to_elicited_box() {
    let svc = HttpSegmentService::new(dead_url(), Duration::from_secs(5), Limiter::new(1));
    let img = Arc::new(Image::filled(100, 100, 3, 10).unwrap());
    let mllm = locate_mock(r#"{"box": [0.25, 0.25, 0.75, 0.75]}"#);
    let seg = ground_and_segment(
        &img,
        "the red car",
        &GroundingConfig::default(),
        Some(&svc),
        &mllm,
        &PromptLibrary::default(),
    )
    .unwrap();
    assert_eq!(seg.backend, SegBackend::Fallback);
    let expected = BoundingBox::new(25, 25, 75, 75, 100, 100).unwrap();
    assert_eq!(seg.boxes[0].bbox, expected);
    assert_eq!(seg.mask, BinaryMask::from_box(100, 100, &expected));
    assert!(mllm.requests()[0].prompt.contains("the red car"));
}

#[test]
fn remote_error_status_triggers_fallback() {
    let server = TestServer::start(|_| (503, "{\"detail\": \"loading\"}".into()));
    let svc = HttpSegmentService::new(&server.url, Duration::from_secs(5), Limiter::new(1));
    let img = Arc::new(Image::filled(40, 40, 1, 10).unwrap());
    let mllm = locate_mock("[0, 0, 0.5, 0.5]");
    let seg = ground_and_segment(
        &img,
        "x",
        &GroundingConfig::default(),
        Some(&svc),
        &mllm,
        &PromptLibrary::default(),
    )
    .unwrap();
    assert_eq!(seg.backend, SegBackend::Fallback);
    assert!(svc.health().is_err());
}

#[test]
fn failure_modes() {
    let img = Arc::new(Image::filled(32, 32, 3, 0).unwrap());
    let lib = PromptLibrary::default();
    let mllm = locate_mock(r#"{"box": [0.1, 0.1, 0.2, 0.2]}"#);
    let cfg = GroundingConfig::default();
    assert_eq!(
        ground_and_segment(&img, "  ", &cfg, None, &mllm, &lib).unwrap_err(),
        GroundingError::EmptyDescription
    );
    let no_fallback = GroundingConfig {
        fallback: false,
        ..cfg.clone()
    };
    assert!(matches!(
        ground_and_segment(&img, "x", &no_fallback, None, &mllm, &lib),
        Err(GroundingError::Unavailable(_))
    ));
    assert!(matches!(
        ground_and_segment(&img, "x", &cfg, None, &MockBackend::unreachable(), &lib),
        Err(GroundingError::Unavailable(_))
    ));
    assert!(matches!(
        ground_and_segment(&img, "x", &cfg, None, &locate_mock("no idea"), &lib),
        Err(GroundingError::Unavailable(_))
    ));
}

/// Score of one pixel by direct definition: 1 − distance to the box mean
/// color over the largest possible distance, zero outside the box.
fn oracle_score(img: &Image, bbox: &BoundingBox, x: usize, y: usize) -> f64 {
    if !bbox.contains(x, y) {
        return 0.0;
    }
    let c = img.channels();
    let mut mean = vec![0.0; c];
    for yy in bbox.y0..bbox.y1 {
        for xx in bbox.x0..bbox.x1 {
            for (m, &v) in mean.iter_mut().zip(img.pixel(xx, yy)) {
                *m += v as f64 / bbox.area() as f64;
            }
        }
    }
    let d: f64 = (0..c)
        .map(|k| (img.pixel(x, y)[k] as f64 - mean[k]).powi(2))
        .sum::<f64>()
        .sqrt();
    (1.0 - d / (255.0 * (c as f64).sqrt())).max(0.0)
}

#[test]
fn two_tone_margin_scores_lower() {
    // Tone A fills columns 0..5, tone B the rest; the box covers A plus one B column.
    let img = Image::new(
        8,
        8,
        3,
        (0..64)
            .flat_map(|i| if i % 8 < 5 { [200, 30, 30] } else { [20, 40, 220] })
            .collect(),
    )
    .unwrap();
    let bbox = BoundingBox::new(0, 0, 6, 8, 8, 8).unwrap();
    let seg = fallback_segment(&img, &bbox, 0.05);
    for y in 0..8 {
        for x in 0..8 {
            assert!((seg.probability.get(x, y) - oracle_score(&img, &bbox, x, y)).abs() < 1e-12);
        }
    }
    let a = seg.probability.get(2, 3);
    let b = seg.probability.get(5, 3);
    assert!(b < a, "margin {b} vs interior {a}");
    assert_eq!(seg.probability.get(7, 3), 0.0);
}

#[test]
fn fallback_invariants() {
    let img = tamperscope::synth::photographic(3, 64, 48);
    let whole = BoundingBox::new(0, 0, 64, 48, 64, 48).unwrap();
    let seg = fallback_segment(&img, &whole, 0.05);
    assert!(seg.mask.count() >= binarize(&seg.probability, 0.05).count());
    assert_eq!(seg.mask.dims(), img.dims());
    assert_eq!(seg.probability.dims(), img.dims());

    let inner = BoundingBox::new(10, 5, 40, 30, 64, 48).unwrap();
    let seg = fallback_segment(&img, &inner, 0.05);
    for y in 0..48 {
        for x in 0..64 {
            if seg.mask.get(x, y) {
                assert!(inner.contains(x, y));
            }
        }
    }
    // Raising the threshold never adds pixels.
    let mut prev = usize::MAX;
    for t in [0.0, 0.05, 0.3, 0.6, 0.9, 1.0] {
        let n = binarize(&seg.probability, t).count();
        assert!(n <= prev);
        prev = n;
    }
}

struct Canned(ScoreMap);

impl SegmentService for Canned {
    fn id(&self) -> String {
        "canned".into()
    }
    fn segment(
        &self,
        _img: &Image,
        _query: &str,
        _cfg: &GroundingConfig,
    ) -> Result<tamperscope::grounding::RemoteSegmentation, GroundingError> {
        Ok(tamperscope::grounding::RemoteSegmentation {
            boxes: vec![],
            probability: self.0.clone(),
            mask: None,
        })
    }
}

#[test]
fn remote_result_respects_custom_threshold() {
    let map = known_map(11, 3);
    let img = Arc::new(Image::filled(11, 3, 1, 0).unwrap());
    let cfg = GroundingConfig {
        mask_threshold: 0.08,
        ..Default::default()
    };
    let seg = ground_and_segment(
        &img,
        "x",
        &cfg,
        Some(&Canned(map.clone())),
        &MockBackend::unreachable(),
        &PromptLibrary::default(),
    )
    .unwrap();
    assert_eq!(seg.mask, binarize(&map, 0.08));
}
