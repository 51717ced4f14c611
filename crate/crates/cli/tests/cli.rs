use std::path::Path;
use std::process::{Command, Output};

use tamperscope::imaging::{BinaryMask, BoundingBox};
use tamperscope::synth::{self, CopyMoveFixture};

fn tamperscope(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tamperscope"))
        .args(args)
        .current_dir(cwd)
        .env_remove("OPENAI_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

/// Dataset with one copy-move forgery and one authentic image, plus a mock
/// directory scripting every backend request for both.
fn workspace(root: &Path) {
    let data = root.join("data");
    std::fs::create_dir_all(data.join("images")).unwrap();
    std::fs::create_dir_all(data.join("masks")).unwrap();
    std::fs::create_dir_all(root.join("mock")).unwrap();
    let f = CopyMoveFixture::plant(&synth::texture(42, 256, 256), (32, 32), (160, 96), 64);
    f.image.save_png(data.join("images/forged.png")).unwrap();
    f.gt_mask.save_png(data.join("masks/forged.png")).unwrap();
    f.image.save_png(root.join("mock/forged.png")).unwrap();
    let clean = synth::photographic(3, 256, 256);
    clean.save_png(data.join("images/clean.png")).unwrap();
    clean.save_png(root.join("mock/clean.png")).unwrap();

    let scenario = serde_json::json!({
        "model": "scripted",
        "rules": [
            {"purpose": "classify", "image": "forged.png", "reply": "{\"type\": \"copy-move\"}"},
            {"purpose": "analyze", "image": "forged.png",
             "reply": "{\"explanation\": \"a patch is repeated\", \"description\": \"the lower right patch\", \"verdict\": \"tampered\", \"confidence\": 0.9}"},
            {"purpose": "locate", "image": "forged.png", "reply": "{\"box\": [0.625, 0.375, 0.875, 0.625]}"},
            {"purpose": "classify", "image": "clean.png", "reply": "{\"type\": \"others\"}"},
            {"purpose": "analyze", "image": "clean.png",
             "reply": "{\"explanation\": \"consistent\", \"description\": \"\", \"verdict\": \"authentic\", \"confidence\": 0.1}"},
            {"purpose": "judge", "reply": "{\"accuracy\": 4, \"details\": 3, \"hallucination\": 5, \"readability\": 4}"}
        ]
    });
    std::fs::write(root.join("mock/scenario.json"), scenario.to_string()).unwrap();
}

#[test]
fn manifest_then_evaluate_then_judge() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    workspace(root);

    let o = tamperscope(&["manifest", "data", "--convention", "paired-dirs"], root);
    assert_ok(&o);
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["id"], "forged");
    assert_eq!(lines[1]["label"], 1);

    assert_ok(&tamperscope(&["manifest", "data", "--output", "manifest.jsonl"], root));
    let o = tamperscope(&["--mock", "mock", "evaluate", "manifest.jsonl", "--out", "runs"], root);
    assert_ok(&o);
    assert!(stdout(&o).contains("Overall"));
    let run_dir = std::fs::read_dir(root.join("runs"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["overall"]["image_auc"], 1.0);
    assert!(run_dir.join("samples/forged/hint.png").exists());

    let results = run_dir.join("results.jsonl");
    let o = tamperscope(
        &[
            "--mock",
            "mock",
            "judge",
            "manifest.jsonl",
            results.to_str().unwrap(),
            "--out",
            "judged",
        ],
        root,
    );
    assert_ok(&o);
    let judged = std::fs::read_to_string(root.join("judged/results.jsonl")).unwrap();
    assert!(judged.contains("\"hallucination\":5.0"), "{judged}");
}

#[test]
fn analyze_writes_report_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    workspace(root);
    let o = tamperscope(
        &["--mock", "mock", "analyze", "data/images/forged.png", "--out", "out"],
        root,
    );
    assert_ok(&o);
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["tamper_type"], "copy-move");
    assert_eq!(report["hint_used"], true);
    assert_eq!(report["seg_backend"], "fallback");
    for f in ["report.json", "mask.png", "probability.png", "hint.png"] {
        assert!(root.join("out").join(f).exists(), "{f}");
    }
    let mask = BinaryMask::load(root.join("out/mask.png")).unwrap();
    let target = BinaryMask::from_box(256, 256, &BoundingBox::new(160, 96, 224, 160, 256, 256).unwrap());
    assert!(tamperscope::metrics::iou(&mask, &target).unwrap() > 0.5);

    let o = tamperscope(&["--mock", "mock", "classify", "data/images/clean.png"], root);
    assert_ok(&o);
    assert_eq!(stdout(&o).trim(), "others");
}

#[test]
fn analyze_failure_records_stage() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    workspace(root);
    std::fs::create_dir_all(root.join("empty-mock")).unwrap();
    let o = tamperscope(
        &[
            "--mock",
            "empty-mock",
            "analyze",
            "data/images/clean.png",
            "--out",
            "out",
        ],
        root,
    );
    assert_eq!(o.status.code(), Some(1));
    let failure: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("out/failure.json")).unwrap()).unwrap();
    assert_eq!(failure["stage"], "classify");
}

#[test]
fn ffd_outputs_matches_and_maps() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    workspace(root);
    let o = tamperscope(
        &["ffd", "data/images/forged.png", "--method", "block", "--out", "ffd"],
        root,
    );
    assert_ok(&o);
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["method"], "block");
    assert_eq!(summary["dominant_offset"], serde_json::json!([128, 64]));
    let matches: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("ffd/matches.json")).unwrap()).unwrap();
    assert!(!matches["pairs"].as_array().unwrap().is_empty());
    assert!(root.join("ffd/map.png").exists() && root.join("ffd/hint.png").exists());
}

#[test]
fn degrade_derives_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    workspace(root);
    assert_ok(&tamperscope(&["manifest", "data", "--output", "manifest.jsonl"], root));

    assert_ok(&tamperscope(
        &["degrade", "manifest.jsonl", "--kind", "jpeg", "--quality", "70"],
        root,
    ));
    let derived = std::fs::read_to_string(root.join("manifest.jpeg-q70.jsonl")).unwrap();
    assert_eq!(derived.lines().count(), 2);
    assert!(derived.contains("\"degradation\":{\"kind\":\"jpeg\",\"quality\":70}"));
    assert!(root.join("data/images/forged.jpeg-q70.png").exists());

    let args = [
        "degrade",
        "manifest.jsonl",
        "--kind",
        "gaussian",
        "--variance",
        "5",
        "--seed",
        "1",
    ];
    assert_ok(&tamperscope(&args, root));
    assert!(root.join("manifest.gauss-v5-s1.jsonl").exists());
}

#[test]
fn usage_and_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    workspace(root);
    assert_ok(&tamperscope(&["manifest", "data", "--output", "manifest.jsonl"], root));
    let o = tamperscope(&["degrade", "manifest.jsonl", "--kind", "gaussian"], root);
    assert_eq!(o.status.code(), Some(2));
    let o = tamperscope(&["degrade", "manifest.jsonl", "--kind", "jpeg", "--quality", "0"], root);
    assert_eq!(o.status.code(), Some(1));

    std::fs::write(root.join("bad.toml"), "detection_threshold = 3.0\n").unwrap();
    let o = tamperscope(&["--config", "bad.toml", "ffd", "data/images/clean.png"], root);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("detection_threshold"));
}
