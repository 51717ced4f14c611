use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::manifest::{Manifest, ManifestRecord};
use super::run::{judge_report, run, ForensicReport, ReportSummary, Services};
use super::PipelineError;
use crate::imaging::{load_image, BinaryMask, Image};
use crate::metrics::{self, aggregate, EvalSummary, MetricsError, SampleResult, SampleStatus};
use crate::mllm::{Explanation, Judgement};

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// When set, a fresh run directory is created under it holding the
    /// config, per-sample artifacts, `results.jsonl` and the summary.
    pub output_root: Option<PathBuf>,
}

/// Per-sample line of `results.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    #[serde(flatten)]
    pub result: SampleResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judgement: Option<Judgement>,
    /// Stage that failed, for errored samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<super::run::Stage>,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub summary: EvalSummary,
    /// In manifest order.
    pub records: Vec<SampleRecord>,
    pub run_dir: Option<PathBuf>,
}

impl Evaluation {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }

    /// Writes `config.toml`, `results.jsonl`, `summary.json` and `summary.txt` into `dir`.
    pub fn save(&self, dir: &Path, cfg: &PipelineConfig) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        write_outputs(dir, cfg, self)
    }
}

/// `<root>/run-<digest>`, or the first free `run-<digest>.<n>`.
pub fn create_run_dir(root: &Path, digest: &str) -> Result<PathBuf, PipelineError> {
    std::fs::create_dir_all(root).map_err(|e| PipelineError::io(root, e))?;
    let base = format!("run-{digest}");
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}.{n}") };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(PipelineError::io(&dir, e)),
        }
    }
    unreachable!("unbounded search for a free run directory")
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn base_result(r: &ManifestRecord) -> SampleResult {
    SampleResult {
        id: r.id.clone(),
        dataset: r.dataset.clone(),
        label: r.label,
        status: SampleStatus::Ok,
        detection_score: None,
        iou: None,
        f1: None,
        pixel_auc: None,
        binary_pixel_auc: false,
        rubric: None,
        unjudged: false,
    }
}

fn failed(r: &ManifestRecord, msg: String) -> SampleRecord {
    log::warn!("sample {} failed: {msg}", r.id);
    SampleRecord {
        result: SampleResult::failed(&r.id, &r.dataset, r.label, msg),
        report: None,
        judgement: None,
        failed_stage: None,
    }
}

fn load_gt(manifest: &Manifest, r: &ManifestRecord, dims: (usize, usize)) -> Result<Option<BinaryMask>, String> {
    let Some(path) = manifest.mask_path(r) else {
        return Ok(None);
    };
    let gt = BinaryMask::load(&path).map_err(|e| format!("ground-truth mask: {e}"))?;
    if gt.dims() != dims {
        return Err(format!("ground-truth mask is {:?} but image is {:?}", gt.dims(), dims));
    }
    Ok(Some(gt))
}

fn evaluate_one(
    manifest: &Manifest,
    r: &ManifestRecord,
    cfg: &PipelineConfig,
    services: &Services,
    sample_dir: Option<PathBuf>,
) -> SampleRecord {
    let img = match load_image(manifest.image_path(r)) {
        Ok(i) => Arc::new(i),
        Err(e) => return failed(r, format!("image: {e}")),
    };
    let gt = match load_gt(manifest, r, img.dims()) {
        Ok(g) => g,
        Err(e) => return failed(r, e),
    };
    let report = match run(&img, cfg, services) {
        Ok(rep) => rep,
        Err(f) => {
            let mut rec = failed(r, f.to_string());
            rec.failed_stage = Some(f.stage);
            return rec;
        }
    };
    let mut result = base_result(r);
    result.detection_score = Some(report.detection_score);
    if let (1, Some(gt)) = (r.label, &gt) {
        match localization(&report, gt) {
            Ok((iou, f1, pauc)) => {
                result.iou = Some(iou);
                result.f1 = Some(f1);
                result.pixel_auc = pauc;
            }
            Err(e) => return failed(r, format!("metrics: {e}")),
        }
    }
    let judgement = match (r.label, &gt) {
        (1, Some(gt)) => judge_into(&mut result, &report.explanation, &img, gt, cfg, services),
        _ => None,
    };
    if let Some(dir) = sample_dir {
        if let Err(e) = report.write_artifacts(&dir) {
            log::warn!("sample {}: could not write artifacts: {e}", r.id);
        }
    }
    SampleRecord {
        result,
        report: Some(report.summary()),
        judgement,
        failed_stage: None,
    }
}

fn localization(report: &ForensicReport, gt: &BinaryMask) -> Result<(f64, f64, Option<f64>), MetricsError> {
    let iou = metrics::iou(&report.mask, gt)?;
    let f1 = metrics::f1(&report.mask, gt)?;
    let pauc = match metrics::pixel_auc(&report.probability, gt) {
        Ok(v) => Some(v),
        Err(MetricsError::DegenerateLabels) => None,
        Err(e) => return Err(e),
    };
    Ok((iou, f1, pauc))
}

fn judge_into(
    result: &mut SampleResult,
    exp: &Explanation,
    img: &Arc<Image>,
    gt: &BinaryMask,
    cfg: &PipelineConfig,
    services: &Services,
) -> Option<Judgement> {
    match judge_report(exp, img, gt, cfg, services)? {
        Ok(j) => {
            result.rubric = Some(j.scores.clone());
            Some(j)
        }
        Err(e) => {
            log::warn!("sample {} left unjudged: {e}", result.id);
            result.unjudged = true;
            None
        }
    }
}

fn degradation_tag(manifest: &Manifest) -> Option<String> {
    let mut tags = manifest.records.iter().map(|r| r.degradation.as_ref().map(|d| d.tag()));
    let first = tags.next()??;
    tags.all(|t| t.as_deref() == Some(first.as_str()))
        .then_some(first)
        .or(Some("mixed".into()))
}

fn summarize(manifest: &Manifest, records: &[SampleRecord]) -> EvalSummary {
    let results: Vec<SampleResult> = records.iter().map(|r| r.result.clone()).collect();
    let mut summary = aggregate(&results);
    summary.degradation = degradation_tag(manifest);
    summary
}

fn write_outputs(dir: &Path, cfg: &PipelineConfig, eval: &Evaluation) -> Result<(), PipelineError> {
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| PipelineError::io(&p, e))
    };
    write("config.toml", cfg.to_toml())?;
    let mut lines = String::new();
    for r in &eval.records {
        lines.push_str(&serde_json::to_string(r).expect("record serializes"));
        lines.push('\n');
    }
    write("results.jsonl", lines)?;
    write("summary.json", eval.summary_json())?;
    write("summary.txt", eval.summary.to_table())
}

/// Runs every manifest sample with at most `cfg.workers` in flight and
/// aggregates the metrics. Per-sample failures are recorded, never fatal.
pub fn evaluate_dataset(
    manifest: &Manifest,
    cfg: &PipelineConfig,
    services: &Services,
    opts: &EvalOptions,
) -> Result<Evaluation, PipelineError> {
    cfg.validate()?;
    manifest.validate()?;
    let run_dir = opts
        .output_root
        .as_deref()
        .map(|root| create_run_dir(root, &cfg.digest()))
        .transpose()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let records: Vec<SampleRecord> = pool.install(|| {
        manifest
            .records
            .par_iter()
            .map(|r| {
                let dir = run_dir.as_ref().map(|d| d.join("samples").join(sanitize(&r.id)));
                evaluate_one(manifest, r, cfg, services, dir)
            })
            .collect()
    });
    let eval = Evaluation {
        summary: summarize(manifest, &records),
        records,
        run_dir,
    };
    if let Some(dir) = &eval.run_dir {
        write_outputs(dir, cfg, &eval)?;
    }
    Ok(eval)
}

/// Reads a `results.jsonl` written by [`evaluate_dataset`].
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>, PipelineError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Manifest(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Scores the explanations of earlier results with the configured judge and
/// re-aggregates. Samples without an explanation or ground truth are left
/// as they were.
pub fn judge_records(
    manifest: &Manifest,
    records: &[SampleRecord],
    cfg: &PipelineConfig,
    services: &Services,
) -> Result<Evaluation, PipelineError> {
    if services.judge.is_none() {
        return Err(PipelineError::Config("no judge backend configured".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let judged: Vec<SampleRecord> = pool.install(|| {
        records
            .par_iter()
            .map(|rec| {
                let mut rec = rec.clone();
                let (Some(entry), Some(report)) = (
                    manifest.records.iter().find(|m| m.id == rec.result.id),
                    rec.report.clone(),
                ) else {
                    return rec;
                };
                if entry.label != 1 || !rec.result.is_ok() {
                    return rec;
                }
                let img = match load_image(manifest.image_path(entry)) {
                    Ok(i) => Arc::new(i),
                    Err(e) => {
                        log::warn!("{}: {e}", entry.id);
                        rec.result.unjudged = true;
                        return rec;
                    }
                };
                match load_gt(manifest, entry, img.dims()) {
                    Ok(Some(gt)) => {
                        rec.result.unjudged = false;
                        rec.judgement = judge_into(&mut rec.result, &report.explanation, &img, &gt, cfg, services);
                    }
                    Ok(None) => {}
                    Err(e) => {
                        log::warn!("{}: {e}", entry.id);
                        rec.result.unjudged = true;
                    }
                }
                rec
            })
            .collect()
    });
    Ok(Evaluation {
        summary: summarize(manifest, &judged),
        records: judged,
        run_dir: None,
    })
}
