//! Detection and localization metrics: rank-based AUC at image and pixel
//! level, IoU, F1, and per-dataset aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::imaging::{BinaryMask, ScoreMap};
use crate::mllm::RubricScores;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum MetricsError {
    #[error("AUC needs at least one positive and one negative label")]
    DegenerateLabels,
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    pub score: f64,
    /// 1 = tampered, 0 = authentic.
    pub label: u8,
}

impl ScoredSample {
    pub fn new(id: impl Into<String>, score: f64, label: u8) -> Self {
        Self {
            id: id.into(),
            score,
            label,
        }
    }
}

/// Twice the Mann–Whitney count: 2 per correctly ordered (positive, negative)
/// pair, 1 per tie. Input sorted ascending by score.
fn doubled_pair_count(sorted: &[(f64, bool)]) -> u128 {
    let mut neg_below: u128 = 0;
    let mut total: u128 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        total += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    total
}

/// Exact rank-based AUC, ties counting one half.
pub fn auc(samples: &[ScoredSample]) -> Result<f64> {
    let mut v = Vec::with_capacity(samples.len());
    for s in samples {
        if !(0.0..=1.0).contains(&s.score) {
            return Err(MetricsError::InvalidScore(s.score));
        }
        v.push((s.score, s.label != 0));
    }
    let pos = v.iter().filter(|s| s.1).count() as u128;
    let neg = v.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::DegenerateLabels);
    }
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(doubled_pair_count(&v) as f64 / (2 * pos * neg) as f64)
}

pub const PIXEL_AUC_BINS: usize = 65_536;

/// Pixel-level AUC over a 16-bit score histogram; linear in the pixel count
/// unless many distinct scores share a bin.
///
/// Scores are bucketed by `round(s · 65535)`. A bucket holding both classes
/// and more than one distinct score is re-ranked exactly, so the result
/// equals plain pair counting.
pub fn pixel_auc(map: &ScoreMap, gt: &BinaryMask) -> Result<f64> {
    if map.dims() != gt.dims() {
        return Err(MetricsError::DimensionMismatch(map.dims(), gt.dims()));
    }
    let bin_of = |s: f64| (s * (PIXEL_AUC_BINS - 1) as f64).round() as usize;
    let mut pos_hist = vec![0u64; PIXEL_AUC_BINS];
    let mut neg_hist = vec![0u64; PIXEL_AUC_BINS];
    let mut lo = vec![f64::INFINITY; PIXEL_AUC_BINS];
    let mut hi = vec![f64::NEG_INFINITY; PIXEL_AUC_BINS];
    for (&s, &t) in map.data().iter().zip(gt.data()) {
        let bin = bin_of(s);
        if t {
            pos_hist[bin] += 1;
        } else {
            neg_hist[bin] += 1;
        }
        lo[bin] = lo[bin].min(s);
        hi[bin] = hi[bin].max(s);
    }
    let pos: u128 = pos_hist.iter().map(|&c| c as u128).sum();
    let neg: u128 = neg_hist.iter().map(|&c| c as u128).sum();
    if pos == 0 || neg == 0 {
        return Err(MetricsError::DegenerateLabels);
    }
    let needs_exact = |b: usize| pos_hist[b] > 0 && neg_hist[b] > 0 && lo[b] < hi[b];
    let mut members: BTreeMap<usize, Vec<(f64, bool)>> = BTreeMap::new();
    for (&s, &t) in map.data().iter().zip(gt.data()) {
        let bin = bin_of(s);
        if needs_exact(bin) {
            members.entry(bin).or_default().push((s, t));
        }
    }
    let mut neg_below: u128 = 0;
    let mut total: u128 = 0;
    for (b, (p, n)) in pos_hist.iter().zip(&neg_hist).enumerate() {
        let (p, n) = (*p as u128, *n as u128);
        total += 2 * p * neg_below;
        total += match members.get_mut(&b) {
            Some(m) => {
                m.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
                doubled_pair_count(m)
            }
            None => p * n,
        };
        neg_below += n;
    }
    Ok(total as f64 / (2 * pos * neg) as f64)
}

fn overlap(pred: &BinaryMask, gt: &BinaryMask) -> Result<(usize, usize, usize)> {
    if pred.dims() != gt.dims() {
        return Err(MetricsError::DimensionMismatch(pred.dims(), gt.dims()));
    }
    let mut inter = 0;
    let mut p = 0;
    let mut g = 0;
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        inter += (a && b) as usize;
        p += a as usize;
        g += b as usize;
    }
    Ok((inter, p, g))
}

/// `|pred ∩ gt| / |pred ∪ gt|`; two empty masks score 1.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (inter, p, g) = overlap(pred, gt)?;
    let union = p + g - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `2|pred ∩ gt| / (|pred| + |gt|)`; two empty masks score 1.
pub fn f1(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (inter, p, g) = overlap(pred, gt)?;
    Ok(if p + g == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (p + g) as f64
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status", content = "message")]
pub enum SampleStatus {
    Ok,
    Err(String),
}

/// Everything the aggregator needs about one evaluated sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub id: String,
    pub dataset: String,
    pub label: u8,
    pub status: SampleStatus,
    pub detection_score: Option<f64>,
    pub iou: Option<f64>,
    pub f1: Option<f64>,
    pub pixel_auc: Option<f64>,
    /// Pixel AUC was computed from a binary mask instead of a probability map.
    #[serde(default)]
    pub binary_pixel_auc: bool,
    #[serde(default)]
    pub rubric: Option<RubricScores>,
    /// A judge was configured but did not produce scores.
    #[serde(default)]
    pub unjudged: bool,
}

impl SampleResult {
    pub fn failed(id: impl Into<String>, dataset: impl Into<String>, label: u8, message: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            dataset: dataset.into(),
            label,
            status: SampleStatus::Err(message.into()),
            detection_score: None,
            iou: None,
            f1: None,
            pixel_auc: None,
            binary_pixel_auc: false,
            rubric: None,
            unjudged: false,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == SampleStatus::Ok
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub ok: usize,
    pub err: usize,
    pub tampered: usize,
    pub authentic: usize,
    /// Tampered samples that contributed IoU/F1.
    pub localized: usize,
    pub judged: usize,
    pub unjudged: usize,
    pub binary_pixel_auc: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RubricMeans {
    pub accuracy: f64,
    pub details: f64,
    pub hallucination: f64,
    pub readability: f64,
    pub average: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub image_auc: Option<f64>,
    pub pixel_auc: Option<f64>,
    pub iou: Option<f64>,
    pub f1: Option<f64>,
    pub rubric: Option<RubricMeans>,
    pub counts: Counts,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub overall: DatasetSummary,
    pub datasets: BTreeMap<String, DatasetSummary>,
    /// Degradation applied to every input, e.g. `jpeg-q70`.
    pub degradation: Option<String>,
    pub notes: Vec<String>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

fn summarize(results: &[&SampleResult]) -> DatasetSummary {
    let ok: Vec<&&SampleResult> = results.iter().filter(|r| r.is_ok()).collect();
    let scored: Vec<ScoredSample> = ok
        .iter()
        .filter_map(|r| r.detection_score.map(|s| ScoredSample::new(r.id.clone(), s, r.label)))
        .collect();
    let localized: Vec<&&&SampleResult> = ok.iter().filter(|r| r.label == 1 && r.iou.is_some()).collect();
    let judged: Vec<&RubricScores> = ok.iter().filter_map(|r| r.rubric.as_ref()).collect();
    let rubric = (!judged.is_empty()).then(|| {
        let n = judged.len() as f64;
        let m = |f: fn(&RubricScores) -> f64| judged.iter().map(|r| f(r)).sum::<f64>() / n;
        let (a, d, h, r) = (
            m(|r| r.accuracy),
            m(|r| r.details),
            m(|r| r.hallucination),
            m(|r| r.readability),
        );
        RubricMeans {
            accuracy: a,
            details: d,
            hallucination: h,
            readability: r,
            average: (a + d + h + r) / 4.0,
        }
    });
    DatasetSummary {
        image_auc: auc(&scored).ok(),
        pixel_auc: mean(ok.iter().filter(|r| r.label == 1).filter_map(|r| r.pixel_auc)),
        iou: mean(localized.iter().filter_map(|r| r.iou)),
        f1: mean(localized.iter().filter_map(|r| r.f1)),
        rubric,
        counts: Counts {
            total: results.len(),
            ok: ok.len(),
            err: results.len() - ok.len(),
            tampered: results.iter().filter(|r| r.label == 1).count(),
            authentic: results.iter().filter(|r| r.label == 0).count(),
            localized: localized.len(),
            judged: judged.len(),
            unjudged: results.iter().filter(|r| r.unjudged).count(),
            binary_pixel_auc: ok.iter().filter(|r| r.binary_pixel_auc).count(),
        },
    }
}

/// Per-dataset and overall means. Image-level AUC is computed over each
/// group's full score/label set; failed samples are counted, never imputed.
/// IoU, F1 and pixel AUC average over tampered samples only.
pub fn aggregate(results: &[SampleResult]) -> EvalSummary {
    let mut by_dataset: BTreeMap<String, Vec<&SampleResult>> = BTreeMap::new();
    for r in results {
        by_dataset.entry(r.dataset.clone()).or_default().push(r);
    }
    let all: Vec<&SampleResult> = results.iter().collect();
    EvalSummary {
        overall: summarize(&all),
        datasets: by_dataset.into_iter().map(|(k, v)| (k, summarize(&v))).collect(),
        degradation: None,
        notes: vec![
            "authentic samples are excluded from IoU/F1/pixel-AUC means and included in image-level AUC".into(),
        ],
    }
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.1}", x * 100.0)).unwrap_or_else(|| "-".into())
}

impl EvalSummary {
    /// Aligned-column table: one row per dataset plus an overall row.
    pub fn to_table(&self) -> String {
        let header = ["Dataset", "img-AUC", "px-AUC", "IoU", "F1", "n", "err"];
        let mut rows: Vec<[String; 7]> = Vec::new();
        let row = |name: &str, s: &DatasetSummary| {
            [
                name.to_string(),
                pct(s.image_auc),
                pct(s.pixel_auc),
                pct(s.iou),
                pct(s.f1),
                s.counts.total.to_string(),
                s.counts.err.to_string(),
            ]
        };
        for (name, s) in &self.datasets {
            rows.push(row(name, s));
        }
        rows.push(row("Overall", &self.overall));
        let mut widths = header.map(str::len);
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        if let Some(d) = &self.degradation {
            let _ = writeln!(out, "degradation: {d}");
        }
        let line = |cells: Vec<&str>| {
            cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{c:<w$}", w = widths[i])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let _ = writeln!(out, "{}", line(header.to_vec()));
        let _ = writeln!(
            out,
            "{}",
            widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-")
        );
        for r in &rows {
            let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::BoundingBox;

    fn samples(pos: &[f64], neg: &[f64]) -> Vec<ScoredSample> {
        pos.iter()
            .map(|&s| ScoredSample::new("p", s, 1))
            .chain(neg.iter().map(|&s| ScoredSample::new("n", s, 0)))
            .collect()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&samples(&[0.9, 0.8], &[0.1, 0.2])).unwrap(), 1.0);
        assert_eq!(auc(&samples(&[0.3, 0.3], &[0.3, 0.3, 0.3])).unwrap(), 0.5);
        assert_eq!(auc(&samples(&[0.9, 0.4], &[0.1, 0.6])).unwrap(), 0.75);
        assert_eq!(auc(&samples(&[0.9], &[])), Err(MetricsError::DegenerateLabels));
        assert_eq!(auc(&samples(&[1.2], &[0.0])), Err(MetricsError::InvalidScore(1.2)));
    }

    #[test]
    fn pixel_auc_examples() {
        let gt = BinaryMask::from_box(4, 4, &BoundingBox::square(1, 1, 2));
        assert_eq!(pixel_auc(&ScoreMap::from_mask(&gt), &gt).unwrap(), 1.0);
        assert_eq!(
            pixel_auc(&ScoreMap::new(4, 4, vec![0.3; 16]).unwrap(), &gt).unwrap(),
            0.5
        );
        assert_eq!(
            pixel_auc(&ScoreMap::zeros(4, 4), &BinaryMask::empty(4, 4)),
            Err(MetricsError::DegenerateLabels)
        );
        assert!(matches!(
            pixel_auc(&ScoreMap::zeros(3, 4), &gt),
            Err(MetricsError::DimensionMismatch(..))
        ));
    }

    #[test]
    fn iou_and_f1_examples() {
        let a = BinaryMask::from_box(4, 4, &BoundingBox::square(0, 0, 2));
        let b = BinaryMask::from_box(4, 4, &BoundingBox::square(1, 1, 2));
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(f1(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &b).unwrap(), 1.0 / 7.0);
        assert_eq!(f1(&a, &b).unwrap(), 0.25);
        let empty = BinaryMask::empty(4, 4);
        assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
        assert_eq!(f1(&empty, &empty).unwrap(), 1.0);
        assert_eq!(iou(&empty, &a).unwrap(), 0.0);
        assert_eq!(f1(&empty, &a).unwrap(), 0.0);
        assert!(iou(&a, &BinaryMask::empty(3, 4)).is_err());
    }

    fn ok(id: &str, label: u8, score: f64, iou: Option<f64>) -> SampleResult {
        SampleResult {
            id: id.into(),
            dataset: "d".into(),
            label,
            status: SampleStatus::Ok,
            detection_score: Some(score),
            iou,
            f1: iou,
            pixel_auc: None,
            binary_pixel_auc: false,
            rubric: None,
            unjudged: false,
        }
    }

    #[test]
    fn aggregate_means_and_failures() {
        let s = aggregate(&[ok("a", 1, 0.9, Some(0.2)), ok("b", 1, 0.8, Some(0.6))]);
        assert!((s.overall.iou.unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(s.overall.image_auc, None);

        let s = aggregate(&[
            ok("a", 1, 0.9, Some(0.2)),
            ok("b", 0, 0.1, None),
            SampleResult::failed("c", "d", 1, "decode error"),
        ]);
        assert_eq!(s.overall.counts.err, 1);
        assert_eq!(s.overall.counts.total, 3);
        assert_eq!(s.overall.iou, Some(0.2));
        assert_eq!(s.overall.image_auc, Some(1.0));
        assert_eq!(s.datasets["d"].counts.ok, 2);

        let empty = aggregate(&[]);
        assert_eq!(empty.overall.counts, Counts::default());
        assert_eq!(empty.overall.iou, None);
        assert_eq!(empty.overall.image_auc, None);
    }

    #[test]
    fn table_has_one_row_per_dataset() {
        let s = aggregate(&[ok("a", 1, 0.9, Some(0.5)), ok("b", 0, 0.1, None)]);
        let t = s.to_table();
        assert_eq!(t.lines().count(), 4);
        assert!(t.contains("Overall"));
        assert!(t.contains("50.0"));
    }
}
