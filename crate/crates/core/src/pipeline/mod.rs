//! End-to-end orchestration: classification, optional duplicate-region hint,
//! type-aligned analysis, grounded localization, and dataset evaluation.

mod config;
mod evaluate;
mod manifest;
mod run;

use std::path::Path;

pub use config::{Ablation, FfdConfig, JudgeConfig, PipelineConfig, ScoreSource};
pub use evaluate::{
    create_run_dir, evaluate_dataset, judge_records, load_records, EvalOptions, Evaluation, SampleRecord,
};
pub use manifest::{build_manifest, degrade_manifest, Manifest, ManifestRecord, PairingConvention};
pub use run::{
    judge_report, run, ForensicReport, PipelineFailure, ProvenanceEntry, ReportSummary, ServiceOptions, Services, Stage,
};

#[derive(thiserror::Error, Debug)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("ambiguous mask pairing: {0}")]
    AmbiguousPairing(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image error: {0}")]
    Image(String),
    #[error("backend setup failed: {0}")]
    Backend(String),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
