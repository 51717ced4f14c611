use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::degrade::Degradation;
use crate::imaging::load_image;
use crate::mllm::TamperType;

/// One dataset sample. Paths are relative to the manifest file unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    /// 1 = tampered, 0 = authentic.
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tamper_type_gt: Option<TamperType>,
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degradation: Option<Degradation>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>, base_dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let m = Self {
            records,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn image_path(&self, r: &ManifestRecord) -> PathBuf {
        self.resolve(&r.image_path)
    }

    pub fn mask_path(&self, r: &ManifestRecord) -> Option<PathBuf> {
        r.mask_path.as_deref().map(|p| self.resolve(p))
    }

    /// Unique ids, binary labels, a mask for every tampered record.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut seen = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            let err = |m: String| PipelineError::Manifest(format!("record {} ({}): {m}", i + 1, r.id));
            if r.id.is_empty() {
                return Err(err("empty id".into()));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(err("duplicate id".into()));
            }
            if r.label > 1 {
                return Err(err(format!("label {} is not 0 or 1", r.label)));
            }
            if r.label == 1 && r.mask_path.is_none() {
                return Err(err("tampered record without mask_path".into()));
            }
        }
        Ok(())
    }

    /// Every referenced file exists.
    pub fn check_paths(&self) -> Result<(), PipelineError> {
        for r in &self.records {
            for p in std::iter::once(self.image_path(r)).chain(self.mask_path(r)) {
                if !p.is_file() {
                    return Err(PipelineError::Manifest(format!("{}: {} not found", r.id, p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| PipelineError::Manifest(format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(records, base_dir)
    }

    /// Reads a JSON-lines manifest and checks that its files exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let m = Self::parse(&text, path.parent().unwrap_or(Path::new(".")))?;
        m.check_paths()?;
        Ok(m)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"));
        }
        out
    }

    /// Writes the records with paths made relative to the output's directory
    /// where possible.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let path = path.as_ref();
        let out_dir = path.parent().unwrap_or(Path::new("."));
        let rel = |p: PathBuf| relative_to(&p, out_dir).unwrap_or(p);
        let records = self
            .records
            .iter()
            .map(|r| ManifestRecord {
                image_path: rel(self.image_path(r)),
                mask_path: self.mask_path(r).map(rel),
                ..r.clone()
            })
            .collect();
        let rebased = Manifest {
            records,
            base_dir: out_dir.to_path_buf(),
        };
        std::fs::write(path, rebased.to_jsonl()).map_err(|e| PipelineError::io(path, e))
    }
}

fn relative_to(p: &Path, base: &Path) -> Option<PathBuf> {
    let abs = |x: &Path| std::path::absolute(x).ok();
    abs(p)?.strip_prefix(abs(base)?).ok().map(Path::to_path_buf)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingConvention {
    /// `images/<stem>.*` paired with `masks/<stem>.*`.
    PairedDirs,
    /// `<stem>.*` paired with `<stem>_gt.*` in the same directory, or with
    /// `<stem>_gt.*` / `<stem>.*` under `masks/`.
    Suffix,
}

const IMAGE_EXTS: &[&str] = &["png", "jpg", "jpeg"];

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| PipelineError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Scans `root` for images and ground-truth masks. Images without a mask
/// become authentic records; the dataset name is the directory name.
pub fn build_manifest(root: impl AsRef<Path>, convention: PairingConvention) -> Result<Manifest, PipelineError> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(PipelineError::Manifest(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let dataset = std::path::absolute(root)
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "dataset".into());
    let masks_dir = root.join("masks");
    let masks = if masks_dir.is_dir() {
        list_images(&masks_dir)?
    } else {
        Vec::new()
    };

    let (images, candidates): (Vec<PathBuf>, Vec<(String, PathBuf)>) = match convention {
        PairingConvention::PairedDirs => {
            let images = list_images(&root.join("images"))?;
            (images, masks.iter().map(|m| (stem(m), m.clone())).collect())
        }
        PairingConvention::Suffix => {
            let images_dir = if root.join("images").is_dir() {
                root.join("images")
            } else {
                root.to_path_buf()
            };
            let all = list_images(&images_dir)?;
            let (gt, images): (Vec<PathBuf>, Vec<PathBuf>) = all.into_iter().partition(|p| stem(p).ends_with("_gt"));
            let mut cands: Vec<(String, PathBuf)> = gt
                .into_iter()
                .map(|p| (stem(&p).trim_end_matches("_gt").to_string(), p))
                .collect();
            for m in &masks {
                let s = stem(m);
                cands.push((s.strip_suffix("_gt").map(str::to_string).unwrap_or(s), m.clone()));
            }
            (images, cands)
        }
    };
    let mut by_stem: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for (s, p) in candidates {
        by_stem.entry(s).or_default().push(p);
    }

    let mut records = Vec::with_capacity(images.len());
    let mut ids = HashSet::new();
    for img in images {
        let s = stem(&img);
        if !ids.insert(s.clone()) {
            return Err(PipelineError::AmbiguousPairing(format!(
                "two images share the stem '{s}'"
            )));
        }
        let mask = match by_stem.get(&s).map(Vec::as_slice) {
            None | Some([]) => None,
            Some([m]) => Some(m.clone()),
            Some(many) => {
                let names: Vec<String> = many.iter().map(|p| p.display().to_string()).collect();
                return Err(PipelineError::AmbiguousPairing(format!(
                    "stem '{s}' matches {} masks: {}",
                    many.len(),
                    names.join(", ")
                )));
            }
        };
        let rel = |p: &Path| {
            p.strip_prefix(root)
                .map(Path::to_path_buf)
                .unwrap_or_else(|_| p.to_path_buf())
        };
        records.push(ManifestRecord {
            id: s,
            image_path: rel(&img),
            label: mask.is_some() as u8,
            mask_path: mask.as_deref().map(rel),
            tamper_type_gt: None,
            dataset: dataset.clone(),
            degradation: None,
        });
    }
    Manifest::new(records, root)
}

/// Writes `<stem>.<tag>.png` next to every image and returns a manifest
/// pointing at the copies. Masks are shared with the source manifest.
/// Gaussian seeds are re-keyed per sample id.
pub fn degrade_manifest(manifest: &Manifest, degradation: &Degradation) -> Result<Manifest, PipelineError> {
    degradation
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let tag = degradation.tag();
    let records = manifest
        .records
        .par_iter()
        .map(|r| {
            let src = manifest.image_path(r);
            let img = load_image(&src).map_err(|e| PipelineError::Image(e.to_string()))?;
            let out = degradation
                .keyed(&r.id)
                .apply(&img)
                .map_err(|e| PipelineError::Image(e.to_string()))?;
            let dst = src.with_file_name(format!("{}.{tag}.png", stem(&src)));
            out.save_png(&dst).map_err(|e| PipelineError::Image(e.to_string()))?;
            Ok(ManifestRecord {
                image_path: dst,
                mask_path: manifest.mask_path(r),
                degradation: Some(degradation.clone()),
                ..r.clone()
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Manifest::new(records, manifest.base_dir.clone())
}
