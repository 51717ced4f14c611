//! Prompt templates with `{slot}` placeholders.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{MllmError, TamperType};

/// Template text with its declared slots.
#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub name: String,
    pub text: String,
}

impl Template {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            text: text.into(),
        }
    }

    /// Names of every `{lowercase_slot}` in the text.
    pub fn slots(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_slot_name(&after[..close]) => {
                    out.insert(after[..close].to_string());
                    rest = &after[close + 1..];
                }
                _ => rest = after,
            }
        }
        out
    }

    fn check(&self, required: &[&str], optional: &[&str]) -> Result<(), MllmError> {
        let slots = self.slots();
        for r in required {
            if !slots.contains(*r) {
                return Err(MllmError::Prompt(format!(
                    "template '{}' lacks required slot {{{r}}}",
                    self.name
                )));
            }
        }
        for s in &slots {
            if !required.contains(&s.as_str()) && !optional.contains(&s.as_str()) {
                return Err(MllmError::Prompt(format!(
                    "template '{}' has unknown slot {{{s}}}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Substitutes every slot; slots missing from `values` become empty.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_slot_name(&after[..close]) => {
                    let name = &after[..close];
                    if let Some((_, v)) = values.iter().find(|(k, _)| *k == name) {
                        out.push_str(v);
                    }
                    rest = &after[close + 1..];
                }
                _ => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

fn is_slot_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b == b'_')
}

/// Text substituted for `{image}`.
pub const IMAGE_REF: &str = "(first attached image)";
/// Text substituted for `{hint_image}` when a hint image is attached.
pub const HINT_REF: &str = "A second attached image repeats the first with regions flagged by an automatic duplicate-region detector: corresponding regions share a tint and are joined by a line. Treat these marks as a cue to verify, not as proof.";
/// Text substituted for `{reference}` in the judge prompt.
pub const REFERENCE_REF: &str = "(second attached image, manipulated pixels highlighted)";

/// Classification, type-aligned analysis, judge and locate templates.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptLibrary {
    pub classification: Template,
    pub selected: BTreeMap<TamperType, Template>,
    /// Used when the type prior is disabled.
    pub generic: Template,
    pub judge: Template,
    pub locate: Template,
    /// Appended to the analysis prompt when re-asking after a malformed reply.
    pub format_reminder: String,
}

const FILES: &[(&str, &str)] = &[
    ("classification.txt", include_str!("../../prompts/classification.txt")),
    ("copy_move.txt", include_str!("../../prompts/copy_move.txt")),
    ("deepfake.txt", include_str!("../../prompts/deepfake.txt")),
    ("aigc.txt", include_str!("../../prompts/aigc.txt")),
    ("others.txt", include_str!("../../prompts/others.txt")),
    ("generic.txt", include_str!("../../prompts/generic.txt")),
    ("judge.txt", include_str!("../../prompts/judge.txt")),
    ("locate.txt", include_str!("../../prompts/locate.txt")),
    ("format_reminder.txt", include_str!("../../prompts/format_reminder.txt")),
];

fn type_file(t: TamperType) -> &'static str {
    match t {
        TamperType::CopyMove => "copy_move.txt",
        TamperType::Deepfake => "deepfake.txt",
        TamperType::Aigc => "aigc.txt",
        TamperType::Others => "others.txt",
    }
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::from_source(|name| {
            FILES
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.to_string())
                .ok_or_else(|| MllmError::Prompt(format!("no built-in prompt {name}")))
        })
        .expect("built-in prompts are valid")
    }
}

impl PromptLibrary {
    /// Reads templates from `dir`; files absent there fall back to the
    /// built-in text.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, MllmError> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(MllmError::Prompt(format!(
                "prompt directory {} not found",
                dir.display()
            )));
        }
        Self::from_source(|name| {
            let path = dir.join(name);
            if path.exists() {
                std::fs::read_to_string(&path).map_err(|e| MllmError::Prompt(format!("{}: {e}", path.display())))
            } else {
                Ok(FILES
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, t)| t.to_string())
                    .unwrap_or_default())
            }
        })
    }

    fn from_source(read: impl Fn(&str) -> Result<String, MllmError>) -> Result<Self, MllmError> {
        let t = |name: &str| -> Result<Template, MllmError> { Ok(Template::new(name, read(name)?)) };
        let mut selected = BTreeMap::new();
        for ty in TamperType::ALL {
            selected.insert(ty, t(type_file(ty))?);
        }
        let lib = Self {
            classification: t("classification.txt")?,
            selected,
            generic: t("generic.txt")?,
            judge: t("judge.txt")?,
            locate: t("locate.txt")?,
            format_reminder: read("format_reminder.txt")?,
        };
        lib.validate()?;
        Ok(lib)
    }

    /// Every type has a template and every template declares exactly the
    /// slots its step fills.
    pub fn validate(&self) -> Result<(), MllmError> {
        self.classification.check(&["image"], &[])?;
        for ty in TamperType::ALL {
            self.selected
                .get(&ty)
                .ok_or_else(|| MllmError::Prompt(format!("no analysis template for {ty}")))?
                .check(&["image"], &["hint_image"])?;
        }
        self.generic.check(&["image"], &["hint_image"])?;
        self.judge.check(&["image", "reference", "explanation"], &[])?;
        self.locate.check(&["image", "description"], &[])?;
        Ok(())
    }

    pub fn analysis(&self, ty: TamperType) -> &Template {
        &self.selected[&ty]
    }
}
