//! Tolerant extraction of structured fields from free-form model replies.

use serde_json::{Map, Value};

use super::{Explanation, RubricScores, TamperType, Verdict};

/// First balanced `{...}` object in `text` that parses as JSON.
///
/// Markdown fences and surrounding prose are skipped; braces inside string
/// literals are not counted.
pub fn extract_json_object(text: &str) -> Option<Map<String, Value>> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(rel) = text[start..].find('{') {
        let open = start + rel;
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        if let Ok(Value::Object(m)) = serde_json::from_str(&text[open..=i]) {
                            return Some(m);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        start = open + 1;
    }
    None
}

const TYPE_KEYWORDS: &[(&str, TamperType)] = &[
    ("copy-move", TamperType::CopyMove),
    ("copy move", TamperType::CopyMove),
    ("copymove", TamperType::CopyMove),
    ("copy_move", TamperType::CopyMove),
    ("duplicat", TamperType::CopyMove),
    ("deepfake", TamperType::Deepfake),
    ("deep fake", TamperType::Deepfake),
    ("face swap", TamperType::Deepfake),
    ("face-swap", TamperType::Deepfake),
    ("aigc", TamperType::Aigc),
    ("ai-generated", TamperType::Aigc),
    ("ai generated", TamperType::Aigc),
    ("diffusion", TamperType::Aigc),
    ("inpaint", TamperType::Aigc),
    ("splic", TamperType::Others),
    ("remov", TamperType::Others),
    ("enhanc", TamperType::Others),
    ("others", TamperType::Others),
    ("other", TamperType::Others),
];

/// Category named by `text`: the keyword occurring earliest wins.
pub fn scan_type_keywords(text: &str) -> Option<TamperType> {
    let lower = text.to_lowercase();
    TYPE_KEYWORDS
        .iter()
        .filter_map(|(kw, t)| lower.find(kw).map(|pos| (pos, *t)))
        .min_by_key(|&(pos, _)| pos)
        .map(|(_, t)| t)
}

/// Classification reply: the JSON `type` field when present, else a keyword
/// scan of the whole reply.
pub fn parse_type(text: &str) -> Option<TamperType> {
    if let Some(obj) = extract_json_object(text) {
        for key in ["type", "category", "label"] {
            if let Some(Value::String(s)) = obj.get(key) {
                if let Some(t) = scan_type_keywords(s) {
                    return Some(t);
                }
            }
        }
    }
    scan_type_keywords(text)
}

fn parse_verdict(s: &str) -> Option<Verdict> {
    let s = s.trim().to_lowercase();
    let tampered = ["tamper", "forged", "manipulat", "fake", "edited"];
    let authentic = ["authentic", "real", "genuine", "pristine", "original", "untamper"];
    // "untampered" contains "tamper", so authentic words are checked first.
    if authentic.iter().any(|w| s.contains(w)) && !s.starts_with("tamper") {
        Some(Verdict::Authentic)
    } else if tampered.iter().any(|w| s.contains(w)) {
        Some(Verdict::Tampered)
    } else {
        None
    }
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => {
            s.trim().trim_end_matches('%').parse::<f64>().ok().map(
                |x| {
                    if s.trim().ends_with('%') {
                        x / 100.0
                    } else {
                        x
                    }
                },
            )
        }
        _ => None,
    }
    .filter(|x| x.is_finite())
}

fn text_field(obj: &Map<String, Value>, keys: &[&str]) -> Option<String> {
    keys.iter()
        .find_map(|k| obj.get(*k))
        .and_then(|v| v.as_str())
        .map(|s| s.trim().to_string())
}

/// Analysis reply. `Err` names the first missing or invalid field.
pub fn parse_explanation(text: &str) -> Result<Explanation, String> {
    let obj = extract_json_object(text).ok_or("no JSON object in reply")?;
    let explanation = text_field(&obj, &["explanation", "reasoning", "rationale"])
        .filter(|s| !s.is_empty())
        .ok_or("missing explanation")?;
    let verdict = obj
        .get("verdict")
        .and_then(|v| match v {
            Value::String(s) => parse_verdict(s),
            Value::Bool(true) => Some(Verdict::Tampered),
            Value::Bool(false) => Some(Verdict::Authentic),
            _ => None,
        })
        .ok_or("missing or unrecognized verdict")?;
    let confidence = obj.get("confidence").and_then(number).ok_or("missing confidence")?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(format!("confidence {confidence} outside [0, 1]"));
    }
    let description = text_field(&obj, &["description", "region", "tampered_region"]).unwrap_or_default();
    if verdict == Verdict::Tampered && description.is_empty() {
        return Err("tampered verdict without a region description".into());
    }
    Ok(Explanation {
        explanation,
        description,
        verdict,
        confidence,
    })
}

/// Judge reply as raw (unclamped) scores.
pub fn parse_scores(text: &str) -> Result<RubricScores, String> {
    let obj = extract_json_object(text).ok_or("no JSON object in reply")?;
    let get = |key: &str| {
        obj.get(key)
            .and_then(number)
            .ok_or_else(|| format!("missing score '{key}'"))
    };
    Ok(RubricScores {
        accuracy: get("accuracy")?,
        details: get("details")?,
        hallucination: get("hallucination")?,
        readability: get("readability")?,
    })
}

/// Locate reply: four normalized coordinates under `box`, or a bare array.
pub fn parse_box(text: &str) -> Result<[f64; 4], String> {
    let arr = match extract_json_object(text) {
        Some(obj) => obj
            .get("box")
            .or_else(|| obj.get("bbox"))
            .cloned()
            .ok_or("missing box")?,
        None => {
            let (a, b) = (
                text.find('[').ok_or("no box in reply")?,
                text.rfind(']').ok_or("no box in reply")?,
            );
            serde_json::from_str(&text[a..=b.max(a)]).map_err(|e| e.to_string())?
        }
    };
    let nums: Vec<f64> = arr
        .as_array()
        .ok_or("box is not an array")?
        .iter()
        .map(number)
        .collect::<Option<_>>()
        .ok_or("non-numeric box coordinate")?;
    <[f64; 4]>::try_from(nums).map_err(|v| format!("box has {} coordinates, expected 4", v.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_extraction_skips_prose_and_fences() {
        let reply = "Sure! ```json\n{\"a\": \"x}\", \"b\": {\"c\": 1}}\n``` done";
        let obj = extract_json_object(reply).unwrap();
        assert_eq!(obj["a"], "x}");
        assert_eq!(obj["b"]["c"], 1);
        assert!(extract_json_object("{not json} {\"k\": 2}").unwrap().contains_key("k"));
        assert!(extract_json_object("no braces").is_none());
    }

    #[test]
    fn type_labels_and_keywords() {
        assert_eq!(parse_type(r#"{"type":"copy-move"}"#), Some(TamperType::CopyMove));
        assert_eq!(parse_type(r#"{"type":"AIGC"}"#), Some(TamperType::Aigc));
        assert_eq!(parse_type("Looks like a face swap"), Some(TamperType::Deepfake));
        assert_eq!(
            parse_type("This appears to be a SPLICING manipulation"),
            Some(TamperType::Others)
        );
        assert_eq!(parse_type("diffusion inpainting, not splicing"), Some(TamperType::Aigc));
        assert_eq!(parse_type("banana"), None);
    }

    #[test]
    fn explanation_validation() {
        let ok = parse_explanation(r#"{"explanation":"e","description":"d","verdict":"tampered","confidence":0.9}"#)
            .unwrap();
        assert_eq!(ok.verdict, Verdict::Tampered);
        let auth =
            parse_explanation(r#"{"explanation":"e","description":"","verdict":"authentic","confidence":"0.1"}"#)
                .unwrap();
        assert_eq!(auth.verdict, Verdict::Authentic);
        assert!(parse_explanation(r#"{"explanation":"e","description":"d","verdict":"tampered"}"#).is_err());
        assert!(
            parse_explanation(r#"{"explanation":"e","description":"","verdict":"tampered","confidence":1}"#).is_err()
        );
        assert!(
            parse_explanation(r#"{"explanation":"e","description":"d","verdict":"tampered","confidence":1.5}"#)
                .is_err()
        );
        assert_eq!(parse_verdict("untampered"), Some(Verdict::Authentic));
        assert_eq!(parse_verdict("Tampered"), Some(Verdict::Tampered));
    }

    #[test]
    fn boxes() {
        assert_eq!(
            parse_box(r#"{"box":[0.25,0.25,0.75,0.75]}"#).unwrap(),
            [0.25, 0.25, 0.75, 0.75]
        );
        assert_eq!(parse_box("[0.1, 0.2, 0.3, 0.4]").unwrap(), [0.1, 0.2, 0.3, 0.4]);
        assert!(parse_box(r#"{"box":[0.1,0.2]}"#).is_err());
    }
}
