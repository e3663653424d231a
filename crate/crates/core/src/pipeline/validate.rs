use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::PipelineError;
use crate::prompts::DESCRIPTION_PREFIX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    Preference,
    Infused,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub schema: Schema,
    pub lines: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn string_field<'a>(obj: &'a Map<String, Value>, key: &str, errs: &mut Vec<String>) -> Option<&'a str> {
    match obj.get(key) {
        Some(Value::String(s)) => Some(s),
        Some(_) => {
            errs.push(format!("field `{key}` must be a string"));
            None
        }
        None => {
            errs.push(format!("missing field `{key}`"));
            None
        }
    }
}

fn check_preference(obj: &Map<String, Value>) -> Vec<String> {
    let mut errs = Vec::new();
    for key in ["image", "prompt"] {
        if let Some(s) = string_field(obj, key, &mut errs) {
            if s.is_empty() {
                errs.push(format!("field `{key}` is empty"));
            }
        }
    }
    let chosen = string_field(obj, "chosen", &mut errs);
    let rejected = string_field(obj, "rejected", &mut errs);
    if let (Some(c), Some(r)) = (chosen, rejected) {
        if c == r {
            errs.push("`chosen` equals `rejected`".into());
        }
    }
    match obj.get("provenance") {
        Some(Value::Object(p)) => match p.get("type").and_then(Value::as_str) {
            Some("bad_prompt") => {
                if !p.get("prompt_id").is_some_and(Value::is_string) {
                    errs.push("bad_prompt provenance needs a string `prompt_id`".into());
                }
            }
            Some("corruption") => match p.get("mode").and_then(Value::as_str) {
                Some("lowres") | Some("color_jitter") => {}
                _ => errs.push("corruption provenance needs `mode` lowres or color_jitter".into()),
            },
            _ => errs.push("provenance `type` must be bad_prompt or corruption".into()),
        },
        Some(_) => errs.push("`provenance` must be an object".into()),
        None => errs.push("missing field `provenance`".into()),
    }
    if !obj.get("meta").is_some_and(Value::is_object) {
        errs.push("missing object field `meta`".into());
    }
    errs
}

fn check_infused(obj: &Map<String, Value>) -> Vec<String> {
    let mut errs = Vec::new();
    string_field(obj, "id", &mut errs);
    match obj.get("image") {
        Some(Value::String(_)) | Some(Value::Null) => {}
        Some(_) => errs.push("field `image` must be a string or null".into()),
        None => errs.push("missing field `image`".into()),
    }
    string_field(obj, "completion", &mut errs);
    let prompt = string_field(obj, "prompt", &mut errs);
    let description = string_field(obj, "description", &mut errs);
    if let Some(p) = prompt {
        if !p.starts_with(DESCRIPTION_PREFIX) {
            errs.push(format!("prompt does not start with {DESCRIPTION_PREFIX:?}"));
        } else if let Some(d) = description {
            let head = format!("{DESCRIPTION_PREFIX}{d}\n");
            if !p.starts_with(&head) {
                errs.push("prompt does not embed the description followed by a newline".into());
            }
        }
    }
    errs
}

/// Checks every line of a JSONL dataset against `schema`.
pub fn validate_dataset(path: &Path, schema: Schema) -> Result<ValidationReport, PipelineError> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut report = ValidationReport {
        schema,
        lines: 0,
        violations: Vec::new(),
    };
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        report.lines += 1;
        let errs = match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(obj)) => match schema {
                Schema::Preference => check_preference(&obj),
                Schema::Infused => check_infused(&obj),
            },
            Ok(_) => vec!["line is not a JSON object".into()],
            Err(e) => vec![format!("malformed JSON: {e}")],
        };
        report
            .violations
            .extend(errs.into_iter().map(|message| Violation { line: n + 1, message }));
    }
    Ok(report)
}
