use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};

use crate::config::LabelPreset;
use crate::error::DataError;

/// One claim, its relevant articles in input order, and a class index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClaimInstance {
    pub id: String,
    pub claim: String,
    pub articles: Vec<String>,
    pub label: usize,
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, line: usize, name: &'static str) -> Result<&'a Value, DataError> {
    obj.get(name).ok_or(DataError::MissingField { line, field: name })
}

fn string_field(obj: &serde_json::Map<String, Value>, line: usize, name: &'static str) -> Result<String, DataError> {
    match field(obj, line, name)? {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) if name == "id" => Ok(n.to_string()),
        other => Err(DataError::Parse {
            line,
            message: format!("field `{name}` must be a string, got {other}"),
        }),
    }
}

fn parse_line(text: &str, line: usize, labels: LabelPreset) -> Result<ClaimInstance, DataError> {
    let value: Value = serde_json::from_str(text).map_err(|e| DataError::Parse {
        line,
        message: e.to_string(),
    })?;
    let Value::Object(obj) = value else {
        return Err(DataError::Parse {
            line,
            message: "expected a JSON object".into(),
        });
    };
    let id = string_field(&obj, line, "id")?;
    let claim = string_field(&obj, line, "claim")?;
    if claim.trim().is_empty() {
        return Err(DataError::MissingField { line, field: "claim" });
    }
    let articles = match field(&obj, line, "articles")? {
        Value::Array(items) => items
            .iter()
            .map(|a| match a {
                Value::String(s) => Ok(s.clone()),
                other => Err(DataError::Parse {
                    line,
                    message: format!("articles must be strings, got {other}"),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?,
        other => {
            return Err(DataError::Parse {
                line,
                message: format!("field `articles` must be an array, got {other}"),
            })
        }
    };
    if articles.is_empty() {
        return Err(DataError::MissingField { line, field: "articles" });
    }
    let label_name = string_field(&obj, line, "label")?;
    let label = labels.index_of(&label_name).ok_or(DataError::UnknownLabelName {
        line,
        label: label_name,
    })?;
    Ok(ClaimInstance {
        id,
        claim,
        articles,
        label,
    })
}

/// Parses a JSONL corpus held in memory. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_jsonl(text: &str, labels: LabelPreset) -> Result<Vec<ClaimInstance>, DataError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let inst = parse_line(raw, i + 1, labels)?;
        if !seen.insert(inst.id.clone()) {
            log::warn!("line {}: duplicate instance id `{}`", i + 1, inst.id);
        }
        out.push(inst);
    }
    Ok(out)
}

pub fn load_jsonl(path: impl AsRef<Path>, labels: LabelPreset) -> Result<Vec<ClaimInstance>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_jsonl(&text, labels)
}

/// Writes instances in the same format [`parse_jsonl`] reads.
pub fn write_jsonl<W: Write>(mut out: W, instances: &[ClaimInstance], labels: LabelPreset) -> std::io::Result<()> {
    for inst in instances {
        let line = json!({
            "id": inst.id,
            "claim": inst.claim,
            "articles": inst.articles,
            "label": labels.name(inst.label),
        });
        writeln!(out, "{line}")?;
    }
    Ok(())
}
