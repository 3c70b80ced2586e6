//! Benchmark ingestion: the canonical JSONL record format and a declarative
//! adapter layer for heterogeneous source files.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grader::normalize_text;
use crate::model::{letter_index, validate_question, QuestionRecord};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line_no}: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("record {record}: field `{field}`: {reason}")]
    MappingError { record: String, field: String, reason: String },
    #[error("invalid adapter spec: {0}")]
    InvalidAdapter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A parsed benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSet {
    pub name: String,
    pub records: Vec<QuestionRecord>,
    /// SHA-256 over the input bytes.
    pub source_digest: String,
}

impl BenchmarkSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Downgrade validation failures to warnings and drop the record.
    pub skip_invalid: bool,
}

/// Result of a canonical load: the set plus any skipped-record diagnostics.
#[derive(Debug)]
pub struct Loaded {
    pub set: BenchmarkSet,
    pub warnings: Vec<String>,
}

const REQUIRED_FIELDS: [&str; 5] = ["id", "video_ref", "question", "options", "gold"];

/// Reads line-delimited canonical records. Blank lines are ignored.
///
/// The set name is `name` when given, otherwise the first record's benchmark.
pub fn load_canonical<R: BufRead>(
    mut reader: R,
    name: Option<&str>,
    opts: LoadOptions,
) -> Result<Loaded, IngestError> {
    let mut hasher = Sha256::new();
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        line_no += 1;
        hasher.update(line.as_bytes());
        if line.trim().is_empty() {
            continue;
        }
        let record = match parse_canonical_line(&line) {
            Ok(r) => r,
            Err(reason) => {
                if opts.skip_invalid {
                    warnings.push(format!("line {line_no}: {reason}"));
                    continue;
                }
                return Err(IngestError::MalformedLine { line_no, reason });
            }
        };
        if !seen.insert(record.id.clone()) {
            return Err(IngestError::DuplicateId(record.id));
        }
        records.push(record);
    }
    let name = name
        .map(str::to_string)
        .or_else(|| records.first().map(|r| r.benchmark.clone()))
        .unwrap_or_default();
    Ok(Loaded {
        set: BenchmarkSet { name, records, source_digest: hex::encode(hasher.finalize()) },
        warnings,
    })
}

fn parse_canonical_line(line: &str) -> Result<QuestionRecord, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("record is not a JSON object")?;
    if let Some(missing) = REQUIRED_FIELDS.iter().find(|f| !obj.contains_key(**f)) {
        return Err(format!("missing {missing}"));
    }
    let record: QuestionRecord = serde_json::from_value(value).map_err(|e| e.to_string())?;
    let violations = validate_question(&record);
    if !violations.is_empty() {
        return Err(violations.join("; "));
    }
    Ok(record)
}

/// Hex SHA-256 of a benchmark's source bytes.
pub fn source_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes records one JSON object per line.
pub fn emit_canonical<W: Write>(set: &BenchmarkSet, mut out: W) -> std::io::Result<()> {
    for r in &set.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Equality test on one tag, written `key=value`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagPredicate {
    pub key: String,
    pub value: String,
}

impl TagPredicate {
    pub fn new(key: &str, value: &str) -> Self {
        Self { key: key.to_string(), value: value.to_string() }
    }

    pub fn matches(&self, tags: &BTreeMap<String, String>) -> bool {
        tags.get(&self.key).is_some_and(|v| *v == self.value)
    }

    pub fn describe(&self) -> String {
        format!("{}={}", self.key, self.value)
    }
}

impl std::str::FromStr for TagPredicate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
        Ok(Self::new(k.trim(), v.trim()))
    }
}

/// Keeps records whose tags satisfy `pred`, preserving order.
pub fn split_filter<F>(set: &BenchmarkSet, description: &str, pred: F) -> BenchmarkSet
where
    F: Fn(&BTreeMap<String, String>) -> bool,
{
    BenchmarkSet {
        name: format!("{}[{description}]", set.name),
        records: set.records.iter().filter(|r| pred(&r.tags)).cloned().collect(),
        source_digest: set.source_digest.clone(),
    }
}

pub fn split_by_tag(set: &BenchmarkSet, pred: &TagPredicate) -> BenchmarkSet {
    split_filter(set, &pred.describe(), |tags| pred.matches(tags))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OptionStyle {
    /// `options` path holds an array of strings.
    List,
    /// `options` path holds an object keyed "A", "B", ... (path "" is the record itself).
    LetterKeyed,
    /// Options are lines inside the question text.
    Inline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GoldStyle {
    Index,
    Letter,
    Text,
}

/// Default pattern for inline options: one option per line, `A. text`, `(B) text`, `C: text`.
pub const DEFAULT_INLINE_PATTERN: &str = r"(?m)^\s*\(?([A-Z])[\).:]\s*(.+?)\s*$";

/// Declarative mapping from a source record to a [`QuestionRecord`].
///
/// `field_map` keys are canonical field names (`id`, `benchmark`, `video_ref`,
/// `duration_s`, `question`, `options`, `gold`, or `tags.<name>`); values are
/// dot-separated paths into the source JSON (`"meta.qid"`, `"candidates.0"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub field_map: BTreeMap<String, String>,
    pub option_style: OptionStyle,
    pub gold_style: GoldStyle,
    #[serde(default)]
    pub defaults: BTreeMap<String, Value>,
    /// Regex with two groups (letter, text); only used with `INLINE`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline_pattern: Option<String>,
    /// Strip a leading `A.` / `(A)` label from list options.
    #[serde(default)]
    pub strip_letter_prefix: bool,
}

impl AdapterSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        let mut required = vec!["id", "question", "gold"];
        if self.option_style != OptionStyle::Inline {
            required.push("options");
        }
        for f in required {
            if !self.field_map.contains_key(f) {
                return Err(IngestError::InvalidAdapter(format!("field_map does not cover `{f}`")));
            }
        }
        if self.option_style != OptionStyle::Inline && self.inline_pattern.is_some() {
            return Err(IngestError::InvalidAdapter("inline_pattern requires option_style INLINE".into()));
        }
        if let Some(p) = &self.inline_pattern {
            let re = Regex::new(p).map_err(|e| IngestError::InvalidAdapter(e.to_string()))?;
            if re.captures_len() < 3 {
                return Err(IngestError::InvalidAdapter("inline_pattern needs two capture groups".into()));
            }
        }
        Ok(())
    }
}

fn lookup<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    if path.is_empty() || path == "." {
        return Some(value);
    }
    path.split('.').try_fold(value, |v, seg| match v {
        Value::Object(m) => m.get(seg),
        Value::Array(a) => seg.parse::<usize>().ok().and_then(|i| a.get(i)),
        _ => None,
    })
}

fn scalar_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn strip_letter_label(s: &str) -> String {
    static_label_re().replace(s, "").trim().to_string()
}

fn static_label_re() -> &'static Regex {
    use std::sync::OnceLock;
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*\(?[A-Za-z][\).:]\s*").expect("valid regex"))
}

/// Maps each source record through `spec`.
///
/// Each output record passes [`validate_question`]; anything else is a
/// `MappingError` naming the record and field.
pub fn apply_adapter(raw: &[Value], spec: &AdapterSpec) -> Result<Vec<QuestionRecord>, IngestError> {
    spec.validate()?;
    let inline_re = match spec.option_style {
        OptionStyle::Inline => Some(
            Regex::new(spec.inline_pattern.as_deref().unwrap_or(DEFAULT_INLINE_PATTERN))
                .map_err(|e| IngestError::InvalidAdapter(e.to_string()))?,
        ),
        _ => None,
    };
    raw.iter()
        .enumerate()
        .map(|(i, src)| adapt_one(i, src, spec, inline_re.as_ref()))
        .collect()
}

fn adapt_one(
    index: usize,
    src: &Value,
    spec: &AdapterSpec,
    inline_re: Option<&Regex>,
) -> Result<QuestionRecord, IngestError> {
    let mut record_ref = format!("#{index}");
    let err = |record: &str, field: &str, reason: String| IngestError::MappingError {
        record: record.to_string(),
        field: field.to_string(),
        reason,
    };
    let field = |name: &str| -> Option<Value> {
        spec.field_map
            .get(name)
            .and_then(|p| lookup(src, p))
            .filter(|v| !v.is_null())
            .cloned()
            .or_else(|| spec.defaults.get(name).cloned())
    };
    let string_field = |name: &str, record: &str| -> Result<String, IngestError> {
        let v = field(name).ok_or_else(|| err(record, name, "missing".into()))?;
        scalar_string(&v).ok_or_else(|| err(record, name, format!("expected a string, got {v}")))
    };

    let id = string_field("id", &record_ref)?;
    record_ref = id.clone();
    let benchmark = string_field("benchmark", &record_ref).unwrap_or_default();
    let video_ref = string_field("video_ref", &record_ref)?;
    let duration_s = match field("duration_s") {
        None => None,
        Some(v) => Some(
            v.as_f64()
                .or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
                .ok_or_else(|| err(&record_ref, "duration_s", format!("not a number: {v}")))?,
        ),
    };
    let mut question = string_field("question", &record_ref)?;

    let options: Vec<String> = match spec.option_style {
        OptionStyle::List => {
            let v = field("options").ok_or_else(|| err(&record_ref, "options", "missing".into()))?;
            let arr = v.as_array().ok_or_else(|| err(&record_ref, "options", "expected an array".into()))?;
            arr.iter()
                .map(|o| {
                    scalar_string(o)
                        .map(|s| if spec.strip_letter_prefix { strip_letter_label(&s) } else { s })
                        .ok_or_else(|| err(&record_ref, "options", format!("non-string option {o}")))
                })
                .collect::<Result<_, _>>()?
        }
        OptionStyle::LetterKeyed => {
            let v = field("options").ok_or_else(|| err(&record_ref, "options", "missing".into()))?;
            let obj = v.as_object().ok_or_else(|| err(&record_ref, "options", "expected an object".into()))?;
            let mut out = Vec::new();
            for letter in 'A'..='Z' {
                match obj.get(&letter.to_string()).and_then(scalar_string) {
                    Some(s) => out.push(s),
                    None => break,
                }
            }
            out
        }
        OptionStyle::Inline => {
            let re = inline_re.expect("inline regex compiled");
            let mut out = Vec::new();
            let mut first_start = None;
            for caps in re.captures_iter(&question) {
                let letter = caps.get(1).map(|m| m.as_str()).unwrap_or_default();
                let expected = (b'A' + out.len() as u8) as char;
                if !letter.starts_with(expected) || letter.len() != 1 {
                    break;
                }
                first_start.get_or_insert(caps.get(0).expect("group 0").start());
                out.push(caps.get(2).map(|m| m.as_str().trim().to_string()).unwrap_or_default());
            }
            if let Some(start) = first_start {
                question = question[..start].trim().to_string();
            }
            out
        }
    };
    if options.is_empty() {
        return Err(err(&record_ref, "options", "no options found".into()));
    }

    let gold_v = field("gold").ok_or_else(|| err(&record_ref, "gold", "missing".into()))?;
    let gold = match spec.gold_style {
        GoldStyle::Index => gold_v
            .as_u64()
            .map(|g| g as usize)
            .or_else(|| gold_v.as_str().and_then(|s| s.trim().parse().ok()))
            .ok_or_else(|| err(&record_ref, "gold", format!("not an index: {gold_v}")))?,
        GoldStyle::Letter => {
            let s = scalar_string(&gold_v).unwrap_or_default();
            let letters: Vec<char> = s.chars().filter(|c| c.is_ascii_alphabetic()).collect();
            match letters.as_slice() {
                [c] => letter_index(*c).ok_or_else(|| err(&record_ref, "gold", format!("bad letter `{s}`")))?,
                _ => return Err(err(&record_ref, "gold", format!("expected a single letter, got `{s}`"))),
            }
        }
        GoldStyle::Text => {
            let s = scalar_string(&gold_v).unwrap_or_default();
            let target = normalize_text(&s);
            let hits: Vec<usize> = options
                .iter()
                .enumerate()
                .filter(|(_, o)| !target.is_empty() && normalize_text(o) == target)
                .map(|(i, _)| i)
                .collect();
            match hits.as_slice() {
                [i] => *i,
                [] => return Err(err(&record_ref, "gold", format!("`{s}` matches no option"))),
                _ => return Err(err(&record_ref, "gold", format!("`{s}` matches several options"))),
            }
        }
    };

    let mut tags = BTreeMap::new();
    let tag_keys = spec
        .field_map
        .keys()
        .chain(spec.defaults.keys())
        .filter_map(|k| k.strip_prefix("tags."));
    for name in tag_keys {
        if let Some(v) = field(&format!("tags.{name}")).as_ref().and_then(scalar_string) {
            tags.insert(name.to_string(), v);
        }
    }

    let record = QuestionRecord { id, benchmark, video_ref, duration_s, question, options, gold, tags };
    let violations = validate_question(&record);
    if let Some(first) = violations.first() {
        let field = first.split_whitespace().next().unwrap_or("record");
        let field = field.split('[').next().unwrap_or(field);
        return Err(err(&record_ref, field, violations.join("; ")));
    }
    Ok(record)
}

/// Parses a source file as either a JSON array or JSON lines.
pub fn parse_source(text: &str) -> Result<Vec<Value>, IngestError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| IngestError::MalformedLine {
            line_no: e.line(),
            reason: e.to_string(),
        });
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| IngestError::MalformedLine { line_no: i + 1, reason: e.to_string() })
        })
        .collect()
}
