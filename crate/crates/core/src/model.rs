//! Shared domain vocabulary: questions, probe conditions, verdicts, categories
//! and benchmark composition.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frameplan::Permutation;

/// Smallest and largest number of options a question may carry (A..Z).
pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 26;

/// One canonical multiple-choice QA item bound to a video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub benchmark: String,
    pub video_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    pub question: String,
    pub options: Vec<String>,
    /// 0-based index into `options`.
    pub gold: usize,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

/// Converts a 0-based option index to its letter (`0 -> 'A'`).
pub fn option_letter(index: usize) -> Option<char> {
    (index < MAX_OPTIONS).then(|| (b'A' + index as u8) as char)
}

/// Converts an option letter (either case) to its 0-based index.
pub fn letter_index(letter: char) -> Option<usize> {
    let up = letter.to_ascii_uppercase();
    up.is_ascii_uppercase().then(|| (up as u8 - b'A') as usize)
}

/// Checks a single record. Violations are returned as data, each naming the field.
pub fn validate_question(q: &QuestionRecord) -> Vec<String> {
    let mut out = Vec::new();
    if q.id.trim().is_empty() {
        out.push("id is empty".to_string());
    }
    if q.question.trim().is_empty() {
        out.push("question is empty".to_string());
    }
    if q.options.len() < MIN_OPTIONS || q.options.len() > MAX_OPTIONS {
        out.push(format!(
            "options count {} outside {MIN_OPTIONS}..={MAX_OPTIONS}",
            q.options.len()
        ));
    }
    for (i, opt) in q.options.iter().enumerate() {
        if opt.trim().is_empty() {
            out.push(format!("options[{i}] is empty"));
        }
    }
    if q.gold >= q.options.len() {
        out.push("gold out of range".to_string());
    }
    if let Some(d) = q.duration_s {
        if !(d.is_finite() && d >= 0.0) {
            out.push("duration_s must be a nonnegative number".to_string());
        }
    }
    out
}

/// Checks every record in a batch, plus id uniqueness across the batch.
pub fn validate_batch(records: &[QuestionRecord]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for q in records {
        for v in validate_question(q) {
            out.push((q.id.clone(), v));
        }
        if !seen.insert(q.id.as_str()) {
            out.push((q.id.clone(), "duplicate id".to_string()));
        }
    }
    out
}

/// The four presentation conditions a judge is probed under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConditionKind {
    TextOnly,
    Ordered,
    #[serde(rename = "SHUFFLE_1")]
    Shuffle1,
    #[serde(rename = "SHUFFLE_2")]
    Shuffle2,
}

impl ConditionKind {
    pub const ALL: [ConditionKind; 4] = [
        ConditionKind::TextOnly,
        ConditionKind::Ordered,
        ConditionKind::Shuffle1,
        ConditionKind::Shuffle2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionKind::TextOnly => "TEXT_ONLY",
            ConditionKind::Ordered => "ORDERED",
            ConditionKind::Shuffle1 => "SHUFFLE_1",
            ConditionKind::Shuffle2 => "SHUFFLE_2",
        }
    }

    /// Shuffle round (1 or 2) for the shuffled conditions.
    pub fn shuffle_round(self) -> Option<u8> {
        match self {
            ConditionKind::Shuffle1 => Some(1),
            ConditionKind::Shuffle2 => Some(2),
            _ => None,
        }
    }

    pub fn uses_video(self) -> bool {
        self != ConditionKind::TextOnly
    }
}

impl fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConditionError {
    #[error("{0} must not carry a permutation")]
    UnexpectedPermutation(ConditionKind),
    #[error("{0} requires a permutation")]
    MissingPermutation(ConditionKind),
    #[error("{kind} permutation has round {round}")]
    RoundMismatch { kind: ConditionKind, round: u8 },
    #[error("{0} permutation is the identity")]
    IdentityPermutation(ConditionKind),
}

/// A probe condition; shuffled kinds carry their permutation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeCondition {
    pub kind: ConditionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Permutation>,
}

impl ProbeCondition {
    pub fn text_only() -> Self {
        Self { kind: ConditionKind::TextOnly, permutation: None }
    }

    pub fn ordered() -> Self {
        Self { kind: ConditionKind::Ordered, permutation: None }
    }

    pub fn shuffled(permutation: Permutation) -> Result<Self, ConditionError> {
        let kind = match permutation.round {
            1 => ConditionKind::Shuffle1,
            _ => ConditionKind::Shuffle2,
        };
        Self::new(kind, Some(permutation))
    }

    pub fn new(kind: ConditionKind, permutation: Option<Permutation>) -> Result<Self, ConditionError> {
        match (kind.shuffle_round(), &permutation) {
            (None, Some(_)) => return Err(ConditionError::UnexpectedPermutation(kind)),
            (Some(_), None) => return Err(ConditionError::MissingPermutation(kind)),
            (Some(round), Some(p)) => {
                if p.round != round {
                    return Err(ConditionError::RoundMismatch { kind, round: p.round });
                }
                if p.order.len() >= 2 && p.is_identity() {
                    return Err(ConditionError::IdentityPermutation(kind));
                }
            }
            (None, None) => {}
        }
        Ok(Self { kind, permutation })
    }
}

/// Graded outcome of one response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<usize>,
    pub raw_text: String,
    #[serde(default)]
    pub unparseable: bool,
}

impl Verdict {
    /// Minimal verdict carrying only correctness, used by fixtures and oracles.
    pub fn bare(correct: bool) -> Self {
        Self { correct, parsed: None, raw_text: String::new(), unparseable: false }
    }
}

/// One judge's row of the verdict matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdicts {
    pub judge_id: String,
    pub verdicts: BTreeMap<ConditionKind, Verdict>,
}

impl JudgeVerdicts {
    pub fn is_complete(&self) -> bool {
        ConditionKind::ALL.iter().all(|k| self.verdicts.contains_key(k))
    }

    pub fn correct(&self, kind: ConditionKind) -> Option<bool> {
        self.verdicts.get(&kind).map(|v| v.correct)
    }
}

/// Per-question grid of verdicts over the two judges and four conditions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictMatrix {
    pub question_id: String,
    pub judges: Vec<JudgeVerdicts>,
}

impl VerdictMatrix {
    pub fn is_complete(&self) -> bool {
        self.judges.len() == 2 && self.judges.iter().all(JudgeVerdicts::is_complete)
    }

    /// Builds a matrix from two rows of booleans in `ConditionKind::ALL` order.
    pub fn from_bools(question_id: &str, judge_ids: [&str; 2], rows: [[bool; 4]; 2]) -> Self {
        let judges = judge_ids
            .iter()
            .zip(rows.iter())
            .map(|(id, row)| JudgeVerdicts {
                judge_id: id.to_string(),
                verdicts: ConditionKind::ALL
                    .iter()
                    .zip(row.iter())
                    .map(|(k, c)| (*k, Verdict::bare(*c)))
                    .collect(),
            })
            .collect();
        Self { question_id: question_id.to_string(), judges }
    }
}

/// Diagnostic question category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    LlmAnswerable,
    Semantic,
    Temporal,
    Others,
}

impl Category {
    pub const ALL: [Category; 4] =
        [Category::LlmAnswerable, Category::Semantic, Category::Temporal, Category::Others];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::LlmAnswerable => "LLM_ANSWERABLE",
            Category::Semantic => "SEMANTIC",
            Category::Temporal => "TEMPORAL",
            Category::Others => "OTHERS",
        }
    }

    /// Short column heading used in tables.
    pub fn heading(self) -> &'static str {
        match self {
            Category::LlmAnswerable => "LLM",
            Category::Semantic => "Semantic",
            Category::Temporal => "Temporal",
            Category::Others => "Others",
        }
    }

    /// Ratio symbol for the category (alpha, beta, gamma, delta).
    pub fn ratio_symbol(self) -> &'static str {
        match self {
            Category::LlmAnswerable => "alpha",
            Category::Semantic => "beta",
            Category::Temporal => "gamma",
            Category::Others => "delta",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompositionError {
    #[error("composition total is zero")]
    ZeroTotal,
}

/// Benchmark-level category counts and ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionStats {
    pub total: u64,
    pub counts: BTreeMap<Category, u64>,
    pub ratios: BTreeMap<Category, f64>,
}

impl CompositionStats {
    pub fn count(&self, c: Category) -> u64 {
        self.counts.get(&c).copied().unwrap_or(0)
    }

    pub fn ratio(&self, c: Category) -> f64 {
        self.ratios.get(&c).copied().unwrap_or(0.0)
    }

    /// Percentage of `c`, rounded half-up to two decimals, e.g. `"31.15"`.
    pub fn percent_str(&self, c: Category) -> String {
        percent_2dp(self.count(c), self.total)
    }

    /// Table-style cell, e.g. `"841 / 31.15%"`.
    pub fn cell(&self, c: Category) -> String {
        format!("{} / {}%", self.count(c), self.percent_str(c))
    }
}

pub fn make_composition(counts: &BTreeMap<Category, u64>) -> Result<CompositionStats, CompositionError> {
    let total: u64 = Category::ALL.iter().map(|c| counts.get(c).copied().unwrap_or(0)).sum();
    if total == 0 {
        return Err(CompositionError::ZeroTotal);
    }
    let counts: BTreeMap<Category, u64> = Category::ALL
        .iter()
        .map(|c| (*c, counts.get(c).copied().unwrap_or(0)))
        .collect();
    let ratios = counts.iter().map(|(c, n)| (*c, *n as f64 / total as f64)).collect();
    Ok(CompositionStats { total, counts, ratios })
}

/// `100 * count / total` rounded half-up to 2 decimals, computed in integers.
pub fn percent_2dp(count: u64, total: u64) -> String {
    if total == 0 {
        return "0.00".to_string();
    }
    let hundredths = (2 * count as u128 * 10_000 + total as u128) / (2 * total as u128);
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

/// `100 * num / den` rounded half-up to 1 decimal, computed in integers.
pub fn percent_1dp(num: u64, den: u64) -> String {
    if den == 0 {
        return "-".to_string();
    }
    let tenths = (2 * num as u128 * 1_000 + den as u128) / (2 * den as u128);
    format!("{}.{}", tenths / 10, tenths % 10)
}

/// Rounds a percentage value half-up to one decimal for display.
pub fn format_1dp(value: f64) -> String {
    // The small bias absorbs binary representation error at exact .x5 ties.
    let tenths = (value * 10.0 + 0.5 + 1e-9).floor();
    format!("{:.1}", tenths / 10.0)
}
