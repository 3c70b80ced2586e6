//! Category assignment from a question's verdict matrix.
//!
//! Rules fire in order:
//!
//! 1. `LLM_ANSWERABLE` when both judges are correct on TEXT_ONLY;
//! 2. `SEMANTIC` when both judges are correct on ORDERED, SHUFFLE_1 and SHUFFLE_2;
//! 3. `TEMPORAL` when some judge is correct on ORDERED and broken by shuffling,
//!    where "broken" is set by [`ShuffleBreakRule`];
//! 4. `OTHERS` otherwise.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{make_composition, Category, CompositionError, CompositionStats, ConditionKind, VerdictMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("verdict matrix for {0} is incomplete (needs 2 judges x 4 conditions)")]
    IncompleteMatrix(String),
    #[error(transparent)]
    Composition(#[from] CompositionError),
}

/// How many shuffle runs must fail for a judge to count as broken by shuffling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ShuffleBreakRule {
    /// Wrong on both shuffles.
    #[default]
    All,
    /// Wrong on at least one shuffle.
    Any,
}

impl std::str::FromStr for ShuffleBreakRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Ok(Self::All),
            "any" => Ok(Self::Any),
            _ => Err(format!("shuffle rule must be `all` or `any`, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierPolicy {
    pub shuffle_break_rule: ShuffleBreakRule,
}

impl ClassifierPolicy {
    pub fn new(shuffle_break_rule: ShuffleBreakRule) -> Self {
        Self { shuffle_break_rule }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    TextOnlyBoth,
    ShuffleRobustBoth,
    ShuffleBroken,
    Residual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub rule: Rule,
    /// Judges that triggered the rule.
    pub judges: Vec<String>,
}

pub fn classify(v: &VerdictMatrix, policy: ClassifierPolicy) -> Result<(Category, Trace), ClassifyError> {
    if !v.is_complete() {
        return Err(ClassifyError::IncompleteMatrix(v.question_id.clone()));
    }
    let ok = |j: usize, k: ConditionKind| v.judges[j].correct(k).unwrap_or(false);
    let ids = |js: &[usize]| js.iter().map(|&j| v.judges[j].judge_id.clone()).collect::<Vec<_>>();

    if ok(0, ConditionKind::TextOnly) && ok(1, ConditionKind::TextOnly) {
        return Ok((Category::LlmAnswerable, Trace { rule: Rule::TextOnlyBoth, judges: ids(&[0, 1]) }));
    }
    let robust = |j| {
        ok(j, ConditionKind::Ordered) && ok(j, ConditionKind::Shuffle1) && ok(j, ConditionKind::Shuffle2)
    };
    if robust(0) && robust(1) {
        return Ok((Category::Semantic, Trace { rule: Rule::ShuffleRobustBoth, judges: ids(&[0, 1]) }));
    }
    let broken = |j| {
        let (s1, s2) = (ok(j, ConditionKind::Shuffle1), ok(j, ConditionKind::Shuffle2));
        let shuffle_broken = match policy.shuffle_break_rule {
            ShuffleBreakRule::All => !s1 && !s2,
            ShuffleBreakRule::Any => !s1 || !s2,
        };
        ok(j, ConditionKind::Ordered) && shuffle_broken
    };
    let triggered: Vec<usize> = (0..2).filter(|&j| broken(j)).collect();
    if !triggered.is_empty() {
        return Ok((Category::Temporal, Trace { rule: Rule::ShuffleBroken, judges: ids(&triggered) }));
    }
    Ok((Category::Others, Trace { rule: Rule::Residual, judges: Vec::new() }))
}

/// One line of the assignment file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentEntry {
    pub id: String,
    pub category: Category,
    pub rule: Rule,
    pub judges: Vec<String>,
}

/// Per-question categories, in benchmark order, plus excluded questions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryAssignment {
    pub entries: Vec<AssignmentEntry>,
    #[serde(default)]
    pub unresolved: Vec<String>,
}

impl CategoryAssignment {
    pub fn counts(&self) -> BTreeMap<Category, u64> {
        let mut counts: BTreeMap<Category, u64> = Category::ALL.iter().map(|c| (*c, 0)).collect();
        for e in &self.entries {
            *counts.get_mut(&e.category).expect("all categories present") += 1;
        }
        counts
    }

    pub fn category_of(&self) -> BTreeMap<&str, Category> {
        self.entries.iter().map(|e| (e.id.as_str(), e.category)).collect()
    }

    pub fn ids_in(&self, c: Category) -> impl Iterator<Item = &str> {
        self.entries.iter().filter(move |e| e.category == c).map(|e| e.id.as_str())
    }

    /// Writes one `{"id", "category", "rule", "judges"}` object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> std::io::Result<Self> {
        let mut entries = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
        }
        Ok(Self { entries, unresolved: Vec::new() })
    }
}

/// Classifies every matrix and computes the composition. Unresolved question
/// ids are carried along but do not enter the denominators.
pub fn classify_benchmark<'a, I>(
    matrices: I,
    unresolved: &[String],
    policy: ClassifierPolicy,
) -> Result<(CategoryAssignment, CompositionStats), ClassifyError>
where
    I: IntoIterator<Item = &'a VerdictMatrix>,
{
    let entries = matrices
        .into_iter()
        .map(|m| {
            classify(m, policy).map(|(category, trace)| AssignmentEntry {
                id: m.question_id.clone(),
                category,
                rule: trace.rule,
                judges: trace.judges,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let assignment = CategoryAssignment { entries, unresolved: unresolved.to_vec() };
    let stats = make_composition(&assignment.counts())?;
    Ok((assignment, stats))
}
