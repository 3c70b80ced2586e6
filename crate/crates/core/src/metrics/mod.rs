//! Per-category model scores, the VBenchComp score, rank agreement and
//! report emission.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::CategoryAssignment;
use crate::model::{Category, Verdict};

mod correlation;
mod gaps;
mod report;

pub use correlation::{correlation, pearson, rank_average, spearman, CorrelationReport};
pub use gaps::{profile_gaps, Finding, FindingKind, GapThresholds};
pub use report::{composition_row, emit_report, points_csv, render_markdown, scores_csv, Report, ReportFormat};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("missing verdicts for {} questions (first: {})", .0.len(), .0.first().map(String::as_str).unwrap_or(""))]
    MissingVerdicts(Vec<String>),
    #[error("assignment is empty")]
    EmptyAssignment,
    #[error("need at least 3 points for correlation, got {0}")]
    TooFewPoints(usize),
    #[error("report io error: {0}")]
    IoFailure(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStat {
    pub n: u64,
    /// Present when scored from verdicts; absent when built from published accuracies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<u64>,
    /// Percent; absent for empty categories.
    pub accuracy: Option<f64>,
}

/// An evaluated model's accuracy per category, overall and on SEMANTIC + TEMPORAL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScores {
    pub model_id: String,
    pub categories: BTreeMap<Category, CategoryStat>,
    pub overall: f64,
    pub vbenchcomp: Option<f64>,
}

impl CategoryScores {
    pub fn accuracy(&self, c: Category) -> Option<f64> {
        self.categories.get(&c).and_then(|s| s.accuracy)
    }

    pub fn n(&self, c: Category) -> u64 {
        self.categories.get(&c).map_or(0, |s| s.n)
    }

    /// `sum(n_c * acc_c) / sum(n_c)` over non-empty categories.
    pub fn weighted_mean(&self) -> f64 {
        weighted_mean(self.categories.values().filter_map(|s| s.accuracy.map(|a| (s.n, a))))
    }

    /// Builds scores from per-category sizes and accuracies (percent).
    pub fn from_accuracies(model_id: &str, stats: &BTreeMap<Category, (u64, f64)>) -> Result<Self, MetricsError> {
        let categories: BTreeMap<Category, CategoryStat> = Category::ALL
            .iter()
            .map(|c| {
                let (n, acc) = stats.get(c).copied().unwrap_or((0, 0.0));
                (*c, CategoryStat { n, correct: None, accuracy: (n > 0).then_some(acc) })
            })
            .collect();
        if categories.values().all(|s| s.n == 0) {
            return Err(MetricsError::EmptyAssignment);
        }
        let overall = weighted_mean(categories.values().filter_map(|s| s.accuracy.map(|a| (s.n, a))));
        let vbenchcomp = focused_mean(&categories);
        Ok(Self { model_id: model_id.to_string(), categories, overall, vbenchcomp })
    }
}

pub fn weighted_mean<I: IntoIterator<Item = (u64, f64)>>(items: I) -> f64 {
    let (num, den) = items
        .into_iter()
        .fold((0.0, 0u64), |(num, den), (n, acc)| (num + n as f64 * acc, den + n));
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

fn focused_mean(categories: &BTreeMap<Category, CategoryStat>) -> Option<f64> {
    let focused: Vec<(u64, f64)> = [Category::Semantic, Category::Temporal]
        .iter()
        .filter_map(|c| categories.get(c))
        .filter_map(|s| s.accuracy.map(|a| (s.n, a)))
        .collect();
    (!focused.is_empty()).then(|| weighted_mean(focused))
}

/// Scores one evaluated model against a fixed category assignment.
pub fn category_scores(
    model_id: &str,
    verdicts: &BTreeMap<String, Verdict>,
    assignment: &CategoryAssignment,
) -> Result<CategoryScores, MetricsError> {
    if assignment.entries.is_empty() {
        return Err(MetricsError::EmptyAssignment);
    }
    let missing: Vec<String> = assignment
        .entries
        .iter()
        .filter(|e| !verdicts.contains_key(&e.id))
        .map(|e| e.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingVerdicts(missing));
    }
    let mut tally: BTreeMap<Category, (u64, u64)> = Category::ALL.iter().map(|c| (*c, (0, 0))).collect();
    for e in &assignment.entries {
        let t = tally.get_mut(&e.category).expect("all categories present");
        t.0 += 1;
        t.1 += u64::from(verdicts[&e.id].correct);
    }
    let categories: BTreeMap<Category, CategoryStat> = tally
        .into_iter()
        .map(|(c, (n, correct))| {
            let accuracy = (n > 0).then(|| 100.0 * correct as f64 / n as f64);
            (c, CategoryStat { n, correct: Some(correct), accuracy })
        })
        .collect();
    let (n_all, c_all) = categories
        .values()
        .fold((0u64, 0u64), |(n, c), s| (n + s.n, c + s.correct.unwrap_or(0)));
    let overall = 100.0 * c_all as f64 / n_all as f64;
    let vbenchcomp = {
        let pick = |c: Category| categories.get(&c).map_or((0, 0), |s| (s.n, s.correct.unwrap_or(0)));
        let (ns, cs) = pick(Category::Semantic);
        let (nt, ct) = pick(Category::Temporal);
        (ns + nt > 0).then(|| 100.0 * (cs + ct) as f64 / (ns + nt) as f64)
    };
    Ok(CategoryScores { model_id: model_id.to_string(), categories, overall, vbenchcomp })
}

/// Question ids in SEMANTIC or TEMPORAL, in assignment order.
pub fn vbenchcomp_subset(assignment: &CategoryAssignment) -> Vec<String> {
    assignment
        .entries
        .iter()
        .filter(|e| matches!(e.category, Category::Semantic | Category::Temporal))
        .map(|e| e.id.clone())
        .collect()
}

/// Fraction of graded responses that could not be parsed into an option.
pub fn unparseable_rate<'a, I: IntoIterator<Item = &'a Verdict>>(verdicts: I) -> Option<f64> {
    let (n, bad) = verdicts
        .into_iter()
        .fold((0u64, 0u64), |(n, b), v| (n + 1, b + u64::from(v.unparseable)));
    (n > 0).then(|| bad as f64 / n as f64)
}
