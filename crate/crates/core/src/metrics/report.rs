use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{correlation, profile_gaps, CategoryScores, CorrelationReport, Finding, GapThresholds, MetricsError};
use crate::classifier::ShuffleBreakRule;
use crate::model::{format_1dp, Category, CompositionStats};
use crate::orchestrator::CostLedger;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Md,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "md" | "markdown" => Ok(Self::Md),
            _ => Err(format!("unknown report format `{s}` (json, csv, md)")),
        }
    }
}

/// Everything known about one benchmark after classification and scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub benchmark: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub shuffle_break_rule: ShuffleBreakRule,
    pub composition: CompositionStats,
    #[serde(default)]
    pub unresolved: Vec<String>,
    /// Fraction of judge responses with no parseable option.
    #[serde(default)]
    pub unparseable_rate: Option<f64>,
    pub scores: Vec<CategoryScores>,
    pub correlation: Option<CorrelationReport>,
    pub findings: Vec<Finding>,
    pub ledger: CostLedger,
}

impl Report {
    /// Derives findings at default thresholds and, with three or more scored
    /// models, the overall/VBenchComp correlation.
    pub fn new(
        benchmark: &str,
        composition: CompositionStats,
        scores: Vec<CategoryScores>,
        ledger: CostLedger,
    ) -> Self {
        let points: Vec<(String, f64, f64)> = scores
            .iter()
            .filter_map(|s| s.vbenchcomp.map(|v| (s.model_id.clone(), s.overall, v)))
            .collect();
        let correlation = correlation(&points).ok();
        let findings = profile_gaps(&composition, &GapThresholds::default());
        Self {
            benchmark: benchmark.to_string(),
            seed: None,
            shuffle_break_rule: ShuffleBreakRule::default(),
            composition,
            unresolved: Vec::new(),
            unparseable_rate: None,
            scores,
            correlation,
            findings,
            ledger,
        }
    }
}

fn acc_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), format_1dp)
}

/// Composition table row: `| name | total | n / p% | ... |`.
pub fn composition_row(benchmark: &str, stats: &CompositionStats) -> String {
    let mut row = format!("| {benchmark} | {} |", stats.total);
    for c in Category::ALL {
        let _ = write!(row, " {} |", stats.cell(c));
    }
    row
}

pub fn render_markdown(r: &Report) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# VBenchComp report: {}\n", r.benchmark);
    if let Some(seed) = r.seed {
        let _ = writeln!(md, "Seed: {seed}  ");
    }
    let _ = writeln!(md, "Shuffle-break rule: {:?}\n", r.shuffle_break_rule);

    md.push_str("## Composition\n\n");
    md.push_str("| Dataset | Total |");
    for c in Category::ALL {
        let _ = write!(md, " {} |", c.heading());
    }
    md.push_str("\n|---|---|---|---|---|---|\n");
    md.push_str(&composition_row(&r.benchmark, &r.composition));
    md.push_str("\n\n");
    let _ = writeln!(md, "Unresolved questions: {}", r.unresolved.len());
    if let Some(u) = r.unparseable_rate {
        let _ = writeln!(md, "Unparseable judge responses: {:.2}%", 100.0 * u);
    }
    md.push('\n');

    md.push_str("## Findings\n\n");
    if r.findings.is_empty() {
        md.push_str("No composition advisories at the configured thresholds.\n\n");
    } else {
        for f in &r.findings {
            let _ = writeln!(md, "- {:?} ({:.2}% vs {:.0}%): {}", f.kind, 100.0 * f.ratio, 100.0 * f.threshold, f.message);
        }
        md.push('\n');
    }

    if !r.scores.is_empty() {
        md.push_str("## Model scores\n\n| Model | Overall |");
        for c in Category::ALL {
            let _ = write!(md, " {} |", c.heading());
        }
        md.push_str(" VBenchComp |\n|---|---|---|---|---|---|---|\n");
        for s in &r.scores {
            let _ = write!(md, "| {} | {} |", s.model_id, format_1dp(s.overall));
            for c in Category::ALL {
                let _ = write!(md, " {} |", acc_cell(s.accuracy(c)));
            }
            let _ = writeln!(md, " {} |", acc_cell(s.vbenchcomp));
        }
        md.push('\n');
        if let Some(c) = &r.correlation {
            let coef = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"));
            let _ = writeln!(
                md,
                "Overall vs VBenchComp over {} models: Spearman rho = {}, Pearson r = {}\n",
                c.model_ids.len(),
                coef(c.spearman_rho),
                coef(c.pearson_r)
            );
        }
    }

    md.push_str("## Cost\n\n");
    md.push_str("| Benchmark | Number of Questions | Backend | Requests | Live calls | Cache hits | Retries | Wall-clock (s) | Prompt tokens | Completion tokens |\n");
    md.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for (name, bench) in &r.ledger.benchmarks {
        let rows = bench.backends.iter().map(|(id, c)| (id.as_str(), c.clone())).chain([("all", bench.total())]);
        for (id, c) in rows {
            let _ = writeln!(
                md,
                "| {name} | {} | {id} | {} | {} | {} | {} | {:.1} | {} | {} |",
                bench.questions,
                c.requests,
                c.live_calls,
                c.cache_hits,
                c.retries,
                c.wall_clock_s,
                c.prompt_tokens,
                c.completion_tokens
            );
        }
    }
    md
}

/// `model_id,category,n,correct,accuracy,overall,vbenchcomp`, one row per model and category.
pub fn scores_csv(scores: &[CategoryScores]) -> String {
    let mut out = String::from("model_id,category,n,correct,accuracy,overall,vbenchcomp\n");
    let opt = |v: Option<f64>| v.map_or_else(String::new, format_1dp);
    for s in scores {
        for c in Category::ALL {
            let stat = s.categories.get(&c);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.model_id,
                c.as_str(),
                stat.map_or(0, |x| x.n),
                stat.and_then(|x| x.correct).map_or_else(String::new, |x| x.to_string()),
                opt(s.accuracy(c)),
                format_1dp(s.overall),
                opt(s.vbenchcomp)
            );
        }
    }
    out
}

/// `model_id,overall,vbenchcomp` scatter points; models without a VBenchComp score are skipped.
pub fn points_csv(scores: &[CategoryScores]) -> String {
    let mut out = String::from("model_id,overall,vbenchcomp\n");
    for s in scores {
        if let Some(v) = s.vbenchcomp {
            let _ = writeln!(out, "{},{},{}", s.model_id, format_1dp(s.overall), format_1dp(v));
        }
    }
    out
}

fn write(path: PathBuf, contents: &[u8]) -> Result<PathBuf, MetricsError> {
    fs::write(&path, contents).map_err(|e| MetricsError::IoFailure(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("report types serialize");
    bytes.push(b'\n');
    bytes
}

/// Writes the requested formats into `out_dir` and returns the paths written.
///
/// JSON: `report.json`, `composition.json`, `ledger.json`.
/// CSV: `scores.csv`, `figure5_points.csv` (skipped without scores).
/// MD: `report.md`.
pub fn emit_report(r: &Report, formats: &[ReportFormat], out_dir: &Path) -> Result<Vec<PathBuf>, MetricsError> {
    fs::create_dir_all(out_dir).map_err(|e| MetricsError::IoFailure(format!("{}: {e}", out_dir.display())))?;
    let mut written = Vec::new();
    let mut formats = formats.to_vec();
    formats.sort();
    formats.dedup();
    for f in formats {
        match f {
            ReportFormat::Json => {
                written.push(write(out_dir.join("report.json"), &json(r))?);
                written.push(write(out_dir.join("composition.json"), &json(&r.composition))?);
                written.push(write(out_dir.join("ledger.json"), &json(&r.ledger))?);
            }
            ReportFormat::Csv => {
                if !r.scores.is_empty() {
                    written.push(write(out_dir.join("scores.csv"), scores_csv(&r.scores).as_bytes())?);
                    written.push(write(out_dir.join("figure5_points.csv"), points_csv(&r.scores).as_bytes())?);
                }
            }
            ReportFormat::Md => {
                written.push(write(out_dir.join("report.md"), render_markdown(r).as_bytes())?);
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_composition;
    use std::collections::BTreeMap;

    fn videomme() -> CompositionStats {
        let m: BTreeMap<Category, u64> = Category::ALL.iter().copied().zip([841, 810, 371, 678]).collect();
        make_composition(&m).unwrap()
    }

    fn scores(id: &str, accs: [f64; 4]) -> CategoryScores {
        let m = Category::ALL.iter().copied().zip([841, 810, 371, 678].into_iter().zip(accs)).collect();
        CategoryScores::from_accuracies(id, &m).unwrap()
    }

    #[test]
    fn composition_only_report() {
        let mut ledger = CostLedger::default();
        ledger.benchmark_mut("VideoMME").questions = 2700;
        ledger.backend_mut("VideoMME", "gpt").record_hit();
        let r = Report::new("VideoMME", videomme(), vec![], ledger);
        let md = render_markdown(&r);
        assert!(md.contains("| VideoMME | 2700 | 841 / 31.15% | 810 / 30.00% | 371 / 13.74% | 678 / 25.11% |"));
        assert!(!md.contains("## Model scores"));
        assert!(md.contains("| VideoMME | 2700 | gpt |"));
        assert!(r.correlation.is_none());

        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&r, &[ReportFormat::Md, ReportFormat::Csv, ReportFormat::Json], dir.path()).unwrap();
        let names: Vec<_> = files.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_string()).collect();
        assert_eq!(names, ["report.json", "composition.json", "ledger.json", "report.md"]);
    }

    #[test]
    fn json_round_trip_preserves_scores() {
        let s = vec![
            scores("a", [77.8, 78.4, 36.7, 31.1]),
            scores("b", [70.1, 75.3, 33.3, 30.0]),
            scores("c", [80.0, 81.2, 40.4, 35.5]),
        ];
        let r = Report::new("VideoMME", videomme(), s, CostLedger::default());
        assert!(r.correlation.is_some());
        let dir = tempfile::tempdir().unwrap();
        emit_report(&r, &[ReportFormat::Json, ReportFormat::Csv], dir.path()).unwrap();
        let back: Report = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, r);
        let csv = fs::read_to_string(dir.path().join("scores.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 3 * 4);
        assert!(csv.contains("a,SEMANTIC,810,,78.4,60.6,65.3"));
        let pts = fs::read_to_string(dir.path().join("figure5_points.csv")).unwrap();
        assert_eq!(pts.lines().nth(1), Some("a,60.6,65.3"));
    }

    #[test]
    fn format_parsing() {
        assert_eq!("MD".parse::<ReportFormat>(), Ok(ReportFormat::Md));
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
