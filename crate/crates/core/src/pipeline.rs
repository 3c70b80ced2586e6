//! Directory-level steps shared by the command-line tool and end-to-end tests.
//!
//! Each step reads the previous step's files from an output directory:
//!
//! | step     | writes |
//! |----------|--------|
//! | probe    | `session.json`, `verdicts.json`, `ledger.json` |
//! | classify | `assignment.jsonl`, `composition.json`, `classify.json` |
//! | score    | `scores.json`, `scores.csv`, `figure5_points.csv` |
//! | report   | `report.md`, `report.json`, `composition.json`, `ledger.json` |

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{classify_benchmark, CategoryAssignment, ClassifierPolicy, ClassifyError, ShuffleBreakRule};
use crate::ingest::BenchmarkSet;
use crate::metrics::{
    category_scores, composition_row, emit_report, points_csv, scores_csv, unparseable_rate, CategoryScores,
    MetricsError, Report, ReportFormat,
};
use crate::model::CompositionStats;
use crate::orchestrator::{
    run_session, write_json, Backends, SessionError, SessionManifest, SessionOutcome, SessionConfig,
};

pub const SESSION_FILE: &str = "session.json";
pub const VERDICTS_FILE: &str = "verdicts.json";
pub const LEDGER_FILE: &str = "ledger.json";
pub const ASSIGNMENT_FILE: &str = "assignment.jsonl";
pub const COMPOSITION_FILE: &str = "composition.json";
pub const CLASSIFY_FILE: &str = "classify.json";
pub const SCORES_FILE: &str = "scores.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn save<T: Serialize>(path: &Path, v: &T) -> Result<(), PipelineError> {
    write_json(path, v).map_err(io_err(path))
}

fn load<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Parse { path: path.to_path_buf(), reason: e.to_string() })
}

/// Request counts of one probe run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub questions: usize,
    pub requests: u64,
    pub live_calls: u64,
    pub cache_hits: u64,
    pub unresolved: usize,
}

impl ProbeSummary {
    fn of(outcome: &SessionOutcome) -> Self {
        let t = outcome.ledger.total();
        let mut ids = outcome.unresolved_ids();
        ids.dedup();
        Self {
            questions: outcome.question_ids.len(),
            requests: t.requests,
            live_calls: t.live_calls,
            cache_hits: t.cache_hits,
            unresolved: ids.len(),
        }
    }

    pub fn hit_rate(&self) -> f64 {
        if self.requests == 0 {
            1.0
        } else {
            self.cache_hits as f64 / self.requests as f64
        }
    }
}

/// Runs every probe, then writes the manifest, the graded outcome and the ledger.
/// An aborted session still leaves its partial outcome on disk.
pub async fn probe(
    bench: &BenchmarkSet,
    cfg: &SessionConfig,
    backends: &Backends,
    out: &Path,
) -> Result<(SessionOutcome, ProbeSummary), PipelineError> {
    probe_recording(bench, cfg, backends, out, None).await
}

/// [`probe`], additionally storing `run_config` in `session.json`.
pub async fn probe_recording(
    bench: &BenchmarkSet,
    cfg: &SessionConfig,
    backends: &Backends,
    out: &Path,
    run_config: Option<serde_json::Value>,
) -> Result<(SessionOutcome, ProbeSummary), PipelineError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let (outcome, tasks) = match run_session(bench, cfg, backends).await {
        Ok(r) => r,
        Err(SessionError::SessionAborted { unresolved, total, max_fraction, outcome }) => {
            save(&out.join(VERDICTS_FILE), &outcome)?;
            save(&out.join(LEDGER_FILE), &outcome.ledger)?;
            return Err(SessionError::SessionAborted { unresolved, total, max_fraction, outcome }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let mut manifest = SessionManifest::new(bench, cfg, &tasks);
    manifest.run_config = run_config;
    save(&out.join(SESSION_FILE), &manifest)?;
    save(&out.join(VERDICTS_FILE), &outcome)?;
    save(&out.join(LEDGER_FILE), &outcome.ledger)?;
    let summary = ProbeSummary::of(&outcome);
    Ok((outcome, summary))
}

/// Settings recorded by the classify step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRecord {
    pub benchmark: String,
    pub shuffle_break_rule: ShuffleBreakRule,
    pub unresolved: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Classified {
    pub assignment: CategoryAssignment,
    pub stats: CompositionStats,
    /// Table-style row, e.g. `| VideoMME | 2700 | 841 / 31.15% | ... |`.
    pub row: String,
}

pub fn classify_outcome(outcome: &SessionOutcome, policy: ClassifierPolicy) -> Result<Classified, PipelineError> {
    let mut unresolved = outcome.unresolved_ids();
    unresolved.dedup();
    let (assignment, stats) = classify_benchmark(outcome.ordered_matrices(), &unresolved, policy)?;
    let row = composition_row(&outcome.benchmark, &stats);
    Ok(Classified { assignment, stats, row })
}

pub fn classify(out: &Path, policy: ClassifierPolicy) -> Result<Classified, PipelineError> {
    let outcome: SessionOutcome = load(&out.join(VERDICTS_FILE))?;
    let c = classify_outcome(&outcome, policy)?;
    let path = out.join(ASSIGNMENT_FILE);
    let mut bytes = Vec::new();
    c.assignment.write_jsonl(&mut bytes).map_err(io_err(&path))?;
    fs::write(&path, bytes).map_err(io_err(&path))?;
    save(&out.join(COMPOSITION_FILE), &c.stats)?;
    save(
        &out.join(CLASSIFY_FILE),
        &ClassifyRecord {
            benchmark: outcome.benchmark.clone(),
            shuffle_break_rule: policy.shuffle_break_rule,
            unresolved: c.assignment.unresolved.clone(),
        },
    )?;
    Ok(c)
}

fn read_assignment(out: &Path) -> Result<CategoryAssignment, PipelineError> {
    let path = out.join(ASSIGNMENT_FILE);
    let f = fs::File::open(&path).map_err(io_err(&path))?;
    CategoryAssignment::read_jsonl(BufReader::new(f)).map_err(io_err(&path))
}

pub fn score_outcome(outcome: &SessionOutcome, assignment: &CategoryAssignment) -> Result<Vec<CategoryScores>, PipelineError> {
    outcome
        .eval_verdicts
        .iter()
        .map(|(model, verdicts)| category_scores(model, verdicts, assignment).map_err(PipelineError::from))
        .collect()
}

pub fn score(out: &Path) -> Result<Vec<CategoryScores>, PipelineError> {
    let outcome: SessionOutcome = load(&out.join(VERDICTS_FILE))?;
    let assignment = read_assignment(out)?;
    let scores = score_outcome(&outcome, &assignment)?;
    save(&out.join(SCORES_FILE), &scores)?;
    for (name, body) in [("scores.csv", scores_csv(&scores)), ("figure5_points.csv", points_csv(&scores))] {
        let path = out.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(scores)
}

/// Builds the report from earlier steps' files. Scores are optional.
pub fn report(out: &Path, formats: &[ReportFormat]) -> Result<(Report, Vec<PathBuf>), PipelineError> {
    let outcome: SessionOutcome = load(&out.join(VERDICTS_FILE))?;
    let stats: CompositionStats = load(&out.join(COMPOSITION_FILE))?;
    let classify: ClassifyRecord = load(&out.join(CLASSIFY_FILE))?;
    let scores_path = out.join(SCORES_FILE);
    let scores: Vec<CategoryScores> = if scores_path.exists() { load(&scores_path)? } else { Vec::new() };
    let manifest: Option<SessionManifest> = {
        let p = out.join(SESSION_FILE);
        if p.exists() { Some(load(&p)?) } else { None }
    };

    let mut r = Report::new(&outcome.benchmark, stats, scores, outcome.ledger.clone());
    r.seed = manifest.map(|m| m.seed);
    r.shuffle_break_rule = classify.shuffle_break_rule;
    r.unresolved = classify.unresolved;
    r.unparseable_rate = unparseable_rate(
        outcome.matrices.values().flat_map(|m| m.judges.iter()).flat_map(|j| j.verdicts.values()),
    );
    let files = emit_report(&r, formats, out)?;
    Ok((r, files))
}

/// Results of [`run_all`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub probe: ProbeSummary,
    pub classified: Classified,
    pub scores: Vec<CategoryScores>,
    pub report: Report,
}

/// probe, classify, score and report in one call.
pub async fn run_all(
    bench: &BenchmarkSet,
    cfg: &SessionConfig,
    backends: &Backends,
    policy: ClassifierPolicy,
    formats: &[ReportFormat],
    out: &Path,
) -> Result<RunSummary, PipelineError> {
    let (_, probe_summary) = probe(bench, cfg, backends, out).await?;
    let classified = classify(out, policy)?;
    let scores = score(out)?;
    let (report, _) = report(out, formats)?;
    Ok(RunSummary { probe: probe_summary, classified, scores, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Category;
    use crate::simfixtures::{build_fixture, FixtureSpec};

    #[tokio::test]
    async fn uniform_fixture_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let spec = FixtureSpec::uniform(1, 9).with_eval("m", [1.0, 1.0, 0.0, 0.0]);
        let f = build_fixture(&spec).unwrap();
        let w = f.write(&dir.path().join("fx"), &spec.judge_ids).unwrap();
        let mut cfg = SessionConfig::new(w.judges.clone(), 9, dir.path().join("cache"));
        cfg.eval_models = w.eval_models.clone();
        let backends = Backends::from_config(&cfg).unwrap();
        let out = dir.path().join("out");
        let all = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Md];
        let s = run_all(&f.set, &cfg, &backends, ClassifierPolicy::default(), &all, &out).await.unwrap();
        assert!(Category::ALL.iter().all(|c| s.classified.stats.percent_str(*c) == "25.00"));
        assert_eq!(s.probe.live_calls, 4 * 9);
        assert_eq!(s.scores[0].vbenchcomp, Some(50.0));
        for name in ["session.json", "assignment.jsonl", "composition.json", "scores.csv", "figure5_points.csv", "report.md", "ledger.json"] {
            assert!(out.join(name).exists(), "{name}");
        }
        let again = probe(&f.set, &cfg, &backends, &out).await.unwrap().1;
        assert_eq!((again.live_calls, again.cache_hits), (0, 36));
    }
}
