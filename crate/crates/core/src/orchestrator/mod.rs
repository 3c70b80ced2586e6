//! Probe planning and execution.
//!
//! Every question gets eight judge probes (two judges under TEXT_ONLY,
//! ORDERED, SHUFFLE_1 and SHUFFLE_2) plus one ORDERED probe per evaluated
//! model. Both judges see the same two permutations, derived from the session
//! seed and the question id. Responses are cached by request digest, so a
//! rerun only performs the calls that are still missing.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::Semaphore;
use tokio::task::JoinSet;
use tracing::{info, warn};

use crate::backend::{self, build_request, Backend, BackendConfig, BackendError, ResponseRecord, ResponseStatus};
use crate::frameplan::{self, apply_permutation, build_frame_plan, gen_permutation, FramePlan, FramePlanError, FramePolicy};
use crate::grader::{extract_choice, grade};
use crate::ingest::BenchmarkSet;
use crate::model::{ConditionKind, JudgeVerdicts, ProbeCondition, QuestionRecord, Verdict, VerdictMatrix};

pub mod cache;
pub mod ledger;

use cache::ResponseCache;
pub use ledger::{BackendCost, BenchmarkCost, CostLedger};

pub const DEFAULT_MAX_UNRESOLVED_FRACTION: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error("cannot plan frames for question {question_id}")]
    Plan {
        question_id: String,
        #[source]
        source: FramePlanError,
    },
    #[error("question {0} has no duration_s; frame plans need the video duration")]
    MissingDuration(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{unresolved} of {total} questions unresolved (limit {limit:.2}%)", limit = .max_fraction * 100.0)]
    SessionAborted {
        unresolved: usize,
        total: usize,
        max_fraction: f64,
        outcome: Box<SessionOutcome>,
    },
}

fn default_parallelism() -> usize {
    8
}
fn default_max_unresolved() -> f64 {
    DEFAULT_MAX_UNRESOLVED_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub judges: [BackendConfig; 2],
    #[serde(default)]
    pub eval_models: Vec<BackendConfig>,
    pub seed: u64,
    #[serde(default)]
    pub frame_policy: FramePolicy,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub cache_root: PathBuf,
    #[serde(default = "default_max_unresolved")]
    pub max_unresolved_fraction: f64,
    /// Frame extractor command template; frames are only referenced, not produced, when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extractor: Option<String>,
}

impl SessionConfig {
    pub fn new(judges: [BackendConfig; 2], seed: u64, cache_root: PathBuf) -> Self {
        Self {
            judges,
            eval_models: Vec::new(),
            seed,
            frame_policy: FramePolicy::default(),
            parallelism: default_parallelism(),
            cache_root,
            max_unresolved_fraction: default_max_unresolved(),
            extractor: None,
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let err = |s: String| Err(SessionError::Config(s));
        if self.judges[0].backend_id == self.judges[1].backend_id {
            return err(format!("judges must be distinct, both are `{}`", self.judges[0].backend_id));
        }
        if self.parallelism == 0 {
            return err("parallelism must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.max_unresolved_fraction) {
            return err("max_unresolved_fraction must lie in [0, 1]".into());
        }
        let mut seen = HashSet::new();
        for m in &self.eval_models {
            if !seen.insert(m.backend_id.as_str()) {
                return err(format!("duplicate eval model `{}`", m.backend_id));
            }
        }
        self.frame_policy.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        let max_frames = self.frame_policy.max_count();
        for b in self.judges.iter().chain(&self.eval_models) {
            b.validate()?;
            if let Some(limit) = b.max_images_per_request {
                if max_frames > limit {
                    return err(format!(
                        "frame policy can request {max_frames} frames but `{}` accepts at most {limit} images",
                        b.backend_id
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn judge_ids(&self) -> [&str; 2] {
        [self.judges[0].backend_id.as_str(), self.judges[1].backend_id.as_str()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskRole {
    Judge,
    Eval,
}

/// One (backend, condition) request for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTask {
    pub question_id: String,
    pub backend_id: String,
    pub role: TaskRole,
    pub condition: ProbeCondition,
    /// Frames in presentation order; empty for TEXT_ONLY.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frame_ids: Vec<String>,
    pub digest: String,
}

#[derive(Serialize)]
struct DigestKey<'a> {
    backend_id: &'a str,
    model_name: &'a str,
    prompt_template_version: &'a str,
    question_id: &'a str,
    condition: ConditionKind,
    permutation: Option<&'a [usize]>,
    frame_ids: Option<&'a [String]>,
}

/// Cache key of a request.
pub fn request_digest(
    backend: &BackendConfig,
    question_id: &str,
    condition: &ProbeCondition,
    frame_ids: &[String],
) -> String {
    let key = DigestKey {
        backend_id: &backend.backend_id,
        model_name: &backend.model_name,
        prompt_template_version: &backend.prompt_template_version,
        question_id,
        condition: condition.kind,
        permutation: condition.permutation.as_ref().map(|p| p.order.as_slice()),
        frame_ids: (!frame_ids.is_empty()).then_some(frame_ids),
    };
    hex::encode(Sha256::digest(serde_json::to_vec(&key).expect("digest key serializes")))
}

/// Seed for a question's shuffles, shared by both judges.
pub fn question_seed(session_seed: u64, question_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(b"vbenchcomp/question-seed/v1");
    h.update(session_seed.to_le_bytes());
    h.update(question_id.as_bytes());
    let bytes: [u8; 32] = h.finalize().into();
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}

/// Ordered plan plus the two shuffled presentations for a question.
pub fn question_presentations(
    q: &QuestionRecord,
    policy: &FramePolicy,
    session_seed: u64,
) -> Result<(FramePlan, [(ProbeCondition, FramePlan); 2]), SessionError> {
    let duration = q.duration_s.ok_or_else(|| SessionError::MissingDuration(q.id.clone()))?;
    let plan_err = |source| SessionError::Plan { question_id: q.id.clone(), source };
    let plan = build_frame_plan(&q.video_ref, duration, policy, &q.tags).map_err(plan_err)?;
    let seed = question_seed(session_seed, &q.id);
    let shuffled = |round: u8| -> Result<(ProbeCondition, FramePlan), SessionError> {
        let p = gen_permutation(seed, round, plan.len()).map_err(plan_err)?;
        let shown = apply_permutation(&plan, &p).map_err(plan_err)?;
        let condition = ProbeCondition::shuffled(p).expect("generated permutations are valid");
        Ok((condition, shown))
    };
    let s1 = shuffled(1)?;
    let s2 = shuffled(2)?;
    Ok((plan, [s1, s2]))
}

/// Plans the 8 judge tasks plus one ORDERED task per evaluated model.
pub fn plan_probes(q: &QuestionRecord, cfg: &SessionConfig) -> Result<Vec<ProbeTask>, SessionError> {
    let (plan, [s1, s2]) = question_presentations(q, &cfg.frame_policy, cfg.seed)?;
    let mut tasks = Vec::with_capacity(8 + cfg.eval_models.len());
    let mut push = |backend: &BackendConfig, role: TaskRole, condition: ProbeCondition, frame_ids: Vec<String>| {
        let digest = request_digest(backend, &q.id, &condition, &frame_ids);
        tasks.push(ProbeTask {
            question_id: q.id.clone(),
            backend_id: backend.backend_id.clone(),
            role,
            condition,
            frame_ids,
            digest,
        });
    };
    for judge in &cfg.judges {
        push(judge, TaskRole::Judge, ProbeCondition::text_only(), Vec::new());
        push(judge, TaskRole::Judge, ProbeCondition::ordered(), plan.frame_ids.clone());
        push(judge, TaskRole::Judge, s1.0.clone(), s1.1.frame_ids.clone());
        push(judge, TaskRole::Judge, s2.0.clone(), s2.1.frame_ids.clone());
    }
    for model in &cfg.eval_models {
        push(model, TaskRole::Eval, ProbeCondition::ordered(), plan.frame_ids.clone());
    }
    Ok(tasks)
}

/// A question whose probes could not all be answered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unresolved {
    pub question_id: String,
    pub backend_id: String,
    pub condition: ConditionKind,
    pub digest: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub benchmark: String,
    /// Question ids in benchmark order.
    pub question_ids: Vec<String>,
    pub matrices: BTreeMap<String, VerdictMatrix>,
    /// Evaluated model id -> question id -> verdict.
    pub eval_verdicts: BTreeMap<String, BTreeMap<String, Verdict>>,
    pub unresolved: Vec<Unresolved>,
    pub ledger: CostLedger,
}

impl SessionOutcome {
    /// Complete matrices in benchmark order.
    pub fn ordered_matrices(&self) -> Vec<&VerdictMatrix> {
        self.question_ids.iter().filter_map(|id| self.matrices.get(id)).collect()
    }

    pub fn unresolved_ids(&self) -> Vec<String> {
        self.unresolved.iter().map(|u| u.question_id.clone()).collect()
    }
}

/// Reproducibility record written next to session outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub benchmark: String,
    pub source_digest: String,
    pub seed: u64,
    pub config: SessionConfig,
    /// Caller-supplied settings, e.g. the merged command-line configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
    pub tasks: Vec<ManifestTask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTask {
    pub question_id: String,
    pub backend_id: String,
    pub condition: ConditionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
    pub digest: String,
}

impl SessionManifest {
    pub fn new(bench: &BenchmarkSet, cfg: &SessionConfig, tasks: &[ProbeTask]) -> Self {
        Self {
            benchmark: bench.name.clone(),
            source_digest: bench.source_digest.clone(),
            seed: cfg.seed,
            config: cfg.clone(),
            run_config: None,
            tasks: tasks
                .iter()
                .map(|t| ManifestTask {
                    question_id: t.question_id.clone(),
                    backend_id: t.backend_id.clone(),
                    condition: t.condition.kind,
                    permutation: t.condition.permutation.as_ref().map(|p| p.order.clone()),
                    digest: t.digest.clone(),
                })
                .collect(),
        }
    }
}

/// Backend instances for a session, in config order.
#[derive(Clone)]
pub struct Backends {
    pub judges: [Arc<dyn Backend>; 2],
    pub eval_models: Vec<Arc<dyn Backend>>,
}

impl Backends {
    pub fn from_config(cfg: &SessionConfig) -> Result<Self, SessionError> {
        let judges = [
            backend::build(&cfg.judges[0], &cfg.cache_root)?,
            backend::build(&cfg.judges[1], &cfg.cache_root)?,
        ];
        let eval_models = cfg
            .eval_models
            .iter()
            .map(|m| backend::build(m, &cfg.cache_root))
            .collect::<Result<_, _>>()?;
        Ok(Self { judges, eval_models })
    }

    fn by_id(&self) -> HashMap<String, Arc<dyn Backend>> {
        self.judges
            .iter()
            .chain(&self.eval_models)
            .map(|b| (b.id().to_string(), b.clone()))
            .collect()
    }
}

enum TaskResult {
    Hit(ResponseRecord),
    Live(Result<ResponseRecord, BackendError>),
}

/// Plans every task of a benchmark, in benchmark order.
pub fn plan_session(bench: &BenchmarkSet, cfg: &SessionConfig) -> Result<Vec<ProbeTask>, SessionError> {
    let mut tasks = Vec::with_capacity(bench.len() * (8 + cfg.eval_models.len()));
    for q in &bench.records {
        tasks.extend(plan_probes(q, cfg)?);
    }
    Ok(tasks)
}

/// Runs (or resumes) all probes for `bench` and grades them.
pub async fn run_session(
    bench: &BenchmarkSet,
    cfg: &SessionConfig,
    backends: &Backends,
) -> Result<(SessionOutcome, Vec<ProbeTask>), SessionError> {
    cfg.validate()?;
    let tasks = Arc::new(plan_session(bench, cfg)?);
    let cache = ResponseCache::new(cfg.cache_root.clone());
    let by_id = backends.by_id();
    for t in tasks.iter() {
        if !by_id.contains_key(&t.backend_id) {
            return Err(SessionError::Config(format!("no backend instance for `{}`", t.backend_id)));
        }
    }
    let questions: Arc<HashMap<String, QuestionRecord>> =
        Arc::new(bench.records.iter().map(|q| (q.id.clone(), q.clone())).collect());

    let mut results: Vec<Option<TaskResult>> = Vec::with_capacity(tasks.len());
    let mut misses = Vec::new();
    for (i, t) in tasks.iter().enumerate() {
        match cache.get(&t.digest) {
            Some(rec) => results.push(Some(TaskResult::Hit(rec))),
            None => {
                results.push(None);
                misses.push(i);
            }
        }
    }
    info!(benchmark = %bench.name, tasks = tasks.len(), cached = tasks.len() - misses.len(), "probing");

    let manifests = match &cfg.extractor {
        Some(template) => extract_for_misses(&tasks, &misses, &questions, template, cfg).await?,
        None => HashMap::new(),
    };
    let manifests = Arc::new(manifests);

    let sem = Arc::new(Semaphore::new(cfg.parallelism));
    let mut set = JoinSet::new();
    for i in misses {
        let (tasks, questions, manifests) = (tasks.clone(), questions.clone(), manifests.clone());
        let backend = by_id[&tasks[i].backend_id].clone();
        let (sem, cache, cache_root) = (sem.clone(), cache.clone(), cfg.cache_root.clone());
        set.spawn(async move {
            let _permit = sem.acquire_owned().await.expect("semaphore open");
            let t = &tasks[i];
            let q = &questions[&t.question_id];
            let images = t
                .frame_ids
                .iter()
                .map(|f| match manifests.get(&q.video_ref).and_then(|m| m.path_of(f)) {
                    Some(p) => p.to_path_buf(),
                    None => frameplan::frame_path(&cache_root, &q.video_ref, f),
                })
                .collect();
            let req = build_request(q, t.condition.kind, images, &t.digest);
            let res = backend.send(&req).await;
            if let Ok(rec) = &res {
                if rec.is_cacheable() {
                    if let Err(e) = cache.put(rec) {
                        warn!("cache write failed: {e}");
                    }
                }
            }
            (i, res)
        });
    }
    while let Some(joined) = set.join_next().await {
        let (i, res) = joined.expect("probe task panicked");
        results[i] = Some(TaskResult::Live(res));
    }

    let outcome = assemble(bench, cfg, &tasks, results);
    let total = bench.len();
    if total > 0 && outcome.unresolved.len() as f64 / total as f64 > cfg.max_unresolved_fraction {
        return Err(SessionError::SessionAborted {
            unresolved: outcome.unresolved.len(),
            total,
            max_fraction: cfg.max_unresolved_fraction,
            outcome: Box::new(outcome),
        });
    }
    let tasks = Arc::try_unwrap(tasks).unwrap_or_else(|a| (*a).clone());
    Ok((outcome, tasks))
}

async fn extract_for_misses(
    tasks: &[ProbeTask],
    misses: &[usize],
    questions: &HashMap<String, QuestionRecord>,
    template: &str,
    cfg: &SessionConfig,
) -> Result<HashMap<String, frameplan::FrameManifest>, SessionError> {
    let mut wanted: BTreeMap<String, FramePlan> = BTreeMap::new();
    for &i in misses {
        let t = &tasks[i];
        if !t.condition.kind.uses_video() {
            continue;
        }
        let q = &questions[&t.question_id];
        if !wanted.contains_key(&q.video_ref) {
            let (plan, _) = question_presentations(q, &cfg.frame_policy, cfg.seed)?;
            wanted.insert(q.video_ref.clone(), plan);
        }
    }
    let sem = Arc::new(Semaphore::new(cfg.parallelism));
    let mut set = JoinSet::new();
    for (video_ref, plan) in wanted {
        let (sem, template, root) = (sem.clone(), template.to_string(), cfg.cache_root.clone());
        set.spawn(async move {
            let _permit = sem.acquire_owned().await.expect("semaphore open");
            let res = tokio::task::spawn_blocking(move || frameplan::extract_frames(&plan, &template, &root))
                .await
                .expect("extraction panicked");
            (video_ref, res)
        });
    }
    let mut out = HashMap::new();
    while let Some(joined) = set.join_next().await {
        let (video_ref, res) = joined.expect("extraction task panicked");
        match res {
            Ok(m) => {
                out.insert(video_ref, m);
            }
            // Probes for this video will fail on the missing files and be reported as unresolved.
            Err(e) => warn!(%video_ref, "frame extraction failed: {e}"),
        }
    }
    Ok(out)
}

fn assemble(
    bench: &BenchmarkSet,
    cfg: &SessionConfig,
    tasks: &[ProbeTask],
    results: Vec<Option<TaskResult>>,
) -> SessionOutcome {
    let mut ledger = CostLedger::default();
    ledger.benchmark_mut(&bench.name).questions = bench.len() as u64;
    let mut graded: HashMap<(String, String, ConditionKind), Verdict> = HashMap::new();
    let mut unresolved: BTreeMap<String, Unresolved> = BTreeMap::new();
    let questions: HashMap<&str, &QuestionRecord> = bench.records.iter().map(|q| (q.id.as_str(), q)).collect();

    for (t, r) in tasks.iter().zip(results) {
        let cost = ledger.backend_mut(&bench.name, &t.backend_id);
        let outcome: Result<ResponseRecord, String> = match r.expect("every task has a result") {
            TaskResult::Hit(rec) => {
                cost.record_hit();
                Ok(rec)
            }
            TaskResult::Live(Ok(rec)) => {
                cost.record_live(Some(&rec));
                Ok(rec)
            }
            TaskResult::Live(Err(e)) => {
                cost.record_live(None);
                Err(e.to_string())
            }
        };
        let rec = match outcome {
            Ok(rec) if rec.status != ResponseStatus::Error => rec,
            failed => {
                let reason = match failed {
                    Ok(rec) => format!("backend error: {}", rec.raw_text),
                    Err(e) => e,
                };
                unresolved.entry(t.question_id.clone()).or_insert_with(|| Unresolved {
                    question_id: t.question_id.clone(),
                    backend_id: t.backend_id.clone(),
                    condition: t.condition.kind,
                    digest: t.digest.clone(),
                    reason,
                });
                continue;
            }
        };
        let q = questions[t.question_id.as_str()];
        let parsed = extract_choice(&rec.raw_text, &q.options);
        let verdict = grade(&parsed, q.gold, rec.status, &rec.raw_text);
        graded.insert((t.question_id.clone(), t.backend_id.clone(), t.condition.kind), verdict);
    }

    let mut matrices = BTreeMap::new();
    let mut eval_verdicts: BTreeMap<String, BTreeMap<String, Verdict>> =
        cfg.eval_models.iter().map(|m| (m.backend_id.clone(), BTreeMap::new())).collect();
    for q in &bench.records {
        if unresolved.contains_key(&q.id) {
            continue;
        }
        let judges = cfg
            .judge_ids()
            .iter()
            .map(|j| JudgeVerdicts {
                judge_id: j.to_string(),
                verdicts: ConditionKind::ALL
                    .iter()
                    .filter_map(|k| graded.remove(&(q.id.clone(), j.to_string(), *k)).map(|v| (*k, v)))
                    .collect(),
            })
            .collect();
        matrices.insert(q.id.clone(), VerdictMatrix { question_id: q.id.clone(), judges });
        for m in &cfg.eval_models {
            if let Some(v) = graded.remove(&(q.id.clone(), m.backend_id.clone(), ConditionKind::Ordered)) {
                eval_verdicts.get_mut(&m.backend_id).expect("model registered").insert(q.id.clone(), v);
            }
        }
    }

    let order: HashMap<&str, usize> = bench.records.iter().enumerate().map(|(i, q)| (q.id.as_str(), i)).collect();
    let mut unresolved: Vec<Unresolved> = unresolved.into_values().collect();
    unresolved.sort_by_key(|u| order[u.question_id.as_str()]);
    SessionOutcome {
        benchmark: bench.name.clone(),
        question_ids: bench.records.iter().map(|q| q.id.clone()).collect(),
        matrices,
        eval_verdicts,
        unresolved,
        ledger,
    }
}

/// Writes `value` as pretty JSON to `path`, creating parent directories.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value).map_err(std::io::Error::other)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)
}
