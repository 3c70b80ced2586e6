//! Deterministic scripted fixtures that realize a target composition.
//!
//! Every question gets the verdict pattern (archetype) of its intended
//! category, so running the full pipeline on the fixture reproduces the
//! target counts exactly. Evaluated-model scripts answer a largest-remainder
//! share of each category correctly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{BackendConfig, Script, ScriptedReply};
use crate::ingest::{emit_canonical, BenchmarkSet};
use crate::model::{option_letter, Category, ConditionKind, QuestionRecord, MAX_OPTIONS, MIN_OPTIONS};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("invalid fixture spec: {0}")]
    InvalidSpec(String),
    #[error("fixture io error at {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Judge verdicts for one question: rows are judges, columns are
/// TEXT_ONLY, ORDERED, SHUFFLE_1, SHUFFLE_2.
pub type Pattern = [[bool; 4]; 2];

/// The verdict pattern assigned to each category by default.
pub fn default_archetype(c: Category) -> Pattern {
    match c {
        Category::LlmAnswerable => [[true; 4], [true; 4]],
        Category::Semantic => [[true, true, true, true], [false, true, true, true]],
        Category::Temporal => [[false, true, false, false], [false; 4]],
        Category::Others => [[false; 4], [false; 4]],
    }
}

fn default_archetypes() -> BTreeMap<Category, Pattern> {
    Category::ALL.iter().map(|c| (*c, default_archetype(*c))).collect()
}

fn default_judge_ids() -> [String; 2] {
    ["judge_a".to_string(), "judge_b".to_string()]
}

fn default_options() -> usize {
    4
}

fn default_duration() -> f64 {
    120.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub benchmark: String,
    pub counts: BTreeMap<Category, u64>,
    #[serde(default = "default_archetypes")]
    pub archetypes: BTreeMap<Category, Pattern>,
    /// Evaluated model id -> per-category accuracy in [0, 1].
    #[serde(default)]
    pub eval_targets: BTreeMap<String, BTreeMap<Category, f64>>,
    pub seed: u64,
    #[serde(default = "default_judge_ids")]
    pub judge_ids: [String; 2],
    #[serde(default = "default_options")]
    pub num_options: usize,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
}

impl FixtureSpec {
    pub fn new(benchmark: &str, counts: [u64; 4], seed: u64) -> Self {
        Self {
            benchmark: benchmark.to_string(),
            counts: Category::ALL.iter().copied().zip(counts).collect(),
            archetypes: default_archetypes(),
            eval_targets: BTreeMap::new(),
            seed,
            judge_ids: default_judge_ids(),
            num_options: default_options(),
            duration_s: default_duration(),
        }
    }

    pub fn videomme(seed: u64) -> Self {
        Self::new("VideoMME", [841, 810, 371, 678], seed)
    }

    pub fn lvbench(seed: u64) -> Self {
        Self::new("LVBench", [140, 321, 355, 733], seed)
    }

    pub fn uniform(per_category: u64, seed: u64) -> Self {
        Self::new("Uniform", [per_category; 4], seed)
    }

    /// Adds an evaluated model with accuracies (fractions) in category order.
    pub fn with_eval(mut self, model_id: &str, accuracies: [f64; 4]) -> Self {
        self.eval_targets
            .insert(model_id.to_string(), Category::ALL.iter().copied().zip(accuracies).collect());
        self
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn validate(&self) -> Result<(), FixtureError> {
        let bad = |s: String| Err(FixtureError::InvalidSpec(s));
        if self.benchmark.is_empty() {
            return bad("benchmark name is empty".into());
        }
        if self.total() == 0 {
            return bad("all category counts are zero".into());
        }
        if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&self.num_options) {
            return bad(format!("num_options must be in {MIN_OPTIONS}..={MAX_OPTIONS}"));
        }
        if self.duration_s.is_nan() || self.duration_s <= 0.0 {
            return bad("duration_s must be positive".into());
        }
        if self.judge_ids[0] == self.judge_ids[1] {
            return bad("judge ids must differ".into());
        }
        for c in Category::ALL {
            if self.counts.get(&c).copied().unwrap_or(0) > 0 && !self.archetypes.contains_key(&c) {
                return bad(format!("no archetype for {c}"));
            }
        }
        for (model, targets) in &self.eval_targets {
            if self.judge_ids.contains(model) {
                return bad(format!("eval model `{model}` collides with a judge id"));
            }
            for (c, a) in targets {
                if !(0.0..=1.0).contains(a) {
                    return bad(format!("accuracy target for {model}/{c} is {a}, outside [0, 1]"));
                }
            }
        }
        Ok(())
    }
}

/// Splits `round(sum(acc_c * n_c))` correct answers across categories:
/// each gets `floor(acc_c * n_c)`, the rest go to the largest fractional parts.
pub fn largest_remainder(targets: &[(u64, f64)]) -> Vec<u64> {
    let exact: Vec<f64> = targets.iter().map(|(n, a)| a * *n as f64).collect();
    let mut out: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let total = exact.iter().sum::<f64>().round() as u64;
    let mut order: Vec<usize> = (0..targets.len()).collect();
    // Stable sort keeps category order on ties.
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = total.saturating_sub(out.iter().sum());
    for i in order {
        if left == 0 {
            break;
        }
        if out[i] < targets[i].0 {
            out[i] += 1;
            left -= 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub set: BenchmarkSet,
    pub judge_scripts: [Script; 2],
    pub eval_scripts: BTreeMap<String, Script>,
    /// Question id -> category the archetype was chosen for.
    pub intended: BTreeMap<String, Category>,
    /// Evaluated model id -> correct answers per category.
    pub eval_correct: BTreeMap<String, BTreeMap<Category, u64>>,
}

fn fixture_rng(seed: u64, benchmark: &str) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(b"vbenchcomp/fixture/v1");
    h.update(seed.to_le_bytes());
    h.update(benchmark.as_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

// Phrasings vary so the grader sees more than bare letters.
fn answer_text(index: usize, variant: usize) -> ScriptedReply {
    let l = option_letter(index).expect("validated option count");
    ScriptedReply::Answer(match variant % 3 {
        0 => l.to_string(),
        1 => format!("Answer: {l}"),
        _ => format!("({l})"),
    })
}

const WORDS: [&str; 8] = ["red", "blue", "green", "yellow", "purple", "orange", "silver", "brown"];

pub fn build_fixture(spec: &FixtureSpec) -> Result<Fixture, FixtureError> {
    spec.validate()?;
    let mut rng = fixture_rng(spec.seed, &spec.benchmark);
    let mut labels: Vec<Category> = Category::ALL
        .iter()
        .flat_map(|c| std::iter::repeat_n(*c, spec.counts.get(c).copied().unwrap_or(0) as usize))
        .collect();
    labels.shuffle(&mut rng);

    let prefix = slug(&spec.benchmark);
    let n_opt = spec.num_options;
    let mut records = Vec::with_capacity(labels.len());
    let mut judge_scripts = [Script::default(), Script::default()];
    let mut intended = BTreeMap::new();
    let mut by_category: BTreeMap<Category, Vec<(String, usize)>> = BTreeMap::new();

    for (i, &category) in labels.iter().enumerate() {
        let id = format!("{prefix}-{i:05}");
        let gold = rng.random_range(0..n_opt);
        let wrong = (gold + 1 + rng.random_range(0..n_opt - 1)) % n_opt;
        let options = (0..n_opt)
            .map(|k| format!("the {} object number {}", WORDS[k % WORDS.len()], k + 1))
            .collect();
        records.push(QuestionRecord {
            id: id.clone(),
            benchmark: spec.benchmark.clone(),
            video_ref: format!("videos/{prefix}/{:04}.mp4", i / 3),
            duration_s: Some(spec.duration_s),
            question: format!("Which object appears in clip {i}?"),
            options,
            gold,
            tags: BTreeMap::new(),
        });
        let pattern = spec.archetypes[&category];
        for (j, script) in judge_scripts.iter_mut().enumerate() {
            for (k, cond) in ConditionKind::ALL.iter().enumerate() {
                let pick = if pattern[j][k] { gold } else { wrong };
                script.set(&id, *cond, answer_text(pick, i + j + k));
            }
        }
        intended.insert(id.clone(), category);
        by_category.entry(category).or_default().push((id, gold));
    }

    let mut eval_scripts = BTreeMap::new();
    let mut eval_correct = BTreeMap::new();
    for (model, targets) in &spec.eval_targets {
        let sizes: Vec<(u64, f64)> = Category::ALL
            .iter()
            .map(|c| (spec.counts.get(c).copied().unwrap_or(0), targets.get(c).copied().unwrap_or(0.0)))
            .collect();
        let correct = largest_remainder(&sizes);
        let mut script = Script::default();
        for (c, k) in Category::ALL.iter().zip(&correct) {
            for (pos, (id, gold)) in by_category.get(c).into_iter().flatten().enumerate() {
                let pick = if (pos as u64) < *k { *gold } else { (gold + 1) % n_opt };
                script.set(id, ConditionKind::Ordered, answer_text(pick, pos));
            }
        }
        eval_scripts.insert(model.clone(), script);
        eval_correct.insert(model.clone(), Category::ALL.iter().copied().zip(correct).collect());
    }

    let mut set = BenchmarkSet { name: spec.benchmark.clone(), records, source_digest: String::new() };
    let mut canonical = Vec::new();
    emit_canonical(&set, &mut canonical).expect("writing to memory");
    set.source_digest = hex::encode(Sha256::digest(&canonical));
    Ok(Fixture { set, judge_scripts, eval_scripts, intended, eval_correct })
}

/// Files written by [`Fixture::write`], with ready-made backend configs.
#[derive(Debug, Clone)]
pub struct WrittenFixture {
    pub benchmark_path: PathBuf,
    pub judges: [BackendConfig; 2],
    pub eval_models: Vec<BackendConfig>,
    /// Backend config files, judges first.
    pub config_paths: Vec<PathBuf>,
}

fn script_json(s: &Script) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(s).expect("scripts serialize");
    b.push(b'\n');
    b
}

impl Fixture {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        emit_canonical(&self.set, &mut out).expect("writing to memory");
        out
    }

    pub fn judge_script_bytes(&self, j: usize) -> Vec<u8> {
        script_json(&self.judge_scripts[j])
    }

    /// Writes `benchmark.jsonl`, `script_{id}.json` and `backend_{id}.json`
    /// for every judge and evaluated model into `dir`.
    pub fn write(&self, dir: &Path, judge_ids: &[String; 2]) -> Result<WrittenFixture, FixtureError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| FixtureError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let benchmark_path = dir.join("benchmark.jsonl");
        fs::write(&benchmark_path, self.canonical_bytes()).map_err(io(&benchmark_path))?;

        let mut config_paths = Vec::new();
        let mut emit = |id: &str, script: &Script| -> Result<BackendConfig, FixtureError> {
            let script_path = dir.join(format!("script_{id}.json"));
            fs::write(&script_path, script_json(script)).map_err(io(&script_path))?;
            // On disk the script path is relative to the config file.
            let file_name = PathBuf::from(script_path.file_name().expect("joined file name"));
            let on_disk = BackendConfig { script_path: Some(file_name), ..BackendConfig::scripted(id) };
            let cfg = BackendConfig { script_path: Some(script_path), ..BackendConfig::scripted(id) };
            let cfg_path = dir.join(format!("backend_{id}.json"));
            let mut bytes = serde_json::to_vec_pretty(&on_disk).expect("configs serialize");
            bytes.push(b'\n');
            fs::write(&cfg_path, bytes).map_err(io(&cfg_path))?;
            config_paths.push(cfg_path);
            Ok(cfg)
        };
        let judges = [
            emit(&judge_ids[0], &self.judge_scripts[0])?,
            emit(&judge_ids[1], &self.judge_scripts[1])?,
        ];
        let eval_models = self
            .eval_scripts
            .iter()
            .map(|(id, s)| emit(id, s))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(WrittenFixture { benchmark_path, judges, eval_models, config_paths })
    }
}
