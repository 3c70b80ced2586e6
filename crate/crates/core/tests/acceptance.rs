//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line each
//! and exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vbenchcomp::classifier::{classify, AssignmentEntry, CategoryAssignment, ClassifierPolicy, Rule, ShuffleBreakRule};
use vbenchcomp::frameplan::gen_permutation;
use vbenchcomp::grader::{extract_choice, first_standalone_letter, ParseMethod};
use vbenchcomp::metrics::{category_scores, correlation, profile_gaps, CategoryScores, FindingKind, GapThresholds, ReportFormat};
use vbenchcomp::model::{make_composition, Category, CompositionStats, Verdict, VerdictMatrix};
use vbenchcomp::orchestrator::{Backends, SessionConfig};
use vbenchcomp::pipeline::{self, ASSIGNMENT_FILE};
use vbenchcomp::simfixtures::{build_fixture, Fixture, FixtureSpec};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

const ALL_FORMATS: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Md];

fn stats(counts: [u64; 4]) -> CompositionStats {
    let m: BTreeMap<Category, u64> = Category::ALL.iter().copied().zip(counts).collect();
    make_composition(&m).expect("nonempty composition")
}

/// Writes `f` under `root`, returning a session config and backends for it.
fn session(f: &Fixture, spec: &FixtureSpec, root: &Path, parallelism: usize) -> (SessionConfig, Backends) {
    let w = f.write(&root.join("fixture"), &spec.judge_ids).expect("fixture written");
    let mut cfg = SessionConfig::new(w.judges.clone(), spec.seed, root.join("cache"));
    cfg.eval_models = w.eval_models.clone();
    cfg.parallelism = parallelism;
    let backends = Backends::from_config(&cfg).expect("backends");
    (cfg, backends)
}

// Category rules restated from the definitions. Bit 4j+k is judge j under condition k,
// with conditions ordered text-only, ordered, shuffle 1, shuffle 2.
fn oracle_category(bits: u16, rule: ShuffleBreakRule) -> Category {
    let cell = |j: u16, k: u16| bits >> (4 * j + k) & 1 == 1;
    let judges = [0u16, 1];
    if judges.iter().all(|&j| cell(j, 0)) {
        return Category::LlmAnswerable;
    }
    if judges.iter().all(|&j| (1..4).all(|k| cell(j, k))) {
        return Category::Semantic;
    }
    let fails_after_shuffle = |j: u16| {
        let failed = (2..4).filter(|&k| !cell(j, k)).count();
        match rule {
            ShuffleBreakRule::All => failed == 2,
            ShuffleBreakRule::Any => failed >= 1,
        }
    };
    if judges.iter().any(|&j| cell(j, 1) && fails_after_shuffle(j)) {
        return Category::Temporal;
    }
    Category::Others
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut cases = 0;
    for rule in [ShuffleBreakRule::All, ShuffleBreakRule::Any] {
        for bits in 0u16..256 {
            let mut rows = [[false; 4]; 2];
            for (j, row) in rows.iter_mut().enumerate() {
                for (k, cell) in row.iter_mut().enumerate() {
                    *cell = bits >> (4 * j + k) & 1 == 1;
                }
            }
            let m = VerdictMatrix::from_bools("q", ["judge_a", "judge_b"], rows);
            let (got, _) = classify(&m, ClassifierPolicy::new(rule)).map_err(|e| e.to_string())?;
            let want = oracle_category(bits, rule);
            check!(got == want, "matrix {bits:#010b} under {rule:?}: got {got:?}, oracle {want:?}");
            cases += 1;
        }
    }
    let elapsed = start.elapsed();
    check!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("{cases} cases agree in {elapsed:.2?}"))
}

async fn composition_round_trip(spec: FixtureSpec, want_pct: [&str; 4], budget: Duration) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let f = build_fixture(&spec).map_err(|e| e.to_string())?;
    let (cfg, backends) = session(&f, &spec, dir.path(), 8);
    let out = dir.path().join("out");
    pipeline::probe(&f.set, &cfg, &backends, &out).await.map_err(|e| e.to_string())?;
    let c = pipeline::classify(&out, ClassifierPolicy::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    for (i, cat) in Category::ALL.iter().enumerate() {
        check!(c.stats.count(*cat) == spec.counts[cat], "{cat:?}: {} != {}", c.stats.count(*cat), spec.counts[cat]);
        check!(c.stats.percent_str(*cat) == want_pct[i], "{cat:?}: {} != {}", c.stats.percent_str(*cat), want_pct[i]);
    }
    let by_id = c.assignment.category_of();
    let misplaced = f.intended.iter().filter(|(id, cat)| by_id.get(id.as_str()) != Some(cat)).count();
    check!(misplaced == 0, "{misplaced} questions in the wrong category");
    check!(elapsed < budget, "{} took {elapsed:?}", spec.benchmark);
    Ok(format!("{} in {elapsed:.1?}", c.row))
}

async fn criterion_2() -> Outcome {
    let budget = Duration::from_secs(30);
    let a = composition_round_trip(FixtureSpec::videomme(2), ["31.15", "30.00", "13.74", "25.11"], budget).await?;
    let b = composition_round_trip(FixtureSpec::lvbench(2), ["9.04", "20.72", "22.92", "47.32"], budget).await?;
    Ok(format!("{a}; {b}"))
}

const VIDEOMME: [u64; 4] = [841, 810, 371, 678];

// Published overall, then LLM / semantic / temporal / others accuracy, in percent.
const REFERENCE_MODELS: [(&str, f64, [f64; 4]); 6] = [
    ("Qwen2-VL-7B", 60.6, [77.8, 78.4, 36.7, 31.1]),
    ("LLaVA-OV-7B", 59.0, [76.3, 76.8, 37.2, 28.2]),
    ("LLaVA-Video-7B", 63.9, [79.3, 82.0, 42.6, 34.7]),
    ("Qwen2-VL-72B", 68.2, [86.8, 86.3, 49.6, 33.8]),
    ("LLaVA-OV-72B", 68.7, [87.2, 86.3, 52.6, 33.6]),
    ("LLaVA-Video-72B", 70.8, [88.1, 88.9, 51.8, 38.1]),
];

fn published(acc: [f64; 4]) -> BTreeMap<Category, (u64, f64)> {
    Category::ALL.iter().enumerate().map(|(i, c)| (*c, (VIDEOMME[i], acc[i]))).collect()
}

fn random_identity_case(rng: &mut ChaCha8Rng, case: usize) -> Result<(), String> {
    let mut assignment = CategoryAssignment::default();
    let mut verdicts = BTreeMap::new();
    let (mut total, mut right) = (0u64, 0u64);
    for cat in Category::ALL {
        let n = rng.random_range(0..150u64);
        let p: f64 = rng.random();
        for i in 0..n {
            let id = format!("{case}-{cat:?}-{i}");
            let ok = rng.random_bool(p);
            assignment.entries.push(AssignmentEntry { id: id.clone(), category: cat, rule: Rule::Residual, judges: vec![] });
            verdicts.insert(id, Verdict::bare(ok));
            total += 1;
            right += ok as u64;
        }
    }
    if total == 0 {
        return Ok(());
    }
    let s = category_scores("m", &verdicts, &assignment).map_err(|e| e.to_string())?;
    let (num, den) = Category::ALL.iter().fold((0.0, 0.0), |(num, den), c| match s.accuracy(*c) {
        Some(a) => (num + s.n(*c) as f64 * a, den + s.n(*c) as f64),
        None => (num, den),
    });
    let direct = 100.0 * right as f64 / total as f64;
    check!((s.overall - num / den).abs() < 1e-9, "case {case}: overall {} vs weighted {}", s.overall, num / den);
    check!((s.overall - direct).abs() < 1e-9, "case {case}: overall {} vs pooled {direct}", s.overall);
    Ok(())
}

async fn criterion_3() -> Outcome {
    let (_, want, acc) = REFERENCE_MODELS[0];
    let s = CategoryScores::from_accuracies("qwen", &published(acc)).map_err(|e| e.to_string())?;
    check!((s.overall - want).abs() <= 0.1, "overall from published accuracies {}", s.overall);

    // The same model realized as scripted answers and scored end to end.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = FixtureSpec::videomme(3).with_eval("qwen", acc.map(|a| a / 100.0));
    let f = build_fixture(&spec).map_err(|e| e.to_string())?;
    let (cfg, backends) = session(&f, &spec, dir.path(), 8);
    let run = pipeline::run_all(&f.set, &cfg, &backends, ClassifierPolicy::default(), &[ReportFormat::Json], &dir.path().join("out"))
        .await
        .map_err(|e| e.to_string())?;
    let piped = &run.scores[0];
    check!((piped.overall - want).abs() <= 0.1, "pipeline overall {}", piped.overall);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        random_identity_case(&mut rng, case)?;
    }
    Ok(format!(
        "overall {:.4} (published accuracies), {:.4} (pipeline); identity holds on 1000 random fixtures",
        s.overall, piped.overall
    ))
}

fn ranks(xs: &[f64]) -> Vec<usize> {
    xs.iter().map(|x| xs.iter().filter(|y| *y < x).count()).collect()
}

fn criterion_4() -> Outcome {
    let mut points = Vec::new();
    let mut focused = Vec::new();
    for (id, overall, acc) in REFERENCE_MODELS {
        let s = CategoryScores::from_accuracies(id, &published(acc)).map_err(|e| e.to_string())?;
        let v = s.vbenchcomp.ok_or("no vbenchcomp score")?;
        let oracle = (810.0 * acc[1] + 371.0 * acc[2]) / 1181.0;
        check!((v - oracle).abs() < 1e-9, "{id}: vbenchcomp {v} vs {oracle}");
        points.push((id.to_string(), overall, v));
        focused.push(v);
    }
    let overall: Vec<f64> = REFERENCE_MODELS.iter().map(|r| r.1).collect();
    check!(ranks(&overall) == ranks(&focused), "rank orders differ");
    let r = correlation(&points).map_err(|e| e.to_string())?;
    check!(r.spearman_rho == Some(1.0), "spearman {:?}", r.spearman_rho);
    let shown: Vec<String> = focused.iter().map(|v| format!("{v:.2}")).collect();
    Ok(format!("spearman 1.0, pearson {:.4}; vbenchcomp {}", r.pearson_r.unwrap_or(f64::NAN), shown.join(" / ")))
}

async fn criterion_5() -> Outcome {
    let spec = FixtureSpec::lvbench(5).with_eval("m", [0.9, 0.8, 0.4, 0.3]);
    let mut assignments = Vec::new();
    let mut first = None;
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for dir in &dirs {
        let f = build_fixture(&spec).map_err(|e| e.to_string())?;
        let (cfg, backends) = session(&f, &spec, dir.path(), 8);
        let out = dir.path().join("out");
        pipeline::run_all(&f.set, &cfg, &backends, ClassifierPolicy::default(), &ALL_FORMATS, &out)
            .await
            .map_err(|e| e.to_string())?;
        assignments.push(fs::read(out.join(ASSIGNMENT_FILE)).map_err(|e| e.to_string())?);
        first.get_or_insert((f, cfg, backends, out));
    }
    check!(!assignments[0].is_empty() && assignments[0] == assignments[1], "assignment files differ");
    let (f, cfg, backends, out) = first.expect("two runs");
    let (_, again) = pipeline::probe(&f.set, &cfg, &backends, &out).await.map_err(|e| e.to_string())?;
    check!(again.live_calls == 0, "{} live calls on rerun", again.live_calls);
    check!(again.hit_rate() == 1.0, "hit rate {}", again.hit_rate());
    Ok(format!(
        "{} identical assignment bytes; rerun {} requests, {} hits, 0 live",
        assignments[0].len(),
        again.requests,
        again.cache_hits
    ))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    for k in [2usize, 16, 64, 128] {
        for seed in 0..10_000u64 {
            let round = 1 + (seed % 2) as u8;
            let p = gen_permutation(seed, round, k).map_err(|e| e.to_string())?;
            let mut sorted = p.order.clone();
            sorted.sort_unstable();
            check!(sorted == (0..k).collect::<Vec<_>>(), "k={k} seed={seed}: not a bijection");
            check!(p.order.iter().enumerate().any(|(i, &j)| i != j), "k={k} seed={seed}: identity");
            check!(k != 2 || p.order == [1, 0], "k=2 seed={seed}: {:?}", p.order);
        }
    }
    Ok(format!("40000 permutations checked in {:.2?}", start.elapsed()))
}

const FILLER: [&str; 16] = [
    "the", "video", "shows", "cat", "Boat", "dAnce", "3D", "x2", "ABC", "option", "is", "clearly", "scene", "Cd", "after",
    "it's",
];
const PUNCT: [&str; 5] = ["", ",", ".", "!", ";"];

fn filler(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words)
        .map(|_| format!("{}{}", FILLER[rng.random_range(0..FILLER.len())], PUNCT[rng.random_range(0..PUNCT.len())]))
        .collect::<Vec<_>>()
        .join(" ")
}

fn criterion_7() -> Outcome {
    let options: Vec<String> = ["red ball", "blue car", "green tree", "yellow kite"].map(String::from).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let n = rng.random_range(1..12);
        let s = filler(&mut rng, n);
        check!(first_standalone_letter(&s, 4).is_none(), "letter found in `{s}`");
        let p = extract_choice(&s, &options);
        check!(p.method != ParseMethod::Letter, "letter rule fired on `{s}`");
    }
    for _ in 0..1000 {
        let gold = rng.random_range(0..4usize);
        let letter = (b'A' + gold as u8) as char;
        let (pre, post) = (rng.random_range(0..5), rng.random_range(0..5));
        let s = format!("{} Answer: {letter}{} {}", filler(&mut rng, pre), PUNCT[rng.random_range(0..5)], filler(&mut rng, post));
        let p = extract_choice(s.trim(), &options);
        check!(p.index == Some(gold) && p.method == ParseMethod::Letter, "`{s}` parsed as {p:?}");
    }
    Ok("1000 letter-free sentences, 1000 `Answer: X` sentences".into())
}

async fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let spec = FixtureSpec::new("Synthetic", [1250, 1250, 1250, 1250], 8).with_eval("m", [0.8, 0.7, 0.4, 0.3]);
    let f = build_fixture(&spec).map_err(|e| e.to_string())?;
    let (cfg, backends) = session(&f, &spec, dir.path(), 8);
    let run = pipeline::run_all(&f.set, &cfg, &backends, ClassifierPolicy::default(), &ALL_FORMATS, &dir.path().join("out"))
        .await
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check!(run.probe.questions == 5000, "{} questions", run.probe.questions);
    check!(run.probe.unresolved == 0, "{} unresolved", run.probe.unresolved);
    check!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("5000 questions, {} requests in {elapsed:.1?}", run.probe.requests))
}

fn kinds(counts: [u64; 4]) -> Vec<FindingKind> {
    profile_gaps(&stats(counts), &GapThresholds::default()).into_iter().map(|f| f.kind).collect()
}

fn criterion_9() -> Outcome {
    let nextqa = kinds([1738, 1880, 437, 941]);
    for k in [FindingKind::HighAlpha, FindingKind::HighBeta, FindingKind::LowGamma] {
        check!(nextqa.contains(&k), "NextQA lacks {k:?}: {nextqa:?}");
    }
    let lvbench = kinds([140, 321, 355, 733]);
    check!(!lvbench.contains(&FindingKind::HighAlpha), "LVBench fires alpha: {lvbench:?}");
    Ok(format!("NextQA {nextqa:?}; LVBench {lvbench:?}"))
}

fn main() -> ExitCode {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("runtime");
    let criteria: [Criterion; 9] = [
        ("truth table oracle", Box::new(criterion_1)),
        ("composition round trip", Box::new(|| rt.block_on(criterion_2()))),
        ("weighted mean identity", Box::new(|| rt.block_on(criterion_3()))),
        ("ranking alignment", Box::new(criterion_4)),
        ("determinism and resume", Box::new(|| rt.block_on(criterion_5()))),
        ("permutation properties", Box::new(criterion_6)),
        ("grader fuzz", Box::new(criterion_7)),
        ("throughput", Box::new(|| rt.block_on(criterion_8()))),
        ("gap profiling", Box::new(criterion_9)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
