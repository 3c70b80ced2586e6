use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;
use vbenchcomp::classifier::{ClassifierPolicy, ShuffleBreakRule};
use vbenchcomp::ingest::{
    apply_adapter, emit_canonical, load_canonical, parse_source, split_by_tag, AdapterSpec, BenchmarkSet,
    LoadOptions, TagPredicate,
};
use vbenchcomp::metrics::ReportFormat;
use vbenchcomp::model::validate_batch;
use vbenchcomp::orchestrator::{write_json, Backends};
use vbenchcomp::{pipeline, selftest, simfixtures};

mod config;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "vbenchcomp", version, about = "Categorize video QA benchmark questions and score models per category")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw benchmark to canonical JSONL, or validate a canonical file.
    Ingest(IngestArgs),
    /// Run judge and evaluated-model probes, resuming from the cache.
    Probe(RunArgs),
    /// Assign categories from probe verdicts.
    Classify(RunArgs),
    /// Score evaluated models per category.
    Score(RunArgs),
    /// Write the composition, score and cost report.
    Report(RunArgs),
    /// probe, classify, score and report in sequence.
    Run(RunArgs),
    /// Check the classifier and permutation generator against references.
    Selftest,
    /// Write a scripted fixture with a chosen composition.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Raw benchmark (JSON array or JSONL); canonical JSONL when --adapter is absent.
    #[arg(long)]
    benchmark: PathBuf,
    /// Adapter spec mapping raw fields to the canonical schema.
    #[arg(long)]
    adapter: Option<PathBuf>,
    /// Benchmark name for records that carry none.
    #[arg(long)]
    name: Option<String>,
    /// Keep only questions whose tag matches, e.g. `split=long`.
    #[arg(long)]
    split: Option<TagPredicate>,
    /// Drop invalid records with a warning instead of failing.
    #[arg(long)]
    skip_invalid: bool,
    /// Canonical output file; validation only when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Canonical benchmark JSONL.
    #[arg(long)]
    benchmark: Option<PathBuf>,
    /// Two judge backend config files.
    #[arg(long, num_args = 2)]
    judges: Option<Vec<PathBuf>>,
    /// Evaluated-model backend config files.
    #[arg(long, num_args = 1..)]
    eval_models: Option<Vec<PathBuf>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Frames per video (default 64).
    #[arg(long)]
    frames: Option<usize>,
    /// Frames for questions tagged split=long (default 128).
    #[arg(long)]
    frames_long: Option<usize>,
    /// all: a judge must fail both shuffles; any: one failed shuffle suffices.
    #[arg(long)]
    shuffle_rule: Option<ShuffleBreakRule>,
    /// Concurrent requests (default 8).
    #[arg(long)]
    parallelism: Option<usize>,
    /// Response and frame cache root (default {out}/cache).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report formats, comma separated: json,csv,md.
    #[arg(long, value_delimiter = ',')]
    format: Option<Vec<ReportFormat>>,
    /// Frame extractor command template with {input}, {timestamp} and {output}.
    #[arg(long)]
    extractor: Option<String>,
    /// Abort when more than this fraction of questions is unresolved (default 0.01).
    #[arg(long)]
    max_unresolved: Option<f64>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(base.overlay(RunConfig {
            benchmark: self.benchmark.clone(),
            judges: self.judges.clone(),
            eval_models: self.eval_models.clone(),
            seed: self.seed,
            frames: self.frames,
            frames_long: self.frames_long,
            shuffle_rule: self.shuffle_rule,
            parallelism: self.parallelism,
            cache: self.cache.clone(),
            out: self.out.clone(),
            formats: self.format.clone(),
            extractor: self.extractor.clone(),
            max_unresolved_fraction: self.max_unresolved,
        }))
    }
}

#[derive(Args)]
struct FixtureArgs {
    /// videomme, lvbench or uniform.
    #[arg(long, default_value = "videomme")]
    preset: String,
    /// Full fixture spec as JSON; overrides --preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Questions per category for the uniform preset.
    #[arg(long, default_value_t = 1)]
    per_category: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluated model as `id=llm,semantic,temporal,others` accuracies in [0, 1].
    #[arg(long = "eval")]
    evals: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_eval(s: &str) -> Result<(String, [f64; 4])> {
    let (id, accs) = s.split_once('=').context("expected id=a,b,c,d")?;
    let v: Vec<f64> = accs
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad accuracies in `{s}`"))?;
    let arr: [f64; 4] = v.try_into().map_err(|_| anyhow::anyhow!("need four accuracies in `{s}`"))?;
    Ok((id.to_string(), arr))
}

fn load_benchmark(path: &Path) -> Result<BenchmarkSet> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let loaded = load_canonical(BufReader::new(f), None, LoadOptions::default())
        .with_context(|| format!("loading {}", path.display()))?;
    if loaded.set.is_empty() {
        bail!("{} has no questions", path.display());
    }
    Ok(loaded.set)
}

fn cmd_ingest(a: &IngestArgs) -> Result<ExitCode> {
    let (set, warnings) = match &a.adapter {
        Some(adapter) => {
            let spec: AdapterSpec = serde_json::from_slice(&fs::read(adapter)?)
                .with_context(|| format!("parsing adapter {}", adapter.display()))?;
            let text = fs::read_to_string(&a.benchmark)?;
            let mut records = apply_adapter(&parse_source(&text)?, &spec)?;
            if let Some(name) = &a.name {
                records.iter_mut().filter(|r| r.benchmark.is_empty()).for_each(|r| r.benchmark = name.clone());
            }
            let problems = validate_batch(&records);
            let mut warnings: Vec<String> = problems.iter().map(|(id, v)| format!("record {id}: {v}")).collect();
            if !problems.is_empty() {
                if !a.skip_invalid {
                    for w in &warnings {
                        eprintln!("{w}");
                    }
                    eprintln!("{} invalid records", warnings.len());
                    return Ok(ExitCode::FAILURE);
                }
                let bad: std::collections::HashSet<_> = problems.iter().map(|(id, _)| id.clone()).collect();
                records.retain(|r| !bad.contains(&r.id));
                warnings.push(format!("dropped {} records", bad.len()));
            }
            let name = a.name.clone().or_else(|| records.first().map(|r| r.benchmark.clone())).unwrap_or_default();
            let digest = vbenchcomp::ingest::source_digest(text.as_bytes());
            (BenchmarkSet { name, records, source_digest: digest }, warnings)
        }
        None => {
            // Collect every diagnostic first, then decide whether they are fatal.
            let read = || -> Result<_> { Ok(BufReader::new(fs::File::open(&a.benchmark)?)) };
            let lenient = load_canonical(read()?, a.name.as_deref(), LoadOptions { skip_invalid: true })?;
            if !lenient.warnings.is_empty() && !a.skip_invalid {
                for w in &lenient.warnings {
                    eprintln!("{w}");
                }
                eprintln!("{} invalid lines", lenient.warnings.len());
                return Ok(ExitCode::FAILURE);
            }
            (lenient.set, lenient.warnings)
        }
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let set = match &a.split {
        Some(pred) => split_by_tag(&set, pred),
        None => set,
    };
    if let Some(out) = &a.out {
        if let Some(dir) = out.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut bytes = Vec::new();
        emit_canonical(&set, &mut bytes)?;
        fs::write(out, bytes).with_context(|| format!("writing {}", out.display()))?;
    }
    println!("{}: {} valid questions, {} skipped", set.name, set.len(), warnings.len());
    Ok(ExitCode::SUCCESS)
}

async fn cmd_probe(rc: &RunConfig) -> Result<()> {
    let out = rc.out_dir()?;
    let bench = load_benchmark(rc.benchmark_path()?)?;
    let cfg = rc.session_config()?;
    let backends = Backends::from_config(&cfg)?;
    let recorded = serde_json::to_value(rc)?;
    let (_, s) = pipeline::probe_recording(&bench, &cfg, &backends, out, Some(recorded)).await?;
    println!(
        "{}: {} questions, {} requests: {} live, {} cached ({:.1}% hits), {} unresolved",
        bench.name,
        s.questions,
        s.requests,
        s.live_calls,
        s.cache_hits,
        100.0 * s.hit_rate(),
        s.unresolved
    );
    Ok(())
}

fn policy(rc: &RunConfig) -> ClassifierPolicy {
    ClassifierPolicy::new(rc.shuffle_rule.unwrap_or_default())
}

fn cmd_classify(rc: &RunConfig) -> Result<()> {
    let c = pipeline::classify(rc.out_dir()?, policy(rc))?;
    println!("| Dataset | Total | LLM | Semantic | Temporal | Others |");
    println!("{}", c.row);
    if !c.assignment.unresolved.is_empty() {
        println!("{} unresolved questions excluded", c.assignment.unresolved.len());
    }
    Ok(())
}

fn cmd_score(rc: &RunConfig) -> Result<()> {
    let scores = pipeline::score(rc.out_dir()?)?;
    if scores.is_empty() {
        println!("no evaluated models in this session");
    }
    for s in &scores {
        let v = s.vbenchcomp.map_or("-".to_string(), vbenchcomp::model::format_1dp);
        println!("{}: overall {} vbenchcomp {}", s.model_id, vbenchcomp::model::format_1dp(s.overall), v);
    }
    Ok(())
}

fn cmd_report(rc: &RunConfig) -> Result<()> {
    let (_, files) = pipeline::report(rc.out_dir()?, &rc.formats())?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_selftest() -> ExitCode {
    let checks = selftest::run_selftest();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn cmd_fixture(a: &FixtureArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => serde_json::from_slice(&fs::read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => match a.preset.as_str() {
            "videomme" => simfixtures::FixtureSpec::videomme(a.seed),
            "lvbench" => simfixtures::FixtureSpec::lvbench(a.seed),
            "uniform" => simfixtures::FixtureSpec::uniform(a.per_category, a.seed),
            other => bail!("unknown preset `{other}` (videomme, lvbench, uniform)"),
        },
    };
    for e in &a.evals {
        let (id, accs) = parse_eval(e)?;
        spec = spec.with_eval(&id, accs);
    }
    let fixture = simfixtures::build_fixture(&spec)?;
    let written = fixture.write(&a.out, &spec.judge_ids)?;
    write_json(&a.out.join("fixture_spec.json"), &spec)?;
    println!("{}: {} questions in {}", spec.benchmark, fixture.set.len(), written.benchmark_path.display());
    for p in &written.config_paths {
        println!("backend config {}", p.display());
    }
    Ok(())
}

async fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest(a) => return cmd_ingest(&a),
        Command::Probe(a) => cmd_probe(&a.resolve()?).await?,
        Command::Classify(a) => cmd_classify(&a.resolve()?)?,
        Command::Score(a) => cmd_score(&a.resolve()?)?,
        Command::Report(a) => cmd_report(&a.resolve()?)?,
        Command::Run(a) => {
            let rc = a.resolve()?;
            cmd_probe(&rc).await?;
            cmd_classify(&rc)?;
            cmd_score(&rc)?;
            cmd_report(&rc)?;
        }
        Command::Selftest => return Ok(cmd_selftest()),
        Command::Fixture(a) => cmd_fixture(&a)?,
    }
    Ok(ExitCode::SUCCESS)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
