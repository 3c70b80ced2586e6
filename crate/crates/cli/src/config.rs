use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vbenchcomp::backend::BackendConfig;
use vbenchcomp::classifier::ShuffleBreakRule;
use vbenchcomp::frameplan::{FramePolicy, DEFAULT_FRAME_COUNT, LONG_SPLIT_FRAME_COUNT};
use vbenchcomp::metrics::ReportFormat;
use vbenchcomp::orchestrator::{SessionConfig, DEFAULT_MAX_UNRESOLVED_FRACTION};

/// Run settings from `--config`, with every field optional so flags can override.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: Option<PathBuf>,
    pub judges: Option<Vec<PathBuf>>,
    pub eval_models: Option<Vec<PathBuf>>,
    pub seed: Option<u64>,
    pub frames: Option<usize>,
    pub frames_long: Option<usize>,
    pub shuffle_rule: Option<ShuffleBreakRule>,
    pub parallelism: Option<usize>,
    pub cache: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub formats: Option<Vec<ReportFormat>>,
    pub extractor: Option<String>,
    pub max_unresolved_fraction: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_slice(&bytes).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fields set in `flags` win over fields set here.
    pub fn overlay(self, flags: RunConfig) -> RunConfig {
        RunConfig {
            benchmark: flags.benchmark.or(self.benchmark),
            judges: flags.judges.or(self.judges),
            eval_models: flags.eval_models.or(self.eval_models),
            seed: flags.seed.or(self.seed),
            frames: flags.frames.or(self.frames),
            frames_long: flags.frames_long.or(self.frames_long),
            shuffle_rule: flags.shuffle_rule.or(self.shuffle_rule),
            parallelism: flags.parallelism.or(self.parallelism),
            cache: flags.cache.or(self.cache),
            out: flags.out.or(self.out),
            formats: flags.formats.or(self.formats),
            extractor: flags.extractor.or(self.extractor),
            max_unresolved_fraction: flags.max_unresolved_fraction.or(self.max_unresolved_fraction),
        }
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().context("--out is required")
    }

    pub fn benchmark_path(&self) -> Result<&Path> {
        let p = self.benchmark.as_deref().context("--benchmark is required")?;
        if !p.exists() {
            bail!("benchmark file {} does not exist", p.display());
        }
        Ok(p)
    }

    pub fn formats(&self) -> Vec<ReportFormat> {
        self.formats.clone().unwrap_or_else(|| vec![ReportFormat::Json, ReportFormat::Csv, ReportFormat::Md])
    }

    pub fn session_config(&self) -> Result<SessionConfig> {
        let judges = self.judges.as_deref().context("--judges needs two backend config files")?;
        let [a, b] = judges else {
            bail!("--judges needs exactly two backend config files, got {}", judges.len());
        };
        let seed = self.seed.context("--seed is required")?;
        let cache = self
            .cache
            .clone()
            .or_else(|| self.out.as_ref().map(|o| o.join("cache")))
            .context("--cache or --out is required")?;
        let mut cfg = SessionConfig::new([load_backend(a)?, load_backend(b)?], seed, cache);
        cfg.eval_models = self.eval_models.iter().flatten().map(|p| load_backend(p)).collect::<Result<_>>()?;
        cfg.frame_policy = FramePolicy::with_long_split(
            self.frames.unwrap_or(DEFAULT_FRAME_COUNT),
            self.frames_long.unwrap_or(LONG_SPLIT_FRAME_COUNT),
        );
        if let Some(p) = self.parallelism {
            cfg.parallelism = p;
        }
        cfg.max_unresolved_fraction = self.max_unresolved_fraction.unwrap_or(DEFAULT_MAX_UNRESOLVED_FRACTION);
        cfg.extractor = self.extractor.clone();
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads a backend config; a relative `script_path` resolves against the config file's directory.
pub fn load_backend(path: &Path) -> Result<BackendConfig> {
    let bytes = std::fs::read(path).with_context(|| format!("reading backend config {}", path.display()))?;
    let mut cfg: BackendConfig =
        serde_json::from_slice(&bytes).with_context(|| format!("parsing backend config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut cfg.script_path, &mut cfg.replay_root].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file = RunConfig { seed: Some(1), parallelism: Some(2), ..Default::default() };
        let flags = RunConfig { seed: Some(7), ..Default::default() };
        let merged = file.overlay(flags);
        assert_eq!((merged.seed, merged.parallelism), (Some(7), Some(2)));
    }

    #[test]
    fn unknown_config_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 3}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"seed": 3, "shuffle_rule": "ANY", "formats": ["md"]}"#).unwrap();
        assert_eq!(c.shuffle_rule, Some(ShuffleBreakRule::Any));
    }
}
