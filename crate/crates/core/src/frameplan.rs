//! Frame sampling plans, seeded shuffle permutations and external frame
//! extraction.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::TagPredicate;

pub const DEFAULT_FRAME_COUNT: usize = 64;
pub const LONG_SPLIT_FRAME_COUNT: usize = 128;

/// Version string stamped into every manifest this module writes.
pub const EXTRACTOR_VERSION: &str = concat!("vbenchcomp-extract/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum FramePlanError {
    #[error("video duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("frame count must be at least 1")]
    ZeroFrames,
    #[error("permutations need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("shuffle round must be 1 or 2, got {0}")]
    InvalidRound(u8),
    #[error("permutation length {permutation} does not match plan length {plan}")]
    LengthMismatch { plan: usize, permutation: usize },
    #[error("extractor template must contain {{input}}, {{timestamp}} and {{output}}: `{0}`")]
    InvalidTemplate(String),
    #[error("video not found: {0}")]
    MissingVideo(String),
    #[error("extractor exited with code {exit_code:?}: {stderr}")]
    ExtractorFailed { exit_code: Option<i32>, stderr: String },
    #[error("extractor produced no readable image at {path}: {reason}")]
    BadFrame { path: PathBuf, reason: String },
    #[error("io error at {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FramePlanError + '_ {
    move |source| FramePlanError::Io { path: path.to_path_buf(), source }
}

/// How many frames to sample; the first matching override wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePolicy {
    pub default_count: usize,
    #[serde(default)]
    pub overrides: Vec<FrameOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOverride {
    pub when: TagPredicate,
    pub count: usize,
}

impl Default for FramePolicy {
    /// 64 frames, 128 for questions tagged `split=long`.
    fn default() -> Self {
        Self::with_long_split(DEFAULT_FRAME_COUNT, LONG_SPLIT_FRAME_COUNT)
    }
}

impl FramePolicy {
    pub fn with_long_split(default_count: usize, long_count: usize) -> Self {
        Self {
            default_count,
            overrides: vec![FrameOverride { when: TagPredicate::new("split", "long"), count: long_count }],
        }
    }

    pub fn frame_count(&self, tags: &BTreeMap<String, String>) -> usize {
        self.overrides
            .iter()
            .find(|o| o.when.matches(tags))
            .map_or(self.default_count, |o| o.count)
    }

    pub fn max_count(&self) -> usize {
        self.overrides.iter().map(|o| o.count).fold(self.default_count, usize::max)
    }

    pub fn validate(&self) -> Result<(), FramePlanError> {
        if self.default_count == 0 || self.overrides.iter().any(|o| o.count == 0) {
            return Err(FramePlanError::ZeroFrames);
        }
        Ok(())
    }
}

/// Sample times and stable frame identifiers for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePlan {
    pub video_ref: String,
    /// Always ascending, even after a permutation is applied.
    pub timestamps_s: Vec<f64>,
    /// Presentation order.
    pub frame_ids: Vec<String>,
    #[serde(default)]
    pub shuffled: bool,
}

impl FramePlan {
    pub fn len(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ids.is_empty()
    }

    /// Timestamp of a frame id (frame ids keep their original sample time).
    pub fn timestamp_of(&self, frame_id: &str) -> Option<f64> {
        frame_index(frame_id).and_then(|i| self.timestamps_s.get(i).copied())
    }
}

fn frame_id(index: usize, timestamp_s: f64) -> String {
    format!("f{index:04}_{:010}", (timestamp_s * 1000.0).round() as u64)
}

fn frame_index(frame_id: &str) -> Option<usize> {
    frame_id.strip_prefix('f')?.split('_').next()?.parse().ok()
}

/// Uniform midpoint sampling: `t_i = duration * (i + 0.5) / K`.
pub fn build_frame_plan(
    video_ref: &str,
    duration_s: f64,
    policy: &FramePolicy,
    tags: &BTreeMap<String, String>,
) -> Result<FramePlan, FramePlanError> {
    if duration_s <= 0.0 || !duration_s.is_finite() {
        return Err(FramePlanError::NonPositiveDuration(duration_s));
    }
    let k = policy.frame_count(tags);
    if k == 0 {
        return Err(FramePlanError::ZeroFrames);
    }
    let timestamps_s: Vec<f64> =
        (0..k).map(|i| duration_s * (i as f64 + 0.5) / k as f64).collect();
    let frame_ids = timestamps_s.iter().enumerate().map(|(i, t)| frame_id(i, *t)).collect();
    Ok(FramePlan { video_ref: video_ref.to_string(), timestamps_s, frame_ids, shuffled: false })
}

/// A non-identity reordering of `K` frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    pub order: Vec<usize>,
    pub seed: u64,
    pub round: u8,
}

impl Permutation {
    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.order.len()];
        for &j in &self.order {
            if j >= seen.len() || std::mem::replace(&mut seen[j], true) {
                return false;
            }
        }
        true
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.order.len()];
        for (i, &j) in self.order.iter().enumerate() {
            inv[j] = i;
        }
        Permutation { order: inv, seed: self.seed, round: self.round }
    }
}

/// Independent generator state for a `(seed, round)` pair.
fn round_rng(seed: u64, round: u8) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(b"vbenchcomp/permutation/v1");
    h.update(seed.to_le_bytes());
    h.update([round]);
    ChaCha20Rng::from_seed(h.finalize().into())
}

/// Seeded Fisher-Yates shuffle of `0..k`, redrawn until it is not the identity.
pub fn gen_permutation(seed: u64, round: u8, k: usize) -> Result<Permutation, FramePlanError> {
    if k < 2 {
        return Err(FramePlanError::TooFewFrames(k));
    }
    if !(1..=2).contains(&round) {
        return Err(FramePlanError::InvalidRound(round));
    }
    if k == 2 {
        return Ok(Permutation { order: vec![1, 0], seed, round });
    }
    let mut rng = round_rng(seed, round);
    loop {
        let mut order: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let p = Permutation { order, seed, round };
        if !p.is_identity() {
            return Ok(p);
        }
    }
}

/// Reorders the plan's frames for presentation. Position `i` shows frame `order[i]`.
pub fn apply_permutation(plan: &FramePlan, p: &Permutation) -> Result<FramePlan, FramePlanError> {
    if p.order.len() != plan.len() {
        return Err(FramePlanError::LengthMismatch { plan: plan.len(), permutation: p.order.len() });
    }
    let frame_ids = p.order.iter().map(|&j| plan.frame_ids[j].clone()).collect();
    Ok(FramePlan {
        video_ref: plan.video_ref.clone(),
        timestamps_s: plan.timestamps_s.clone(),
        frame_ids,
        shuffled: !p.is_identity(),
    })
}

/// One extracted frame on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameManifest {
    pub video_ref: String,
    pub entries: BTreeMap<String, FrameEntry>,
    pub extractor_version: String,
}

impl FrameManifest {
    pub fn path_of(&self, frame_id: &str) -> Option<&Path> {
        self.entries.get(frame_id).map(|e| e.path.as_path())
    }
}

/// Stable directory key for a video reference.
pub fn video_digest(video_ref: &str) -> String {
    hex::encode(&Sha256::digest(video_ref.as_bytes())[..12])
}

pub fn frames_dir(cache_root: &Path, video_ref: &str) -> PathBuf {
    cache_root.join("frames").join(video_digest(video_ref))
}

pub fn frame_path(cache_root: &Path, video_ref: &str, frame_id: &str) -> PathBuf {
    frames_dir(cache_root, video_ref).join(format!("{frame_id}.jpg"))
}

fn file_sha256(path: &Path) -> Result<String, FramePlanError> {
    let mut f = File::open(path).map_err(io_err(path))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn image_dims(path: &Path) -> Result<(u32, u32), FramePlanError> {
    let bad = |reason: String| FramePlanError::BadFrame { path: path.to_path_buf(), reason };
    image::ImageReader::open(path)
        .map_err(|e| bad(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| bad(e.to_string()))?
        .into_dimensions()
        .map_err(|e| bad(e.to_string()))
}

/// Splits a command template into argv, substituting placeholders per token.
pub fn render_command(template: &str, input: &str, timestamp_s: f64, output: &str) -> Vec<String> {
    let ts = format!("{timestamp_s:.3}");
    template
        .split_whitespace()
        .map(|tok| tok.replace("{input}", input).replace("{timestamp}", &ts).replace("{output}", output))
        .collect()
}

/// Runs the external extractor once per missing frame and returns the manifest.
///
/// Frames whose files still match the digest recorded in an existing manifest
/// are reused. Extraction for one video holds an exclusive lock on
/// `manifest.lock` in the frame directory.
pub fn extract_frames(
    plan: &FramePlan,
    template: &str,
    cache_root: &Path,
) -> Result<FrameManifest, FramePlanError> {
    if !["{input}", "{timestamp}", "{output}"].iter().all(|p| template.contains(p)) {
        return Err(FramePlanError::InvalidTemplate(template.to_string()));
    }
    if !Path::new(&plan.video_ref).is_file() {
        return Err(FramePlanError::MissingVideo(plan.video_ref.clone()));
    }
    let dir = frames_dir(cache_root, &plan.video_ref);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let lock_path = dir.join("manifest.lock");
    let lock = File::create(&lock_path).map_err(io_err(&lock_path))?;
    lock.lock().map_err(io_err(&lock_path))?;

    let manifest_path = dir.join("manifest.json");
    let previous: Option<FrameManifest> = fs::read(&manifest_path)
        .ok()
        .and_then(|bytes| serde_json::from_slice(&bytes).ok());

    let mut entries = BTreeMap::new();
    for frame_id in &plan.frame_ids {
        let out = dir.join(format!("{frame_id}.jpg"));
        let reusable = previous.as_ref().and_then(|m| m.entries.get(frame_id)).filter(|e| {
            e.path == out && out.is_file() && file_sha256(&out).is_ok_and(|d| d == e.sha256)
        });
        if let Some(e) = reusable {
            entries.insert(frame_id.clone(), e.clone());
            continue;
        }
        let ts = plan.timestamp_of(frame_id).unwrap_or_default();
        let argv = render_command(template, &plan.video_ref, ts, &out.to_string_lossy());
        let output = Command::new(&argv[0]).args(&argv[1..]).output().map_err(|source| {
            FramePlanError::Io { path: PathBuf::from(&argv[0]), source }
        })?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(FramePlanError::ExtractorFailed {
                exit_code: output.status.code(),
                stderr: stderr.chars().take(500).collect(),
            });
        }
        let (width, height) = image_dims(&out)?;
        let sha256 = file_sha256(&out)?;
        entries.insert(frame_id.clone(), FrameEntry { path: out, width, height, sha256 });
    }
    // Keep frames of other plans for the same video (e.g. a different frame count).
    for (id, e) in previous.into_iter().flat_map(|m| m.entries) {
        if !entries.contains_key(&id) && e.path.is_file() {
            entries.insert(id, e);
        }
    }

    let manifest = FrameManifest {
        video_ref: plan.video_ref.clone(),
        entries,
        extractor_version: EXTRACTOR_VERSION.to_string(),
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    let tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err(&dir))?;
    fs::write(tmp.path(), json).map_err(io_err(tmp.path()))?;
    tmp.persist(&manifest_path).map_err(|e| FramePlanError::Io { path: manifest_path.clone(), source: e.error })?;
    Ok(manifest)
}
