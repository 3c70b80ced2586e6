//! Model backends: a uniform `send` contract over a remote chat API, scripted
//! test doubles and replay from a response cache.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{option_letter, ConditionKind, QuestionRecord};

mod http;
mod ratelimit;
mod replay;
mod scripted;

pub use http::HttpBackend;
pub use ratelimit::TokenBucket;
pub use replay::ReplayBackend;
pub use scripted::{Script, ScriptedBackend, ScriptedReply};

pub const DEFAULT_PROMPT_TEMPLATE_VERSION: &str = "v1";
pub const ANSWER_INSTRUCTION: &str = "Answer with the option letter only.";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("environment variable `{0}` holding the API token is not set")]
    AuthMissing(String),
    #[error("malformed API response: {0}")]
    MalformedApiResponse(String),
    #[error("replay cache has no entry for {0}")]
    ReplayMiss(String),
    #[error("request carries {images} images but backend `{backend}` accepts at most {limit}")]
    TooManyImages { backend: String, images: usize, limit: usize },
    #[error("invalid backend config `{backend}`: {reason}")]
    Config { backend: String, reason: String },
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BackendKind {
    Http,
    Scripted,
    Replay,
}

fn default_template_version() -> String {
    DEFAULT_PROMPT_TEMPLATE_VERSION.to_string()
}
fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    3
}
fn default_retry_base_ms() -> u64 {
    1000
}
fn default_image_part_type() -> String {
    "image".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend_id: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    #[serde(default)]
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env_var: Option<String>,
    /// Part of every cache key; bump it to invalidate cached answers.
    #[serde(default = "default_template_version")]
    pub prompt_template_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_images_per_request: Option<usize>,
    #[serde(default = "default_timeout")]
    pub request_timeout_s: f64,
    /// Requests per minute; unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit: Option<f64>,
    /// Token bucket capacity; defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burst: Option<u32>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
    /// Content part `type` used for images in HTTP requests.
    #[serde(default = "default_image_part_type")]
    pub image_part_type: String,
    /// Script file for SCRIPTED backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_path: Option<PathBuf>,
    /// Cache root answered from by REPLAY backends; defaults to the session cache.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_root: Option<PathBuf>,
}

impl BackendConfig {
    fn base(backend_id: &str, kind: BackendKind) -> Self {
        Self {
            backend_id: backend_id.to_string(),
            kind,
            endpoint_url: None,
            model_name: backend_id.to_string(),
            auth_env_var: None,
            prompt_template_version: default_template_version(),
            max_images_per_request: None,
            request_timeout_s: default_timeout(),
            rate_limit: None,
            burst: None,
            max_retries: default_retries(),
            retry_base_ms: default_retry_base_ms(),
            image_part_type: default_image_part_type(),
            script_path: None,
            replay_root: None,
        }
    }

    pub fn scripted(backend_id: &str) -> Self {
        Self::base(backend_id, BackendKind::Scripted)
    }

    pub fn replay(backend_id: &str, root: Option<PathBuf>) -> Self {
        Self { replay_root: root, ..Self::base(backend_id, BackendKind::Replay) }
    }

    pub fn http(backend_id: &str, endpoint_url: &str, model_name: &str, auth_env_var: &str) -> Self {
        Self {
            endpoint_url: Some(endpoint_url.to_string()),
            model_name: model_name.to_string(),
            auth_env_var: Some(auth_env_var.to_string()),
            ..Self::base(backend_id, BackendKind::Http)
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let fail = |reason: &str| {
            Err(BackendError::Config { backend: self.backend_id.clone(), reason: reason.to_string() })
        };
        if self.backend_id.trim().is_empty() {
            return fail("backend_id is empty");
        }
        if self.kind == BackendKind::Http {
            if self.endpoint_url.as_deref().is_none_or(str::is_empty) {
                return fail("HTTP backends need endpoint_url");
            }
            if self.auth_env_var.as_deref().is_none_or(str::is_empty) {
                return fail("HTTP backends need auth_env_var");
            }
        }
        if self.rate_limit.is_some_and(|r| r.is_nan() || r <= 0.0) {
            return fail("rate_limit must be positive");
        }
        if self.request_timeout_s.is_nan() || self.request_timeout_s <= 0.0 {
            return fail("request_timeout_s must be positive");
        }
        Ok(())
    }
}

/// Identifies which probe a request belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestMeta {
    pub question_id: String,
    pub condition: ConditionKind,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub user_text: String,
    /// Frame files in presentation order; empty for text-only probes.
    pub images: Vec<PathBuf>,
    pub meta: RequestMeta,
}

/// Renders the versioned prompt for one question.
pub fn build_request(q: &QuestionRecord, condition: ConditionKind, images: Vec<PathBuf>, digest: &str) -> ChatRequest {
    let system_text = if condition.uses_video() {
        "You are shown frames sampled from a video, in presentation order, followed by a multiple-choice question about the video."
    } else {
        "You are given a multiple-choice question about a video. The video is not provided."
    };
    let mut user_text = q.question.trim().to_string();
    user_text.push('\n');
    for (i, opt) in q.options.iter().enumerate() {
        let letter = option_letter(i).unwrap_or('?');
        user_text.push_str(&format!("({letter}) {}\n", opt.trim()));
    }
    user_text.push_str(ANSWER_INSTRUCTION);
    debug_assert!(condition.uses_video() || images.is_empty());
    ChatRequest {
        system_text: system_text.to_string(),
        user_text,
        images,
        meta: RequestMeta {
            question_id: q.id.clone(),
            condition,
            digest: digest.to_string(),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResponseStatus {
    Ok,
    Refused,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub backend_id: String,
    pub digest: String,
    pub raw_text: String,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
    pub status: ResponseStatus,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
    #[serde(default)]
    pub retries: u32,
}

impl ResponseRecord {
    pub fn now_ms() -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }

    /// Cacheable outcomes are model behavior (answers and refusals), never failures.
    pub fn is_cacheable(&self) -> bool {
        self.status != ResponseStatus::Error
    }
}

/// Anything that answers chat requests. Implementations must allow concurrent `send`.
#[async_trait]
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    async fn send(&self, req: &ChatRequest) -> Result<ResponseRecord, BackendError>;
}

/// Instantiates the backend described by `cfg`.
pub fn build(cfg: &BackendConfig, session_cache: &Path) -> Result<Arc<dyn Backend>, BackendError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::Http => Arc::new(HttpBackend::new(cfg.clone())?),
        BackendKind::Scripted => {
            let path = cfg.script_path.as_ref().ok_or_else(|| BackendError::Config {
                backend: cfg.backend_id.clone(),
                reason: "SCRIPTED backends need script_path".into(),
            })?;
            let script = Script::load(path)?;
            Arc::new(ScriptedBackend::new(&cfg.backend_id, script))
        }
        BackendKind::Replay => {
            let root = cfg.replay_root.clone().unwrap_or_else(|| session_cache.to_path_buf());
            Arc::new(ReplayBackend::new(&cfg.backend_id, root))
        }
    })
}
