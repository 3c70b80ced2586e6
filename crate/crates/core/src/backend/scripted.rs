use std::collections::BTreeMap;
use std::path::Path;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ChatRequest, ResponseRecord, ResponseStatus};
use crate::model::ConditionKind;

/// A scripted reply: answer text, a refusal, or a transport-style failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Answer(String),
    Refuse { refuse: bool },
    Error { error: String },
}

/// Replies keyed by question id and condition, optionally overridden by request digest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub replies: BTreeMap<String, BTreeMap<ConditionKind, ScriptedReply>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_digest: BTreeMap<String, ScriptedReply>,
}

impl Script {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let bytes = std::fs::read(path).map_err(|source| BackendError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_slice(&bytes).map_err(|e| BackendError::Config {
            backend: path.display().to_string(),
            reason: format!("bad script: {e}"),
        })
    }

    pub fn set(&mut self, question_id: &str, condition: ConditionKind, reply: ScriptedReply) {
        self.replies.entry(question_id.to_string()).or_default().insert(condition, reply);
    }

    pub fn lookup(&self, question_id: &str, condition: ConditionKind, digest: &str) -> Option<&ScriptedReply> {
        self.by_digest
            .get(digest)
            .or_else(|| self.replies.get(question_id).and_then(|m| m.get(&condition)))
    }
}

/// Deterministic test double: a pure function of (question id, condition).
/// Unknown keys are refused.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    id: String,
    script: Script,
}

impl ScriptedBackend {
    pub fn new(id: &str, script: Script) -> Self {
        Self { id: id.to_string(), script }
    }
}

#[async_trait]
impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    async fn send(&self, req: &ChatRequest) -> Result<ResponseRecord, BackendError> {
        let reply = self.script.lookup(&req.meta.question_id, req.meta.condition, &req.meta.digest);
        let (status, raw_text) = match reply {
            Some(ScriptedReply::Answer(t)) if !t.is_empty() => (ResponseStatus::Ok, t.clone()),
            Some(ScriptedReply::Error { error }) => (ResponseStatus::Error, error.clone()),
            _ => (ResponseStatus::Refused, String::new()),
        };
        Ok(ResponseRecord {
            backend_id: self.id.clone(),
            digest: req.meta.digest.clone(),
            raw_text,
            latency_ms: 0,
            prompt_tokens: None,
            completion_tokens: None,
            status,
            timestamp_ms: ResponseRecord::now_ms(),
            retries: 0,
        })
    }
}
