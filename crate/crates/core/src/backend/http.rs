use std::path::Path;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use base64::Engine;
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{Backend, BackendConfig, BackendError, ChatRequest, ResponseRecord, ResponseStatus, TokenBucket};

/// Chat-completions style HTTP backend with bearer auth, retries and a
/// client-side token bucket.
pub struct HttpBackend {
    cfg: BackendConfig,
    client: reqwest::Client,
    bucket: Option<TokenBucket>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("backend_id", &self.cfg.backend_id).finish()
    }
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self, BackendError> {
        cfg.validate()?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.request_timeout_s))
            .build()
            .map_err(|e| BackendError::Config { backend: cfg.backend_id.clone(), reason: e.to_string() })?;
        let bucket = cfg.rate_limit.map(|rpm| TokenBucket::per_minute(rpm, cfg.burst.unwrap_or(1)));
        Ok(Self { cfg, client, bucket })
    }

    fn token(&self) -> Result<String, BackendError> {
        let var = self.cfg.auth_env_var.clone().unwrap_or_default();
        match std::env::var(&var) {
            Ok(t) if !t.is_empty() => Ok(t),
            _ => Err(BackendError::AuthMissing(var)),
        }
    }

    fn body(&self, req: &ChatRequest) -> Result<Value, BackendError> {
        let mut user_parts = Vec::with_capacity(req.images.len() + 1);
        for path in &req.images {
            user_parts.push(json!({
                "type": self.cfg.image_part_type,
                "image_url": { "url": data_uri(path)? },
            }));
        }
        user_parts.push(json!({ "type": "text", "text": req.user_text }));
        Ok(json!({
            "model": self.cfg.model_name,
            "messages": [
                { "role": "system", "content": [{ "type": "text", "text": req.system_text }] },
                { "role": "user", "content": user_parts },
            ],
        }))
    }

    fn record(&self, req: &ChatRequest, status: ResponseStatus, raw_text: String, started: Instant, retries: u32) -> ResponseRecord {
        ResponseRecord {
            backend_id: self.cfg.backend_id.clone(),
            digest: req.meta.digest.clone(),
            raw_text,
            latency_ms: started.elapsed().as_millis() as u64,
            prompt_tokens: None,
            completion_tokens: None,
            status,
            timestamp_ms: ResponseRecord::now_ms(),
            retries,
        }
    }
}

fn data_uri(path: &Path) -> Result<String, BackendError> {
    let bytes = std::fs::read(path).map_err(|source| BackendError::Io { path: path.to_path_buf(), source })?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        _ => "image/jpeg",
    };
    Ok(format!("data:{mime};base64,{}", base64::engine::general_purpose::STANDARD.encode(bytes)))
}

/// Parsed assistant reply: status, text, prompt tokens, completion tokens.
pub(crate) fn parse_completion(body: &Value) -> Result<(ResponseStatus, String, Option<u64>, Option<u64>), BackendError> {
    let choice = body
        .get("choices")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .ok_or_else(|| BackendError::MalformedApiResponse("no choices".into()))?;
    let message = choice
        .get("message")
        .ok_or_else(|| BackendError::MalformedApiResponse("choice has no message".into()))?;
    let text = match message.get("content") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(parts)) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        Some(Value::Null) | None => String::new(),
        Some(other) => return Err(BackendError::MalformedApiResponse(format!("unexpected content {other}"))),
    };
    let refusal = message.get("refusal").and_then(Value::as_str).filter(|s| !s.is_empty());
    let filtered = choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter");
    let usage = body.get("usage");
    let tokens = |k: &str| usage.and_then(|u| u.get(k)).and_then(Value::as_u64);
    let (status, text) = match refusal {
        Some(r) => (ResponseStatus::Refused, r.to_string()),
        None if filtered || text.trim().is_empty() => (ResponseStatus::Refused, text),
        None => (ResponseStatus::Ok, text),
    };
    Ok((status, text, tokens("prompt_tokens"), tokens("completion_tokens")))
}

#[async_trait]
impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.cfg.backend_id
    }

    async fn send(&self, req: &ChatRequest) -> Result<ResponseRecord, BackendError> {
        let token = self.token()?;
        if let Some(limit) = self.cfg.max_images_per_request {
            if req.images.len() > limit {
                return Err(BackendError::TooManyImages {
                    backend: self.cfg.backend_id.clone(),
                    images: req.images.len(),
                    limit,
                });
            }
        }
        let body = self.body(req)?;
        let url = self.cfg.endpoint_url.as_deref().unwrap_or_default();
        let started = Instant::now();
        let mut retries = 0;
        loop {
            if let Some(bucket) = &self.bucket {
                bucket.acquire().await;
            }
            let outcome = self.client.post(url).bearer_auth(&token).json(&body).send().await;
            let retry_reason = match outcome {
                Ok(resp) if resp.status().is_success() => {
                    let value: Value = resp
                        .json()
                        .await
                        .map_err(|e| BackendError::MalformedApiResponse(e.to_string()))?;
                    let (status, text, pt, ct) = parse_completion(&value)?;
                    let mut rec = self.record(req, status, text, started, retries);
                    rec.prompt_tokens = pt;
                    rec.completion_tokens = ct;
                    return Ok(rec);
                }
                Ok(resp) => {
                    let code = resp.status();
                    let text = resp.text().await.unwrap_or_default();
                    let excerpt: String = text.chars().take(300).collect();
                    if code.as_u16() != 429 && !code.is_server_error() {
                        let msg = format!("HTTP {code}: {excerpt}");
                        return Ok(self.record(req, ResponseStatus::Error, msg, started, retries));
                    }
                    format!("HTTP {code}: {excerpt}")
                }
                Err(e) => format!("transport: {e}"),
            };
            if retries >= self.cfg.max_retries {
                warn!(backend = %self.cfg.backend_id, %retry_reason, "retry budget exhausted");
                return Ok(self.record(req, ResponseStatus::Error, retry_reason, started, retries));
            }
            let delay = Duration::from_millis(self.cfg.retry_base_ms.saturating_mul(1 << retries.min(16)));
            debug!(backend = %self.cfg.backend_id, %retry_reason, ?delay, "retrying");
            tokio::time::sleep(delay).await;
            retries += 1;
        }
    }
}
