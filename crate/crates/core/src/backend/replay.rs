use std::path::PathBuf;

use async_trait::async_trait;

use super::{Backend, BackendError, ChatRequest, ResponseRecord};
use crate::orchestrator::cache::ResponseCache;

/// Answers strictly from a populated response cache; a miss is an error.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    id: String,
    cache: ResponseCache,
}

impl ReplayBackend {
    pub fn new(id: &str, cache_root: PathBuf) -> Self {
        Self { id: id.to_string(), cache: ResponseCache::new(cache_root) }
    }
}

#[async_trait]
impl Backend for ReplayBackend {
    fn id(&self) -> &str {
        &self.id
    }

    async fn send(&self, req: &ChatRequest) -> Result<ResponseRecord, BackendError> {
        self.cache
            .get(&req.meta.digest)
            .ok_or_else(|| BackendError::ReplayMiss(req.meta.digest.clone()))
    }
}
