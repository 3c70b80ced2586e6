//! Content-addressed response store under `{root}/responses/{digest[0:2]}/{digest}.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;
use tracing::warn;

use crate::backend::ResponseRecord;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache entry {path} is corrupt: {reason}")]
    CorruptEntry { path: PathBuf, reason: String },
    #[error("invalid digest `{0}`")]
    InvalidDigest(String),
    #[error("cache io error at {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

fn valid_digest(d: &str) -> bool {
    d.len() >= 2 && d.bytes().all(|b| b.is_ascii_hexdigit())
}

impl ResponseCache {
    pub fn new(root: PathBuf) -> Self {
        Self { root }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, digest: &str) -> PathBuf {
        self.root.join("responses").join(&digest[..2.min(digest.len())]).join(format!("{digest}.json"))
    }

    /// Strict lookup: corrupt entries are errors.
    pub fn try_get(&self, digest: &str) -> Result<Option<ResponseRecord>, CacheError> {
        if !valid_digest(digest) {
            return Err(CacheError::InvalidDigest(digest.to_string()));
        }
        let path = self.entry_path(digest);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(CacheError::Io { path, source }),
        };
        let record: ResponseRecord = serde_json::from_slice(&bytes)
            .map_err(|e| CacheError::CorruptEntry { path: path.clone(), reason: e.to_string() })?;
        if record.digest != digest {
            return Err(CacheError::CorruptEntry {
                path,
                reason: format!("entry holds digest {}", record.digest),
            });
        }
        Ok(Some(record))
    }

    /// Lookup that treats corrupt or unreadable entries as misses, with a warning.
    pub fn get(&self, digest: &str) -> Option<ResponseRecord> {
        match self.try_get(digest) {
            Ok(r) => r,
            Err(e) => {
                warn!("{e}; treating as cache miss");
                None
            }
        }
    }

    /// Atomically stores `record` under its digest (temp file, then rename).
    pub fn put(&self, record: &ResponseRecord) -> Result<(), CacheError> {
        if !valid_digest(&record.digest) {
            return Err(CacheError::InvalidDigest(record.digest.clone()));
        }
        let path = self.entry_path(&record.digest);
        let dir = path.parent().expect("entry has a parent");
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |source| CacheError::Io { path: p, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io(dir))?;
        let json = serde_json::to_vec(record).expect("record serializes");
        tmp.write_all(&json).map_err(io(tmp.path()))?;
        tmp.persist(&path).map_err(|e| CacheError::Io { path: path.clone(), source: e.error })?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ResponseStatus;

    fn record(digest: &str) -> ResponseRecord {
        ResponseRecord {
            backend_id: "j".into(),
            digest: digest.into(),
            raw_text: "A".into(),
            latency_ms: 3,
            prompt_tokens: None,
            completion_tokens: None,
            status: ResponseStatus::Ok,
            timestamp_ms: 9,
            retries: 0,
        }
    }

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path().into());
        let d = "0f".repeat(32);
        assert!(cache.get(&d).is_none());
        cache.put(&record(&d)).unwrap();
        assert_eq!(cache.get(&d), Some(record(&d)));
        assert!(cache.entry_path(&d).ends_with(format!("responses/0f/{d}.json")));
    }

    #[test]
    fn mismatched_digest_is_corrupt_and_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path().into());
        let d = "aa".repeat(32);
        let other = "bb".repeat(32);
        let path = cache.entry_path(&d);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, serde_json::to_vec(&record(&other)).unwrap()).unwrap();
        assert!(matches!(cache.try_get(&d), Err(CacheError::CorruptEntry { .. })));
        assert!(cache.get(&d).is_none());
        fs::write(&path, b"{not json").unwrap();
        assert!(cache.get(&d).is_none());
    }

    #[test]
    fn rejects_path_like_digests() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path().into());
        assert!(matches!(cache.try_get("../etc"), Err(CacheError::InvalidDigest(_))));
    }

    #[test]
    fn concurrent_writers_leave_a_valid_entry() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path().into());
        let d = "cd".repeat(32);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| cache.put(&record(&d)).unwrap());
            }
        });
        assert_eq!(cache.try_get(&d).unwrap(), Some(record(&d)));
    }
}
