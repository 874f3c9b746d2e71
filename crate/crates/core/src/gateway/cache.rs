//! Content-addressed response cache.
//!
//! One file per key, named by the key's hex digest and holding the exact
//! response text. Writes go through a temporary file and a rename so a
//! reader never observes a partial record.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use super::GenerationParams;
use crate::error::{Error, Result};
use crate::text_metrics::EmbeddingVector;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    digest: String,
}

fn feed(hasher: &mut Sha256, field: &[u8]) {
    hasher.update((field.len() as u64).to_le_bytes());
    hasher.update(field);
}

impl CacheKey {
    pub fn for_completion(
        backend_id: &str,
        prompt: &str,
        params: &GenerationParams,
        sample_index: u32,
    ) -> Self {
        let mut h = Sha256::new();
        feed(&mut h, b"completion-v1");
        feed(&mut h, backend_id.as_bytes());
        feed(&mut h, params.model_id.as_bytes());
        feed(&mut h, prompt.as_bytes());
        feed(&mut h, &params.temperature.to_bits().to_le_bytes());
        feed(&mut h, &params.max_tokens.to_le_bytes());
        match params.seed {
            Some(seed) => feed(&mut h, &seed.to_le_bytes()),
            None => feed(&mut h, b"none"),
        }
        feed(&mut h, &sample_index.to_le_bytes());
        CacheKey {
            digest: hex::encode(h.finalize()),
        }
    }

    pub fn for_embedding(backend_id: &str, model_id: &str, text: &str) -> Self {
        let mut h = Sha256::new();
        feed(&mut h, b"embedding-v1");
        feed(&mut h, backend_id.as_bytes());
        feed(&mut h, model_id.as_bytes());
        feed(&mut h, text.as_bytes());
        CacheKey {
            digest: hex::encode(h.finalize()),
        }
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    tmp_counter: AtomicU64,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ResponseCache {
            dir,
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(&key.digest)
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<String>> {
        let path = self.path(key);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Stores `value` under `key`. Writing the same key again replaces the
    /// file atomically, so identical concurrent writes are harmless.
    pub fn put(&self, key: &CacheKey, value: &str) -> Result<()> {
        let tmp = self.dir.join(format!(
            ".{}.{}.{}.tmp",
            key.digest,
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, value).map_err(|e| Error::io(&tmp, e))?;
        let target = self.path(key);
        fs::rename(&tmp, &target).map_err(|e| Error::io(target, e))
    }

    pub fn get_embedding(&self, key: &CacheKey) -> Result<Option<EmbeddingVector>> {
        match self.get(key)? {
            Some(text) => Ok(Some(serde_json::from_str(&text)?)),
            None => Ok(None),
        }
    }

    pub fn put_embedding(&self, key: &CacheKey, vector: &EmbeddingVector) -> Result<()> {
        self.put(key, &serde_json::to_string(vector)?)
    }

    /// Number of records currently stored.
    pub fn len(&self) -> Result<usize> {
        let entries = fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        Ok(entries
            .filter_map(|e| e.ok())
            .filter(|e| !e.file_name().to_string_lossy().starts_with('.'))
            .count())
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.len()? == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_depend_on_every_field() {
        let p = GenerationParams::default();
        let base = CacheKey::for_completion("mock", "P", &p, 0);
        assert_eq!(base, CacheKey::for_completion("mock", "P", &p, 0));
        assert_ne!(base, CacheKey::for_completion("live", "P", &p, 0));
        assert_ne!(base, CacheKey::for_completion("mock", "Q", &p, 0));
        assert_ne!(base, CacheKey::for_completion("mock", "P", &p, 1));
        let mut q = p.clone();
        q.temperature = 0.5;
        assert_ne!(base, CacheKey::for_completion("mock", "P", &q, 0));
        let mut q = p.clone();
        q.max_tokens += 1;
        assert_ne!(base, CacheKey::for_completion("mock", "P", &q, 0));
        let mut q = p.clone();
        q.seed = Some(0);
        assert_ne!(base, CacheKey::for_completion("mock", "P", &q, 0));
        let mut q = p;
        q.model_id.push('x');
        assert_ne!(base, CacheKey::for_completion("mock", "P", &q, 0));
        // Length prefixes keep field boundaries unambiguous.
        assert_ne!(
            CacheKey::for_embedding("ab", "c", "d"),
            CacheKey::for_embedding("a", "bc", "d")
        );
    }

    #[test]
    fn put_get_and_idempotent_rewrite() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let key = CacheKey::for_embedding("b", "m", "t");
        assert_eq!(cache.get(&key).unwrap(), None);
        cache.put(&key, "héllo\n").unwrap();
        cache.put(&key, "héllo\n").unwrap();
        assert_eq!(cache.get(&key).unwrap().as_deref(), Some("héllo\n"));
        assert_eq!(cache.len().unwrap(), 1);
        assert!(dir.path().join(key.digest()).is_file());
    }
}
