//! Per-(document, stage) artifact cache keyed by document content hash and
//! the stage's configuration digest. Entries are JSON files written through
//! a temp file + rename, so an interrupted run never leaves a partial entry.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::export::write_atomic;

#[derive(Debug, Clone)]
pub struct StageCache {
    dir: PathBuf,
}

impl StageCache {
    pub fn open(cache_dir: &Path) -> std::io::Result<Self> {
        let dir = cache_dir.join("stages");
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn path_for(&self, content_hash: &str, stage: &str, config_digest: &str) -> PathBuf {
        self.dir
            .join(content_hash)
            .join(format!("{stage}-{}.json", &config_digest[..16.min(config_digest.len())]))
    }

    pub fn load<T: DeserializeOwned>(
        &self,
        content_hash: &str,
        stage: &str,
        config_digest: &str,
    ) -> Option<T> {
        let path = self.path_for(content_hash, stage, config_digest);
        let raw = std::fs::read_to_string(&path).ok()?;
        match serde_json::from_str(&raw) {
            Ok(value) => Some(value),
            Err(err) => {
                log::warn!("corrupt stage cache entry {}: {err}", path.display());
                None
            }
        }
    }

    pub fn store<T: Serialize>(
        &self,
        content_hash: &str,
        stage: &str,
        config_digest: &str,
        value: &T,
    ) {
        let path = self.path_for(content_hash, stage, config_digest);
        let body = match serde_json::to_vec(value) {
            Ok(b) => b,
            Err(err) => {
                log::warn!("stage artifact not serializable ({stage}): {err}");
                return;
            }
        };
        if let Err(err) = write_atomic(&path, &body) {
            log::warn!("failed to store stage artifact {}: {err}", path.display());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_digest_sensitivity() {
        let dir = tempfile::tempdir().unwrap();
        let cache = StageCache::open(dir.path()).unwrap();
        let value = vec!["a".to_string(), "b".to_string()];
        cache.store("hash1", "chunks", "cfgdigest000000000", &value);
        let back: Option<Vec<String>> = cache.load("hash1", "chunks", "cfgdigest000000000");
        assert_eq!(back.unwrap(), value);
        let miss: Option<Vec<String>> = cache.load("hash1", "chunks", "differentdigest000");
        assert!(miss.is_none());
        let miss: Option<Vec<String>> = cache.load("hash2", "chunks", "cfgdigest000000000");
        assert!(miss.is_none());
    }
}
