//! Filesystem response cache.
//!
//! One file per key under the cache directory; the key is a digest of
//! (provider id, operation, canonicalized request), and the file stores the
//! request alongside the response so corrupt or mismatched entries can be
//! detected and treated as misses. Writes go through a temp file + rename,
//! so concurrent writers and interrupted runs never leave partial entries.

use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    EmbeddingVector, GenerationRequest, Generator, ProviderError, ProviderStats, RerankResult,
    Reranker,
};
use crate::corpus::hex_digest;

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    provider_id: String,
    operation: String,
    request: String,
    response: serde_json::Value,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn key(provider_id: &str, operation: &str, canonical_request: &str) -> String {
        let mut hasher = Sha256::new();
        for part in [provider_id, operation, canonical_request] {
            hasher.update(part.as_bytes());
            hasher.update([0x1f]);
        }
        hex_digest(hasher)
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Look up a response; a corrupt or mismatched entry is a miss.
    fn load(&self, key: &str, provider_id: &str, operation: &str) -> Option<serde_json::Value> {
        let path = self.path_for(key);
        let raw = std::fs::read_to_string(&path).ok()?;
        match serde_json::from_str::<CacheEntry>(&raw) {
            Ok(entry) if entry.provider_id == provider_id && entry.operation == operation => {
                Some(entry.response)
            }
            _ => {
                log::warn!("corrupt cache entry at {}; treating as miss", path.display());
                None
            }
        }
    }

    /// Atomic store: write a temp file in the cache dir, then rename.
    fn store(
        &self,
        key: &str,
        provider_id: &str,
        operation: &str,
        request: &str,
        response: serde_json::Value,
    ) {
        let entry = CacheEntry {
            provider_id: provider_id.to_string(),
            operation: operation.to_string(),
            request: request.to_string(),
            response,
        };
        let body = match serde_json::to_string(&entry) {
            Ok(b) => b,
            Err(err) => {
                log::warn!("cache entry for {key} not serializable: {err}");
                return;
            }
        };
        let tmp = self.dir.join(format!(
            "{key}.tmp.{}.{}",
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let final_path = self.path_for(key);
        if let Err(err) = std::fs::write(&tmp, body).and_then(|()| std::fs::rename(&tmp, &final_path))
        {
            log::warn!("failed to store cache entry {key}: {err}");
            let _ = std::fs::remove_file(&tmp);
        }
    }
}

pub struct CachedGenerator<G> {
    inner: G,
    cache: ResponseCache,
    stats: Arc<ProviderStats>,
}

pub fn with_cache_generator<G: Generator>(
    inner: G,
    cache: ResponseCache,
    stats: Arc<ProviderStats>,
) -> CachedGenerator<G> {
    CachedGenerator { inner, cache, stats }
}

impl<G: Generator> Generator for CachedGenerator<G> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        let id = self.inner.id();
        let canonical = req.canonical();
        let key = ResponseCache::key(&id, "generate", &canonical);
        if let Some(value) = self.cache.load(&key, &id, "generate") {
            if let Some(text) = value.as_str() {
                self.stats.record_cache_hit();
                return Ok(text.to_string());
            }
        }
        let out = self.inner.generate(req)?;
        self.cache
            .store(&key, &id, "generate", &canonical, serde_json::Value::String(out.clone()));
        Ok(out)
    }
}

pub struct CachedEmbedder<E> {
    inner: E,
    cache: ResponseCache,
    stats: Arc<ProviderStats>,
}

pub fn with_cache_embedder<E: super::Embedder>(
    inner: E,
    cache: ResponseCache,
    stats: Arc<ProviderStats>,
) -> CachedEmbedder<E> {
    CachedEmbedder { inner, cache, stats }
}

impl<E: super::Embedder> super::Embedder for CachedEmbedder<E> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Embeddings are cached per text, so a rerun with a partially changed
    /// batch only embeds the new texts (one inner call for the misses).
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        super::validate_batch(texts)?;
        let id = self.inner.id();
        let mut results: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        let mut missing: Vec<usize> = Vec::new();
        for (i, text) in texts.iter().enumerate() {
            let key = ResponseCache::key(&id, "embed", text);
            let cached = self
                .cache
                .load(&key, &id, "embed")
                .and_then(|v| serde_json::from_value::<Vec<f32>>(v).ok())
                .and_then(|values| EmbeddingVector::new(values).ok());
            match cached {
                Some(v) => {
                    self.stats.record_cache_hit();
                    results[i] = Some(v);
                }
                None => missing.push(i),
            }
        }
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let fresh = self.inner.embed(&batch)?;
            if fresh.len() != batch.len() {
                return Err(ProviderError::MalformedResponse(format!(
                    "expected {} embeddings, got {}",
                    batch.len(),
                    fresh.len()
                )));
            }
            for (&i, vector) in missing.iter().zip(fresh.into_iter()) {
                let key = ResponseCache::key(&id, "embed", &texts[i]);
                let value = serde_json::to_value(&vector.values).expect("f32 list serializes");
                self.cache.store(&key, &id, "embed", &texts[i], value);
                results[i] = Some(vector);
            }
        }
        Ok(results.into_iter().map(|v| v.expect("filled")).collect())
    }
}

pub struct CachedReranker<R> {
    inner: R,
    cache: ResponseCache,
    stats: Arc<ProviderStats>,
}

pub fn with_cache_reranker<R: Reranker>(
    inner: R,
    cache: ResponseCache,
    stats: Arc<ProviderStats>,
) -> CachedReranker<R> {
    CachedReranker { inner, cache, stats }
}

impl<R: Reranker> Reranker for CachedReranker<R> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn rerank(
        &self,
        query: &str,
        candidates: &[String],
    ) -> Result<Vec<RerankResult>, ProviderError> {
        if candidates.is_empty() {
            return Err(ProviderError::NoCandidates);
        }
        let id = self.inner.id();
        let canonical = serde_json::to_string(&(query, candidates)).expect("serializable");
        let key = ResponseCache::key(&id, "rerank", &canonical);
        if let Some(value) = self.cache.load(&key, &id, "rerank") {
            if let Ok(results) = serde_json::from_value::<Vec<RerankResult>>(value) {
                self.stats.record_cache_hit();
                return Ok(results);
            }
        }
        let out = self.inner.rerank(query, candidates)?;
        let value = serde_json::to_value(&out).expect("serializable");
        self.cache.store(&key, &id, "rerank", &canonical, value);
        Ok(out)
    }
}
