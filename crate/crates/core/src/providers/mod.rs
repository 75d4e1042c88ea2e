//! Pluggable model-service interfaces: text generation, embedding, and
//! reranking, with an HTTP implementation, deterministic offline mocks, a
//! filesystem response cache, and call accounting.
//!
//! Providers compose as layers: a base provider (mock or HTTP) is wrapped in
//! a counting layer that feeds [`ProviderStats`], and optionally in a caching
//! layer that serves repeats from disk without touching the layers beneath.

mod cache;
pub mod http;
pub mod mock;

pub use cache::{with_cache_embedder, with_cache_generator, with_cache_reranker, ResponseCache};
pub use http::HttpProviderConfig;

use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned HTTP {status} after {attempts} attempt(s)")]
    Status { status: u16, attempts: u32 },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("embedding batch is empty")]
    EmptyBatch,
    #[error("text at position {0} is empty after trimming")]
    EmptyText(usize),
    #[error("rerank candidate list is empty")]
    NoCandidates,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("embedding contains a NaN or infinite component")]
    NonFiniteEmbedding,
    #[error("credential env var {0} is not set")]
    MissingCredential(String),
    #[error("provider endpoint unreachable: {0}")]
    Unreachable(String),
}

impl ProviderError {
    /// Transport-class failures are the ones the retry policy applies to.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            ProviderError::Transport { .. } | ProviderError::Unreachable(_)
        )
    }
}

/// Request for one text-generation call.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_output_tokens: u32,
    pub temperature: f32,
    pub response_format: ResponseFormat,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    FreeText,
    Json,
}

impl GenerationRequest {
    pub fn json(prompt: String, max_output_tokens: u32, temperature: f32) -> Self {
        Self {
            prompt,
            max_output_tokens,
            temperature,
            response_format: ResponseFormat::Json,
        }
    }

    /// Canonical serialized form used for cache keys.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

/// A fixed-length embedding; components are always finite.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, ProviderError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::NonFiniteEmbedding);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// One reranked candidate: its index into the submitted list and a
/// relevance score (higher = more relevant).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RerankResult {
    pub candidate_index: usize,
    pub score: f64,
}

/// Monotonic call counters shared across a run.
#[derive(Debug, Default)]
pub struct ProviderStats {
    generate_calls: AtomicU64,
    embed_calls: AtomicU64,
    rerank_calls: AtomicU64,
    cache_hits: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct StatsSnapshot {
    pub generate_calls: u64,
    pub embed_calls: u64,
    pub rerank_calls: u64,
    pub cache_hits: u64,
}

impl ProviderStats {
    pub fn record_generate(&self) {
        self.generate_calls.fetch_add(1, Ordering::Relaxed);
    }
    pub fn record_embed(&self) {
        self.embed_calls.fetch_add(1, Ordering::Relaxed);
    }
    pub fn record_rerank(&self) {
        self.rerank_calls.fetch_add(1, Ordering::Relaxed);
    }
    pub fn record_cache_hit(&self) {
        self.cache_hits.fetch_add(1, Ordering::Relaxed);
    }
    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            generate_calls: self.generate_calls.load(Ordering::Relaxed),
            embed_calls: self.embed_calls.load(Ordering::Relaxed),
            rerank_calls: self.rerank_calls.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }
}

impl StatsSnapshot {
    pub fn provider_calls(&self) -> u64 {
        self.generate_calls + self.embed_calls + self.rerank_calls
    }
}

pub trait Generator: Send + Sync {
    /// Stable identifier; part of every cache key derived from this provider.
    fn id(&self) -> String;
    fn generate(&self, req: &GenerationRequest) -> Result<String, ProviderError>;
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    /// One vector per text, order-preserving. The batch must be non-empty
    /// and every text non-empty after trimming.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
}

pub trait Reranker: Send + Sync {
    fn id(&self) -> String;
    /// Scores every candidate against the query. Results are sorted by
    /// score descending, ties broken by ascending candidate index.
    fn rerank(&self, query: &str, candidates: &[String])
        -> Result<Vec<RerankResult>, ProviderError>;
}

impl<T: Generator + ?Sized> Generator for Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn generate(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        (**self).generate(req)
    }
}

impl<T: Embedder + ?Sized> Embedder for Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        (**self).embed(texts)
    }
}

impl<T: Reranker + ?Sized> Reranker for Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn rerank(
        &self,
        query: &str,
        candidates: &[String],
    ) -> Result<Vec<RerankResult>, ProviderError> {
        (**self).rerank(query, candidates)
    }
}

/// Wraps a provider so every real call lands in [`ProviderStats`]. Cache
/// layers sit outside this one, so cache hits are not counted as calls.
pub struct Counted<P> {
    inner: P,
    stats: Arc<ProviderStats>,
}

impl<P> Counted<P> {
    pub fn new(inner: P, stats: Arc<ProviderStats>) -> Self {
        Self { inner, stats }
    }
}

impl<P: Generator> Generator for Counted<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn generate(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        self.stats.record_generate();
        self.inner.generate(req)
    }
}

impl<P: Embedder> Embedder for Counted<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        self.stats.record_embed();
        self.inner.embed(texts)
    }
}

impl<P: Reranker> Reranker for Counted<P> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn rerank(
        &self,
        query: &str,
        candidates: &[String],
    ) -> Result<Vec<RerankResult>, ProviderError> {
        self.stats.record_rerank();
        self.inner.rerank(query, candidates)
    }
}

/// The three provider handles a pipeline run works with, plus shared stats.
#[derive(Clone)]
pub struct ProviderSet {
    pub generator: Arc<dyn Generator>,
    pub embedder: Arc<dyn Embedder>,
    pub reranker: Arc<dyn Reranker>,
    pub stats: Arc<ProviderStats>,
}

impl fmt::Debug for ProviderSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderSet")
            .field("generator", &self.generator.id())
            .field("embedder", &self.embedder.id())
            .field("reranker", &self.reranker.id())
            .finish()
    }
}

impl ProviderSet {
    /// Deterministic offline providers; the whole pipeline is byte-
    /// reproducible on these.
    pub fn mock(seed: u64, dim: usize) -> Self {
        let stats = Arc::new(ProviderStats::default());
        ProviderSet {
            generator: Arc::new(Counted::new(mock::MockGenerator::new(seed), stats.clone())),
            embedder: Arc::new(Counted::new(mock::MockEmbedder::new(seed, dim), stats.clone())),
            reranker: Arc::new(Counted::new(mock::MockReranker::new(), stats.clone())),
            stats,
        }
    }

    /// HTTP-backed providers from endpoint + model configuration.
    pub fn http(cfg: &HttpProviderConfig) -> Result<Self, ProviderError> {
        let stats = Arc::new(ProviderStats::default());
        let shared = http::HttpShared::new(cfg)?;
        Ok(ProviderSet {
            generator: Arc::new(Counted::new(
                http::HttpGenerator::new(shared.clone(), cfg),
                stats.clone(),
            )),
            embedder: Arc::new(Counted::new(
                http::HttpEmbedder::new(shared.clone(), cfg),
                stats.clone(),
            )),
            reranker: Arc::new(Counted::new(
                http::HttpReranker::new(shared, cfg),
                stats.clone(),
            )),
            stats,
        })
    }

    /// Wrap all three providers in the filesystem response cache.
    pub fn with_cache(self, cache_dir: &Path) -> std::io::Result<Self> {
        let cache = ResponseCache::open(cache_dir)?;
        Ok(ProviderSet {
            generator: Arc::new(with_cache_generator(
                self.generator,
                cache.clone(),
                self.stats.clone(),
            )),
            embedder: Arc::new(with_cache_embedder(
                self.embedder,
                cache.clone(),
                self.stats.clone(),
            )),
            reranker: Arc::new(with_cache_reranker(self.reranker, cache, self.stats.clone())),
            stats: self.stats,
        })
    }
}

pub(crate) fn validate_batch(texts: &[String]) -> Result<(), ProviderError> {
    if texts.is_empty() {
        return Err(ProviderError::EmptyBatch);
    }
    for (i, t) in texts.iter().enumerate() {
        if t.trim().is_empty() {
            return Err(ProviderError::EmptyText(i));
        }
    }
    Ok(())
}

/// Sort rerank scores descending with the deterministic index tie-break.
pub(crate) fn sort_rerank(mut results: Vec<RerankResult>) -> Vec<RerankResult> {
    results.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.candidate_index.cmp(&b.candidate_index))
    });
    results
}
