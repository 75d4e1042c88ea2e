//! HTTP-backed providers: a chat-completion endpoint for generation, an
//! embeddings endpoint, and a rerank endpoint, all driven by base-URL +
//! model-name configuration. Requests retry on transport failures, 429, and
//! 5xx with exponential backoff and jitter, and in-flight requests per
//! provider set are bounded by a configurable ceiling.

use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    sort_rerank, validate_batch, EmbeddingVector, GenerationRequest, Generator, ProviderError,
    RerankResult, Reranker, ResponseFormat,
};

/// Endpoint and model configuration for the three HTTP providers.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct HttpProviderConfig {
    pub generation_base_url: String,
    pub generation_model: String,
    pub embedding_base_url: String,
    pub embedding_model: String,
    pub rerank_base_url: String,
    pub rerank_model: String,
    /// Name of the env var holding the bearer token (the value never
    /// appears in config or manifests).
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    /// Concurrent-request ceiling across the provider set.
    pub rate_limit: usize,
}

impl Default for HttpProviderConfig {
    fn default() -> Self {
        Self {
            generation_base_url: "http://localhost:8000/v1".to_string(),
            generation_model: "default-chat".to_string(),
            embedding_base_url: "http://localhost:8000/v1".to_string(),
            embedding_model: "default-embed".to_string(),
            rerank_base_url: "http://localhost:8000/v1".to_string(),
            rerank_model: "default-rerank".to_string(),
            api_key_env: None,
            timeout_secs: 60,
            max_attempts: 3,
            backoff_base_ms: 250,
            rate_limit: 4,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore");
        while *permits == 0 {
            permits = self.cv.wait(permits).expect("semaphore");
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().expect("semaphore") += 1;
        self.sem.cv.notify_one();
    }
}

/// Client, credentials, limiter, and retry policy shared by the three
/// HTTP providers.
#[derive(Clone)]
pub struct HttpShared {
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    limiter: Arc<Semaphore>,
    max_attempts: u32,
    backoff_base_ms: u64,
}

impl HttpShared {
    pub fn new(cfg: &HttpProviderConfig) -> Result<Self, ProviderError> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| ProviderError::MissingCredential(var.clone()))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Transport { attempts: 0, message: e.to_string() })?;
        Ok(Self {
            client,
            api_key,
            limiter: Arc::new(Semaphore::new(cfg.rate_limit)),
            max_attempts: cfg.max_attempts.max(1),
            backoff_base_ms: cfg.backoff_base_ms,
        })
    }

    /// POST `body` to `url`, retrying transport failures, 429, and 5xx.
    fn post_json<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        url: &str,
        body: &B,
    ) -> Result<R, ProviderError> {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let _permit = self.limiter.acquire();
            let mut req = self.client.post(url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.json::<R>().map_err(|e| {
                            ProviderError::MalformedResponse(format!("decoding {url}: {e}"))
                        });
                    }
                    let retryable = status.as_u16() == 429 || status.is_server_error();
                    if !retryable || attempt >= self.max_attempts {
                        return Err(ProviderError::Status {
                            status: status.as_u16(),
                            attempts: attempt,
                        });
                    }
                }
                Err(err) => {
                    if attempt >= self.max_attempts {
                        return Err(ProviderError::Transport {
                            attempts: attempt,
                            message: err.to_string(),
                        });
                    }
                }
            }
            drop(_permit);
            self.sleep_backoff(attempt);
        }
    }

    fn sleep_backoff(&self, attempt: u32) {
        let base = self.backoff_base_ms.saturating_mul(1u64 << (attempt - 1).min(8));
        let jitter = rand::rng().random_range(0..=base / 2 + 1);
        std::thread::sleep(Duration::from_millis(base + jitter));
    }
}

/// Connectivity check used before a run: any HTTP status counts as
/// reachable, only connect/timeout failures do not.
pub fn probe_endpoint(base_url: &str, timeout_secs: u64) -> Result<(), ProviderError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(timeout_secs))
        .build()
        .map_err(|e| ProviderError::Unreachable(e.to_string()))?;
    match client.get(base_url).send() {
        Ok(_) => Ok(()),
        Err(e) => Err(ProviderError::Unreachable(format!("{base_url}: {e}"))),
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    max_tokens: u32,
    temperature: f32,
    #[serde(skip_serializing_if = "Option::is_none")]
    response_format: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

pub struct HttpGenerator {
    shared: HttpShared,
    url: String,
    model: String,
}

impl HttpGenerator {
    pub fn new(shared: HttpShared, cfg: &HttpProviderConfig) -> Self {
        Self {
            shared,
            url: format!("{}/chat/completions", cfg.generation_base_url.trim_end_matches('/')),
            model: cfg.generation_model.clone(),
        }
    }
}

impl Generator for HttpGenerator {
    fn id(&self) -> String {
        format!("http:gen:{}:{}", self.url, self.model)
    }

    fn generate(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        let response_format = match req.response_format {
            ResponseFormat::Json => Some(serde_json::json!({"type": "json_object"})),
            ResponseFormat::FreeText => None,
        };
        let body = ChatRequest {
            model: &self.model,
            messages: vec![ChatMessage { role: "user", content: &req.prompt }],
            max_tokens: req.max_output_tokens,
            temperature: req.temperature,
            response_format,
        };
        let resp: ChatResponse = self.shared.post_json(&self.url, &body)?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ProviderError::MalformedResponse("no choices in response".to_string()))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    index: usize,
    embedding: Vec<f32>,
}

pub struct HttpEmbedder {
    shared: HttpShared,
    url: String,
    model: String,
    dim: OnceLock<usize>,
}

impl HttpEmbedder {
    pub fn new(shared: HttpShared, cfg: &HttpProviderConfig) -> Self {
        Self {
            shared,
            url: format!("{}/embeddings", cfg.embedding_base_url.trim_end_matches('/')),
            model: cfg.embedding_model.clone(),
            dim: OnceLock::new(),
        }
    }
}

impl super::Embedder for HttpEmbedder {
    fn id(&self) -> String {
        format!("http:embed:{}:{}", self.url, self.model)
    }

    /// Dimensionality observed on the first call; 0 before that.
    fn dim(&self) -> usize {
        self.dim.get().copied().unwrap_or(0)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        validate_batch(texts)?;
        let body = EmbedRequest { model: &self.model, input: texts };
        let resp: EmbedResponse = self.shared.post_json(&self.url, &body)?;
        if resp.data.len() != texts.len() {
            return Err(ProviderError::MalformedResponse(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                resp.data.len()
            )));
        }
        let mut data = resp.data;
        data.sort_by_key(|d| d.index);
        let mut out = Vec::with_capacity(data.len());
        for datum in data {
            let v = EmbeddingVector::new(datum.embedding)?;
            let expected = *self.dim.get_or_init(|| v.dim());
            if v.dim() != expected {
                return Err(ProviderError::DimMismatch { expected, got: v.dim() });
            }
            out.push(v);
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct RerankRequest<'a> {
    model: &'a str,
    query: &'a str,
    documents: &'a [String],
}

#[derive(Deserialize)]
struct RerankResponse {
    results: Vec<RerankDatum>,
}

#[derive(Deserialize)]
struct RerankDatum {
    index: usize,
    relevance_score: f64,
}

pub struct HttpReranker {
    shared: HttpShared,
    url: String,
    model: String,
}

impl HttpReranker {
    pub fn new(shared: HttpShared, cfg: &HttpProviderConfig) -> Self {
        Self {
            shared,
            url: format!("{}/rerank", cfg.rerank_base_url.trim_end_matches('/')),
            model: cfg.rerank_model.clone(),
        }
    }
}

impl Reranker for HttpReranker {
    fn id(&self) -> String {
        format!("http:rerank:{}:{}", self.url, self.model)
    }

    fn rerank(
        &self,
        query: &str,
        candidates: &[String],
    ) -> Result<Vec<RerankResult>, ProviderError> {
        if candidates.is_empty() {
            return Err(ProviderError::NoCandidates);
        }
        let body = RerankRequest { model: &self.model, query, documents: candidates };
        let resp: RerankResponse = self.shared.post_json(&self.url, &body)?;
        let results = resp
            .results
            .into_iter()
            .map(|d| {
                if d.index >= candidates.len() {
                    Err(ProviderError::MalformedResponse(format!(
                        "rerank index {} out of range",
                        d.index
                    )))
                } else {
                    Ok(RerankResult { candidate_index: d.index, score: d.relevance_score })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(sort_rerank(results))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Minimal scripted HTTP server: each accepted connection consumes the
    /// next (status, body) pair.
    fn scripted_server(replies: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let hits_clone = hits.clone();
        std::thread::spawn(move || {
            for (status, body) in replies {
                let Ok((mut stream, _)) = listener.accept() else { return };
                hits_clone.fetch_add(1, Ordering::SeqCst);
                let mut buf = [0u8; 65536];
                let mut read_total = 0usize;
                // Read until the end of headers plus declared body length.
                loop {
                    match stream.read(&mut buf[read_total..]) {
                        Ok(0) => break,
                        Ok(n) => {
                            read_total += n;
                            let text = String::from_utf8_lossy(&buf[..read_total]);
                            if let Some(head_end) = text.find("\r\n\r\n") {
                                let content_len = text
                                    .lines()
                                    .find_map(|l| {
                                        l.to_ascii_lowercase()
                                            .strip_prefix("content-length:")
                                            .map(|v| v.trim().parse::<usize>().unwrap_or(0))
                                    })
                                    .unwrap_or(0);
                                if read_total >= head_end + 4 + content_len {
                                    break;
                                }
                            }
                        }
                        Err(_) => break,
                    }
                }
                let reason = if status == 200 { "OK" } else { "ERR" };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(response.as_bytes());
            }
        });
        (format!("http://{addr}"), hits)
    }

    fn fast_cfg(base: &str) -> HttpProviderConfig {
        HttpProviderConfig {
            generation_base_url: base.to_string(),
            embedding_base_url: base.to_string(),
            rerank_base_url: base.to_string(),
            timeout_secs: 5,
            max_attempts: 3,
            backoff_base_ms: 5,
            ..HttpProviderConfig::default()
        }
    }

    #[test]
    fn generate_parses_chat_choice() {
        let body = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": "[\"a\"]"}}]
        })
        .to_string();
        let (base, hits) = scripted_server(vec![(200, body)]);
        let cfg = fast_cfg(&base);
        let generator = HttpGenerator::new(HttpShared::new(&cfg).unwrap(), &cfg);
        let out = generator
            .generate(&GenerationRequest::json("hi".to_string(), 16, 0.2))
            .unwrap();
        assert_eq!(out, "[\"a\"]");
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn transient_5xx_is_retried_then_succeeds() {
        let ok = serde_json::json!({
            "choices": [{"message": {"content": "done"}}]
        })
        .to_string();
        let (base, hits) = scripted_server(vec![
            (500, "{}".to_string()),
            (503, "{}".to_string()),
            (200, ok),
        ]);
        let cfg = fast_cfg(&base);
        let generator = HttpGenerator::new(HttpShared::new(&cfg).unwrap(), &cfg);
        let out = generator
            .generate(&GenerationRequest::json("hi".to_string(), 16, 0.2))
            .unwrap();
        assert_eq!(out, "done");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (base, hits) = scripted_server(vec![(404, "{}".to_string()), (200, "{}".to_string())]);
        let cfg = fast_cfg(&base);
        let generator = HttpGenerator::new(HttpShared::new(&cfg).unwrap(), &cfg);
        let err = generator
            .generate(&GenerationRequest::json("hi".to_string(), 16, 0.2))
            .unwrap_err();
        assert!(matches!(err, ProviderError::Status { status: 404, attempts: 1 }));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn exhausted_retries_reports_attempts() {
        let (base, _hits) = scripted_server(vec![
            (500, "{}".to_string()),
            (500, "{}".to_string()),
            (500, "{}".to_string()),
        ]);
        let cfg = fast_cfg(&base);
        let generator = HttpGenerator::new(HttpShared::new(&cfg).unwrap(), &cfg);
        let err = generator
            .generate(&GenerationRequest::json("hi".to_string(), 16, 0.2))
            .unwrap_err();
        assert!(matches!(err, ProviderError::Status { status: 500, attempts: 3 }));
    }

    #[test]
    fn embeddings_are_ordered_by_index() {
        let body = serde_json::json!({
            "data": [
                {"index": 1, "embedding": [0.0, 1.0]},
                {"index": 0, "embedding": [1.0, 0.0]}
            ]
        })
        .to_string();
        let (base, _) = scripted_server(vec![(200, body)]);
        let cfg = fast_cfg(&base);
        let embedder = HttpEmbedder::new(HttpShared::new(&cfg).unwrap(), &cfg);
        use crate::providers::Embedder;
        let out = embedder.embed(&["a".to_string(), "b".to_string()]).unwrap();
        assert_eq!(out[0].values, vec![1.0, 0.0]);
        assert_eq!(out[1].values, vec![0.0, 1.0]);
        assert_eq!(embedder.dim(), 2);
    }

    #[test]
    fn rerank_sorts_scores_descending() {
        let body = serde_json::json!({
            "results": [
                {"index": 0, "relevance_score": 0.2},
                {"index": 1, "relevance_score": 0.9}
            ]
        })
        .to_string();
        let (base, _) = scripted_server(vec![(200, body)]);
        let cfg = fast_cfg(&base);
        let reranker = HttpReranker::new(HttpShared::new(&cfg).unwrap(), &cfg);
        let out = reranker
            .rerank("q", &["a".to_string(), "b".to_string()])
            .unwrap();
        assert_eq!(out[0].candidate_index, 1);
        assert_eq!(out[1].candidate_index, 0);
    }

    #[test]
    fn probe_detects_unreachable_endpoint() {
        // Port 1 on localhost is essentially never listening.
        let err = probe_endpoint("http://127.0.0.1:1", 1).unwrap_err();
        assert!(matches!(err, ProviderError::Unreachable(_)));
        let (base, _) = scripted_server(vec![(404, "{}".to_string())]);
        assert!(probe_endpoint(&base, 5).is_ok());
    }

    #[test]
    fn missing_credential_env_is_an_error() {
        let cfg = HttpProviderConfig {
            api_key_env: Some("QACGEN_TEST_KEY_THAT_DOES_NOT_EXIST".to_string()),
            ..HttpProviderConfig::default()
        };
        assert!(matches!(
            HttpShared::new(&cfg),
            Err(ProviderError::MissingCredential(_))
        ));
    }
}
