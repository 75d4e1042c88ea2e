//! Deterministic offline providers.
//!
//! Every mock is a pure function of (input, seed), so a full pipeline run on
//! mocks is byte-reproducible. The mock generator recognizes the default
//! prompt templates by their fixed marker phrases and emits schema-valid
//! JSON built from the salient tokens of the rendered input, which keeps all
//! downstream parsing paths exercised without network access.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Mutex;

use serde_json::json;
use sha2::{Digest, Sha256};

use super::{
    sort_rerank, validate_batch, EmbeddingVector, GenerationRequest, Generator, ProviderError,
    RerankResult, Reranker,
};
use crate::corpus::{split_sentences, tokenize_lower, tokenize_spans};
use crate::prompts::REJECTION_SENTINEL;
use crate::qacgen::BloomLevel;

const STOPWORDS: &[&str] = &[
    "about", "above", "after", "again", "against", "all", "also", "and", "any", "are", "because",
    "been", "before", "being", "below", "between", "both", "but", "can", "could", "does", "doing",
    "down", "during", "each", "few", "for", "from", "further", "has", "had", "have", "having",
    "here", "how", "into", "its", "itself", "just", "more", "most", "not", "now", "off", "once",
    "only", "other", "our", "out", "over", "own", "same", "should", "some", "such", "than",
    "that", "the", "their", "theirs", "them", "then", "there", "these", "they", "this", "those",
    "through", "under", "until", "very", "was", "were", "what", "when", "where", "which", "while",
    "who", "whom", "why", "will", "with", "would", "your",
];

fn is_stopword(word: &str) -> bool {
    STOPWORDS.contains(&word)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn digest64(seed: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for p in parts {
        hasher.update([0x1f]);
        hasher.update(p.as_bytes());
    }
    let out = hasher.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

/// Offline text generator keyed to the default prompt templates.
pub struct MockGenerator {
    seed: u64,
}

impl MockGenerator {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn extract_concepts(&self, prompt: &str) -> String {
        let passage = section(prompt, "PASSAGE:", "JSON array:").unwrap_or(prompt);
        let max = parse_number_after(prompt, "Extract up to ").unwrap_or(8).max(1);
        let concepts = salient_concepts(passage, max, digest64(self.seed, &[prompt]));
        serde_json::to_string(&concepts).expect("serializable")
    }

    fn label_cluster(&self, prompt: &str) -> String {
        let members = section(prompt, "CONCEPTS:", "JSON object:").unwrap_or(prompt);
        let first = members
            .lines()
            .map(|l| l.trim().trim_start_matches("- "))
            .find(|l| !l.is_empty())
            .unwrap_or("general theme");
        let label: Vec<&str> = first.split_whitespace().take(8).collect();
        json!({ "label": label.join(" ") }).to_string()
    }

    fn generate_questions(&self, prompt: &str) -> String {
        let requested = parse_number_after(prompt, "Write up to ").unwrap_or(3).max(1);
        let targets = parse_bloom_targets(prompt);
        let stems = parse_stem_blocks(prompt);
        if stems.is_empty() || targets.is_empty() {
            return REJECTION_SENTINEL.to_string();
        }
        let labels = stems
            .iter()
            .map(|s| s.label.as_str())
            .collect::<Vec<_>>()
            .join(" and ");
        let evidences: Vec<(&str, &str)> = stems
            .iter()
            .flat_map(|s| s.evidence.iter().map(|(id, text)| (id.as_str(), text.as_str())))
            .collect();
        if evidences.is_empty() {
            return REJECTION_SENTINEL.to_string();
        }
        let h = digest64(self.seed, &[prompt]);
        let count = 1 + (h as usize % requested);
        let all_ids: Vec<&str> = evidences.iter().map(|(id, _)| *id).collect();
        let mut drafts = Vec::new();
        for i in 0..count {
            let bloom = targets[(h as usize + i) % targets.len()];
            let question = phrase_question(bloom, &labels);
            let mut answer = first_sentence(evidences[0].1);
            if let Some((_, second)) = evidences.get(1) {
                answer.push(' ');
                answer.push_str(&first_sentence(second));
            }
            let reasoning = format!(
                "The cited evidence on {labels} states the relevant facts; combining the listed items yields the answer."
            );
            drafts.push(json!({
                "question": question,
                "answer": answer,
                "reasoning": reasoning,
                "bloom": bloom.name(),
                "evidence_ids": all_ids,
            }));
        }
        serde_json::to_string(&drafts).expect("serializable")
    }

    fn misleading_passage(&self, prompt: &str) -> String {
        let question = section(prompt, "QUESTION:", "EVIDENCE").unwrap_or(prompt);
        let mut topics: Vec<String> = Vec::new();
        let mut seen = BTreeSet::new();
        for tok in tokenize_lower(question) {
            if tok.len() >= 5 && tok.chars().all(char::is_alphabetic) && !is_stopword(&tok) {
                if seen.insert(tok.clone()) {
                    topics.push(tok);
                }
            }
        }
        while topics.len() < 3 {
            topics.push("related work".to_string());
        }
        let passage = format!(
            "Coverage of {} frequently mentions {} and {} in passing, but the available accounts \
             concentrate on adjacent programs and reporting practices rather than the point in \
             question. Regional summaries note that approaches to {} differ considerably without \
             settling the matter.",
            topics[0], topics[1], topics[2], topics[0]
        );
        json!({ "passage": passage }).to_string()
    }
}

impl Generator for MockGenerator {
    fn id(&self) -> String {
        format!("mock:gen:seed={}", self.seed)
    }

    fn generate(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        let p = &req.prompt;
        let out = if p.contains("JSON array of short strings") {
            self.extract_concepts(p)
        } else if p.contains("{\"label\"") {
            self.label_cluster(p)
        } else if p.contains("\"evidence_ids\"") {
            self.generate_questions(p)
        } else if p.contains("{\"passage\"") {
            self.misleading_passage(p)
        } else {
            // Unrecognized prompt: echo a digest so output is still deterministic.
            format!("mock-response-{:016x}", digest64(self.seed, &[p]))
        };
        Ok(out)
    }
}

fn section<'a>(text: &'a str, start_marker: &str, end_marker: &str) -> Option<&'a str> {
    let start = text.find(start_marker)? + start_marker.len();
    let rest = &text[start..];
    let end = rest.find(end_marker).unwrap_or(rest.len());
    Some(rest[..end].trim())
}

fn parse_number_after(text: &str, marker: &str) -> Option<usize> {
    let at = text.find(marker)? + marker.len();
    let digits: String = text[at..].chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

fn parse_bloom_targets(prompt: &str) -> Vec<BloomLevel> {
    let mut out = Vec::new();
    for line in prompt.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("- ") {
            if let Some((name, _)) = rest.split_once(':') {
                if let Some(level) = BloomLevel::parse(name.trim()) {
                    if !out.contains(&level) {
                        out.push(level);
                    }
                }
            }
        }
    }
    out
}

struct StemBlock {
    label: String,
    evidence: Vec<(String, String)>,
}

fn parse_stem_blocks(prompt: &str) -> Vec<StemBlock> {
    let body = section(prompt, "CONCEPTS AND EVIDENCE:", "JSON array:").unwrap_or(prompt);
    let mut stems: Vec<StemBlock> = Vec::new();
    for line in body.lines() {
        let line = line.trim();
        if let Some(label) = line.strip_prefix("Concept: ") {
            stems.push(StemBlock { label: label.trim().to_string(), evidence: Vec::new() });
        } else if line.starts_with('E') {
            if let Some((id, text)) = line.split_once(": ") {
                if id.len() > 1 && id[1..].chars().all(|c| c.is_ascii_digit()) {
                    if let Some(stem) = stems.last_mut() {
                        stem.evidence.push((id.to_string(), text.trim().to_string()));
                    }
                }
            }
        }
    }
    stems
}

fn phrase_question(bloom: BloomLevel, labels: &str) -> String {
    match bloom {
        BloomLevel::Remembering => format!("What does the material state about {labels}?"),
        BloomLevel::Understanding => {
            format!("How would you explain {labels} in your own words based on the material?")
        }
        BloomLevel::Applying => {
            format!("How could the guidance on {labels} be applied in a new setting?")
        }
        BloomLevel::Analyzing => {
            format!("How do the factors behind {labels} relate to one another?")
        }
        BloomLevel::Evaluating => {
            format!("How well supported are the claims concerning {labels}?")
        }
        BloomLevel::Creating => {
            format!("What plan could bring together the findings on {labels}?")
        }
    }
}

fn first_sentence(text: &str) -> String {
    split_sentences(text)
        .first()
        .map(|s| s.text.clone())
        .unwrap_or_else(|| text.trim().to_string())
}

/// Pick salient concept strings from a passage: capitalized bigrams first,
/// then frequent long words, ranked by (count, first occurrence).
fn salient_concepts(passage: &str, max: usize, h: u64) -> Vec<String> {
    let spans = tokenize_spans(passage);
    let tokens: Vec<&str> = spans.iter().map(|s| &passage[s.start..s.end]).collect();

    // key (lowercased) -> (count, first position, display form)
    let mut unigrams: BTreeMap<String, (usize, usize, String)> = BTreeMap::new();
    let mut bigrams: BTreeMap<String, (usize, usize, String)> = BTreeMap::new();

    for (pos, tok) in tokens.iter().enumerate() {
        let lower = tok.to_lowercase();
        if tok.len() >= 4 && tok.chars().all(char::is_alphabetic) && !is_stopword(&lower) {
            let entry = unigrams.entry(lower).or_insert((0, pos, tok.to_string()));
            entry.0 += 1;
        }
        if pos + 1 < tokens.len() {
            let next = tokens[pos + 1];
            if is_capitalized_word(tok) && is_capitalized_word(next) {
                let display = format!("{tok} {next}");
                let entry = bigrams
                    .entry(display.to_lowercase())
                    .or_insert((0, pos, display));
                entry.0 += 1;
            }
        }
    }

    let mut ranked_bigrams: Vec<&(usize, usize, String)> = bigrams.values().collect();
    ranked_bigrams.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut ranked_unigrams: Vec<&(usize, usize, String)> = unigrams.values().collect();
    ranked_unigrams.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    let target = (3 + (h as usize % 3)).min(max).max(1);
    let mut out: Vec<String> = Vec::new();
    let mut used_words: BTreeSet<String> = BTreeSet::new();
    for (_, _, display) in ranked_bigrams.iter().take(2) {
        if out.len() >= target {
            break;
        }
        for word in display.split_whitespace() {
            used_words.insert(word.to_lowercase());
        }
        out.push(display.clone());
    }
    for (_, _, display) in &ranked_unigrams {
        if out.len() >= target {
            break;
        }
        if used_words.contains(&display.to_lowercase()) {
            continue;
        }
        out.push(display.clone());
    }
    if out.is_empty() {
        // Degenerate passage: fall back to its longest token.
        if let Some(longest) = tokens.iter().max_by_key(|t| t.len()) {
            out.push((*longest).to_string());
        }
    }
    out
}

fn is_capitalized_word(tok: &str) -> bool {
    tok.len() >= 3
        && tok.chars().next().is_some_and(char::is_uppercase)
        && tok.chars().all(char::is_alphabetic)
}

/// Offline embedder: vectors are the normalized sum of per-token seeded hash
/// projections, so token-overlapping texts score higher than disjoint ones.
pub struct MockEmbedder {
    seed: u64,
    dim: usize,
}

impl MockEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim >= 2, "mock embedder needs dim >= 2");
        Self { seed, dim }
    }
}

impl super::Embedder for MockEmbedder {
    fn id(&self) -> String {
        format!("mock:embed:seed={}:dim={}", self.seed, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        validate_batch(texts)?;
        let mut out = Vec::with_capacity(texts.len());
        for text in texts {
            let mut acc = vec![0.0f64; self.dim];
            for token in tokenize_lower(text) {
                let mut state = digest64(self.seed, &[&token]);
                for slot in acc.iter_mut() {
                    let bits = splitmix64(&mut state);
                    // Map to [-1, 1).
                    let unit = (bits >> 11) as f64 / (1u64 << 53) as f64;
                    *slot += unit * 2.0 - 1.0;
                }
            }
            let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
            let values: Vec<f32> = if norm > 0.0 {
                acc.into_iter().map(|x| (x / norm) as f32).collect()
            } else {
                acc.into_iter().map(|x| x as f32).collect()
            };
            out.push(EmbeddingVector::new(values)?);
        }
        Ok(out)
    }
}

/// Offline lexical reranker: score = |query tokens ∩ candidate tokens| /
/// |query tokens| over lowercased token sets.
pub struct MockReranker;

impl MockReranker {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Self {
        Self
    }
}

impl Reranker for MockReranker {
    fn id(&self) -> String {
        "mock:rerank:lexical".to_string()
    }

    fn rerank(
        &self,
        query: &str,
        candidates: &[String],
    ) -> Result<Vec<RerankResult>, ProviderError> {
        if candidates.is_empty() {
            return Err(ProviderError::NoCandidates);
        }
        let query_tokens: BTreeSet<String> = tokenize_lower(query).into_iter().collect();
        let results = candidates
            .iter()
            .enumerate()
            .map(|(candidate_index, cand)| {
                let cand_tokens: BTreeSet<String> = tokenize_lower(cand).into_iter().collect();
                let score = if query_tokens.is_empty() {
                    0.0
                } else {
                    let hits = query_tokens.intersection(&cand_tokens).count();
                    hits as f64 / query_tokens.len() as f64
                };
                RerankResult { candidate_index, score }
            })
            .collect();
        Ok(sort_rerank(results))
    }
}

/// One scripted reply for [`ScriptedGenerator`].
pub enum ScriptReply {
    Text(String),
    TransportError,
}

/// Test generator that replays a fixed reply sequence and records prompts.
pub struct ScriptedGenerator {
    replies: Mutex<VecDeque<ScriptReply>>,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedGenerator {
    pub fn new(replies: Vec<ScriptReply>) -> Self {
        Self {
            replies: Mutex::new(replies.into()),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn seen_prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompt log").clone()
    }
}

impl Generator for ScriptedGenerator {
    fn id(&self) -> String {
        "scripted:gen".to_string()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        self.prompts.lock().expect("prompt log").push(req.prompt.clone());
        match self.replies.lock().expect("script").pop_front() {
            Some(ScriptReply::Text(t)) => Ok(t),
            Some(ScriptReply::TransportError) => Err(ProviderError::Transport {
                attempts: 1,
                message: "scripted transport failure".to_string(),
            }),
            None => Err(ProviderError::Transport {
                attempts: 1,
                message: "script exhausted".to_string(),
            }),
        }
    }
}
