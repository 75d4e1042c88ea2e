//! Stage 1: chunk-level concept extraction and fusion into document-level
//! concepts (dedup, embed, k-means, centroid-representative selection).

mod kmeans;

pub use kmeans::{kmeans, ClusterError, ClusteringResult};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Chunk;
use crate::prompts::{TemplateSet, CLUSTER_LABEL, CONCEPT_EXTRACT};
use crate::providers::{
    EmbeddingVector, GenerationRequest, Generator, Embedder, ProviderError,
};
use crate::vecmath::cosine;

#[derive(Debug, Error)]
pub enum ConceptError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("generator returned malformed JSON after {attempts} attempt(s)")]
    MalformedJson { attempts: u32 },
    #[error("clustering failed: {0}")]
    Cluster(#[from] ClusterError),
    #[error("document {0} yielded no chunk concepts")]
    NoConcepts(String),
}

/// A short descriptor extracted from one chunk.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ChunkConcept {
    pub text: String,
    pub chunk_id: String,
    pub doc_id: String,
    pub normalized: String,
}

impl ChunkConcept {
    pub fn new(text: &str, chunk_id: &str, doc_id: &str) -> Self {
        Self {
            text: text.trim().to_string(),
            chunk_id: chunk_id.to_string(),
            doc_id: doc_id.to_string(),
            normalized: normalize_concept(text),
        }
    }
}

/// Lowercased, trimmed, whitespace-collapsed form used for dedup and tie
/// breaking.
pub fn normalize_concept(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// A fused document-level concept: a representative label standing for a
/// cluster of chunk-level concepts.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DocumentConcept {
    pub concept_id: String,
    pub label: String,
    pub member_concepts: Vec<ChunkConcept>,
    pub centroid: EmbeddingVector,
    pub doc_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RepresentativeMode {
    #[default]
    Centroid,
    LlmSummary,
}

#[derive(Debug, Clone)]
pub struct ExtractParams {
    pub max_concepts_per_chunk: usize,
    /// Total generate attempts when the response is not valid JSON.
    pub json_attempts: u32,
    pub max_output_tokens: u32,
    pub temperature: f32,
}

impl Default for ExtractParams {
    fn default() -> Self {
        Self {
            max_concepts_per_chunk: 8,
            json_attempts: 3,
            max_output_tokens: 512,
            temperature: 0.2,
        }
    }
}

/// Ask the generator for chunk-level concepts and parse its JSON list.
/// Within-chunk duplicates (by normalized form) are dropped and the list is
/// capped at `max_concepts_per_chunk`.
pub fn extract_chunk_concepts(
    chunk: &Chunk,
    generator: &dyn Generator,
    templates: &TemplateSet,
    params: &ExtractParams,
) -> Result<Vec<ChunkConcept>, ConceptError> {
    let prompt = templates.get(CONCEPT_EXTRACT).render(&[
        ("max_concepts", &params.max_concepts_per_chunk.to_string()),
        ("chunk_text", &chunk.text),
    ]);
    let req = GenerationRequest::json(prompt, params.max_output_tokens, params.temperature);
    let mut attempts = 0;
    let raw_list = loop {
        attempts += 1;
        let response = generator.generate(&req)?;
        match parse_json_list(&response) {
            Some(list) => break list,
            None if attempts >= params.json_attempts => {
                return Err(ConceptError::MalformedJson { attempts });
            }
            None => continue,
        }
    };
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for text in raw_list {
        let concept = ChunkConcept::new(&text, &chunk.chunk_id, &chunk.doc_id);
        if concept.text.is_empty() {
            continue;
        }
        if seen.insert(concept.normalized.clone()) {
            out.push(concept);
        }
        if out.len() >= params.max_concepts_per_chunk {
            break;
        }
    }
    Ok(out)
}

/// Parse a JSON string list, tolerating fenced or prefixed model output by
/// falling back to the outermost bracketed span.
pub(crate) fn parse_json_list(text: &str) -> Option<Vec<String>> {
    if let Ok(list) = serde_json::from_str::<Vec<String>>(text.trim()) {
        return Some(list);
    }
    let start = text.find('[')?;
    let end = text.rfind(']')?;
    if end <= start {
        return None;
    }
    serde_json::from_str::<Vec<String>>(&text[start..=end]).ok()
}

/// Exact-normalized dedup, then a greedy near-duplicate pass: concepts are
/// visited in first-occurrence order and dropped when their cosine
/// similarity to an already-kept concept reaches `threshold`.
pub fn dedup_concepts(
    concepts: &[ChunkConcept],
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<Vec<ChunkConcept>, ProviderError> {
    Ok(dedup_with_vectors(concepts, embedder, threshold)?.0)
}

pub(crate) fn dedup_with_vectors(
    concepts: &[ChunkConcept],
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<(Vec<ChunkConcept>, Vec<EmbeddingVector>), ProviderError> {
    let mut seen = BTreeSet::new();
    let mut unique: Vec<&ChunkConcept> = Vec::new();
    for c in concepts {
        if seen.insert(c.normalized.clone()) {
            unique.push(c);
        }
    }
    if unique.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let texts: Vec<String> = unique.iter().map(|c| c.text.clone()).collect();
    let vectors = embedder.embed(&texts)?;
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..unique.len() {
        let near_dup = kept
            .iter()
            .any(|&j| cosine(&vectors[i].values, &vectors[j].values) >= threshold);
        if !near_dup {
            kept.push(i);
        }
    }
    let out_concepts = kept.iter().map(|&i| unique[i].clone()).collect();
    let out_vectors = kept.iter().map(|&i| vectors[i].clone()).collect();
    Ok((out_concepts, out_vectors))
}

/// Pick one representative per cluster. Centroid mode takes the member with
/// the smallest distance to the centroid (ties: lexicographically smallest
/// normalized text); summary mode asks the generator for a short label and
/// falls back to centroid mode for clusters whose label cannot be parsed.
#[allow(clippy::too_many_arguments)]
pub fn select_representatives(
    result: &ClusteringResult,
    concepts: &[ChunkConcept],
    vectors: &[EmbeddingVector],
    doc_id: &str,
    mode: RepresentativeMode,
    generator: Option<&dyn Generator>,
    templates: &TemplateSet,
    params: &ExtractParams,
) -> Vec<DocumentConcept> {
    let k = result.centroids.len();
    let mut out = Vec::with_capacity(k);
    for cluster in 0..k {
        let members: Vec<usize> = (0..concepts.len())
            .filter(|&i| result.assignments[i] == cluster)
            .collect();
        debug_assert!(!members.is_empty(), "clusters are repaired to be non-empty");
        let rep = centroid_representative(&members, concepts, vectors, &result.centroids[cluster]);
        let label = match (mode, generator) {
            (RepresentativeMode::LlmSummary, Some(generator)) => {
                summary_label(&members, concepts, generator, templates, params)
                    .unwrap_or_else(|| concepts[rep].text.clone())
            }
            _ => concepts[rep].text.clone(),
        };
        out.push(DocumentConcept {
            concept_id: concept_id(doc_id, cluster),
            label,
            member_concepts: members.iter().map(|&i| concepts[i].clone()).collect(),
            centroid: EmbeddingVector {
                values: result.centroids[cluster].iter().map(|&x| x as f32).collect(),
            },
            doc_id: doc_id.to_string(),
        });
    }
    out
}

pub fn concept_id(doc_id: &str, cluster: usize) -> String {
    format!("{doc_id}#k{cluster:03}")
}

fn centroid_representative(
    members: &[usize],
    concepts: &[ChunkConcept],
    vectors: &[EmbeddingVector],
    centroid: &[f64],
) -> usize {
    let mut best = members[0];
    let mut best_dist = f64::INFINITY;
    for &i in members {
        let member: Vec<f64> = vectors[i].values.iter().map(|&x| f64::from(x)).collect();
        let d = kmeans::dist_sq(&member, centroid);
        let better = d < best_dist
            || (d == best_dist && concepts[i].normalized < concepts[best].normalized);
        if better {
            best = i;
            best_dist = d;
        }
    }
    best
}

fn summary_label(
    members: &[usize],
    concepts: &[ChunkConcept],
    generator: &dyn Generator,
    templates: &TemplateSet,
    params: &ExtractParams,
) -> Option<String> {
    let member_lines = members
        .iter()
        .map(|&i| concepts[i].text.clone())
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = templates
        .get(CLUSTER_LABEL)
        .render(&[("member_concepts", &member_lines)]);
    let req = GenerationRequest::json(prompt, params.max_output_tokens, params.temperature);
    let response = generator.generate(&req).ok()?;
    let value: serde_json::Value = lenient_json_object(&response)?;
    let label = value.get("label")?.as_str()?.trim();
    if label.is_empty() {
        return None;
    }
    let words: Vec<&str> = label.split_whitespace().take(8).collect();
    Some(words.join(" "))
}

pub(crate) fn lenient_json_object(text: &str) -> Option<serde_json::Value> {
    if let Ok(v) = serde_json::from_str::<serde_json::Value>(text.trim()) {
        return Some(v);
    }
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end <= start {
        return None;
    }
    serde_json::from_str(&text[start..=end]).ok()
}

#[derive(Debug, Clone)]
pub struct FusionParams {
    /// Fixed cluster count; None applies the auto rule
    /// clamp(round(sqrt(unique concepts)), 3, 12).
    pub k: Option<usize>,
    pub dedup_threshold: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub mode: RepresentativeMode,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            k: None,
            dedup_threshold: 0.92,
            max_iters: 50,
            seed: 0,
            mode: RepresentativeMode::Centroid,
        }
    }
}

pub fn auto_k(unique_concepts: usize) -> usize {
    ((unique_concepts as f64).sqrt().round() as usize).clamp(3, 12)
}

/// Per-document fusion artifact: the surviving chunk concepts, the fused
/// document concepts, and the clustering metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionOutput {
    pub doc_id: String,
    pub chunk_concepts: Vec<ChunkConcept>,
    pub document_concepts: Vec<DocumentConcept>,
    pub clustering: ClusteringResult,
}

/// Compose dedup -> embed -> k-means -> representative selection.
/// Output concepts are ordered by concept id (cluster index).
pub fn fuse_concepts(
    doc_id: &str,
    chunk_concepts: &[ChunkConcept],
    embedder: &dyn Embedder,
    generator: Option<&dyn Generator>,
    templates: &TemplateSet,
    extract_params: &ExtractParams,
    params: &FusionParams,
) -> Result<FusionOutput, ConceptError> {
    if chunk_concepts.is_empty() {
        return Err(ConceptError::NoConcepts(doc_id.to_string()));
    }
    let (kept, vectors) = dedup_with_vectors(chunk_concepts, embedder, params.dedup_threshold)?;
    if kept.is_empty() {
        return Err(ConceptError::NoConcepts(doc_id.to_string()));
    }
    let requested_k = params.k.unwrap_or_else(|| auto_k(kept.len()));
    let k = requested_k.clamp(1, kept.len());
    let points: Vec<Vec<f32>> = vectors.iter().map(|v| v.values.clone()).collect();
    let clustering = kmeans(&points, k, params.seed, params.max_iters)?;
    let document_concepts = select_representatives(
        &clustering,
        &kept,
        &vectors,
        doc_id,
        params.mode,
        generator,
        templates,
        extract_params,
    );
    Ok(FusionOutput {
        doc_id: doc_id.to_string(),
        chunk_concepts: kept,
        document_concepts,
        clustering,
    })
}
