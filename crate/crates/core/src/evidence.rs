//! Stage 2: for each document-level concept, retrieve the top-N relevant
//! chunks through a dense-retrieval + rerank cascade, extract concept-
//! focused sentence-window evidence from each, and assemble question stems.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concepts::DocumentConcept;
use crate::corpus::{split_sentences, Chunk};
use crate::providers::{Embedder, EmbeddingVector, ProviderError, Reranker};
use crate::vecmath::cosine;

/// Exact (non-approximate) dense index over a corpus snapshot's chunks.
#[derive(Debug, Clone)]
pub struct ChunkIndex {
    pub entries: Vec<(String, EmbeddingVector)>,
    pub dim: usize,
}

impl ChunkIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn vector_of(&self, chunk_id: &str) -> Option<&EmbeddingVector> {
        self.entries
            .iter()
            .find(|(id, _)| id == chunk_id)
            .map(|(_, v)| v)
    }

    /// All chunk ids ranked by cosine similarity to `query`, ties broken by
    /// ascending chunk id.
    pub fn rank_all(&self, query: &EmbeddingVector) -> Vec<(String, f64)> {
        let mut scored: Vec<(String, f64)> = self
            .entries
            .iter()
            .map(|(id, v)| (id.clone(), cosine(&query.values, &v.values)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        scored
    }
}

/// A concept-focused evidence span pulled from one chunk.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Evidence {
    pub concept_id: String,
    pub chunk_id: String,
    pub sentence_indices: Vec<usize>,
    pub text: String,
    /// Reranker score of the source chunk.
    pub retrieval_score: f64,
    /// Cosine of the best window sentence against the concept.
    pub window_score: f64,
}

/// One document concept plus its evidence spans from up to N distinct chunks.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QuestionStem {
    pub stem_id: String,
    pub concept: DocumentConcept,
    pub evidences: Vec<Evidence>,
    pub doc_id: String,
}

#[derive(Debug, Clone)]
pub struct EvidenceParams {
    /// Dense candidates handed to the reranker (M).
    pub dense_candidates: usize,
    /// Chunks kept after reranking (N).
    pub keep_top: usize,
    /// Sentences added on each side of the anchor sentence.
    pub window_radius: usize,
    /// Minimum anchor-sentence cosine for the window to survive.
    pub min_window_score: f64,
}

impl Default for EvidenceParams {
    fn default() -> Self {
        Self {
            dense_candidates: 20,
            keep_top: 5,
            window_radius: 1,
            min_window_score: 0.25,
        }
    }
}

/// Embed every chunk once and build the exact index.
pub fn build_chunk_index(
    chunks: &[Chunk],
    embedder: &dyn Embedder,
) -> Result<ChunkIndex, ProviderError> {
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let vectors = embedder.embed(&texts)?;
    let dim = vectors.first().map(|v| v.dim()).unwrap_or(0);
    for v in &vectors {
        if v.dim() != dim {
            return Err(ProviderError::DimMismatch { expected: dim, got: v.dim() });
        }
    }
    Ok(ChunkIndex {
        entries: chunks
            .iter()
            .zip(vectors.into_iter())
            .map(|(c, v)| (c.chunk_id.clone(), v))
            .collect(),
        dim,
    })
}

/// Dense top-M by cosine against the concept label embedding, then rerank
/// and keep the top-N in reranked order.
pub fn retrieve_chunks(
    concept: &DocumentConcept,
    index: &ChunkIndex,
    chunks: &[Chunk],
    params: &EvidenceParams,
    embedder: &dyn Embedder,
    reranker: &dyn Reranker,
) -> Result<Vec<(String, f64)>, ProviderError> {
    let mut m = params.dense_candidates.max(1);
    if m > index.len() {
        log::warn!(
            "dense candidate count {m} exceeds index size {}; clamping",
            index.len()
        );
        m = index.len();
    }
    let query = embedder.embed(&[concept.label.clone()])?.remove(0);
    let dense: Vec<(String, f64)> = index.rank_all(&query).into_iter().take(m).collect();

    let candidate_texts: Vec<String> = dense
        .iter()
        .map(|(id, _)| {
            chunks
                .iter()
                .find(|c| &c.chunk_id == id)
                .map(|c| c.text.clone())
                .unwrap_or_default()
        })
        .collect();
    let reranked = reranker.rerank(&concept.label, &candidate_texts)?;
    Ok(reranked
        .into_iter()
        .take(params.keep_top.min(m))
        .map(|r| (dense[r.candidate_index].0.clone(), r.score))
        .collect())
}

/// Score each sentence against the concept, expand the best one to a
/// ±radius window, and merge with the second-best window when they overlap.
/// Returns None when the best sentence falls below `min_window_score`.
pub fn extract_evidence(
    concept: &DocumentConcept,
    chunk: &Chunk,
    retrieval_score: f64,
    params: &EvidenceParams,
    embedder: &dyn Embedder,
) -> Result<Option<Evidence>, ProviderError> {
    let sentences = split_sentences(&chunk.text);
    if sentences.is_empty() {
        return Ok(None);
    }
    let query = embedder.embed(&[concept.label.clone()])?.remove(0);
    let texts: Vec<String> = sentences.iter().map(|s| s.text.clone()).collect();
    let vectors = embedder.embed(&texts)?;
    let scores: Vec<f64> = vectors
        .iter()
        .map(|v| cosine(&query.values, &v.values))
        .collect();

    let best = argmax(&scores, None);
    if scores[best] < params.min_window_score {
        return Ok(None);
    }
    let r = params.window_radius;
    let last = sentences.len() - 1;
    let window = (best.saturating_sub(r), (best + r).min(last));
    let merged = if sentences.len() > 1 {
        let second = argmax(&scores, Some(best));
        let w2 = (second.saturating_sub(r), (second + r).min(last));
        if w2.0 <= window.1 && window.0 <= w2.1 {
            (window.0.min(w2.0), window.1.max(w2.1))
        } else {
            window
        }
    } else {
        window
    };
    let sentence_indices: Vec<usize> = (merged.0..=merged.1).collect();
    let text = sentence_indices
        .iter()
        .map(|&i| sentences[i].text.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    Ok(Some(Evidence {
        concept_id: concept.concept_id.clone(),
        chunk_id: chunk.chunk_id.clone(),
        sentence_indices,
        text,
        retrieval_score,
        window_score: scores[best],
    }))
}

fn argmax(scores: &[f64], skip: Option<usize>) -> usize {
    let mut best = usize::MAX;
    let mut best_score = f64::NEG_INFINITY;
    for (i, &s) in scores.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        if s > best_score {
            best_score = s;
            best = i;
        }
    }
    best
}

/// Retrieve and window evidence for every concept; concepts whose evidence
/// all falls below the window threshold yield no stem. Output is ordered by
/// concept id regardless of scheduling.
pub fn assemble_stems(
    concepts: &[DocumentConcept],
    index: &ChunkIndex,
    chunks: &[Chunk],
    params: &EvidenceParams,
    embedder: &dyn Embedder,
    reranker: &dyn Reranker,
) -> Result<Vec<QuestionStem>, ProviderError> {
    let mut stems: Vec<QuestionStem> = concepts
        .par_iter()
        .map(|concept| stem_for_concept(concept, index, chunks, params, embedder, reranker))
        .collect::<Result<Vec<Option<QuestionStem>>, ProviderError>>()?
        .into_iter()
        .flatten()
        .collect();
    stems.sort_by(|a, b| a.stem_id.cmp(&b.stem_id));
    Ok(stems)
}

fn stem_for_concept(
    concept: &DocumentConcept,
    index: &ChunkIndex,
    chunks: &[Chunk],
    params: &EvidenceParams,
    embedder: &dyn Embedder,
    reranker: &dyn Reranker,
) -> Result<Option<QuestionStem>, ProviderError> {
    let retrieved = retrieve_chunks(concept, index, chunks, params, embedder, reranker)?;
    let mut evidences = Vec::new();
    for (chunk_id, score) in retrieved {
        let Some(chunk) = chunks.iter().find(|c| c.chunk_id == chunk_id) else {
            continue;
        };
        if let Some(ev) = extract_evidence(concept, chunk, score, params, embedder)? {
            evidences.push(ev);
        }
    }
    if evidences.is_empty() {
        return Ok(None);
    }
    Ok(Some(QuestionStem {
        stem_id: concept.concept_id.clone(),
        concept: concept.clone(),
        evidences,
        doc_id: concept.doc_id.clone(),
    }))
}
