//! Curation of the four context variants attached to each QA draft:
//! fully-supportive, partially-supportive, irrelevant, and misleading.

use serde::{Deserialize, Serialize};

use super::{CitedEvidence, QaDraft, QaParams, StemCombo};
use crate::concepts::lenient_json_object;
use crate::corpus::{split_sentences, Chunk};
use crate::evidence::ChunkIndex;
use crate::prompts::{TemplateSet, MISLEADING_CONTEXT};
use crate::providers::{Embedder, GenerationRequest, Generator, ProviderError};
use crate::vecmath::{cosine, mean};

/// Number of leading sentences taken when a chunk serves as a context
/// excerpt.
const EXCERPT_SENTENCES: usize = 3;

/// Join delimiter between evidence texts in the supportive variants.
pub const EVIDENCE_JOIN: &str = "\n";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ContextProvenance {
    /// Source chunk ids of the fully-supportive evidence, document order.
    pub fully_supportive: Vec<String>,
    /// Source chunk ids of the partially-supportive subset.
    pub partially_supportive: Vec<String>,
    /// Chunk the irrelevant excerpt was drawn from.
    pub irrelevant: String,
    /// "generated", or the chunk id of the fallback excerpt.
    pub misleading: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ContextSet {
    pub fully_supportive: String,
    pub partially_supportive: String,
    pub irrelevant: String,
    pub misleading: String,
    pub provenance: ContextProvenance,
}

/// Everything curation needs beyond the draft itself.
pub struct CurationContext<'a> {
    pub doc_id: &'a str,
    /// Chunks of the record's own document.
    pub doc_chunks: &'a [Chunk],
    /// Dense index over `doc_chunks`.
    pub index: &'a ChunkIndex,
    /// All corpus chunks; used when the document itself has no candidate
    /// chunk left (single-chunk documents).
    pub corpus_chunks: &'a [Chunk],
    pub embedder: &'a dyn Embedder,
    pub generator: &'a dyn Generator,
    pub templates: &'a TemplateSet,
    pub params: &'a QaParams,
}

/// Sort cited evidence into document order: by chunk id (which encodes the
/// ordinal), then by first sentence index.
pub fn sort_document_order(cited: &[CitedEvidence]) -> Vec<CitedEvidence> {
    let mut sorted = cited.to_vec();
    sorted.sort_by(|a, b| {
        a.evidence
            .chunk_id
            .cmp(&b.evidence.chunk_id)
            .then_with(|| a.evidence.sentence_indices.cmp(&b.evidence.sentence_indices))
    });
    sorted
}

/// Build the four variants. Returns None when no chunk outside the evidence
/// set exists anywhere in the corpus (the record is then dropped).
pub fn curate_contexts(
    draft: &QaDraft,
    combo: &StemCombo,
    ctx: &CurationContext<'_>,
) -> Result<Option<ContextSet>, ProviderError> {
    let ordered = sort_document_order(&draft.cited);

    let fully_supportive = ordered
        .iter()
        .map(|c| c.evidence.text.as_str())
        .collect::<Vec<_>>()
        .join(EVIDENCE_JOIN);
    let fully_chunks: Vec<String> =
        ordered.iter().map(|c| c.evidence.chunk_id.clone()).collect();

    // Partially supportive: drop the last evidence when several are cited;
    // with a single evidence, keep only its first sentence.
    let (partially_supportive, partial_chunks) = if ordered.len() >= 2 {
        let head = &ordered[..ordered.len() - 1];
        (
            head.iter()
                .map(|c| c.evidence.text.as_str())
                .collect::<Vec<_>>()
                .join(EVIDENCE_JOIN),
            head.iter().map(|c| c.evidence.chunk_id.clone()).collect(),
        )
    } else {
        let only = &ordered[0];
        let first = split_sentences(&only.evidence.text)
            .first()
            .map(|s| s.text.clone())
            .unwrap_or_else(|| only.evidence.text.clone());
        (first, vec![only.evidence.chunk_id.clone()])
    };

    let evidence_chunk_ids: std::collections::BTreeSet<&str> =
        ordered.iter().map(|c| c.evidence.chunk_id.as_str()).collect();
    // Chunks tied to the combo's concepts (via member chunk concepts) are
    // excluded from the irrelevant pool along with the evidence chunks.
    let mut concept_chunk_ids: std::collections::BTreeSet<&str> = combo
        .stems
        .iter()
        .flat_map(|s| s.concept.member_concepts.iter().map(|m| m.chunk_id.as_str()))
        .collect();
    concept_chunk_ids.extend(evidence_chunk_ids.iter().copied());

    let question_vec = ctx.embedder.embed(&[draft.question.clone()])?.remove(0);
    let centroid_values: Vec<&[f32]> =
        ctx.index.entries.iter().map(|(_, v)| v.values.as_slice()).collect();
    let domain_centroid = mean(&centroid_values);

    // Irrelevant: same-domain chunk outside the combo's concept clusters,
    // scored by (similarity to the document) - (similarity to the question).
    let irrelevant_pool: Vec<&Chunk> = ctx
        .doc_chunks
        .iter()
        .filter(|c| !concept_chunk_ids.contains(c.chunk_id.as_str()))
        .collect();
    let sibling_pool: Vec<&Chunk> = ctx
        .corpus_chunks
        .iter()
        .filter(|c| c.doc_id != ctx.doc_id)
        .collect();
    let (irrelevant_chunk, irrelevant_vecs) = if !irrelevant_pool.is_empty() {
        let vecs = chunk_vectors(&irrelevant_pool, ctx)?;
        (pick_irrelevant(&irrelevant_pool, &vecs, &domain_centroid, &question_vec.values), vecs)
    } else if !sibling_pool.is_empty() {
        let vecs = chunk_vectors(&sibling_pool, ctx)?;
        (pick_irrelevant(&sibling_pool, &vecs, &domain_centroid, &question_vec.values), vecs)
    } else {
        return Ok(None);
    };
    let _ = irrelevant_vecs;
    let irrelevant = excerpt(irrelevant_chunk);

    // Misleading: generator-produced passage; fall back to the non-evidence
    // chunk nearest the question.
    let (misleading, misleading_prov) =
        match misleading_passage(draft, &fully_supportive, ctx) {
            Some(passage) => (passage, "generated".to_string()),
            None => {
                let pool: Vec<&Chunk> = ctx
                    .doc_chunks
                    .iter()
                    .filter(|c| !evidence_chunk_ids.contains(c.chunk_id.as_str()))
                    .collect();
                let pool = if pool.is_empty() { sibling_pool.clone() } else { pool };
                if pool.is_empty() {
                    return Ok(None);
                }
                let vecs = chunk_vectors(&pool, ctx)?;
                let nearest = pick_nearest(&pool, &vecs, &question_vec.values);
                (excerpt(nearest), nearest.chunk_id.clone())
            }
        };

    Ok(Some(ContextSet {
        fully_supportive,
        partially_supportive,
        irrelevant,
        misleading,
        provenance: ContextProvenance {
            fully_supportive: fully_chunks,
            partially_supportive: partial_chunks,
            irrelevant: irrelevant_chunk.chunk_id.clone(),
            misleading: misleading_prov,
        },
    }))
}

fn chunk_vectors(
    chunks: &[&Chunk],
    ctx: &CurationContext<'_>,
) -> Result<Vec<Vec<f32>>, ProviderError> {
    let mut out = Vec::with_capacity(chunks.len());
    let mut to_embed: Vec<(usize, String)> = Vec::new();
    for (i, c) in chunks.iter().enumerate() {
        match ctx.index.vector_of(&c.chunk_id) {
            Some(v) => out.push(v.values.clone()),
            None => {
                out.push(Vec::new());
                to_embed.push((i, c.text.clone()));
            }
        }
    }
    if !to_embed.is_empty() {
        let texts: Vec<String> = to_embed.iter().map(|(_, t)| t.clone()).collect();
        let fresh = ctx.embedder.embed(&texts)?;
        for ((i, _), v) in to_embed.into_iter().zip(fresh.into_iter()) {
            out[i] = v.values;
        }
    }
    Ok(out)
}

fn pick_irrelevant<'c>(
    pool: &[&'c Chunk],
    vectors: &[Vec<f32>],
    domain: &[f32],
    question: &[f32],
) -> &'c Chunk {
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (i, v) in vectors.iter().enumerate() {
        let score = cosine(v, domain) - cosine(v, question);
        let better = score > best_score
            || (score == best_score && pool[i].chunk_id < pool[best].chunk_id);
        if better {
            best = i;
            best_score = score;
        }
    }
    pool[best]
}

fn pick_nearest<'c>(pool: &[&'c Chunk], vectors: &[Vec<f32>], question: &[f32]) -> &'c Chunk {
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (i, v) in vectors.iter().enumerate() {
        let score = cosine(v, question);
        let better = score > best_score
            || (score == best_score && pool[i].chunk_id < pool[best].chunk_id);
        if better {
            best = i;
            best_score = score;
        }
    }
    pool[best]
}

fn excerpt(chunk: &Chunk) -> String {
    let sentences = split_sentences(&chunk.text);
    if sentences.is_empty() {
        return chunk.text.trim().to_string();
    }
    sentences
        .iter()
        .take(EXCERPT_SENTENCES)
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

fn misleading_passage(
    draft: &QaDraft,
    evidence: &str,
    ctx: &CurationContext<'_>,
) -> Option<String> {
    let prompt = ctx.templates.get(MISLEADING_CONTEXT).render(&[
        ("question", &draft.question),
        ("evidence", evidence),
    ]);
    let req =
        GenerationRequest::json(prompt, ctx.params.max_output_tokens, ctx.params.temperature);
    for _ in 0..ctx.params.json_attempts {
        let response = match ctx.generator.generate(&req) {
            Ok(r) => r,
            Err(err) => {
                log::warn!("misleading-context generation failed, falling back: {err}");
                return None;
            }
        };
        if let Some(passage) = lenient_json_object(&response)
            .and_then(|v| v.get("passage").and_then(|p| p.as_str()).map(str::to_string))
        {
            if !passage.trim().is_empty() {
                return Some(passage);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::chunk_id;
    use crate::evidence::{build_chunk_index, Evidence, QuestionStem};
    use crate::concepts::{concept_id, ChunkConcept, DocumentConcept};
    use crate::providers::mock::{MockEmbedder, MockGenerator, ScriptReply, ScriptedGenerator};
    use crate::providers::EmbeddingVector;
    use crate::qacgen::BloomLevel;

    fn chunk(doc: &str, ordinal: usize, text: &str) -> Chunk {
        Chunk {
            chunk_id: chunk_id(doc, ordinal),
            doc_id: doc.to_string(),
            ordinal,
            text: text.to_string(),
            token_span: (0, 0),
        }
    }

    fn evidence(doc: &str, ordinal: usize, text: &str) -> Evidence {
        Evidence {
            concept_id: concept_id(doc, 0),
            chunk_id: chunk_id(doc, ordinal),
            sentence_indices: vec![0],
            text: text.to_string(),
            retrieval_score: 1.0,
            window_score: 0.9,
        }
    }

    fn combo_with(doc: &str, evidences: Vec<Evidence>) -> StemCombo {
        let cid = concept_id(doc, 0);
        let stem = QuestionStem {
            stem_id: cid.clone(),
            concept: DocumentConcept {
                concept_id: cid.clone(),
                label: "water allocation".to_string(),
                member_concepts: vec![ChunkConcept::new("water allocation", &chunk_id(doc, 0), doc)],
                centroid: EmbeddingVector { values: vec![0.0; 4] },
                doc_id: doc.to_string(),
            },
            evidences,
            doc_id: doc.to_string(),
        };
        StemCombo { combo_id: cid, stems: vec![stem], level: 1 }
    }

    fn draft_with(cited: Vec<CitedEvidence>) -> QaDraft {
        QaDraft {
            question: "What caps seasonal withdrawals?".to_string(),
            answer: "Allocation targets.".to_string(),
            reasoning: "Stated directly.".to_string(),
            bloom: BloomLevel::Remembering,
            cited,
        }
    }

    fn cited(label: &str, ev: &Evidence) -> CitedEvidence {
        CitedEvidence { label: label.to_string(), evidence: ev.clone() }
    }

    #[test]
    fn drop_last_rule_for_multi_evidence() {
        let doc = "doc";
        let chunks = vec![
            chunk(doc, 0, "Allocation targets cap withdrawals. Boards meet."),
            chunk(doc, 1, "Rainfall records guide planning. Reports monthly."),
            chunk(doc, 2, "Grain silos store harvest. Inspections happen yearly."),
            chunk(doc, 3, "Riverbank erosion worries engineers. Walls rise."),
        ];
        let embedder = MockEmbedder::new(7, 48);
        let index = build_chunk_index(&chunks, &embedder).unwrap();
        let e0 = evidence(doc, 0, "Allocation targets cap withdrawals.");
        let e1 = evidence(doc, 1, "Rainfall records guide planning.");
        let e2 = evidence(doc, 2, "Grain silos store harvest.");
        let combo = combo_with(doc, vec![e0.clone(), e1.clone(), e2.clone()]);
        let draft = draft_with(vec![cited("E1", &e0), cited("E2", &e1), cited("E3", &e2)]);
        let generator = MockGenerator::new(7);
        let templates = TemplateSet::builtin();
        let params = QaParams::default();
        let ctx = CurationContext {
            doc_id: doc,
            doc_chunks: &chunks,
            index: &index,
            corpus_chunks: &chunks,
            embedder: &embedder,
            generator: &generator,
            templates: &templates,
            params: &params,
        };
        let set = curate_contexts(&draft, &combo, &ctx).unwrap().unwrap();
        // Fully supportive carries every cited text verbatim.
        for ev in [&e0, &e1, &e2] {
            assert!(set.fully_supportive.contains(&ev.text));
        }
        // Partial = first two in document order.
        assert!(set.partially_supportive.contains(&e0.text));
        assert!(set.partially_supportive.contains(&e1.text));
        assert!(!set.partially_supportive.contains(&e2.text));
        assert_eq!(set.provenance.partially_supportive.len(), 2);
        // Irrelevant chunk is outside the evidence set.
        assert!(!["doc#c0000", "doc#c0001", "doc#c0002"]
            .contains(&set.provenance.irrelevant.as_str()));
        assert!(!set.misleading.is_empty());
    }

    #[test]
    fn single_evidence_takes_first_sentence() {
        let doc = "doc";
        let chunks = vec![
            chunk(doc, 0, "Allocation targets cap withdrawals. Boards meet in spring."),
            chunk(doc, 1, "Unrelated content about museum exhibits. Tickets online."),
        ];
        let embedder = MockEmbedder::new(7, 48);
        let index = build_chunk_index(&chunks, &embedder).unwrap();
        let e0 = evidence(doc, 0, "Allocation targets cap withdrawals. Boards meet in spring.");
        let combo = combo_with(doc, vec![e0.clone()]);
        let draft = draft_with(vec![cited("E1", &e0)]);
        let generator = MockGenerator::new(7);
        let templates = TemplateSet::builtin();
        let params = QaParams::default();
        let ctx = CurationContext {
            doc_id: doc,
            doc_chunks: &chunks,
            index: &index,
            corpus_chunks: &chunks,
            embedder: &embedder,
            generator: &generator,
            templates: &templates,
            params: &params,
        };
        let set = curate_contexts(&draft, &combo, &ctx).unwrap().unwrap();
        assert_eq!(set.partially_supportive, "Allocation targets cap withdrawals.");
        assert_ne!(set.partially_supportive, set.fully_supportive);
    }

    #[test]
    fn single_chunk_document_borrows_sibling_for_irrelevant() {
        let doc = "solo";
        let own = vec![chunk(doc, 0, "Allocation targets cap withdrawals. Boards meet.")];
        let sibling = chunk("other", 0, "Museum exhibits rotate quarterly. Tickets online.");
        let corpus = vec![own[0].clone(), sibling.clone()];
        let embedder = MockEmbedder::new(7, 48);
        let index = build_chunk_index(&own, &embedder).unwrap();
        let e0 = evidence(doc, 0, "Allocation targets cap withdrawals.");
        let combo = combo_with(doc, vec![e0.clone()]);
        let draft = draft_with(vec![cited("E1", &e0)]);
        let generator = MockGenerator::new(7);
        let templates = TemplateSet::builtin();
        let params = QaParams::default();
        let ctx = CurationContext {
            doc_id: doc,
            doc_chunks: &own,
            index: &index,
            corpus_chunks: &corpus,
            embedder: &embedder,
            generator: &generator,
            templates: &templates,
            params: &params,
        };
        let set = curate_contexts(&draft, &combo, &ctx).unwrap().unwrap();
        assert_eq!(set.provenance.irrelevant, sibling.chunk_id);
    }

    #[test]
    fn no_candidate_anywhere_drops_record() {
        let doc = "solo";
        let own = vec![chunk(doc, 0, "Only chunk. Nothing else.")];
        let embedder = MockEmbedder::new(7, 48);
        let index = build_chunk_index(&own, &embedder).unwrap();
        let e0 = evidence(doc, 0, "Only chunk.");
        let combo = combo_with(doc, vec![e0.clone()]);
        let draft = draft_with(vec![cited("E1", &e0)]);
        let generator = MockGenerator::new(7);
        let templates = TemplateSet::builtin();
        let params = QaParams::default();
        let ctx = CurationContext {
            doc_id: doc,
            doc_chunks: &own,
            index: &index,
            corpus_chunks: &own,
            embedder: &embedder,
            generator: &generator,
            templates: &templates,
            params: &params,
        };
        assert!(curate_contexts(&draft, &combo, &ctx).unwrap().is_none());
    }

    #[test]
    fn misleading_generation_failure_falls_back_to_chunk_excerpt() {
        let doc = "doc";
        let chunks = vec![
            chunk(doc, 0, "Allocation targets cap withdrawals. Boards meet."),
            chunk(doc, 1, "Withdrawal rules for wells differ. Permits required."),
        ];
        let embedder = MockEmbedder::new(7, 48);
        let index = build_chunk_index(&chunks, &embedder).unwrap();
        let e0 = evidence(doc, 0, "Allocation targets cap withdrawals.");
        let combo = combo_with(doc, vec![e0.clone()]);
        let draft = draft_with(vec![cited("E1", &e0)]);
        let scripted = ScriptedGenerator::new(vec![ScriptReply::TransportError]);
        let templates = TemplateSet::builtin();
        let params = QaParams::default();
        let ctx = CurationContext {
            doc_id: doc,
            doc_chunks: &chunks,
            index: &index,
            corpus_chunks: &chunks,
            embedder: &embedder,
            generator: &scripted,
            templates: &templates,
            params: &params,
        };
        let set = curate_contexts(&draft, &combo, &ctx).unwrap().unwrap();
        assert_eq!(set.provenance.misleading, chunks[1].chunk_id);
        assert!(set.misleading.contains("Withdrawal rules"));
    }
}
