//! Retrieval metrics (Recall@K, MRR@10), lexical answer overlap (ROUGE-L),
//! and evaluation-split sampling over generated datasets.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::tokenize_lower;
use crate::evidence::ChunkIndex;
use crate::providers::{Embedder, ProviderError};
use crate::qacgen::QacRecord;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold set is empty for query {0}")]
    EmptyGold(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// One query's ranking against its gold chunk set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedRetrieval {
    pub query_id: String,
    pub ranked_chunk_ids: Vec<String>,
    pub gold_chunk_ids: BTreeSet<String>,
}

/// Dataset-level retrieval metrics. The gold set is the record's evidence
/// chunk set, so recall is set-based (multi-gold records count partially).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub recall_at: std::collections::BTreeMap<usize, f64>,
    pub mrr_at_10: f64,
    pub n_queries: usize,
    pub skipped_queries: usize,
    /// Recall definition note carried into reports.
    pub gold_definition: String,
}

/// |gold ∩ top-k| / |gold| for one query.
pub fn recall_at_k(item: &RankedRetrieval, k: usize) -> Result<f64, EvalError> {
    if item.gold_chunk_ids.is_empty() {
        return Err(EvalError::EmptyGold(item.query_id.clone()));
    }
    let top: BTreeSet<&String> = item.ranked_chunk_ids.iter().take(k).collect();
    let hits = item.gold_chunk_ids.iter().filter(|g| top.contains(g)).count();
    Ok(hits as f64 / item.gold_chunk_ids.len() as f64)
}

/// Reciprocal rank of the first gold item if it appears in the top 10,
/// otherwise 0.
pub fn mrr_at_10(item: &RankedRetrieval) -> f64 {
    for (i, id) in item.ranked_chunk_ids.iter().take(10).enumerate() {
        if item.gold_chunk_ids.contains(id) {
            return 1.0 / (i + 1) as f64;
        }
    }
    0.0
}

/// Embed each record's question, rank the index by cosine, and average the
/// metrics. Records whose gold chunks are absent from the index are skipped
/// and counted.
pub fn evaluate_retrieval(
    records: &[QacRecord],
    index: &ChunkIndex,
    embedder: &dyn Embedder,
    ks: &[usize],
) -> Result<RetrievalReport, EvalError> {
    let indexed: BTreeSet<&str> = index.entries.iter().map(|(id, _)| id.as_str()).collect();
    let mut recall_sums: std::collections::BTreeMap<usize, f64> =
        ks.iter().map(|&k| (k, 0.0)).collect();
    let mut mrr_sum = 0.0;
    let mut n = 0usize;
    let mut skipped = 0usize;
    for record in records {
        if record
            .evidence_chunk_ids
            .iter()
            .any(|id| !indexed.contains(id.as_str()))
        {
            log::warn!(
                "record {}: gold chunk missing from index; skipping query",
                record.record_id
            );
            skipped += 1;
            continue;
        }
        let query = embedder.embed(&[record.question.clone()])?.remove(0);
        let ranked: Vec<String> = index.rank_all(&query).into_iter().map(|(id, _)| id).collect();
        let item = RankedRetrieval {
            query_id: record.record_id.clone(),
            ranked_chunk_ids: ranked,
            gold_chunk_ids: record.evidence_chunk_ids.iter().cloned().collect(),
        };
        for &k in ks {
            *recall_sums.get_mut(&k).expect("k present") += recall_at_k(&item, k)?;
        }
        mrr_sum += mrr_at_10(&item);
        n += 1;
    }
    let denom = n.max(1) as f64;
    Ok(RetrievalReport {
        recall_at: recall_sums.into_iter().map(|(k, s)| (k, s / denom)).collect(),
        mrr_at_10: mrr_sum / denom,
        n_queries: n,
        skipped_queries: skipped,
        gold_definition: "gold = record evidence_chunk_ids (set-based recall)".to_string(),
    })
}

/// ROUGE-L F1 over the pipeline tokenization rule, case-folded: token-level
/// longest common subsequence with P = LCS/|cand|, R = LCS/|ref|.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize_lower(candidate);
    let reference = tokenize_lower(reference);
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_length(&cand, &reference) as f64;
    let p = lcs / cand.len() as f64;
    let r = lcs / reference.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn lcs_length(a: &[String], b: &[String]) -> usize {
    let n = b.len();
    let mut prev = vec![0usize; n + 1];
    let mut cur = vec![0usize; n + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[n]
}

/// Seeded uniform sample without replacement. Returns (eval, remainder),
/// both in original record order; asking for more than available returns
/// everything as eval with a warning.
pub fn sample_eval_split(
    records: &[QacRecord],
    n: usize,
    seed: u64,
) -> (Vec<QacRecord>, Vec<QacRecord>) {
    if n >= records.len() {
        if n > records.len() {
            log::warn!(
                "requested eval sample {n} exceeds {} records; using all",
                records.len()
            );
        }
        return (records.to_vec(), Vec::new());
    }
    let mut indices: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
    let chosen: BTreeSet<usize> = indices.into_iter().take(n).collect();
    let mut eval = Vec::with_capacity(n);
    let mut rest = Vec::with_capacity(records.len() - n);
    for (i, r) in records.iter().enumerate() {
        if chosen.contains(&i) {
            eval.push(r.clone());
        } else {
            rest.push(r.clone());
        }
    }
    (eval, rest)
}

/// Mean ROUGE-L of predictions (record_id -> candidate answer) against the
/// records' reference answers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RougeReport {
    pub mean_f1: f64,
    pub n_scored: usize,
    pub missing_predictions: usize,
    pub note: String,
}

pub fn rouge_report(
    records: &[QacRecord],
    predictions: &std::collections::BTreeMap<String, String>,
) -> RougeReport {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut missing = 0usize;
    for record in records {
        match predictions.get(&record.record_id) {
            Some(candidate) => {
                sum += rouge_l(candidate, &record.answer);
                n += 1;
            }
            None => missing += 1,
        }
    }
    RougeReport {
        mean_f1: if n > 0 { sum / n as f64 } else { 0.0 },
        n_scored: n,
        missing_predictions: missing,
        note: "ROUGE-L: whole-answer token LCS, case-folded".to_string(),
    }
}
