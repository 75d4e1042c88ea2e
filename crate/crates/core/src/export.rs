//! Serializes accepted records into the downstream training formats:
//! the QAC file itself, retriever-contrastive triplets, and SFT examples
//! with or without distractor passages, plus dataset statistics and the
//! training-recipe metadata record.
//!
//! All files are line-oriented JSON, UTF-8, LF, with fields in the struct
//! order below; identical records always produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::hex_digest;
use crate::qacgen::{BloomLevel, QacRecord};
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("record {0} is missing a context variant")]
    IncompleteRecord(String),
}

/// Fixed instruction preamble for SFT examples.
pub const SFT_INSTRUCTION: &str =
    "Answer the question using only the information in the provided passages.";

/// A (query, positive, negatives) row for contrastive embedding training.
/// Serialized with the common `query`/`pos`/`neg` list convention
/// (`pos` is a singleton list).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ContrastiveTriplet {
    pub query: String,
    #[serde(rename = "pos", with = "singleton_list")]
    pub positive: String,
    #[serde(rename = "neg")]
    pub negatives: Vec<String>,
    pub meta: TripletMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TripletMeta {
    pub record_id: String,
    pub doc_id: String,
}

mod singleton_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(value: &str, ser: S) -> Result<S::Ok, S::Error> {
        [value].serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<String, D::Error> {
        let list = Vec::<String>::deserialize(de)?;
        list.into_iter()
            .next()
            .ok_or_else(|| serde::de::Error::custom("pos list is empty"))
    }
}

/// One supervised fine-tuning row: instruction, context-plus-question input,
/// and the reference answer.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SftExample {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub meta: SftMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SftMeta {
    pub record_id: String,
    pub with_distractors: bool,
}

/// Fine-tuning recipe the exported files are meant to feed; emitted verbatim
/// from config.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainingRecipeMetadata {
    pub objective: String,
    pub temperature_tau: f64,
    pub learning_rate: f64,
    pub epochs: u32,
    pub negatives_per_sample: u32,
}

impl Default for TrainingRecipeMetadata {
    fn default() -> Self {
        Self {
            objective: "InfoNCE".to_string(),
            temperature_tau: 0.02,
            learning_rate: 1e-5,
            epochs: 3,
            negatives_per_sample: 2,
        }
    }
}

/// Count + digest manifest for one written file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct FileManifest {
    pub path: String,
    pub records: usize,
    pub sha256: String,
}

/// Write any serializable row set as JSONL (UTF-8, LF); byte-stable.
pub fn write_jsonl<T: Serialize>(rows: &[T], path: &Path) -> Result<FileManifest, ExportError> {
    let mut buf = Vec::new();
    for row in rows {
        let line = serde_json::to_string(row).expect("rows serialize");
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
    }
    write_atomic(path, &buf)?;
    if rows.is_empty() {
        log::warn!("wrote empty dataset file {}", path.display());
    }
    let mut hasher = Sha256::new();
    hasher.update(&buf);
    Ok(FileManifest {
        path: path
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| path.display().to_string()),
        records: rows.len(),
        sha256: hex_digest(hasher),
    })
}

/// Write via temp file + rename so readers never observe partial content.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExportError> {
    let io = |source: std::io::Error| ExportError::Io { path: path.display().to_string(), source };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

/// Write the QAC records file.
pub fn write_qac(records: &[QacRecord], path: &Path) -> Result<FileManifest, ExportError> {
    write_jsonl(records, path)
}

/// Read a QAC file back; used by re-export, stats, and evaluation.
pub fn read_qac(path: &Path) -> Result<Vec<QacRecord>, ExportError> {
    let io = |source: std::io::Error| ExportError::Io { path: path.display().to_string(), source };
    let raw = fs::read_to_string(path).map_err(io)?;
    let mut out = Vec::new();
    for (n, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: QacRecord = serde_json::from_str(line).map_err(|e| ExportError::Io {
            path: format!("{}:{}", path.display(), n + 1),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Build contrastive triplets: positive = fully supportive context,
/// negatives = [irrelevant, misleading] in that fixed order.
pub fn build_triplets(records: &[QacRecord]) -> Result<Vec<ContrastiveTriplet>, ExportError> {
    records
        .iter()
        .map(|r| {
            let c = &r.contexts;
            if c.fully_supportive.is_empty()
                || c.irrelevant.is_empty()
                || c.misleading.is_empty()
            {
                return Err(ExportError::IncompleteRecord(r.record_id.clone()));
            }
            Ok(ContrastiveTriplet {
                query: r.question.clone(),
                positive: c.fully_supportive.clone(),
                negatives: vec![c.irrelevant.clone(), c.misleading.clone()],
                meta: TripletMeta { record_id: r.record_id.clone(), doc_id: r.doc_id.clone() },
            })
        })
        .collect()
}

/// Build SFT examples. Without distractors the input holds the golden
/// context only; with distractors it holds golden + irrelevant + misleading
/// in a per-record seeded shuffle, labeled neutrally so nothing reveals
/// which passage is golden.
pub fn build_sft(records: &[QacRecord], with_distractors: bool, seed: u64) -> Vec<SftExample> {
    records
        .iter()
        .map(|r| {
            let passages: Vec<&str> = if with_distractors {
                let mut trio = vec![
                    r.contexts.fully_supportive.as_str(),
                    r.contexts.irrelevant.as_str(),
                    r.contexts.misleading.as_str(),
                ];
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("sft:{}", r.record_id)));
                for i in (1..trio.len()).rev() {
                    let j = rng.random_range(0..=i);
                    trio.swap(i, j);
                }
                trio
            } else {
                vec![r.contexts.fully_supportive.as_str()]
            };
            let mut input = String::new();
            for (i, passage) in passages.iter().enumerate() {
                input.push_str(&format!("Passage {}: {}\n", i + 1, passage));
            }
            input.push_str(&format!("\nQuestion: {}", r.question));
            SftExample {
                instruction: SFT_INSTRUCTION.to_string(),
                input,
                output: r.answer.clone(),
                meta: SftMeta { record_id: r.record_id.clone(), with_distractors },
            }
        })
        .collect()
}

/// Aggregate dataset statistics (reported, not asserted).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetStats {
    pub total_records: usize,
    pub per_bloom_counts: BTreeMap<String, usize>,
    pub per_level_counts: BTreeMap<usize, usize>,
    pub multi_chunk_fraction: f64,
    pub per_doc_counts: BTreeMap<String, usize>,
}

pub fn compute_stats(records: &[QacRecord]) -> DatasetStats {
    let mut per_bloom: BTreeMap<String, usize> = BTreeMap::new();
    let mut per_level: BTreeMap<usize, usize> = BTreeMap::new();
    let mut per_doc: BTreeMap<String, usize> = BTreeMap::new();
    let mut multi = 0usize;
    for r in records {
        *per_bloom.entry(r.bloom.name().to_string()).or_default() += 1;
        *per_level.entry(r.combination_level).or_default() += 1;
        *per_doc.entry(r.doc_id.clone()).or_default() += 1;
        if r.evidence_chunk_ids.len() >= 2 {
            multi += 1;
        }
    }
    DatasetStats {
        total_records: records.len(),
        per_bloom_counts: per_bloom,
        per_level_counts: per_level,
        multi_chunk_fraction: if records.is_empty() {
            0.0
        } else {
            multi as f64 / records.len() as f64
        },
        per_doc_counts: per_doc,
    }
}

/// Plain-text report with the six Bloom levels in ascending cognitive order.
pub fn render_stats(stats: &DatasetStats) -> String {
    let mut out = String::new();
    out.push_str(&format!("total records: {}\n", stats.total_records));
    out.push_str(&format!(
        "multi-chunk fraction: {:.3}\n\n",
        stats.multi_chunk_fraction
    ));
    out.push_str("bloom level distribution\n");
    let max = stats.per_bloom_counts.values().copied().max().unwrap_or(0).max(1);
    for level in BloomLevel::ALL {
        let count = stats.per_bloom_counts.get(level.name()).copied().unwrap_or(0);
        let bar = "#".repeat(count * 40 / max);
        out.push_str(&format!("  {:<13} {:>5} {}\n", level.name(), count, bar));
    }
    out.push_str("\ncombination level distribution\n");
    for (level, count) in &stats.per_level_counts {
        out.push_str(&format!("  l={level} {count}\n"));
    }
    out.push_str("\nrecords per document\n");
    for (doc, count) in &stats.per_doc_counts {
        out.push_str(&format!("  {doc} {count}\n"));
    }
    out
}
