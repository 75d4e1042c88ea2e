//! The run manifest: per-document stage statuses, provider call accounting,
//! output digests, and every warning raised during the run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::export::FileManifest;
use crate::providers::StatsSnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Processed,
    Cached,
    Skipped,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocumentStatus {
    pub doc_id: String,
    pub content_hash: String,
    pub stages: BTreeMap<String, StageStatus>,
    pub skipped_reason: Option<String>,
    pub records: usize,
}

impl DocumentStatus {
    /// Collapsed status: skipped wins, then processed, then cached.
    pub fn overall(&self) -> StageStatus {
        if self.skipped_reason.is_some() {
            return StageStatus::Skipped;
        }
        if self.stages.values().any(|s| *s == StageStatus::Processed) {
            StageStatus::Processed
        } else {
            StageStatus::Cached
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub effective_config: RunConfig,
    pub documents: Vec<DocumentStatus>,
    pub provider_stats: StatsSnapshot,
    pub outputs: Vec<FileManifest>,
    /// Cumulative per-stage wall clock (summed across parallel workers).
    pub stage_wall_ms: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
    pub combos_total: usize,
    pub combos_skipped: usize,
    pub error_budget_exceeded: bool,
}

impl RunManifest {
    pub fn document(&self, doc_id: &str) -> Option<&DocumentStatus> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn count_overall(&self, status: StageStatus) -> usize {
        self.documents.iter().filter(|d| d.overall() == status).count()
    }
}
