//! Run configuration: one declarative TOML file plus flag overrides.
//! Every numeric parameter is validated against the preconditions of its
//! consuming operation before any work starts, and validation messages name
//! the offending field.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concepts::RepresentativeMode;
use crate::export::TrainingRecipeMetadata;
use crate::providers::HttpProviderConfig;
use crate::qacgen::BloomLevel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("reading config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing config {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, message: message.into() }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ChunkingConfig {
    pub chunk_size: usize,
    pub chunk_overlap: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self { chunk_size: 1024, chunk_overlap: 200 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ConceptsConfig {
    /// Fixed cluster count; absent applies
    /// clamp(round(sqrt(unique)), 3, 12).
    pub k: Option<usize>,
    pub dedup_threshold: f64,
    pub max_concepts_per_chunk: usize,
    pub max_iters: usize,
    pub representative_mode: RepresentativeMode,
}

impl Default for ConceptsConfig {
    fn default() -> Self {
        Self {
            k: None,
            dedup_threshold: 0.92,
            max_concepts_per_chunk: 8,
            max_iters: 50,
            representative_mode: RepresentativeMode::Centroid,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EvidenceConfig {
    pub dense_candidates: usize,
    pub keep_top: usize,
    pub window_radius: usize,
    pub min_window_score: f64,
    /// Retrieve across the whole corpus instead of within the source
    /// document.
    pub corpus_wide: bool,
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        Self {
            dense_candidates: 20,
            keep_top: 5,
            window_radius: 1,
            min_window_score: 0.25,
            corpus_wide: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct GenerationConfig {
    pub l_max: usize,
    /// Per-level combo caps, keyed by the level as a string ("2" = 50).
    /// Levels without an entry default to 50.
    pub caps: BTreeMap<String, usize>,
    pub questions_per_combo: usize,
    pub bloom_targets: Vec<String>,
    pub json_attempts: u32,
    /// Run fails hard when skipped combos exceed this fraction.
    pub error_budget: f64,
    pub temperature: f32,
    pub max_output_tokens: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            l_max: 2,
            caps: BTreeMap::from([("2".to_string(), 50)]),
            questions_per_combo: 3,
            bloom_targets: BloomLevel::ALL.iter().map(|l| l.name().to_string()).collect(),
            json_attempts: 3,
            error_budget: 0.2,
            temperature: 0.2,
            max_output_tokens: 2048,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default)]
pub struct ProvidersConfig {
    pub mode: ProviderMode,
    pub mock_dim: MockDim,
    pub http: HttpProviderConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(transparent)]
pub struct MockDim(pub usize);

impl Default for MockDim {
    fn default() -> Self {
        MockDim(64)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    pub corpus_root: PathBuf,
    pub out_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub seed: u64,
    /// Bounded worker pool; absent means min(CPU count, rate limit).
    pub workers: Option<usize>,
    pub include_globs: Vec<String>,
    /// Directory of prompt template overrides; absent uses built-ins.
    pub templates_dir: Option<PathBuf>,
    pub chunking: ChunkingConfig,
    pub concepts: ConceptsConfig,
    pub evidence: EvidenceConfig,
    pub generation: GenerationConfig,
    pub providers: ProvidersConfig,
    pub recipe: TrainingRecipeMetadata,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus_root: PathBuf::from("corpus"),
            out_dir: PathBuf::from("out"),
            cache_dir: PathBuf::from(".qacgen-cache"),
            seed: 0,
            workers: None,
            include_globs: vec!["**/*.txt".to_string(), "**/*.md".to_string()],
            templates_dir: None,
            chunking: ChunkingConfig::default(),
            concepts: ConceptsConfig::default(),
            evidence: EvidenceConfig::default(),
            generation: GenerationConfig::default(),
            providers: ProvidersConfig::default(),
            recipe: TrainingRecipeMetadata::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        toml::from_str(&raw).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Check every numeric parameter against its consuming operation's
    /// preconditions.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.chunking.chunk_size < 1 {
            return Err(invalid("chunking.chunk_size", "must be >= 1"));
        }
        if self.chunking.chunk_overlap >= self.chunking.chunk_size {
            return Err(invalid(
                "chunking.chunk_overlap",
                format!(
                    "must be < chunk_size ({} >= {})",
                    self.chunking.chunk_overlap, self.chunking.chunk_size
                ),
            ));
        }
        if self.include_globs.is_empty() {
            return Err(invalid("include_globs", "must name at least one pattern"));
        }
        if let Some(k) = self.concepts.k {
            if k < 1 {
                return Err(invalid("concepts.k", "must be >= 1 when set"));
            }
        }
        if !(0.0..=1.0).contains(&self.concepts.dedup_threshold) {
            return Err(invalid("concepts.dedup_threshold", "must be within [0, 1]"));
        }
        if self.concepts.max_concepts_per_chunk < 1 {
            return Err(invalid("concepts.max_concepts_per_chunk", "must be >= 1"));
        }
        if self.concepts.max_iters < 1 {
            return Err(invalid("concepts.max_iters", "must be >= 1"));
        }
        if self.evidence.keep_top < 1 {
            return Err(invalid("evidence.keep_top", "must be >= 1"));
        }
        if self.evidence.dense_candidates < self.evidence.keep_top {
            return Err(invalid(
                "evidence.dense_candidates",
                "must be >= evidence.keep_top",
            ));
        }
        if !(-1.0..=1.0).contains(&self.evidence.min_window_score) {
            return Err(invalid("evidence.min_window_score", "must be within [-1, 1]"));
        }
        if self.generation.l_max < 1 {
            return Err(invalid("generation.l_max", "must be >= 1"));
        }
        self.caps_by_level()?;
        if self.generation.questions_per_combo < 1 {
            return Err(invalid("generation.questions_per_combo", "must be >= 1"));
        }
        if self.generation.bloom_targets.is_empty() {
            return Err(invalid("generation.bloom_targets", "must name at least one level"));
        }
        self.bloom_targets()?;
        if self.generation.json_attempts < 1 {
            return Err(invalid("generation.json_attempts", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.generation.error_budget) {
            return Err(invalid("generation.error_budget", "must be within [0, 1]"));
        }
        if !(0.0..=2.0).contains(&self.generation.temperature) {
            return Err(invalid("generation.temperature", "must be within [0, 2]"));
        }
        if self.generation.max_output_tokens < 1 {
            return Err(invalid("generation.max_output_tokens", "must be >= 1"));
        }
        if self.providers.mock_dim.0 < 2 {
            return Err(invalid("providers.mock_dim", "must be >= 2"));
        }
        if self.providers.http.rate_limit < 1 {
            return Err(invalid("providers.http.rate_limit", "must be >= 1"));
        }
        if self.providers.http.max_attempts < 1 {
            return Err(invalid("providers.http.max_attempts", "must be >= 1"));
        }
        if let Some(w) = self.workers {
            if w < 1 {
                return Err(invalid("workers", "must be >= 1 when set"));
            }
        }
        Ok(())
    }

    /// Per-level caps with the default of 50 for levels 2..=l_max.
    pub fn caps_by_level(&self) -> Result<BTreeMap<usize, usize>, ConfigError> {
        let mut out = BTreeMap::new();
        for level in 2..=self.generation.l_max {
            out.insert(level, 50);
        }
        for (key, &cap) in &self.generation.caps {
            let level: usize = key.parse().map_err(|_| {
                invalid("generation.caps", format!("level key `{key}` is not an integer"))
            })?;
            if level < 2 {
                return Err(invalid(
                    "generation.caps",
                    format!("level {level} cannot be capped (level 1 is uncapped)"),
                ));
            }
            out.insert(level, cap);
        }
        Ok(out)
    }

    pub fn bloom_targets(&self) -> Result<Vec<BloomLevel>, ConfigError> {
        let mut out = Vec::new();
        for name in &self.generation.bloom_targets {
            let level = BloomLevel::parse(name).ok_or_else(|| {
                invalid(
                    "generation.bloom_targets",
                    format!("unknown Bloom level `{name}`"),
                )
            })?;
            if !out.contains(&level) {
                out.push(level);
            }
        }
        Ok(out)
    }

    pub fn effective_workers(&self) -> usize {
        self.workers.unwrap_or_else(|| {
            let cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
            cpus.min(self.providers.http.rate_limit.max(1))
        })
    }
}
