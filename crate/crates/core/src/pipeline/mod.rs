//! Orchestration: corpus -> concepts -> evidence -> qacgen -> export, with
//! per-(document, stage) caching keyed by content hash and stage-config
//! digest. A rerun over an unchanged document performs zero provider calls
//! for that document's stages; editing a prompt template invalidates exactly
//! the stages that render it.

mod cache;
mod manifest;

pub use cache::StageCache;
pub use manifest::{DocumentStatus, RunManifest, StageStatus};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concepts::{
    extract_chunk_concepts, fuse_concepts, ChunkConcept, ConceptError, ExtractParams,
    FusionOutput, FusionParams,
};
use crate::config::{ConfigError, ProviderMode, RunConfig};
use crate::corpus::{chunk_document, ingest_documents, Chunk, CorpusError, Document};
use crate::evidence::{assemble_stems, build_chunk_index, EvidenceParams, QuestionStem};
use crate::export::{
    build_sft, build_triplets, compute_stats, render_stats, write_atomic, write_jsonl,
    ExportError, FileManifest,
};
use crate::prompts::{TemplateSet, CLUSTER_LABEL, CONCEPT_EXTRACT, MISLEADING_CONTEXT, QUESTION_GEN};
use crate::providers::{Embedder, ProviderSet};
use crate::qacgen::{
    curate_contexts, enumerate_combinations, generate_qa, validate_record, CurationContext,
    QaError, QaParams, QacRecord,
};
use crate::util::digest_hex;

/// Version marker folded into the chunks-stage digest; bump when the
/// tokenizer or chunker rule changes.
const TOKENIZER_RULE_VERSION: &str = "ws-punct-v1";

pub const QAC_FILE: &str = "qac.jsonl";
pub const TRIPLETS_FILE: &str = "triplets.jsonl";
pub const SFT_FILE: &str = "sft.jsonl";
pub const SFT_DISTRACTOR_FILE: &str = "sft_distractor.jsonl";
pub const RECIPE_FILE: &str = "recipe.json";
pub const STATS_JSON_FILE: &str = "stats.json";
pub const STATS_TEXT_FILE: &str = "stats.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunGoal {
    /// Stage 1 only.
    Concepts,
    /// Stages 1-2.
    Stems,
    /// Full pipeline with exports.
    Full,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("error budget exceeded: {skipped}/{total} combos skipped")]
    BudgetExceeded { skipped: usize, total: usize, manifest: Box<RunManifest> },
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("no cached records for document {0}; run `generate` first")]
    MissingCachedRecords(String),
}

impl PipelineError {
    /// Process exit code: 1 config, 2 error budget, 3 provider unreachable.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::BudgetExceeded { .. } => 2,
            PipelineError::ProviderUnreachable(_) => 3,
            _ => 1,
        }
    }
}

/// Stage-config digests; each stage's digest chains the previous one, so a
/// change invalidates exactly the downstream stages.
#[derive(Debug, Clone)]
pub struct StageDigests {
    pub chunks: String,
    pub concepts: String,
    pub stems: String,
    pub records: String,
}

pub fn stage_digests(
    config: &RunConfig,
    templates: &TemplateSet,
    providers: &ProviderSet,
    corpus_digest: &str,
) -> StageDigests {
    let chunks = digest_hex(&[
        "chunks",
        TOKENIZER_RULE_VERSION,
        &config.chunking.chunk_size.to_string(),
        &config.chunking.chunk_overlap.to_string(),
    ]);
    let concepts = digest_hex(&[
        "concepts",
        &chunks,
        &format!("{:?}", config.concepts.k),
        &config.concepts.dedup_threshold.to_string(),
        &config.concepts.max_concepts_per_chunk.to_string(),
        &config.concepts.max_iters.to_string(),
        &format!("{:?}", config.concepts.representative_mode),
        &config.seed.to_string(),
        templates.hash_of(CONCEPT_EXTRACT),
        templates.hash_of(CLUSTER_LABEL),
        &providers.generator.id(),
        &providers.embedder.id(),
    ]);
    let mut stems_parts: Vec<String> = vec![
        "stems".to_string(),
        concepts.clone(),
        config.evidence.dense_candidates.to_string(),
        config.evidence.keep_top.to_string(),
        config.evidence.window_radius.to_string(),
        config.evidence.min_window_score.to_string(),
        config.evidence.corpus_wide.to_string(),
        providers.reranker.id(),
    ];
    if config.evidence.corpus_wide {
        stems_parts.push(corpus_digest.to_string());
    }
    let stems_refs: Vec<&str> = stems_parts.iter().map(String::as_str).collect();
    let stems = digest_hex(&stems_refs);
    let records = digest_hex(&[
        "records",
        &stems,
        &config.generation.l_max.to_string(),
        &format!("{:?}", config.generation.caps),
        &config.generation.questions_per_combo.to_string(),
        &config.generation.bloom_targets.join(","),
        &config.generation.json_attempts.to_string(),
        &config.generation.temperature.to_string(),
        &config.generation.max_output_tokens.to_string(),
        &config.generation.error_budget.to_string(),
        &config.seed.to_string(),
        templates.hash_of(QUESTION_GEN),
        templates.hash_of(MISLEADING_CONTEXT),
    ]);
    StageDigests { chunks, concepts, stems, records }
}

/// Build the configured provider set (wrapped in the response cache) and,
/// for HTTP providers, probe reachability before any work starts.
pub fn build_providers(config: &RunConfig) -> Result<ProviderSet, PipelineError> {
    let base = match config.providers.mode {
        ProviderMode::Mock => ProviderSet::mock(config.seed, config.providers.mock_dim.0),
        ProviderMode::Http => {
            let http = &config.providers.http;
            for url in [
                &http.generation_base_url,
                &http.embedding_base_url,
                &http.rerank_base_url,
            ] {
                crate::providers::http::probe_endpoint(url, http.timeout_secs)
                    .map_err(|e| PipelineError::ProviderUnreachable(e.to_string()))?;
            }
            ProviderSet::http(http)
                .map_err(|e| PipelineError::ProviderUnreachable(e.to_string()))?
        }
    };
    Ok(base.with_cache(&config.cache_dir.join("responses"))?)
}

/// A record tagged with its combo for deterministic export ordering.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ComboRecord {
    combo_id: String,
    record: QacRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
struct RecordsArtifact {
    records: Vec<ComboRecord>,
    combos_total: usize,
    combos_skipped: usize,
    warnings: Vec<String>,
}

struct DocOutcome {
    status: DocumentStatus,
    records: Vec<ComboRecord>,
    combos_total: usize,
    combos_skipped: usize,
    warnings: Vec<String>,
    stage_ms: BTreeMap<String, u64>,
}

struct RunCtx<'a> {
    config: &'a RunConfig,
    templates: &'a TemplateSet,
    providers: &'a ProviderSet,
    digests: &'a StageDigests,
    cache: &'a StageCache,
    caps: BTreeMap<usize, usize>,
    qa_params: QaParams,
    corpus_digest: String,
    goal: RunGoal,
}

/// Execute the pipeline to the requested goal and write the manifest.
pub fn run_pipeline(config: &RunConfig, goal: RunGoal) -> Result<RunManifest, PipelineError> {
    config.validate()?;
    let providers = build_providers(config)?;
    run_pipeline_with_providers(config, goal, providers)
}

/// [`run_pipeline`] with an explicit provider set; lets tests exercise the
/// error-budget and provider-failure paths with scripted providers.
pub fn run_pipeline_with_providers(
    config: &RunConfig,
    goal: RunGoal,
    providers: ProviderSet,
) -> Result<RunManifest, PipelineError> {
    config.validate()?;
    let templates = TemplateSet::load(config.templates_dir.as_deref())?;
    let cache = StageCache::open(&config.cache_dir)?;

    let ingest = ingest_documents(&config.corpus_root, &config.include_globs)?;
    let mut warnings = ingest.warnings.clone();
    let corpus_digest = corpus_digest(&ingest.documents);
    let digests = stage_digests(config, &templates, &providers, &corpus_digest);

    let ctx = RunCtx {
        config,
        templates: &templates,
        providers: &providers,
        digests: &digests,
        cache: &cache,
        caps: config.caps_by_level()?,
        qa_params: QaParams {
            questions_per_combo: config.generation.questions_per_combo,
            bloom_targets: config.bloom_targets()?,
            json_attempts: config.generation.json_attempts,
            max_output_tokens: config.generation.max_output_tokens,
            temperature: config.generation.temperature,
        },
        corpus_digest,
        goal,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.effective_workers())
        .build()
        .expect("worker pool");

    // Phase A: chunk every document (pure, no providers); the full chunk
    // list is shared context for curation and corpus-wide retrieval.
    let chunked: Vec<(Document, Vec<Chunk>, StageStatus, u64)> = pool.install(|| {
        ingest
            .documents
            .par_iter()
            .map(|doc| {
                let started = Instant::now();
                let (chunks, status) = load_or_compute(
                    &cache,
                    &doc.content_hash,
                    "chunks",
                    &digests.chunks,
                    || chunk_document(doc, config.chunking.chunk_size, config.chunking.chunk_overlap),
                );
                let chunks = chunks?;
                Ok((doc.clone(), chunks, status, started.elapsed().as_millis() as u64))
            })
            .collect::<Result<Vec<_>, CorpusError>>()
    })?;
    let corpus_chunks: Vec<Chunk> =
        chunked.iter().flat_map(|(_, chunks, _, _)| chunks.iter().cloned()).collect();

    // Phase B: per-document stages, documents in parallel.
    let outcomes: Vec<DocOutcome> = pool.install(|| {
        chunked
            .par_iter()
            .map(|(doc, chunks, chunk_status, chunk_ms)| {
                process_document(doc, chunks, *chunk_status, *chunk_ms, &corpus_chunks, &ctx)
            })
            .collect()
    });

    let mut documents = Vec::new();
    let mut stage_ms: BTreeMap<String, u64> = BTreeMap::new();
    let mut all_records: Vec<ComboRecord> = Vec::new();
    let mut combos_total = 0;
    let mut combos_skipped = 0;
    for outcome in outcomes {
        documents.push(outcome.status);
        warnings.extend(outcome.warnings);
        combos_total += outcome.combos_total;
        combos_skipped += outcome.combos_skipped;
        for (stage, ms) in outcome.stage_ms {
            *stage_ms.entry(stage).or_default() += ms;
        }
        all_records.extend(outcome.records);
    }

    // Documents are already in doc_id order; order records by
    // (doc_id, combo_id, record_id) for schedule-independent output.
    all_records.sort_by(|a, b| {
        a.record
            .doc_id
            .cmp(&b.record.doc_id)
            .then_with(|| a.combo_id.cmp(&b.combo_id))
            .then_with(|| a.record.record_id.cmp(&b.record.record_id))
    });
    let records: Vec<QacRecord> = all_records.into_iter().map(|cr| cr.record).collect();

    // A run where every document died on provider transport errors means
    // the endpoint went away mid-run.
    let provider_skips = documents
        .iter()
        .filter(|d| d.skipped_reason.as_deref().is_some_and(|r| r.starts_with("provider:")))
        .count();
    if provider_skips > 0 && provider_skips == documents.len() {
        return Err(PipelineError::ProviderUnreachable(
            "every document failed with provider transport errors".to_string(),
        ));
    }

    let mut outputs = Vec::new();
    if goal == RunGoal::Full {
        let export_started = Instant::now();
        outputs = write_outputs(&records, config)?;
        *stage_ms.entry("export".to_string()).or_default() +=
            export_started.elapsed().as_millis() as u64;
    }

    let budget_exceeded = combos_total > 0
        && (combos_skipped as f64 / combos_total as f64) > config.generation.error_budget;

    let manifest = RunManifest {
        config_digest: config_digest(config),
        effective_config: config.clone(),
        documents,
        provider_stats: providers.stats.snapshot(),
        outputs,
        stage_wall_ms: stage_ms,
        warnings,
        combos_total,
        combos_skipped,
        error_budget_exceeded: budget_exceeded,
    };
    write_manifest(&manifest, &config.out_dir)?;

    if budget_exceeded {
        return Err(PipelineError::BudgetExceeded {
            skipped: combos_skipped,
            total: combos_total,
            manifest: Box::new(manifest),
        });
    }
    Ok(manifest)
}

/// Re-export the output files from cached records without any provider
/// calls. Fails if any document has no cached records for the current
/// configuration.
pub fn re_export(config: &RunConfig) -> Result<RunManifest, PipelineError> {
    config.validate()?;
    let templates = TemplateSet::load(config.templates_dir.as_deref())?;
    // Providers are only needed for their cache-key identities here.
    let providers = match config.providers.mode {
        ProviderMode::Mock => ProviderSet::mock(config.seed, config.providers.mock_dim.0),
        ProviderMode::Http => ProviderSet::http(&config.providers.http)
            .map_err(|e| PipelineError::ProviderUnreachable(e.to_string()))?,
    };
    let cache = StageCache::open(&config.cache_dir)?;
    let ingest = ingest_documents(&config.corpus_root, &config.include_globs)?;
    let corpus_digest_value = corpus_digest(&ingest.documents);
    let digests = stage_digests(config, &templates, &providers, &corpus_digest_value);

    let mut documents = Vec::new();
    let mut all_records: Vec<ComboRecord> = Vec::new();
    let mut combos_total = 0;
    let mut combos_skipped = 0;
    let mut warnings = ingest.warnings.clone();
    for doc in &ingest.documents {
        let chunks = cache
            .load::<Vec<Chunk>>(&doc.content_hash, "chunks", &digests.chunks)
            .map(Ok)
            .unwrap_or_else(|| {
                chunk_document(doc, config.chunking.chunk_size, config.chunking.chunk_overlap)
            })?;
        let records_key = records_key_for(&digests, &chunks, &corpus_digest_value);
        let Some(artifact) =
            cache.load::<RecordsArtifact>(&doc.content_hash, "records", &records_key)
        else {
            return Err(PipelineError::MissingCachedRecords(doc.doc_id.clone()));
        };
        combos_total += artifact.combos_total;
        combos_skipped += artifact.combos_skipped;
        warnings.extend(artifact.warnings.clone());
        documents.push(DocumentStatus {
            doc_id: doc.doc_id.clone(),
            content_hash: doc.content_hash.clone(),
            stages: BTreeMap::from([("records".to_string(), StageStatus::Cached)]),
            skipped_reason: None,
            records: artifact.records.len(),
        });
        all_records.extend(artifact.records);
    }
    all_records.sort_by(|a, b| {
        a.record
            .doc_id
            .cmp(&b.record.doc_id)
            .then_with(|| a.combo_id.cmp(&b.combo_id))
            .then_with(|| a.record.record_id.cmp(&b.record.record_id))
    });
    let records: Vec<QacRecord> = all_records.into_iter().map(|cr| cr.record).collect();
    let outputs = write_outputs(&records, config)?;
    let manifest = RunManifest {
        config_digest: config_digest(config),
        effective_config: config.clone(),
        documents,
        provider_stats: providers.stats.snapshot(),
        outputs,
        stage_wall_ms: BTreeMap::new(),
        warnings,
        combos_total,
        combos_skipped,
        error_budget_exceeded: false,
    };
    write_manifest(&manifest, &config.out_dir)?;
    Ok(manifest)
}

/// Digest over (doc id, content hash) pairs identifying a corpus snapshot.
pub fn corpus_digest(documents: &[Document]) -> String {
    let parts: Vec<String> =
        documents.iter().map(|d| format!("{}={}", d.doc_id, d.content_hash)).collect();
    let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
    digest_hex(&refs)
}

fn config_digest(config: &RunConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    digest_hex(&[&canonical])
}

/// Single-chunk documents borrow sibling content for their irrelevant
/// contexts, so their records depend on the rest of the corpus.
fn records_key_for(digests: &StageDigests, chunks: &[Chunk], corpus_digest: &str) -> String {
    if chunks.len() == 1 {
        digest_hex(&[&digests.records, corpus_digest])
    } else {
        digests.records.clone()
    }
}

fn load_or_compute<T, E>(
    cache: &StageCache,
    content_hash: &str,
    stage: &str,
    digest: &str,
    compute: impl FnOnce() -> Result<T, E>,
) -> (Result<T, E>, StageStatus)
where
    T: Serialize + serde::de::DeserializeOwned,
{
    if let Some(value) = cache.load::<T>(content_hash, stage, digest) {
        return (Ok(value), StageStatus::Cached);
    }
    match compute() {
        Ok(value) => {
            cache.store(content_hash, stage, digest, &value);
            (Ok(value), StageStatus::Processed)
        }
        Err(err) => (Err(err), StageStatus::Skipped),
    }
}

fn process_document(
    doc: &Document,
    chunks: &[Chunk],
    chunk_status: StageStatus,
    chunk_ms: u64,
    corpus_chunks: &[Chunk],
    ctx: &RunCtx<'_>,
) -> DocOutcome {
    let mut stages = BTreeMap::from([("chunks".to_string(), chunk_status)]);
    let mut stage_ms = BTreeMap::from([("chunks".to_string(), chunk_ms)]);
    let mut warnings = Vec::new();
    let outcome = |stages: BTreeMap<String, StageStatus>,
                       stage_ms: BTreeMap<String, u64>,
                       warnings: Vec<String>,
                       skipped: Option<String>,
                       artifact: RecordsArtifact| {
        DocOutcome {
            status: DocumentStatus {
                doc_id: doc.doc_id.clone(),
                content_hash: doc.content_hash.clone(),
                stages,
                skipped_reason: skipped,
                records: artifact.records.len(),
            },
            records: artifact.records,
            combos_total: artifact.combos_total,
            combos_skipped: artifact.combos_skipped,
            warnings,
            stage_ms,
        }
    };

    if chunks.is_empty() {
        return outcome(
            stages,
            stage_ms,
            warnings,
            Some("empty_document".to_string()),
            RecordsArtifact::default(),
        );
    }

    // Stage: concepts.
    let started = Instant::now();
    let (fusion, status) = load_or_compute(
        ctx.cache,
        &doc.content_hash,
        "concepts",
        &ctx.digests.concepts,
        || concepts_stage(doc, chunks, ctx, &mut warnings),
    );
    stages.insert("concepts".to_string(), status);
    stage_ms.insert("concepts".to_string(), started.elapsed().as_millis() as u64);
    let fusion = match fusion {
        Ok(f) => f,
        Err(reason) => {
            return outcome(stages, stage_ms, warnings, Some(reason), RecordsArtifact::default())
        }
    };
    if ctx.goal == RunGoal::Concepts {
        return outcome(stages, stage_ms, warnings, None, RecordsArtifact::default());
    }

    // Stage: stems.
    let started = Instant::now();
    let (stems, status) =
        load_or_compute(ctx.cache, &doc.content_hash, "stems", &ctx.digests.stems, || {
            stems_stage(&fusion, chunks, corpus_chunks, ctx)
        });
    stages.insert("stems".to_string(), status);
    stage_ms.insert("stems".to_string(), started.elapsed().as_millis() as u64);
    let stems = match stems {
        Ok(s) => s,
        Err(reason) => {
            return outcome(stages, stage_ms, warnings, Some(reason), RecordsArtifact::default())
        }
    };
    if stems.is_empty() {
        stages.insert("records".to_string(), StageStatus::Skipped);
        return outcome(
            stages,
            stage_ms,
            warnings,
            Some("no_stems".to_string()),
            RecordsArtifact::default(),
        );
    }
    if ctx.goal == RunGoal::Stems {
        return outcome(stages, stage_ms, warnings, None, RecordsArtifact::default());
    }

    // Stage: records.
    let started = Instant::now();
    let records_key = records_key_for(ctx.digests, chunks, &ctx.corpus_digest);
    let (artifact, status) = load_or_compute(
        ctx.cache,
        &doc.content_hash,
        "records",
        &records_key,
        || records_stage(doc, chunks, corpus_chunks, &stems, ctx),
    );
    stages.insert("records".to_string(), status);
    stage_ms.insert("records".to_string(), started.elapsed().as_millis() as u64);
    match artifact {
        Ok(artifact) => {
            warnings.extend(artifact.warnings.clone());
            outcome(stages, stage_ms, warnings, None, artifact)
        }
        Err(reason) => outcome(stages, stage_ms, warnings, Some(reason), RecordsArtifact::default()),
    }
}

/// Extract chunk concepts (chunk failures become warnings) and fuse them.
/// Returns a skip reason string on document-level failure.
fn concepts_stage(
    doc: &Document,
    chunks: &[Chunk],
    ctx: &RunCtx<'_>,
    warnings: &mut Vec<String>,
) -> Result<FusionOutput, String> {
    let extract_params = ExtractParams {
        max_concepts_per_chunk: ctx.config.concepts.max_concepts_per_chunk,
        json_attempts: ctx.config.generation.json_attempts,
        max_output_tokens: ctx.config.generation.max_output_tokens,
        temperature: ctx.config.generation.temperature,
    };
    let extracted: Vec<Result<Vec<ChunkConcept>, ConceptError>> = chunks
        .par_iter()
        .map(|chunk| {
            extract_chunk_concepts(
                chunk,
                &ctx.providers.generator,
                ctx.templates,
                &extract_params,
            )
        })
        .collect();
    let mut all = Vec::new();
    for (chunk, result) in chunks.iter().zip(extracted) {
        match result {
            Ok(concepts) => all.extend(concepts),
            Err(err @ ConceptError::MalformedJson { .. }) => {
                warnings.push(format!("chunk {} skipped: {err}", chunk.chunk_id));
            }
            Err(ConceptError::Provider(err)) => {
                warnings.push(format!("provider: chunk {} skipped: {err}", chunk.chunk_id));
            }
            Err(err) => warnings.push(format!("chunk {} skipped: {err}", chunk.chunk_id)),
        }
    }
    if all.is_empty() {
        return Err("no_concepts".to_string());
    }
    let fusion_params = FusionParams {
        k: ctx.config.concepts.k,
        dedup_threshold: ctx.config.concepts.dedup_threshold,
        max_iters: ctx.config.concepts.max_iters,
        seed: ctx.config.seed,
        mode: ctx.config.concepts.representative_mode,
    };
    fuse_concepts(
        &doc.doc_id,
        &all,
        &ctx.providers.embedder,
        Some(&ctx.providers.generator),
        ctx.templates,
        &extract_params,
        &fusion_params,
    )
    .map_err(|err| match err {
        ConceptError::NoConcepts(_) => "no_concepts".to_string(),
        ConceptError::Provider(e) => format!("provider: {e}"),
        other => format!("fusion failed: {other}"),
    })
}

fn stems_stage(
    fusion: &FusionOutput,
    chunks: &[Chunk],
    corpus_chunks: &[Chunk],
    ctx: &RunCtx<'_>,
) -> Result<Vec<QuestionStem>, String> {
    let scope: &[Chunk] = if ctx.config.evidence.corpus_wide { corpus_chunks } else { chunks };
    let params = EvidenceParams {
        dense_candidates: ctx.config.evidence.dense_candidates,
        keep_top: ctx.config.evidence.keep_top,
        window_radius: ctx.config.evidence.window_radius,
        min_window_score: ctx.config.evidence.min_window_score,
    };
    let index = build_chunk_index(scope, &ctx.providers.embedder)
        .map_err(|e| format!("provider: {e}"))?;
    assemble_stems(
        &fusion.document_concepts,
        &index,
        scope,
        &params,
        &ctx.providers.embedder,
        &ctx.providers.reranker,
    )
    .map_err(|e| format!("provider: {e}"))
}

fn records_stage(
    doc: &Document,
    chunks: &[Chunk],
    corpus_chunks: &[Chunk],
    stems: &[QuestionStem],
    ctx: &RunCtx<'_>,
) -> Result<RecordsArtifact, String> {
    let combos = enumerate_combinations(stems, ctx.config.generation.l_max, &ctx.caps, ctx.config.seed);
    let index = build_chunk_index(chunks, &ctx.providers.embedder)
        .map_err(|e| format!("provider: {e}"))?;
    let curation = CurationContext {
        doc_id: &doc.doc_id,
        doc_chunks: chunks,
        index: &index,
        corpus_chunks,
        embedder: &ctx.providers.embedder,
        generator: &ctx.providers.generator,
        templates: ctx.templates,
        params: &ctx.qa_params,
    };

    let mut artifact = RecordsArtifact { combos_total: combos.len(), ..Default::default() };
    let mut accepted_questions: BTreeSet<String> = BTreeSet::new();
    for combo in &combos {
        let drafts = match generate_qa(combo, &ctx.providers.generator, ctx.templates, &ctx.qa_params)
        {
            Ok(drafts) => drafts,
            Err(err @ QaError::MalformedJson { .. }) => {
                artifact.combos_skipped += 1;
                artifact
                    .warnings
                    .push(format!("combo {} skipped: {err}", combo.combo_id));
                continue;
            }
            Err(QaError::Provider(err)) => {
                artifact.combos_skipped += 1;
                artifact
                    .warnings
                    .push(format!("provider: combo {} skipped: {err}", combo.combo_id));
                continue;
            }
        };
        let mut combo_failed = false;
        for draft in &drafts {
            let contexts = match curate_contexts(draft, combo, &curation) {
                Ok(Some(contexts)) => contexts,
                Ok(None) => {
                    artifact.warnings.push(format!(
                        "record dropped (combo {}): no chunk outside the evidence set exists",
                        combo.combo_id
                    ));
                    continue;
                }
                Err(err) => {
                    artifact
                        .warnings
                        .push(format!("provider: combo {} curation failed: {err}", combo.combo_id));
                    combo_failed = true;
                    break;
                }
            };
            match validate_record(draft, &contexts, combo, &doc.doc_id, &accepted_questions) {
                Ok(record) => {
                    accepted_questions.insert(record.question.to_lowercase());
                    artifact
                        .records
                        .push(ComboRecord { combo_id: combo.combo_id.clone(), record });
                }
                Err(reason) => {
                    artifact.warnings.push(format!(
                        "draft rejected (combo {}): {reason}",
                        combo.combo_id
                    ));
                }
            }
        }
        if combo_failed {
            artifact.combos_skipped += 1;
        }
    }
    artifact.records.sort_by(|a, b| {
        a.combo_id
            .cmp(&b.combo_id)
            .then_with(|| a.record.record_id.cmp(&b.record.record_id))
    });
    Ok(artifact)
}

fn write_outputs(records: &[QacRecord], config: &RunConfig) -> Result<Vec<FileManifest>, PipelineError> {
    let out = &config.out_dir;
    std::fs::create_dir_all(out)?;
    let mut outputs = Vec::new();
    outputs.push(write_jsonl(records, &out.join(QAC_FILE))?);
    let triplets = build_triplets(records)?;
    outputs.push(write_jsonl(&triplets, &out.join(TRIPLETS_FILE))?);
    let sft = build_sft(records, false, config.seed);
    outputs.push(write_jsonl(&sft, &out.join(SFT_FILE))?);
    let sft_distractor = build_sft(records, true, config.seed);
    outputs.push(write_jsonl(&sft_distractor, &out.join(SFT_DISTRACTOR_FILE))?);

    let recipe_body = serde_json::to_string_pretty(&config.recipe).expect("recipe serializes");
    write_atomic(&out.join(RECIPE_FILE), recipe_body.as_bytes())?;
    outputs.push(file_manifest_for(RECIPE_FILE, 1, recipe_body.as_bytes()));

    let stats = compute_stats(records);
    let stats_body = serde_json::to_string_pretty(&stats).expect("stats serialize");
    write_atomic(&out.join(STATS_JSON_FILE), stats_body.as_bytes())?;
    outputs.push(file_manifest_for(STATS_JSON_FILE, 1, stats_body.as_bytes()));
    let stats_text = render_stats(&stats);
    write_atomic(&out.join(STATS_TEXT_FILE), stats_text.as_bytes())?;
    outputs.push(file_manifest_for(STATS_TEXT_FILE, 1, stats_text.as_bytes()));
    Ok(outputs)
}

fn file_manifest_for(name: &str, records: usize, bytes: &[u8]) -> FileManifest {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    FileManifest {
        path: name.to_string(),
        records,
        sha256: crate::corpus::hex_digest(hasher),
    }
}

fn write_manifest(manifest: &RunManifest, out_dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out_dir)?;
    let body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write_atomic(&out_dir.join(MANIFEST_FILE), body.as_bytes())?;
    Ok(())
}
