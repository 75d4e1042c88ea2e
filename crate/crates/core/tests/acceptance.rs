//! Acceptance suite: one test per criterion, each printing a PASS line
//! (visible with `cargo test --test acceptance -- --nocapture`).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qacgen_core::concepts::{concept_id, kmeans, ChunkConcept, DocumentConcept};
use qacgen_core::config::RunConfig;
use qacgen_core::corpus::{chunk_document, content_hash, count_tokens, ingest_documents, Document};
use qacgen_core::evalkit::{mrr_at_10, recall_at_k, rouge_l, RankedRetrieval};
use qacgen_core::evidence::QuestionStem;
use qacgen_core::export::read_qac;
use qacgen_core::pipeline::{
    corpus_digest, run_pipeline, stage_digests, RunGoal, StageCache, StageStatus,
    QAC_FILE, RECIPE_FILE, SFT_DISTRACTOR_FILE, SFT_FILE, STATS_JSON_FILE, STATS_TEXT_FILE,
    TRIPLETS_FILE,
};
use qacgen_core::prompts::TemplateSet;
use qacgen_core::providers::{EmbeddingVector, ProviderSet};
use qacgen_core::qacgen::{enumerate_combinations, BloomLevel, QacRecord};

fn fixture_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus")
}

fn fixture_config(corpus: &Path, out: &Path, cache: &Path, seed: u64, workers: usize) -> RunConfig {
    let mut config = RunConfig::default();
    config.corpus_root = corpus.to_path_buf();
    config.out_dir = out.to_path_buf();
    config.cache_dir = cache.to_path_buf();
    config.seed = seed;
    config.workers = Some(workers);
    config.chunking.chunk_size = 160;
    config.chunking.chunk_overlap = 32;
    config.evidence.dense_candidates = 10;
    config.evidence.keep_top = 4;
    config.evidence.min_window_score = 0.2;
    config
}

fn word_doc(tokens: usize) -> Document {
    let text: Vec<String> = (0..tokens).map(|i| format!("w{i}")).collect();
    let text = text.join(" ");
    Document {
        doc_id: "synthetic".to_string(),
        source_path: PathBuf::from("synthetic.txt"),
        content_hash: content_hash(&text),
        text,
    }
}

// ---------------------------------------------------------------------
// Criterion 1: chunking conformance.
// ---------------------------------------------------------------------

fn check_chunking(total_tokens: usize, size: usize, overlap: usize) {
    let doc = word_doc(total_tokens);
    let chunks = chunk_document(&doc, size, overlap).unwrap();
    let stride = size - overlap;

    // Coverage: every token index in [0, T) appears in some span.
    let mut covered = vec![false; total_tokens];
    for c in &chunks {
        assert!(c.token_span.1 - c.token_span.0 <= size, "span exceeds chunk size");
        assert!(c.token_span.1 > c.token_span.0);
        for slot in covered[c.token_span.0..c.token_span.1].iter_mut() {
            *slot = true;
        }
    }
    assert!(covered.iter().all(|&c| c), "uncovered token for T={total_tokens}, size={size}");

    // Stride and exact overlap between consecutive chunks.
    for pair in chunks.windows(2) {
        assert_eq!(pair[1].token_span.0 - pair[0].token_span.0, stride);
        let intersection =
            pair[0].token_span.1.min(pair[1].token_span.1).saturating_sub(pair[1].token_span.0);
        assert_eq!(intersection, overlap, "overlap mismatch T={total_tokens} size={size}");
    }

    // Chunk count formula.
    let expected = if total_tokens > size {
        (total_tokens - size).div_ceil(stride) + 1
    } else {
        1
    };
    assert_eq!(chunks.len(), expected, "count formula T={total_tokens} size={size} ov={overlap}");
}

#[test]
fn criterion_01_chunking_conformance() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..20 {
        let t = rng.random_range(1..=5000);
        check_chunking(t, 1024, 200);
    }
    for _ in 0..50 {
        let size = rng.random_range(1..=2000);
        let overlap = rng.random_range(0..size);
        let t = rng.random_range(1..=5000);
        check_chunking(t, size, overlap);
    }
    // The documented 2000-token case.
    let doc = word_doc(2000);
    let spans: Vec<(usize, usize)> = chunk_document(&doc, 1024, 200)
        .unwrap()
        .iter()
        .map(|c| c.token_span)
        .collect();
    assert_eq!(spans, vec![(0, 1024), (824, 1848), (1648, 2000)]);
    println!("[PASS] criterion 1: chunking conformance (70 randomized configs + 2000-token case)");
}

// ---------------------------------------------------------------------
// Criterion 2: k-means correctness.
// ---------------------------------------------------------------------

#[test]
fn criterion_02_kmeans_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for trial in 0..200u64 {
        let n = rng.random_range(1..=50);
        let k = rng.random_range(1..=5.min(n));
        let dim = rng.random_range(2..=6);
        let points: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-10.0f32..10.0)).collect())
            .collect();
        let seed = 1000 + trial;
        let result = kmeans(&points, k, seed, 500).unwrap();

        // Identical across reruns with the same seed.
        for _ in 0..2 {
            let again = kmeans(&points, k, seed, 500).unwrap();
            assert_eq!(result.assignments, again.assignments);
            assert_eq!(result.centroids, again.centroids);
            assert_eq!(result.inertia_trace, again.inertia_trace);
        }

        let points_f64: Vec<Vec<f64>> = points
            .iter()
            .map(|p| p.iter().map(|&x| f64::from(x)).collect())
            .collect();
        // Every point is nearest its assigned centroid.
        for (p, &a) in points_f64.iter().zip(result.assignments.iter()) {
            let own: f64 = p
                .iter()
                .zip(result.centroids[a].iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            for c in &result.centroids {
                let other: f64 = p.iter().zip(c.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
                assert!(own <= other + 1e-9, "point not nearest its centroid (trial {trial})");
            }
        }
        // Centroids equal member means within 1e-9.
        for ci in 0..k {
            let members: Vec<&Vec<f64>> = points_f64
                .iter()
                .zip(result.assignments.iter())
                .filter(|(_, &a)| a == ci)
                .map(|(p, _)| p)
                .collect();
            assert!(!members.is_empty(), "empty cluster survived (trial {trial})");
            for d in 0..dim {
                let mean: f64 = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                assert!(
                    (mean - result.centroids[ci][d]).abs() < 1e-9,
                    "centroid != member mean (trial {trial})"
                );
            }
        }
        // Inertia non-increasing per iteration.
        for pair in result.inertia_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "inertia rose (trial {trial})");
        }
    }
    println!("[PASS] criterion 2: k-means correctness (200 random instances, 3 reruns each)");
}

// ---------------------------------------------------------------------
// Criterion 3: combination enumeration.
// ---------------------------------------------------------------------

fn synthetic_stems(k: usize) -> Vec<QuestionStem> {
    (0..k)
        .map(|i| {
            let cid = concept_id("doc", i);
            QuestionStem {
                stem_id: cid.clone(),
                concept: DocumentConcept {
                    concept_id: cid.clone(),
                    label: format!("topic {i}"),
                    member_concepts: vec![ChunkConcept::new(
                        &format!("topic {i}"),
                        "doc#c0000",
                        "doc",
                    )],
                    centroid: EmbeddingVector { values: vec![0.0, 0.0] },
                    doc_id: "doc".to_string(),
                },
                evidences: Vec::new(),
                doc_id: "doc".to_string(),
            }
        })
        .collect()
}

fn binomial(n: usize, r: usize) -> usize {
    if r > n {
        return 0;
    }
    let mut out = 1usize;
    for i in 0..r {
        out = out * (n - i) / (i + 1);
    }
    out
}

#[test]
fn criterion_03_combination_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let cap_choices = [1usize, 50, usize::MAX];
    for trial in 0..120u64 {
        let k = rng.random_range(1..=30);
        let l_max = rng.random_range(1..=3);
        let cap = cap_choices[rng.random_range(0..cap_choices.len())];
        let caps: BTreeMap<usize, usize> = (2..=l_max).map(|l| (l, cap)).collect();
        let stems = synthetic_stems(k);
        let seed = 5000 + trial;
        let combos = enumerate_combinations(&stems, l_max, &caps, seed);

        for level in 1..=l_max {
            let got = combos.iter().filter(|c| c.level == level).count();
            let expected =
                if level == 1 { k } else { binomial(k, level).min(cap) };
            assert_eq!(got, expected, "count mismatch k={k} level={level} cap={cap}");
        }
        // No two combos share a stem set.
        let ids: BTreeSet<&str> = combos.iter().map(|c| c.combo_id.as_str()).collect();
        assert_eq!(ids.len(), combos.len(), "duplicate stem set (trial {trial})");
        // Seed-deterministic.
        let again = enumerate_combinations(&stems, l_max, &caps, seed);
        let a: Vec<&str> = combos.iter().map(|c| c.combo_id.as_str()).collect();
        let b: Vec<&str> = again.iter().map(|c| c.combo_id.as_str()).collect();
        assert_eq!(a, b, "enumeration not deterministic (trial {trial})");
    }
    // The documented cap-50 configuration at level 2.
    let combos = enumerate_combinations(&synthetic_stems(12), 2, &BTreeMap::from([(2, 50)]), 7);
    assert_eq!(combos.iter().filter(|c| c.level == 2).count(), 50);
    println!("[PASS] criterion 3: combination enumeration (120 random configs, cap-50 case)");
}

// ---------------------------------------------------------------------
// Criterion 4: end-to-end mock run determinism and schema validation.
// ---------------------------------------------------------------------

fn dataset_file_bytes(out: &Path) -> Vec<(String, Vec<u8>)> {
    [QAC_FILE, TRIPLETS_FILE, SFT_FILE, SFT_DISTRACTOR_FILE]
        .iter()
        .map(|name| (name.to_string(), std::fs::read(out.join(name)).unwrap()))
        .collect()
}

fn validate_record_schema(record: &QacRecord) {
    assert_eq!(record.record_id.len(), 16);
    assert!(record.record_id.chars().all(|c| c.is_ascii_hexdigit()));
    assert!(!record.question.trim().is_empty());
    assert!(!record.answer.trim().is_empty());
    assert!(record.combination_level >= 1);
    assert_eq!(record.concept_ids.len(), record.combination_level);
    assert!(!record.evidence_chunk_ids.is_empty());
    for chunk_id in &record.evidence_chunk_ids {
        assert!(
            chunk_id.starts_with(&record.doc_id),
            "evidence chunk {chunk_id} outside document {}",
            record.doc_id
        );
    }
    for variant in [
        &record.contexts.fully_supportive,
        &record.contexts.partially_supportive,
        &record.contexts.irrelevant,
        &record.contexts.misleading,
    ] {
        assert!(!variant.trim().is_empty(), "empty context variant in {}", record.record_id);
    }
}

#[test]
fn criterion_04_end_to_end_mock_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture_corpus();

    // Three runs with the same seed and cache: byte-identical datasets.
    let config = fixture_config(&corpus, &dir.path().join("out"), &dir.path().join("cache"), 7, 4);
    run_pipeline(&config, RunGoal::Full).unwrap();
    let baseline = dataset_file_bytes(&config.out_dir);
    for _ in 0..2 {
        run_pipeline(&config, RunGoal::Full).unwrap();
        assert_eq!(dataset_file_bytes(&config.out_dir), baseline, "rerun changed output bytes");
    }

    // Worker counts 1 and 4 from cold caches: byte-identical datasets.
    for workers in [1usize, 4] {
        let sub = dir.path().join(format!("w{workers}"));
        let config_w = fixture_config(&corpus, &sub.join("out"), &sub.join("cache"), 7, workers);
        run_pipeline(&config_w, RunGoal::Full).unwrap();
        assert_eq!(
            dataset_file_bytes(&config_w.out_dir),
            baseline,
            "worker count {workers} changed output bytes"
        );
    }

    // Schema validation over every record.
    let records = read_qac(&config.out_dir.join(QAC_FILE)).unwrap();
    assert!(!records.is_empty());
    let by_id: BTreeMap<&str, &QacRecord> =
        records.iter().map(|r| (r.record_id.as_str(), r)).collect();
    for record in &records {
        validate_record_schema(record);
    }

    // Triplets: exactly 2 negatives in [irrelevant, misleading] order, and
    // referential integrity back to the QAC file.
    let triplet_lines = std::fs::read_to_string(config.out_dir.join(TRIPLETS_FILE)).unwrap();
    let mut n_triplets = 0;
    for line in triplet_lines.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let record_id = v["meta"]["record_id"].as_str().unwrap();
        let record = by_id[record_id];
        let neg = v["neg"].as_array().unwrap();
        assert_eq!(neg.len(), 2, "triplet must carry exactly 2 negatives");
        assert_eq!(neg[0].as_str().unwrap(), record.contexts.irrelevant);
        assert_eq!(neg[1].as_str().unwrap(), record.contexts.misleading);
        let pos = v["pos"].as_array().unwrap();
        assert_eq!(pos.len(), 1);
        assert_eq!(pos[0].as_str().unwrap(), record.contexts.fully_supportive);
        assert_eq!(v["query"].as_str().unwrap(), record.question);
        n_triplets += 1;
    }
    assert_eq!(n_triplets, records.len());

    // Distractor SFT: exactly 3 passages per input; plain SFT: exactly 1.
    for (file, expected_passages) in [(SFT_DISTRACTOR_FILE, 3usize), (SFT_FILE, 1usize)] {
        let lines = std::fs::read_to_string(config.out_dir.join(file)).unwrap();
        let mut n = 0;
        for line in lines.lines().filter(|l| !l.trim().is_empty()) {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let input = v["input"].as_str().unwrap();
            let passages = (1..=expected_passages + 1)
                .take_while(|i| input.contains(&format!("Passage {i}: ")))
                .count();
            assert_eq!(passages, expected_passages, "{file} passage count");
            assert!(by_id.contains_key(v["meta"]["record_id"].as_str().unwrap()));
            n += 1;
        }
        assert_eq!(n, records.len());
    }
    println!(
        "[PASS] criterion 4: end-to-end mock determinism ({} records, 3 reruns, workers 1 and 4)",
        records.len()
    );
}

// ---------------------------------------------------------------------
// Criterion 5: cross-chunk yield on a constructed fixture.
// ---------------------------------------------------------------------

/// Ten-token sentence: nine words plus the trailing period token.
fn ten_token_sentence(words: [&str; 9]) -> String {
    format!("{}.", words.join(" "))
}

/// One 100-token block of filler prose; vocabulary varies per block and no
/// two adjacent tokens are both capitalized.
fn filler_block(block: usize) -> String {
    let themes = [
        "meadow", "harbor", "quarry", "orchard", "bakery", "foundry", "library", "granary",
    ];
    let theme = themes[block % themes.len()];
    (0..10)
        .map(|s| {
            ten_token_sentence([
                "Daily",
                "notes",
                "from",
                "the",
                theme,
                "mention",
                "routine",
                &format!("task{block}{s}"),
                "only",
            ])
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn biochar_block(block: usize) -> String {
    let mut sentences = vec![
        ten_token_sentence([
            "Biochar", "Reactors", "convert", "orchard", "prunings", "into", "stable", "carbon",
            "amendments",
        ]),
        ten_token_sentence([
            "Operators", "load", "Biochar", "Reactors", "each", "morning", "before", "kiln",
            "checks",
        ]),
        ten_token_sentence([
            "Cooling", "cycles", "inside", "Biochar", "Reactors", "take", "roughly", "four",
            "hours",
        ]),
    ];
    for s in 0..7 {
        sentences.push(ten_token_sentence([
            "Crews",
            "record",
            "ash",
            "volume",
            "and",
            "moisture",
            "for",
            &format!("log{block}{s}"),
            "review",
        ]));
    }
    sentences.join(" ")
}

#[test]
fn criterion_05_cross_chunk_yield() {
    // Eight 100-token blocks; the planted concept's surface forms appear
    // only in blocks 0 and 7. With chunk_size 100 and overlap 0 the blocks
    // are exactly the chunks.
    let mut blocks = Vec::new();
    for b in 0..8 {
        if b == 0 || b == 7 {
            blocks.push(biochar_block(b));
        } else {
            blocks.push(filler_block(b));
        }
    }
    let text = blocks.join(" ");
    assert_eq!(count_tokens(&text), 800, "constructed corpus must be exactly 8 chunks");

    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    std::fs::write(corpus.join("doc.txt"), &text).unwrap();

    let mut config =
        fixture_config(&corpus, &dir.path().join("out"), &dir.path().join("cache"), 7, 2);
    config.chunking.chunk_size = 100;
    config.chunking.chunk_overlap = 0;
    // One cluster per unique concept so every extracted concept becomes a
    // stem, including the planted one.
    config.concepts.k = Some(usize::MAX.min(512));
    config.generation.l_max = 1;
    config.generation.questions_per_combo = 2;

    run_pipeline(&config, RunGoal::Full).unwrap();
    let records = read_qac(&config.out_dir.join(QAC_FILE)).unwrap();
    assert!(!records.is_empty());

    let multi: Vec<&QacRecord> =
        records.iter().filter(|r| r.evidence_chunk_ids.len() >= 2).collect();
    assert!(!multi.is_empty(), "no record drew evidence from 2+ chunks");

    // The planted concept's record cites both far-apart chunks.
    let biochar: Vec<&QacRecord> = records
        .iter()
        .filter(|r| r.question.to_lowercase().contains("biochar"))
        .collect();
    assert!(!biochar.is_empty(), "planted concept produced no record");
    let hit = biochar.iter().any(|r| {
        r.evidence_chunk_ids.contains(&"doc.txt#c0000".to_string())
            && r.evidence_chunk_ids.contains(&"doc.txt#c0007".to_string())
    });
    assert!(hit, "planted concept record does not span chunks 0 and 7: {biochar:?}");
    println!("[PASS] criterion 5: cross-chunk yield (evidence spans chunk ordinals 0 and 7)");
}

// ---------------------------------------------------------------------
// Criterion 6: incrementality.
// ---------------------------------------------------------------------

const NEW_DOC: &str = "\
Greenhouse Sensor Network Notes

The greenhouse cooperative installed a sensor network across twelve growing tunnels. Soil \
probes report moisture every ten minutes, and canopy sensors track temperature and humidity. \
The coordinator reviews the readings each morning and flags tunnels that drift outside the \
crop recipe. Drip lines in flagged tunnels are inspected the same day.

Sensor Calibration happens quarterly. Probes are pulled, rinsed, and checked against a \
reference solution, and any probe off by more than two percent is replaced. The Sensor \
Calibration log feeds the maintenance budget, and probe failure rates have fallen since the \
cooperative switched suppliers.

Irrigation scheduling depends on the moisture trend rather than single readings. The \
controller waters a tunnel when the three-hour average drops below the crop threshold, and \
it skips cycles after rain events recorded by the roof gauge. Water use per tunnel fell by a \
fifth in the first season.

Alert Routing keeps night staff informed. Critical alerts page the on-call grower directly, \
while advisory alerts wait for the morning summary. The Alert Routing rules were rewritten \
after a frost event reached three tunnels before anyone was paged. Every alert now carries \
the tunnel number, the reading, and the recipe bound it crossed.

Training closes the loop. New members shadow the coordinator for two weeks and practice \
replacing probes in the spare tunnel. The cooperative publishes the sensor handbook on the \
shared drive and reviews it after every growing season.
";

#[test]
fn criterion_06_incrementality() {
    let dir = tempfile::tempdir().unwrap();
    // Mutable copy of the fixture corpus.
    let corpus = dir.path().join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    for entry in std::fs::read_dir(fixture_corpus()).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), corpus.join(entry.file_name())).unwrap();
    }

    let config = fixture_config(&corpus, &dir.path().join("out"), &dir.path().join("cache"), 7, 2);
    let first = run_pipeline(&config, RunGoal::Full).unwrap();
    assert!(first.provider_stats.provider_calls() > 0);

    // Unchanged rerun: zero provider calls.
    let rerun = run_pipeline(&config, RunGoal::Full).unwrap();
    assert_eq!(rerun.provider_stats.provider_calls(), 0, "warm rerun made provider calls");

    // Add one document: exactly it is processed, the rest load from cache.
    std::fs::write(corpus.join("07_greenhouse_sensors.txt"), NEW_DOC).unwrap();
    let incremental = run_pipeline(&config, RunGoal::Full).unwrap();
    assert_eq!(incremental.documents.len(), 7);
    for doc in &incremental.documents {
        let expected = if doc.doc_id == "07_greenhouse_sensors.txt" {
            StageStatus::Processed
        } else {
            StageStatus::Cached
        };
        assert_eq!(doc.overall(), expected, "unexpected status for {}", doc.doc_id);
    }
    let incr = incremental.provider_stats;
    assert!(incr.provider_calls() > 0);

    // A rerun after the addition is fully cached again, so every call in
    // the incremental run belonged to the new document.
    let settled = run_pipeline(&config, RunGoal::Full).unwrap();
    assert_eq!(settled.provider_stats.provider_calls(), 0);

    // Processing the new document in a fresh workspace costs at least as
    // many calls as the incremental run spent on it. The fresh workspace
    // carries one small companion document (curating context variants needs
    // at least one sibling chunk in the corpus), so it does the new
    // document's full work plus the companion's.
    let solo_dir = dir.path().join("solo");
    let solo_corpus = solo_dir.join("corpus");
    std::fs::create_dir_all(&solo_corpus).unwrap();
    std::fs::write(solo_corpus.join("07_greenhouse_sensors.txt"), NEW_DOC).unwrap();
    std::fs::write(
        solo_corpus.join("99_companion.txt"),
        "Depot Paint Codes\n\nThe depot repaints equipment cabinets on a five-year cycle. \
         Paint codes are listed on the inside of each cabinet door. Crews photograph the \
         code before ordering touch-up stock.\n",
    )
    .unwrap();
    let solo_config =
        fixture_config(&solo_corpus, &solo_dir.join("out"), &solo_dir.join("cache"), 7, 2);
    let solo = run_pipeline(&solo_config, RunGoal::Full).unwrap().provider_stats;
    assert!(
        incr.generate_calls <= solo.generate_calls
            && incr.embed_calls <= solo.embed_calls
            && incr.rerank_calls <= solo.rerank_calls,
        "incremental cost {incr:?} exceeds solo cost {solo:?}"
    );

    // Editing the generation prompt template reprocesses only the records
    // stage; chunks, concepts, and stems load from cache.
    let templates = dir.path().join("templates");
    TemplateSet::materialize_defaults(&templates).unwrap();
    let mut templated = config.clone();
    templated.templates_dir = Some(templates.clone());
    // Materialized defaults hash identically, so everything is cached.
    let warm = run_pipeline(&templated, RunGoal::Full).unwrap();
    assert_eq!(warm.provider_stats.provider_calls(), 0);

    let qg_path = templates.join("question_gen.txt");
    let mut text = std::fs::read_to_string(&qg_path).unwrap();
    text.push_str("\nKeep questions under thirty words.\n");
    std::fs::write(&qg_path, text).unwrap();

    let after_edit = run_pipeline(&templated, RunGoal::Full).unwrap();
    for doc in &after_edit.documents {
        assert_eq!(doc.stages["chunks"], StageStatus::Cached, "{} chunks", doc.doc_id);
        assert_eq!(doc.stages["concepts"], StageStatus::Cached, "{} concepts", doc.doc_id);
        assert_eq!(doc.stages["stems"], StageStatus::Cached, "{} stems", doc.doc_id);
        assert_eq!(doc.stages["records"], StageStatus::Processed, "{} records", doc.doc_id);
    }
    // Reranking only happens while building stems, so none may occur.
    assert_eq!(after_edit.provider_stats.rerank_calls, 0);
    assert!(after_edit.provider_stats.generate_calls > 0);
    println!("[PASS] criterion 6: incrementality (cache reuse, one-doc delta, template edit)");
}

// ---------------------------------------------------------------------
// Criterion 7: metric oracles.
// ---------------------------------------------------------------------

fn brute_recall(ranked: &[String], gold: &BTreeSet<String>, k: usize) -> f64 {
    let mut hits = 0;
    for g in gold {
        if ranked.iter().take(k).any(|r| r == g) {
            hits += 1;
        }
    }
    hits as f64 / gold.len() as f64
}

fn brute_mrr10(ranked: &[String], gold: &BTreeSet<String>) -> f64 {
    for i in 0..ranked.len().min(10) {
        if gold.contains(&ranked[i]) {
            return 1.0 / (i as f64 + 1.0);
        }
    }
    0.0
}

/// Memoized recursive LCS, independent of the iterative table in evalkit.
fn oracle_lcs(a: &[String], b: &[String]) -> usize {
    fn go(
        a: &[String],
        b: &[String],
        i: usize,
        j: usize,
        memo: &mut Vec<Vec<Option<usize>>>,
    ) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len()]; a.len()];
    go(a, b, 0, 0, &mut memo)
}

fn oracle_rouge_l(candidate: &str, reference: &str) -> f64 {
    let c: Vec<String> = candidate.split_whitespace().map(|w| w.to_lowercase()).collect();
    let r: Vec<String> = reference.split_whitespace().map(|w| w.to_lowercase()).collect();
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let lcs = oracle_lcs(&c, &r) as f64;
    let p = lcs / c.len() as f64;
    let rec = lcs / r.len() as f64;
    if p + rec == 0.0 {
        0.0
    } else {
        2.0 * p * rec / (p + rec)
    }
}

#[test]
fn criterion_07_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);

    // Recall@K and MRR@10 against brute-force references.
    for trial in 0..500 {
        let n = rng.random_range(1..=12);
        let ranked: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let mut shuffled = ranked.clone();
        for i in (1..shuffled.len()).rev() {
            let j = rng.random_range(0..=i);
            shuffled.swap(i, j);
        }
        let gold_size = rng.random_range(1..=n);
        let gold: BTreeSet<String> =
            (0..gold_size).map(|_| format!("c{}", rng.random_range(0..n * 2))).collect();
        let gold = if gold.is_empty() {
            BTreeSet::from(["c0".to_string()])
        } else {
            gold
        };
        let item = RankedRetrieval {
            query_id: format!("q{trial}"),
            ranked_chunk_ids: shuffled.clone(),
            gold_chunk_ids: gold.clone(),
        };
        let mut last = None;
        for k in [1usize, 3, 5, 10] {
            let got = recall_at_k(&item, k).unwrap();
            let want = brute_recall(&shuffled, &gold, k);
            assert!((got - want).abs() < 1e-12, "recall mismatch trial {trial} k {k}");
            if let Some(prev) = last {
                assert!(got + 1e-12 >= prev, "recall not monotone in k (trial {trial})");
            }
            last = Some(got);
        }
        let got = mrr_at_10(&item);
        let want = brute_mrr10(&shuffled, &gold);
        assert!((got - want).abs() < 1e-12, "mrr mismatch trial {trial}");
    }

    // ROUGE-L against the recursive LCS oracle. The vocabulary is plain
    // lowercase words so both tokenizations agree.
    let vocab = ["alder", "birch", "cedar", "fir", "hazel", "oak", "pine", "rowan"];
    for trial in 0..200 {
        let len_c = rng.random_range(1..=12);
        let len_r = rng.random_range(1..=12);
        let cand: Vec<&str> =
            (0..len_c).map(|_| vocab[rng.random_range(0..vocab.len())]).collect();
        let refr: Vec<&str> =
            (0..len_r).map(|_| vocab[rng.random_range(0..vocab.len())]).collect();
        let cand = cand.join(" ");
        let refr = refr.join(" ");
        let got = rouge_l(&cand, &refr);
        let want = oracle_rouge_l(&cand, &refr);
        assert!((got - want).abs() < 1e-12, "rouge mismatch trial {trial}: {cand} / {refr}");
        assert!((0.0..=1.0).contains(&got));
    }
    assert!((rouge_l("the cat", "the cat sat") - 0.8).abs() < 1e-12);
    assert_eq!(rouge_l("alder birch", "alder birch"), 1.0);
    println!("[PASS] criterion 7: metric oracles (500 rankings, 200 ROUGE pairs, cat case)");
}

// ---------------------------------------------------------------------
// Criterion 8: variant provenance audit.
// ---------------------------------------------------------------------

#[test]
fn criterion_08_variant_provenance_audit() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture_config(
        &fixture_corpus(),
        &dir.path().join("out"),
        &dir.path().join("cache"),
        7,
        2,
    );
    run_pipeline(&config, RunGoal::Full).unwrap();
    let records = read_qac(&config.out_dir.join(QAC_FILE)).unwrap();
    assert!(!records.is_empty());

    // Recover the evidence texts every record was built from: the cached
    // stems are keyed by content hash + the stems-stage digest.
    let templates = TemplateSet::load(config.templates_dir.as_deref()).unwrap();
    let providers = ProviderSet::mock(config.seed, config.providers.mock_dim.0);
    let ingest = ingest_documents(&config.corpus_root, &config.include_globs).unwrap();
    let digests = stage_digests(&config, &templates, &providers, &corpus_digest(&ingest.documents));
    let cache = StageCache::open(&config.cache_dir).unwrap();
    // (doc_id, concept_id, chunk_id) -> evidence text; extract_evidence
    // yields at most one evidence per (concept, chunk) pair.
    let mut evidence_text: BTreeMap<(String, String, String), String> = BTreeMap::new();
    for doc in &ingest.documents {
        let stems: Vec<QuestionStem> = cache
            .load(&doc.content_hash, "stems", &digests.stems)
            .expect("stems artifact present after the run");
        for stem in stems {
            for ev in stem.evidences {
                evidence_text.insert(
                    (doc.doc_id.clone(), ev.concept_id.clone(), ev.chunk_id.clone()),
                    ev.text,
                );
            }
        }
    }

    for record in &records {
        let prov = &record.contexts.provenance;
        // Irrelevant context must come from outside the evidence chunks.
        assert!(
            !record.evidence_chunk_ids.contains(&prov.irrelevant),
            "record {}: irrelevant drawn from an evidence chunk",
            record.record_id
        );
        // Partially supportive is a strict prefix of fully supportive
        // (drop-last in document order, or first sentence of a single
        // evidence).
        let fully = &record.contexts.fully_supportive;
        let partial = &record.contexts.partially_supportive;
        assert!(fully.starts_with(partial.as_str()), "record {}: partial not a prefix", record.record_id);
        assert_ne!(fully, partial, "record {}: partial not strict", record.record_id);

        // Fully supportive is exactly the newline-joined cited evidence
        // texts: match the provenance list against the string. Two cited
        // evidences from the same chunk (one per concept) can share a
        // prefix, so the walk backtracks over the concept choice.
        let candidates: Vec<Vec<&String>> = prov
            .fully_supportive
            .iter()
            .map(|chunk_id| {
                record
                    .concept_ids
                    .iter()
                    .filter_map(|cid| {
                        evidence_text.get(&(
                            record.doc_id.clone(),
                            cid.clone(),
                            chunk_id.clone(),
                        ))
                    })
                    .collect()
            })
            .collect();
        fn walk(fully: &str, offset: usize, pos: usize, candidates: &[Vec<&String>]) -> bool {
            if pos == candidates.len() {
                return offset == fully.len();
            }
            let offset = if pos > 0 {
                if fully.as_bytes().get(offset) != Some(&b'\n') {
                    return false;
                }
                offset + 1
            } else {
                offset
            };
            candidates[pos].iter().any(|text| {
                fully[offset..].starts_with(text.as_str())
                    && walk(fully, offset + text.len(), pos + 1, candidates)
            })
        }
        assert!(
            walk(fully, 0, 0, &candidates),
            "record {}: fully_supportive is not the verbatim join of its cited evidence",
            record.record_id
        );

        // Provenance chunk set equals the record's evidence chunk set.
        let prov_set: BTreeSet<&String> = prov.fully_supportive.iter().collect();
        let evidence_set: BTreeSet<&String> = record.evidence_chunk_ids.iter().collect();
        assert_eq!(prov_set, evidence_set, "record {}", record.record_id);
    }
    println!(
        "[PASS] criterion 8: variant provenance audit ({} records checked)",
        records.len()
    );
}

// ---------------------------------------------------------------------
// Criterion 9: stats conservation.
// ---------------------------------------------------------------------

#[test]
fn criterion_09_stats_conservation() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture_config(
        &fixture_corpus(),
        &dir.path().join("out"),
        &dir.path().join("cache"),
        7,
        2,
    );
    run_pipeline(&config, RunGoal::Full).unwrap();

    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(config.out_dir.join(STATS_JSON_FILE)).unwrap())
            .unwrap();
    let total = stats["total_records"].as_u64().unwrap();
    let bloom_sum: u64 =
        stats["per_bloom_counts"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    let level_sum: u64 =
        stats["per_level_counts"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    let doc_sum: u64 =
        stats["per_doc_counts"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(bloom_sum, total);
    assert_eq!(level_sum, total);
    assert_eq!(doc_sum, total);
    let fraction = stats["multi_chunk_fraction"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&fraction));

    // The text report renders the six Bloom levels in ascending cognitive
    // order.
    let text = std::fs::read_to_string(config.out_dir.join(STATS_TEXT_FILE)).unwrap();
    let positions: Vec<usize> = BloomLevel::ALL
        .iter()
        .map(|l| text.find(l.name()).unwrap_or_else(|| panic!("{} missing from report", l.name())))
        .collect();
    for pair in positions.windows(2) {
        assert!(pair[0] < pair[1], "Bloom levels out of order in stats.txt");
    }
    println!("[PASS] criterion 9: stats conservation (sums match, six Bloom levels in order)");
}

// ---------------------------------------------------------------------
// Criterion 10: recipe metadata fidelity.
// ---------------------------------------------------------------------

#[test]
fn criterion_10_recipe_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture_config(
        &fixture_corpus(),
        &dir.path().join("out"),
        &dir.path().join("cache"),
        7,
        2,
    );
    run_pipeline(&config, RunGoal::Full).unwrap();
    let recipe: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(config.out_dir.join(RECIPE_FILE)).unwrap())
            .unwrap();
    assert_eq!(recipe["temperature_tau"].as_f64().unwrap(), 0.02);
    assert_eq!(recipe["learning_rate"].as_f64().unwrap(), 1e-5);
    assert_eq!(recipe["epochs"].as_u64().unwrap(), 3);
    assert_eq!(recipe["negatives_per_sample"].as_u64().unwrap(), 2);
    println!("[PASS] criterion 10: recipe metadata (tau 0.02, lr 1e-5, 3 epochs, 2 negatives)");
}
