//! `qacgen`: turn a directory of domain documents into QAC training
//! datasets, with subcommands for partial stages, re-export, evaluation,
//! and config validation.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qacgen_core::config::RunConfig;
use qacgen_core::corpus::{chunk_document, ingest_documents};
use qacgen_core::evalkit::{evaluate_retrieval, rouge_report, sample_eval_split};
use qacgen_core::evidence::build_chunk_index;
use qacgen_core::export::{compute_stats, read_qac, render_stats, write_atomic};
use qacgen_core::pipeline::{
    build_providers, re_export, run_pipeline, PipelineError, RunGoal, MANIFEST_FILE, QAC_FILE,
};

#[derive(Parser)]
#[command(name = "qacgen", version, about = "Generate QAC training datasets from a text corpus")]
struct Cli {
    /// Declarative config file (TOML); flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the deterministic offline providers.
    #[arg(long, global = true)]
    mock_providers: bool,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Corpus root override.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Cache directory override.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Verbose logging.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write all output files.
    Generate,
    /// Run stage 1 only (concept extraction and fusion).
    Concepts,
    /// Run stages 1-2 (concepts plus question stems).
    Stems,
    /// Re-export output files from cached records.
    Export,
    /// Evaluate a QAC file: retrieval metrics and (with --predictions) ROUGE-L.
    Eval {
        /// QAC file to evaluate; defaults to <out_dir>/qac.jsonl.
        #[arg(long)]
        qac: Option<PathBuf>,
        /// JSONL predictions ({"record_id": ..., "answer": ...}) scored
        /// against reference answers.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Evaluate a seeded random sample of this many records.
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Print dataset statistics for a QAC file.
    Stats {
        #[arg(long)]
        qac: Option<PathBuf>,
    },
    /// Validate the effective configuration and exit.
    ValidateConfig,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "debug" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.mock_providers {
        config.providers.mode = qacgen_core::config::ProviderMode::Mock;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(corpus) = &cli.corpus {
        config.corpus_root = corpus.clone();
    }
    if let Some(cache) = &cli.cache {
        config.cache_dir = cache.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Generate => {
            let manifest = run_pipeline(&config, RunGoal::Full)?;
            report_run(&manifest);
            Ok(())
        }
        Command::Concepts => {
            let manifest = run_pipeline(&config, RunGoal::Concepts)?;
            report_run(&manifest);
            Ok(())
        }
        Command::Stems => {
            let manifest = run_pipeline(&config, RunGoal::Stems)?;
            report_run(&manifest);
            Ok(())
        }
        Command::Export => {
            let manifest = re_export(&config)?;
            report_run(&manifest);
            Ok(())
        }
        Command::Eval { qac, predictions, sample } => {
            eval_command(&config, qac.as_deref(), predictions.as_deref(), *sample)
        }
        Command::Stats { qac } => {
            let path = qac.clone().unwrap_or_else(|| config.out_dir.join(QAC_FILE));
            let records = read_qac(&path)?;
            print!("{}", render_stats(&compute_stats(&records)));
            Ok(())
        }
        Command::ValidateConfig => {
            config.validate()?;
            println!("config ok");
            Ok(())
        }
    }
}

fn report_run(manifest: &qacgen_core::pipeline::RunManifest) {
    use qacgen_core::pipeline::StageStatus;
    let processed = manifest.count_overall(StageStatus::Processed);
    let cached = manifest.count_overall(StageStatus::Cached);
    let skipped = manifest.count_overall(StageStatus::Skipped);
    let records: usize = manifest.documents.iter().map(|d| d.records).sum();
    println!(
        "documents: {processed} processed, {cached} cached, {skipped} skipped; records: {records}"
    );
    println!(
        "provider calls: {} generate, {} embed, {} rerank; cache hits: {}",
        manifest.provider_stats.generate_calls,
        manifest.provider_stats.embed_calls,
        manifest.provider_stats.rerank_calls,
        manifest.provider_stats.cache_hits
    );
    if !manifest.warnings.is_empty() {
        println!("warnings: {} (see {MANIFEST_FILE})", manifest.warnings.len());
    }
}

fn eval_command(
    config: &RunConfig,
    qac: Option<&std::path::Path>,
    predictions: Option<&std::path::Path>,
    sample: Option<usize>,
) -> Result<(), PipelineError> {
    config.validate()?;
    let qac_path = qac
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| config.out_dir.join(QAC_FILE));
    let mut records = read_qac(&qac_path)?;
    if let Some(n) = sample {
        let (eval, _) = sample_eval_split(&records, n, config.seed);
        records = eval;
    }

    // Rebuild the chunk index over the corpus; embeddings come from the
    // response cache when warm.
    let ingest = ingest_documents(&config.corpus_root, &config.include_globs)?;
    let mut chunks = Vec::new();
    for doc in &ingest.documents {
        chunks.extend(chunk_document(
            doc,
            config.chunking.chunk_size,
            config.chunking.chunk_overlap,
        )?);
    }
    let providers = build_providers(config)?;
    let index = build_chunk_index(&chunks, &providers.embedder)
        .map_err(|e| PipelineError::ProviderUnreachable(e.to_string()))?;
    let report = evaluate_retrieval(&records, &index, &providers.embedder, &[1, 5, 10])
        .map_err(|e| PipelineError::ProviderUnreachable(e.to_string()))?;

    std::fs::create_dir_all(&config.out_dir)?;
    let retrieval_body = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&config.out_dir.join("retrieval_report.json"), retrieval_body.as_bytes())?;

    let preds: BTreeMap<String, String> = match predictions {
        Some(path) => {
            let raw = std::fs::read_to_string(path)?;
            let mut map = BTreeMap::new();
            for line in raw.lines().filter(|l| !l.trim().is_empty()) {
                let v: serde_json::Value = serde_json::from_str(line).map_err(|e| {
                    PipelineError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
                })?;
                if let (Some(id), Some(answer)) =
                    (v.get("record_id").and_then(|x| x.as_str()), v.get("answer").and_then(|x| x.as_str()))
                {
                    map.insert(id.to_string(), answer.to_string());
                }
            }
            map
        }
        None => BTreeMap::new(),
    };
    let rouge = rouge_report(&records, &preds);
    let rouge_body = serde_json::to_string_pretty(&rouge).expect("report serializes");
    write_atomic(&config.out_dir.join("rouge_report.json"), rouge_body.as_bytes())?;

    println!(
        "retrieval over {} queries ({} skipped): R@1 {:.4}, R@5 {:.4}, R@10 {:.4}, MRR@10 {:.4}",
        report.n_queries,
        report.skipped_queries,
        report.recall_at.get(&1).copied().unwrap_or(0.0),
        report.recall_at.get(&5).copied().unwrap_or(0.0),
        report.recall_at.get(&10).copied().unwrap_or(0.0),
        report.mrr_at_10
    );
    if rouge.n_scored > 0 {
        println!("ROUGE-L over {} predictions: {:.4}", rouge.n_scored, rouge.mean_f1);
    } else {
        println!("ROUGE-L: no predictions supplied (report written with n_scored = 0)");
    }
    Ok(())
}
