//! Prompt templates with named placeholders.
//!
//! Templates are external text files; each has a built-in default that is
//! used when no template directory is configured or the file is absent.
//! The hash of the effective template text is part of the stage cache key,
//! so editing a template invalidates exactly the stages that render it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::hex_digest;

/// Sentinel the question generator is instructed to emit when no meaningful
/// question can be formed from a stem combination.
pub const REJECTION_SENTINEL: &str = "NO_MEANINGFUL_QUESTION";

pub const CONCEPT_EXTRACT: &str = "concept_extract";
pub const CLUSTER_LABEL: &str = "cluster_label";
pub const QUESTION_GEN: &str = "question_gen";
pub const MISLEADING_CONTEXT: &str = "misleading_context";

const DEFAULT_CONCEPT_EXTRACT: &str = "\
Extract up to {max_concepts} concise, non-generic key concepts from the passage below.
Each concept names a specific theme the passage develops; avoid generic labels
such as \"introduction\" or \"overview\".
Respond with a JSON array of short strings and nothing else.

PASSAGE:
{chunk_text}

JSON array:
";

const DEFAULT_CLUSTER_LABEL: &str = "\
Summarize the related concepts below into one label of at most 8 words.
Respond with a JSON object {\"label\": \"...\"} and nothing else.

CONCEPTS:
{member_concepts}

JSON object:
";

const DEFAULT_QUESTION_GEN: &str = "\
You are writing exam questions grounded strictly in the evidence below.
Evidence items are labeled E1, E2, ... and grouped under the concept they support.

Write up to {questions_per_combo} questions that are fully answerable from the
listed evidence alone. Spread the questions across different cognitive levels,
chosen from:
{bloom_definitions}

When more than one concept is present, prefer questions that connect the
concepts (Analyzing, Evaluating, Creating).

Rules:
- Every question must be answerable from the evidence alone.
- List the evidence items each question uses in \"evidence_ids\".
- If no meaningful question connects the given concepts, respond with exactly
  {sentinel} and nothing else.

Respond with a JSON array of objects with keys \"question\", \"answer\",
\"reasoning\", \"bloom\", \"evidence_ids\".

CONCEPTS AND EVIDENCE:
{stems}

JSON array:
";

const DEFAULT_MISLEADING_CONTEXT: &str = "\
Write one short passage (two or three sentences) that is topically similar to
the question below but does not answer it. Reuse the question's vocabulary and
domain, stay plausible, and do not restate the evidence facts.
Respond with a JSON object {\"passage\": \"...\"} and nothing else.

QUESTION:
{question}

EVIDENCE (do not restate these facts):
{evidence}

JSON object:
";

fn default_text(name: &str) -> Option<&'static str> {
    match name {
        CONCEPT_EXTRACT => Some(DEFAULT_CONCEPT_EXTRACT),
        CLUSTER_LABEL => Some(DEFAULT_CLUSTER_LABEL),
        QUESTION_GEN => Some(DEFAULT_QUESTION_GEN),
        MISLEADING_CONTEXT => Some(DEFAULT_MISLEADING_CONTEXT),
        _ => None,
    }
}

pub const TEMPLATE_NAMES: &[&str] =
    &[CONCEPT_EXTRACT, CLUSTER_LABEL, QUESTION_GEN, MISLEADING_CONTEXT];

/// The four effective templates for a run, each with its content hash.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, Template>,
}

#[derive(Debug, Clone)]
pub struct Template {
    pub name: String,
    pub text: String,
    pub hash: String,
}

impl Template {
    /// Substitute `{name}` placeholders. Unknown placeholders are left
    /// untouched so template typos surface in output rather than vanish.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = self.text.clone();
        for (key, value) in vars {
            out = out.replace(&format!("{{{key}}}"), value);
        }
        out
    }
}

impl TemplateSet {
    /// Load templates from `dir` (file `<name>.txt` per template), falling
    /// back to the built-in default for any missing file.
    pub fn load(dir: Option<&Path>) -> std::io::Result<Self> {
        let mut templates = BTreeMap::new();
        for name in TEMPLATE_NAMES {
            let text = match dir {
                Some(d) => {
                    let path = d.join(format!("{name}.txt"));
                    if path.is_file() {
                        fs::read_to_string(&path)?
                    } else {
                        default_text(name).expect("known template").to_string()
                    }
                }
                None => default_text(name).expect("known template").to_string(),
            };
            let mut hasher = Sha256::new();
            hasher.update(text.as_bytes());
            templates.insert(
                name.to_string(),
                Template {
                    name: name.to_string(),
                    text,
                    hash: hex_digest(hasher),
                },
            );
        }
        Ok(Self { templates })
    }

    pub fn builtin() -> Self {
        Self::load(None).expect("builtin templates load without I/O")
    }

    pub fn get(&self, name: &str) -> &Template {
        self.templates
            .get(name)
            .unwrap_or_else(|| panic!("unknown template {name}"))
    }

    /// Hash of one template, for stage cache keys.
    pub fn hash_of(&self, name: &str) -> &str {
        &self.get(name).hash
    }

    /// Write the built-in defaults into `dir` so users can start editing.
    pub fn materialize_defaults(dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for name in TEMPLATE_NAMES {
            let path = dir.join(format!("{name}.txt"));
            if !path.exists() {
                fs::write(path, default_text(name).expect("known template"))?;
            }
        }
        Ok(())
    }
}

/// The Bloom definition block rendered into the question prompt.
pub fn bloom_definitions(levels: &[crate::qacgen::BloomLevel]) -> String {
    levels
        .iter()
        .map(|l| format!("- {}: {}", l.name(), l.definition()))
        .collect::<Vec<_>>()
        .join("\n")
}
