//! Stage 3: combination-level enumeration with caps, Bloom-typed question
//! generation with answers and reasoning traces, context curation, and
//! record validation.

mod contexts;

pub use contexts::{curate_contexts, ContextProvenance, ContextSet, CurationContext};

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::{Evidence, QuestionStem};
use crate::prompts::{bloom_definitions, TemplateSet, QUESTION_GEN, REJECTION_SENTINEL};
use crate::providers::{GenerationRequest, Generator, ProviderError};
use crate::util::{derive_seed, short_digest};

/// Revised Bloom's taxonomy levels in ascending cognitive rank.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum BloomLevel {
    Remembering,
    Understanding,
    Applying,
    Analyzing,
    Evaluating,
    Creating,
}

impl BloomLevel {
    pub const ALL: &'static [BloomLevel] = &[
        BloomLevel::Remembering,
        BloomLevel::Understanding,
        BloomLevel::Applying,
        BloomLevel::Analyzing,
        BloomLevel::Evaluating,
        BloomLevel::Creating,
    ];

    pub fn rank(self) -> u8 {
        match self {
            BloomLevel::Remembering => 1,
            BloomLevel::Understanding => 2,
            BloomLevel::Applying => 3,
            BloomLevel::Analyzing => 4,
            BloomLevel::Evaluating => 5,
            BloomLevel::Creating => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BloomLevel::Remembering => "Remembering",
            BloomLevel::Understanding => "Understanding",
            BloomLevel::Applying => "Applying",
            BloomLevel::Analyzing => "Analyzing",
            BloomLevel::Evaluating => "Evaluating",
            BloomLevel::Creating => "Creating",
        }
    }

    /// Short task framing rendered into the generation prompt.
    pub fn definition(self) -> &'static str {
        match self {
            BloomLevel::Remembering => "recall facts and specific details",
            BloomLevel::Understanding => "explain ideas in one's own words",
            BloomLevel::Applying => "use the information in a new situation",
            BloomLevel::Analyzing => "break the material apart and relate its parts",
            BloomLevel::Evaluating => "judge a claim against criteria from the material",
            BloomLevel::Creating => "combine elements into a new coherent whole",
        }
    }

    pub fn parse(s: &str) -> Option<BloomLevel> {
        let lower = s.trim().to_lowercase();
        BloomLevel::ALL
            .iter()
            .copied()
            .find(|l| l.name().to_lowercase() == lower)
    }
}

/// A set of stems jointly conditioning one generation call. `{A, B}` and
/// `{B, A}` canonicalize to the same combo.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StemCombo {
    pub combo_id: String,
    pub stems: Vec<QuestionStem>,
    pub level: usize,
}

impl StemCombo {
    fn from_stems(stems: Vec<QuestionStem>, level: usize) -> Self {
        let mut ids: Vec<&str> = stems.iter().map(|s| s.stem_id.as_str()).collect();
        ids.sort_unstable();
        StemCombo { combo_id: ids.join("+"), stems, level }
    }

    /// Cited evidence labels in prompt order (E1, E2, ...), flattened across
    /// stems.
    pub fn labeled_evidence(&self) -> Vec<(String, &Evidence)> {
        let mut out = Vec::new();
        let mut n = 0;
        for stem in &self.stems {
            for ev in &stem.evidences {
                n += 1;
                out.push((format!("E{n}"), ev));
            }
        }
        out
    }

    pub fn concept_ids(&self) -> Vec<String> {
        self.stems.iter().map(|s| s.concept.concept_id.clone()).collect()
    }
}

/// Enumerate stem combinations per level. Level 1 emits every stem uncapped;
/// level >= 2 emits all C(K, l) combinations in canonical lexicographic
/// stem-id order, seeded-shuffled, then truncated to the level's cap.
pub fn enumerate_combinations(
    stems: &[QuestionStem],
    l_max: usize,
    caps: &std::collections::BTreeMap<usize, usize>,
    seed: u64,
) -> Vec<StemCombo> {
    let mut sorted: Vec<&QuestionStem> = stems.iter().collect();
    sorted.sort_by(|a, b| a.stem_id.cmp(&b.stem_id));
    let k = sorted.len();
    let mut out = Vec::new();
    for stem in &sorted {
        out.push(StemCombo::from_stems(vec![(*stem).clone()], 1));
    }
    for level in 2..=l_max {
        if level > k {
            continue;
        }
        let mut combos = index_combinations(k, level);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("level:{level}")));
        for i in (1..combos.len()).rev() {
            let j = rng.random_range(0..=i);
            combos.swap(i, j);
        }
        let cap = caps.get(&level).copied().unwrap_or(usize::MAX);
        combos.truncate(cap);
        for combo in combos {
            let members = combo.iter().map(|&i| sorted[i].clone()).collect();
            out.push(StemCombo::from_stems(members, level));
        }
    }
    out
}

/// All C(n, r) index combinations in lexicographic order.
fn index_combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if r == 0 || r > n {
        return out;
    }
    let mut current: Vec<usize> = (0..r).collect();
    loop {
        out.push(current.clone());
        // Advance to the next combination.
        let mut i = r;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if current[i] != i + n - r {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        current[i] += 1;
        for j in i + 1..r {
            current[j] = current[j - 1] + 1;
        }
    }
}

#[derive(Debug, Error)]
pub enum QaError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("generator returned malformed JSON after {attempts} attempt(s)")]
    MalformedJson { attempts: u32 },
}

/// One cited evidence item: its prompt label plus the underlying span.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CitedEvidence {
    pub label: String,
    pub evidence: Evidence,
}

/// A parsed question draft before context curation and validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QaDraft {
    pub question: String,
    pub answer: String,
    pub reasoning: String,
    pub bloom: BloomLevel,
    pub cited: Vec<CitedEvidence>,
}

#[derive(Debug, Clone)]
pub struct QaParams {
    pub questions_per_combo: usize,
    pub bloom_targets: Vec<BloomLevel>,
    /// Total generate attempts when the response is not parseable.
    pub json_attempts: u32,
    pub max_output_tokens: u32,
    pub temperature: f32,
}

impl Default for QaParams {
    fn default() -> Self {
        Self {
            questions_per_combo: 3,
            bloom_targets: BloomLevel::ALL.to_vec(),
            json_attempts: 3,
            max_output_tokens: 2048,
            temperature: 0.2,
        }
    }
}

/// One generation call for a combo. An explicit rejection sentinel yields an
/// empty list (the combo is discarded); drafts citing unknown evidence ids
/// or carrying an unknown Bloom name are dropped individually.
pub fn generate_qa(
    combo: &StemCombo,
    generator: &dyn Generator,
    templates: &TemplateSet,
    params: &QaParams,
) -> Result<Vec<QaDraft>, QaError> {
    let labeled = combo.labeled_evidence();
    if labeled.is_empty() {
        return Ok(Vec::new());
    }
    let mut stems_block = String::new();
    for stem in &combo.stems {
        stems_block.push_str(&format!("Concept: {}\n", stem.concept.label));
        for (label, ev) in &labeled {
            if ev.concept_id == stem.concept.concept_id {
                let flat = ev.text.replace('\n', " ");
                stems_block.push_str(&format!("{label}: {flat}\n"));
            }
        }
        stems_block.push('\n');
    }
    let prompt = templates.get(QUESTION_GEN).render(&[
        ("questions_per_combo", &params.questions_per_combo.to_string()),
        ("bloom_definitions", &bloom_definitions(&params.bloom_targets)),
        ("sentinel", REJECTION_SENTINEL),
        ("stems", stems_block.trim_end()),
    ]);
    let req = GenerationRequest::json(prompt, params.max_output_tokens, params.temperature);

    let mut attempts = 0;
    let raw = loop {
        attempts += 1;
        let response = generator.generate(&req)?;
        let trimmed = response.trim();
        if trimmed == REJECTION_SENTINEL {
            return Ok(Vec::new());
        }
        match parse_draft_array(trimmed) {
            Some(array) => break array,
            None if attempts >= params.json_attempts => {
                return Err(QaError::MalformedJson { attempts });
            }
            None => continue,
        }
    };

    let mut drafts = Vec::new();
    for value in raw {
        match parse_one_draft(&value, &labeled) {
            Some(draft) => drafts.push(draft),
            None => log::debug!("dropping malformed or out-of-scope draft: {value}"),
        }
    }
    Ok(drafts)
}

fn parse_draft_array(text: &str) -> Option<Vec<serde_json::Value>> {
    if let Ok(serde_json::Value::Array(items)) = serde_json::from_str(text) {
        return Some(items);
    }
    let start = text.find('[')?;
    let end = text.rfind(']')?;
    if end <= start {
        return None;
    }
    match serde_json::from_str(&text[start..=end]) {
        Ok(serde_json::Value::Array(items)) => Some(items),
        _ => None,
    }
}

fn parse_one_draft(
    value: &serde_json::Value,
    labeled: &[(String, &Evidence)],
) -> Option<QaDraft> {
    let question = value.get("question")?.as_str()?.trim().to_string();
    let answer = value.get("answer")?.as_str()?.trim().to_string();
    let reasoning = value
        .get("reasoning")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .trim()
        .to_string();
    let bloom = BloomLevel::parse(value.get("bloom")?.as_str()?)?;
    let ids = value.get("evidence_ids")?.as_array()?;
    let mut cited = Vec::new();
    let mut seen = BTreeSet::new();
    for id in ids {
        let id = id.as_str()?.trim().to_string();
        // Citations outside the combo's evidence set invalidate the draft.
        let (label, ev) = labeled.iter().find(|(l, _)| *l == id)?;
        if seen.insert(label.clone()) {
            cited.push(CitedEvidence { label: label.clone(), evidence: (*ev).clone() });
        }
    }
    if cited.is_empty() {
        return None;
    }
    Some(QaDraft { question, answer, reasoning, bloom, cited })
}

/// The four curated context variants attached to each accepted record.
pub use contexts::sort_document_order;

/// Machine-readable rejection reasons from [`validate_record`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    EmptyQuestion,
    EmptyAnswer,
    DuplicateQuestion,
    NoEvidence,
    MissingVariant,
    DegeneratePartial,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let code = match self {
            RejectReason::EmptyQuestion => "empty_question",
            RejectReason::EmptyAnswer => "empty_answer",
            RejectReason::DuplicateQuestion => "duplicate_question",
            RejectReason::NoEvidence => "no_evidence",
            RejectReason::MissingVariant => "missing_variant",
            RejectReason::DegeneratePartial => "degenerate_partial",
        };
        f.write_str(code)
    }
}

/// A validated question-answer-context record.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QacRecord {
    pub record_id: String,
    pub doc_id: String,
    pub question: String,
    pub answer: String,
    pub reasoning: String,
    pub bloom: BloomLevel,
    pub combination_level: usize,
    pub concept_ids: Vec<String>,
    pub evidence_chunk_ids: Vec<String>,
    pub contexts: ContextSet,
}

/// Enforce record invariants and assign the stable record id. The caller
/// passes the case-folded questions already accepted for this document.
pub fn validate_record(
    draft: &QaDraft,
    contexts: &ContextSet,
    combo: &StemCombo,
    doc_id: &str,
    accepted_questions: &BTreeSet<String>,
) -> Result<QacRecord, RejectReason> {
    if draft.question.is_empty() {
        return Err(RejectReason::EmptyQuestion);
    }
    if draft.answer.is_empty() {
        return Err(RejectReason::EmptyAnswer);
    }
    if accepted_questions.contains(&draft.question.to_lowercase()) {
        return Err(RejectReason::DuplicateQuestion);
    }
    let mut evidence_chunk_ids: Vec<String> =
        draft.cited.iter().map(|c| c.evidence.chunk_id.clone()).collect();
    evidence_chunk_ids.sort_unstable();
    evidence_chunk_ids.dedup();
    if evidence_chunk_ids.is_empty() {
        return Err(RejectReason::NoEvidence);
    }
    for variant in [
        &contexts.fully_supportive,
        &contexts.partially_supportive,
        &contexts.irrelevant,
        &contexts.misleading,
    ] {
        if variant.trim().is_empty() {
            return Err(RejectReason::MissingVariant);
        }
    }
    if contexts.partially_supportive == contexts.fully_supportive {
        return Err(RejectReason::DegeneratePartial);
    }
    Ok(QacRecord {
        record_id: short_digest(&[doc_id, &combo.combo_id, &draft.question]),
        doc_id: doc_id.to_string(),
        question: draft.question.clone(),
        answer: draft.answer.clone(),
        reasoning: draft.reasoning.clone(),
        bloom: draft.bloom,
        combination_level: combo.level,
        concept_ids: combo.concept_ids(),
        evidence_chunk_ids,
        contexts: contexts.clone(),
    })
}
