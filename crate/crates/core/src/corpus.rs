//! Document ingestion, token counting, sentence segmentation, and
//! overlapping token-window chunking.
//!
//! The tokenization rule is fixed and dependency-free: split on whitespace,
//! then peel leading/trailing ASCII punctuation into separate tokens. All
//! downstream token budgets (chunk windows, overlap) are defined in terms of
//! this rule, and [`count_tokens`] is the single place to swap in a subword
//! tokenizer later.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;
use walkdir::WalkDir;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus root {0} does not exist or is not a directory")]
    RootNotFound(PathBuf),
    #[error("no documents matched {patterns:?} under {root}")]
    NoDocuments { root: PathBuf, patterns: Vec<String> },
    #[error("invalid chunk parameters: chunk_overlap ({overlap}) must be < chunk_size ({chunk_size}), chunk_size must be >= 1")]
    InvalidChunkParams { chunk_size: usize, overlap: usize },
}

/// A source document with normalized text and a stable content digest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub source_path: PathBuf,
    pub text: String,
    /// Hex SHA-256 of the hash-normalized text (LF endings, per-line
    /// trailing whitespace stripped, NFC).
    pub content_hash: String,
}

/// A contiguous token window of a document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub text: String,
    /// Half-open [start, end) in document token indices.
    pub token_span: (usize, usize),
}

/// One sentence within a chunk. `span` is the half-open byte range in the
/// chunk text; it excludes surrounding whitespace.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Sentence {
    pub text: String,
    pub index: usize,
    pub span: (usize, usize),
}

/// Result of ingesting a corpus root: documents in source-path order plus
/// per-file warnings for anything that could not be read.
#[derive(Debug, Clone)]
pub struct Ingest {
    pub documents: Vec<Document>,
    pub warnings: Vec<String>,
}

fn is_token_punct(c: char) -> bool {
    c.is_ascii_punctuation()
}

/// A token's half-open byte range in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

/// Tokenize under the pipeline rule: whitespace-delimited words, with
/// leading and trailing ASCII punctuation split off as individual tokens.
/// Interior punctuation (as in "e.g" or "3.14") stays attached.
pub fn tokenize_spans(text: &str) -> Vec<TokenSpan> {
    let mut spans = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        // Skip whitespace.
        let rest = &text[i..];
        let mut chars = rest.char_indices();
        let Some((_, c)) = chars.next() else { break };
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        // Word = run of non-whitespace.
        let word_start = i;
        let mut word_end = i;
        for (off, ch) in text[word_start..].char_indices() {
            if ch.is_whitespace() {
                break;
            }
            word_end = word_start + off + ch.len_utf8();
        }
        split_word(text, word_start, word_end, &mut spans);
        i = word_end;
    }
    spans
}

fn split_word(text: &str, start: usize, end: usize, out: &mut Vec<TokenSpan>) {
    let word = &text[start..end];
    let mut lead = 0;
    for c in word.chars() {
        if is_token_punct(c) {
            lead += c.len_utf8();
        } else {
            break;
        }
    }
    let mut trail = 0;
    if lead < word.len() {
        for c in word[lead..].chars().rev() {
            if is_token_punct(c) {
                trail += c.len_utf8();
            } else {
                break;
            }
        }
    }
    // Leading punctuation, one token per char.
    let mut pos = start;
    for c in word[..lead].chars() {
        out.push(TokenSpan { start: pos, end: pos + c.len_utf8() });
        pos += c.len_utf8();
    }
    let core_end = end - trail;
    if pos < core_end {
        out.push(TokenSpan { start: pos, end: core_end });
    }
    let mut pos = core_end;
    for c in text[core_end..end].chars() {
        out.push(TokenSpan { start: pos, end: pos + c.len_utf8() });
        pos += c.len_utf8();
    }
}

/// Number of tokens under the pipeline's fixed tokenization rule.
pub fn count_tokens(text: &str) -> usize {
    tokenize_spans(text).len()
}

/// Tokens as lowercased strings; shared by the mock embedder, the mock
/// reranker, and ROUGE-L.
pub fn tokenize_lower(text: &str) -> Vec<String> {
    tokenize_spans(text)
        .iter()
        .map(|s| text[s.start..s.end].to_lowercase())
        .collect()
}

/// Normalize line endings to LF (CRLF and lone CR both become LF).
pub fn normalize_newlines(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\r' {
            if chars.peek() == Some(&'\n') {
                chars.next();
            }
            out.push('\n');
        } else {
            out.push(c);
        }
    }
    out
}

fn normalize_for_hash(text: &str) -> String {
    let lf = normalize_newlines(text);
    let stripped: Vec<&str> = lf.split('\n').map(|line| line.trim_end()).collect();
    stripped.join("\n").nfc().collect()
}

/// Hex SHA-256 of the hash-normalized text.
pub fn content_hash(text: &str) -> String {
    let normalized = normalize_for_hash(text);
    let mut hasher = Sha256::new();
    hasher.update(normalized.as_bytes());
    hex_digest(hasher)
}

pub(crate) fn hex_digest(hasher: Sha256) -> String {
    let out = hasher.finalize();
    let mut s = String::with_capacity(out.len() * 2);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Ingest every file under `root` matching one of `include_globs`.
/// Unreadable files become warnings; zero matches is a hard error.
pub fn ingest_documents(root: &Path, include_globs: &[String]) -> Result<Ingest, CorpusError> {
    if !root.is_dir() {
        return Err(CorpusError::RootNotFound(root.to_path_buf()));
    }
    let mut matched: Vec<PathBuf> = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = match entry {
            Ok(e) => e,
            Err(_) => continue,
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .unwrap_or(entry.path())
            .to_string_lossy()
            .replace('\\', "/");
        if include_globs.iter().any(|g| glob_match(g, &rel)) {
            matched.push(entry.path().to_path_buf());
        }
    }
    matched.sort();
    if matched.is_empty() {
        return Err(CorpusError::NoDocuments {
            root: root.to_path_buf(),
            patterns: include_globs.to_vec(),
        });
    }
    let mut documents = Vec::new();
    let mut warnings = Vec::new();
    for path in matched {
        let raw = match fs::read_to_string(&path) {
            Ok(s) => s,
            Err(err) => {
                warnings.push(format!("skipping unreadable file {}: {err}", path.display()));
                continue;
            }
        };
        let text = normalize_newlines(&raw);
        let doc_id = path
            .strip_prefix(root)
            .unwrap_or(&path)
            .to_string_lossy()
            .replace('\\', "/");
        let hash = content_hash(&text);
        documents.push(Document {
            doc_id,
            source_path: path,
            text,
            content_hash: hash,
        });
    }
    if documents.is_empty() {
        return Err(CorpusError::NoDocuments {
            root: root.to_path_buf(),
            patterns: include_globs.to_vec(),
        });
    }
    Ok(Ingest { documents, warnings })
}

/// Minimal glob matcher over '/'-separated relative paths. `**` matches any
/// number of segments (including none); `*` and `?` match within a segment.
pub fn glob_match(pattern: &str, path: &str) -> bool {
    let pat: Vec<&str> = pattern.split('/').collect();
    let segs: Vec<&str> = path.split('/').collect();
    match_segments(&pat, &segs)
}

fn match_segments(pat: &[&str], segs: &[&str]) -> bool {
    if pat.is_empty() {
        return segs.is_empty();
    }
    if pat[0] == "**" {
        // Zero or more path segments.
        (0..=segs.len()).any(|skip| match_segments(&pat[1..], &segs[skip..]))
    } else if segs.is_empty() {
        false
    } else if match_segment(pat[0], segs[0]) {
        match_segments(&pat[1..], &segs[1..])
    } else {
        false
    }
}

fn match_segment(pat: &str, seg: &str) -> bool {
    let p: Vec<char> = pat.chars().collect();
    let s: Vec<char> = seg.chars().collect();
    match_chars(&p, &s)
}

fn match_chars(p: &[char], s: &[char]) -> bool {
    if p.is_empty() {
        return s.is_empty();
    }
    match p[0] {
        '*' => (0..=s.len()).any(|skip| match_chars(&p[1..], &s[skip..])),
        '?' => !s.is_empty() && match_chars(&p[1..], &s[1..]),
        c => !s.is_empty() && s[0] == c && match_chars(&p[1..], &s[1..]),
    }
}

/// Overlapping token-window chunking with stride `chunk_size - overlap`.
/// Chunk text is the character-faithful document span covering its tokens.
pub fn chunk_document(
    doc: &Document,
    chunk_size: usize,
    overlap: usize,
) -> Result<Vec<Chunk>, CorpusError> {
    if chunk_size < 1 || overlap >= chunk_size {
        return Err(CorpusError::InvalidChunkParams { chunk_size, overlap });
    }
    let tokens = tokenize_spans(&doc.text);
    let total = tokens.len();
    if total == 0 {
        return Ok(Vec::new());
    }
    let stride = chunk_size - overlap;
    let mut chunks = Vec::new();
    let mut start = 0usize;
    loop {
        let is_last = start + chunk_size >= total;
        let end = if is_last { total } else { start + chunk_size };
        let byte_start = tokens[start].start;
        let byte_end = tokens[end - 1].end;
        let ordinal = chunks.len();
        chunks.push(Chunk {
            chunk_id: chunk_id(&doc.doc_id, ordinal),
            doc_id: doc.doc_id.clone(),
            ordinal,
            text: doc.text[byte_start..byte_end].to_string(),
            token_span: (start, end),
        });
        if is_last {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

pub fn chunk_id(doc_id: &str, ordinal: usize) -> String {
    format!("{doc_id}#c{ordinal:04}")
}

const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "dr.", "fig.", "mr.", "mrs.", "ms.", "no.", "vs.", "cf.", "al.",
];

/// Deterministic rule-based sentence segmentation: a sentence ends at one of
/// `. ! ?` when it is followed by whitespace and then an uppercase letter,
/// unless the terminating word is a known abbreviation. A chunk with no
/// terminator yields a single sentence.
pub fn split_sentences(chunk_text: &str) -> Vec<Sentence> {
    let mut sentences = Vec::new();
    let mut seg_start = 0usize;
    let chars: Vec<(usize, char)> = chunk_text.char_indices().collect();
    for idx in 0..chars.len() {
        let (pos, c) = chars[idx];
        if c != '.' && c != '!' && c != '?' {
            continue;
        }
        let after = pos + c.len_utf8();
        if c == '.' && is_abbreviation(chunk_text, after) {
            continue;
        }
        // Require whitespace then an uppercase letter.
        let Some(&(_, next)) = chars.get(idx + 1) else { continue };
        if !next.is_whitespace() {
            continue;
        }
        let upcoming = chunk_text[after..].chars().find(|ch| !ch.is_whitespace());
        if upcoming.is_some_and(|ch| ch.is_uppercase()) {
            push_sentence(chunk_text, seg_start, after, &mut sentences);
            seg_start = after;
        }
    }
    push_sentence(chunk_text, seg_start, chunk_text.len(), &mut sentences);
    sentences
}

fn is_abbreviation(text: &str, word_end: usize) -> bool {
    let before = &text[..word_end];
    let word_start = before
        .rfind(|c: char| c.is_whitespace())
        .map(|p| p + 1)
        .unwrap_or(0);
    let word = before[word_start..].to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

fn push_sentence(text: &str, start: usize, end: usize, out: &mut Vec<Sentence>) {
    let raw = &text[start..end];
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return;
    }
    let lead = raw.len() - raw.trim_start().len();
    let s = start + lead;
    let e = s + trimmed.len();
    out.push(Sentence {
        text: trimmed.to_string(),
        index: out.len(),
        span: (s, e),
    });
}
