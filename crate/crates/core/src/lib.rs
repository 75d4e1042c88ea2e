//! Corpus-to-dataset pipeline for RAG adaptation.
//!
//! Turns a directory of plain-text documents into question-answer-context
//! (QAC) training datasets through a three-stage workflow:
//!
//! 1. **Concept extraction** ([`concepts`]) — chunk-level concepts are
//!    extracted with a generation provider, deduplicated, embedded, and
//!    fused into document-level concepts via seeded k-means.
//! 2. **Evidence assembly** ([`evidence`]) — each document concept drives a
//!    dense-retrieval + rerank cascade over the document's chunks, and
//!    sentence-window evidence is pulled from each hit to form question
//!    stems.
//! 3. **QAC generation** ([`qacgen`]) — stem combinations are enumerated by
//!    combination level, Bloom-typed questions are generated, and each
//!    accepted record carries four curated context variants.
//!
//! [`export`] serializes accepted records into retriever-contrastive and
//! SFT training formats, [`evalkit`] scores datasets with Recall@K, MRR@10
//! and ROUGE-L, and [`pipeline`] orchestrates everything with per-document,
//! per-stage caching so reruns over unchanged documents perform no provider
//! calls.

pub mod concepts;
pub mod config;
pub mod corpus;
pub mod evalkit;
pub mod evidence;
pub mod export;
pub mod pipeline;
pub mod prompts;
pub mod providers;
pub mod qacgen;
mod util;
pub mod vecmath;
