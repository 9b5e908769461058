//! LLM-derived item semantics: prompt construction, response validation,
//! cached extraction with retries, outlier filtering, and text encoding of
//! semantic summaries.

mod cache;
mod client;
mod encoder;
mod extract;
mod profile;
mod prompt;
mod taxonomy;

pub use cache::{CacheEntry, SemanticCache};
pub use client::{GenerationParams, HttpChatClient, LlmClient, LlmError, MockLlmClient, RateLimiter};
pub use encoder::{RemoteEncoder, TextEncoder, TrigramEncoder};
pub use extract::{
    extract_all, extract_profile, filter_outliers, ExtractOptions, ExtractionReport,
};
pub use profile::{
    load_profiles, save_profiles, validate_profile, ItemSemanticProfile, ProfileContent,
    Provenance, ValidationIssue,
};
pub use prompt::{render_prompt, template_hash};
pub use taxonomy::{Category, Taxonomy, UNKNOWN_LABEL};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SemanticsError {
    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),
    #[error("extraction quality too low: {fallbacks} of {total} items fell back to Unknown")]
    ExtractionQuality { fallbacks: usize, total: usize },
    #[error("cannot read {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("profile file is invalid: {0}")]
    InvalidProfileFile(String),
    #[error("text encoder failed: {0}")]
    Encoder(String),
}
