//! Cached, retrying profile extraction and corpus-wide outlier filtering.

use std::collections::BTreeMap;
use std::time::Duration;

use super::cache::{CacheEntry, SemanticCache};
use super::client::{GenerationParams, LlmClient, LlmError, RateLimiter};
use super::profile::{validate_profile, ItemSemanticProfile, ProfileContent, Provenance};
use super::prompt::{render_prompt, template_hash};
use super::taxonomy::{Taxonomy, UNKNOWN_LABEL};
use super::SemanticsError;
use crate::corpus::{IndexMaps, ItemMetadataStore};

#[derive(Debug, Clone)]
pub struct ExtractOptions {
    /// Maximum total attempts per item before falling back.
    pub max_retries: usize,
    pub params: GenerationParams,
    /// Base backoff after a transport failure; doubles per attempt. Zero in
    /// tests.
    pub backoff: Duration,
    /// Fatal threshold on the corpus-wide fallback fraction.
    pub max_fallback_rate: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            max_retries: 3,
            params: GenerationParams::default(),
            backoff: Duration::from_millis(100),
            max_fallback_rate: 0.2,
        }
    }
}

/// Outcome of one item's extraction.
#[derive(Debug)]
pub struct ExtractOutcome {
    pub content: ProfileContent,
    pub provenance: Provenance,
    pub cache_hit: bool,
}

/// Extract one item's profile: cache first, then up to `max_retries` client
/// calls, then the all-Unknown fallback. Transport errors back off and retry;
/// they are never fatal for a single item.
pub fn extract_profile(
    client: &dyn LlmClient,
    item_id: &str,
    metadata: &ItemMetadataStore,
    taxonomy: &Taxonomy,
    cache: &SemanticCache,
    opts: &ExtractOptions,
    limiter: Option<&RateLimiter>,
) -> ExtractOutcome {
    let taxonomy_hash = taxonomy.hash();
    let tpl_hash = template_hash(taxonomy);
    if let Some(hit) = cache.get(item_id, &taxonomy_hash, &tpl_hash) {
        return ExtractOutcome { content: hit.content, provenance: Provenance::Llm, cache_hit: true };
    }

    let prompt = render_prompt(item_id, &metadata.get(item_id), taxonomy);
    for attempt in 0..opts.max_retries {
        if let Some(l) = limiter {
            l.acquire();
        }
        match client.send(&prompt, &opts.params) {
            Ok(raw) => {
                if let Ok(content) = validate_profile(&raw, taxonomy) {
                    let entry = CacheEntry {
                        item_id: item_id.to_string(),
                        taxonomy_hash,
                        template_hash: tpl_hash,
                        raw_response: raw,
                        content: content.clone(),
                    };
                    if let Err(e) = cache.put(&entry) {
                        eprintln!("warning: cache write failed for {item_id}: {e}");
                    }
                    return ExtractOutcome {
                        content,
                        provenance: Provenance::Llm,
                        cache_hit: false,
                    };
                }
            }
            Err(LlmError::Transport(_)) => {
                if !opts.backoff.is_zero() {
                    std::thread::sleep(opts.backoff * 2u32.pow(attempt as u32));
                }
            }
            Err(_) => {}
        }
    }
    ExtractOutcome {
        content: ProfileContent::fallback(taxonomy),
        provenance: Provenance::Fallback,
        cache_hit: false,
    }
}

/// Corpus-level extraction summary.
#[derive(Debug, Clone)]
pub struct ExtractionReport {
    pub items: usize,
    pub fallbacks: usize,
    pub cache_hits: usize,
    pub client_calls: usize,
}

impl ExtractionReport {
    pub fn fallback_rate(&self) -> f64 {
        if self.items == 0 {
            0.0
        } else {
            self.fallbacks as f64 / self.items as f64
        }
    }
}

/// Extract profiles for every item in unified-index order. Items are
/// processed sequentially so that retry calls stay consecutive per item.
/// A fallback rate above `opts.max_fallback_rate` is a fatal batch error.
pub fn extract_all(
    client: &dyn LlmClient,
    maps: &IndexMaps,
    metadata: &ItemMetadataStore,
    taxonomy: &Taxonomy,
    cache: &SemanticCache,
    opts: &ExtractOptions,
    limiter: Option<&RateLimiter>,
) -> Result<(Vec<ItemSemanticProfile>, ExtractionReport), SemanticsError> {
    let calls_before = client.calls();
    let mut profiles = Vec::with_capacity(maps.num_items());
    let mut fallbacks = 0usize;
    let mut cache_hits = 0usize;
    for unified in 0..maps.num_items() {
        let item_id = maps.item_id_of_unified(unified);
        let outcome = extract_profile(client, item_id, metadata, taxonomy, cache, opts, limiter);
        if outcome.provenance == Provenance::Fallback {
            fallbacks += 1;
            eprintln!("warning: extraction fell back to Unknown for item {item_id}");
        }
        if outcome.cache_hit {
            cache_hits += 1;
        }
        profiles.push(ItemSemanticProfile {
            item: unified,
            content: outcome.content,
            provenance: outcome.provenance,
        });
    }
    let report = ExtractionReport {
        items: maps.num_items(),
        fallbacks,
        cache_hits,
        client_calls: client.calls() - calls_before,
    };
    if report.items > 0 && report.fallback_rate() > opts.max_fallback_rate {
        return Err(SemanticsError::ExtractionQuality { fallbacks, total: report.items });
    }
    Ok((profiles, report))
}

/// Replace labels assigned to fewer than `min_label_frequency` items
/// corpus-wide by the reserved Unknown label. Profiles stay schema-valid;
/// the pass is idempotent (retained labels keep their counts, Unknown is
/// never remapped).
pub fn filter_outliers(
    profiles: &mut [ItemSemanticProfile],
    taxonomy: &Taxonomy,
    min_label_frequency: usize,
) {
    let k = taxonomy.num_categories();
    let mut counts: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); k];
    for p in profiles.iter() {
        for (cat, labels) in p.content.assignments.iter().enumerate() {
            for l in labels {
                *counts[cat].entry(l.as_str()).or_default() += 1;
            }
        }
    }
    let keep: Vec<BTreeMap<String, bool>> = counts
        .iter()
        .map(|m| {
            m.iter()
                .map(|(&l, &c)| (l.to_string(), c >= min_label_frequency || l == UNKNOWN_LABEL))
                .collect()
        })
        .collect();

    for p in profiles.iter_mut() {
        for (cat, labels) in p.content.assignments.iter_mut().enumerate() {
            let mut replaced: Vec<String> = Vec::with_capacity(labels.len());
            for l in labels.iter() {
                let target = if keep[cat][l.as_str()] { l.as_str() } else { UNKNOWN_LABEL };
                if !replaced.iter().any(|r| r == target) {
                    replaced.push(target.to_string());
                }
            }
            // keep vocabulary order canonical after remapping
            let vocab = taxonomy.full_vocab(cat);
            replaced.sort_by_key(|l| vocab.iter().position(|v| v == l).expect("in-vocab label"));
            *labels = replaced;
        }
    }
}
