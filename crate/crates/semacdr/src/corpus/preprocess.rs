//! Deduplication, support filtering and index-map construction.

use std::collections::{HashMap, HashSet};

use super::{CorpusError, Domain, IndexMaps, InteractionRecord};

/// Retained records (original per-domain order) plus the index maps built
/// over the surviving entities.
#[derive(Debug)]
pub struct Preprocessed {
    pub source_records: Vec<InteractionRecord>,
    pub target_records: Vec<InteractionRecord>,
    pub maps: IndexMaps,
}

impl Preprocessed {
    pub fn num_retained(&self) -> usize {
        self.source_records.len() + self.target_records.len()
    }
}

/// Apply the fixed filtering pass:
/// duplicate removal → item support filter (`count ≥ min_item`) → per-domain
/// user support filter (`count ≥ min_user`) → cross-domain user intersection.
/// Each stage counts over the previous stage's survivors; the pass is not
/// iterated to a fixed point.
pub fn preprocess(
    source: Vec<InteractionRecord>,
    target: Vec<InteractionRecord>,
    min_item: u32,
    min_user: u32,
) -> Result<Preprocessed, CorpusError> {
    if source.is_empty() {
        return Err(CorpusError::EmptyInput("source"));
    }
    if target.is_empty() {
        return Err(CorpusError::EmptyInput("target"));
    }

    let source = dedup(source);
    let target = dedup(target);

    let source = filter_items(source, min_item);
    let target = filter_items(target, min_item);

    let source = filter_users(source, min_user);
    let target = filter_users(target, min_user);

    let source_users: HashSet<String> = source.iter().map(|r| r.user_id.clone()).collect();
    let target_users: HashSet<String> = target.iter().map(|r| r.user_id.clone()).collect();
    let source: Vec<_> =
        source.into_iter().filter(|r| target_users.contains(&r.user_id)).collect();
    let target: Vec<_> =
        target.into_iter().filter(|r| source_users.contains(&r.user_id)).collect();

    if source.is_empty() || target.is_empty() {
        return Err(CorpusError::TooSparse);
    }

    let maps = build_maps(&source, &target);
    Ok(Preprocessed { source_records: source, target_records: target, maps })
}

fn dedup(records: Vec<InteractionRecord>) -> Vec<InteractionRecord> {
    let mut seen: HashSet<(String, String, Domain, i64)> = HashSet::with_capacity(records.len());
    records
        .into_iter()
        .filter(|r| seen.insert((r.user_id.clone(), r.item_id.clone(), r.domain, r.timestamp)))
        .collect()
}

fn filter_items(records: Vec<InteractionRecord>, min_item: u32) -> Vec<InteractionRecord> {
    let mut counts: HashMap<&str, u32> = HashMap::new();
    for r in &records {
        *counts.entry(r.item_id.as_str()).or_default() += 1;
    }
    let keep: HashSet<String> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_item)
        .map(|(id, _)| id.to_string())
        .collect();
    records.into_iter().filter(|r| keep.contains(&r.item_id)).collect()
}

fn filter_users(records: Vec<InteractionRecord>, min_user: u32) -> Vec<InteractionRecord> {
    let mut counts: HashMap<&str, u32> = HashMap::new();
    for r in &records {
        *counts.entry(r.user_id.as_str()).or_default() += 1;
    }
    let keep: HashSet<String> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_user)
        .map(|(id, _)| id.to_string())
        .collect();
    records.into_iter().filter(|r| keep.contains(&r.user_id)).collect()
}

/// Indices are assigned by first appearance, scanning retained source records
/// then retained target records, so reruns on identical input are
/// byte-identical.
fn build_maps(source: &[InteractionRecord], target: &[InteractionRecord]) -> IndexMaps {
    let mut users = Vec::new();
    let mut seen_users = HashSet::new();
    let mut source_items = Vec::new();
    let mut seen_source = HashSet::new();
    let mut target_items = Vec::new();
    let mut seen_target = HashSet::new();

    for r in source.iter().chain(target) {
        if seen_users.insert(r.user_id.as_str()) {
            users.push(r.user_id.clone());
        }
        match r.domain {
            Domain::Source => {
                if seen_source.insert(r.item_id.as_str()) {
                    source_items.push(r.item_id.clone());
                }
            }
            Domain::Target => {
                if seen_target.insert(r.item_id.as_str()) {
                    target_items.push(r.item_id.clone());
                }
            }
        }
    }
    IndexMaps::build(users, source_items, target_items)
}
