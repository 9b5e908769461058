//! Two-domain interaction corpus: parsing, filtering, per-user sequences and
//! leave-one-out splits.

mod io;
mod parse;
mod preprocess;
mod sequences;

pub use io::{load_bundle, save_bundle, CorpusStats, DomainStats};
pub use parse::{parse_interactions, parse_metadata, ParseOutcome};
pub use preprocess::{preprocess, Preprocessed};
pub use sequences::{build_sequences, split_leave_one_out, SplitView};

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which of the two configured domains an event belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn label(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// One timestamped user–item event. The `item_id` doubles as the key into the
/// [`ItemMetadataStore`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub domain: Domain,
    pub timestamp: i64,
}

/// Raw descriptive fields for an item; absent fields are empty strings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMetadata {
    pub title: String,
    pub category_path: String,
    pub brand: String,
    pub description: String,
}

/// Metadata keyed by raw item id. Lookups never fail: items without metadata
/// get empty fields, which the semantic module tolerates.
#[derive(Debug, Clone, Default)]
pub struct ItemMetadataStore {
    entries: BTreeMap<String, ItemMetadata>,
}

impl ItemMetadataStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, item_id: String, meta: ItemMetadata) {
        self.entries.insert(item_id, meta);
    }

    pub fn get(&self, item_id: &str) -> ItemMetadata {
        self.entries.get(item_id).cloned().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Bijective index maps over retained users and items. Source items occupy
/// unified indices `0..num_source_items`, target items follow.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexMaps {
    pub users: Vec<String>,
    pub source_items: Vec<String>,
    pub target_items: Vec<String>,
    #[serde(skip)]
    user_lookup: BTreeMap<String, usize>,
    #[serde(skip)]
    source_lookup: BTreeMap<String, usize>,
    #[serde(skip)]
    target_lookup: BTreeMap<String, usize>,
}

impl IndexMaps {
    pub fn build(users: Vec<String>, source_items: Vec<String>, target_items: Vec<String>) -> Self {
        let mut maps = Self { users, source_items, target_items, ..Default::default() };
        maps.rebuild_lookups();
        maps
    }

    /// Restore the reverse lookups after deserialization.
    pub fn rebuild_lookups(&mut self) {
        self.user_lookup = self.users.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        self.source_lookup =
            self.source_items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        self.target_lookup =
            self.target_items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_source_items(&self) -> usize {
        self.source_items.len()
    }

    pub fn num_target_items(&self) -> usize {
        self.target_items.len()
    }

    pub fn num_items(&self) -> usize {
        self.source_items.len() + self.target_items.len()
    }

    pub fn user_index(&self, user_id: &str) -> Option<usize> {
        self.user_lookup.get(user_id).copied()
    }

    pub fn item_index(&self, domain: Domain, item_id: &str) -> Option<usize> {
        match domain {
            Domain::Source => self.source_lookup.get(item_id).copied(),
            Domain::Target => self.target_lookup.get(item_id).copied(),
        }
    }

    /// Domain-local index → unified index.
    pub fn unified(&self, domain: Domain, local: usize) -> usize {
        match domain {
            Domain::Source => local,
            Domain::Target => self.source_items.len() + local,
        }
    }

    /// Unified index → (domain, domain-local index).
    pub fn domain_of(&self, unified: usize) -> (Domain, usize) {
        if unified < self.source_items.len() {
            (Domain::Source, unified)
        } else {
            (Domain::Target, unified - self.source_items.len())
        }
    }

    pub fn item_id_of_unified(&self, unified: usize) -> &str {
        let (domain, local) = self.domain_of(unified);
        match domain {
            Domain::Source => &self.source_items[local],
            Domain::Target => &self.target_items[local],
        }
    }

    /// All unified indices belonging to one domain.
    pub fn domain_range(&self, domain: Domain) -> std::ops::Range<usize> {
        match domain {
            Domain::Source => 0..self.source_items.len(),
            Domain::Target => self.source_items.len()..self.num_items(),
        }
    }
}

/// One event in a per-domain sequence: unified item index plus timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqEvent {
    pub item: usize,
    pub timestamp: i64,
}

/// One event of the chronologically merged two-domain sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixedEvent {
    pub item: usize,
    pub domain: Domain,
    /// Position of this event inside its domain's sequence.
    pub domain_pos: usize,
}

/// Per-user chronological sequences. `mixed` is the stable timestamp merge of
/// `source` and `target` (source first on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct UserSequenceBundle {
    pub user: usize,
    pub source: Vec<SeqEvent>,
    pub target: Vec<SeqEvent>,
    pub mixed: Vec<MixedEvent>,
}

impl UserSequenceBundle {
    pub fn n_source(&self) -> usize {
        self.source.len()
    }

    pub fn n_target(&self) -> usize {
        self.target.len()
    }

    /// Mixed-sequence position of each target event.
    pub fn target_positions_in_mixed(&self) -> Vec<usize> {
        self.mixed
            .iter()
            .enumerate()
            .filter(|(_, e)| e.domain == Domain::Target)
            .map(|(p, _)| p)
            .collect()
    }
}

/// Fully preprocessed corpus: index maps plus sequence bundles (ascending by
/// user index; users whose target history is too short for a split are
/// absent and counted in `excluded_users`).
#[derive(Debug, Clone)]
pub struct Corpus {
    pub maps: IndexMaps,
    pub bundles: Vec<UserSequenceBundle>,
    pub excluded_users: usize,
    pub min_item: u32,
    pub min_user: u32,
}

impl Corpus {
    pub fn bundle_for_user(&self, user: usize) -> Option<&UserSequenceBundle> {
        self.bundles.binary_search_by_key(&user, |b| b.user).ok().map(|i| &self.bundles[i])
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {malformed} of {total} lines malformed (more than 10%)")]
    TooManyMalformed { path: PathBuf, malformed: usize, total: usize },
    #[error("no {0} interaction records provided")]
    EmptyInput(&'static str),
    #[error("corpus too sparse: no users survive filtering")]
    TooSparse,
    #[error("corpus bundle at {path} is invalid: {reason}")]
    InvalidBundle { path: PathBuf, reason: String },
}
