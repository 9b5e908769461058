//! Content-addressed on-disk cache of raw LLM responses and their parsed
//! profiles.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::profile::ProfileContent;
use super::taxonomy::hex_string;

/// One stored extraction result. A hit returns the raw response byte-identical
/// to what was stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub item_id: String,
    pub taxonomy_hash: String,
    pub template_hash: String,
    pub raw_response: String,
    pub content: ProfileContent,
}

/// Cache keyed by (item id, taxonomy hash, prompt-template hash); entries live
/// under `root/<k[0..2]>/<k[2..]>.json`. Writes go through a temp file and
/// rename, so concurrent writers of the same key (which by construction write
/// identical values) cannot corrupt each other.
#[derive(Debug, Clone)]
pub struct SemanticCache {
    root: PathBuf,
}

impl SemanticCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn key(item_id: &str, taxonomy_hash: &str, template_hash: &str) -> String {
        let mut h = Sha256::new();
        h.update(item_id.as_bytes());
        h.update([0u8]);
        h.update(taxonomy_hash.as_bytes());
        h.update([0u8]);
        h.update(template_hash.as_bytes());
        hex_string(&h.finalize())
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{}.json", &key[2..]))
    }

    /// Fetch an entry; corrupt or mismatched files behave as a miss.
    pub fn get(&self, item_id: &str, taxonomy_hash: &str, template_hash: &str) -> Option<CacheEntry> {
        let path = self.path_for(&Self::key(item_id, taxonomy_hash, template_hash));
        let text = std::fs::read_to_string(path).ok()?;
        let entry: CacheEntry = serde_json::from_str(&text).ok()?;
        (entry.item_id == item_id
            && entry.taxonomy_hash == taxonomy_hash
            && entry.template_hash == template_hash)
            .then_some(entry)
    }

    pub fn put(&self, entry: &CacheEntry) -> std::io::Result<()> {
        let key = Self::key(&entry.item_id, &entry.taxonomy_hash, &entry.template_hash);
        let path = self.path_for(&key);
        std::fs::create_dir_all(path.parent().expect("cache paths have parents"))?;
        let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
        std::fs::write(&tmp, serde_json::to_string(entry).expect("entry serializes"))?;
        std::fs::rename(&tmp, &path)
    }

    /// Path of the entry a key maps to (used by tests to inject corruption).
    pub fn entry_path(&self, item_id: &str, taxonomy_hash: &str, template_hash: &str) -> PathBuf {
        self.path_for(&Self::key(item_id, taxonomy_hash, template_hash))
    }
}
