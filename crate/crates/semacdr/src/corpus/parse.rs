//! Line-oriented ingestion of raw interaction logs and item metadata.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{CorpusError, Domain, InteractionRecord, ItemMetadata, ItemMetadataStore};

/// Result of scanning one interaction file.
#[derive(Debug)]
pub struct ParseOutcome {
    pub records: Vec<InteractionRecord>,
    pub malformed_lines: usize,
    pub total_lines: usize,
}

/// Parse a tab-separated interaction file: `user_id\titem_id\trating\ttimestamp`.
///
/// The rating is validated and discarded (all interactions count as positive
/// feedback). Malformed lines are counted and skipped; more than 10% of them
/// is a fatal format error.
pub fn parse_interactions(path: &Path, domain: Domain) -> Result<ParseOutcome, CorpusError> {
    let text = fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;

    let mut records = Vec::new();
    let mut malformed = 0usize;
    let mut total = 0usize;
    for line in text.lines() {
        total += 1;
        match parse_line(line, domain) {
            Some(rec) => records.push(rec),
            None => malformed += 1,
        }
    }

    if total > 0 && malformed * 10 > total {
        return Err(CorpusError::TooManyMalformed {
            path: path.to_path_buf(),
            malformed,
            total,
        });
    }
    Ok(ParseOutcome { records, malformed_lines: malformed, total_lines: total })
}

fn parse_line(line: &str, domain: Domain) -> Option<InteractionRecord> {
    let mut fields = line.split('\t');
    let user_id = fields.next()?;
    let item_id = fields.next()?;
    let rating = fields.next()?;
    let timestamp = fields.next()?;
    if fields.next().is_some() || user_id.is_empty() || item_id.is_empty() {
        return None;
    }
    rating.trim().parse::<f64>().ok()?;
    let timestamp: i64 = timestamp.trim().parse().ok()?;
    if timestamp < 0 {
        return None;
    }
    Some(InteractionRecord {
        user_id: user_id.to_string(),
        item_id: item_id.to_string(),
        domain,
        timestamp,
    })
}

#[derive(Deserialize)]
struct MetadataLine {
    item_id: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    category_path: String,
    #[serde(default)]
    brand: String,
    #[serde(default)]
    description: String,
}

/// Parse a JSON-lines metadata file with keys
/// `item_id`, `title`, `category_path`, `brand`, `description`.
/// Missing fields become empty strings; malformed lines are skipped.
pub fn parse_metadata(path: &Path) -> Result<ItemMetadataStore, CorpusError> {
    let text = fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    let mut store = ItemMetadataStore::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(m) = serde_json::from_str::<MetadataLine>(line) {
            store.insert(
                m.item_id,
                ItemMetadata {
                    title: m.title,
                    category_path: m.category_path,
                    brand: m.brand,
                    description: m.description,
                },
            );
        }
    }
    Ok(store)
}
