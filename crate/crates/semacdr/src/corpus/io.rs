//! Versioned on-disk corpus bundle: index maps, sequences and split tables as
//! JSON-lines, plus a statistics table.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{split_leave_one_out, Corpus, CorpusError, Domain, SeqEvent, UserSequenceBundle};

const FORMAT: &str = "semacdr-corpus";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    min_item: u32,
    min_user: u32,
    excluded_users: usize,
    users: usize,
    source_items: usize,
    target_items: usize,
}

#[derive(Serialize, Deserialize)]
struct UserLine {
    index: usize,
    user_id: String,
}

#[derive(Serialize, Deserialize)]
struct ItemLine {
    unified: usize,
    domain: Domain,
    local: usize,
    item_id: String,
}

#[derive(Serialize, Deserialize)]
struct SequenceLine {
    user: usize,
    source: Vec<(usize, i64)>,
    target: Vec<(usize, i64)>,
}

#[derive(Serialize, Deserialize)]
struct SplitLine {
    user: usize,
    train: Vec<usize>,
    valid: usize,
    test: usize,
}

/// Per-domain corpus statistics (the usual dataset-table columns).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainStats {
    pub domain: String,
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub avg_len: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub domains: Vec<DomainStats>,
    pub excluded_users: usize,
}

impl CorpusStats {
    pub fn of(corpus: &Corpus) -> Self {
        let users = corpus.bundles.len();
        let mut domains = Vec::new();
        for domain in [Domain::Source, Domain::Target] {
            let interactions: usize = corpus
                .bundles
                .iter()
                .map(|b| match domain {
                    Domain::Source => b.n_source(),
                    Domain::Target => b.n_target(),
                })
                .sum();
            let items = match domain {
                Domain::Source => corpus.maps.num_source_items(),
                Domain::Target => corpus.maps.num_target_items(),
            };
            domains.push(DomainStats {
                domain: domain.label().to_string(),
                users,
                items,
                interactions,
                avg_len: if users == 0 { 0.0 } else { interactions as f64 / users as f64 },
            });
        }
        Self { domains, excluded_users: corpus.excluded_users }
    }

    /// Aligned human-readable table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>8} {:>8} {:>14} {:>10}\n",
            "Dataset", "Users", "Items", "Interactions", "Avg. Len."
        ));
        for d in &self.domains {
            out.push_str(&format!(
                "{:<10} {:>8} {:>8} {:>14} {:>10.2}\n",
                d.domain, d.users, d.items, d.interactions, d.avg_len
            ));
        }
        out
    }
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<(), CorpusError> {
    let path = dir.join(name);
    let mut f = fs::File::create(&path).map_err(|source| CorpusError::Io { path: path.clone(), source })?;
    f.write_all(content.as_bytes()).map_err(|source| CorpusError::Io { path, source })
}

/// Persist a corpus bundle directory (creates it if needed).
pub fn save_bundle(corpus: &Corpus, dir: &Path) -> Result<(), CorpusError> {
    fs::create_dir_all(dir).map_err(|source| CorpusError::Io { path: dir.to_path_buf(), source })?;

    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        min_item: corpus.min_item,
        min_user: corpus.min_user,
        excluded_users: corpus.excluded_users,
        users: corpus.maps.num_users(),
        source_items: corpus.maps.num_source_items(),
        target_items: corpus.maps.num_target_items(),
    };
    write_file(dir, "manifest.json", &format!("{}\n", serde_json::to_string_pretty(&manifest).unwrap()))?;

    let mut users = String::new();
    for (index, user_id) in corpus.maps.users.iter().enumerate() {
        users.push_str(&serde_json::to_string(&UserLine { index, user_id: user_id.clone() }).unwrap());
        users.push('\n');
    }
    write_file(dir, "users.jsonl", &users)?;

    let mut items = String::new();
    for unified in 0..corpus.maps.num_items() {
        let (domain, local) = corpus.maps.domain_of(unified);
        let line = ItemLine {
            unified,
            domain,
            local,
            item_id: corpus.maps.item_id_of_unified(unified).to_string(),
        };
        items.push_str(&serde_json::to_string(&line).unwrap());
        items.push('\n');
    }
    write_file(dir, "items.jsonl", &items)?;

    let mut sequences = String::new();
    let mut splits = String::new();
    for b in &corpus.bundles {
        let line = SequenceLine {
            user: b.user,
            source: b.source.iter().map(|e| (e.item, e.timestamp)).collect(),
            target: b.target.iter().map(|e| (e.item, e.timestamp)).collect(),
        };
        sequences.push_str(&serde_json::to_string(&line).unwrap());
        sequences.push('\n');

        let split = split_leave_one_out(b);
        let line = SplitLine {
            user: b.user,
            train: split.train.iter().map(|e| e.item).collect(),
            valid: split.valid,
            test: split.test,
        };
        splits.push_str(&serde_json::to_string(&line).unwrap());
        splits.push('\n');
    }
    write_file(dir, "sequences.jsonl", &sequences)?;
    write_file(dir, "splits.jsonl", &splits)?;

    let stats = CorpusStats::of(corpus);
    write_file(dir, "stats.json", &format!("{}\n", serde_json::to_string_pretty(&stats).unwrap()))?;
    write_file(dir, "stats.txt", &stats.table())?;
    Ok(())
}

fn read_file(dir: &Path, name: &str) -> Result<String, CorpusError> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|source| CorpusError::Io { path, source })
}

fn invalid(dir: &Path, reason: impl Into<String>) -> CorpusError {
    CorpusError::InvalidBundle { path: dir.to_path_buf(), reason: reason.into() }
}

/// Load a corpus bundle, rebuilding mixed sequences and verifying the stored
/// split table against the sequences.
pub fn load_bundle(dir: &Path) -> Result<Corpus, CorpusError> {
    let manifest: Manifest = serde_json::from_str(&read_file(dir, "manifest.json")?)
        .map_err(|e| invalid(dir, format!("manifest: {e}")))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(invalid(dir, format!("unsupported format {}/{}", manifest.format, manifest.version)));
    }

    let mut users = vec![String::new(); manifest.users];
    for line in read_file(dir, "users.jsonl")?.lines() {
        let u: UserLine = serde_json::from_str(line).map_err(|e| invalid(dir, format!("users: {e}")))?;
        if u.index >= users.len() {
            return Err(invalid(dir, format!("user index {} out of range", u.index)));
        }
        users[u.index] = u.user_id;
    }

    let mut source_items = vec![String::new(); manifest.source_items];
    let mut target_items = vec![String::new(); manifest.target_items];
    for line in read_file(dir, "items.jsonl")?.lines() {
        let it: ItemLine = serde_json::from_str(line).map_err(|e| invalid(dir, format!("items: {e}")))?;
        let slot = match it.domain {
            Domain::Source => source_items.get_mut(it.local),
            Domain::Target => target_items.get_mut(it.local),
        };
        match slot {
            Some(s) => *s = it.item_id,
            None => return Err(invalid(dir, format!("item local index {} out of range", it.local))),
        }
    }
    let maps = super::IndexMaps::build(users, source_items, target_items);

    let mut bundles = Vec::new();
    for line in read_file(dir, "sequences.jsonl")?.lines() {
        let s: SequenceLine =
            serde_json::from_str(line).map_err(|e| invalid(dir, format!("sequences: {e}")))?;
        let source: Vec<SeqEvent> =
            s.source.iter().map(|&(item, timestamp)| SeqEvent { item, timestamp }).collect();
        let target: Vec<SeqEvent> =
            s.target.iter().map(|&(item, timestamp)| SeqEvent { item, timestamp }).collect();
        if target.len() < 3 {
            return Err(invalid(dir, format!("user {} has target history < 3", s.user)));
        }
        let mixed = super::sequences::merge_stable(&source, &target);
        bundles.push(UserSequenceBundle { user: s.user, source, target, mixed });
    }
    bundles.sort_by_key(|b| b.user);

    // verify stored splits against the derived ones
    for (line, bundle) in read_file(dir, "splits.jsonl")?.lines().zip(&bundles) {
        let s: SplitLine = serde_json::from_str(line).map_err(|e| invalid(dir, format!("splits: {e}")))?;
        let derived = split_leave_one_out(bundle);
        let train: Vec<usize> = derived.train.iter().map(|e| e.item).collect();
        if s.user != bundle.user || s.train != train || s.valid != derived.valid || s.test != derived.test {
            return Err(invalid(dir, format!("split table mismatch for user {}", bundle.user)));
        }
    }

    Ok(Corpus {
        maps,
        bundles,
        excluded_users: manifest.excluded_users,
        min_item: manifest.min_item,
        min_user: manifest.min_user,
    })
}
