//! The shared category schema items are classified into.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SemanticsError;

/// Reserved subcategory used for extraction fallbacks and outlier remapping.
/// It is part of every category's vocabulary but never shown in prompts.
pub const UNKNOWN_LABEL: &str = "Unknown";

/// One high-level category with its authored subcategory vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub subcategories: Vec<String>,
}

/// Ordered list of high-level categories. Taxonomies are configuration data,
/// authored offline; the default below approximates a media-style schema with
/// eight categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub categories: Vec<Category>,
}

impl Taxonomy {
    pub fn new(categories: Vec<Category>) -> Result<Self, SemanticsError> {
        let t = Self { categories };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), SemanticsError> {
        if self.categories.is_empty() {
            return Err(SemanticsError::InvalidTaxonomy("no categories".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for c in &self.categories {
            if !names.insert(&c.name) {
                return Err(SemanticsError::InvalidTaxonomy(format!(
                    "duplicate category {:?}",
                    c.name
                )));
            }
            let real: Vec<&String> =
                c.subcategories.iter().filter(|s| *s != UNKNOWN_LABEL).collect();
            if real.len() < 2 {
                return Err(SemanticsError::InvalidTaxonomy(format!(
                    "category {:?} needs at least 2 subcategories",
                    c.name
                )));
            }
            let mut subs = std::collections::BTreeSet::new();
            for s in &c.subcategories {
                if !subs.insert(s) {
                    return Err(SemanticsError::InvalidTaxonomy(format!(
                        "duplicate subcategory {s:?} in {:?}",
                        c.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    /// Authored vocabulary of a category plus the reserved Unknown label.
    pub fn full_vocab(&self, category: usize) -> Vec<&str> {
        let c = &self.categories[category];
        let mut v: Vec<&str> = c.subcategories.iter().map(String::as_str).collect();
        if !v.contains(&UNKNOWN_LABEL) {
            v.push(UNKNOWN_LABEL);
        }
        v
    }

    /// Index of a label inside `full_vocab(category)`, if present.
    pub fn label_index(&self, category: usize, label: &str) -> Option<usize> {
        self.full_vocab(category).iter().position(|&s| s == label)
    }

    /// Total number of (category, subcategory) pairs including Unknown rows;
    /// this is the required row count of the subcategory embedding table.
    pub fn total_subcategories(&self) -> usize {
        (0..self.categories.len()).map(|k| self.full_vocab(k).len()).sum()
    }

    /// Flat row index of (category, label-in-full-vocab) pairs.
    pub fn subcategory_row(&self, category: usize, label_idx: usize) -> usize {
        let offset: usize = (0..category).map(|k| self.full_vocab(k).len()).sum();
        offset + label_idx
    }

    /// Content hash over category names and vocabularies, used in cache keys.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.categories {
            h.update(c.name.as_bytes());
            h.update([0u8]);
            for s in &c.subcategories {
                h.update(s.as_bytes());
                h.update([1u8]);
            }
            h.update([2u8]);
        }
        hex_string(&h.finalize())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SemanticsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| SemanticsError::Io { path: path.to_path_buf(), source })?;
        let t: Taxonomy = serde_json::from_str(&text)
            .map_err(|e| SemanticsError::InvalidTaxonomy(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), SemanticsError> {
        let text = serde_json::to_string_pretty(self).expect("taxonomy serializes");
        std::fs::write(path, text + "\n")
            .map_err(|source| SemanticsError::Io { path: path.to_path_buf(), source })
    }

    /// The default eight-category schema.
    pub fn default_k8() -> Self {
        fn cat(name: &str, subs: &[&str]) -> Category {
            Category {
                name: name.to_string(),
                subcategories: subs.iter().map(|s| s.to_string()).collect(),
            }
        }
        Self {
            categories: vec![
                cat(
                    "Genre",
                    &[
                        "Action", "Comedy", "Drama", "Thriller", "Sci-Fi", "Romance",
                        "Historical", "Fantasy", "Mystery",
                    ],
                ),
                cat("Target Audience", &["Children", "Young Adult", "Adult", "Family"]),
                cat(
                    "Themes",
                    &[
                        "Love", "Loss", "Friendship", "Betrayal", "Revenge", "Social Issues",
                        "Political Intrigue", "Adventure", "Identity",
                    ],
                ),
                cat(
                    "Setting",
                    &["Historical", "Urban", "Rural", "Futuristic", "Fantasy World", "Contemporary"],
                ),
                cat("Tone", &["Serious", "Dark", "Lighthearted", "Humorous", "Suspenseful", "Uplifting"]),
                cat("Pace", &["Slow-Paced", "Moderate-Paced", "Fast-Paced"]),
                cat("Format/Length", &["Short", "Medium", "Long", "Series"]),
                cat(
                    "Narrative Style",
                    &[
                        "First Person", "Third Person Limited", "Third Person Omniscient",
                        "Nonlinear", "Episodic",
                    ],
                ),
            ],
        }
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
