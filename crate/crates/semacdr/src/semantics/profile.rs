//! Parsing and validation of extraction responses, and the profile export
//! format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::taxonomy::{Taxonomy, UNKNOWN_LABEL};
use super::SemanticsError;
use crate::corpus::IndexMaps;

/// Where a profile came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Llm,
    Fallback,
}

/// Validated response content (no item identity attached yet: the item is
/// known from the request context, never trusted from the response).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileContent {
    /// Per taxonomy category (in taxonomy order): assigned labels, deduplicated
    /// and sorted by vocabulary order, always nonempty.
    pub assignments: Vec<Vec<String>>,
    pub semantic_summary: String,
}

impl ProfileContent {
    /// The all-Unknown fallback used after retries are exhausted.
    pub fn fallback(taxonomy: &Taxonomy) -> Self {
        Self {
            assignments: vec![vec![UNKNOWN_LABEL.to_string()]; taxonomy.num_categories()],
            semantic_summary: String::new(),
        }
    }

    /// Serialize in the response wire format (inverse of [`validate_profile`]).
    pub fn to_response_json(&self, taxonomy: &Taxonomy) -> String {
        let mut features = serde_json::Map::new();
        for (k, labels) in self.assignments.iter().enumerate() {
            features.insert(
                taxonomy.categories[k].name.clone(),
                serde_json::json!(labels),
            );
        }
        serde_json::json!({
            "features": features,
            "semantic_summary": self.semantic_summary,
        })
        .to_string()
    }
}

/// Per-item semantic profile over a fixed taxonomy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemSemanticProfile {
    /// Unified item index.
    pub item: usize,
    pub content: ProfileContent,
    pub provenance: Provenance,
}

/// One reason a response was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationIssue {
    ParseFailure(String),
    MissingCategory(String),
    EmptyLabelList(String),
    OutOfVocabulary { category: String, label: String },
    MissingSummary,
}

impl std::fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ValidationIssue::ParseFailure(e) => write!(f, "response is not valid JSON: {e}"),
            ValidationIssue::MissingCategory(c) => write!(f, "missing category {c:?}"),
            ValidationIssue::EmptyLabelList(c) => write!(f, "empty label list for {c:?}"),
            ValidationIssue::OutOfVocabulary { category, label } => {
                write!(f, "label {label:?} is not in the {category:?} vocabulary")
            }
            ValidationIssue::MissingSummary => write!(f, "missing or empty semantic summary"),
        }
    }
}

/// Validate a raw response against the taxonomy.
///
/// Accepts iff the text parses as a JSON object whose features block maps
/// every taxonomy category to a nonempty list of in-vocabulary labels and
/// which carries a nonempty summary string. Unknown extra fields (including
/// any echoed item id) are ignored. On rejection, all detected issues are
/// returned.
pub fn validate_profile(
    raw: &str,
    taxonomy: &Taxonomy,
) -> Result<ProfileContent, Vec<ValidationIssue>> {
    let value: serde_json::Value = match serde_json::from_str(raw) {
        Ok(v) => v,
        Err(e) => return Err(vec![ValidationIssue::ParseFailure(e.to_string())]),
    };

    let mut issues = Vec::new();
    let features = value
        .get("features")
        .or_else(|| value.get("Features"))
        .and_then(|f| f.as_object());
    let assignments = match features {
        None => {
            issues.push(ValidationIssue::ParseFailure("no features object".into()));
            Vec::new()
        }
        Some(features) => match validate_features(features, taxonomy) {
            Ok(a) => a,
            Err(mut e) => {
                issues.append(&mut e);
                Vec::new()
            }
        },
    };

    let summary = value
        .get("semantic_summary")
        .or_else(|| value.get("SemanticSummary"))
        .and_then(|s| s.as_str())
        .unwrap_or("");
    if summary.trim().is_empty() {
        issues.push(ValidationIssue::MissingSummary);
    }

    if issues.is_empty() {
        Ok(ProfileContent { assignments, semantic_summary: summary.to_string() })
    } else {
        Err(issues)
    }
}

/// Check a features object against the taxonomy; on success returns the
/// canonical assignments (deduplicated, vocabulary order).
fn validate_features(
    features: &serde_json::Map<String, serde_json::Value>,
    taxonomy: &Taxonomy,
) -> Result<Vec<Vec<String>>, Vec<ValidationIssue>> {
    let mut issues = Vec::new();
    let mut assignments = Vec::with_capacity(taxonomy.num_categories());
    for (k, cat) in taxonomy.categories.iter().enumerate() {
        let Some(raw_labels) = features.get(&cat.name).and_then(|v| v.as_array()) else {
            issues.push(ValidationIssue::MissingCategory(cat.name.clone()));
            continue;
        };
        let mut label_indices: Vec<usize> = Vec::new();
        for l in raw_labels {
            let Some(label) = l.as_str() else {
                issues.push(ValidationIssue::OutOfVocabulary {
                    category: cat.name.clone(),
                    label: l.to_string(),
                });
                continue;
            };
            match taxonomy.label_index(k, label) {
                Some(idx) => {
                    if !label_indices.contains(&idx) {
                        label_indices.push(idx);
                    }
                }
                None => issues.push(ValidationIssue::OutOfVocabulary {
                    category: cat.name.clone(),
                    label: label.to_string(),
                }),
            }
        }
        if label_indices.is_empty()
            && !issues.iter().any(|i| {
                matches!(i, ValidationIssue::OutOfVocabulary { category, .. } if *category == cat.name)
            })
        {
            issues.push(ValidationIssue::EmptyLabelList(cat.name.clone()));
        }
        label_indices.sort_unstable();
        let vocab = taxonomy.full_vocab(k);
        assignments
            .push(label_indices.into_iter().map(|i| vocab[i].to_string()).collect::<Vec<_>>());
    }
    if issues.is_empty() {
        Ok(assignments)
    } else {
        Err(issues)
    }
}

#[derive(Serialize, Deserialize)]
struct ProfileLine {
    item_id: String,
    features: serde_json::Map<String, serde_json::Value>,
    semantic_summary: String,
    provenance: Provenance,
}

/// Export profiles as JSON lines `{item_id, features, semantic_summary, provenance}`.
pub fn save_profiles(
    profiles: &[ItemSemanticProfile],
    taxonomy: &Taxonomy,
    maps: &IndexMaps,
    path: &Path,
) -> Result<(), SemanticsError> {
    let mut out = String::new();
    for p in profiles {
        let mut features = serde_json::Map::new();
        for (k, labels) in p.content.assignments.iter().enumerate() {
            features.insert(taxonomy.categories[k].name.clone(), serde_json::json!(labels));
        }
        let line = ProfileLine {
            item_id: maps.item_id_of_unified(p.item).to_string(),
            features,
            semantic_summary: p.content.semantic_summary.clone(),
            provenance: p.provenance,
        };
        out.push_str(&serde_json::to_string(&line).expect("profile serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)
        .map_err(|source| SemanticsError::Io { path: path.to_path_buf(), source })
}

/// Load a profile export, mapping item ids back to unified indices and
/// re-validating every entry against the taxonomy. Profiles are returned in
/// unified-index order and must cover every item exactly once.
pub fn load_profiles(
    path: &Path,
    taxonomy: &Taxonomy,
    maps: &IndexMaps,
) -> Result<Vec<ItemSemanticProfile>, SemanticsError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| SemanticsError::Io { path: path.to_path_buf(), source })?;
    let mut by_item: Vec<Option<ItemSemanticProfile>> = vec![None; maps.num_items()];
    for (ln, line) in text.lines().enumerate() {
        let parsed: ProfileLine = serde_json::from_str(line)
            .map_err(|e| SemanticsError::InvalidProfileFile(format!("line {}: {e}", ln + 1)))?;
        let unified = maps
            .item_index(crate::corpus::Domain::Source, &parsed.item_id)
            .map(|local| maps.unified(crate::corpus::Domain::Source, local))
            .or_else(|| {
                maps.item_index(crate::corpus::Domain::Target, &parsed.item_id)
                    .map(|local| maps.unified(crate::corpus::Domain::Target, local))
            })
            .ok_or_else(|| {
                SemanticsError::InvalidProfileFile(format!(
                    "line {}: unknown item {:?}",
                    ln + 1,
                    parsed.item_id
                ))
            })?;
        // fallback profiles legitimately carry empty summaries, so only the
        // features block is re-validated here
        let assignments = validate_features(&parsed.features, taxonomy).map_err(|issues| {
            SemanticsError::InvalidProfileFile(format!(
                "line {}: {}",
                ln + 1,
                issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ")
            ))
        })?;
        let content =
            ProfileContent { assignments, semantic_summary: parsed.semantic_summary };
        if by_item[unified].is_some() {
            return Err(SemanticsError::InvalidProfileFile(format!(
                "duplicate profile for item {:?}",
                parsed.item_id
            )));
        }
        by_item[unified] =
            Some(ItemSemanticProfile { item: unified, content, provenance: parsed.provenance });
    }
    let mut out = Vec::with_capacity(maps.num_items());
    for (unified, slot) in by_item.into_iter().enumerate() {
        match slot {
            Some(p) => out.push(p),
            None => {
                return Err(SemanticsError::InvalidProfileFile(format!(
                    "missing profile for item {:?}",
                    maps.item_id_of_unified(unified)
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::Category;

    /// Taxonomy matching the ten-category example response used below.
    fn example_taxonomy() -> Taxonomy {
        fn cat(name: &str, subs: &[&str]) -> Category {
            Category { name: name.into(), subcategories: subs.iter().map(|s| s.to_string()).collect() }
        }
        Taxonomy::new(vec![
            cat("Genre", &["Drama", "Historical", "Comedy"]),
            cat("Target Audience", &["Children", "Young Adult", "Adult"]),
            cat("Themes", &["Social Issues", "Political Intrigue", "Love"]),
            cat("Setting", &["Historical", "Urban", "Rural"]),
            cat("Tone", &["Serious", "Dark", "Lighthearted"]),
            cat("Emotional Arc", &["Stressful", "Uplifting"]),
            cat("Pace", &["Slow-Paced", "Moderate-Paced", "Fast-Paced"]),
            cat("Format/Length", &["Short", "Medium", "Long"]),
            cat("Origin", &["Original Work", "Adaptation"]),
            cat("Narrative Style", &["First Person", "Third Person Limited"]),
        ])
        .unwrap()
    }

    const EXAMPLE_RESPONSE: &str = r#"{
        "mapped_id": "708",
        "features": {
            "Genre": ["Drama", "Historical"],
            "Target Audience": ["Young Adult"],
            "Themes": ["Social Issues", "Political Intrigue"],
            "Setting": ["Historical", "Urban"],
            "Tone": ["Serious", "Dark"],
            "Emotional Arc": ["Stressful"],
            "Pace": ["Moderate-Paced"],
            "Format/Length": ["Medium"],
            "Origin": ["Original Work"],
            "Narrative Style": ["Third Person Limited"]
        },
        "semantic_summary": "This book, likely aimed at young adults, offers a serious exploration of social and political themes within a historical setting, potentially appealing to readers interested in thought-provoking, character-driven narratives."
    }"#;

    #[test]
    fn accepts_the_example_response() {
        let t = example_taxonomy();
        let content = validate_profile(EXAMPLE_RESPONSE, &t).unwrap();
        assert_eq!(content.assignments[0], vec!["Drama", "Historical"]);
        assert_eq!(content.assignments[9], vec!["Third Person Limited"]);
        assert!(content.semantic_summary.starts_with("This book"));
    }

    #[test]
    fn rejects_missing_category() {
        let t = example_taxonomy();
        let raw = EXAMPLE_RESPONSE.replace("\"Tone\"", "\"NotTone\"");
        let issues = validate_profile(&raw, &t).unwrap_err();
        assert!(issues.contains(&ValidationIssue::MissingCategory("Tone".into())));
    }

    #[test]
    fn rejects_out_of_vocabulary_label() {
        let t = example_taxonomy();
        let raw = EXAMPLE_RESPONSE.replace("\"Drama\", \"Historical\"", "\"Cyberpunk\"");
        let issues = validate_profile(&raw, &t).unwrap_err();
        assert!(issues.contains(&ValidationIssue::OutOfVocabulary {
            category: "Genre".into(),
            label: "Cyberpunk".into()
        }));
    }

    #[test]
    fn rejects_empty_label_list_and_missing_summary() {
        let t = example_taxonomy();
        let raw = EXAMPLE_RESPONSE.replace("[\"Stressful\"]", "[]");
        let issues = validate_profile(&raw, &t).unwrap_err();
        assert!(issues.contains(&ValidationIssue::EmptyLabelList("Emotional Arc".into())));

        let raw = EXAMPLE_RESPONSE.replace("semantic_summary", "no_summary_here");
        let issues = validate_profile(&raw, &t).unwrap_err();
        assert!(issues.contains(&ValidationIssue::MissingSummary));
    }

    #[test]
    fn rejects_non_json() {
        let t = example_taxonomy();
        let issues = validate_profile("sorry, as a language model", &t).unwrap_err();
        assert!(matches!(issues[0], ValidationIssue::ParseFailure(_)));
    }

    #[test]
    fn accepted_unknown_label_assignments_survive() {
        let t = example_taxonomy();
        let raw = EXAMPLE_RESPONSE.replace("\"Stressful\"", "\"Unknown\"");
        let content = validate_profile(&raw, &t).unwrap();
        assert_eq!(content.assignments[5], vec![UNKNOWN_LABEL]);
    }

    /// validate ∘ serialize is the identity on valid profiles.
    #[test]
    fn response_round_trip() {
        let t = example_taxonomy();
        let content = validate_profile(EXAMPLE_RESPONSE, &t).unwrap();
        let rendered = content.to_response_json(&t);
        let reparsed = validate_profile(&rendered, &t).unwrap();
        assert_eq!(content, reparsed);
    }

    #[test]
    fn labels_are_deduped_and_vocab_ordered() {
        let t = example_taxonomy();
        let raw = EXAMPLE_RESPONSE.replace(
            "[\"Drama\", \"Historical\"]",
            "[\"Historical\", \"Drama\", \"Historical\"]",
        );
        let content = validate_profile(&raw, &t).unwrap();
        assert_eq!(content.assignments[0], vec!["Drama", "Historical"]);
    }
}
