//! Deterministic prompt construction for feature extraction.

use sha2::{Digest, Sha256};

use super::taxonomy::{hex_string, Taxonomy, UNKNOWN_LABEL};
use crate::corpus::ItemMetadata;

/// Render the extraction prompt for one item. The item id is embedded so that
/// responses can be associated with their request (model-echoed ids are still
/// ignored on parse).
pub fn render_prompt(item_id: &str, meta: &ItemMetadata, taxonomy: &Taxonomy) -> String {
    let title_desc = if meta.description.is_empty() {
        meta.title.clone()
    } else if meta.title.is_empty() {
        meta.description.clone()
    } else {
        format!("{}; {}", meta.title, meta.description)
    };

    let mut schema = String::from("[\n");
    for c in &taxonomy.categories {
        // the reserved fallback label is never offered to the model
        let labels: Vec<String> = c
            .subcategories
            .iter()
            .filter(|s| s.as_str() != UNKNOWN_LABEL)
            .map(|s| format!("{s:?}"))
            .collect();
        schema.push_str(&format!("  {{{:?}: [{}]}},\n", c.name, labels.join(", ")));
    }
    schema.push(']');

    let mut format_block = String::from("{\n  \"features\": {\n");
    for c in &taxonomy.categories {
        format_block.push_str(&format!("    {:?}: [<list of labels>],\n", c.name));
    }
    format_block.push_str(
        "  },\n  \"semantic_summary\": \"<a single, concise sentence summarizing the item>\"\n}",
    );

    format!(
        "You are a professional cross-domain recommendation expert. I will provide you with \
titles/descriptions for items drawn from two catalog domains.\n\
\n\
Given an item with the category [{category}], brand [{brand}], and the following \
title/description: [{title_desc}].\n\
\n\
Item ID: [{item_id}]\n\
\n\
Your task is to perform two main actions based on the input text and your world knowledge:\n\
1. Extract Domain-Agnostic Features: Using the \"Classification Schema\" provided below, \
extract relevant domain-agnostic features. For EACH category in the schema, you MUST select \
at least one relevant label.\n\
2. Generate a Semantic Summary: Create a single, concise sentence that serves as a semantic \
summary. This summary should encapsulate the essence of the item and bridge commonalities \
that could appeal to users interested in items with similar characteristics, regardless of \
their domain.\n\
\n\
Classification Schema:\n\
{schema}\n\
\n\
Conversion Rules:\n\
1. Analyze the input title/description. Leverage your world knowledge.\n\
2. For EACH category in the \"Classification Schema\", you MUST select one or more labels.\n\
3. Generate the semantic summary sentence as described above.\n\
4. Output strictly in the following JSON format, including all categories:\n\
\n\
{format_block}\n",
        category = meta.category_path,
        brand = meta.brand,
    )
}

/// Extract the item id embedded by [`render_prompt`] (used by the mock client).
pub fn item_id_from_prompt(prompt: &str) -> Option<&str> {
    let start = prompt.find("Item ID: [")? + "Item ID: [".len();
    let end = prompt[start..].find(']')? + start;
    Some(&prompt[start..end])
}

/// Hash of the prompt template itself: rendering a fixed probe item captures
/// every fixed part of the template, so any template change invalidates
/// cached responses.
pub fn template_hash(taxonomy: &Taxonomy) -> String {
    let probe = ItemMetadata {
        title: "\u{1}title".into(),
        category_path: "\u{1}category".into(),
        brand: "\u{1}brand".into(),
        description: String::new(),
    };
    let rendered = render_prompt("\u{1}id", &probe, taxonomy);
    hex_string(&Sha256::digest(rendered.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> ItemMetadata {
        ItemMetadata {
            title: "The Prydain Chronicles".into(),
            category_path: "Books; Teen & Science Fiction & Fantasy".into(),
            brand: "Visit Amazon's Lloyd Alexander Page".into(),
            description: String::new(),
        }
    }

    #[test]
    fn embeds_metadata_slots_verbatim() {
        let t = Taxonomy::default_k8();
        let p = render_prompt("708", &meta(), &t);
        assert!(p.contains("[Books; Teen & Science Fiction & Fantasy]"));
        assert!(p.contains("[Visit Amazon's Lloyd Alexander Page]"));
        assert!(p.contains("[The Prydain Chronicles]"));
        assert!(p.contains("Output strictly in the following JSON format"));
    }

    #[test]
    fn schema_lists_exactly_the_taxonomy() {
        let t = Taxonomy::new(vec![
            super::super::Category {
                name: "Genre".into(),
                subcategories: vec!["Action".into(), "Drama".into()],
            },
            super::super::Category {
                name: "Target Audience".into(),
                subcategories: vec!["Children".into(), "Adult".into()],
            },
        ])
        .unwrap();
        let p = render_prompt("x", &meta(), &t);
        assert!(p.contains("{\"Genre\": [\"Action\", \"Drama\"]}"));
        assert!(p.contains("{\"Target Audience\": [\"Children\", \"Adult\"]}"));
        assert!(!p.contains("Themes"));
        assert!(!p.contains(UNKNOWN_LABEL));
    }

    #[test]
    fn rendering_is_deterministic() {
        let t = Taxonomy::default_k8();
        assert_eq!(render_prompt("a", &meta(), &t), render_prompt("a", &meta(), &t));
    }

    #[test]
    fn empty_metadata_renders_empty_slots() {
        let t = Taxonomy::default_k8();
        let p = render_prompt("a", &ItemMetadata::default(), &t);
        assert!(p.contains("the category [], brand []"));
    }

    #[test]
    fn item_id_round_trips() {
        let t = Taxonomy::default_k8();
        let p = render_prompt("item-42", &meta(), &t);
        assert_eq!(item_id_from_prompt(&p), Some("item-42"));
    }

    #[test]
    fn template_hash_tracks_taxonomy() {
        let a = template_hash(&Taxonomy::default_k8());
        let mut t = Taxonomy::default_k8();
        t.categories.pop();
        let b = template_hash(&t);
        assert_ne!(a, b);
    }
}
