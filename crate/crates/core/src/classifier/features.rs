use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::store::Publication;

/// Attributes fed to the classifiers, in rendering order.
pub const FEATURE_ATTRIBUTES: [&str; 10] = [
    "title",
    "authors",
    "authors_with_affil",
    "affiliations",
    "author_keywords",
    "index_keywords",
    "abstract",
    "source_title",
    "document_type",
    "publisher",
];

/// Classifier input: one `name: value` line per feature attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureText(String);

impl FeatureText {
    /// Wraps already-rendered text (synthetic corpora, cached features).
    pub fn from_rendered(text: impl Into<String>) -> Self {
        Self(text.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FeatureText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for FeatureText {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

pub fn render_features(publication: &Publication) -> FeatureText {
    let lines: Vec<String> = FEATURE_ATTRIBUTES
        .iter()
        .map(|name| {
            let value = publication.attribute(name).unwrap_or_default();
            let value = value.replace("\r\n", " ").replace(['\n', '\r'], " ");
            format!("{name}: {value}")
        })
        .collect();
    FeatureText(lines.join("\n"))
}

/// Lower-cased alphanumeric runs of length two or more, with counts.
pub fn tokenize(text: &str) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    for word in text.split(|c: char| !c.is_alphanumeric()) {
        if word.chars().count() < 2 {
            continue;
        }
        *counts.entry(word.to_lowercase()).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_publication_renders_ten_blank_lines() {
        let mut p = Publication::new("e1", "");
        p.title.clear();
        let text = render_features(&p);
        let lines: Vec<&str> = text.as_str().split('\n').collect();
        assert_eq!(lines.len(), 10);
        for (line, name) in lines.iter().zip(FEATURE_ATTRIBUTES) {
            assert_eq!(*line, format!("{name}: "));
        }
    }

    #[test]
    fn newlines_in_values_become_spaces() {
        let mut p = Publication::new("e1", "Methane\nslip\r\nstudy");
        p.publisher = Some("NRC".into());
        let text = render_features(&p);
        assert!(text.as_str().starts_with("title: Methane slip study\n"));
        assert_eq!(text, render_features(&p));
        assert!(!text.as_str().contains("eid"));
    }

    #[test]
    fn tokenizer_rules() {
        let counts = tokenize("Methane slip, methane!");
        assert_eq!(counts, BTreeMap::from([("methane".into(), 2), ("slip".into(), 1)]));
        assert!(tokenize("").is_empty());
        assert!(tokenize("a I x").is_empty());
        assert_eq!(tokenize("CO2-based H2"), BTreeMap::from([("co2".into(), 1), ("based".into(), 1), ("h2".into(), 1)]));
    }
}
