//! TF-IDF retrieval over publication titles, keywords and abstracts.

use std::collections::{BTreeMap, HashMap};

use crate::classifier::tokenize;
use crate::store::Publication;

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub eid: String,
    pub score: f64,
    pub snippet: String,
}

#[derive(Debug, Clone, Default)]
pub struct RetrievalIndex {
    idf: HashMap<String, f64>,
    /// Unit-length sparse vectors, one per document.
    docs: Vec<(String, String, BTreeMap<String, f64>)>,
}

fn indexed_text(p: &Publication) -> String {
    [
        Some(p.title.as_str()),
        p.author_keywords.as_deref(),
        p.index_keywords.as_deref(),
        p.abstract_text.as_deref(),
    ]
    .into_iter()
    .flatten()
    .collect::<Vec<_>>()
    .join(" ")
}

fn snippet(p: &Publication) -> String {
    let mut s = format!("\"{}\"", p.title);
    if let Some(year) = p.year {
        s.push_str(&format!(" ({year})"));
    }
    if let Some(keywords) = &p.author_keywords {
        s.push_str(&format!("; keywords: {keywords}"));
    }
    s.push_str(&format!("; program: {}", p.prog));
    s
}

fn normalize(mut v: BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.values_mut().for_each(|x| *x /= norm);
    }
    v
}

impl RetrievalIndex {
    /// `tf * idf` with raw counts and `idf = ln((1 + N) / (1 + df)) + 1`.
    pub fn build(publications: &[Publication]) -> Self {
        let counts: Vec<BTreeMap<String, u32>> = publications.iter().map(|p| tokenize(&indexed_text(p))).collect();
        let mut df: HashMap<&str, usize> = HashMap::new();
        for doc in &counts {
            for term in doc.keys() {
                *df.entry(term.as_str()).or_insert(0) += 1;
            }
        }
        let n = publications.len() as f64;
        let idf: HashMap<String, f64> = df
            .into_iter()
            .map(|(term, d)| (term.to_string(), ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0))
            .collect();
        let docs = publications
            .iter()
            .zip(&counts)
            .map(|(p, doc)| {
                let v = doc
                    .iter()
                    .map(|(t, c)| (t.clone(), f64::from(*c) * idf[t]))
                    .collect();
                (p.eid.clone(), snippet(p), normalize(v))
            })
            .collect();
        Self { idf, docs }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Up to `k` documents with positive cosine similarity, best first; ties
    /// keep index order.
    pub fn query(&self, text: &str, k: usize) -> Vec<Hit> {
        let q = normalize(
            tokenize(text)
                .into_iter()
                .filter_map(|(t, c)| self.idf.get(&t).map(|w| (t, f64::from(c) * w)))
                .collect(),
        );
        if q.is_empty() {
            return Vec::new();
        }
        let mut hits: Vec<Hit> = self
            .docs
            .iter()
            .filter_map(|(eid, snippet, v)| {
                let score: f64 = q.iter().filter_map(|(t, w)| v.get(t).map(|x| x * w)).sum();
                (score > 0.0).then(|| Hit {
                    eid: eid.clone(),
                    score,
                    snippet: snippet.clone(),
                })
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score));
        hits.truncate(k);
        hits
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn publication(eid: &str, title: &str, keywords: &str) -> Publication {
        let mut p = Publication::new(eid, title);
        p.author_keywords = Some(keywords.into());
        p
    }

    #[test]
    fn empty_index_returns_nothing() {
        let index = RetrievalIndex::build(&[]);
        assert!(index.query("methane", 5).is_empty());
    }

    #[test]
    fn exact_title_ranks_first() {
        let docs = vec![
            publication("e1", "Methane slip in dual-fuel engines", "engines; methane"),
            publication("e2", "Quantum sensing with nitrogen vacancies", "sensors"),
            publication("e3", "Methane hydrate storage", "methane; storage"),
        ];
        let index = RetrievalIndex::build(&docs);
        let hits = index.query("Quantum sensing with nitrogen vacancies", 5);
        assert_eq!(hits[0].eid, "e2");
        assert_eq!(hits.len(), 1);
        let hits = index.query("methane", 1);
        assert_eq!(hits.len(), 1);
        assert!(hits[0].snippet.contains("program: No Program"));
        assert!(index.query("zzz", 5).is_empty());
    }
}
