//! Lexical document search with Okapi BM25 over an in-memory inverted index.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::server::{EnvState, Extra, ToolError, ToolOutput, ToolPlugin};
use crate::text::{between_last, truncate_utf8};
use crate::trajectory::StopTokenSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("search index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("corpus line {line}: {msg}")]
    Corpus { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone)]
pub struct SearchIndex {
    docs: Vec<Document>,
    doc_lens: Vec<usize>,
    avg_len: f64,
    /// term -> (doc index, term frequency), sorted by doc index
    postings: HashMap<String, Vec<(usize, u32)>>,
    params: Bm25Params,
}

impl SearchIndex {
    /// Builds the index. Documents are ordered by `doc_id`; title and body
    /// are both indexed.
    pub fn build(mut docs: Vec<Document>, params: Bm25Params) -> Self {
        docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut doc_lens = Vec::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            let terms = tokenize(&format!("{} {}", d.title, d.body));
            doc_lens.push(terms.len());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((i, n));
            }
        }
        for list in postings.values_mut() {
            list.sort_unstable_by_key(|&(i, _)| i);
        }
        let avg_len = if docs.is_empty() { 0.0 } else { doc_lens.iter().sum::<usize>() as f64 / docs.len() as f64 };
        Self { docs, doc_lens, avg_len, postings, params }
    }

    /// Loads a line-delimited JSON corpus of `{doc_id, title, body}`.
    pub fn from_jsonl(path: &Path, params: Bm25Params) -> Result<Self, SearchError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut docs = Vec::new();
        for (i, line) in file.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let doc = serde_json::from_str(&line).map_err(|e| SearchError::Corpus { line: i + 1, msg: e.to_string() })?;
            docs.push(doc);
        }
        Ok(Self::build(docs, params))
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 score of every document, in doc order. Repeated query terms
    /// count once.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let mut scores = vec![0.0; self.docs.len()];
        let mut terms = tokenize(query);
        terms.sort();
        terms.dedup();
        let Bm25Params { k1, b } = self.params;
        for term in terms {
            let Some(list) = self.postings.get(&term) else { continue };
            let idf = self.idf(&term);
            for &(i, tf) in list {
                let tf = f64::from(tf);
                let norm = k1 * (1.0 - b + b * self.doc_lens[i] as f64 / self.avg_len);
                scores[i] += idf * tf * (k1 + 1.0) / (tf + norm);
            }
        }
        scores
    }

    /// Top `k` documents by score, ties broken by ascending `doc_id`.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<(&Document, f64)>, SearchError> {
        if k == 0 {
            return Err(SearchError::ZeroK);
        }
        if self.docs.is_empty() {
            return Err(SearchError::EmptyIndex);
        }
        let scores = self.scores(query);
        let mut order: Vec<usize> = (0..self.docs.len()).collect();
        // docs are sorted by id, so a stable sort keeps id order among ties
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        Ok(order.into_iter().take(k).map(|i| (&self.docs[i], scores[i])).collect())
    }
}

/// Formats hits as `Doc i(Title: "...") snippet` lines inside `<result>`.
pub fn format_hits(hits: &[(&Document, f64)], snippet_bytes: usize) -> String {
    let lines: Vec<String> = hits
        .iter()
        .enumerate()
        .map(|(i, (d, _))| format!("Doc {}(Title: \"{}\") {}", i + 1, d.title, truncate_utf8(&d.body, snippet_bytes)))
        .collect();
    format!("<result>\n{}\n</result>", lines.join("\n"))
}

pub fn search_execute(index: &SearchIndex, query: &str, k: usize, snippet_bytes: usize) -> Result<String, SearchError> {
    Ok(format_hits(&index.search(query, k)?, snippet_bytes))
}

pub struct SearchPlugin {
    index: Arc<SearchIndex>,
    top_k: usize,
    snippet_bytes: usize,
    stops: StopTokenSet,
}

impl SearchPlugin {
    pub fn new(index: Arc<SearchIndex>, top_k: usize, snippet_bytes: usize) -> Self {
        Self {
            index,
            top_k: top_k.max(1),
            snippet_bytes,
            stops: StopTokenSet::new("search", ["</search>"]).expect("non-empty"),
        }
    }
}

#[async_trait]
impl ToolPlugin for SearchPlugin {
    fn tool_id(&self) -> &str {
        "search"
    }

    fn stop_tokens(&self) -> &StopTokenSet {
        &self.stops
    }

    fn parse_action(&self, action_text: &str) -> Option<String> {
        between_last(action_text, "<search>", "</search>").map(|s| s.trim().to_owned())
    }

    async fn conduct_action(&self, _env: &mut EnvState, input: &str, _extra: &Extra) -> Result<ToolOutput, ToolError> {
        Ok(match search_execute(&self.index, input, self.top_k, self.snippet_bytes) {
            Ok(obs) => ToolOutput::ok(obs),
            Err(e) => ToolOutput::invalid(format!("[search error: {e}]")),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, title: &str, body: &str) -> Document {
        Document { doc_id: id.into(), title: title.into(), body: body.into() }
    }

    fn corpus() -> Vec<Document> {
        vec![
            doc("d3", "Sugar Ray Robinson", "Robinson was born Walker Smith Jr. in Ailey, Georgia."),
            doc("d1", "Nadeem Siddique", "His favorite boxer is Sugar Ray Robinson."),
            doc("d2", "Venezuela", "The Venezuelan Declaration of Independence was signed in 1811."),
        ]
    }

    /// Direct evaluation of the BM25 sum without the inverted index.
    fn brute_force(docs: &[Document], query: &str, k1: f64, b: f64) -> Vec<(String, f64)> {
        let toks: Vec<Vec<String>> = docs.iter().map(|d| tokenize(&format!("{} {}", d.title, d.body))).collect();
        let n = docs.len() as f64;
        let avg = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
        let mut q = tokenize(query);
        q.sort();
        q.dedup();
        docs.iter()
            .zip(&toks)
            .map(|(d, t)| {
                let s = q
                    .iter()
                    .map(|term| {
                        let df = toks.iter().filter(|x| x.contains(term)).count() as f64;
                        let tf = t.iter().filter(|x| *x == term).count() as f64;
                        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * t.len() as f64 / avg))
                    })
                    .sum();
                (d.doc_id.clone(), s)
            })
            .collect()
    }

    #[test]
    fn scores_match_direct_formula() {
        let idx = SearchIndex::build(corpus(), Bm25Params::default());
        for q in ["Sugar Ray Robinson birth name", "venezuela independence", "boxer", "nothing here"] {
            let mut expected = brute_force(&corpus(), q, 1.2, 0.75);
            expected.sort_by(|a, b| a.0.cmp(&b.0));
            for (got, (_, want)) in idx.scores(q).iter().zip(&expected) {
                assert!((got - want).abs() < 1e-12, "{q}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn single_matching_doc_ranks_first() {
        let idx = SearchIndex::build(corpus(), Bm25Params::default());
        let hits = idx.search("venezuela independence", 3).unwrap();
        assert_eq!(hits[0].0.doc_id, "d2");
        assert!(hits[0].1 > 0.0 && hits[1].1 == 0.0);
    }

    #[test]
    fn ties_fall_back_to_doc_id() {
        let idx = SearchIndex::build(corpus(), Bm25Params::default());
        let ids: Vec<_> = idx.search("zzz", 2).unwrap().iter().map(|(d, _)| d.doc_id.clone()).collect();
        assert_eq!(ids, ["d1", "d2"]);
    }

    #[test]
    fn k_is_clamped_to_corpus() {
        let idx = SearchIndex::build(corpus(), Bm25Params::default());
        assert_eq!(idx.search("robinson", 10).unwrap().len(), 3);
        assert!(matches!(idx.search("robinson", 0), Err(SearchError::ZeroK)));
    }

    #[test]
    fn empty_index_is_an_error() {
        let idx = SearchIndex::build(vec![], Bm25Params::default());
        assert!(matches!(idx.search("x", 1), Err(SearchError::EmptyIndex)));
    }

    #[test]
    fn observation_format() {
        let idx = SearchIndex::build(corpus(), Bm25Params::default());
        let obs = search_execute(&idx, "Who is Nadeem Siddique's favorite boxer?", 1, 200).unwrap();
        assert_eq!(obs, "<result>\nDoc 1(Title: \"Nadeem Siddique\") His favorite boxer is Sugar Ray Robinson.\n</result>");
        assert_eq!(search_execute(&idx, "q", 1, 200).unwrap(), search_execute(&idx, "q", 1, 200).unwrap());
    }

    #[test]
    fn postings_are_sorted() {
        let idx = SearchIndex::build(corpus(), Bm25Params::default());
        for list in idx.postings.values() {
            assert!(list.windows(2).all(|w| w[0].0 < w[1].0));
        }
    }

    #[test]
    fn plugin_parses_query() {
        let p = SearchPlugin::new(Arc::new(SearchIndex::build(corpus(), Bm25Params::default())), 3, 100);
        assert_eq!(
            p.parse_action("<search>venezuela independence</search>").as_deref(),
            Some("venezuela independence")
        );
        assert_eq!(p.parse_action("plain"), None);
    }
}
