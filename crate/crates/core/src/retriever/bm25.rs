use std::collections::HashMap;

use super::query::RetrievalQuery;
use super::{rank, RetrievedSet};
use crate::bank::ExampleBank;
use crate::error::Result;

pub const K1: f64 = 1.5;
pub const B: f64 = 0.75;

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase().split_whitespace().map(str::to_string).collect()
}

/// IDF with +1 smoothing: ln((N − n + 0.5) / (n + 0.5) + 1).
pub fn idf(total_docs: usize, doc_freq: usize) -> f64 {
    let (n, df) = (total_docs as f64, doc_freq as f64);
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

pub fn term_score(tf: f64, idf: f64, doc_len: f64, avg_doc_len: f64) -> f64 {
    let norm = 1.0 - B + B * doc_len / avg_doc_len;
    idf * tf * (K1 + 1.0) / (tf + K1 * norm)
}

/// Okapi BM25 statistics over the examples' rendered texts. Collection
/// statistics (N, document frequencies, average length) cover the whole bank;
/// query filters only remove candidates.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    ids: Vec<String>,
    term_freqs: Vec<HashMap<String, u32>>,
    doc_lens: Vec<usize>,
    doc_freq: HashMap<String, usize>,
    avg_doc_len: f64,
}

impl Bm25Index {
    pub fn build(bank: &ExampleBank) -> Self {
        let mut term_freqs = Vec::with_capacity(bank.len());
        let mut doc_lens = Vec::with_capacity(bank.len());
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for e in bank.examples() {
            let tokens = tokenize(&e.rendered_text);
            doc_lens.push(tokens.len());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for t in tf.keys() {
                *doc_freq.entry(t.clone()).or_default() += 1;
            }
            term_freqs.push(tf);
        }
        let total: usize = doc_lens.iter().sum();
        let avg_doc_len = if doc_lens.is_empty() {
            0.0
        } else {
            total as f64 / doc_lens.len() as f64
        };
        Bm25Index {
            ids: bank.examples().iter().map(|e| e.id.clone()).collect(),
            term_freqs,
            doc_lens,
            doc_freq,
            avg_doc_len,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Sum over the distinct query terms of the per-term score.
    pub fn score(&self, doc: usize, query_terms: &[String]) -> f64 {
        let tf = &self.term_freqs[doc];
        let len = self.doc_lens[doc] as f64;
        query_terms
            .iter()
            .filter_map(|t| {
                let f = *tf.get(t)? as f64;
                let df = self.doc_freq.get(t).copied().unwrap_or(0);
                Some(term_score(f, idf(self.len(), df), len, self.avg_doc_len))
            })
            .sum()
    }
}

fn distinct_terms(text: &str) -> Vec<String> {
    let mut terms = tokenize(text);
    terms.sort();
    terms.dedup();
    terms
}

pub fn bm25_retrieve(
    index: &Bm25Index,
    bank: &ExampleBank,
    query: &RetrievalQuery,
    k: usize,
) -> Result<RetrievedSet> {
    let terms = distinct_terms(&query.text());
    let candidates = bank
        .examples()
        .iter()
        .enumerate()
        .filter(|(_, e)| query.admits(e))
        .map(|(i, e)| (index.score(i, &terms), e.id.as_str()))
        .collect();
    rank(candidates, k, query)
}
