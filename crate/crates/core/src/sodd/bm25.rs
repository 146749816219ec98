//! In-memory BM25 index used to find textually similar questions.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Lowercased alphanumeric runs.
pub fn analyze(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<i64>,
    doc_len: Vec<u32>,
    avg_len: f64,
    /// term -> (doc index, term frequency), doc indices ascending
    postings: HashMap<String, Vec<(u32, u32)>>,
}

impl Bm25Index {
    /// Indexes `(id, text)` documents. Documents without any term are left out.
    pub fn build(docs: &[(i64, String)], params: Bm25Params) -> Result<Self> {
        let analyzed: Vec<(i64, HashMap<String, u32>, u32)> = docs
            .par_iter()
            .map(|(id, text)| {
                let terms = analyze(text);
                let len = terms.len() as u32;
                let mut tf: HashMap<String, u32> = HashMap::new();
                for t in terms {
                    *tf.entry(t).or_default() += 1;
                }
                (*id, tf, len)
            })
            .filter(|(_, _, len)| *len > 0)
            .collect();
        if analyzed.is_empty() {
            return Err(Error::Empty("bm25 corpus"));
        }
        let mut index = Self {
            params,
            doc_ids: Vec::with_capacity(analyzed.len()),
            doc_len: Vec::with_capacity(analyzed.len()),
            avg_len: 0.0,
            postings: HashMap::new(),
        };
        for (doc, (id, tf, len)) in analyzed.into_iter().enumerate() {
            index.doc_ids.push(id);
            index.doc_len.push(len);
            for (term, f) in tf {
                index
                    .postings
                    .entry(term)
                    .or_default()
                    .push((doc as u32, f));
            }
        }
        for list in index.postings.values_mut() {
            list.sort_unstable();
        }
        let total: u64 = index.doc_len.iter().map(|&l| u64::from(l)).sum();
        index.avg_len = total as f64 / index.doc_ids.len() as f64;
        Ok(index)
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Score of every document matching at least one distinct query term,
    /// sorted by score descending then document id ascending.
    pub fn rank(&self, query: &str) -> Vec<(i64, f64)> {
        let mut terms = analyze(query);
        terms.sort_unstable();
        terms.dedup();
        let Bm25Params { k1, b } = self.params;
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for &(doc, tf) in list {
                let tf = f64::from(tf);
                let norm = 1.0 - b + b * f64::from(self.doc_len[doc as usize]) / self.avg_len;
                *acc.entry(doc).or_default() += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
        }
        let mut out: Vec<(i64, f64)> = acc
            .into_iter()
            .map(|(doc, s)| (self.doc_ids[doc as usize], s))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    pub fn top_k(&self, query: &str, k: usize) -> Vec<(i64, f64)> {
        let mut r = self.rank(query);
        r.truncate(k);
        r
    }

    pub fn score(&self, query: &str, doc_id: i64) -> f64 {
        self.rank(query)
            .into_iter()
            .find(|(id, _)| *id == doc_id)
            .map_or(0.0, |(_, s)| s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_doc_ranks_first() {
        let idx = Bm25Index::build(&[(7, "serde".into())], Bm25Params::default()).unwrap();
        let top = idx.top_k("serde", 5);
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].0, 7);
        assert!(top[0].1 > 0.0);
    }

    #[test]
    fn absent_term_contributes_nothing() {
        let docs = vec![(1, "alpha beta".to_string()), (2, "beta gamma".to_string())];
        let idx = Bm25Index::build(&docs, Bm25Params::default()).unwrap();
        assert!(idx.rank("zeta").is_empty());
        assert_eq!(idx.rank("alpha zeta"), idx.rank("alpha"));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(Bm25Index::build(&[], Bm25Params::default()).is_err());
        assert!(Bm25Index::build(&[(1, " ... ".into())], Bm25Params::default()).is_err());
    }

    #[test]
    fn df_bounded_by_doc_count() {
        let docs = vec![
            (1, "a a b".to_string()),
            (2, "a".to_string()),
            (3, "".to_string()),
        ];
        let idx = Bm25Index::build(&docs, Bm25Params::default()).unwrap();
        assert_eq!(idx.doc_count(), 2);
        assert_eq!(idx.doc_freq("a"), 2);
        assert!(idx.doc_freq("b") <= idx.doc_count());
    }
}
