//! Precomputed question embeddings, exact flat search and duplicate lookup.

mod http;
mod index;

use serde::{Deserialize, Serialize};

use crate::duptower::{DupTower, QuestionTokens};
use crate::error::Result;
use crate::ingest::PostRecord;
use crate::tokenizer::Vocabulary;

pub use http::{router, serve, BuildRequest, QueryRequest, ServiceState};
pub use index::{EmbeddingIndex, Hit, INDEX_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub question_id: i64,
    pub similarity: f64,
    pub duplicate_probability: f64,
}

/// Candidates sorted by duplicate probability, highest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub candidates: Vec<Candidate>,
}

/// Embeds every question with content; questions with neither text nor
/// code are skipped with a warning.
pub fn build_index<'q>(
    questions: impl IntoIterator<Item = &'q PostRecord>,
    tower: &DupTower,
    vocab: &Vocabulary,
    normalized: bool,
) -> Result<EmbeddingIndex> {
    let mut ids = Vec::new();
    let mut tokens = Vec::new();
    for q in questions.into_iter().filter(|q| q.is_question()) {
        match QuestionTokens::from_post(q, vocab) {
            Ok(t) => {
                ids.push(q.post_id);
                tokens.push(t);
            }
            Err(e) => log::warn!("skipping question {}: {e}", q.post_id),
        }
    }
    let mut index = EmbeddingIndex::new(tower.dim(), normalized);
    let vectors = tower.embed_many(&tokens, tower.config.batch_size)?;
    for (id, v) in ids.into_iter().zip(vectors) {
        index.insert(id, &v)?;
    }
    Ok(index)
}

/// Preprocess, embed, retrieve `k` nearest questions and re-score each pair
/// with the tower head.
pub fn query_duplicates(
    index: &EmbeddingIndex,
    question_html: &str,
    k: usize,
    tower: &DupTower,
    vocab: &Vocabulary,
) -> Result<QueryResult> {
    let tokens = QuestionTokens::from_html(question_html, vocab)?;
    if k == 0 || index.is_empty() {
        return Ok(QueryResult {
            candidates: Vec::new(),
        });
    }
    let query = tower.embed_tokens(&tokens)?;
    let mut candidates = Vec::new();
    for hit in index.search(&query, k)? {
        let p = tower.classify_pair(&query, index.vector_of(hit.position))?;
        candidates.push(Candidate {
            question_id: hit.question_id,
            similarity: hit.similarity,
            duplicate_probability: p.duplicate as f64,
        });
    }
    candidates.sort_by(|a, b| b.duplicate_probability.total_cmp(&a.duplicate_probability));
    Ok(QueryResult { candidates })
}
