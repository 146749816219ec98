use std::collections::HashMap;

use serde::Serialize;

use super::PostTuple;
use crate::tokenizer::{encode, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TagShare {
    pub tag: String,
    /// Percentage of tuples whose question carries the tag.
    pub percentage: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LengthStats {
    pub avg_characters: f64,
    pub avg_words: f64,
    pub avg_tokens: Option<f64>,
    pub characters: u64,
    pub words: u64,
    pub tokens: Option<u64>,
}

/// Tag shares and per-field size statistics of a tuple set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SodStats {
    pub tuples: u64,
    pub top_tags: Vec<TagShare>,
    pub top_tags_total: f64,
    /// Keyed by `QC`, `QT`, `AC`, `AT`.
    pub fields: Vec<(String, LengthStats)>,
}

impl SodStats {
    pub fn compute(tuples: &[PostTuple], vocab: Option<&Vocabulary>, top_n: usize) -> Self {
        let n = tuples.len() as u64;
        let mut tag_counts: HashMap<&str, u64> = HashMap::new();
        for t in tuples {
            for tag in &t.tags {
                *tag_counts.entry(tag.as_str()).or_default() += 1;
            }
        }
        let mut tags: Vec<(&str, u64)> = tag_counts.into_iter().collect();
        tags.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let top_tags: Vec<TagShare> = tags
            .into_iter()
            .take(top_n)
            .map(|(tag, c)| TagShare {
                tag: tag.to_string(),
                percentage: if n == 0 {
                    0.0
                } else {
                    100.0 * c as f64 / n as f64
                },
            })
            .collect();
        let top_tags_total = top_tags.iter().map(|t| t.percentage).sum();

        let field = |get: fn(&PostTuple) -> &str| {
            let mut s = LengthStats::default();
            let mut tokens = 0u64;
            for t in tuples {
                let v = get(t);
                s.characters += v.chars().count() as u64;
                s.words += v.split(' ').filter(|w| !w.is_empty()).count() as u64;
                if let Some(vocab) = vocab {
                    tokens += encode(v, vocab).len() as u64;
                }
            }
            let denom = n.max(1) as f64;
            s.avg_characters = s.characters as f64 / denom;
            s.avg_words = s.words as f64 / denom;
            if vocab.is_some() {
                s.tokens = Some(tokens);
                s.avg_tokens = Some(tokens as f64 / denom);
            }
            s
        };
        let fields = vec![
            ("QC".to_string(), field(|t| &t.q_code)),
            ("QT".to_string(), field(|t| &t.q_text)),
            ("AC".to_string(), field(|t| &t.a_code)),
            ("AT".to_string(), field(|t| &t.a_text)),
        ];
        SodStats {
            tuples: n,
            top_tags,
            top_tags_total,
            fields,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sod::test_support::tuple;

    #[test]
    fn tag_percentages_and_lengths() {
        let mut a = tuple(1, 2);
        a.tags = vec!["java".into(), "spring".into()];
        let mut b = tuple(3, 4);
        b.tags = vec!["java".into()];
        let stats = SodStats::compute(&[a, b], None, 1);
        assert_eq!(stats.top_tags.len(), 1);
        assert_eq!(stats.top_tags[0].tag, "java");
        assert_eq!(stats.top_tags[0].percentage, 100.0);
        let (name, qt) = &stats.fields[1];
        assert_eq!(name, "QT");
        // "question text 1" and "question text 3"
        assert_eq!(qt.characters, 30);
        assert_eq!(qt.avg_words, 3.0);
        assert!(qt.tokens.is_none());
    }
}
