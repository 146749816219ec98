//! WordPiece vocabulary training.
//!
//! Words start as characters (`c`, `##c`, `##c`, ...). The most frequent
//! adjacent pair is merged repeatedly until the vocabulary is full or no pair
//! reaches `min_frequency` occurrences. Ties break towards the pair whose
//! symbols were created first, which keeps training deterministic.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::encode::pre_tokenize;
use super::vocab::{Vocabulary, CONTINUATION, SPECIAL_TOKENS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub vocab_size: usize,
    pub min_frequency: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            vocab_size: 50_000,
            min_frequency: 5,
        }
    }
}

/// Counts pre-tokenized words, ignoring special-token literals.
pub fn count_words<I, S>(corpus: I) -> HashMap<String, u64>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, u64> = HashMap::new();
    for doc in corpus {
        for w in pre_tokenize(doc.as_ref()) {
            if !w.special {
                *counts.entry(w.text.to_string()).or_default() += 1;
            }
        }
    }
    counts
}

pub fn train_wordpiece<I, S>(corpus: I, config: TrainerConfig) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    train_from_counts(count_words(corpus), config)
}

type Pair = (u32, u32);

pub fn train_from_counts(
    counts: HashMap<String, u64>,
    config: TrainerConfig,
) -> Result<Vocabulary> {
    if config.min_frequency == 0 {
        return Err(Error::Config("min_frequency must be at least 1".into()));
    }
    if config.vocab_size <= SPECIAL_TOKENS.len() {
        return Err(Error::Config(format!(
            "vocab_size {} leaves no room beyond the {} special tokens",
            config.vocab_size,
            SPECIAL_TOKENS.len()
        )));
    }
    if counts.is_empty() {
        return Err(Error::Empty("tokenizer training corpus"));
    }

    let mut words: Vec<(String, u64)> = counts.into_iter().collect();
    words.sort_unstable();

    let alphabet: BTreeSet<String> = words
        .iter()
        .flat_map(|(w, _)| {
            w.chars().enumerate().map(|(i, c)| {
                if i == 0 {
                    c.to_string()
                } else {
                    format!("{CONTINUATION}{c}")
                }
            })
        })
        .collect();
    let needed = SPECIAL_TOKENS.len() + alphabet.len();
    if needed > config.vocab_size {
        return Err(Error::Config(format!(
            "vocab_size {} is smaller than the {} special tokens plus {} distinct character units",
            config.vocab_size,
            SPECIAL_TOKENS.len(),
            alphabet.len()
        )));
    }

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet);
    let mut ids: HashMap<String, u32> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();

    let mut symbols: Vec<Vec<u32>> = words
        .iter()
        .map(|(w, _)| {
            w.chars()
                .enumerate()
                .map(|(i, c)| {
                    let unit = if i == 0 {
                        c.to_string()
                    } else {
                        format!("{CONTINUATION}{c}")
                    };
                    ids[&unit]
                })
                .collect()
        })
        .collect();
    let freqs: Vec<u64> = words.iter().map(|(_, c)| *c).collect();

    let mut pair_counts: HashMap<Pair, u64> = HashMap::new();
    let mut occurs_in: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (wi, syms) in symbols.iter().enumerate() {
        for p in syms.windows(2) {
            let pair = (p[0], p[1]);
            *pair_counts.entry(pair).or_default() += freqs[wi];
            occurs_in.entry(pair).or_default().insert(wi);
        }
    }
    let mut heap: BinaryHeap<(u64, Reverse<Pair>)> =
        pair_counts.iter().map(|(&p, &c)| (c, Reverse(p))).collect();

    while tokens.len() < config.vocab_size {
        let Some((count, Reverse(pair))) = heap.pop() else {
            break;
        };
        if pair_counts.get(&pair).copied().unwrap_or(0) != count || count == 0 {
            continue; // stale entry
        }
        if count < config.min_frequency {
            break;
        }
        let merged = format!(
            "{}{}",
            tokens[pair.0 as usize],
            tokens[pair.1 as usize].trim_start_matches(CONTINUATION)
        );
        let new_id = match ids.get(&merged) {
            Some(&id) => id,
            None => {
                let id = tokens.len() as u32;
                ids.insert(merged.clone(), id);
                tokens.push(merged);
                id
            }
        };

        let mut affected: Vec<usize> = occurs_in
            .remove(&pair)
            .unwrap_or_default()
            .into_iter()
            .collect();
        affected.sort_unstable();
        let mut touched: HashSet<Pair> = HashSet::new();
        for wi in affected {
            let f = freqs[wi];
            let syms = &mut symbols[wi];
            for p in syms.windows(2) {
                let old = (p[0], p[1]);
                if let Some(c) = pair_counts.get_mut(&old) {
                    *c -= f;
                }
                if let Some(set) = occurs_in.get_mut(&old) {
                    set.remove(&wi);
                }
                touched.insert(old);
            }
            let mut merged_syms = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
                    merged_syms.push(new_id);
                    i += 2;
                } else {
                    merged_syms.push(syms[i]);
                    i += 1;
                }
            }
            *syms = merged_syms;
            for p in syms.windows(2) {
                let new = (p[0], p[1]);
                *pair_counts.entry(new).or_default() += f;
                occurs_in.entry(new).or_default().insert(wi);
                touched.insert(new);
            }
        }
        pair_counts.remove(&pair);
        let mut touched: Vec<Pair> = touched.into_iter().collect();
        touched.sort_unstable();
        for p in touched {
            match pair_counts.get(&p) {
                Some(&c) if c > 0 => heap.push((c, Reverse(p))),
                _ => {
                    pair_counts.remove(&p);
                }
            }
        }
    }

    Vocabulary::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_word_becomes_whole_token() {
        let v = train_wordpiece(
            ["aaaa aaaa aaaa aaaa aaaa"],
            TrainerConfig {
                vocab_size: 100,
                min_frequency: 5,
            },
        )
        .unwrap();
        assert!(v.contains("aaaa"));
    }

    #[test]
    fn rare_word_is_not_learned() {
        let mut corpus = vec!["abc"; 6];
        corpus.extend(["abd"; 2]);
        let v = train_wordpiece(
            corpus,
            TrainerConfig {
                vocab_size: 30,
                min_frequency: 5,
            },
        )
        .unwrap();
        assert!(v.contains("abc"));
        assert!(!v.contains("abd"));
        assert!(v.contains("##d"));
    }

    #[test]
    fn default_config() {
        let c = TrainerConfig::default();
        assert_eq!(c.vocab_size, 50_000);
        assert_eq!(c.min_frequency, 5);
    }

    #[test]
    fn errors() {
        let cfg = TrainerConfig {
            vocab_size: 100,
            min_frequency: 1,
        };
        assert!(matches!(
            train_wordpiece(Vec::<String>::new(), cfg),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            train_wordpiece(["   "], cfg),
            Err(Error::Empty(_))
        ));
        let small = TrainerConfig {
            vocab_size: 10,
            min_frequency: 1,
        };
        let err = train_wordpiece(["abcdef"], small).unwrap_err();
        assert!(
            err.to_string().contains("distinct character units"),
            "{err}"
        );
    }

    #[test]
    fn respects_vocab_size() {
        let corpus = ["the quick brown fox jumps over the lazy dog"; 10];
        let v = train_wordpiece(
            corpus,
            TrainerConfig {
                vocab_size: 45,
                min_frequency: 1,
            },
        )
        .unwrap();
        assert_eq!(v.len(), 45);
    }
}
