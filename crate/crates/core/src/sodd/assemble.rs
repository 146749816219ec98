use std::collections::{BTreeSet, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bm25::{Bm25Index, Bm25Params};
use super::{SoddExample, SoddLabel};
use crate::error::Result;
use crate::ingest::{DuplicateLink, PostRecord};
use crate::sod::PAGE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoddConfig {
    pub n_random: usize,
    pub n_text: usize,
    pub n_tag: usize,
    /// Stop after this many duplicate pairs.
    pub max_pairs: Option<usize>,
}

impl Default for SoddConfig {
    fn default() -> Self {
        Self {
            n_random: 3,
            n_text: 3,
            n_tag: 3,
            max_pairs: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SoddTally {
    pub links_seen: u64,
    pub pairs_used: u64,
    /// Links whose endpoints are not both known questions.
    pub missing_endpoint: u64,
    /// Links with an endpoint already placed in the dataset.
    pub endpoint_reused: u64,
    pub short_random: u64,
    pub short_text: u64,
    pub short_tag: u64,
}

/// Jaccard overlap of two tag sets; 0 when both are empty.
pub fn tag_similarity(a: &[String], b: &[String]) -> f64 {
    let a: HashSet<&str> = a.iter().map(String::as_str).collect();
    let b: HashSet<&str> = b.iter().map(String::as_str).collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

fn search_text(q: &PostRecord) -> String {
    match &q.title {
        Some(t) => format!("{t} {}", q.text),
        None => q.text.clone(),
    }
}

fn example(first: &PostRecord, second: &PostRecord, label: SoddLabel) -> SoddExample {
    SoddExample {
        first_id: first.post_id,
        second_id: second.post_id,
        first_post: first.raw_html.clone(),
        second_post: second.raw_html.clone(),
        first_author: first.author.clone().unwrap_or_default(),
        second_author: second.author.clone().unwrap_or_default(),
        label,
        page: PAGE.to_string(),
    }
}

/// Builds duplicate-detection examples: for every usable duplicate link one
/// duplicate pair, then text-similar, tag-similar and random negatives
/// anchored on the link's source question. A question takes part in at most
/// one group.
pub fn assemble_sodd(
    links: &[DuplicateLink],
    questions: &[PostRecord],
    seed: u64,
    config: SoddConfig,
) -> Result<(Vec<SoddExample>, SoddTally)> {
    let questions: Vec<&PostRecord> = questions.iter().filter(|q| q.is_question()).collect();
    let by_id: HashMap<i64, usize> = questions
        .iter()
        .enumerate()
        .map(|(i, q)| (q.post_id, i))
        .collect();
    let docs: Vec<(i64, String)> = questions
        .iter()
        .map(|q| (q.post_id, search_text(q)))
        .collect();
    let bm25 = if config.n_text > 0 && !questions.is_empty() {
        Bm25Index::build(&docs, Bm25Params::default()).ok()
    } else {
        None
    };
    let mut by_tag: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, q) in questions.iter().enumerate() {
        for t in &q.tags {
            by_tag.entry(t.as_str()).or_default().push(i);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used: HashSet<i64> = HashSet::new();
    let mut out = Vec::new();
    let mut tally = SoddTally::default();

    for link in links {
        if config
            .max_pairs
            .is_some_and(|m| tally.pairs_used as usize >= m)
        {
            break;
        }
        tally.links_seen += 1;
        let (Some(&ai), Some(&bi)) = (
            by_id.get(&link.source_question_id),
            by_id.get(&link.target_question_id),
        ) else {
            tally.missing_endpoint += 1;
            continue;
        };
        let (anchor, dup) = (questions[ai], questions[bi]);
        if used.contains(&anchor.post_id) || used.contains(&dup.post_id) {
            tally.endpoint_reused += 1;
            continue;
        }
        used.insert(anchor.post_id);
        used.insert(dup.post_id);
        tally.pairs_used += 1;
        out.push(example(anchor, dup, SoddLabel::Duplicates));

        let mut take = |candidates: &mut dyn Iterator<Item = i64>,
                        n: usize,
                        label,
                        used: &mut HashSet<i64>| {
            let mut got = 0;
            for id in candidates {
                if got == n {
                    break;
                }
                if used.insert(id) {
                    out.push(example(anchor, questions[by_id[&id]], label));
                    got += 1;
                }
            }
            n - got
        };

        if config.n_text > 0 {
            let ranked = bm25
                .as_ref()
                .map(|b| b.rank(&search_text(anchor)))
                .unwrap_or_default();
            let mut it = ranked.into_iter().map(|(id, _)| id);
            tally.short_text +=
                take(&mut it, config.n_text, SoddLabel::TextSimilar, &mut used) as u64;
        }
        if config.n_tag > 0 {
            let candidates: BTreeSet<usize> = anchor
                .tags
                .iter()
                .filter_map(|t| by_tag.get(t.as_str()))
                .flatten()
                .copied()
                .collect();
            let mut scored: Vec<(f64, i64)> = candidates
                .into_iter()
                .map(|i| {
                    (
                        tag_similarity(&anchor.tags, &questions[i].tags),
                        questions[i].post_id,
                    )
                })
                .filter(|(s, _)| *s > 0.0)
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut it = scored.into_iter().map(|(_, id)| id);
            tally.short_tag += take(&mut it, config.n_tag, SoddLabel::TagSimilar, &mut used) as u64;
        }
        for _ in 0..config.n_random {
            match draw_unused(&questions, &used, &mut rng) {
                Some(i) => {
                    used.insert(questions[i].post_id);
                    out.push(example(anchor, questions[i], SoddLabel::Different));
                }
                None => tally.short_random += 1,
            }
        }
    }
    Ok((out, tally))
}

/// Uniform draw among questions not yet used.
fn draw_unused(
    questions: &[&PostRecord],
    used: &HashSet<i64>,
    rng: &mut ChaCha8Rng,
) -> Option<usize> {
    if questions.is_empty() {
        return None;
    }
    for _ in 0..64 {
        let i = rng.gen_range(0..questions.len());
        if !used.contains(&questions[i].post_id) {
            return Some(i);
        }
    }
    let free: Vec<usize> = (0..questions.len())
        .filter(|&i| !used.contains(&questions[i].post_id))
        .collect();
    if free.is_empty() {
        None
    } else {
        Some(free[rng.gen_range(0..free.len())])
    }
}

/// One label-4 example per question whose accepted answer is present.
pub fn emit_accepted_answers(questions: &[PostRecord], answers: &[PostRecord]) -> Vec<SoddExample> {
    let answers: HashMap<i64, &PostRecord> = answers
        .iter()
        .filter(|a| !a.is_question())
        .map(|a| (a.post_id, a))
        .collect();
    questions
        .iter()
        .filter(|q| q.is_question())
        .filter_map(|q| {
            let a = answers.get(&q.accepted_answer_id?)?;
            Some(example(q, a, SoddLabel::AcceptedAnswer))
        })
        .collect()
}
