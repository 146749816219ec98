use std::collections::HashMap;

use super::PostTuple;
use crate::ingest::PostRecord;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TupleBuild {
    pub tuples: Vec<PostTuple>,
    /// Answers whose parent question never appeared.
    pub orphans: u64,
}

struct QuestionSide {
    id: i64,
    text: String,
    code: String,
    title: String,
    tags: Vec<String>,
    accepted: Option<i64>,
}

/// Joins answers to their questions. Posts may arrive in any order; output
/// follows question order of appearance, then answer order.
pub fn build_tuples(posts: impl IntoIterator<Item = PostRecord>) -> TupleBuild {
    let mut questions: Vec<QuestionSide> = Vec::new();
    let mut answers: HashMap<i64, Vec<PostRecord>> = HashMap::new();
    for post in posts {
        if post.is_question() {
            questions.push(QuestionSide {
                id: post.post_id,
                code: post.code(),
                text: post.text,
                title: post.title.unwrap_or_default(),
                tags: post.tags,
                accepted: post.accepted_answer_id,
            });
        } else if let Some(parent) = post.parent_id {
            answers.entry(parent).or_default().push(post);
        }
    }

    let mut build = TupleBuild::default();
    for q in &questions {
        let Some(group) = answers.remove(&q.id) else {
            continue;
        };
        for a in group {
            build.tuples.push(PostTuple {
                question_id: q.id,
                answer_id: a.post_id,
                q_text: q.text.clone(),
                q_code: q.code.clone(),
                a_code: a.code(),
                a_text: a.text,
                title: q.title.clone(),
                tags: q.tags.clone(),
                is_accepted: q.accepted == Some(a.post_id),
            });
        }
    }
    build.orphans = answers.values().map(|v| v.len() as u64).sum();
    build
}
