//! Stack Exchange dump ingestion: streaming XML parsing plus the text/code
//! separation and normalization applied to every post body.

mod dump;
mod html;
mod normalize;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

pub use dump::{
    parse_duplicate_links, parse_posts, parse_tags, LinkReader, ParseOptions, ParseStats,
    PostReader, DUPLICATE_LINK_TYPE,
};
pub use html::{collapse_whitespace, decode_entities, split_code_text};
pub use normalize::{
    normalize_code, normalize_text, CodeNormalizer, DATETIME_TOKEN, FLOAT_TOKEN, NUM_TOKEN,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostType {
    Question,
    Answer,
}

/// A parsed question or answer with prose and code separated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostRecord {
    pub post_id: i64,
    pub post_type: PostType,
    /// Set for answers only.
    pub parent_id: Option<i64>,
    /// Set for questions only.
    pub accepted_answer_id: Option<i64>,
    pub title: Option<String>,
    pub tags: Vec<String>,
    pub text: String,
    pub code_blocks: Vec<String>,
    pub raw_html: String,
    /// Display name of the owner, or `user<id>` when only the id is known.
    #[serde(default)]
    pub author: Option<String>,
}

impl PostRecord {
    pub fn is_question(&self) -> bool {
        self.post_type == PostType::Question
    }

    /// Code blocks joined by single spaces.
    pub fn code(&self) -> String {
        self.code_blocks.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DuplicateLink {
    pub source_question_id: i64,
    pub target_question_id: i64,
}

/// Full preprocessing of a post body: split prose from `<pre><code>` blocks,
/// then normalize each side.
pub fn preprocess_html(html: &str) -> (String, Vec<String>) {
    let parts = html::extract_parts(html);
    let text = normalize_text(&parts.text);
    let code_blocks = parts
        .code_blocks
        .iter()
        .map(|c| normalize_code(c))
        .filter(|c| !c.is_empty())
        .collect();
    (text, code_blocks)
}

/// Writes records as JSON Lines.
pub fn write_jsonl<T: Serialize, W: Write>(
    items: impl IntoIterator<Item = T>,
    mut out: W,
) -> Result<u64> {
    let mut n = 0;
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

/// Lazily reads JSON Lines, skipping blank lines.
pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(
    input: R,
) -> impl Iterator<Item = Result<T>> {
    input
        .lines()
        .enumerate()
        .filter_map(|(lineno, line)| match line {
            Err(e) => Some(Err(Error::Io(e))),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(
                serde_json::from_str(&l)
                    .map_err(|e| Error::InvalidInput(format!("line {}: {e}", lineno + 1))),
            ),
        })
}
