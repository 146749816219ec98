//! Duplicate-detection dataset construction.

mod assemble;
mod bm25;
mod split;

use serde::{Deserialize, Serialize};

pub use assemble::{assemble_sodd, emit_accepted_answers, tag_similarity, SoddConfig, SoddTally};
pub use bm25::{analyze, Bm25Index, Bm25Params};
pub use split::{split, Splits};

/// Relationship between the two questions of an example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum SoddLabel {
    Duplicates = 0,
    TextSimilar = 1,
    TagSimilar = 2,
    Different = 3,
    AcceptedAnswer = 4,
}

impl SoddLabel {
    pub fn code(self) -> u8 {
        self as u8
    }

    /// Binary duplicate target: `Some(1)` for duplicates, `Some(0)` for the
    /// similar and different classes, `None` for accepted-answer rows.
    pub fn duplicate_target(self) -> Option<u8> {
        match self {
            SoddLabel::Duplicates => Some(1),
            SoddLabel::TextSimilar | SoddLabel::TagSimilar | SoddLabel::Different => Some(0),
            SoddLabel::AcceptedAnswer => None,
        }
    }
}

impl From<SoddLabel> for u8 {
    fn from(l: SoddLabel) -> u8 {
        l.code()
    }
}

impl TryFrom<u8> for SoddLabel {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        Ok(match v {
            0 => SoddLabel::Duplicates,
            1 => SoddLabel::TextSimilar,
            2 => SoddLabel::TagSimilar,
            3 => SoddLabel::Different,
            4 => SoddLabel::AcceptedAnswer,
            _ => return Err(format!("label {v} outside 0..=4")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoddExample {
    pub first_id: i64,
    pub second_id: i64,
    pub first_post: String,
    pub second_post: String,
    pub first_author: String,
    pub second_author: String,
    pub label: SoddLabel,
    pub page: String,
}
