//! Pre-training dataset construction: question/answer tuples, the six input
//! pair types, in-batch negatives, the CSV export and binary training records.

mod export;
mod negatives;
mod records;
mod stats;
mod tuples;

use serde::{Deserialize, Serialize};

pub use export::{export_sod, ExportSummary, DEFAULT_SHARDS, PAGE};
pub use negatives::{
    replacement_indices, sample_negatives, sample_negatives_with, NegativeBatches,
    NEGATIVE_BATCH_SIZE,
};
pub use records::{
    build_input, read_records, tokenize_pair, write_records, ModelInput, RecordReader,
    RecordWriter, TokenizedPair, RECORD_MAGIC, RECORD_VERSION,
};
pub use stats::{LengthStats, SodStats, TagShare};
pub use tuples::{build_tuples, TupleBuild};

/// One question/answer edge with prose and code of both posts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostTuple {
    pub question_id: i64,
    pub answer_id: i64,
    pub q_text: String,
    pub q_code: String,
    pub a_text: String,
    pub a_code: String,
    pub title: String,
    pub tags: Vec<String>,
    pub is_accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairType {
    #[serde(rename = "AC_AT")]
    AcAt,
    #[serde(rename = "QC_AC")]
    QcAc,
    #[serde(rename = "QC_AT")]
    QcAt,
    #[serde(rename = "QC_QT")]
    QcQt,
    #[serde(rename = "QT_AC")]
    QtAc,
    #[serde(rename = "QT_AT")]
    QtAt,
}

impl PairType {
    pub const ALL: [PairType; 6] = [
        PairType::AcAt,
        PairType::QcAc,
        PairType::QcAt,
        PairType::QcQt,
        PairType::QtAc,
        PairType::QtAt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PairType::AcAt => "AC_AT",
            PairType::QcAc => "QC_AC",
            PairType::QcAt => "QC_AT",
            PairType::QcQt => "QC_QT",
            PairType::QtAc => "QT_AC",
            PairType::QtAt => "QT_AT",
        }
    }

    pub fn code(self) -> u8 {
        PairType::ALL.iter().position(|&p| p == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        PairType::ALL.get(code as usize).copied()
    }

    /// Pairs spanning a question and one of its answers.
    pub fn is_question_answer(self) -> bool {
        matches!(
            self,
            PairType::QcAc | PairType::QcAt | PairType::QtAc | PairType::QtAt
        )
    }

    /// Pairs whose elements come from one post.
    pub fn is_same_post(self) -> bool {
        !self.is_question_answer()
    }

    /// `(qa, sp)` labels of a pair of this type.
    pub fn labels(self, negative: bool) -> (u8, u8) {
        match (negative, self.is_question_answer()) {
            (true, _) => (0, 0),
            (false, true) => (1, 0),
            (false, false) => (0, 1),
        }
    }

    fn select(self, t: &PostTuple) -> (&str, &str) {
        match self {
            PairType::AcAt => (&t.a_code, &t.a_text),
            PairType::QcAc => (&t.q_code, &t.a_code),
            PairType::QcAt => (&t.q_code, &t.a_text),
            PairType::QcQt => (&t.q_code, &t.q_text),
            PairType::QtAc => (&t.q_text, &t.a_code),
            PairType::QtAt => (&t.q_text, &t.a_text),
        }
    }
}

impl std::fmt::Display for PairType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub question_id: i64,
    pub answer_id: i64,
    pub title: String,
    pub tags: Vec<String>,
    pub is_accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub first: String,
    pub second: String,
    pub pair_type: PairType,
    pub qa_label: u8,
    pub sp_label: u8,
    pub meta: PairMeta,
}

impl TrainingPair {
    pub fn is_negative(&self) -> bool {
        self.qa_label == 0 && self.sp_label == 0
    }
}

impl PostTuple {
    pub fn meta(&self) -> PairMeta {
        PairMeta {
            question_id: self.question_id,
            answer_id: self.answer_id,
            title: self.title.clone(),
            tags: self.tags.clone(),
            is_accepted: self.is_accepted,
        }
    }
}

/// Positive pairs of a tuple, one per pair type whose sides are both
/// non-empty. Returns the pairs and the number omitted for an empty side.
pub fn expand_pairs(tuple: &PostTuple) -> (Vec<TrainingPair>, usize) {
    let mut out = Vec::with_capacity(6);
    let mut omitted = 0;
    for pair_type in PairType::ALL {
        let (first, second) = pair_type.select(tuple);
        if first.is_empty() || second.is_empty() {
            omitted += 1;
            continue;
        }
        let (qa_label, sp_label) = pair_type.labels(false);
        out.push(TrainingPair {
            first: first.to_string(),
            second: second.to_string(),
            pair_type,
            qa_label,
            sp_label,
            meta: tuple.meta(),
        });
    }
    (out, omitted)
}


#[cfg(test)]
mod tests {
    use super::test_support::tuple;
    use super::*;

    #[test]
    fn six_types_with_task_membership() {
        assert_eq!(PairType::ALL.len(), 6);
        let qa: Vec<_> = PairType::ALL
            .iter()
            .filter(|p| p.is_question_answer())
            .collect();
        assert_eq!(
            qa,
            vec![
                &PairType::QcAc,
                &PairType::QcAt,
                &PairType::QtAc,
                &PairType::QtAt
            ]
        );
        for p in PairType::ALL {
            assert_eq!(PairType::from_code(p.code()), Some(p));
        }
        assert_eq!(PairType::from_code(6), None);
    }

    #[test]
    fn full_tuple_expands_to_six() {
        let (pairs, omitted) = expand_pairs(&tuple(1, 2));
        assert_eq!(pairs.len(), 6);
        assert_eq!(omitted, 0);
        let qc_ac = pairs
            .iter()
            .find(|p| p.pair_type == PairType::QcAc)
            .unwrap();
        assert_eq!((qc_ac.qa_label, qc_ac.sp_label), (1, 0));
        assert_eq!(qc_ac.first, "qcode_1()");
        assert_eq!(qc_ac.second, "acode_2()");
        let qc_qt = pairs
            .iter()
            .find(|p| p.pair_type == PairType::QcQt)
            .unwrap();
        assert_eq!((qc_qt.qa_label, qc_qt.sp_label), (0, 1));
        assert_eq!(qc_qt.second, "question text 1");
    }

    #[test]
    fn empty_question_code_drops_three() {
        let mut t = tuple(1, 2);
        t.q_code.clear();
        let (pairs, omitted) = expand_pairs(&t);
        let types: Vec<_> = pairs.iter().map(|p| p.pair_type).collect();
        assert_eq!(types, vec![PairType::AcAt, PairType::QtAc, PairType::QtAt]);
        assert_eq!(omitted, 3);
    }

    #[test]
    fn labels_are_a_function_of_type_and_negativity() {
        for p in PairType::ALL {
            assert_eq!(p.labels(true), (0, 0));
            let (qa, sp) = p.labels(false);
            assert_eq!(qa + sp, 1);
            assert_eq!(qa == 1, p.is_question_answer());
        }
    }
}
