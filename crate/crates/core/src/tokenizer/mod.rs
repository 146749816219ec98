//! Joint WordPiece tokenizer shared by prose and code.

mod encode;
mod train;
mod vocab;

pub use encode::{decode, encode, pre_tokenize, TokenSequence, Word};
pub use train::{count_words, train_from_counts, train_wordpiece, TrainerConfig};
pub use vocab::{
    Vocabulary, CLS, CLS_ID, CONTINUATION, MASK, MASK_ID, NUM_SPECIAL, PAD, PAD_ID, SEP, SEP_ID,
    SPECIAL_TOKENS, UNK, UNK_ID,
};
