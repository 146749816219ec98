use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::{DATETIME_TOKEN, FLOAT_TOKEN, NUM_TOKEN};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

/// Special tokens in id order; they always occupy ids `0..8`.
pub const SPECIAL_TOKENS: [&str; 8] = [
    PAD,
    UNK,
    CLS,
    SEP,
    MASK,
    NUM_TOKEN,
    FLOAT_TOKEN,
    DATETIME_TOKEN,
];

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
pub const NUM_SPECIAL: u32 = SPECIAL_TOKENS.len() as u32;

pub const CONTINUATION: &str = "##";

/// Dense token table: ids are line numbers of the vocabulary file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    token_to_id: HashMap<String, u32>,
    max_token_chars: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from tokens in id order. The first entries must be
    /// [`SPECIAL_TOKENS`] and no token may repeat.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens.iter().zip(SPECIAL_TOKENS).any(|(t, s)| t != s)
        {
            return Err(Error::InvalidInput(format!(
                "vocabulary must start with the special tokens {SPECIAL_TOKENS:?}"
            )));
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::InvalidInput(format!(
                    "token {id} is empty or contains whitespace"
                )));
            }
            if token_to_id.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::InvalidInput(format!("token {tok:?} appears twice")));
            }
        }
        let max_token_chars = tokens
            .iter()
            .map(|t| t.trim_start_matches(CONTINUATION).chars().count())
            .max()
            .unwrap_or(1);
        Ok(Self {
            tokens,
            token_to_id,
            max_token_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn is_special(id: u32) -> bool {
        id < NUM_SPECIAL
    }

    pub(crate) fn max_token_chars(&self) -> usize {
        self.max_token_chars
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for tok in &self.tokens {
            out.write_all(tok.as_bytes())?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let tokens = input.lines().collect::<std::io::Result<Vec<_>>>()?;
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io_at(path, e))?;
        self.write_to(BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}
