use super::vocab::{Vocabulary, CONTINUATION, PAD_ID, SPECIAL_TOKENS, UNK_ID};

/// Token ids with the character span each one covers in the source text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub offsets: Vec<(usize, usize)>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A pre-tokenized word: its text and character span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
    pub special: bool,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Splits on whitespace, isolates every punctuation character and keeps the
/// special-token literals (`[NUM]`, `[CLS]`, ...) whole.
pub fn pre_tokenize(text: &str) -> Vec<Word<'_>> {
    let mut words = Vec::new();
    let mut word_start: Option<(usize, usize)> = None; // (byte, char)
    let mut chars = text.char_indices().enumerate().peekable();

    fn close<'t>(
        words: &mut Vec<Word<'t>>,
        text: &'t str,
        start: Option<(usize, usize)>,
        byte: usize,
        ch: usize,
    ) {
        if let Some((b, c)) = start {
            words.push(Word {
                text: &text[b..byte],
                start: c,
                end: ch,
                special: false,
            });
        }
    }

    while let Some((ci, (bi, c))) = chars.next() {
        if c == '[' {
            if let Some(special) = SPECIAL_TOKENS.iter().find(|s| text[bi..].starts_with(**s)) {
                close(&mut words, text, word_start.take(), bi, ci);
                let n = special.chars().count();
                words.push(Word {
                    text: &text[bi..bi + special.len()],
                    start: ci,
                    end: ci + n,
                    special: true,
                });
                for _ in 1..n {
                    chars.next();
                }
                continue;
            }
        }
        if c.is_whitespace() {
            close(&mut words, text, word_start.take(), bi, ci);
        } else if is_word_char(c) {
            if word_start.is_none() {
                word_start = Some((bi, ci));
            }
        } else {
            close(&mut words, text, word_start.take(), bi, ci);
            words.push(Word {
                text: &text[bi..bi + c.len_utf8()],
                start: ci,
                end: ci + 1,
                special: false,
            });
        }
    }
    let total = text.chars().count();
    close(&mut words, text, word_start.take(), text.len(), total);
    words
}

/// Greedy longest-match-first segmentation. Characters with no matching
/// piece become `[UNK]` one at a time.
pub fn encode(text: &str, vocab: &Vocabulary) -> TokenSequence {
    let mut seq = TokenSequence::default();
    for word in pre_tokenize(text) {
        if word.special {
            seq.ids.push(vocab.id(word.text).unwrap_or(UNK_ID));
            seq.offsets.push((word.start, word.end));
            continue;
        }
        segment_word(word.text, word.start, vocab, &mut seq);
    }
    seq
}

fn segment_word(word: &str, char_offset: usize, vocab: &Vocabulary, seq: &mut TokenSequence) {
    // Byte index of every char boundary, including the end.
    let bounds: Vec<usize> = word
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(word.len()))
        .collect();
    let n_chars = bounds.len() - 1;
    let max_len = vocab.max_token_chars();
    let mut piece = String::new();
    let mut start = 0;
    while start < n_chars {
        let mut matched = None;
        let mut end = (start + max_len).min(n_chars);
        while end > start {
            piece.clear();
            if start > 0 {
                piece.push_str(CONTINUATION);
            }
            piece.push_str(&word[bounds[start]..bounds[end]]);
            if let Some(id) = vocab.id(&piece) {
                matched = Some((id, end));
                break;
            }
            end -= 1;
        }
        let (id, end) = matched.unwrap_or((UNK_ID, start + 1));
        seq.ids.push(id);
        seq.offsets.push((char_offset + start, char_offset + end));
        start = end;
    }
}

/// Joins tokens with spaces, gluing `##` continuations to their predecessor.
/// Padding is dropped; unknown ids render as `[UNK]`.
pub fn decode(ids: &[u32], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for &id in ids {
        if id == PAD_ID {
            continue;
        }
        let tok = vocab.token(id).unwrap_or(super::vocab::UNK);
        match tok.strip_prefix(CONTINUATION) {
            Some(rest) if !out.is_empty() => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::vocab::SPECIAL_TOKENS;

    fn vocab(extra: &[&str]) -> Vocabulary {
        let mut toks: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        toks.extend(extra.iter().map(|s| s.to_string()));
        Vocabulary::from_tokens(toks).unwrap()
    }

    #[test]
    fn pre_tokenizer_splits_punctuation_and_keeps_specials() {
        let words: Vec<_> = pre_tokenize("f(x_1) = [NUM];")
            .into_iter()
            .map(|w| w.text)
            .collect();
        assert_eq!(words, vec!["f", "(", "x_1", ")", "=", "[NUM]", ";"]);
        let w = pre_tokenize("é [NUM]");
        assert_eq!((w[1].start, w[1].end), (2, 7));
    }

    #[test]
    fn empty_text() {
        assert!(encode("", &vocab(&[])).is_empty());
    }

    #[test]
    fn greedy_with_unknown_character() {
        let v = vocab(&["a", "aaaa"]);
        let seq = encode("aaaaX", &v);
        assert_eq!(seq.ids, vec![v.id("aaaa").unwrap(), UNK_ID]);
        assert_eq!(seq.offsets, vec![(0, 4), (4, 5)]);
    }

    #[test]
    fn longest_match_with_continuations() {
        let v = vocab(&["un", "##aff", "##able", "##a", "u"]);
        let seq = encode("unaffable", &v);
        let toks: Vec<_> = seq.ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(toks, vec!["un", "##aff", "##able"]);
        assert_eq!(decode(&seq.ids, &v), "unaffable");
    }

    #[test]
    fn decode_edge_cases() {
        let v = vocab(&["a"]);
        assert_eq!(decode(&[], &v), "");
        assert_eq!(decode(&[UNK_ID], &v), "[UNK]");
        assert_eq!(decode(&[PAD_ID, 8, PAD_ID], &v), "a");
    }
}
