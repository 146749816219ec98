//! Placeholder substitution and cleanup for prose and code.

use std::sync::LazyLock;

use regex::Regex;

use super::html::collapse_whitespace;

pub const NUM_TOKEN: &str = "[NUM]";
pub const FLOAT_TOKEN: &str = "[FLOAT]";
pub const DATETIME_TOKEN: &str = "[DATETIME]";

static DATETIME: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"\b\d{4}-\d{2}-\d{2}(?:[T ]\d{1,2}:\d{2}(?::\d{2}(?:\.\d+)?)?(?:Z|[+-]\d{2}:?\d{2})?)?\b|\b\d{1,2}:\d{2}(?::\d{2})?\b",
    )
    .unwrap()
});

static FLOAT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b\d+\.\d+(?:[eE][+-]?\d+)?[fFdD]?\b|\b\d+[eE][+-]?\d+\b").unwrap()
});

static INT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b0[xX][0-9a-fA-F]+\b|\b\d+[uUlL]*\b").unwrap());

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\[(?:NUM|FLOAT|DATETIME)\]").unwrap());

/// Normalizes prose: dates and times become `[DATETIME]`, decimals `[FLOAT]`,
/// integers `[NUM]`; punctuation is removed and whitespace collapsed.
pub fn normalize_text(text: &str) -> String {
    let s = collapse_whitespace(text);
    let s = DATETIME.replace_all(&s, DATETIME_TOKEN);
    let s = FLOAT.replace_all(&s, FLOAT_TOKEN);
    let s = strip_punctuation(&s);
    let s = INT.replace_all(&s, NUM_TOKEN);
    collapse_whitespace(&s)
}

/// Replaces every non-alphanumeric, non-whitespace character with a space,
/// leaving placeholder tokens intact.
fn strip_punctuation(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut last = 0;
    for m in PLACEHOLDER.find_iter(s) {
        push_without_punctuation(&mut out, &s[last..m.start()]);
        out.push_str(m.as_str());
        last = m.end();
    }
    push_without_punctuation(&mut out, &s[last..]);
    out
}

fn push_without_punctuation(out: &mut String, s: &str) {
    out.extend(s.chars().map(|c| {
        if c.is_alphanumeric() || c.is_whitespace() {
            c
        } else {
            ' '
        }
    }));
}

/// Comment syntax recognised by [`CodeNormalizer`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeNormalizer {
    /// Markers that start a comment running to the end of the line.
    pub line_markers: Vec<String>,
    /// Delimiters of a block comment; only removed when opened and closed on
    /// the same line.
    pub block: Option<(String, String)>,
}

impl Default for CodeNormalizer {
    fn default() -> Self {
        Self {
            line_markers: vec!["//".into(), "#".into(), "--".into()],
            block: Some(("/*".into(), "*/".into())),
        }
    }
}

impl CodeNormalizer {
    pub fn normalize(&self, code: &str) -> String {
        let mut joined = String::with_capacity(code.len());
        for line in code.lines() {
            let line = self.strip_comments(line);
            joined.push_str(&line);
            joined.push(' ');
        }
        let s = FLOAT.replace_all(&joined, FLOAT_TOKEN);
        let s = INT.replace_all(&s, NUM_TOKEN);
        collapse_whitespace(&s)
    }

    fn strip_comments(&self, line: &str) -> String {
        let mut line = line.to_string();
        if let Some((open, close)) = &self.block {
            while let Some(start) = line.find(open.as_str()) {
                match line[start + open.len()..].find(close.as_str()) {
                    Some(rel) => {
                        let end = start + open.len() + rel + close.len();
                        line.replace_range(start..end, " ");
                    }
                    None => break,
                }
            }
        }
        let cut = self
            .line_markers
            .iter()
            .filter_map(|marker| find_marker(&line, marker))
            .min();
        if let Some(cut) = cut {
            line.truncate(cut);
        }
        line
    }
}

/// First occurrence of `marker` at the start of the line or after whitespace.
fn find_marker(line: &str, marker: &str) -> Option<usize> {
    line.match_indices(marker)
        .map(|(i, _)| i)
        .find(|&i| i == 0 || line[..i].ends_with(char::is_whitespace))
}

/// Normalizes a code block with the default comment syntax.
pub fn normalize_code(code: &str) -> String {
    CodeNormalizer::default().normalize(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_examples() {
        assert_eq!(normalize_text("costs 12 dollars"), "costs [NUM] dollars");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("pi is 3.14!"), "pi is [FLOAT]");
    }

    #[test]
    fn text_datetimes() {
        assert_eq!(
            normalize_text("since 2020-06-01 at 12:30, ok"),
            "since [DATETIME] at [DATETIME] ok"
        );
        assert_eq!(
            normalize_text("stamp 2019-01-02T03:04:05Z done"),
            "stamp [DATETIME] done"
        );
    }

    #[test]
    fn text_digits_inside_words_survive() {
        assert_eq!(normalize_text("utf8 and x_5"), "utf8 and x [NUM]");
        assert_eq!(normalize_text("version v1.2"), "version v1 [NUM]");
    }

    #[test]
    fn code_examples() {
        assert_eq!(normalize_code("x = 5 // init"), "x = [NUM]");
        assert_eq!(normalize_code(""), "");
        assert_eq!(normalize_code("y = 2.5\nz = y"), "y = [FLOAT] z = y");
    }

    #[test]
    fn code_comment_forms() {
        assert_eq!(normalize_code("# header\nprint(x) # note"), "print(x)");
        assert_eq!(
            normalize_code("SELECT a -- pick\nFROM t"),
            "SELECT a FROM t"
        );
        assert_eq!(normalize_code("a = /* two */ b"), "a = b");
        assert_eq!(normalize_code("i--;"), "i--;");
        assert_eq!(normalize_code("url = \"a//b\""), "url = \"a//b\"");
        assert_eq!(normalize_code("v = 0xFF + 1.5e3"), "v = [NUM] + [FLOAT]");
    }

    #[test]
    fn custom_comment_syntax() {
        let n = CodeNormalizer {
            line_markers: vec![";".into()],
            block: None,
        };
        assert_eq!(
            n.normalize("mov ax, 1 ; load\n# keep"),
            "mov ax, [NUM] # keep"
        );
    }
}
