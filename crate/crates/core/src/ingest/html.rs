//! Lenient separation of Stack Exchange post bodies into prose and code.
//!
//! Prose is everything outside `<code>` elements with all markup stripped.
//! Code is the content of `<code>` elements nested in a `<pre>` block; inline
//! `<code>` spans belong to neither output and are dropped.

/// Raw (not whitespace-collapsed) parts of a post body.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub(crate) struct RawParts {
    pub text: String,
    pub code_blocks: Vec<String>,
}

const BLOCK_TAGS: &[&str] = &[
    "p",
    "br",
    "div",
    "li",
    "ul",
    "ol",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "blockquote",
    "tr",
    "td",
    "th",
    "table",
    "hr",
    "pre",
];

/// Splits an HTML fragment into `(text, code_blocks)`, both whitespace-collapsed.
///
/// Never fails: unterminated tags are treated as literal text and unclosed
/// elements are closed at the end of input.
pub fn split_code_text(html: &str) -> (String, Vec<String>) {
    let parts = extract_parts(html);
    let code = parts
        .code_blocks
        .iter()
        .map(|c| collapse_whitespace(c))
        .filter(|c| !c.is_empty())
        .collect();
    (collapse_whitespace(&parts.text), code)
}

/// Replaces every run of whitespace (including newlines) with a single space
/// and trims both ends.
pub fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

pub(crate) fn extract_parts(html: &str) -> RawParts {
    let mut parts = RawParts::default();
    let mut pre_depth = 0usize;
    let mut code_depth = 0usize;
    let mut current_block: Option<String> = None;

    let bytes = html.as_bytes();
    let mut i = 0;
    while i < html.len() {
        if bytes[i] == b'<' {
            if html[i..].starts_with("<!--") {
                i = match html[i + 4..].find("-->") {
                    Some(end) => i + 4 + end + 3,
                    None => html.len(),
                };
                continue;
            }
            if let Some(tag) = parse_tag(&html[i..]) {
                i += tag.len;
                match tag.name.as_str() {
                    "code" if !tag.closing => {
                        code_depth += 1;
                        if code_depth == 1 && pre_depth > 0 {
                            current_block = Some(String::new());
                        }
                    }
                    "code" => {
                        if code_depth > 0 {
                            code_depth -= 1;
                            if code_depth == 0 {
                                if let Some(block) = current_block.take() {
                                    parts.code_blocks.push(block);
                                }
                            }
                        }
                    }
                    "pre" => {
                        if tag.closing {
                            pre_depth = pre_depth.saturating_sub(1);
                        } else if !tag.self_closing {
                            pre_depth += 1;
                        }
                        if code_depth == 0 {
                            parts.text.push(' ');
                        }
                    }
                    name if BLOCK_TAGS.contains(&name) => match current_block.as_mut() {
                        Some(block) if name == "br" => block.push('\n'),
                        Some(_) => {}
                        None if code_depth == 0 => parts.text.push(' '),
                        None => {}
                    },
                    _ => {}
                }
                continue;
            }
            // A stray '<' that does not open a tag is literal text.
            push_content("<", code_depth, &mut current_block, &mut parts.text);
            i += 1;
            continue;
        }
        let end = html[i..].find('<').map_or(html.len(), |p| i + p);
        let decoded = decode_entities(&html[i..end]);
        push_content(&decoded, code_depth, &mut current_block, &mut parts.text);
        i = end;
    }
    if let Some(block) = current_block.take() {
        parts.code_blocks.push(block);
    }
    parts
}

fn push_content(s: &str, code_depth: usize, block: &mut Option<String>, text: &mut String) {
    if code_depth == 0 {
        text.push_str(s);
    } else if let Some(block) = block.as_mut() {
        block.push_str(s);
    }
}

struct Tag {
    name: String,
    closing: bool,
    self_closing: bool,
    len: usize,
}

fn parse_tag(s: &str) -> Option<Tag> {
    let rest = &s[1..];
    let (closing, body) = match rest.strip_prefix('/') {
        Some(b) => (true, b),
        None => (false, rest),
    };
    let first = body.chars().next()?;
    if !first.is_ascii_alphabetic() {
        return None;
    }
    let end = find_tag_end(s)?;
    let name: String = body
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect();
    let self_closing = s[..end].ends_with('/');
    Some(Tag {
        name,
        closing,
        self_closing,
        len: end + 1,
    })
}

/// Position of the `>` closing a tag, skipping over quoted attribute values.
fn find_tag_end(s: &str) -> Option<usize> {
    let mut quote: Option<u8> = None;
    for (idx, &b) in s.as_bytes().iter().enumerate().skip(1) {
        match quote {
            Some(q) if b == q => quote = None,
            Some(_) => {}
            None => match b {
                b'"' | b'\'' => quote = Some(b),
                b'>' => return Some(idx),
                b'<' => return None,
                _ => {}
            },
        }
    }
    None
}

/// Decodes the character references that occur in Stack Exchange bodies.
/// Unknown references are kept verbatim.
pub fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        let semi = rest[..rest.len().min(12)].find(';');
        let decoded = semi.and_then(|semi| decode_reference(&rest[1..semi]).map(|c| (c, semi)));
        match decoded {
            Some((c, semi)) => {
                out.push(c);
                rest = &rest[semi + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn decode_reference(name: &str) -> Option<char> {
    if let Some(num) = name.strip_prefix('#') {
        let code = match num.strip_prefix(['x', 'X']) {
            Some(hex) => u32::from_str_radix(hex, 16).ok()?,
            None => num.parse::<u32>().ok()?,
        };
        return char::from_u32(code);
    }
    Some(match name {
        "amp" => '&',
        "lt" => '<',
        "gt" => '>',
        "quot" => '"',
        "apos" => '\'',
        "nbsp" => '\u{a0}',
        "ndash" => '\u{2013}',
        "mdash" => '\u{2014}',
        "hellip" => '\u{2026}',
        "copy" => '\u{a9}',
        _ => return None,
    })
}
