//! Streaming readers for the row-oriented `Posts.xml` / `PostLinks.xml` files.

use std::io::BufRead;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{preprocess_html, DuplicateLink, PostRecord, PostType};
use crate::error::{Error, Result};

/// `LinkTypeId` of duplicate links in `PostLinks.xml`.
pub const DUPLICATE_LINK_TYPE: i64 = 3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Abort on the first malformed row instead of skipping it.
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct ParseStats {
    pub rows: u64,
    pub emitted: u64,
    /// Rows of a type this reader does not emit (other post or link types).
    pub skipped: u64,
    pub malformed: u64,
}

/// One `<row .../>` element as decoded attribute pairs.
type Row = Vec<(String, String)>;

enum RowOutcome<T> {
    Emit(T),
    Skip,
    Malformed(String),
}

/// Pulls `row` elements from an XML stream one at a time.
struct RowReader<R: BufRead> {
    reader: Reader<R>,
    buf: Vec<u8>,
    done: bool,
}

impl<R: BufRead> RowReader<R> {
    fn new(input: R) -> Self {
        let mut reader = Reader::from_reader(input);
        let config = reader.config_mut();
        config.trim_text(true);
        config.check_end_names = false;
        Self {
            reader,
            buf: Vec::with_capacity(4096),
            done: false,
        }
    }

    /// Next row, `Some(Err)` for a row that could not be decoded.
    fn next_row(&mut self) -> Option<std::result::Result<Row, String>> {
        while !self.done {
            self.buf.clear();
            let before = self.reader.buffer_position();
            match self.reader.read_event_into(&mut self.buf) {
                Ok(Event::Eof) => self.done = true,
                Ok(Event::Empty(e)) | Ok(Event::Start(e)) if e.name().as_ref() == b"row" => {
                    return Some(decode_row(&e, self.reader.decoder()));
                }
                Ok(_) => {}
                Err(err) => {
                    if self.reader.buffer_position() == before {
                        self.done = true;
                    }
                    return Some(Err(err.to_string()));
                }
            }
        }
        None
    }
}

fn decode_row(e: &BytesStart<'_>, decoder: quick_xml::Decoder) -> std::result::Result<Row, String> {
    let mut row = Vec::new();
    for attr in e.attributes() {
        let attr = attr.map_err(|err| err.to_string())?;
        let key = std::str::from_utf8(attr.key.as_ref())
            .map_err(|err| err.to_string())?
            .to_string();
        let value = attr
            .decode_and_unescape_value(decoder)
            .map_err(|err| err.to_string())?
            .into_owned();
        row.push((key, value));
    }
    Ok(row)
}

fn attr<'r>(row: &'r Row, key: &str) -> Option<&'r str> {
    row.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn int_attr(row: &Row, key: &str) -> std::result::Result<Option<i64>, String> {
    attr(row, key)
        .map(|v| {
            v.trim()
                .parse::<i64>()
                .map_err(|_| format!("{key}={v:?} is not an integer"))
        })
        .transpose()
}

fn required_int(row: &Row, key: &str) -> std::result::Result<i64, String> {
    int_attr(row, key)?.ok_or_else(|| format!("missing {key}"))
}

/// Generic driver turning rows into records with tallies.
pub struct DumpReader<R: BufRead, T> {
    rows: RowReader<R>,
    convert: fn(&Row) -> RowOutcome<T>,
    options: ParseOptions,
    stats: ParseStats,
    failed: bool,
}

impl<R: BufRead, T> DumpReader<R, T> {
    pub fn stats(&self) -> ParseStats {
        self.stats
    }
}

impl<R: BufRead, T> Iterator for DumpReader<R, T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let outcome = match self.rows.next_row()? {
                Ok(row) => (self.convert)(&row),
                Err(reason) => RowOutcome::Malformed(reason),
            };
            self.stats.rows += 1;
            match outcome {
                RowOutcome::Emit(item) => {
                    self.stats.emitted += 1;
                    return Some(Ok(item));
                }
                RowOutcome::Skip => self.stats.skipped += 1,
                RowOutcome::Malformed(reason) => {
                    self.stats.malformed += 1;
                    log::debug!("skipping malformed row {}: {reason}", self.stats.rows);
                    if self.options.strict {
                        self.failed = true;
                        return Some(Err(Error::Xml(format!(
                            "row {}: {reason}",
                            self.stats.rows
                        ))));
                    }
                }
            }
        }
    }
}

pub type PostReader<R> = DumpReader<R, PostRecord>;
pub type LinkReader<R> = DumpReader<R, DuplicateLink>;

/// Streams questions and answers out of a `Posts.xml` file.
pub fn parse_posts<R: BufRead>(input: R, options: ParseOptions) -> PostReader<R> {
    DumpReader {
        rows: RowReader::new(input),
        convert: convert_post,
        options,
        stats: ParseStats::default(),
        failed: false,
    }
}

/// Streams duplicate links out of a `PostLinks.xml` file.
pub fn parse_duplicate_links<R: BufRead>(input: R, options: ParseOptions) -> LinkReader<R> {
    DumpReader {
        rows: RowReader::new(input),
        convert: convert_link,
        options,
        stats: ParseStats::default(),
        failed: false,
    }
}

fn convert_post(row: &Row) -> RowOutcome<PostRecord> {
    match try_convert_post(row) {
        Ok(Some(p)) => RowOutcome::Emit(p),
        Ok(None) => RowOutcome::Skip,
        Err(e) => RowOutcome::Malformed(e),
    }
}

fn try_convert_post(row: &Row) -> std::result::Result<Option<PostRecord>, String> {
    let post_id = required_int(row, "Id")?;
    let post_type = match required_int(row, "PostTypeId")? {
        1 => PostType::Question,
        2 => PostType::Answer,
        _ => return Ok(None),
    };
    let parent_id = match post_type {
        PostType::Answer => {
            Some(int_attr(row, "ParentId")?.ok_or_else(|| "answer without ParentId".to_string())?)
        }
        PostType::Question => None,
    };
    let accepted_answer_id = match post_type {
        PostType::Question => int_attr(row, "AcceptedAnswerId")?,
        PostType::Answer => None,
    };
    let raw_html = attr(row, "Body").unwrap_or_default().to_string();
    let (text, code_blocks) = preprocess_html(&raw_html);
    let author = attr(row, "OwnerDisplayName")
        .map(str::to_string)
        .or_else(|| attr(row, "OwnerUserId").map(|id| format!("user{id}")));
    Ok(Some(PostRecord {
        post_id,
        post_type,
        parent_id,
        accepted_answer_id,
        title: attr(row, "Title").map(str::to_string),
        tags: attr(row, "Tags").map(parse_tags).unwrap_or_default(),
        text,
        code_blocks,
        raw_html,
        author,
    }))
}

/// Parses both the `<a><b>` and the `|a|b|` tag encodings.
pub fn parse_tags(raw: &str) -> Vec<String> {
    raw.split(['<', '>', '|'])
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn convert_link(row: &Row) -> RowOutcome<DuplicateLink> {
    let parsed = (|| -> std::result::Result<Option<DuplicateLink>, String> {
        if required_int(row, "LinkTypeId")? != DUPLICATE_LINK_TYPE {
            return Ok(None);
        }
        let source = required_int(row, "PostId")?;
        let target = required_int(row, "RelatedPostId")?;
        if source == target {
            return Err(format!("duplicate link from {source} to itself"));
        }
        Ok(Some(DuplicateLink {
            source_question_id: source,
            target_question_id: target,
        }))
    })();
    match parsed {
        Ok(Some(l)) => RowOutcome::Emit(l),
        Ok(None) => RowOutcome::Skip,
        Err(e) => RowOutcome::Malformed(e),
    }
}
