//! Binary training records.
//!
//! Layout (little-endian): magic `SODR`, `u16` version, then one entry per
//! record: `u32` payload length followed by the payload
//! `u32 n1, n1 x u32 ids, u32 n2, n2 x u32 ids, u8 pair_type, u8 qa, u8 sp`.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{PairType, TrainingPair};
use crate::error::{Error, Result};
use crate::tokenizer::{encode, Vocabulary, CLS_ID, SEP_ID};

pub const RECORD_MAGIC: &[u8; 4] = b"SODR";
pub const RECORD_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedPair {
    pub first: Vec<u32>,
    pub second: Vec<u32>,
    pub pair_type: PairType,
    pub qa_label: u8,
    pub sp_label: u8,
}

pub fn tokenize_pair(pair: &TrainingPair, vocab: &Vocabulary) -> TokenizedPair {
    TokenizedPair {
        first: encode(&pair.first, vocab).ids,
        second: encode(&pair.second, vocab).ids,
        pair_type: pair.pair_type,
        qa_label: pair.qa_label,
        sp_label: pair.sp_label,
    }
}

/// Encoder input: token ids and segment ids (0 for the first segment
/// including `[CLS]` and its `[SEP]`, 1 for the second).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelInput {
    pub ids: Vec<u32>,
    pub segments: Vec<u32>,
}

impl ModelInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Lays out `[CLS] first [SEP] second [SEP]`, trimming the longer segment
/// first until the sequence fits in `max_len` (at least 3).
pub fn build_input(first: &[u32], second: &[u32], max_len: usize) -> ModelInput {
    let budget = max_len.max(3) - 3;
    let (mut n1, mut n2) = (first.len(), second.len());
    while n1 + n2 > budget {
        if n1 >= n2 {
            n1 -= 1;
        } else {
            n2 -= 1;
        }
    }
    let mut ids = Vec::with_capacity(n1 + n2 + 3);
    ids.push(CLS_ID);
    ids.extend_from_slice(&first[..n1]);
    ids.push(SEP_ID);
    let boundary = ids.len();
    ids.extend_from_slice(&second[..n2]);
    ids.push(SEP_ID);
    let segments = (0..ids.len()).map(|i| u32::from(i >= boundary)).collect();
    ModelInput { ids, segments }
}

pub struct RecordWriter<W: Write> {
    out: W,
    payload: Vec<u8>,
    written: u64,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        out.write_all(RECORD_MAGIC)?;
        out.write_all(&RECORD_VERSION.to_le_bytes())?;
        Ok(Self {
            out,
            payload: Vec::new(),
            written: 0,
        })
    }

    pub fn write(&mut self, rec: &TokenizedPair) -> Result<()> {
        let p = &mut self.payload;
        p.clear();
        for ids in [&rec.first, &rec.second] {
            p.extend_from_slice(&(ids.len() as u32).to_le_bytes());
            for id in ids {
                p.extend_from_slice(&id.to_le_bytes());
            }
        }
        p.extend_from_slice(&[rec.pair_type.code(), rec.qa_label, rec.sp_label]);
        self.out.write_all(&(p.len() as u32).to_le_bytes())?;
        self.out.write_all(p)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<u64> {
        self.out.flush()?;
        Ok(self.written)
    }
}

pub fn write_records<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a TokenizedPair>,
) -> Result<u64> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io_at(path, e))?;
    let mut w = RecordWriter::new(BufWriter::new(file))?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

pub struct RecordReader<R: Read> {
    input: R,
    index: usize,
    done: bool,
}

impl<R: Read> RecordReader<R> {
    /// Reads the header. A completely empty stream is accepted as a file
    /// with no records.
    pub fn new(mut input: R) -> Result<Self> {
        let mut header = [0u8; 6];
        let n = read_fully(&mut input, &mut header)?;
        if n == 0 {
            return Ok(Self {
                input,
                index: 0,
                done: true,
            });
        }
        if n < header.len() || &header[..4] != RECORD_MAGIC {
            return Err(Error::Corrupt {
                index: 0,
                reason: "missing SODR header".into(),
            });
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != RECORD_VERSION {
            return Err(Error::Corrupt {
                index: 0,
                reason: format!("unsupported record version {version}"),
            });
        }
        Ok(Self {
            input,
            index: 0,
            done: false,
        })
    }

    fn corrupt(&mut self, reason: impl Into<String>) -> Error {
        self.done = true;
        Error::Corrupt {
            index: self.index,
            reason: reason.into(),
        }
    }

    fn read_one(&mut self) -> Result<Option<TokenizedPair>> {
        let mut len = [0u8; 4];
        match read_fully(&mut self.input, &mut len)? {
            0 => return Ok(None),
            4 => {}
            _ => return Err(self.corrupt("truncated length prefix")),
        }
        let len = u32::from_le_bytes(len) as usize;
        let mut payload = Vec::new();
        let got = (&mut self.input)
            .take(len as u64)
            .read_to_end(&mut payload)?;
        if got < len {
            return Err(self.corrupt(format!(
                "payload truncated: expected {len} bytes, found {got}"
            )));
        }
        match decode_payload(&payload) {
            Some(rec) => Ok(Some(rec)),
            None => Err(self.corrupt("payload does not match its declared layout")),
        }
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<TokenizedPair>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let out = self.read_one().transpose();
        if out.is_none() {
            self.done = true;
        }
        self.index += 1;
        out
    }
}

pub fn read_records(path: impl AsRef<Path>) -> Result<RecordReader<BufReader<File>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    RecordReader::new(BufReader::new(file))
}

fn read_fully<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

fn decode_payload(p: &[u8]) -> Option<TokenizedPair> {
    let mut pos = 0;
    let u32_at = |pos: &mut usize| -> Option<u32> {
        let b = p.get(*pos..*pos + 4)?;
        *pos += 4;
        Some(u32::from_le_bytes(b.try_into().ok()?))
    };
    let mut seqs = [Vec::new(), Vec::new()];
    for seq in &mut seqs {
        let n = u32_at(&mut pos)? as usize;
        if n > (p.len() - pos) / 4 {
            return None;
        }
        *seq = (0..n)
            .map(|_| u32_at(&mut pos))
            .collect::<Option<Vec<_>>>()?;
    }
    let tail = p.get(pos..)?;
    if tail.len() != 3 {
        return None;
    }
    let [first, second] = seqs;
    Some(TokenizedPair {
        first,
        second,
        pair_type: PairType::from_code(tail[0])?,
        qa_label: tail[1],
        sp_label: tail[2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<TokenizedPair> {
        vec![
            TokenizedPair {
                first: vec![9, 10, 11],
                second: vec![12],
                pair_type: PairType::QtAc,
                qa_label: 1,
                sp_label: 0,
            },
            TokenizedPair {
                first: vec![],
                second: vec![u32::MAX, 8],
                pair_type: PairType::AcAt,
                qa_label: 0,
                sp_label: 0,
            },
        ]
    }

    fn encode_all(recs: &[TokenizedPair]) -> Vec<u8> {
        let mut buf = Vec::new();
        let mut w = RecordWriter::new(&mut buf).unwrap();
        for r in recs {
            w.write(r).unwrap();
        }
        w.finish().unwrap();
        buf
    }

    #[test]
    fn round_trip() {
        let buf = encode_all(&sample());
        assert_eq!(&buf[..4], b"SODR");
        let back: Vec<_> = RecordReader::new(&buf[..])
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(back, sample());
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(RecordReader::new(&b""[..]).unwrap().count(), 0);
        let header_only = encode_all(&[]);
        assert_eq!(RecordReader::new(&header_only[..]).unwrap().count(), 0);
    }

    #[test]
    fn corrupted_length_prefix_reports_record_index() {
        let mut buf = encode_all(&sample());
        // The second record's length prefix starts after the header and the
        // first record (4 + 4*(1+3) + 4*(1+1) + 3 = 31 bytes).
        let second_len_at = 6 + 4 + 4 * (1 + 3) + 4 * (1 + 1) + 3;
        buf[second_len_at + 2] ^= 0xFF;
        let mut reader = RecordReader::new(&buf[..]).unwrap();
        assert!(reader.next().unwrap().is_ok());
        match reader.next().unwrap() {
            Err(Error::Corrupt { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected corruption error, got {other:?}"),
        }
        assert!(reader.next().is_none());
    }

    #[test]
    fn truncated_file() {
        let buf = encode_all(&sample());
        let cut = &buf[..buf.len() - 2];
        let results: Vec<_> = RecordReader::new(cut).unwrap().collect();
        assert!(results[0].is_ok());
        assert!(matches!(results[1], Err(Error::Corrupt { index: 1, .. })));
    }

    #[test]
    fn bad_header() {
        assert!(RecordReader::new(&b"NOPE\x01\x00"[..]).is_err());
    }

    #[test]
    fn input_layout_and_trimming() {
        let inp = build_input(&[10, 11], &[20], 16);
        assert_eq!(inp.ids, vec![CLS_ID, 10, 11, SEP_ID, 20, SEP_ID]);
        assert_eq!(inp.segments, vec![0, 0, 0, 0, 1, 1]);

        let long: Vec<u32> = (100..200).collect();
        let inp = build_input(&long, &[20, 21], 8);
        assert_eq!(inp.len(), 8);
        assert_eq!(inp.ids, vec![CLS_ID, 100, 101, 102, SEP_ID, 20, 21, SEP_ID]);
    }
}
