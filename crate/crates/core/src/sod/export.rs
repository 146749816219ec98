//! Sharded CSV export: `dataset_meta_k.csv` plus one `dataset_<TYPE>_k.csv`
//! per pair type, every row a JSON array. Row `i` of the metadata file
//! describes the tuple whose pairs sit on row `i` of the data files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::{expand_pairs, PairType, PostTuple};
use crate::error::{Error, Result};

pub const DEFAULT_SHARDS: usize = 9;
pub const PAGE: &str = "stackoverflow";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExportSummary {
    pub tuples: u64,
    pub shards: usize,
    /// Rows written per pair type, summed over shards.
    pub rows: BTreeMap<String, u64>,
    /// Pairs dropped because one side was empty.
    pub omitted_pairs: u64,
    pub files: Vec<PathBuf>,
}

fn page_id(id: i64) -> String {
    format!("{id}-{PAGE}")
}

/// Writes `tuples` into `dir`, split contiguously into at most `shards`
/// shards numbered from 1. Shards that would receive no tuple are not created.
pub fn export_sod(
    tuples: &[PostTuple],
    dir: impl AsRef<Path>,
    shards: usize,
) -> Result<ExportSummary> {
    if shards == 0 {
        return Err(Error::Config("shard count must be at least 1".into()));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
    let mut summary = ExportSummary {
        tuples: tuples.len() as u64,
        ..Default::default()
    };
    if tuples.is_empty() {
        return Ok(summary);
    }
    let per_shard = tuples.len().div_ceil(shards);
    for (k, chunk) in tuples.chunks(per_shard).enumerate() {
        write_shard(dir, k + 1, chunk, &mut summary)?;
        summary.shards += 1;
    }
    Ok(summary)
}

fn create(path: PathBuf, files: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    let f = File::create(&path).map_err(|e| Error::io_at(&path, e))?;
    files.push(path);
    Ok(BufWriter::new(f))
}

fn write_shard(
    dir: &Path,
    k: usize,
    tuples: &[PostTuple],
    summary: &mut ExportSummary,
) -> Result<()> {
    let mut meta = create(
        dir.join(format!("dataset_meta_{k}.csv")),
        &mut summary.files,
    )?;
    let mut data = PairType::ALL
        .iter()
        .map(|t| create(dir.join(format!("dataset_{t}_{k}.csv")), &mut summary.files))
        .collect::<Result<Vec<_>>>()?;

    for t in tuples {
        let row = json!([
            page_id(t.question_id),
            page_id(t.answer_id),
            t.title,
            t.tags,
            t.is_accepted
        ]);
        serde_json::to_writer(&mut meta, &row)?;
        meta.write_all(b"\n")?;

        let (pairs, omitted) = expand_pairs(t);
        summary.omitted_pairs += omitted as u64;
        for p in pairs {
            let out = &mut data[p.pair_type.code() as usize];
            serde_json::to_writer(&mut *out, &[&p.first, &p.second])?;
            out.write_all(b"\n")?;
            *summary.rows.entry(p.pair_type.to_string()).or_default() += 1;
        }
    }
    meta.flush()?;
    for d in &mut data {
        d.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sod::test_support::tuple;

    fn lines(path: &Path) -> Vec<serde_json::Value> {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    #[test]
    fn single_tuple_layout() {
        let dir = tempfile::tempdir().unwrap();
        let summary = export_sod(&[tuple(12, 34)], dir.path(), DEFAULT_SHARDS).unwrap();
        assert_eq!(summary.shards, 1);
        assert_eq!(summary.files.len(), 7);
        let meta = lines(&dir.path().join("dataset_meta_1.csv"));
        assert_eq!(
            meta,
            vec![json!([
                "12-stackoverflow",
                "34-stackoverflow",
                "title 12",
                ["rust"],
                true
            ])]
        );
        for t in PairType::ALL {
            let rows = lines(&dir.path().join(format!("dataset_{t}_1.csv")));
            assert_eq!(rows.len(), 1, "{t}");
            assert_eq!(rows[0].as_array().unwrap().len(), 2);
        }
        let qc_ac = lines(&dir.path().join("dataset_QC_AC_1.csv"));
        assert_eq!(qc_ac[0], json!(["qcode_12()", "acode_34()"]));
    }

    #[test]
    fn shards_are_contiguous() {
        let dir = tempfile::tempdir().unwrap();
        let tuples: Vec<_> = (0..20).map(|i| tuple(i, 100 + i)).collect();
        let summary = export_sod(&tuples, dir.path(), 9).unwrap();
        // ceil(20/9) = 3 tuples per shard -> 7 shards
        assert_eq!(summary.shards, 7);
        assert_eq!(lines(&dir.path().join("dataset_meta_1.csv")).len(), 3);
        assert_eq!(lines(&dir.path().join("dataset_meta_7.csv")).len(), 2);
        assert!(!dir.path().join("dataset_meta_8.csv").exists());
        assert_eq!(summary.rows["QT_AT"], 20);
    }
}
