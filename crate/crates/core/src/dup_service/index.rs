use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};

pub const INDEX_VERSION: u32 = 1;
const MANIFEST: &str = "index.json";
const BLOB: &str = "vectors.bin";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Hit {
    pub question_id: i64,
    pub similarity: f64,
    /// Row of the entry inside the index.
    pub position: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dim: usize,
    normalized: bool,
    ids: Vec<i64>,
}

/// Exact flat index. Similarity is the inner product, or cosine when the
/// index is normalized. Vectors are kept as inserted.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    normalized: bool,
    ids: Vec<i64>,
    vectors: Vec<Real>,
    norms: Vec<Real>,
    seen: HashSet<i64>,
}

fn norm(v: &[Real]) -> Real {
    v.iter().map(|x| x * x).sum::<Real>().sqrt()
}

fn dot(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl EmbeddingIndex {
    pub fn new(dim: usize, normalized: bool) -> Self {
        Self {
            dim,
            normalized,
            ids: Vec::new(),
            vectors: Vec::new(),
            norms: Vec::new(),
            seen: HashSet::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[i64] {
        &self.ids
    }

    /// Stored vector at `position`.
    pub fn vector_of(&self, position: usize) -> &[Real] {
        &self.vectors[position * self.dim..(position + 1) * self.dim]
    }

    pub fn insert(&mut self, question_id: i64, vector: &[Real]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape {
                op: "index_insert",
                lhs: vec![self.dim],
                rhs: vec![vector.len()],
            });
        }
        if !self.seen.insert(question_id) {
            return Err(Error::InvalidInput(format!(
                "question {question_id} is already indexed"
            )));
        }
        self.ids.push(question_id);
        self.vectors.extend_from_slice(vector);
        self.norms.push(norm(vector));
        Ok(())
    }

    /// Exact top-`k`, ties broken by ascending question id.
    pub fn search(&self, query: &[Real], k: usize) -> Result<Vec<Hit>> {
        if query.len() != self.dim {
            return Err(Error::Shape {
                op: "index_search",
                lhs: vec![self.dim],
                rhs: vec![query.len()],
            });
        }
        if k == 0 || self.is_empty() {
            return Ok(Vec::new());
        }
        let qn = norm(query);
        let mut hits: Vec<Hit> = self
            .vectors
            .par_chunks(self.dim)
            .enumerate()
            .map(|(position, v)| {
                let mut s = dot(query, v);
                if self.normalized {
                    let d = qn * self.norms[position];
                    if d > 0.0 {
                        s /= d;
                    }
                }
                Hit {
                    question_id: self.ids[position],
                    similarity: s as f64,
                    position,
                }
            })
            .collect();
        let order = |a: &Hit, b: &Hit| {
            b.similarity
                .total_cmp(&a.similarity)
                .then(a.question_id.cmp(&b.question_id))
        };
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, order);
            hits.truncate(k);
        }
        hits.sort_by(order);
        Ok(hits)
    }

    /// Writes `index.json` and a little-endian f64 `vectors.bin`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
        let manifest = Manifest {
            version: INDEX_VERSION,
            dim: self.dim,
            normalized: self.normalized,
            ids: self.ids.clone(),
        };
        let mpath = dir.join(MANIFEST);
        let f = File::create(&mpath).map_err(|e| Error::io_at(&mpath, e))?;
        serde_json::to_writer_pretty(BufWriter::new(f), &manifest)?;
        let bpath = dir.join(BLOB);
        let f = File::create(&bpath).map_err(|e| Error::io_at(&bpath, e))?;
        let mut w = BufWriter::new(f);
        for &x in &self.vectors {
            w.write_all(&(x as f64).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        let f = File::open(&mpath).map_err(|e| Error::io_at(&mpath, e))?;
        let m: Manifest = serde_json::from_reader(BufReader::new(f))?;
        if m.version != INDEX_VERSION {
            return Err(Error::Index(format!(
                "index version {} is not {INDEX_VERSION}",
                m.version
            )));
        }
        let bpath = dir.join(BLOB);
        let mut bytes = Vec::new();
        File::open(&bpath)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io_at(&bpath, e))?;
        if bytes.len() != m.ids.len() * m.dim * 8 {
            return Err(Error::Index(format!(
                "{} holds {} bytes, expected {}",
                bpath.display(),
                bytes.len(),
                m.ids.len() * m.dim * 8
            )));
        }
        let mut index = Self::new(m.dim, m.normalized);
        for id in &m.ids {
            if !index.seen.insert(*id) {
                return Err(Error::Index(format!(
                    "question {id} appears twice in the index"
                )));
            }
        }
        index.ids = m.ids;
        index.vectors = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")) as Real)
            .collect();
        index.norms = index.vectors.chunks(m.dim.max(1)).map(norm).collect();
        Ok(index)
    }
}
