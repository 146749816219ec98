//! Python bindings for dupforge.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use dupforge::autodiff::Real;
use dupforge::duptower::{QuestionTokens, TowerConfig};
use dupforge::encoder::{Batch, EncoderConfig};
use dupforge::ingest::{ParseOptions, PostRecord};
use dupforge::sod::ModelInput;
use dupforge::sodd::{Bm25Index, Bm25Params};
use dupforge::tokenizer::TrainerConfig;
use dupforge::train_eval::Schedule;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(dupforge_py, DupforgeError, PyException);

fn err(e: dupforge::Error) -> PyErr {
    DupforgeError::new_err(e.to_string())
}

fn reals(v: Vec<f64>) -> Vec<Real> {
    v.into_iter().map(|x| x as Real).collect()
}

fn floats(v: &[Real]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// One parsed post from a dump.
#[pyclass(frozen, from_py_object, name = "Post")]
#[derive(Clone)]
struct PyPost(PostRecord);

#[pymethods]
impl PyPost {
    #[getter]
    fn post_id(&self) -> i64 {
        self.0.post_id
    }

    #[getter]
    fn is_question(&self) -> bool {
        self.0.is_question()
    }

    #[getter]
    fn parent_id(&self) -> Option<i64> {
        self.0.parent_id
    }

    #[getter]
    fn accepted_answer_id(&self) -> Option<i64> {
        self.0.accepted_answer_id
    }

    #[getter]
    fn title(&self) -> Option<String> {
        self.0.title.clone()
    }

    #[getter]
    fn tags(&self) -> Vec<String> {
        self.0.tags.clone()
    }

    #[getter]
    fn text(&self) -> String {
        self.0.text.clone()
    }

    #[getter]
    fn code_blocks(&self) -> Vec<String> {
        self.0.code_blocks.clone()
    }

    #[getter]
    fn raw_html(&self) -> String {
        self.0.raw_html.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Post(post_id={}, question={})",
            self.0.post_id,
            self.0.is_question()
        )
    }
}

/// Returns `(text, code_blocks)` for a post body.
#[pyfunction]
fn preprocess_html(html: &str) -> (String, Vec<String>) {
    dupforge::ingest::preprocess_html(html)
}

/// Reads every row of a `Posts.xml` dump.
#[pyfunction]
fn parse_posts(py: Python<'_>, path: PathBuf) -> PyResult<Vec<PyPost>> {
    let file = File::open(&path).map_err(|e| err(dupforge::Error::io_at(&path, e)))?;
    py.detach(|| {
        dupforge::ingest::parse_posts(BufReader::new(file), ParseOptions::default())
            .map(|r| r.map(PyPost))
            .collect::<dupforge::Result<Vec<_>>>()
    })
    .map_err(err)
}

/// Accuracy, F1 and 95% bootstrap intervals for binary predictions.
#[pyfunction]
fn metrics(predictions: Vec<u8>, labels: Vec<u8>) -> PyResult<HashMap<&'static str, f64>> {
    let r = dupforge::train_eval::metrics(&predictions, &labels).map_err(err)?;
    Ok(HashMap::from([
        ("accuracy", r.accuracy),
        ("f1", r.f1),
        ("ci_low", r.ci_low),
        ("ci_high", r.ci_high),
        ("f1_ci_low", r.f1_ci_low),
        ("f1_ci_high", r.f1_ci_high),
        ("n", r.n as f64),
    ]))
}

/// Learning rate of the warmup then linear decay schedule at `step`.
#[pyfunction]
fn learning_rate(base_lr: f64, warmup_steps: u64, total_steps: u64, step: u64) -> PyResult<f64> {
    let s = Schedule::new(base_lr, warmup_steps, total_steps).map_err(err)?;
    Ok(s.lr_at(step) as f64)
}

#[pyclass(frozen, name = "Vocabulary")]
struct PyVocabulary(dupforge::tokenizer::Vocabulary);

#[pymethods]
impl PyVocabulary {
    /// Learns a WordPiece vocabulary from raw texts.
    #[staticmethod]
    #[pyo3(signature = (texts, vocab_size, min_frequency = 2))]
    fn train(
        py: Python<'_>,
        texts: Vec<String>,
        vocab_size: usize,
        min_frequency: u64,
    ) -> PyResult<Self> {
        let config = TrainerConfig {
            vocab_size,
            min_frequency,
        };
        py.detach(|| dupforge::tokenizer::train_wordpiece(texts.iter(), config))
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        dupforge::tokenizer::Vocabulary::load(path)
            .map(Self)
            .map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        dupforge::tokenizer::encode(text, &self.0).ids
    }

    fn decode(&self, ids: Vec<u32>) -> String {
        dupforge::tokenizer::decode(&ids, &self.0)
    }

    fn token(&self, id: u32) -> Option<String> {
        self.0.token(id).map(str::to_string)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(frozen, name = "Bm25")]
struct PyBm25(Bm25Index);

#[pymethods]
impl PyBm25 {
    #[new]
    fn new(docs: Vec<(i64, String)>) -> PyResult<Self> {
        Bm25Index::build(&docs, Bm25Params::default())
            .map(Self)
            .map_err(err)
    }

    fn score(&self, query: &str, doc_id: i64) -> f64 {
        self.0.score(query, doc_id)
    }

    fn top_k(&self, query: &str, k: usize) -> Vec<(i64, f64)> {
        self.0.top_k(query, k)
    }
}

#[pyclass(frozen, name = "Encoder")]
struct PyEncoder(dupforge::encoder::Encoder);

#[pymethods]
impl PyEncoder {
    /// A freshly initialized encoder from a named preset (`tiny` or `mqdd-base`).
    #[new]
    #[pyo3(signature = (vocab_size, preset = "tiny", seed = 0))]
    fn new(vocab_size: usize, preset: &str, seed: u64) -> PyResult<Self> {
        let mut config = EncoderConfig::preset(preset).map_err(err)?;
        config.vocab_size = vocab_size;
        dupforge::encoder::Encoder::new(config, seed)
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        dupforge::encoder::Encoder::load(&dir)
            .map(Self)
            .map_err(err)
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.0.save(&dir).map_err(err)
    }

    #[getter]
    fn hidden_size(&self) -> usize {
        self.0.config().hidden_size
    }

    /// `[CLS]` vector of one sequence of ids; segments default to all zero.
    #[pyo3(signature = (ids, segments = None))]
    fn cls(&self, py: Python<'_>, ids: Vec<u32>, segments: Option<Vec<u32>>) -> PyResult<Vec<f64>> {
        let segments = segments.unwrap_or_else(|| vec![0; ids.len()]);
        let input = ModelInput { ids, segments };
        py.detach(|| {
            let batch = Batch::from_inputs(std::slice::from_ref(&input))?;
            self.0.encode_cls(&batch)
        })
        .map(|t| floats(t.row(0)))
        .map_err(err)
    }
}

#[pyclass(frozen, name = "DupTower")]
struct PyDupTower(dupforge::duptower::DupTower);

#[pymethods]
impl PyDupTower {
    /// A tower over a copy of `encoder` with a freshly initialized head.
    #[new]
    #[pyo3(signature = (encoder, hidden_dim = 1000, sequence_length = 256, seed = 0))]
    fn new(
        encoder: &PyEncoder,
        hidden_dim: usize,
        sequence_length: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let config = TowerConfig {
            hidden_dim,
            sequence_length,
            ..TowerConfig::default()
        };
        dupforge::duptower::DupTower::new(encoder.0.clone(), config, seed)
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        dupforge::duptower::DupTower::load(&dir)
            .map(Self)
            .map_err(err)
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.0.save(&dir).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    /// Embedding of a question given as HTML.
    fn embed(&self, py: Python<'_>, html: &str, vocab: &PyVocabulary) -> PyResult<Vec<f64>> {
        py.detach(|| {
            let tokens = QuestionTokens::from_html(html, &vocab.0)?;
            self.0.embed_tokens(&tokens)
        })
        .map(|v| floats(&v))
        .map_err(err)
    }

    /// `(duplicate, not_duplicate)` probabilities for two embeddings.
    fn classify(&self, v1: Vec<f64>, v2: Vec<f64>) -> PyResult<(f64, f64)> {
        let p = self.0.classify_pair(&reals(v1), &reals(v2)).map_err(err)?;
        Ok((p.duplicate as f64, p.not_duplicate as f64))
    }
}

#[pyclass(frozen, get_all, name = "Candidate")]
struct PyCandidate {
    question_id: i64,
    similarity: f64,
    duplicate_probability: f64,
}

#[pymethods]
impl PyCandidate {
    fn __repr__(&self) -> String {
        format!(
            "Candidate(question_id={}, similarity={:.4}, duplicate_probability={:.4})",
            self.question_id, self.similarity, self.duplicate_probability
        )
    }
}

#[pyclass(frozen, name = "Index")]
struct PyIndex(dupforge::dup_service::EmbeddingIndex);

#[pymethods]
impl PyIndex {
    /// Embeds every question among `posts`.
    #[staticmethod]
    #[pyo3(signature = (posts, tower, vocab, normalized = true))]
    fn build(
        py: Python<'_>,
        posts: Vec<PyPost>,
        tower: &PyDupTower,
        vocab: &PyVocabulary,
        normalized: bool,
    ) -> PyResult<Self> {
        py.detach(|| {
            dupforge::dup_service::build_index(
                posts.iter().map(|p| &p.0),
                &tower.0,
                &vocab.0,
                normalized,
            )
        })
        .map(Self)
        .map_err(err)
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        dupforge::dup_service::EmbeddingIndex::load(&dir)
            .map(Self)
            .map_err(err)
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.0.save(&dir).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// `(question_id, similarity)` of the `k` nearest entries.
    fn search(&self, vector: Vec<f64>, k: usize) -> PyResult<Vec<(i64, f64)>> {
        let hits = self.0.search(&reals(vector), k).map_err(err)?;
        Ok(hits
            .into_iter()
            .map(|h| (h.question_id, h.similarity))
            .collect())
    }

    /// Nearest questions to an HTML question, ranked by duplicate probability.
    #[pyo3(signature = (html, tower, vocab, k = 10))]
    fn query(
        &self,
        py: Python<'_>,
        html: &str,
        tower: &PyDupTower,
        vocab: &PyVocabulary,
        k: usize,
    ) -> PyResult<Vec<PyCandidate>> {
        let result = py
            .detach(|| {
                dupforge::dup_service::query_duplicates(&self.0, html, k, &tower.0, &vocab.0)
            })
            .map_err(err)?;
        Ok(result
            .candidates
            .into_iter()
            .map(|c| PyCandidate {
                question_id: c.question_id,
                similarity: c.similarity,
                duplicate_probability: c.duplicate_probability,
            })
            .collect())
    }
}

#[pymodule]
fn dupforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DupforgeError", m.py().get_type::<DupforgeError>())?;
    m.add_class::<PyPost>()?;
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyBm25>()?;
    m.add_class::<PyEncoder>()?;
    m.add_class::<PyDupTower>()?;
    m.add_class::<PyCandidate>()?;
    m.add_class::<PyIndex>()?;
    m.add_function(wrap_pyfunction!(preprocess_html, m)?)?;
    m.add_function(wrap_pyfunction!(parse_posts, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(learning_rate, m)?)?;
    Ok(())
}
