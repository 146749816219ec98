use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{build_index, query_duplicates, EmbeddingIndex};
use crate::duptower::DupTower;
use crate::error::{Error, Result};
use crate::ingest::{read_jsonl, PostRecord};
use crate::tokenizer::Vocabulary;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRequest {
    pub html: String,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildRequest {
    /// JSON Lines of ingested posts; answers are ignored.
    pub corpus_path: PathBuf,
}

/// Shared state: readers clone the current index `Arc`; a rebuild swaps it
/// in once complete.
pub struct ServiceState {
    pub tower: DupTower,
    pub vocab: Vocabulary,
    /// Where rebuilt indexes are persisted, if anywhere.
    pub index_path: Option<PathBuf>,
    pub normalized: bool,
    index: RwLock<Option<Arc<EmbeddingIndex>>>,
    building: AtomicBool,
}

impl ServiceState {
    pub fn new(tower: DupTower, vocab: Vocabulary, index: Option<EmbeddingIndex>) -> Self {
        let normalized = index.as_ref().is_none_or(|i| i.normalized());
        Self {
            tower,
            vocab,
            index_path: None,
            normalized,
            index: RwLock::new(index.map(Arc::new)),
            building: AtomicBool::new(false),
        }
    }

    pub fn current_index(&self) -> Option<Arc<EmbeddingIndex>> {
        self.index.read().expect("index lock poisoned").clone()
    }

    pub fn swap_index(&self, index: EmbeddingIndex) {
        *self.index.write().expect("index lock poisoned") = Some(Arc::new(index));
    }

    fn rebuild(&self, corpus: &std::path::Path) -> Result<usize> {
        let f = File::open(corpus).map_err(|e| Error::io_at(corpus, e))?;
        let posts: Vec<PostRecord> = read_jsonl(BufReader::new(f)).collect::<Result<_>>()?;
        let index = build_index(&posts, &self.tower, &self.vocab, self.normalized)?;
        if let Some(dir) = &self.index_path {
            index.save(dir)?;
        }
        let n = index.len();
        self.swap_index(index);
        Ok(n)
    }
}

fn error(status: StatusCode, msg: impl ToString) -> Response {
    (status, Json(json!({ "error": msg.to_string() }))).into_response()
}

fn bad_body(r: JsonRejection) -> Response {
    error(StatusCode::BAD_REQUEST, r.body_text())
}

async fn healthz(State(state): State<Arc<ServiceState>>) -> Response {
    let entries = state.current_index().map(|i| i.len());
    Json(json!({
        "status": "ok",
        "index_entries": entries,
        "building": state.building.load(Ordering::SeqCst),
    }))
    .into_response()
}

async fn query(
    State(state): State<Arc<ServiceState>>,
    body: std::result::Result<Json<QueryRequest>, JsonRejection>,
) -> Response {
    let req = match body {
        Ok(Json(r)) => r,
        Err(r) => return bad_body(r),
    };
    let Some(index) = state.current_index() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "no index loaded");
    };
    let st = Arc::clone(&state);
    let res = tokio::task::spawn_blocking(move || {
        query_duplicates(&index, &req.html, req.k, &st.tower, &st.vocab)
    })
    .await;
    match res {
        Ok(Ok(r)) => Json(r).into_response(),
        Ok(Err(e)) if e.is_data_error() => error(StatusCode::BAD_REQUEST, e),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn build(
    State(state): State<Arc<ServiceState>>,
    body: std::result::Result<Json<BuildRequest>, JsonRejection>,
) -> Response {
    let req = match body {
        Ok(Json(r)) => r,
        Err(r) => return bad_body(r),
    };
    if state.building.swap(true, Ordering::SeqCst) {
        return error(StatusCode::CONFLICT, "index rebuild already in progress");
    }
    let st = Arc::clone(&state);
    let res = tokio::task::spawn_blocking(move || st.rebuild(&req.corpus_path)).await;
    state.building.store(false, Ordering::SeqCst);
    match res {
        Ok(Ok(n)) => Json(json!({ "entries": n })).into_response(),
        Ok(Err(e)) if e.is_data_error() => error(StatusCode::BAD_REQUEST, e),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/query", post(query))
        .route("/index/build", post(build))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<ServiceState>) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
