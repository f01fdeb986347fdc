//! Local HTTP front end. The normalizer is immutable and shared by all
//! requests; a semaphore bounds how many requests run at once.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use normlex_core::pipeline::Normalizer;
use normlex_core::{Mention, SearchLevel};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

use crate::commands::level_or_default;

pub struct AppState {
    normalizer: Normalizer,
    permits: Semaphore,
}

impl AppState {
    pub fn new(normalizer: Normalizer, workers: usize) -> Self {
        Self {
            normalizer,
            permits: Semaphore::new(workers.max(1)),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizeRequest {
    pub terms: Vec<String>,
    pub lang: String,
    #[serde(default)]
    pub max_level: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TermResult {
    pub term: String,
    pub level: SearchLevel,
    pub cui: Option<String>,
    pub candidates: Vec<String>,
}

fn error(status: StatusCode, message: &str) -> Response {
    (status, Json(json!({ "error": message }))).into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/normalize", post(normalize))
        .with_state(state)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn normalize(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: NormalizeRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, &format!("malformed request: {e}")),
    };
    let max_level = match level_or_default(req.max_level.as_deref()) {
        Ok(l) => l,
        Err(e) => return error(StatusCode::BAD_REQUEST, &e.to_string()),
    };
    if state.normalizer.index(&req.lang).is_none() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, &format!("unknown language {:?}", req.lang));
    }
    let Ok(_permit) = state.permits.acquire().await else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "shutting down");
    };
    let worker = Arc::clone(&state);
    let joined = tokio::task::spawn_blocking(move || run_terms(&worker.normalizer, &req.terms, &req.lang, max_level)).await;
    match joined {
        Ok(Ok(results)) => Json(results).into_response(),
        // Internal details (paths, panics) stay in the server log.
        Ok(Err(e)) => {
            eprintln!("normalize failed: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal error")
        }
        Err(e) => {
            eprintln!("normalize worker failed: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal error")
        }
    }
}

/// Terms are normalized independently, each as a one-mention document.
pub fn run_terms(normalizer: &Normalizer, terms: &[String], lang: &str, max_level: SearchLevel) -> anyhow::Result<Vec<TermResult>> {
    terms
        .iter()
        .enumerate()
        .map(|(i, term)| {
            let mention = Mention::standalone(format!("q{i}"), term, lang);
            let (results, preds) = normalizer.normalize_document(std::slice::from_ref(&mention), max_level)?;
            Ok(TermResult {
                term: term.clone(),
                level: results[0].level,
                cui: preds.first().map(|p| p.cui.to_string()),
                candidates: results[0].cuis().iter().map(ToString::to_string).collect(),
            })
        })
        .collect()
}

pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub fn run_server(state: AppState, addr: SocketAddr, workers: usize) -> anyhow::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(workers.max(1))
        .enable_all()
        .build()?;
    runtime.block_on(async move {
        let listener = TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        serve(listener, Arc::new(state)).await?;
        Ok(())
    })
}
