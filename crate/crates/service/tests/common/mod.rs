#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::Value;
use tower::ServiceExt;

use tutorbot_core::corpus::{generate_corpus, write_curricula, CorpusConfig};
use tutorbot_core::text::build_vocab;
use tutorbot_core::{Corpus, Model, ModelConfig};
use tutorbot_service::{router, AppState, ServiceConfig};

pub fn corpus() -> Corpus {
    generate_corpus(&CorpusConfig {
        n_dialogues: 8,
        n_curricula: 3,
        seed: 11,
        ..CorpusConfig::default()
    })
    .unwrap()
}

pub fn random_model(corpus: &Corpus, seed: u64) -> Model {
    let vocab = build_vocab(corpus, 1);
    let config = ModelConfig {
        max_tgt_len: 16,
        ..ModelConfig::small(vocab.len())
    };
    Model::random(vocab, config, seed)
}

/// Writes the corpus curricula into `dir` and builds a router over it.
pub fn app(dir: &Path, corpus: &Corpus, model: Option<Model>) -> Router {
    write_curricula(&corpus.curricula, dir).unwrap();
    reopen(dir, model)
}

/// Builds a fresh router over an existing data directory.
pub fn reopen(dir: &Path, model: Option<Model>) -> Router {
    let config = ServiceConfig {
        data_dir: dir.to_path_buf(),
        ..ServiceConfig::default()
    };
    router(Arc::new(AppState::new(config, model).unwrap()))
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => builder
            .header("content-type", "application/json")
            .body(Body::from(v.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

pub async fn create(app: &Router, curriculum_id: &str) -> (StatusCode, Value) {
    call(app, "POST", "/api/sessions", Some(serde_json::json!({ "curriculum_id": curriculum_id }))).await
}

pub async fn turn(app: &Router, id: &str, text: &str) -> (StatusCode, Value) {
    call(app, "POST", &format!("/api/sessions/{id}/turns"), Some(serde_json::json!({ "text": text }))).await
}
