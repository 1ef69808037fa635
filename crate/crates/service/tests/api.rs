mod common;

use axum::http::StatusCode;
use serde_json::json;

use common::{app, call, corpus, create, random_model, turn};
use tutorbot_core::{SessionState, SessionStatus, TutorReply};

#[tokio::test]
async fn create_returns_opening_and_distinct_ids() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus();
    let app = app(dir.path(), &corpus, Some(random_model(&corpus, 1)));
    let cid = &corpus.curricula[0].id;
    let (status, a) = create(&app, cid).await;
    assert_eq!(status, StatusCode::CREATED);
    let opening: TutorReply = serde_json::from_value(a["opening"].clone()).unwrap();
    assert!(!opening.text.is_empty());
    assert!(!opening.transitioned, "opening transition must be suppressed");
    let (_, b) = create(&app, cid).await;
    assert_ne!(a["session_id"], b["session_id"]);
    assert_eq!(a["session_id"].as_str().unwrap().len(), 32);
}

#[tokio::test]
async fn error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus();
    let app = app(dir.path(), &corpus, Some(random_model(&corpus, 2)));

    let (status, body) = create(&app, "nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "unknown_curriculum");

    let (status, body) = turn(&app, "0123456789abcdef0123456789abcdef", "hi").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "unknown_session");
    let (status, _) = call(&app, "GET", "/api/sessions/../../etc/passwd", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, created) = create(&app, &corpus.curricula[0].id).await;
    let id = created["session_id"].as_str().unwrap();
    let (status, body) = turn(&app, id, "   ").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "empty_text");

    let (status, body) = call(&app, "POST", &format!("/api/sessions/{id}/turns"), Some(json!({"words": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "invalid_request");
    assert!(body["message"].is_string());
}

#[tokio::test]
async fn missing_model_is_503() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus();
    let app = app(dir.path(), &corpus, None);
    let (status, body) = create(&app, &corpus.curricula[0].id).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["code"], "model_not_loaded");
    let (status, list) = call(&app, "GET", "/api/curricula", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), corpus.curricula.len());
}

#[tokio::test]
async fn session_runs_to_completion_then_409() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus();
    let app = app(dir.path(), &corpus, Some(random_model(&corpus, 3)));
    let curriculum = &corpus.curricula[1];
    let (_, created) = create(&app, &curriculum.id).await;
    let id = created["session_id"].as_str().unwrap().to_string();
    let cap = 12;
    let mut last_index = 0;
    let mut turns = 0;
    loop {
        let (status, body) = turn(&app, &id, "the answer is cat").await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let reply: TutorReply = serde_json::from_value(body).unwrap();
        assert!(reply.instruction_index_after == last_index || reply.instruction_index_after == last_index + 1);
        last_index = reply.instruction_index_after;
        turns += 1;
        assert!(turns <= curriculum.len() * cap);
        if reply.session_status == SessionStatus::Completed {
            break;
        }
    }
    let (status, body) = turn(&app, &id, "more").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "session_completed");

    let (_, state) = call(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    let state: SessionState = serde_json::from_value(state).unwrap();
    assert_eq!(state.status, SessionStatus::Completed);
    assert_eq!(state.student_turns(), turns);
    let (_, debug) = call(&app, "GET", &format!("/api/sessions/{id}/debug"), None).await;
    assert_eq!(debug["history"].as_array().unwrap().len(), turns + 1);
}

#[tokio::test]
async fn root_serves_a_page() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus();
    let app = app(dir.path(), &corpus, None);
    let (status, body) = call(&app, "GET", "/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.as_str().unwrap().contains("<html>"));
}

#[tokio::test]
async fn static_dir_is_served() {
    let dir = tempfile::tempdir().unwrap();
    let assets = tempfile::tempdir().unwrap();
    std::fs::write(assets.path().join("index.html"), "<p>console</p>").unwrap();
    let corpus = corpus();
    tutorbot_core::corpus::write_curricula(&corpus.curricula, dir.path()).unwrap();
    let config = tutorbot_service::ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        static_dir: Some(assets.path().to_path_buf()),
        ..Default::default()
    };
    let app = tutorbot_service::router(std::sync::Arc::new(
        tutorbot_service::AppState::new(config, None).unwrap(),
    ));
    let (status, body) = call(&app, "GET", "/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, "<p>console</p>");
    let (status, _) = call(&app, "GET", "/api/curricula", None).await;
    assert_eq!(status, StatusCode::OK);
}
