use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use culprit::artifact;
use culprit::kv::KeyValues;
use culprit::scorer::{AnyScorer, ConstantScorer, LexicalOverlapScorer};
use culprit_service::{router, AppState, IssueStore, LoadedModel};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const APPENDIX_ERROR: &str = "Testcase: \"AutoTest_SplitScreen\" asserted with message: Testcase AutoTest_SplitScreen \
     failed with result: Failed - (Please set FailureMessage on TestCaseEntity to provide reason)";

fn appendix_suspects() -> Value {
    json!([
        {"change_id": "1", "message_text": "[ES] Implement support for ShaderBlendMode_PremultipliedColor Resolves ERROR-192388 Add missing transmittance input to lit root node Resolves"},
        {"change_id": "2", "message_text": "[CharacterPhysics] Replace terrain in Autotest levels with a large ground box as it is unnecessary (and causing failures on some IOS devices)"},
        {"change_id": "3", "message_text": "Move MixinRuntimeComponent to an internal RuntimeVariations detail, refactor internals to capture individual variant layers' entity ranges."},
        {"change_id": "4", "message_text": "[Localization] Timestamp Formatter Entity"}
    ])
}

fn app(model: Option<AnyScorer>) -> Router {
    router(AppState::new(
        IssueStore::in_memory(),
        model.map(LoadedModel::from_scorer),
        Some("secret".into()),
    ))
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

fn post(uri: &str, body: Value) -> Request<Body> {
    Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

async fn ingest(app: &Router, error: &str, suspects: Value) -> String {
    let (status, body) = call(app, post("/issues", json!({"error_text": error, "suspects": suspects}))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["issue_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn appendix_issue_ranks_commit_two_first_under_lexical_baseline() {
    let app = app(Some(LexicalOverlapScorer.into()));
    let id = ingest(&app, APPENDIX_ERROR, appendix_suspects()).await;
    let (status, body) = call(&app, post(&format!("/issues/{id}/identify"), json!({}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let candidates = body["candidates"].as_array().unwrap();
    assert_eq!(candidates.len(), 4);
    assert_eq!(candidates[0]["change_id"], "2");
    let total: f64 = candidates.iter().map(|c| c["probability"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);

    let (_, issue) = call(&app, get(&format!("/issues/{id}"))).await;
    assert_eq!(issue["status"], "identified");
    assert_eq!(issue["primary_suspect"], "2");
    assert_eq!(issue["last_scores"].as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn single_and_seven_suspect_issues_are_scored() {
    let app = app(Some(LexicalOverlapScorer.into()));
    let one = ingest(&app, "solver assert", json!([{"change_id": "A", "message_text": "solver fix"}])).await;
    let (_, body) = call(&app, post(&format!("/issues/{one}/identify"), json!({}))).await;
    assert_eq!(body["candidates"][0]["probability"].as_f64(), Some(1.0));

    let seven: Vec<Value> = (0..7)
        .map(|i| json!({"change_id": format!("CL{i}"), "message_text": format!("change {i} touches module{i}")}))
        .collect();
    let id = ingest(&app, "crash in module5", Value::Array(seven)).await;
    let (_, body) = call(&app, post(&format!("/issues/{id}/identify"), json!({}))).await;
    let candidates = body["candidates"].as_array().unwrap();
    assert_eq!(candidates.len(), 7);
    assert_eq!(candidates[0]["change_id"], "CL5");
}

#[tokio::test]
async fn identify_reports_not_found_and_unavailable() {
    let no_model = app(None);
    let (status, body) = call(&no_model, post("/issues/iss-999999/identify", json!({}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "not_found");

    let id = ingest(&no_model, "err", json!([{"change_id": "A", "message_text": "m"}])).await;
    let (status, body) = call(&no_model, post(&format!("/issues/{id}/identify"), json!({}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"], "model_unavailable");
    let (_, issue) = call(&no_model, get(&format!("/issues/{id}"))).await;
    assert_eq!(issue["status"], "open");
}

#[tokio::test]
async fn idempotency_key_deduplicates_ingestion() {
    let app = app(None);
    let req = || {
        Request::post("/issues")
            .header(header::CONTENT_TYPE, "application/json")
            .header("Idempotency-Key", "farm-run-17")
            .body(Body::from(
                json!({"error_text": "boom", "suspects": [{"change_id": "A", "message_text": "m"}]}).to_string(),
            ))
            .unwrap()
    };
    let (s1, b1) = call(&app, req()).await;
    let (s2, b2) = call(&app, req()).await;
    assert_eq!((s1, s2), (StatusCode::CREATED, StatusCode::OK));
    assert_eq!(b1["issue_id"], b2["issue_id"]);
    assert_eq!(b2["created"], false);
    let (_, list) = call(&app, get("/issues")).await;
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn ingest_rejects_invalid_payloads() {
    let app = app(None);
    let dup = json!([{"change_id": "A", "message_text": "x"}, {"change_id": "A", "message_text": "y"}]);
    let (status, body) = call(&app, post("/issues", json!({"error_text": "e", "suspects": dup}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["message"].as_str().unwrap().contains("\"A\""), "{body}");

    let (status, _) = call(&app, post("/issues", json!({"error_text": "e", "suspects": []}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, body) = call(&app, post("/issues", json!({"suspects": []}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "invalid_request");
}

#[tokio::test]
async fn claims_filter_and_export() {
    let app = app(None);
    let mut ids = Vec::new();
    for i in 0..5 {
        let suspects = json!([
            {"change_id": format!("CL{i}a"), "message_text": "first"},
            {"change_id": format!("CL{i}b"), "message_text": "second"}
        ]);
        ids.push(ingest(&app, &format!("error {i}"), suspects).await);
    }
    for (i, id) in ids.iter().take(3).enumerate() {
        let (status, body) = call(
            &app,
            post(&format!("/issues/{id}/claim"), json!({"change_id": format!("CL{i}a"), "user_id": "dev"})),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(body["status"], "claimed");
        assert_eq!(body["claim"]["user_id"], "dev");
    }
    // last claim wins
    call(&app, post(&format!("/issues/{}/claim", ids[0]), json!({"change_id": "CL0b", "user_id": "lead"}))).await;

    let (status, body) =
        call(&app, post(&format!("/issues/{}/claim", ids[1]), json!({"change_id": "nope", "user_id": "x"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["message"], "nope is not a suspect of this issue");

    let (_, claimed) = call(&app, get("/issues?status=claimed")).await;
    assert_eq!(claimed.as_array().unwrap().len(), 3);
    assert_eq!(claimed[0]["claimed_by"], "lead");
    let (_, open) = call(&app, get("/issues?status=open")).await;
    assert_eq!(open.as_array().unwrap().len(), 2);
    let (status, _) = call(&app, get("/issues?status=bogus")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let resp = app.clone().oneshot(get("/export/labeled")).await.unwrap();
    assert_eq!(resp.headers()[header::CONTENT_TYPE], "application/x-ndjson");
    let text = String::from_utf8(resp.into_body().collect().await.unwrap().to_bytes().to_vec()).unwrap();
    let records = culprit::domain::read_records(text.as_bytes()).unwrap();
    assert_eq!(records.len(), 3);
    assert_eq!(records[0].record_id, ids[0]);
    assert_eq!(records[0].culprit.change_id, "CL0b");
}

#[tokio::test]
async fn admin_swaps_model_with_token_only() {
    let dir = tempfile::tempdir().unwrap();
    artifact::save(dir.path(), &AnyScorer::from(ConstantScorer { value: 0.0 }), &KeyValues::default()).unwrap();
    let app = app(Some(LexicalOverlapScorer.into()));
    let (_, health) = call(&app, get("/health")).await;
    assert_eq!(health["model"], "lexical_overlap");

    let body = json!({"path": dir.path()});
    let (status, _) = call(&app, post("/admin/model", body.clone())).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let wrong = Request::post("/admin/model")
        .header(header::CONTENT_TYPE, "application/json")
        .header(header::AUTHORIZATION, "Bearer wrong")
        .body(Body::from(body.to_string()))
        .unwrap();
    assert_eq!(call(&app, wrong).await.0, StatusCode::UNAUTHORIZED);

    let auth = |body: &Value| {
        Request::post("/admin/model")
            .header(header::CONTENT_TYPE, "application/json")
            .header(header::AUTHORIZATION, "Bearer secret")
            .body(Body::from(body.to_string()))
            .unwrap()
    };
    let (status, swapped) = call(&app, auth(&body)).await;
    assert_eq!(status, StatusCode::OK, "{swapped}");
    assert_eq!(swapped["previous"], "lexical_overlap");
    let (_, health) = call(&app, get("/health")).await;
    assert!(health["model"].as_str().unwrap().starts_with("constant(0)"));

    let (status, err) = call(&app, auth(&json!({"path": "/nonexistent/model"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "artifact");
}

#[tokio::test]
async fn cors_preflight_is_answered() {
    let app = app(None);
    let req = Request::options("/issues")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .header(header::ACCESS_CONTROL_REQUEST_HEADERS, "idempotency-key,content-type")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    assert!(resp.headers().contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
}
