use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use venus_core::action::Action;
use venus_core::geometry::{Point, ScreenSize};
use venus_core::trajectory::{parse_dataset, write_dataset, Language, Status, Step, Trajectory, SCHEMA};
use venus_service::{build_state, router, ErrorBody, ServeConfig};

fn trace(id: &str, n: u32) -> Trajectory {
    Trajectory {
        schema: SCHEMA.into(),
        trace_id: id.into(),
        task: format!("task {id}"),
        language: Language::En,
        source: "gen".into(),
        category: "c".into(),
        status: Status::Filtered,
        info_retrieval: None,
        fixed_by_annotator: false,
        augmentation: None,
        steps: (1..=n)
            .map(|i| {
                let a = Action::Click(Point::new(10 * i, 20 * i));
                Step {
                    index: i,
                    screenshot_ref: format!("shots/{id}-{i}.png"),
                    screen: ScreenSize::new(1080, 2400).unwrap(),
                    thought: format!("thought {i}"),
                    raw_action: a.to_string(),
                    action: a,
                }
            })
            .collect(),
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    dataset: std::path::PathBuf,
    store: std::path::PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("queue.jsonl");
    write_dataset(&dataset, &[trace("a", 3), trace("b", 7), trace("c", 2)]).unwrap();
    std::fs::create_dir(dir.path().join("shots")).unwrap();
    std::fs::write(dir.path().join("shots/a-1.png"), b"\x89PNG fake").unwrap();
    let store = dir.path().join("store");
    Fixture {
        dataset,
        store,
        _dir: dir,
    }
}

fn app(f: &Fixture, ui: Option<&Path>) -> Router {
    let cfg = ServeConfig {
        review_dataset: Some(f.dataset.clone()),
        store_dir: Some(f.store.clone()),
        ..ServeConfig::default()
    };
    router(build_state(&cfg).unwrap(), ui.map(Path::to_path_buf))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

#[tokio::test]
async fn perfect_click_reward() {
    let f = fixture();
    let app = app(&f, None);
    let (s, v) = call_json(
        &app,
        "POST",
        "/v1/reward/navigation",
        Some(json!({
            "response": "<think>tap</think><action>Click(box=(100, 200))</action>",
            "gt_action": "Click(box=(100, 200))",
            "screen": {"width": 1080, "height": 2400}
        })),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["total"], json!(0.1 + 2.0));
    assert_eq!(v["type"], json!(1.0));

    let (s, v) = call_json(
        &app,
        "POST",
        "/v1/reward/grounding",
        Some(json!({"response": "[8,8,12,12]", "gt_box": [0, 0, 10, 10]})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["coord"], json!(1.0));
}

#[tokio::test]
async fn errors_use_uniform_body() {
    let f = fixture();
    let app = app(&f, None);
    let cases = [
        ("POST", "/v1/reward/grounding", Some(json!({"response": "x"})), StatusCode::UNPROCESSABLE_ENTITY),
        (
            "POST",
            "/v1/reward/grounding",
            Some(json!({"response": "x", "gt_box": [0, 0, 1, 1], "config": {"delta2": 100.0}})),
            StatusCode::BAD_REQUEST,
        ),
        ("POST", "/v1/reward/batch", Some(json!([{"response": "x"}])), StatusCode::BAD_REQUEST),
        ("GET", "/v1/review/traces/zz", None, StatusCode::NOT_FOUND),
        ("POST", "/v1/review/traces/zz/decision", Some(json!({"verdict": "accept"})), StatusCode::NOT_FOUND),
        ("GET", "/v1/review/traces?status=bogus", None, StatusCode::BAD_REQUEST),
        ("GET", "/v1/review/traces/a/steps/x/screenshot", None, StatusCode::BAD_REQUEST),
        ("GET", "/v1/review/traces/a/steps/2/screenshot", None, StatusCode::NOT_FOUND),
        ("GET", "/nope", None, StatusCode::NOT_FOUND),
        ("GET", "/ui/", None, StatusCode::NOT_FOUND),
    ];
    for (method, uri, body, want) in cases {
        let (s, b) = call(&app, method, uri, body).await;
        assert_eq!(s, want, "{method} {uri}");
        let e: ErrorBody = serde_json::from_slice(&b).unwrap_or_else(|_| panic!("{uri}: {}", String::from_utf8_lossy(&b)));
        assert!(!e.code.is_empty());
    }
    let (s, b) = call(&app, "POST", "/v1/reward/grounding", Some(json!("not an object"))).await;
    assert!(s.is_client_error());
    serde_json::from_slice::<ErrorBody>(&b).unwrap();

    for (content_type, body, want, code) in [
        ("text/plain", "{}", StatusCode::UNSUPPORTED_MEDIA_TYPE, "unsupported_media_type"),
        ("application/json", "{\"response\":", StatusCode::BAD_REQUEST, "malformed_json"),
    ] {
        let req = Request::builder()
            .method("POST")
            .uri("/v1/reward/grounding")
            .header("content-type", content_type)
            .body(Body::from(body))
            .unwrap();
        let resp = app.clone().oneshot(req).await.unwrap();
        assert_eq!(resp.status(), want);
        let b = resp.into_body().collect().await.unwrap().to_bytes();
        assert_eq!(serde_json::from_slice::<ErrorBody>(&b).unwrap().code, code);
    }
}

#[tokio::test]
async fn review_workflow() {
    let f = fixture();
    let app = app(&f, None);
    let (_, list) = call_json(&app, "GET", "/v1/review/traces?status=pending", None).await;
    assert_eq!(list.as_array().unwrap().len(), 3);

    let (s, _) = call_json(&app, "POST", "/v1/review/traces/a/decision", Some(json!({"verdict": "accept", "reviewer": "r1"}))).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call_json(&app, "POST", "/v1/review/traces/c/decision", Some(json!({"verdict": "reject", "note": "loops"}))).await;
    assert_eq!(s, StatusCode::OK);
    let (s, v) = call_json(
        &app,
        "POST",
        "/v1/review/traces/b/decision",
        Some(json!({"verdict": "fix", "fixes": [{"step": 4, "action": "LongPress(box=(5, 6))"}]})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "fixed");
    assert_eq!(v["result"]["steps"].as_array().unwrap().len(), 4);

    let (s, v) = call_json(
        &app,
        "POST",
        "/v1/review/traces/b/decision",
        Some(json!({"verdict": "fix", "fixes": [{"step": 1, "action": "Jump()"}]})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "invalid_fix");

    let (_, detail) = call_json(&app, "GET", "/v1/review/traces/b", None).await;
    assert_eq!(detail["decision"]["fixes"][0]["step"], 4);
    assert_eq!(detail["screenshots"][0], "/v1/review/traces/b/steps/1/screenshot");
    let (_, pending) = call_json(&app, "GET", "/v1/review/traces?status=pending", None).await;
    assert!(pending.as_array().unwrap().is_empty());

    let (s, body) = call(&app, "GET", "/v1/review/export", None).await;
    assert_eq!(s, StatusCode::OK);
    let text = String::from_utf8(body).unwrap();
    let exported = parse_dataset(&text);
    assert!(exported.report.is_clean());
    let ids: Vec<&str> = exported.trajectories.iter().map(|t| t.trace_id.as_str()).collect();
    assert_eq!(ids, vec!["a", "b"]);
    assert!(exported.trajectories.iter().all(|t| t.status == Status::Accepted));
    assert_eq!(exported.trajectories[1].len(), 4);
    assert!(exported.trajectories[1].fixed_by_annotator);
    let (_, again) = call(&app, "GET", "/v1/review/export", None).await;
    assert_eq!(again, text.as_bytes());

    // a restarted service sees the same state
    let restarted = self::app(&f, None);
    let (_, after) = call(&restarted, "GET", "/v1/review/export", None).await;
    assert_eq!(after, text.as_bytes());
}

#[tokio::test]
async fn screenshots_and_ui() {
    let f = fixture();
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>review</html>").unwrap();
    std::fs::write(ui.path().join("app.js"), "console.log(1)").unwrap();
    let app = app(&f, Some(ui.path()));
    let (s, b) = call(&app, "GET", "/v1/review/traces/a/steps/1/screenshot", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b, b"\x89PNG fake");
    let (s, b) = call(&app, "GET", "/ui/app.js", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b, b"console.log(1)");
    let (s, b) = call(&app, "GET", "/ui/", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b, b"<html>review</html>");
}

#[tokio::test]
async fn reward_only_mode() {
    let app = router(build_state(&ServeConfig::default()).unwrap(), None);
    let (s, v) = call_json(&app, "GET", "/v1/review/traces", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "review_disabled");
    let (s, v) = call_json(&app, "GET", "/v1/reward/config", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["delta2"], json!(14.0));
}
