#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::process::Command;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use bagsplat_cli::session::{AssetPaths, EmbedderKind};
use bagsplat_cli::{router, AppState, Session, SessionConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use support::write_benchmark_dataset;
use tower::ServiceExt;

struct Fixture {
    _tmp: tempfile::TempDir,
    ds: support::Dataset,
    session: Arc<Session>,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let ds = write_benchmark_dataset(tmp.path());
    let paths = AssetPaths {
        scene: ds.scene.clone(),
        bank: ds.bank.clone(),
        classifier: ds.classifier.clone(),
        embedder: EmbedderKind::Toy,
        embeddings: None,
    };
    let session = Arc::new(Session::load(&paths, SessionConfig::default()).unwrap());
    Fixture { _tmp: tmp, ds, session }
}

fn app(f: &Fixture) -> Router {
    router(AppState {
        session: Some(Arc::clone(&f.session)),
    })
}

async fn send(app: Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn get(app: Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_query(app: Router, body: &str) -> (StatusCode, Value) {
    let req = Request::post("/query")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, bytes) = send(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::test]
async fn no_session_reports_conflict() {
    let app = router(AppState::default());
    let (status, body) = get(app.clone(), "/health").await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v, json!({"status": "ok", "data": {"scene_loaded": false}}));
    for uri in ["/views", "/render/cam0", "/extract?ids=0"] {
        let (status, body) = get(app.clone(), uri).await;
        assert_eq!(status, StatusCode::CONFLICT, "{uri}");
        let v: Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(v["status"], "error");
        assert_eq!(v["error"]["code"], 409);
    }
    let (status, _) = post_query(app, r#"{"text":"red"}"#).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn health_and_views() {
    let f = fixture();
    let (_, body) = get(app(&f), "/health").await;
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["data"]["scene_loaded"], true);
    let (status, body) = get(app(&f), "/views").await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    let ids: Vec<&str> = v["data"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["view_id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["cam0", "cam1", "cam2", "cam3"]);
}

#[tokio::test]
async fn query_selects_by_color() {
    let f = fixture();
    let (status, v) = post_query(app(&f), r#"{"text":"red cube","k":5}"#).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["data"]["selected"], json!([0]));
    assert_eq!(v["data"]["k"], 5);
    assert_eq!(v["data"]["ranked"].as_array().unwrap().len(), 3);

    let (_, v) = post_query(app(&f), r#"{"text":"blue","rule":"top_n:2"}"#).await;
    assert_eq!(v["data"]["selected"].as_array().unwrap().len(), 2);
    assert_eq!(v["data"]["selected"][0], 2);
}

#[tokio::test]
async fn malformed_queries_are_bad_requests() {
    let f = fixture();
    for body in [
        "not json",
        "{}",
        r#"{"text":""}"#,
        r#"{"text":"   "}"#,
        r#"{"text":"red","rule":"best"}"#,
        r#"{"text":"red","k":0}"#,
        r#"{"text":"red","k":-1}"#,
        r#"{"text":"red","extra":1}"#,
    ] {
        let (status, v) = post_query(app(&f), body).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(v["error"]["code"], 400, "{body}");
        assert!(!v["error"]["message"].as_str().unwrap().is_empty());
    }
}

#[tokio::test]
async fn render_returns_png_overlays() {
    let f = fixture();
    let (status, body) = get(app(&f), "/render/cam0?ids=0").await;
    assert_eq!(status, StatusCode::OK);
    let dec = png::Decoder::new(std::io::Cursor::new(body));
    let reader = dec.read_info().unwrap();
    assert_eq!((reader.info().width, reader.info().height), (96, 64));

    let (status, _) = get(app(&f), "/render/nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    for uri in ["/render/cam0?ids=9", "/render/cam0?ids=abc", "/render/cam0?colour=red"] {
        let (status, _) = get(app(&f), uri).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
    }
}

#[tokio::test]
async fn renders_are_cached_per_view() {
    let f = fixture();
    assert_eq!(f.session.cached_views(), 0);
    let (_, a) = get(app(&f), "/render/cam1?ids=1").await;
    let (_, b) = get(app(&f), "/render/cam1?ids=1").await;
    assert_eq!(a, b);
    assert_eq!(f.session.cached_views(), 1);
    let (_, c) = get(app(&f), "/render/cam1").await;
    assert_ne!(a, c);
    get(app(&f), "/render/cam2").await;
    assert_eq!(f.session.cached_views(), 2);
}

#[tokio::test]
async fn extract_matches_cli_output() {
    let f = fixture();
    let (status, body) = get(app(&f), "/extract?ids=0,2").await;
    assert_eq!(status, StatusCode::OK);
    let out = f.ds.dir.join("cli.zip");
    let o = Command::new(env!("CARGO_BIN_EXE_bagsplat"))
        .args([
            "scene",
            "extract",
            "--scene",
            f.ds.scene.to_str().unwrap(),
            "--ids",
            "0,2",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(body, std::fs::read(&out).unwrap());

    let (status, _) = get(app(&f), "/extract?ids=3").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn query_matches_cli_json() {
    let f = fixture();
    for text in ["red cube", "green", "something blue", "a chair"] {
        let (_, v) = post_query(app(&f), &json!({"text": text}).to_string()).await;
        let o = Command::new(env!("CARGO_BIN_EXE_bagsplat"))
            .args([
                "query",
                "--scene",
                f.ds.scene.to_str().unwrap(),
                "--bank",
                f.ds.bank.to_str().unwrap(),
            ])
            .args(["--text", text, "--json"])
            .output()
            .unwrap();
        let cli: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["data"], cli, "{text}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_queries_match_serial() {
    let f = fixture();
    let texts = ["red", "green", "blue", "red cube", "gray", "thing"];
    let mut serial = Vec::new();
    for t in texts {
        serial.push(post_query(app(&f), &json!({"text": t}).to_string()).await.1);
    }
    let mut handles = Vec::new();
    for _ in 0..4 {
        for t in texts {
            let a = app(&f);
            handles.push(tokio::spawn(async move {
                post_query(a, &json!({"text": t}).to_string()).await.1
            }));
        }
    }
    let mut renders = Vec::new();
    for _ in 0..8 {
        let a = app(&f);
        renders.push(tokio::spawn(async move { get(a, "/render/cam3?ids=2").await }));
    }
    for (i, h) in handles.into_iter().enumerate() {
        assert_eq!(h.await.unwrap(), serial[i % texts.len()]);
    }
    let mut first = None;
    for h in renders {
        let (status, body) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        assert_eq!(first.get_or_insert_with(|| body.clone()), &body);
    }
    assert_eq!(f.session.cached_views(), 1);
}
