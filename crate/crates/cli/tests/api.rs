use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mindseek::catalog::{generate_catalog, GeneratorConfig, SimilarityProvider, SubsetView};
use mindseek::simulate::ideal_click;
use mindseek::{Catalog, Session, SessionConfig};
use mindseek_cli::config::ServiceConfig;
use mindseek_cli::service::{router, AppState};
use mindseek_cli::store::{Store, RESULTS};
use serde_json::{json, Value};
use tower::ServiceExt;

fn catalog() -> Catalog {
    generate_catalog(&GeneratorConfig::new(240, 3, &[4], 5)).unwrap()
}

fn app_with(store: Store) -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState::new(Some(catalog()), ServiceConfig::default(), store));
    (router(state.clone()), state)
}

fn app() -> Router {
    app_with(Store::ephemeral()).0
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let request = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let request = match body {
        Some(v) => request.body(Body::from(v.to_string())).unwrap(),
        None => request.body(Body::empty()).unwrap(),
    };
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into())) };
    (status, value)
}

async fn create(app: &Router, body: Value) -> Value {
    let (status, v) = call(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v
}

fn ids(v: &Value) -> Vec<usize> {
    v["display"].as_array().unwrap().iter().map(|d| d["id"].as_u64().unwrap() as usize).collect()
}

fn weights(v: &Value) -> Vec<f64> {
    v["weights"].as_array().unwrap().iter().map(|w| w.as_f64().unwrap()).collect()
}

fn click_uri(v: &Value) -> String {
    format!("/sessions/{}/click", v["session_id"].as_str().unwrap())
}

fn result_rows(dir: &Path) -> usize {
    std::fs::read_to_string(dir.join(RESULTS)).unwrap().lines().count() - 1
}

fn local_session(seed: u64) -> Session {
    let catalog = catalog();
    let provider = Arc::new(SimilarityProvider::new(&catalog, &SubsetView::all(&catalog)).unwrap());
    Session::new(provider, SessionConfig::default(), seed).unwrap()
}

#[tokio::test]
async fn creation_returns_a_full_display_with_uniform_weights() {
    let app = app();
    let v = create(&app, json!({})).await;
    assert_eq!(v["display"].as_array().unwrap().len(), 8);
    assert_eq!(v["status"], "running");
    assert_eq!(v["iteration"], 1);
    assert_eq!(weights(&v), vec![1.0 / 3.0; 3]);
    assert_eq!(v["channels"], json!(["f0", "f1", "f2"]));
    let first = &v["display"][0];
    assert_eq!(first["thumbnail"], format!("/thumbs/{}.svg", first["id"]));
    assert!(first["tags"]["category"].is_string());
}

#[tokio::test]
async fn bad_queries_are_rejected() {
    let app = app();
    let (status, v) = call(&app, "POST", "/sessions", Some(json!({"tags": {"fabric": "wool"}}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("fabric"));

    let catalog = catalog();
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for item in catalog.items() {
        *counts.entry((item.tags["category"].clone(), item.tags["color"].clone())).or_default() += 1;
    }
    let ((category, color), n) = counts.into_iter().find(|&(_, n)| n < 8).unwrap();
    let (status, v) = call(&app, "POST", "/sessions", Some(json!({"tags": {"category": category, "color": color}}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains(&format!("{n} items")), "{v}");

    let skirts: Vec<usize> = catalog.items().iter().filter(|i| i.tags["category"] == "skirt").map(|i| i.id).collect();
    let outside = catalog.items().iter().find(|i| i.tags["category"] != "skirt").unwrap().id;
    let (status, _) = call(&app, "POST", "/sessions", Some(json!({"tags": {"category": "skirt"}, "target": outside}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v = create(&app, json!({"tags": {"category": "skirt"}})).await;
    assert!(ids(&v).iter().all(|id| skirts.contains(id)));

    let (status, _) = call(&app, "POST", "/sessions", Some(json!({"config": {"colour": 1}}))).await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn same_seed_gives_same_first_display() {
    let app = app();
    let a = create(&app, json!({"config": {"seed": 42}})).await;
    let b = create(&app, json!({"config": {"seed": 42}})).await;
    assert_ne!(a["session_id"], b["session_id"]);
    assert_eq!(ids(&a), ids(&b));
    assert_eq!(ids(&a), local_session(42).display());
    let c = create(&app, json!({"config": {"seed": 42, "n_display": 5, "method": "late_fusion"}})).await;
    assert_eq!(ids(&c).len(), 5);
}

#[tokio::test]
async fn clicks_update_display_and_weights() {
    let app = app();
    let v = create(&app, json!({"config": {"seed": 3}})).await;
    let shown = ids(&v);
    let (status, next) = call(&app, "POST", &click_uri(&v), Some(json!({"item": shown[2]}))).await;
    assert_eq!(status, StatusCode::OK, "{next}");
    assert_eq!(next["iteration"], 2);
    assert!((weights(&next).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(ids(&next).iter().all(|id| *id == shown[2] || !shown.contains(id)));

    let hidden = (0..240).find(|i| !ids(&next).contains(i)).unwrap();
    let (status, err) = call(&app, "POST", &click_uri(&v), Some(json!({"item": hidden}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{err}");
    let (status, _) = call(&app, "POST", &click_uri(&v), Some(json!({"item": ids(&next)[0], "iteration": 1}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, "POST", "/sessions/nope/click", Some(json!({"item": 0}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn terminal_sessions_refuse_further_actions() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app_with(Store::open(dir.path()).unwrap());
    let a = create(&app, json!({})).await;
    let b = create(&app, json!({})).await;
    assert_eq!(result_rows(dir.path()), 0);

    let id = a["session_id"].as_str().unwrap();
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/abandon"), None).await;
    assert_eq!((status, v["status"].as_str()), (StatusCode::OK, Some("abandoned")));
    assert_eq!(result_rows(dir.path()), 1);
    let (status, _) = call(&app, "POST", &click_uri(&a), Some(json!({"item": ids(&a)[0]}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/found"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(result_rows(dir.path()), 1);

    let id = b["session_id"].as_str().unwrap();
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/found"), None).await;
    assert_eq!((status, v["status"].as_str()), (StatusCode::OK, Some("approved_by_user")));
    assert_eq!(result_rows(dir.path()), 2);
    let (status, _) = call(&app, "POST", "/sessions/nope/found", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn snapshot_reports_history_and_exact_weights() {
    let app = app();
    let v = create(&app, json!({"config": {"seed": 8}})).await;
    let uri = format!("/sessions/{}", v["session_id"].as_str().unwrap());
    let (status, snap) = call(&app, "GET", &uri, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(snap["history"].as_array().unwrap().len(), 0);

    let mut local = local_session(8);
    let mut current = v;
    for _ in 0..3 {
        let item = ids(&current)[1];
        local.submit_click(item).unwrap();
        current = call(&app, "POST", &click_uri(&current), Some(json!({"item": item}))).await.1;
    }
    let (_, snap) = call(&app, "GET", &uri, None).await;
    assert_eq!(snap["history"].as_array().unwrap().len(), 3);
    assert_eq!(snap["iteration"], 4);
    assert_eq!(snap["seed"], 8);
    assert_eq!(weights(&snap), local.weights());
    assert_eq!(ids(&snap), local.display());
    assert_eq!(snap["history"][0]["click"], local.history()[0].click);
    let (status, _) = call(&app, "GET", "/sessions/unknown", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn recorded_transcript_replays_through_the_api() {
    let app = app();
    let mut local = local_session(17);
    let target = 101;
    let mut recorded = vec![local.display().to_vec()];
    let mut clicks = Vec::new();
    while !local.display().contains(&target) && clicks.len() < 20 {
        let c = ideal_click(&local, target).unwrap();
        local.submit_click(c).unwrap();
        clicks.push(c);
        recorded.push(local.display().to_vec());
    }
    let mut v = create(&app, json!({"config": {"seed": 17}})).await;
    assert_eq!(ids(&v), recorded[0]);
    for (round, &c) in clicks.iter().enumerate() {
        v = call(&app, "POST", &click_uri(&v), Some(json!({"item": c, "iteration": round + 1}))).await.1;
        assert_eq!(ids(&v), recorded[round + 1], "round {round}");
    }
}

#[tokio::test]
async fn game_mode_hides_the_target_until_it_is_shown() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app_with(Store::open(dir.path()).unwrap());
    let target = 57;
    let mut local = local_session(21);
    let mut v = create(&app, json!({"config": {"seed": 21}, "target": target})).await;
    assert!(v.get("target").is_none());
    while v["status"] == "running" {
        assert!(!v.to_string().contains("\"target\""));
        let c = ideal_click(&local, target).unwrap();
        local.submit_click(c).unwrap();
        v = call(&app, "POST", &click_uri(&v), Some(json!({"item": c}))).await.1;
    }
    assert_eq!(v["status"], "approved_by_system");
    assert_eq!(v["target"], target);
    assert!(ids(&v).contains(&target));
    assert_eq!(result_rows(dir.path()), 1);
    let (status, _) = call(&app, "POST", &click_uri(&v), Some(json!({"item": target}))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let shown = local_session(4).display()[3];
    let instant = create(&app, json!({"config": {"seed": 4}, "target": shown})).await;
    assert_eq!((instant["status"].as_str(), instant["iteration"].as_u64()), (Some("approved_by_system"), Some(1)));
    assert_eq!(result_rows(dir.path()), 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_clicks_have_a_single_winner() {
    let app = app();
    for with_iteration in [true, false] {
        let v = create(&app, json!({"config": {"seed": 9}})).await;
        let tasks: Vec<_> = ids(&v)
            .into_iter()
            .map(|item| {
                let (app, uri) = (app.clone(), click_uri(&v));
                let body = if with_iteration { json!({"item": item, "iteration": 1}) } else { json!({"item": item}) };
                tokio::spawn(async move { call(&app, "POST", &uri, Some(body)).await.0 })
            })
            .collect();
        let mut statuses = Vec::new();
        for t in tasks {
            statuses.push(t.await.unwrap());
        }
        let wins = statuses.iter().filter(|s| **s == StatusCode::OK).count();
        let loser = if with_iteration { StatusCode::CONFLICT } else { StatusCode::UNPROCESSABLE_ENTITY };
        assert_eq!(wins, 1, "{statuses:?}");
        assert!(statuses.iter().all(|s| *s == StatusCode::OK || *s == loser), "{statuses:?}");
        let (_, snap) = call(&app, "GET", &format!("/sessions/{}", v["session_id"].as_str().unwrap()), None).await;
        assert_eq!(snap["history"].as_array().unwrap().len(), 1);
    }
}

#[tokio::test]
async fn sessions_survive_restart_and_eviction() {
    let dir = tempfile::tempdir().unwrap();
    let (finished, running, display) = {
        let (app, state) = app_with(Store::open(dir.path()).unwrap());
        let a = create(&app, json!({"config": {"seed": 1}})).await;
        let a_id = a["session_id"].as_str().unwrap().to_string();
        call(&app, "POST", &click_uri(&a), Some(json!({"item": ids(&a)[0]}))).await;
        call(&app, "POST", &format!("/sessions/{a_id}/found"), None).await;
        let mut b = create(&app, json!({"config": {"seed": 2, "method": "fixed_weight"}})).await;
        for _ in 0..2 {
            b = call(&app, "POST", &click_uri(&b), Some(json!({"item": ids(&b)[4]}))).await.1;
        }
        state.store().sync().unwrap();
        (a_id, b["session_id"].as_str().unwrap().to_string(), ids(&b))
    };

    let (app, state) = app_with(Store::open(dir.path()).unwrap());
    assert_eq!(state.live_sessions(), 0);
    let (status, snap) = call(&app, "GET", &format!("/sessions/{finished}"), None).await;
    assert_eq!((status, snap["status"].as_str()), (StatusCode::OK, Some("approved_by_user")));
    assert_eq!(snap["history"].as_array().unwrap().len(), 1);
    let (_, snap) = call(&app, "GET", &format!("/sessions/{running}"), None).await;
    assert_eq!((snap["status"].as_str(), snap["method"].as_str()), (Some("running"), Some("fixed_weight")));
    assert_eq!(ids(&snap), display);

    assert_eq!(state.live_sessions(), 2);
    assert_eq!(state.evict_idle(Instant::now()), 0);
    assert_eq!(state.evict_idle(Instant::now() + Duration::from_secs(3601)), 2);
    let (status, next) = call(&app, "POST", &format!("/sessions/{running}/click"), Some(json!({"item": display[0], "iteration": 3}))).await;
    assert_eq!(status, StatusCode::OK, "{next}");
    assert_eq!(next["iteration"], 4);
}

#[tokio::test]
async fn missing_catalog_is_unavailable() {
    let app = router(Arc::new(AppState::new(None, ServiceConfig::default(), Store::ephemeral())));
    let (status, v) = call(&app, "POST", "/sessions", Some(json!({}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(v["error"].is_string());
    assert_eq!(call(&app, "GET", "/health", None).await.0, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn health_and_thumbnails() {
    let app = app();
    let (status, v) = call(&app, "GET", "/health", None).await;
    assert_eq!((status, v["items"].as_u64()), (StatusCode::OK, Some(240)));
    let response = app.clone().oneshot(Request::get("/thumbs/12.svg").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(response.status(), StatusCode::OK);
    assert_eq!(response.headers()["content-type"], "image/svg+xml");
    let svg = response.into_body().collect().await.unwrap().to_bytes();
    assert!(svg.starts_with(b"<svg") && svg.ends_with(b"</svg>"));
    assert_eq!(call(&app, "GET", "/thumbs/999.svg", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/thumbs/x.png", None).await.0, StatusCode::NOT_FOUND);
}
