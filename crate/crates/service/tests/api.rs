mod common;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use common::{bench, mixed_csv, WAIT};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tbss_service::api::router;
use tbss_service::export::read_bundle;
use tower::ServiceExt;

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    fn content_type(&self) -> &str {
        self.headers.get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).unwrap_or("")
    }
}

async fn send(app: &Router, request: Request<Body>) -> Reply {
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let headers = response.headers().clone();
    let body = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_json(app: &Router, uri: &str, body: Value) -> Reply {
    let request = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    send(app, request).await
}

async fn put_json(app: &Router, uri: &str, body: Value) -> Reply {
    let request = Request::put(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    send(app, request).await
}

async fn upload(app: &Router, n: usize, seed: u64) -> (String, Reply) {
    let reply = send(app, Request::post("/v1/datasets?name=mixed").body(Body::from(mixed_csv(n, seed))).unwrap()).await;
    (reply.json()["id"].as_str().unwrap().to_string(), reply)
}

fn assert_problem(reply: &Reply, status: u16, code: &str) {
    assert_eq!(reply.status.as_u16(), status, "{}", String::from_utf8_lossy(&reply.body));
    assert_eq!(reply.content_type(), "application/problem+json");
    let body = reply.json();
    assert_eq!(body["code"], code);
    assert_eq!(body["status"], status);
    assert_eq!(body["type"], format!("urn:tbss:problem:{code}"));
    assert!(body["title"].is_string() && body["detail"].is_string());
}

#[tokio::test]
async fn upload_and_run_lifecycle() {
    let wb = bench();
    let app = router(wb.clone());
    let (id, reply) = upload(&app, 400, 21).await;
    assert_eq!(reply.status, StatusCode::CREATED);
    assert_eq!(reply.headers[header::LOCATION], format!("/v1/datasets/{id}"));
    let (_, again) = upload(&app, 400, 21).await;
    assert_eq!(again.status, StatusCode::OK);

    let body = json!({ "b": 0.4, "k1": "1:6", "k2": [1, 2] });
    let first = post_json(&app, &format!("/v1/datasets/{id}/runs"), body.clone()).await;
    assert_eq!(first.status, StatusCode::ACCEPTED);
    let second = post_json(&app, &format!("/v1/datasets/{id}/runs"), body).await;
    assert_eq!(second.status, StatusCode::OK);
    assert_eq!(first.json()["run_id"], second.json()["run_id"]);
    assert_eq!(second.json()["created"], false);

    let run = first.json()["run_id"].as_str().unwrap().to_string();
    assert!(tokio::task::spawn_blocking(move || wb.wait_idle(WAIT)).await.unwrap());
    let runs = get(&app, &format!("/v1/datasets/{id}/runs")).await.json();
    assert_eq!(runs.as_array().unwrap().len(), 6);
    let detail = get(&app, &format!("/v1/datasets/{id}/runs/{run}")).await.json();
    assert_eq!(detail["state"], "converged");
    assert_eq!(detail["k1_expr"], "1:6");
    assert_eq!(detail["params"]["k1"], json!([1, 2, 3, 4, 5, 6]));

    let export = get(&app, &format!("/v1/datasets/{id}/runs/{run}/export")).await;
    assert_eq!(export.status, StatusCode::OK);
    assert_eq!(export.content_type(), "application/x-tar");
    let files = read_bundle(&export.body).unwrap();
    assert_eq!(files.len(), 4);
}

#[tokio::test]
async fn etags_answer_304_until_state_changes() {
    let wb = bench();
    let app = router(wb.clone());
    let (id, _) = upload(&app, 300, 22).await;
    assert!(tokio::task::spawn_blocking(move || wb.wait_idle(WAIT)).await.unwrap());
    let uri = format!("/v1/datasets/{id}/runs");
    let first = get(&app, &uri).await;
    let etag = first.headers[header::ETAG].to_str().unwrap().to_string();
    let cached = send(&app, Request::get(&uri).header(header::IF_NONE_MATCH, &etag).body(Body::empty()).unwrap()).await;
    assert_eq!(cached.status, StatusCode::NOT_MODIFIED);
    assert!(cached.body.is_empty());

    // Different query, different tag.
    let other = get(&app, &format!("/v1/datasets/{id}/series?resolution=10")).await;
    assert_ne!(other.headers[header::ETAG], etag.as_str());

    let run = first.json()[0]["id"].as_str().unwrap().to_string();
    let selected = post_json(&app, &format!("/v1/datasets/{id}/selections"), json!({ "run_id": run })).await;
    assert_eq!(selected.json()["color"], 0);
    let after = send(&app, Request::get(&uri).header(header::IF_NONE_MATCH, &etag).body(Body::empty()).unwrap()).await;
    assert_eq!(after.status, StatusCode::OK);
    assert_eq!(after.json()[0]["color"], 0);
}

#[tokio::test]
async fn errors_are_problem_documents() {
    let app = router(bench());
    assert_problem(&get(&app, "/v1/datasets/dnothing0000").await, 404, "unknown_dataset");
    assert_problem(&get(&app, "/v1/nowhere").await, 404, "not_found");

    let bad = post_json(&app, "/v1/lags/parse", json!({ "expr": "1,5,x" })).await;
    assert_problem(&bad, 422, "lag_parse_error");
    assert_eq!(bad.json()["position"], 4);
    assert_eq!(bad.json()["field"], "expr");
    let ok = post_json(&app, "/v1/lags/parse", json!({ "expr": "1,5,10:20:5" })).await.json();
    assert_eq!(ok["lags"], json!([1, 5, 10, 15, 20]));

    let missing = send(&app, Request::post("/v1/datasets").body(Body::from("date,a,b\n2020-01-01,1,\n")).unwrap()).await;
    assert_problem(&missing, 422, "missing_data");

    let (id, _) = upload(&app, 200, 23).await;
    let runs = format!("/v1/datasets/{id}/runs");
    let r = post_json(&app, &runs, json!({ "b": 0.5, "k1": [1, 300], "k2": [1] })).await;
    assert_problem(&r, 422, "invalid_params");
    assert_eq!(r.json()["field"], "k1[1]");
    let r = post_json(&app, &runs, json!({ "b": 0.5, "k1": "3:1", "k2": [1] })).await;
    assert_problem(&r, 422, "lag_parse_error");
    assert_eq!(r.json()["field"], "k1");
    assert_problem(&post_json(&app, &runs, json!({ "b": "x" })).await, 400, "invalid_body");
    assert_problem(&get(&app, &format!("/v1/datasets/{id}/clustering")).await, 400, "invalid_query");
    assert_problem(&get(&app, &format!("/v1/datasets/{id}/runs/mffffffffffff")).await, 404, "unknown_run");
    assert_problem(&put_json(&app, &format!("/v1/datasets/{id}/state/color-order"), json!({ "order": [0] })).await, 400, "invalid_request");
}

#[tokio::test]
async fn analytic_views_over_http() {
    let wb = bench();
    let app = router(wb.clone());
    let (id, _) = upload(&app, 500, 24).await;
    assert!(tokio::task::spawn_blocking(move || wb.wait_idle(WAIT)).await.unwrap());
    let base = format!("/v1/datasets/{id}");
    let runs = get(&app, &format!("{base}/runs")).await.json();
    let converged: Vec<String> = runs
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["state"] == "converged")
        .map(|r| r["id"].as_str().unwrap().to_string())
        .collect();
    assert!(converged.len() >= 2);

    for path in [
        "projection?kind=lag_set&grid=8".to_string(),
        "projection?kind=component&dissimilarity=doi".to_string(),
        "clustering?k=3".to_string(),
        "quality".to_string(),
        "md".to_string(),
        "histograms".to_string(),
        format!("components?runs={}&resolution=20", converged[0]),
        format!("slope?left={}&right={}", converged[0], converged[1]),
        format!("runs/{}/factors?scale=input", converged[0]),
        format!("runs/{}/diagonality?lags=1:4", converged[0]),
        "guidance?max_lag=20&granule=week".to_string(),
        format!("guidance?max_lag=20&reference={}", converged[0]),
        "macf?lags=1,7&order=name".to_string(),
        "lag-scatter?variable=1&lag=3".to_string(),
        "state".to_string(),
    ] {
        let r = get(&app, &format!("{base}/{path}")).await;
        assert_eq!(r.status, StatusCode::OK, "{path}: {}", String::from_utf8_lossy(&r.body));
        assert!(r.headers.contains_key(header::ETAG), "{path}");
    }
    let md = get(&app, &format!("{base}/md")).await.json();
    assert_eq!(md["runs"].as_array().unwrap().len(), converged.len());

    let sup = post_json(
        &app,
        &format!("{base}/superimpose"),
        json!({ "items": [{ "run_id": converged[0], "index": 0 }, { "run_id": converged[1], "index": 0, "sign": -1.0 }] }),
    )
    .await;
    assert!(sup.json()["distance"].as_f64().unwrap() >= 0.0);

    let doi = put_json(&app, &format!("{base}/state/doi"), json!({ "kind": "skewness" })).await.json();
    assert_eq!(doi["doi_kind"], "skewness");
    let del = send(&app, Request::delete(&base).body(Body::empty()).unwrap()).await;
    assert_eq!(del.status, StatusCode::NO_CONTENT);
    assert_problem(&get(&app, &base).await, 404, "unknown_dataset");
}

#[tokio::test]
async fn health_and_stats() {
    let app = router(bench());
    assert_eq!(get(&app, "/v1/health").await.json()["status"], "ok");
    let stats = get(&app, "/v1/stats").await.json();
    assert_eq!(stats["workers"], 2);
}
