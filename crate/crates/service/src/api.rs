//! HTTP API under `/v1`.
//!
//! Errors are `application/problem+json` documents with a machine-readable
//! `code`. Dataset-scoped GETs carry an ETag and answer a matching
//! `If-None-Match` with 304.

use std::collections::HashMap;

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::header::{self, HeaderMap, HeaderValue};
use axum::http::{StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use tbss_core::analytics::compare::DEFAULT_LINK_THRESHOLD;
use tbss_core::analytics::dissim::Dissimilarity;
use tbss_core::analytics::doi::DoiKind;
use tbss_core::analytics::mds::ProjectionKind;
use tbss_core::guidance::{GuidanceRequest, MacfOrder};
use tbss_core::series::{GranuleUnit, ParseOptions};
use tbss_core::solver::RunId;
use tbss_core::{format_lag_set, parse_lag_expr, LagSet, Parametrization};

use crate::error::ServiceError;
use crate::window::WindowQuery;
use crate::workbench::{FactorScale, ProjectionRequest, SignedComponent, Workbench};

/// Uploads up to this size are accepted.
pub const MAX_UPLOAD_BYTES: usize = 256 << 20;

const DEFAULT_GRID: usize = 20;

/// Problem-detail error response.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    detail: String,
    field: Option<String>,
    position: Option<usize>,
}

impl ApiError {
    fn bad_request(code: &str, detail: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, code: code.into(), detail: detail.into(), field: None, position: None }
    }

    fn field(mut self, field: impl Into<String>) -> Self {
        self.field = Some(field.into());
        self
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError {
            status: StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            code: e.code().into(),
            field: e.field().map(str::to_string),
            position: e.position(),
            detail: e.to_string(),
        }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request("invalid_query", e.body_text())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request("invalid_body", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({
            "type": format!("urn:tbss:problem:{}", self.code),
            "title": self.status.canonical_reason().unwrap_or("Error"),
            "status": self.status.as_u16(),
            "detail": self.detail,
            "code": self.code,
        });
        if let Some(f) = self.field {
            body["field"] = json!(f);
        }
        if let Some(p) = self.position {
            body["position"] = json!(p);
        }
        let mut response = (self.status, body.to_string()).into_response();
        response
            .headers_mut()
            .insert(header::CONTENT_TYPE, HeaderValue::from_static("application/problem+json"));
        response
    }
}

type ApiResult<T = Response> = Result<T, ApiError>;

/// Runs workbench calls off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError::from(ServiceError::Storage(format!("worker task failed: {e}")))),
    }
}

fn etag_for(version: &str, uri: &Uri) -> String {
    let mut h = Sha256::new();
    h.update(version.as_bytes());
    h.update(uri.to_string().as_bytes());
    let d = h.finalize();
    format!("\"{}\"", d[..10].iter().map(|b| format!("{b:02x}")).collect::<String>())
}

fn not_modified(headers: &HeaderMap, etag: &str) -> bool {
    headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|t| t.trim() == etag || t.trim() == "*"))
}

fn with_etag(mut response: Response, etag: &str) -> Response {
    if let Ok(v) = HeaderValue::from_str(etag) {
        response.headers_mut().insert(header::ETAG, v);
    }
    response
}

/// Answers a dataset-scoped GET: 304 when the client copy is current,
/// otherwise the computed body with its ETag.
async fn cached_get<T, F>(bench: Workbench, dataset: String, uri: Uri, headers: HeaderMap, compute: F) -> ApiResult
where
    F: FnOnce(&Workbench, &str) -> Result<T, ServiceError> + Send + 'static,
    T: Serialize + Send + 'static,
{
    let (etag, body) = blocking(move || {
        let version = bench.version_tag(&dataset)?;
        let etag = etag_for(&version, &uri);
        if not_modified(&headers, &etag) {
            return Ok((etag, None));
        }
        Ok((etag, Some(compute(&bench, &dataset)?)))
    })
    .await?;
    Ok(match body {
        None => with_etag(StatusCode::NOT_MODIFIED.into_response(), &etag),
        Some(b) => with_etag(Json(b).into_response(), &etag),
    })
}

/// Comma separated run ids.
fn run_list(runs: &Option<String>) -> Option<Vec<RunId>> {
    runs.as_ref()
        .map(|s| s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(RunId::from).collect())
}

fn lag_expr(text: &str, field: &str) -> ApiResult<LagSet> {
    parse_lag_expr(text).map_err(|e| ApiError::from(ServiceError::from(e)).field(field))
}

pub fn router(bench: Workbench) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/stats", get(stats))
        .route("/v1/lags/parse", post(parse_lags))
        .route("/v1/datasets", get(list_datasets).post(upload))
        .route("/v1/datasets/{id}", get(get_dataset).delete(delete_dataset))
        .route("/v1/datasets/{id}/series", get(series))
        .route("/v1/datasets/{id}/runs", get(list_runs).post(submit_run))
        .route("/v1/datasets/{id}/runs/{run}", get(get_run))
        .route("/v1/datasets/{id}/runs/{run}/export", get(export_run))
        .route("/v1/datasets/{id}/runs/{run}/factors", get(factors))
        .route("/v1/datasets/{id}/runs/{run}/diagonality", get(diagonality))
        .route("/v1/datasets/{id}/components", get(components))
        .route("/v1/datasets/{id}/histograms", get(histograms))
        .route("/v1/datasets/{id}/projection", get(projection))
        .route("/v1/datasets/{id}/clustering", get(clustering))
        .route("/v1/datasets/{id}/quality", get(quality))
        .route("/v1/datasets/{id}/md", get(md_matrix))
        .route("/v1/datasets/{id}/slope", get(slope))
        .route("/v1/datasets/{id}/superimpose", post(superimpose))
        .route("/v1/datasets/{id}/guidance", get(guidance))
        .route("/v1/datasets/{id}/macf", get(macf))
        .route("/v1/datasets/{id}/lag-scatter", get(lag_scatter))
        .route("/v1/datasets/{id}/state", get(session_state))
        .route("/v1/datasets/{id}/state/doi", put(set_doi))
        .route("/v1/datasets/{id}/state/color-order", put(set_color_order))
        .route("/v1/datasets/{id}/selections", post(select))
        .route("/v1/datasets/{id}/selections/{run}", delete(deselect))
        .fallback(|| async { ApiError { status: StatusCode::NOT_FOUND, code: "not_found".into(), detail: "no such route".into(), field: None, position: None } })
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(bench)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn stats(State(bench): State<Workbench>) -> Json<crate::workbench::Stats> {
    Json(bench.stats())
}

#[derive(Deserialize)]
struct LagParseBody {
    expr: String,
}

async fn parse_lags(body: Result<Json<LagParseBody>, JsonRejection>) -> ApiResult {
    let Json(body) = body?;
    let set = lag_expr(&body.expr, "expr")?;
    Ok(Json(json!({ "lags": set.as_slice(), "canonical": format_lag_set(&set) })).into_response())
}

// ---- datasets -----------------------------------------------------------

async fn list_datasets(State(bench): State<Workbench>, uri: Uri, headers: HeaderMap) -> ApiResult {
    let list = blocking(move || Ok(bench.datasets())).await?;
    let version = serde_json::to_string(&list).unwrap_or_default();
    let etag = etag_for(&version, &uri);
    if not_modified(&headers, &etag) {
        return Ok(with_etag(StatusCode::NOT_MODIFIED.into_response(), &etag));
    }
    Ok(with_etag(Json(list).into_response(), &etag))
}

#[derive(Deserialize)]
struct UploadQuery {
    name: Option<String>,
    /// Single ASCII character; defaults to a comma.
    delimiter: Option<String>,
}

async fn upload(State(bench): State<Workbench>, q: Result<Query<UploadQuery>, QueryRejection>, body: Bytes) -> ApiResult {
    let Query(q) = q?;
    let delimiter = match q.delimiter.as_deref() {
        None => b',',
        Some("tab") | Some("\\t") => b'\t',
        Some(d) if d.len() == 1 && d.is_ascii() => d.as_bytes()[0],
        Some(d) => return Err(ApiError::bad_request("invalid_query", format!("bad delimiter {d:?}")).field("delimiter")),
    };
    let name = q.name.unwrap_or_else(|| "dataset".into());
    let (summary, created) = blocking(move || bench.upload(&name, &body, &ParseOptions { delimiter })).await?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    let mut response = (status, Json(&summary)).into_response();
    if let Ok(v) = HeaderValue::from_str(&format!("/v1/datasets/{}", summary.id)) {
        response.headers_mut().insert(header::LOCATION, v);
    }
    Ok(response)
}

async fn get_dataset(State(bench): State<Workbench>, Path(id): Path<String>, uri: Uri, headers: HeaderMap) -> ApiResult {
    cached_get(bench, id, uri, headers, |b, id| b.dataset(id)).await
}

async fn delete_dataset(State(bench): State<Workbench>, Path(id): Path<String>) -> ApiResult {
    blocking(move || bench.delete_dataset(&id)).await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn series(
    State(bench): State<Workbench>,
    Path(id): Path<String>,
    q: Result<Query<WindowQuery>, QueryRejection>,
    uri: Uri,
    headers: HeaderMap,
) -> ApiResult {
    let Query(q) = q?;
    cached_get(bench, id, uri, headers, move |b, id| b.series_window(id, &q)).await
}

// ---- runs ---------------------------------------------------------------

/// A lag set given either as a list or as a lag expression.
#[derive(Deserialize)]
#[serde(untagged)]
enum LagInput {
    List(Vec<usize>),
    Expr(String),
}

impl LagInput {
    fn resolve(self, field: &str) -> ApiResult<LagSet> {
        match self {
            LagInput::Expr(e) => lag_expr(&e, field),
            LagInput::List(v) => LagSet::new(v).map_err(|e| ApiError::from(ServiceError::from(e)).field(field)),
        }
    }
}

#[derive(Deserialize)]
struct RunBody {
    b: f64,
    k1: LagInput,
    k2: LagInput,
    seed: Option<u64>,
}

async fn list_runs(State(bench): State<Workbench>, Path(id): Path<String>, uri: Uri, headers: HeaderMap) -> ApiResult {
    cached_get(bench, id, uri, headers, |b, id| b.runs(id)).await
}

async fn submit_run(State(bench): State<Workbench>, Path(id): Path<String>, body: Result<Json<RunBody>, JsonRejection>) -> ApiResult {
    let Json(body) = body?;
    let params = Parametrization { b: body.b, k1: body.k1.resolve("k1")?, k2: body.k2.resolve("k2")?, seed: body.seed };
    let outcome = blocking(move || bench.submit_run(&id, params)).await?;
    let status = if outcome.created { StatusCode::ACCEPTED } else { StatusCode::OK };
    Ok((status, Json(outcome)).into_response())
}

async fn get_run(
    State(bench): State<Workbench>,
    Path((id, run)): Path<(String, String)>,
    uri: Uri,
    headers: HeaderMap,
) -> ApiResult {
    cached_get(bench, id, uri, headers, move |b, id| b.run(id, &RunId(run))).await
}

async fn export_run(
    State(bench): State<Workbench>,
    Path((id, run)): Path<(String, String)>,
    uri: Uri,
    headers: HeaderMap,
) -> ApiResult {
    let run_id = RunId(run.clone());
    let (etag, body) = blocking(move || {
        let etag = etag_for(&bench.version_tag(&id)?, &uri);
        if not_modified(&headers, &etag) {
            return Ok((etag, None));
        }
        Ok((etag, Some(bench.export_run(&id, &run_id)?)))
    })
    .await?;
    let Some(body) = body else {
        return Ok(with_etag(StatusCode::NOT_MODIFIED.into_response(), &etag));
    };
    let mut response = body.into_response();
    let h = response.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/x-tar"));
    if let Ok(v) = HeaderValue::from_str(&format!("attachment; filename=\"{run}.tar\"")) {
        h.insert(header::CONTENT_DISPOSITION, v);
    }
    Ok(with_etag(response, &etag))
}

#[derive(Deserialize)]
struct FactorQuery {
    #[serde(default)]
    scale: FactorScale,
}

async fn factors(
    State(bench): State<Workbench>,
    Path((id, run)): Path<(String, String)>,
    q: Result<Query<FactorQuery>, QueryRejection>,
    uri: Uri,
    headers: HeaderMap,
) -> ApiResult {
    let Query(q) = q?;
    cached_get(bench, id, uri, headers, move |b, id| b.factors(id, &RunId(run), q.scale)).await
}

#[derive(Deserialize)]
struct LagsQuery {
    lags: Option<String>,
}

async fn diagonality(
    State(bench): State<Workbench>,
    Path((id, run)): Path<(String, String)>,
    q: Result<Query<LagsQuery>, QueryRejection>,
    uri: Uri,
    headers: HeaderMap,
) -> ApiResult {
    let Query(q) = q?;
    let lags = q.lags.as_deref().map(|e| lag_expr(e, "lags")).transpose()?;
    cached_get(bench, id, uri, headers, move |b, id| {
        b.diagonality(id, &RunId(run), lags.as_ref().map(|l| l.as_slice()))
    })
    .await
}

// ---- comparison views ---------------------------------------------------

async fn components(
    State(bench): State<Workbench>,
    Path(id): Path<String>,
    q: Result<Query<HashMap<String, String>>, QueryRejection>,
    uri: Uri,
    headers: HeaderMap,
) -> ApiResult {
    // Read field by field: the window query alone would reject `runs`.
    let Query(q) = q?;
    let parse_date = |key: &str| -> ApiResult<Option<chrono::NaiveDate>> {
        q.get(key)
            .map(|s| s.parse().map_err(|_| ApiError::bad_request("invalid_query", format!("bad date {s:?}")).field(key)))
            .transpose()
    };
    let resolution = q
        .get("resolution")
        .map(|s| s.parse::<usize>().map_err(|_| ApiError::bad_request("invalid_query", "bad resolution").field("resolution")))
        .transpose()?;
    let window = WindowQuery { from: parse_date("from")?, to: parse_date("to")?, resolution };
    let runs = run_list(&q.get("runs").cloned());
    cached_get(bench, id, uri, headers, move |b, id| b.components_window(id, runs.as_deref(), &window)).await
}

#[derive(Deserialize)]
struct RunsQuery {
    runs: Option<String>,
}

async fn histograms(
    State(bench): State<Workbench>,
    Path(id): Path<String>,
    q: Result<Query<RunsQuery>, QueryRejection>,
    uri: Uri,
    headers: HeaderMap,
) -> ApiResult {
    let Query(q) = q?;
    cached_get(bench, id, uri, headers, move |b, id| b.lag_histograms(id, run_list(&q.runs).as_deref())).await
}

#[derive(Deserialize)]
struct ProjectionQuery {
    kind: ProjectionKind,
    #[serde(default)]
    dissimilarity: Dissimilarity,
    grid: Option<usize>,
    runs: Option<String>,
}

async fn projection(
    State(bench): State<Workbench>,
    Path(id): Path<String>,
    q: Result<Query<ProjectionQuery>, QueryRejection>,
    uri: Uri,
    headers: HeaderMap,
) -> ApiResult {
    let Query(q) = q?;
    let request = ProjectionRequest {
        kind: q.kind,
        dissimilarity: q.dissimilarity,
        grid: q.grid.unwrap_or(DEFAULT_GRID),
        runs: run_list(&q.runs),
    };
    cached_get(bench, id, uri, headers, move |b, id| b.projection(id, &request)).await
}

#[derive(Deserialize)]
struct ClusteringQuery {
    k: usize,
    runs: Option<String>,
}

async fn clustering(
    State(bench): State<Workbench>,
    Path(id): Path<String>,
    q: Result<Query<ClusteringQuery>, QueryRejection>,
    uri: Uri,
    headers: HeaderMap,
) -> ApiResult {
    let Query(q) = q?;
    cached_get(bench, id, uri, headers, move |b, id| b.clustering(id, q.k, run_list(&q.runs).as_deref())).await
}

#[derive(Deserialize)]
struct QualityQuery {
    k_min: Option<usize>,
    k_max: Option<usize>,
    runs: Option<String>,
}

async fn quality(
    State(bench): State<Workbench>,
    Path(id): Path<String>,
    q: Result<Query<QualityQuery>, QueryRejection>,
    uri: Uri,
    headers: HeaderMap,
) -> ApiResult {
    let Query(q) = q?;
    let ks = match (q.k_min, q.k_max) {
        (Some(a), Some(b)) => Some((a, b)),
        (None, None) => None,
        _ => return Err(ApiError::bad_request("invalid_query", "give both k_min and k_max or neither")),
    };
    cached_get(bench, id, uri, headers, move |b, id| b.quality_curve(id, ks, run_list(&q.runs).as_deref())).await
}

async fn md_matrix(
    State(bench): State<Workbench>,
    Path(id): Path<String>,
    q: Result<Query<RunsQuery>, QueryRejection>,
    uri: Uri,
    headers: HeaderMap,
) -> ApiResult {
    let Query(q) = q?;
    cached_get(bench, id, uri, headers, move |b, id| b.md_matrix(id, run_list(&q.runs).as_deref())).await
}

#[derive(Deserialize)]
struct SlopeQuery {
    left: String,
    right: String,
    threshold: Option<f64>,
}

async fn slope(
    State(bench): State<Workbench>,
    Path(id): Path<String>,
    q: Result<Query<SlopeQuery>, QueryRejection>,
    uri: Uri,
    headers: HeaderMap,
) -> ApiResult {
    let Query(q) = q?;
    cached_get(bench, id, uri, headers, move |b, id| {
        b.slope_links(id, &RunId(q.left), &RunId(q.right), q.threshold.unwrap_or(DEFAULT_LINK_THRESHOLD))
    })
    .await
}

#[derive(Deserialize)]
struct SuperimposeBody {
    items: Vec<SignedComponent>,
}

async fn superimpose(
    State(bench): State<Workbench>,
    Path(id): Path<String>,
    body: Result<Json<SuperimposeBody>, JsonRejection>,
) -> ApiResult {
    let Json(body) = body?;
    let distance = blocking(move || bench.superimpose(&id, &body.items)).await?;
    Ok(Json(json!({ "distance": distance })).into_response())
}

// ---- guidance -----------------------------------------------------------

#[derive(Deserialize)]
struct GuidanceQuery {
    granule: Option<GranuleUnit>,
    max_lag: Option<usize>,
    reference: Option<String>,
}

async fn guidance(
    State(bench): State<Workbench>,
    Path(id): Path<String>,
    q: Result<Query<GuidanceQuery>, QueryRejection>,
    uri: Uri,
    headers: HeaderMap,
) -> ApiResult {
    let Query(q) = q?;
    let request = GuidanceRequest { granule: q.granule, max_lag: q.max_lag };
    let reference = q.reference.map(RunId);
    cached_get(bench, id, uri, headers, move |b, id| b.guidance(id, &request, reference.as_ref()).map(|t| (*t).clone()))
        .await
}

#[derive(Deserialize)]
struct MacfQuery {
    lags: String,
    #[serde(default)]
    order: MacfOrder,
}

async fn macf(
    State(bench): State<Workbench>,
    Path(id): Path<String>,
    q: Result<Query<MacfQuery>, QueryRejection>,
    uri: Uri,
    headers: HeaderMap,
) -> ApiResult {
    let Query(q) = q?;
    let lags = lag_expr(&q.lags, "lags")?;
    cached_get(bench, id, uri, headers, move |b, id| b.macf(id, lags.as_slice(), q.order)).await
}

#[derive(Deserialize)]
struct ScatterQuery {
    variable: usize,
    lag: usize,
}

async fn lag_scatter(
    State(bench): State<Workbench>,
    Path(id): Path<String>,
    q: Result<Query<ScatterQuery>, QueryRejection>,
    uri: Uri,
    headers: HeaderMap,
) -> ApiResult {
    let Query(q) = q?;
    cached_get(bench, id, uri, headers, move |b, id| b.lag_scatter(id, q.variable, q.lag)).await
}

// ---- session state ------------------------------------------------------

async fn session_state(State(bench): State<Workbench>, Path(id): Path<String>, uri: Uri, headers: HeaderMap) -> ApiResult {
    cached_get(bench, id, uri, headers, |b, id| b.session_state(id)).await
}

#[derive(Deserialize)]
struct DoiBody {
    kind: DoiKind,
}

async fn set_doi(State(bench): State<Workbench>, Path(id): Path<String>, body: Result<Json<DoiBody>, JsonRejection>) -> ApiResult {
    let Json(body) = body?;
    Ok(Json(blocking(move || bench.set_doi_kind(&id, body.kind)).await?).into_response())
}

#[derive(Deserialize)]
struct ColorOrderBody {
    order: Vec<usize>,
}

async fn set_color_order(
    State(bench): State<Workbench>,
    Path(id): Path<String>,
    body: Result<Json<ColorOrderBody>, JsonRejection>,
) -> ApiResult {
    let Json(body) = body?;
    Ok(Json(blocking(move || bench.set_color_order(&id, body.order)).await?).into_response())
}

#[derive(Deserialize)]
struct SelectBody {
    run_id: RunId,
}

async fn select(State(bench): State<Workbench>, Path(id): Path<String>, body: Result<Json<SelectBody>, JsonRejection>) -> ApiResult {
    let Json(body) = body?;
    let run_id = body.run_id.clone();
    let color = blocking(move || bench.select(&id, &body.run_id)).await?;
    Ok(Json(json!({ "run_id": run_id, "color": color })).into_response())
}

async fn deselect(State(bench): State<Workbench>, Path((id, run)): Path<(String, String)>) -> ApiResult {
    let removed = blocking(move || bench.deselect(&id, &RunId(run))).await?;
    Ok(Json(json!({ "removed": removed })).into_response())
}
