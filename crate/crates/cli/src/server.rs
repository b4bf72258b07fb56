//! HTTP service backing the review client.
//!
//! Label and box-score submissions are appended to JSON-lines logs under
//! `<root>/review/` with a timestamp; the effective record per
//! `(slice, reader)` is the latest one. All writes go through one mutex, so
//! log order equals acceptance order.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use dwiqa_core::codec::{encode_jpeg, encode_labels, encode_png};
use dwiqa_core::dataset::{resolve_ambiguous, Adjudication};
use dwiqa_core::metrics::CiMethod;
use dwiqa_core::{ArtifactLabel, BoxScore, Side, SliceRecord};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::agreement::{box_score_agreement, label_agreement, reader_pairs, AgreementRow};
use crate::pipeline::{load_slices, overlay_path, Layout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry<T> {
    /// Milliseconds since the Unix epoch.
    pub ts: u64,
    pub record: T,
}

/// Append-only JSON-lines log.
#[derive(Debug)]
pub struct Log<T> {
    path: PathBuf,
    entries: Vec<Entry<T>>,
}

impl<T: Serialize + DeserializeOwned + Clone> Log<T> {
    pub fn open(path: PathBuf) -> anyhow::Result<Self> {
        let mut entries = Vec::new();
        if path.exists() {
            for (i, line) in fs::read_to_string(&path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                entries.push(
                    serde_json::from_str(line)
                        .map_err(|e| anyhow::anyhow!("{} line {}: {e}", path.display(), i + 1))?,
                );
            }
        }
        Ok(Self { path, entries })
    }

    pub fn append(&mut self, record: T) -> anyhow::Result<()> {
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
        let entry = Entry { ts, record };
        if let Some(p) = self.path.parent() {
            fs::create_dir_all(p)?;
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        writeln!(f, "{}", serde_json::to_string(&entry)?)?;
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }
}

/// Latest record per key, in key order.
fn latest<T: Clone, K: Ord>(entries: &[Entry<T>], key: impl Fn(&T) -> K) -> Vec<T> {
    let mut m = BTreeMap::new();
    for e in entries {
        m.insert(key(&e.record), e.record.clone());
    }
    m.into_values().collect()
}

pub struct Store {
    labels: Log<ArtifactLabel>,
    box_scores: Log<BoxScore>,
    adjudications: Log<Adjudication>,
}

impl Store {
    pub fn open(review_dir: &Path) -> anyhow::Result<Self> {
        Ok(Self {
            labels: Log::open(review_dir.join("labels.jsonl"))?,
            box_scores: Log::open(review_dir.join("box_scores.jsonl"))?,
            adjudications: Log::open(review_dir.join("adjudications.jsonl"))?,
        })
    }

    pub fn raw_labels(&self) -> Vec<ArtifactLabel> {
        latest(self.labels.entries(), |l| (l.slice_id.clone(), l.reader_id.clone()))
    }

    pub fn adjudications(&self) -> Vec<Adjudication> {
        latest(self.adjudications.entries(), |a| a.slice_id.clone())
    }

    /// Effective labels with adjudicated scores substituted where available;
    /// labels still holding an unadjudicated 6 are returned as entered.
    pub fn labels(&self) -> Vec<ArtifactLabel> {
        let adj = self.adjudications();
        self.raw_labels()
            .into_iter()
            .map(|l| match resolve_ambiguous(std::slice::from_ref(&l), &adj) {
                Ok(mut v) => v.remove(0),
                Err(_) => l,
            })
            .collect()
    }

    pub fn box_scores(&self) -> Vec<BoxScore> {
        latest(self.box_scores.entries(), |b| (b.slice_id.clone(), b.reader_id.clone()))
    }
}

pub struct AppState {
    pub layout: Layout,
    slices: HashMap<String, SliceRecord>,
    order: Vec<String>,
    store: Mutex<Store>,
}

impl AppState {
    pub fn load(layout: Layout) -> anyhow::Result<Self> {
        let records = if layout.slices_dir().exists() {
            load_slices(&layout)?
        } else {
            Vec::new()
        };
        let order = records.iter().map(|r| r.slice_id.clone()).collect();
        let store = Store::open(&layout.root.join("review"))?;
        Ok(Self {
            slices: records.into_iter().map(|r| (r.slice_id.clone(), r)).collect(),
            order,
            store: Mutex::new(store),
            layout,
        })
    }

    fn overlay_dir(&self) -> PathBuf {
        self.layout.explanations()
    }
}

type Shared = Arc<AppState>;

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn not_found(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, msg.into())
}

type ApiResult<T> = std::result::Result<T, ApiError>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/cases", get(cases))
        .route("/api/slices", get(slices))
        .route("/api/slices/{id}/image", get(slice_image))
        .route("/api/slices/{id}/overlay", get(slice_overlay))
        .route("/api/labels", get(get_labels).post(post_label))
        .route("/api/box-scores", get(get_box_scores).post(post_box_score))
        .route("/api/adjudications", get(get_adjudications).post(post_adjudication))
        .route("/api/agreement", get(agreement))
        .route("/api/export/labels.csv", get(export_labels))
        .route("/api/export/box-scores.csv", get(export_box_scores))
        .with_state(state)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CaseSummary {
    pub case_id: String,
    pub slices: usize,
}

async fn cases(State(s): State<Shared>) -> Json<Vec<CaseSummary>> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for id in &s.order {
        *counts.entry(s.slices[id].case_id.as_str()).or_default() += 1;
    }
    Json(
        counts
            .into_iter()
            .map(|(c, n)| CaseSummary {
                case_id: c.to_string(),
                slices: n,
            })
            .collect(),
    )
}

#[derive(Debug, Deserialize)]
struct SliceQuery {
    case: Option<String>,
    side: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SliceSummary {
    pub slice_id: String,
    pub case_id: String,
    pub side: String,
    pub slice_index: usize,
    pub has_overlay: bool,
}

async fn slices(State(s): State<Shared>, Query(q): Query<SliceQuery>) -> ApiResult<Json<Vec<SliceSummary>>> {
    let side = match q.side.as_deref() {
        None => None,
        Some(v) => Some(v.parse::<Side>().map_err(|e| bad_request(e.to_string()))?),
    };
    let out = s
        .order
        .iter()
        .map(|id| &s.slices[id])
        .filter(|r| q.case.as_deref().is_none_or(|c| r.case_id == c))
        .filter(|r| side.is_none_or(|sd| r.side == sd))
        .map(|r| SliceSummary {
            slice_id: r.slice_id.clone(),
            case_id: r.case_id.clone(),
            side: r.side.to_string(),
            slice_index: r.slice_index,
            has_overlay: overlay_path(&s.overlay_dir(), &r.slice_id).exists(),
        })
        .collect();
    Ok(Json(out))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

#[derive(Debug, Deserialize)]
struct ImageQuery {
    /// `png` (default) or `jpeg`.
    format: Option<String>,
}

async fn slice_image(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<ImageQuery>,
) -> ApiResult<Response> {
    let r = s.slices.get(&id).ok_or_else(|| not_found(format!("unknown slice {id}")))?;
    match q.format.as_deref().unwrap_or("png") {
        "png" => Ok(png(encode_png(&r.pixels).map_err(anyhow::Error::from)?)),
        "jpeg" | "jpg" => {
            let bytes = encode_jpeg(&r.pixels, 95).map_err(anyhow::Error::from)?;
            Ok(([(header::CONTENT_TYPE, "image/jpeg")], bytes).into_response())
        }
        other => Err(bad_request(format!("unsupported image format {other:?}"))),
    }
}

async fn slice_overlay(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    if !s.slices.contains_key(&id) {
        return Err(not_found(format!("unknown slice {id}")));
    }
    let path = overlay_path(&s.overlay_dir(), &id);
    let bytes = fs::read(&path).map_err(|_| not_found(format!("no overlay for {id}")))?;
    Ok(png(bytes))
}

#[derive(Debug, Deserialize)]
struct RecordQuery {
    reader: Option<String>,
    slice: Option<String>,
    /// Only labels without an unadjudicated 6.
    #[serde(default)]
    eligible: bool,
}

async fn get_labels(State(s): State<Shared>, Query(q): Query<RecordQuery>) -> Json<Vec<ArtifactLabel>> {
    let labels = s.store.lock().await.labels();
    Json(
        labels
            .into_iter()
            .filter(|l| q.reader.as_deref().is_none_or(|r| l.reader_id == r))
            .filter(|l| q.slice.as_deref().is_none_or(|id| l.slice_id == id))
            .filter(|l| !q.eligible || !l.has_ambiguous())
            .collect(),
    )
}

#[derive(Debug, Deserialize)]
struct WriteQuery {
    #[serde(default)]
    revise: bool,
}

async fn post_label(
    State(s): State<Shared>,
    Query(w): Query<WriteQuery>,
    body: std::result::Result<Json<ArtifactLabel>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<ArtifactLabel>)> {
    let Json(label) = body.map_err(|e| bad_request(e.body_text()))?;
    if label.resolved {
        return Err(bad_request("readers submit unresolved labels; use /api/adjudications"));
    }
    label.validate().map_err(|e| bad_request(e.to_string()))?;
    if !s.slices.contains_key(&label.slice_id) {
        return Err(not_found(format!("unknown slice {}", label.slice_id)));
    }
    let mut store = s.store.lock().await;
    let dup = store
        .raw_labels()
        .iter()
        .any(|l| l.slice_id == label.slice_id && l.reader_id == label.reader_id);
    if dup && !w.revise {
        return Err(ApiError(
            StatusCode::CONFLICT,
            format!("{} already labeled by {}; resubmit with ?revise=true", label.slice_id, label.reader_id),
        ));
    }
    store.labels.append(label.clone())?;
    Ok((StatusCode::CREATED, Json(label)))
}

async fn get_box_scores(State(s): State<Shared>, Query(q): Query<RecordQuery>) -> Json<Vec<BoxScore>> {
    let scores = s.store.lock().await.box_scores();
    Json(
        scores
            .into_iter()
            .filter(|b| q.reader.as_deref().is_none_or(|r| b.reader_id == r))
            .filter(|b| q.slice.as_deref().is_none_or(|id| b.slice_id == id))
            .collect(),
    )
}

async fn post_box_score(
    State(s): State<Shared>,
    Query(w): Query<WriteQuery>,
    body: std::result::Result<Json<BoxScore>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<BoxScore>)> {
    let Json(score) = body.map_err(|e| bad_request(e.body_text()))?;
    score.validate().map_err(|e| bad_request(e.to_string()))?;
    if !s.slices.contains_key(&score.slice_id) {
        return Err(not_found(format!("unknown slice {}", score.slice_id)));
    }
    let mut store = s.store.lock().await;
    let dup = store
        .box_scores()
        .iter()
        .any(|b| b.slice_id == score.slice_id && b.reader_id == score.reader_id);
    if dup && !w.revise {
        return Err(ApiError(
            StatusCode::CONFLICT,
            format!("{} already scored by {}; resubmit with ?revise=true", score.slice_id, score.reader_id),
        ));
    }
    store.box_scores.append(score.clone())?;
    Ok((StatusCode::CREATED, Json(score)))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct AdjudicationQueue {
    /// Slices with a 6 from any reader and no adjudication yet.
    pub pending: Vec<String>,
    pub done: Vec<Adjudication>,
}

async fn get_adjudications(State(s): State<Shared>) -> Json<AdjudicationQueue> {
    let store = s.store.lock().await;
    let done = store.adjudications();
    let mut pending: Vec<String> = store
        .labels()
        .into_iter()
        .filter(|l| l.has_ambiguous())
        .map(|l| l.slice_id)
        .collect();
    pending.dedup();
    Json(AdjudicationQueue { pending, done })
}

async fn post_adjudication(State(s): State<Shared>, body: std::result::Result<Json<Adjudication>, JsonRejection>) -> ApiResult<(StatusCode, Json<Adjudication>)> {
    let Json(adj) = body.map_err(|e| bad_request(e.body_text()))?;
    if !s.slices.contains_key(&adj.slice_id) {
        return Err(not_found(format!("unknown slice {}", adj.slice_id)));
    }
    for v in [adj.hyper_score, adj.hypo_score].into_iter().flatten() {
        if !(1..=5).contains(&v) {
            return Err(bad_request(format!("adjudicated score {v} outside 1-5")));
        }
    }
    let mut store = s.store.lock().await;
    let ambiguous: Vec<ArtifactLabel> = store
        .raw_labels()
        .into_iter()
        .filter(|l| l.slice_id == adj.slice_id && l.has_ambiguous())
        .collect();
    if ambiguous.is_empty() {
        return Err(ApiError(
            StatusCode::CONFLICT,
            format!("{} has no score of 6 to adjudicate", adj.slice_id),
        ));
    }
    resolve_ambiguous(&ambiguous, std::slice::from_ref(&adj)).map_err(|e| bad_request(e.to_string()))?;
    store.adjudications.append(adj.clone())?;
    Ok((StatusCode::CREATED, Json(adj)))
}

#[derive(Debug, Deserialize)]
struct AgreementQuery {
    reader_a: Option<String>,
    reader_b: Option<String>,
}

async fn agreement(State(s): State<Shared>, Query(q): Query<AgreementQuery>) -> ApiResult<Json<Vec<AgreementRow>>> {
    let store = s.store.lock().await;
    let labels = store.labels();
    let boxes = store.box_scores();
    drop(store);
    let pairs = match (q.reader_a, q.reader_b) {
        (Some(a), Some(b)) => vec![(a, b)],
        (None, None) => reader_pairs(labels.iter().map(|l| l.reader_id.as_str()).chain(boxes.iter().map(|b| b.reader_id.as_str()))),
        _ => return Err(bad_request("give both reader_a and reader_b, or neither")),
    };
    let mut rows = Vec::new();
    for (a, b) in pairs {
        if a == b {
            return Err(bad_request("reader_a and reader_b must differ"));
        }
        rows.extend(label_agreement(&labels, &a, &b, CiMethod::default())?);
        rows.extend(box_score_agreement(&boxes, &a, &b, CiMethod::default())?);
    }
    Ok(Json(rows))
}

fn csv_response(text: String) -> Response {
    ([(header::CONTENT_TYPE, "text/csv")], text).into_response()
}

async fn export_labels(State(s): State<Shared>, Query(q): Query<RecordQuery>) -> ApiResult<Response> {
    let labels: Vec<ArtifactLabel> = s
        .store
        .lock()
        .await
        .labels()
        .into_iter()
        .filter(|l| !q.eligible || !l.has_ambiguous())
        .collect();
    Ok(csv_response(encode_labels(&labels).map_err(anyhow::Error::from)?))
}

async fn export_box_scores(State(s): State<Shared>) -> ApiResult<Response> {
    let scores = s.store.lock().await.box_scores();
    Ok(csv_response(encode_labels(&scores).map_err(anyhow::Error::from)?))
}

pub async fn serve(layout: Layout, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let state = Arc::new(AppState::load(layout)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
