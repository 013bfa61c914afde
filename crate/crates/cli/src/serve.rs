//! The label service: queue, labels, suggestions, retraining and manual
//! cluster splits over one origin.
//!
//! Readers share a read lock; label submissions and splits take the write
//! lock and are applied in arrival order. Retraining works on a snapshot
//! outside the lock and swaps its results in under the write lock.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use idforge_core::active::{
    self, enqueue_for_labeling, ActiveConfig, ActiveError, Candidate, DisplayContext, LabelQueue, LabelStore,
    RelabelSuggestion,
};
use idforge_core::forest::{ForestModel, Hyperparameters};
use idforge_core::ingest::IdentityId;
use idforge_core::resolve::{self, IdentityCluster, Partition, ResolveError, SplitRecord};
use idforge_core::stats::Stoplist;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::RwLock;
use tower_http::services::ServeDir;

use crate::config::PipelineConfig;
use crate::session::{self, Corpus, PairSet};
use crate::store::{atomic_write, Store};
use crate::ServeArgs;

/// Immutable inputs shared by every request.
pub struct ServiceData {
    pub corpus: Corpus,
    pub pairs: PairSet,
    pub affiliations: BTreeMap<IdentityId, String>,
    pub stoplist: Stoplist,
    pub active: ActiveConfig,
    pub suggestion_confidence: f64,
    pub cluster_threshold: usize,
    /// Where queue, model, partition and split snapshots are written;
    /// `None` keeps them in memory.
    pub snapshot_dir: Option<PathBuf>,
}

/// Mutable session state behind the lock.
pub struct Session {
    pub queue: LabelQueue,
    pub labels: LabelStore,
    pub model: Option<ForestModel>,
    pub suggestions: Vec<RelabelSuggestion>,
    pub partition: Partition,
    pub round: u64,
}

pub struct AppState {
    pub data: Arc<ServiceData>,
    pub session: RwLock<Session>,
    pub retraining: AtomicBool,
}

pub type SharedState = Arc<AppState>;

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/api/queue", get(get_queue))
        .route("/api/labels", post(post_label))
        .route("/api/suggestions", get(get_suggestions))
        .route("/api/retrain", post(post_retrain))
        .route("/api/clusters", get(get_clusters))
        .route("/api/clusters/{id}/split", post(post_split))
        .with_state(state)
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn unprocessable(msg: impl ToString) -> ApiError {
    ApiError(StatusCode::UNPROCESSABLE_ENTITY, msg.to_string())
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

type ApiResult = Result<Response, ApiError>;

impl AppState {
    fn snapshot(&self, name: &str, bytes: &[u8]) -> Result<(), ApiError> {
        match &self.data.snapshot_dir {
            Some(dir) => atomic_write(&dir.join(name), bytes).map_err(internal),
            None => Ok(()),
        }
    }

    fn snapshot_queue(&self, q: &LabelQueue) -> Result<(), ApiError> {
        let mut b = Vec::new();
        q.write_json(&mut b).map_err(internal)?;
        self.snapshot(session::QUEUE, &b)
    }
}

#[derive(Deserialize)]
struct QueueParams {
    limit: Option<usize>,
}

const DEFAULT_QUEUE_LIMIT: usize = 50;

async fn get_queue(State(st): State<SharedState>, Query(q): Query<QueueParams>) -> ApiResult {
    let s = st.session.read().await;
    Ok(Json(s.queue.head(q.limit.unwrap_or(DEFAULT_QUEUE_LIMIT))).into_response())
}

#[derive(Deserialize)]
struct LabelRequest {
    pair_id: String,
    #[serde(rename = "match")]
    value: f64,
    canonical_id: Option<IdentityId>,
    rater: String,
}

async fn post_label(State(st): State<SharedState>, Json(req): Json<LabelRequest>) -> ApiResult {
    let key = active::parse_pair_id(&req.pair_id).map_err(unprocessable)?;
    if st.data.pairs.get(key).is_none() {
        return Err(ApiError(StatusCode::NOT_FOUND, format!("unknown pair {}", req.pair_id)));
    }
    if req.rater.trim().is_empty() {
        return Err(unprocessable("rater must not be empty"));
    }
    let mut s = st.session.write().await;
    s.labels
        .record(key, req.value, req.canonical_id, req.rater.trim())
        .map_err(|e| match e {
            ActiveError::Io(_) => internal(e),
            e => unprocessable(e),
        })?;
    if s.queue.remove(key) {
        st.snapshot_queue(&s.queue)?;
    }
    Ok(Json(json!({
        "store_size": s.labels.len(),
        "journal_size": s.labels.journal().len(),
        "queue_size": s.queue.len(),
    }))
    .into_response())
}

async fn get_suggestions(State(st): State<SharedState>) -> ApiResult {
    let s = st.session.read().await;
    Ok(Json(&s.suggestions).into_response())
}

struct RetrainGuard(SharedState);

impl Drop for RetrainGuard {
    fn drop(&mut self) {
        self.0.retraining.store(false, Ordering::Release);
    }
}

async fn post_retrain(State(st): State<SharedState>) -> ApiResult {
    if st
        .retraining
        .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
        .is_err()
    {
        return Err(ApiError(StatusCode::CONFLICT, "a retrain is already in flight".into()));
    }
    let _guard = RetrainGuard(st.clone());

    let (snapshot, round) = {
        let s = st.session.read().await;
        let mut b = Vec::new();
        s.labels.write_ndjson(&mut b).map_err(internal)?;
        let snap = LabelStore::replay(b.as_slice(), st.data.corpus.table.len()).map_err(internal)?;
        (snap, s.round + 1)
    };
    let data = st.data.clone();
    let built = tokio::task::spawn_blocking(move || {
        let cfg = ActiveConfig {
            hyperparameters: Hyperparameters {
                seed: data.active.hyperparameters.seed.wrapping_add(round * 7919),
                ..data.active.hyperparameters.clone()
            },
            ..data.active.clone()
        };
        session::build_queue(
            &data.corpus,
            &data.pairs,
            &data.affiliations,
            &snapshot,
            &cfg,
            data.suggestion_confidence,
        )
    })
    .await
    .map_err(internal)?
    .map_err(|e| match e.downcast_ref::<ActiveError>() {
        Some(ActiveError::InsufficientSeed { .. }) => unprocessable(e),
        _ => internal(e),
    })?;

    let mut s = st.session.write().await;
    let mut queue = built.queue;
    queue.entries.retain(|e| !s.labels.contains(e.key()));
    let mut model_bytes = Vec::new();
    built.model.write_json(&mut model_bytes).map_err(internal)?;
    st.snapshot_queue(&queue)?;
    st.snapshot(session::MODEL, &model_bytes)?;
    s.queue = queue;
    s.model = Some(built.model);
    s.suggestions = built.suggestions;
    s.round = round;
    Ok(Json(json!({
        "round": round,
        "region_size": built.region_size,
        "queue_size": s.queue.len(),
        "labels": s.labels.len(),
        "suggestions": s.suggestions.len(),
    }))
    .into_response())
}

#[derive(Deserialize)]
struct ClusterParams {
    min_size: Option<usize>,
}

async fn get_clusters(State(st): State<SharedState>, Query(q): Query<ClusterParams>) -> ApiResult {
    let k = q.min_size.unwrap_or(st.data.cluster_threshold);
    let s = st.session.read().await;
    let report = resolve::large_cluster_report(&s.partition, k, &st.data.corpus.table, &st.data.stoplist)
        .map_err(unprocessable)?;
    Ok(Json(report).into_response())
}

#[derive(Deserialize)]
struct SplitRequest {
    assignments: BTreeMap<IdentityId, u32>,
}

async fn post_split(State(st): State<SharedState>, Path(id): Path<u32>, Json(req): Json<SplitRequest>) -> ApiResult {
    let mut s = st.session.write().await;
    let mut next = s.partition.clone();
    let ids = next.apply_split(id, &req.assignments).map_err(|e| match e {
        ResolveError::UnknownCluster(_) => ApiError(StatusCode::NOT_FOUND, e.to_string()),
        e => unprocessable(e),
    })?;
    let canonicals = s.labels.canonicals();
    let counts = st.data.corpus.commit_counts();
    for &cid in ids.iter().filter(|&&c| c != id) {
        let members = next.cluster(cid).expect("split result").members.clone();
        let c = resolve::elect_canonical(&members, &canonicals, &st.data.corpus.table, &counts);
        next.set_canonical(cid, c).map_err(internal)?;
    }

    if let Some(dir) = &st.data.snapshot_dir {
        let record = SplitRecord {
            cluster_id: id,
            assignments: req.assignments.clone(),
        };
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(session::SPLITS))
            .map_err(internal)?;
        resolve::append_split(&f, &record).map_err(internal)?;
        f.sync_data().map_err(internal)?;
        let mut b = Vec::new();
        next.write_csv(&mut b).map_err(internal)?;
        st.snapshot(session::PARTITION, &b)?;
    }
    s.partition = next;
    let clusters: Vec<&IdentityCluster> = ids.iter().filter_map(|&c| s.partition.cluster(c)).collect();
    Ok(Json(json!({ "clusters": clusters, "entities": s.partition.len() })).into_response())
}

/// Queue used before enough labels exist for fold classifiers: every
/// unlabeled pair, scored by the saved model if there is one and by name
/// similarity otherwise.
pub fn cold_queue(data: &ServiceData, labels: &LabelStore, model: Option<&ForestModel>) -> Result<LabelQueue> {
    let name_col = data.pairs.names.iter().position(|n| n == "jw_name").unwrap_or(0);
    let mut candidates = Vec::new();
    for p in data.pairs.pairs.iter().filter(|p| !labels.contains(p.key())) {
        let probability = match model {
            Some(m) => m.probability(&p.values)?,
            None => p.values.get(name_col).copied().unwrap_or(0.5).clamp(0.0, 1.0),
        };
        candidates.push(Candidate {
            pair: p,
            votes: Vec::new(),
            probability,
        });
    }
    let ctx = DisplayContext {
        table: &data.corpus.table,
        activity: &data.corpus.activity,
        affiliations: &data.affiliations,
        feature_names: &data.pairs.names,
    };
    Ok(enqueue_for_labeling(&candidates, &ctx)?)
}

/// Loads the store's artifacts into a service state.
pub fn load_state(cfg: &PipelineConfig, store: &Store) -> Result<SharedState> {
    let corpus = session::load_corpus(store)?;
    let pairs = session::load_pairs(store)?;
    let affiliations = session::load_affiliations(cfg, &corpus.table)?;
    let stoplist = session::load_stoplist(store)?;
    let labels = LabelStore::open(&session::labels_path(cfg, store), corpus.table.len())?;
    let model_path = session::model_path(cfg, store);
    let model = if model_path.is_file() {
        Some(session::load_model(cfg, store)?)
    } else {
        None
    };
    let partition = match store.path(session::PARTITION) {
        p if p.is_file() => Partition::read_csv(session::open(&p)?).with_context(|| format!("reading {}", p.display()))?,
        _ => Partition::singletons(0..corpus.table.len() as IdentityId),
    };
    let data = ServiceData {
        corpus,
        pairs,
        affiliations,
        stoplist,
        active: cfg.active_config(),
        suggestion_confidence: cfg.active.suggestion_confidence,
        cluster_threshold: cfg.resolve.cluster_threshold,
        snapshot_dir: Some(store.root().to_path_buf()),
    };
    let qp = store.path(session::QUEUE);
    let mut queue = if qp.is_file() {
        LabelQueue::read_json(session::open(&qp)?).with_context(|| format!("reading {}", qp.display()))?
    } else {
        cold_queue(&data, &labels, model.as_ref())?
    };
    queue.entries.retain(|e| !labels.contains(e.key()));
    Ok(new_state(data, labels, model, partition, queue))
}

pub fn new_state(
    data: ServiceData,
    labels: LabelStore,
    model: Option<ForestModel>,
    partition: Partition,
    queue: LabelQueue,
) -> SharedState {
    Arc::new(AppState {
        data: Arc::new(data),
        session: RwLock::new(Session {
            queue,
            labels,
            model,
            suggestions: Vec::new(),
            partition,
            round: 0,
        }),
        retraining: AtomicBool::new(false),
    })
}

/// The API router, with the UI build served at `/` when given.
pub fn app(state: SharedState, ui: Option<&std::path::Path>) -> Router {
    let r = router(state);
    match ui {
        Some(dir) => r.fallback_service(ServeDir::new(dir)),
        None => r,
    }
}

pub fn run(cfg: PipelineConfig, store: Store, args: &ServeArgs) -> Result<()> {
    let state = load_state(&cfg, &store)?;
    let app = app(state, args.ui.as_deref());
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("cannot start runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&args.bind)
            .await
            .with_context(|| format!("cannot bind {}", args.bind))?;
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("server error")
    })
}
