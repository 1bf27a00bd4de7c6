//! HTTP API over a loaded field and dataset: renders, pseudo-label previews
//! and test-time fine-tuning jobs.
//!
//! Readers work on immutable [`Snapshot`]s. A fine-tune job copies the
//! current field, optimizes the copy and publishes it as a new snapshot when
//! done, so renders issued meanwhile keep seeing the old parameters.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::cors::CorsLayer;

use nearview::data::Dataset;
use nearview::field::{render_image, RenderOptions, RenderedImage, VoxelRadianceField};
use nearview::geometry::{Intrinsics, Pose};
use nearview::pseudo::{build_label_for_pose, select_source_view, CloseupConfig, PseudoError, PseudoLabel, TrainingDepths};
use nearview::raster::Image;
use nearview::training::{build_testtime_labels, finetune_on_labels, TrainConfig, TrainError, TrainMode};

/// Max deviation from orthonormality accepted for wire poses.
pub const POSE_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub render: RenderOptions,
    pub closeup: CloseupConfig,
    /// Settings for fine-tune jobs; `mode` is forced to test-time.
    pub train: TrainConfig,
    /// Draft renders use intrinsics downscaled by this factor.
    pub draft_factor: u32,
    /// Where finished fine-tune jobs persist the new field.
    pub checkpoint_path: Option<PathBuf>,
    /// Adds permissive CORS headers so a viewer on another origin can call the API.
    pub permissive_cors: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let train = TrainConfig::for_mode(TrainMode::FinetuneTesttime);
        Self {
            render: train.render.without_jitter(),
            closeup: train.closeup,
            train,
            draft_factor: 4,
            checkpoint_path: None,
            permissive_cors: false,
        }
    }
}

/// Immutable view of the parameters that requests render against.
pub struct Snapshot {
    pub field: VoxelRadianceField,
    pub dataset: Arc<Dataset>,
    pub checkpoint_id: String,
    pub version: u64,
    depths: OnceLock<TrainingDepths>,
}

impl Snapshot {
    pub fn new(field: VoxelRadianceField, dataset: Arc<Dataset>, checkpoint_id: String, version: u64) -> Self {
        Self { field, dataset, checkpoint_id, version, depths: OnceLock::new() }
    }

    /// Training-view depths, rendered on first use.
    fn depths(&self, cfg: &ServiceConfig) -> &TrainingDepths {
        self.depths.get_or_init(|| TrainingDepths::render(&self.field, &self.dataset, &cfg.render, &cfg.closeup))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Render,
    Finetune,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    fn can_become(self, next: JobStatus) -> bool {
        matches!(
            (self, next),
            (JobStatus::Queued, JobStatus::Running) | (JobStatus::Running, JobStatus::Done | JobStatus::Failed)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: u64,
    pub kind: JobKind,
    pub status: JobStatus,
    pub poses: Vec<[f64; 12]>,
    pub progress: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("no checkpoint loaded")]
    NotLoaded,
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("job {0} not found")]
    NoSuchJob(u64),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::NotLoaded => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::NoSuchJob(_) => StatusCode::NOT_FOUND,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

struct Inner {
    config: ServiceConfig,
    snapshot: RwLock<Option<Arc<Snapshot>>>,
    jobs: Mutex<BTreeMap<u64, JobRecord>>,
    next_job: AtomicU64,
    writer_busy: AtomicBool,
}

/// Shared server state; cheap to clone.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self(Arc::new(Inner {
            config,
            snapshot: RwLock::new(None),
            jobs: Mutex::new(BTreeMap::new()),
            next_job: AtomicU64::new(1),
            writer_busy: AtomicBool::new(false),
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.0.config
    }

    /// Installs a field and dataset as snapshot version 0.
    pub fn load(&self, field: VoxelRadianceField, dataset: Dataset, checkpoint_id: impl Into<String>) {
        let snap = Snapshot::new(field, Arc::new(dataset), checkpoint_id.into(), 0);
        *self.0.snapshot.write().expect("snapshot lock") = Some(Arc::new(snap));
    }

    pub fn snapshot(&self) -> Option<Arc<Snapshot>> {
        self.0.snapshot.read().expect("snapshot lock").clone()
    }

    fn require_snapshot(&self) -> Result<Arc<Snapshot>, ApiError> {
        self.snapshot().ok_or(ApiError::NotLoaded)
    }

    pub fn job(&self, id: u64) -> Option<JobRecord> {
        self.0.jobs.lock().expect("jobs lock").get(&id).cloned()
    }

    fn new_job(&self, kind: JobKind, poses: Vec<[f64; 12]>) -> u64 {
        let id = self.0.next_job.fetch_add(1, Ordering::Relaxed);
        let rec = JobRecord { id, kind, status: JobStatus::Queued, poses, progress: 0.0, result: None, error: None };
        self.0.jobs.lock().expect("jobs lock").insert(id, rec);
        id
    }

    fn update_job(&self, id: u64, f: impl FnOnce(&mut JobRecord)) {
        if let Some(rec) = self.0.jobs.lock().expect("jobs lock").get_mut(&id) {
            f(rec);
        }
    }

    fn advance(&self, id: u64, next: JobStatus) {
        self.update_job(id, |r| {
            debug_assert!(r.status.can_become(next), "{:?} -> {next:?}", r.status);
            if r.status.can_become(next) {
                r.status = next;
                if next == JobStatus::Done {
                    r.progress = 1.0;
                }
            }
        });
    }
}

fn parse_pose(rows: &[f64]) -> Result<Pose, ApiError> {
    let rows: [f64; 12] = rows
        .try_into()
        .map_err(|_| ApiError::BadRequest(format!("pose needs 12 values (3x4 row-major), got {}", rows.len())))?;
    Pose::from_rows_orthonormalized(&rows, POSE_TOLERANCE).map_err(|e| ApiError::BadRequest(format!("bad pose: {e}")))
}

fn png_b64(img: &Image) -> String {
    B64.encode(img.to_png_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateResponse {
    pub intrinsics: Intrinsics,
    pub frame_count: usize,
    pub train_poses: Vec<[f64; 12]>,
    pub checkpoint_id: String,
    pub snapshot_version: u64,
}

async fn get_state(State(app): State<AppState>) -> Result<Json<StateResponse>, ApiError> {
    let snap = app.require_snapshot()?;
    let ds = &snap.dataset;
    Ok(Json(StateResponse {
        intrinsics: *ds.intrinsics(),
        frame_count: ds.manifest.frames.len(),
        train_poses: ds.train_indices().into_iter().map(|i| ds.pose(i).to_rows()).collect(),
        checkpoint_id: snap.checkpoint_id.clone(),
        snapshot_version: snap.version,
    }))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    #[default]
    Draft,
    Full,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    pub pose: Vec<f64>,
    #[serde(default)]
    pub quality: Quality,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthStats {
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
    pub valid_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderResponse {
    pub width: u32,
    pub height: u32,
    /// Base64 PNG, 8-bit RGB.
    pub image: String,
    pub depth_stats: DepthStats,
    pub opacity_mean: f64,
    pub snapshot_version: u64,
}

fn render_response(r: &RenderedImage, version: u64) -> RenderResponse {
    let valid: Vec<f64> = r.depth.values().iter().flatten().copied().collect();
    let n = r.depth.values().len().max(1) as f64;
    RenderResponse {
        width: r.rgb.width(),
        height: r.rgb.height(),
        image: png_b64(&r.rgb),
        depth_stats: DepthStats {
            min: valid.iter().copied().reduce(f64::min),
            max: valid.iter().copied().reduce(f64::max),
            mean: (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64),
            valid_fraction: valid.len() as f64 / n,
        },
        opacity_mean: r.opacity.iter().sum::<f64>() / r.opacity.len().max(1) as f64,
        snapshot_version: version,
    }
}

fn render_snapshot(snap: &Snapshot, pose: &Pose, k: &Intrinsics, opts: &RenderOptions) -> RenderResponse {
    render_response(&render_image(&snap.field, pose, k, opts, 0), snap.version)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobAccepted {
    pub job_id: u64,
}

async fn post_render(State(app): State<AppState>, Json(req): Json<RenderRequest>) -> Result<Response, ApiError> {
    let snap = app.require_snapshot()?;
    let pose = parse_pose(&req.pose)?;
    let opts = app.config().render;
    match req.quality {
        Quality::Draft => {
            let k = snap
                .dataset
                .intrinsics()
                .downscaled(app.config().draft_factor)
                .map_err(|e| ApiError::Internal(e.to_string()))?;
            let out = tokio::task::spawn_blocking(move || render_snapshot(&snap, &pose, &k, &opts))
                .await
                .map_err(|e| ApiError::Internal(e.to_string()))?;
            Ok(Json(out).into_response())
        }
        Quality::Full => {
            let id = app.new_job(JobKind::Render, vec![pose.to_rows()]);
            let job_app = app.clone();
            tokio::task::spawn_blocking(move || {
                job_app.advance(id, JobStatus::Running);
                let k = *snap.dataset.intrinsics();
                let out = render_snapshot(&snap, &pose, &k, &opts);
                job_app.update_job(id, |r| r.result = serde_json::to_value(out).ok());
                job_app.advance(id, JobStatus::Done);
            });
            Ok((StatusCode::ACCEPTED, Json(JobAccepted { job_id: id })).into_response())
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreviewRequest {
    pub pose: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreviewResponse {
    pub source_index: usize,
    /// Backward-warped label, base64 PNG.
    pub label: String,
    /// Consistency mask as a black/white base64 PNG.
    pub mask: String,
    pub valid_fraction: f64,
}

fn preview(app: &AppState, snap: &Snapshot, pose: &Pose) -> Result<PreviewResponse, ApiError> {
    let cfg = app.config();
    let ds = &snap.dataset;
    let depths = snap.depths(cfg);
    let source = select_source_view(depths, pose, ds.intrinsics()).map_err(|e| match e {
        PseudoError::NoOverlap => ApiError::Unprocessable("no overlap with any training view".into()),
        e => ApiError::Internal(e.to_string()),
    })?;
    let label = build_label_for_pose(&snap.field, ds, depths, pose, source, &cfg.closeup, &cfg.render)
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(PreviewResponse {
        source_index: source,
        label: png_b64(&label.image),
        mask: png_b64(&label.mask.to_image()),
        valid_fraction: label.valid_fraction,
    })
}

async fn post_pseudo_preview(
    State(app): State<AppState>,
    Json(req): Json<PreviewRequest>,
) -> Result<Json<PreviewResponse>, ApiError> {
    let snap = app.require_snapshot()?;
    let pose = parse_pose(&req.pose)?;
    let out = tokio::task::spawn_blocking(move || preview(&app, &snap, &pose))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(out))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneRequest {
    pub poses: Vec<Vec<f64>>,
    #[serde(default = "default_iterations_per_view")]
    pub iterations_per_view: usize,
}

fn default_iterations_per_view() -> usize {
    5
}

/// Pseudo-label agreement (masked PSNR against the label) before and after a job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseAgreement {
    pub pose_index: usize,
    pub source_index: Option<usize>,
    pub valid_fraction: Option<f64>,
    pub before: Option<f64>,
    pub after: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneResult {
    pub snapshot_version: u64,
    pub checkpoint_id: String,
    pub poses: Vec<PoseAgreement>,
}

/// Masked PSNR between a render at the label's pose and the label itself.
pub fn label_agreement(field: &VoxelRadianceField, label: &PseudoLabel, k: &Intrinsics, opts: &RenderOptions) -> Option<f64> {
    let supervised = label.supervised_pixels();
    if supervised.is_empty() {
        return None;
    }
    let pixels: Vec<(u32, u32)> = supervised.iter().map(|&(u, v, _)| (u, v)).collect();
    let rendered = nearview::field::render_pixels(field, &label.target_pose, k, &pixels, opts);
    let se: f64 = supervised
        .iter()
        .zip(&rendered)
        .map(|(&(_, _, t), r)| (0..3).map(|c| (r.color[c] - t[c]).powi(2)).sum::<f64>())
        .sum();
    let mse = se / (3 * pixels.len()) as f64;
    Some(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

fn run_finetune(app: &AppState, id: u64, snap: Arc<Snapshot>, poses: Vec<Pose>, iterations_per_view: usize) -> Result<FinetuneResult, String> {
    let cfg = app.config();
    let tcfg = TrainConfig { mode: TrainMode::FinetuneTesttime, iterations_per_view, ..cfg.train };
    let ds = &snap.dataset;
    let k = ds.intrinsics();
    let (labels, outcomes) = build_testtime_labels(&snap.field, ds, &poses, &tcfg).map_err(|e| e.to_string())?;
    let before: Vec<Option<f64>> = labels.iter().map(|l| label_agreement(&snap.field, l, k, &cfg.render)).collect();
    let progress = |done: usize, total: usize| app.update_job(id, |r| r.progress = done as f64 / total.max(1) as f64);
    let (field, _report) = finetune_on_labels(&snap.field, ds, &labels, outcomes.clone(), &tcfg, progress).map_err(|e| match e {
        TrainError::NoUsablePoses { .. } => "no usable pose: every label was rejected or had no overlap".to_string(),
        e => e.to_string(),
    })?;
    let after: Vec<Option<f64>> = labels.iter().map(|l| label_agreement(&field, l, k, &cfg.render)).collect();

    let mut used = before.into_iter().zip(after);
    let agreements = outcomes
        .iter()
        .map(|o| {
            let (before, after) = if o.skipped.is_none() { used.next().unwrap_or((None, None)) } else { (None, None) };
            PoseAgreement {
                pose_index: o.index,
                source_index: o.source_index,
                valid_fraction: o.valid_fraction,
                before,
                after,
                skipped: o.skipped.clone(),
            }
        })
        .collect();

    if let Some(path) = &cfg.checkpoint_path {
        field.save(path).map_err(|e| e.to_string())?;
    }
    let version = snap.version + 1;
    let checkpoint_id = format!("{}+ft{version}", snap.checkpoint_id.split("+ft").next().unwrap_or_default());
    let next = Snapshot::new(field, Arc::clone(&snap.dataset), checkpoint_id.clone(), version);
    *app.0.snapshot.write().expect("snapshot lock") = Some(Arc::new(next));
    Ok(FinetuneResult { snapshot_version: version, checkpoint_id, poses: agreements })
}

/// Clears the single-writer flag when the job ends, however it ends.
struct WriterGuard(AppState);

impl Drop for WriterGuard {
    fn drop(&mut self) {
        self.0 .0.writer_busy.store(false, Ordering::Release);
    }
}

async fn post_finetune(State(app): State<AppState>, Json(req): Json<FinetuneRequest>) -> Result<Response, ApiError> {
    let snap = app.require_snapshot()?;
    if req.poses.is_empty() {
        return Err(ApiError::BadRequest("pose list is empty".into()));
    }
    if req.iterations_per_view == 0 {
        return Err(ApiError::BadRequest("iterations_per_view must be at least 1".into()));
    }
    let poses = req.poses.iter().map(|p| parse_pose(p)).collect::<Result<Vec<_>, _>>()?;
    if app.0.writer_busy.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).is_err() {
        return Err(ApiError::Conflict("a fine-tune job is already running".into()));
    }
    let guard = WriterGuard(app.clone());
    let id = app.new_job(JobKind::Finetune, poses.iter().map(Pose::to_rows).collect());
    let job_app = app.clone();
    tokio::task::spawn_blocking(move || {
        let _guard = guard;
        job_app.advance(id, JobStatus::Running);
        match run_finetune(&job_app, id, snap, poses, req.iterations_per_view) {
            Ok(result) => {
                job_app.update_job(id, |r| r.result = serde_json::to_value(result).ok());
                job_app.advance(id, JobStatus::Done);
            }
            Err(msg) => {
                job_app.update_job(id, |r| r.error = Some(msg));
                job_app.advance(id, JobStatus::Failed);
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(JobAccepted { job_id: id })).into_response())
}

async fn get_job(State(app): State<AppState>, Path(id): Path<u64>) -> Result<Json<JobRecord>, ApiError> {
    app.job(id).map(Json).ok_or(ApiError::NoSuchJob(id))
}

pub fn router(app: AppState) -> Router {
    let cors = app.config().permissive_cors;
    let r = Router::new()
        .route("/api/state", get(get_state))
        .route("/api/render", post(post_render))
        .route("/api/pseudo_preview", post(post_pseudo_preview))
        .route("/api/finetune", post(post_finetune))
        .route("/api/job/{id}", get(get_job))
        .with_state(app);
    if cors {
        r.layer(CorsLayer::permissive())
    } else {
        r
    }
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(app: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(app)).await
}
