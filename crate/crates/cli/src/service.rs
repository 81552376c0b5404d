//! HTTP front end over the queue store and the per-task models.
//!
//! Handlers read one snapshot each, so a response always describes a single
//! revision. Waits are reported in minutes rounded to 0.1.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use carequeue_core::hqr::predict_queue_times;
use carequeue_core::{
    recommend, ForestModel, Gender, HqrError, PatientStatus, QueueContext, QueueState, TaskRequest,
};
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::store::{Mutation, QueueStore, Snapshot, StoreError};

/// Source of the timestamp that feeds the week-day and hour features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(NaiveDateTime),
}

impl Clock {
    pub fn now(&self) -> NaiveDateTime {
        match self {
            Clock::System => chrono::Local::now().naive_local(),
            Clock::Fixed(t) => *t,
        }
    }
}

pub struct AppState {
    pub store: Arc<QueueStore>,
    pub models: Arc<BTreeMap<String, ForestModel>>,
    pub clock: Clock,
}

impl AppState {
    /// Fails if a configured queue has no model.
    pub fn new(store: Arc<QueueStore>, models: BTreeMap<String, ForestModel>, clock: Clock) -> anyhow::Result<Self> {
        for c in store.configs() {
            if !models.contains_key(&c.task_id) {
                anyhow::bail!("no model for configured task `{}`", c.task_id);
            }
        }
        Ok(AppState {
            store,
            models: Arc::new(models),
            clock,
        })
    }
}

pub fn to_minutes(seconds: f64) -> f64 {
    (seconds / 6.0).round() / 10.0
}

/// Builds the predictor's view of one queue at `at`.
pub fn queue_state(snapshot: &Snapshot, task_id: &str, at: NaiveDateTime) -> Option<QueueState> {
    let q = snapshot.queues.get(task_id)?;
    Some(QueueState {
        task_id: task_id.to_string(),
        waiting: q.patients.clone(),
        windows: q.config.windows,
        context: QueueContext {
            at,
            department: q.config.department.clone(),
            doctor: q.config.doctor.clone(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: String,
    pub windows: u32,
    pub queue_length: usize,
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientView {
    pub patient_id: String,
    pub gender: Gender,
    pub age: u32,
    pub status: PatientStatus,
    pub predicted_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueView {
    pub task_id: String,
    pub windows: u32,
    pub revision: u64,
    pub at: NaiveDateTime,
    pub patients: Vec<PatientView>,
    pub total_predicted_min: f64,
    pub predicted_wait_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub task: String,
    pub predicted_wait_min: f64,
    pub queue_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResponse {
    pub revision: u64,
    pub entries: Vec<PlanRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionResponse {
    pub revision: u64,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

impl From<HqrError> for ApiError {
    fn from(e: HqrError) -> Self {
        let status = match e {
            HqrError::EmptyRequest | HqrError::DuplicateTask(_) | HqrError::UnknownDependency { .. } => {
                StatusCode::BAD_REQUEST
            }
            HqrError::MissingModel(_) | HqrError::MissingQueue(_) => StatusCode::NOT_FOUND,
            HqrError::Cycle(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::UnknownTask(_) | StoreError::UnknownPatient { .. } => StatusCode::NOT_FOUND,
            StoreError::DuplicatePatient { .. } | StoreError::IllegalTransition { .. } => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/tasks", get(list_tasks))
        .route("/queues/{task}", get(get_queue))
        .route("/queues/{task}/mutations", post(mutate_queue))
        .route("/recommend", post(post_recommend))
        .with_state(state)
}

async fn healthz() -> &'static str {
    "ok"
}

async fn list_tasks(State(state): State<Arc<AppState>>) -> Json<Vec<TaskSummary>> {
    let snap = state.store.snapshot();
    Json(
        snap.queues
            .values()
            .map(|q| TaskSummary {
                task_id: q.config.task_id.clone(),
                windows: q.config.windows,
                queue_length: q.patients.len(),
                revision: snap.revision,
            })
            .collect(),
    )
}

/// Queue detail for one snapshot.
pub fn queue_view(state: &AppState, snap: &Snapshot, task_id: &str) -> Result<QueueView, ApiError> {
    let at = state.clock.now();
    let queue = queue_state(snap, task_id, at)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown task `{task_id}`")))?;
    let model = state
        .models
        .get(task_id)
        .ok_or_else(|| ApiError::from(HqrError::MissingModel(task_id.to_string())))?;
    let times = predict_queue_times(model, &queue)?;
    let total = times.iter().fold(0.0, |a, t| a + t);
    let patients = queue
        .waiting
        .iter()
        .zip(&times)
        .map(|(p, t)| PatientView {
            patient_id: p.patient_id.clone(),
            gender: p.gender,
            age: p.age,
            status: p.status,
            predicted_min: to_minutes(*t),
        })
        .collect();
    Ok(QueueView {
        task_id: queue.task_id,
        windows: queue.windows,
        revision: snap.revision,
        at,
        patients,
        total_predicted_min: to_minutes(total),
        predicted_wait_min: to_minutes(total / f64::from(queue.windows)),
    })
}

async fn get_queue(State(state): State<Arc<AppState>>, Path(task): Path<String>) -> Result<Json<QueueView>, ApiError> {
    let snap = state.store.snapshot();
    tokio::task::spawn_blocking(move || queue_view(&state, &snap, &task).map(Json))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

/// Plan for one request against one snapshot.
pub fn plan(state: &AppState, snap: &Snapshot, request: &TaskRequest) -> Result<PlanResponse, ApiError> {
    let at = state.clock.now();
    let mut queues = BTreeMap::new();
    for t in &request.tasks {
        if let Some(q) = queue_state(snap, t, at) {
            queues.insert(t.clone(), q);
        }
    }
    let result = recommend(state.models.as_ref(), &queues, request)?;
    Ok(PlanResponse {
        revision: snap.revision,
        entries: result
            .entries
            .into_iter()
            .map(|e| PlanRow {
                task: e.task_id,
                predicted_wait_min: to_minutes(e.predicted_wait_s),
                queue_length: e.queue_length,
            })
            .collect(),
    })
}

async fn post_recommend(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<PlanResponse>, ApiError> {
    let request: TaskRequest = parse_body(&body)?;
    let snap = state.store.snapshot();
    tokio::task::spawn_blocking(move || plan(&state, &snap, &request).map(Json))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn mutate_queue(
    State(state): State<Arc<AppState>>,
    Path(task): Path<String>,
    body: Bytes,
) -> Result<Json<RevisionResponse>, ApiError> {
    let mutation: Mutation = parse_body(&body)?;
    tokio::task::spawn_blocking(move || state.store.mutate(&task, mutation))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map(|revision| Json(RevisionResponse { revision }))
        .map_err(ApiError::from)
}
