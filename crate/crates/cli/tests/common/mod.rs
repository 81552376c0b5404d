#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use carequeue_cli::commands::{default_hospital, synthetic_models};
use carequeue_cli::{router, AppState, Clock, QueueStore};
use carequeue_core::ForestModel;
use chrono::NaiveDate;
use http_body_util::BodyExt;
use tower::ServiceExt;

/// Small models for every task of the synthetic hospital, trained once.
pub fn models() -> &'static BTreeMap<String, ForestModel> {
    static MODELS: OnceLock<BTreeMap<String, ForestModel>> = OnceLock::new();
    MODELS.get_or_init(|| synthetic_models(3, 7, 8).expect("training"))
}

pub fn monday_morning() -> Clock {
    Clock::Fixed(NaiveDate::from_ymd_opt(2015, 10, 12).unwrap().and_hms_opt(9, 30, 0).unwrap())
}

pub fn app() -> (Router, Arc<QueueStore>) {
    let store = Arc::new(QueueStore::in_memory(default_hospital()).unwrap());
    let state = AppState::new(store.clone(), models().clone(), monday_morning()).unwrap();
    (router(Arc::new(state)), store)
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map_or_else(Body::empty, Body::from)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn call_json(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, serde_json::Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    let value = serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null);
    (status, value)
}
