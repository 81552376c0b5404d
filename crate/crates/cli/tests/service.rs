mod common;

use axum::http::StatusCode;
use common::{app, call, call_json};
use serde_json::json;

fn enqueue(id: &str, gender: &str, age: u32) -> String {
    json!({"op": "enqueue", "patient": {"patient_id": id, "gender": gender, "age": age}}).to_string()
}

fn op(kind: &str, id: &str) -> String {
    json!({"op": kind, "patient_id": id}).to_string()
}

#[tokio::test]
async fn healthz_is_ok() {
    let (app, _) = app();
    let (status, body) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"ok");
}

#[tokio::test]
async fn tasks_list_every_queue() {
    let (app, _) = app();
    let (status, body) = call_json(&app, "GET", "/tasks", None).await;
    assert_eq!(status, StatusCode::OK);
    let tasks = body.as_array().unwrap();
    assert_eq!(tasks.len(), 6);
    let ct = tasks.iter().find(|t| t["task_id"] == "CT").unwrap();
    assert_eq!(ct["windows"], 4);
    assert_eq!(ct["queue_length"], 0);
    assert_eq!(ct["revision"], 0);
}

#[tokio::test]
async fn enqueue_is_visible_with_next_revision() {
    let (app, _) = app();
    let (status, body) = call_json(&app, "POST", "/queues/CT/mutations", Some(enqueue("p1", "Male", 70))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["revision"], 1);
    let (status, view) = call_json(&app, "GET", "/queues/CT", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["revision"], 1);
    let patients = view["patients"].as_array().unwrap();
    assert_eq!(patients.len(), 1);
    assert_eq!(patients[0]["patient_id"], "p1");
    assert_eq!(patients[0]["status"], "waiting");
    assert!(patients[0]["predicted_min"].as_f64().unwrap() > 0.0);
}

#[tokio::test]
async fn queue_wait_is_total_over_windows() {
    let (app, _) = app();
    for (i, age) in [8, 35, 50, 77, 90].iter().enumerate() {
        call(&app, "POST", "/queues/CT/mutations", Some(enqueue(&format!("p{i}"), "Female", *age))).await;
    }
    let (_, view) = call_json(&app, "GET", "/queues/CT", None).await;
    let per_patient: f64 = view["patients"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["predicted_min"].as_f64().unwrap())
        .sum();
    let total = view["total_predicted_min"].as_f64().unwrap();
    // Each patient value is rounded separately.
    assert!((per_patient - total).abs() <= 0.05 * 5.0 + 1e-9);
    let wait = view["predicted_wait_min"].as_f64().unwrap();
    assert!((wait - total / 4.0).abs() <= 0.1 + 1e-9);
}

#[tokio::test]
async fn illegal_transitions_conflict() {
    let (app, _) = app();
    call(&app, "POST", "/queues/MR/mutations", Some(enqueue("p1", "Male", 40))).await;
    let (status, _) = call(&app, "POST", "/queues/MR/mutations", Some(op("complete", "p1"))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, "POST", "/queues/MR/mutations", Some(enqueue("p1", "Male", 40))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, body) = call_json(&app, "POST", "/queues/MR/mutations", Some(op("start_service", "p1"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["revision"], 2);
    let (status, _) = call(&app, "POST", "/queues/MR/mutations", Some(op("start_service", "p1"))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn unknown_targets_are_not_found() {
    let (app, _) = app();
    let (status, _) = call(&app, "GET", "/queues/dialysis", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/queues/dialysis/mutations", Some(enqueue("p1", "Male", 40))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/queues/CT/mutations", Some(op("start_service", "ghost"))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_bodies_are_bad_requests() {
    let (app, _) = app();
    let (status, _) = call(&app, "POST", "/queues/CT/mutations", Some("{\"op\":\"teleport\"}".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", "/recommend", Some("not json".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

fn request(tasks: &[&str], deps: &[(&str, &str)]) -> String {
    json!({
        "patient": {"patient_id": "me", "gender": "Female", "age": 45},
        "tasks": tasks,
        "dependencies": deps,
    })
    .to_string()
}

#[tokio::test]
async fn recommend_error_statuses() {
    let (app, _) = app();
    let (status, _) = call(&app, "POST", "/recommend", Some(request(&[], &[]))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", "/recommend", Some(request(&["CT", "dialysis"], &[]))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = call_json(
        &app,
        "POST",
        "/recommend",
        Some(request(&["CT", "MR"], &[("CT", "MR"), ("MR", "CT")])),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("CT -> MR -> CT"));
}

#[tokio::test]
async fn five_task_plan_orders_by_wait_and_respects_dependency() {
    let (app, _) = app();
    let load = [("checkup", 3), ("CT", 12), ("MR", 4), ("pharmacy", 6), ("payment", 1)];
    for (task, n) in load {
        for i in 0..n {
            let age = 20 + (i * 13) % 70;
            let body = enqueue(&format!("{task}-{i}"), if i % 2 == 0 { "Male" } else { "Female" }, age);
            let (status, _) = call(&app, "POST", &format!("/queues/{task}/mutations"), Some(body)).await;
            assert_eq!(status, StatusCode::OK);
        }
    }
    let tasks = ["checkup", "CT", "MR", "pharmacy", "payment"];
    let (status, plan) = call_json(&app, "POST", "/recommend", Some(request(&tasks, &[]))).await;
    assert_eq!(status, StatusCode::OK);
    let entries = plan["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 5);
    let waits: Vec<f64> = entries.iter().map(|e| e["predicted_wait_min"].as_f64().unwrap()).collect();
    assert!(waits.windows(2).all(|w| w[0] <= w[1]), "{waits:?}");
    let ct = entries.iter().find(|e| e["task"] == "CT").unwrap();
    assert_eq!(ct["queue_length"], 12);

    // Paying first is forced before the pharmacy visit.
    let (_, plan) = call_json(&app, "POST", "/recommend", Some(request(&tasks, &[("CT", "payment")]))).await;
    let order: Vec<&str> = plan["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["task"].as_str().unwrap())
        .collect();
    let pos = |t: &str| order.iter().position(|x| *x == t).unwrap();
    assert!(pos("CT") < pos("payment"), "{order:?}");
}

#[tokio::test]
async fn identical_requests_at_one_revision_match() {
    let (app, _) = app();
    call(&app, "POST", "/queues/CT/mutations", Some(enqueue("a", "Male", 60))).await;
    let body = request(&["CT", "MR", "payment"], &[("MR", "payment")]);
    let (_, first) = call(&app, "POST", "/recommend", Some(body.clone())).await;
    let (_, second) = call(&app, "POST", "/recommend", Some(body)).await;
    assert_eq!(first, second);
    let (_, q1) = call(&app, "GET", "/queues/CT", None).await;
    let (_, q2) = call(&app, "GET", "/queues/CT", None).await;
    assert_eq!(q1, q2);
}
