//! Queue wait prediction and treatment-order recommendation.
//!
//! A task's expected wait is the predicted service time of everyone ahead of
//! the patient (waiting or already in service) divided by the number of
//! parallel windows. A patient's tasks are ordered by ascending wait, then
//! prerequisites are pulled in front of the tasks that depend on them.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::{Datelike, NaiveDateTime, Timelike};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::HqrError;
use crate::forest::ForestModel;
use crate::records::{FeatureInput, Gender, MAX_AGE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatientStatus {
    #[default]
    Waiting,
    InService,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientDescriptor {
    pub patient_id: String,
    pub gender: Gender,
    pub age: u32,
    #[serde(default)]
    pub status: PatientStatus,
}

impl PatientDescriptor {
    pub fn new(patient_id: impl Into<String>, gender: Gender, age: u32) -> Self {
        PatientDescriptor {
            patient_id: patient_id.into(),
            gender,
            age: age.min(MAX_AGE),
            status: PatientStatus::Waiting,
        }
    }
}

/// Where and when a queue is being served.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueContext {
    pub at: NaiveDateTime,
    pub department: String,
    pub doctor: Option<String>,
}

impl QueueContext {
    pub fn feature_input(&self, patient: &PatientDescriptor) -> FeatureInput {
        FeatureInput {
            gender: patient.gender,
            age: patient.age,
            department: self.department.clone(),
            doctor: self.doctor.clone(),
            week_day: self.at.weekday(),
            hour_of_day: self.at.hour(),
        }
    }
}

/// Snapshot of one task's queue. `waiting` is in arrival order and includes
/// patients currently in service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    pub task_id: String,
    pub waiting: Vec<PatientDescriptor>,
    pub windows: u32,
    pub context: QueueContext,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub patient: PatientDescriptor,
    pub tasks: Vec<String>,
    /// `(before, after)`: `after` may only start once `before` is done.
    #[serde(default)]
    pub dependencies: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub task_id: String,
    pub predicted_wait_s: f64,
    pub queue_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationPlan {
    pub entries: Vec<PlanEntry>,
}

impl RecommendationPlan {
    pub fn task_order(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.task_id.as_str()).collect()
    }
}

/// Anything that predicts one patient's service time in seconds.
pub trait TimePredictor {
    fn predict_time(&self, input: &FeatureInput) -> Result<f64, HqrError>;
}

impl TimePredictor for ForestModel {
    fn predict_time(&self, input: &FeatureInput) -> Result<f64, HqrError> {
        Ok(self.predict_input(input)?)
    }
}

impl<T: TimePredictor + ?Sized> TimePredictor for &T {
    fn predict_time(&self, input: &FeatureInput) -> Result<f64, HqrError> {
        (**self).predict_time(input)
    }
}

impl<T: TimePredictor + ?Sized> TimePredictor for Arc<T> {
    fn predict_time(&self, input: &FeatureInput) -> Result<f64, HqrError> {
        (**self).predict_time(input)
    }
}

/// Predicted service time of one patient at a queue.
pub fn predict_patient_time<P: TimePredictor>(
    model: &P,
    patient: &PatientDescriptor,
    context: &QueueContext,
) -> Result<f64, HqrError> {
    model.predict_time(&context.feature_input(patient))
}

/// Predicted service times of everyone in the queue, in queue order.
pub fn predict_queue_times<P: TimePredictor>(model: &P, queue: &QueueState) -> Result<Vec<f64>, HqrError> {
    queue
        .waiting
        .iter()
        .map(|p| predict_patient_time(model, p, &queue.context))
        .collect()
}

/// Sum of predicted service times over the queue divided by its windows.
pub fn predict_queue_wait<P: TimePredictor>(model: &P, queue: &QueueState) -> Result<f64, HqrError> {
    if queue.windows == 0 {
        return Err(HqrError::NoWindows(queue.task_id.clone()));
    }
    let total = predict_queue_times(model, queue)?.iter().fold(0.0, |a, t| a + t);
    Ok(total / queue.windows as f64)
}

fn validate_request(request: &TaskRequest) -> Result<(), HqrError> {
    if request.tasks.is_empty() {
        return Err(HqrError::EmptyRequest);
    }
    let mut seen = BTreeSet::new();
    for t in &request.tasks {
        if !seen.insert(t.as_str()) {
            return Err(HqrError::DuplicateTask(t.clone()));
        }
    }
    for (a, b) in &request.dependencies {
        if !seen.contains(a.as_str()) || !seen.contains(b.as_str()) {
            return Err(HqrError::UnknownDependency {
                before: a.clone(),
                after: b.clone(),
            });
        }
    }
    if let Some(cycle) = find_cycle(&request.tasks, &request.dependencies) {
        return Err(HqrError::Cycle(cycle));
    }
    Ok(())
}

/// A dependency cycle as a closed path (`a -> b -> a`), if one exists.
pub fn find_cycle(tasks: &[String], dependencies: &[(String, String)]) -> Option<Vec<String>> {
    let mut next: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in dependencies {
        next.entry(a.as_str()).or_default().push(b.as_str());
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state: BTreeMap<&str, u8> = BTreeMap::new();
    fn visit<'a>(
        node: &'a str,
        next: &BTreeMap<&'a str, Vec<&'a str>>,
        state: &mut BTreeMap<&'a str, u8>,
        path: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        state.insert(node, 1);
        path.push(node);
        for &n in next.get(node).map(Vec::as_slice).unwrap_or(&[]) {
            match state.get(n).copied().unwrap_or(0) {
                1 => {
                    let start = path.iter().position(|&p| p == n).expect("on stack");
                    let mut cycle: Vec<String> = path[start..].iter().map(|s| s.to_string()).collect();
                    cycle.push(n.to_string());
                    return Some(cycle);
                }
                0 => {
                    if let Some(c) = visit(n, next, state, path) {
                        return Some(c);
                    }
                }
                _ => {}
            }
        }
        path.pop();
        state.insert(node, 2);
        None
    }
    let mut roots: Vec<&str> = tasks.iter().map(String::as_str).collect();
    roots.extend(dependencies.iter().map(|(a, _)| a.as_str()));
    for root in roots {
        if state.get(root).copied().unwrap_or(0) == 0 {
            if let Some(c) = visit(root, &next, &mut state, &mut Vec::new()) {
                return Some(c);
            }
        }
    }
    None
}

/// Orders tasks by ascending wait (ties by task id), then emits every task's
/// unplaced prerequisites immediately before it, keeping the ascending order
/// among everything else. Returns indices into `waits`.
pub fn order_by_wait(waits: &[(String, f64)], dependencies: &[(String, String)]) -> Result<Vec<usize>, HqrError> {
    let names: Vec<String> = waits.iter().map(|(t, _)| t.clone()).collect();
    if let Some(cycle) = find_cycle(&names, dependencies) {
        return Err(HqrError::Cycle(cycle));
    }
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let mut sorted: Vec<usize> = (0..waits.len()).collect();
    sorted.sort_by(|&a, &b| waits[a].1.total_cmp(&waits[b].1).then_with(|| waits[a].0.cmp(&waits[b].0)));
    let rank: Vec<usize> = {
        let mut r = vec![0; waits.len()];
        for (pos, &i) in sorted.iter().enumerate() {
            r[i] = pos;
        }
        r
    };
    let mut prereqs: Vec<Vec<usize>> = vec![Vec::new(); waits.len()];
    for (a, b) in dependencies {
        if let (Some(&ia), Some(&ib)) = (index.get(a.as_str()), index.get(b.as_str())) {
            prereqs[ib].push(ia);
        }
    }
    for p in &mut prereqs {
        p.sort_by_key(|&i| rank[i]);
        p.dedup();
    }

    fn emit(i: usize, prereqs: &[Vec<usize>], placed: &mut [bool], out: &mut Vec<usize>) {
        if placed[i] {
            return;
        }
        placed[i] = true;
        for &p in &prereqs[i] {
            emit(p, prereqs, placed, out);
        }
        out.push(i);
    }
    // `placed` is set before recursing, which is safe because the graph is acyclic.
    let mut placed = vec![false; waits.len()];
    let mut out = Vec::with_capacity(waits.len());
    for &i in &sorted {
        emit(i, &prereqs, &mut placed, &mut out);
    }
    Ok(out)
}

/// Builds the plan for one patient against a snapshot of the live queues.
/// Per-task waits are evaluated concurrently.
pub fn recommend<P: TimePredictor + Sync>(
    models: &BTreeMap<String, P>,
    queues: &BTreeMap<String, QueueState>,
    request: &TaskRequest,
) -> Result<RecommendationPlan, HqrError> {
    validate_request(request)?;
    for t in &request.tasks {
        if !models.contains_key(t) {
            return Err(HqrError::MissingModel(t.clone()));
        }
        if !queues.contains_key(t) {
            return Err(HqrError::MissingQueue(t.clone()));
        }
    }
    let waits: Vec<(String, f64, usize)> = request
        .tasks
        .par_iter()
        .map(|t| {
            let queue = &queues[t];
            let wait = predict_queue_wait(&models[t], queue)?;
            Ok((t.clone(), wait, queue.waiting.len()))
        })
        .collect::<Result<_, HqrError>>()?;
    let keyed: Vec<(String, f64)> = waits.iter().map(|(t, w, _)| (t.clone(), *w)).collect();
    let order = order_by_wait(&keyed, &request.dependencies)?;
    Ok(RecommendationPlan {
        entries: order
            .into_iter()
            .map(|i| PlanEntry {
                task_id: waits[i].0.clone(),
                predicted_wait_s: waits[i].1,
                queue_length: waits[i].2,
            })
            .collect(),
    })
}
