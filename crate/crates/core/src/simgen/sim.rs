use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};
use std::sync::Mutex;

use chrono::{Duration, NaiveDateTime};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generator::{
    draw_patient, draw_service_s, draw_time_of_day, expected_service_s, is_weekend, GeneratorConfig,
};
use crate::error::HqrError;
use crate::forest::ForestModel;
use crate::hqr::{
    recommend, PatientDescriptor, PatientStatus, QueueContext, QueueState, TaskRequest, TimePredictor,
};
use crate::records::FeatureInput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Re-plan with the recommender on arrival and after every completed task.
    Hqr,
    /// Visit tasks in the order they were listed.
    FifoFixedOrder,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Hqr => "hqr",
            Policy::FifoFixedOrder => "fifo_fixed_order",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub patients: usize,
    pub tasks_per_patient: usize,
    pub policy: Policy,
    /// Chance that a patient's consecutive listed tasks depend on each other.
    pub dependency_fraction: f64,
    /// Calendar days from the generator's start date over which arrivals are
    /// spread (weekends damped as in the history).
    pub days: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            patients: 1000,
            tasks_per_patient: 4,
            policy: Policy::Hqr,
            dependency_fraction: 0.3,
            days: 5,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, gen: &GeneratorConfig) -> Result<(), String> {
        if !(2..=6).contains(&self.tasks_per_patient) {
            return Err("tasks_per_patient must lie in [2, 6]".into());
        }
        if self.tasks_per_patient > gen.tasks.len() {
            return Err(format!(
                "tasks_per_patient {} exceeds the {} configured tasks",
                self.tasks_per_patient,
                gen.tasks.len()
            ));
        }
        if !(0.0..=1.0).contains(&self.dependency_fraction) {
            return Err("dependency_fraction must lie in [0, 1]".into());
        }
        if self.days == 0 {
            return Err("days must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTask {
    pub task_id: String,
    pub windows: u32,
    pub department: String,
    pub doctor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPatient {
    pub descriptor: PatientDescriptor,
    /// Seconds after the scenario start.
    pub arrival_s: f64,
    /// Tasks in listed order.
    pub tasks: Vec<String>,
    pub dependencies: Vec<(String, String)>,
    /// Service time per task, aligned with `tasks`.
    pub durations_s: Vec<f64>,
}

/// Fully drawn simulation input. Both policies replay the same scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub start: NaiveDateTime,
    pub tasks: Vec<ScenarioTask>,
    pub patients: Vec<ScenarioPatient>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceInterval {
    pub patient: usize,
    pub task: String,
    pub window: u32,
    pub queued_s: f64,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub policy: Policy,
    pub tasks_per_patient: usize,
    pub patients: usize,
    /// Mean over patients of their summed queueing time.
    pub average_wait_min: f64,
    /// Busy time over `windows × span` per task.
    pub utilization: BTreeMap<String, f64>,
    /// First arrival to last departure.
    pub span_s: f64,
    pub trace: Vec<ServiceInterval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyComparison {
    pub tasks_per_patient: usize,
    pub avg_wait_hqr_min: f64,
    pub avg_wait_without_min: f64,
}

/// Caches forest predictions; a simulation asks for the same patient over
/// and over while they sit in a queue.
pub struct MemoizedModel<'a> {
    model: &'a ForestModel,
    cache: Mutex<HashMap<FeatureInput, f64>>,
}

impl<'a> MemoizedModel<'a> {
    pub fn new(model: &'a ForestModel) -> Self {
        MemoizedModel {
            model,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl TimePredictor for MemoizedModel<'_> {
    fn predict_time(&self, input: &FeatureInput) -> Result<f64, HqrError> {
        if let Some(&v) = self.cache.lock().expect("cache lock").get(input) {
            return Ok(v);
        }
        let v = self.model.predict_input(input)?;
        self.cache.lock().expect("cache lock").insert(input.clone(), v);
        Ok(v)
    }
}

/// Draws arrivals, patient attributes, task lists and service times.
///
/// Patient attributes and arrivals depend only on `sim.seed`; each patient's
/// task permutation and per-task service draws come from a private stream, so
/// a larger `tasks_per_patient` extends rather than reshuffles the lists.
/// Dependencies only link consecutive listed tasks, so the listed order always
/// satisfies them.
pub fn build_scenario(sim: &SimConfig, gen: &GeneratorConfig) -> Result<Scenario, String> {
    gen.validate()?;
    sim.validate(gen)?;
    let start = gen.start_date.and_hms_opt(0, 0, 0).expect("midnight");
    let hours = WeightedIndex::new(gen.arrivals.hourly_weights).map_err(|e| e.to_string())?;
    let day_weights: Vec<f64> = (0..sim.days)
        .map(|d| {
            let date = gen.start_date + Duration::days(d as i64);
            if is_weekend(date) {
                gen.arrivals.weekend_damping
            } else {
                1.0
            }
        })
        .collect();
    let day_pick = WeightedIndex::new(&day_weights).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let mut arrivals: Vec<(f64, crate::records::Gender, u32)> = (0..sim.patients)
        .map(|_| {
            let (gender, age) = draw_patient(&mut rng);
            let day = day_pick.sample(&mut rng) as i64;
            ((day * 86_400 + draw_time_of_day(&mut rng, &hours)) as f64, gender, age)
        })
        .collect();
    arrivals.sort_by(|a, b| a.0.total_cmp(&b.0));

    let n_tasks = gen.tasks.len();
    let patients = arrivals
        .into_iter()
        .enumerate()
        .map(|(i, (arrival_s, gender, age))| {
            let mut own = ChaCha8Rng::seed_from_u64(sim.seed);
            own.set_stream(i as u64 + 1);
            let mut perm: Vec<usize> = (0..n_tasks).collect();
            perm.shuffle(&mut own);
            let durations: Vec<f64> = gen
                .tasks
                .iter()
                .map(|t| draw_service_s(&mut own, expected_service_s(t, gender, age, 0), t.service_sigma))
                .collect();
            let links: Vec<f64> = (0..n_tasks).map(|_| own.random::<f64>()).collect();
            // The prefix of the permutation is the patient's listed order.
            let chosen = &perm[..sim.tasks_per_patient];
            let tasks: Vec<String> = chosen.iter().map(|&t| gen.tasks[t].task_id.clone()).collect();
            let dependencies = chosen
                .windows(2)
                .filter(|w| links[w[1]] < sim.dependency_fraction)
                .map(|w| (gen.tasks[w[0]].task_id.clone(), gen.tasks[w[1]].task_id.clone()))
                .collect();
            ScenarioPatient {
                descriptor: PatientDescriptor::new(format!("S{:05}", i + 1), gender, age),
                arrival_s,
                tasks,
                dependencies,
                durations_s: chosen.iter().map(|&t| durations[t]).collect(),
            }
        })
        .collect();
    Ok(Scenario {
        start,
        tasks: gen
            .tasks
            .iter()
            .map(|t| ScenarioTask {
                task_id: t.task_id.clone(),
                windows: t.windows,
                department: t.department.clone(),
                doctor: t.doctors.first().cloned(),
            })
            .collect(),
        patients,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Arrival(usize),
    ServiceEnd { task: usize, window: usize },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed: BinaryHeap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

struct TaskState {
    queue: VecDeque<(usize, f64)>,
    windows: Vec<Option<(usize, f64)>>,
    busy_s: f64,
}

struct PatientState {
    done: Vec<bool>,
    wait_s: f64,
}

struct Run<'a, P> {
    scenario: &'a Scenario,
    policy: Policy,
    predictors: &'a BTreeMap<String, P>,
    task_index: HashMap<&'a str, usize>,
    tasks: Vec<TaskState>,
    patients: Vec<PatientState>,
    events: BinaryHeap<Event>,
    seq: u64,
    trace: Vec<ServiceInterval>,
}

impl<'a, P: TimePredictor + Sync> Run<'a, P> {
    fn push(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn start_services(&mut self, task: usize, now: f64) {
        let state = &mut self.tasks[task];
        while let Some(window) = state.windows.iter().position(Option::is_none) {
            let Some((patient, queued)) = state.queue.pop_front() else { break };
            let p = &self.scenario.patients[patient];
            let slot = p
                .tasks
                .iter()
                .position(|t| t == &self.scenario.tasks[task].task_id)
                .expect("patient queued for a listed task");
            let end = now + p.durations_s[slot];
            state.windows[window] = Some((patient, queued));
            state.busy_s += end - now;
            self.patients[patient].wait_s += now - queued;
            self.trace.push(ServiceInterval {
                patient,
                task: self.scenario.tasks[task].task_id.clone(),
                window: window as u32,
                queued_s: queued,
                start_s: now,
                end_s: end,
            });
            self.seq += 1;
            self.events.push(Event {
                time: end,
                seq: self.seq,
                kind: EventKind::ServiceEnd { task, window },
            });
        }
    }

    fn queue_view(&self, task: usize, now: f64) -> QueueState {
        let t = &self.scenario.tasks[task];
        let state = &self.tasks[task];
        let descriptor = |p: usize, status| PatientDescriptor {
            status,
            ..self.scenario.patients[p].descriptor.clone()
        };
        let mut waiting: Vec<PatientDescriptor> = state
            .windows
            .iter()
            .flatten()
            .map(|&(p, _)| descriptor(p, PatientStatus::InService))
            .collect();
        waiting.extend(state.queue.iter().map(|&(p, _)| descriptor(p, PatientStatus::Waiting)));
        QueueState {
            task_id: t.task_id.clone(),
            waiting,
            windows: t.windows,
            context: QueueContext {
                at: self.scenario.start + Duration::milliseconds((now * 1000.0) as i64),
                department: t.department.clone(),
                doctor: t.doctor.clone(),
            },
        }
    }

    /// Slot (index into the patient's task list) to visit next, if any remain.
    fn next_slot(&self, patient: usize, now: f64) -> Result<Option<usize>, HqrError> {
        let p = &self.scenario.patients[patient];
        let done = &self.patients[patient].done;
        let remaining: Vec<usize> = (0..p.tasks.len()).filter(|&i| !done[i]).collect();
        if remaining.is_empty() {
            return Ok(None);
        }
        if self.policy == Policy::FifoFixedOrder || remaining.len() == 1 {
            return Ok(Some(remaining[0]));
        }
        let open: Vec<String> = remaining.iter().map(|&i| p.tasks[i].clone()).collect();
        let dependencies = p
            .dependencies
            .iter()
            .filter(|(a, b)| open.contains(a) && open.contains(b))
            .cloned()
            .collect();
        let queues: BTreeMap<String, QueueState> = open
            .iter()
            .map(|t| (t.clone(), self.queue_view(self.task_index[t.as_str()], now)))
            .collect();
        let request = TaskRequest {
            patient: p.descriptor.clone(),
            tasks: open,
            dependencies,
        };
        let plan = recommend(self.predictors, &queues, &request)?;
        let first = &plan.entries[0].task_id;
        Ok(remaining.into_iter().find(|&i| &p.tasks[i] == first))
    }

    fn dispatch(&mut self, patient: usize, now: f64) -> Result<(), HqrError> {
        if let Some(slot) = self.next_slot(patient, now)? {
            let task = self.task_index[self.scenario.patients[patient].tasks[slot].as_str()];
            self.tasks[task].queue.push_back((patient, now));
            self.start_services(task, now);
        }
        Ok(())
    }
}

/// Runs the event loop over a prepared scenario. `predictors` is only
/// consulted under [`Policy::Hqr`] and must then cover every task.
pub fn run_scenario<P: TimePredictor + Sync>(
    scenario: &Scenario,
    policy: Policy,
    predictors: &BTreeMap<String, P>,
) -> Result<SimResult, HqrError> {
    let task_index: HashMap<&str, usize> = scenario
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (t.task_id.as_str(), i))
        .collect();
    for p in &scenario.patients {
        for t in &p.tasks {
            if !task_index.contains_key(t.as_str()) {
                return Err(HqrError::MissingQueue(t.clone()));
            }
            if policy == Policy::Hqr && !predictors.contains_key(t) {
                return Err(HqrError::MissingModel(t.clone()));
            }
        }
    }
    let mut run = Run {
        scenario,
        policy,
        predictors,
        task_index,
        tasks: scenario
            .tasks
            .iter()
            .map(|t| TaskState {
                queue: VecDeque::new(),
                windows: vec![None; t.windows as usize],
                busy_s: 0.0,
            })
            .collect(),
        patients: scenario
            .patients
            .iter()
            .map(|p| PatientState {
                done: vec![false; p.tasks.len()],
                wait_s: 0.0,
            })
            .collect(),
        events: BinaryHeap::new(),
        seq: 0,
        trace: Vec::new(),
    };
    for (i, p) in scenario.patients.iter().enumerate() {
        run.push(p.arrival_s, EventKind::Arrival(i));
    }
    let mut last = f64::NEG_INFINITY;
    while let Some(event) = run.events.pop() {
        let now = event.time;
        last = now;
        match event.kind {
            EventKind::Arrival(patient) => run.dispatch(patient, now)?,
            EventKind::ServiceEnd { task, window } => {
                let (patient, _) = run.tasks[task].windows[window].take().expect("window was busy");
                let id = &scenario.tasks[task].task_id;
                let slot = scenario.patients[patient]
                    .tasks
                    .iter()
                    .position(|t| t == id)
                    .expect("listed task");
                run.patients[patient].done[slot] = true;
                run.start_services(task, now);
                run.dispatch(patient, now)?;
            }
        }
    }

    let first = scenario
        .patients
        .iter()
        .map(|p| p.arrival_s)
        .fold(f64::INFINITY, f64::min);
    let span_s = if scenario.patients.is_empty() { 0.0 } else { last - first };
    let utilization = scenario
        .tasks
        .iter()
        .zip(&run.tasks)
        .map(|(t, s)| {
            let u = if span_s > 0.0 {
                s.busy_s / (t.windows as f64 * span_s)
            } else {
                0.0
            };
            (t.task_id.clone(), u)
        })
        .collect();
    let n = scenario.patients.len();
    let average_wait_min = if n == 0 {
        0.0
    } else {
        run.patients.iter().map(|p| p.wait_s).sum::<f64>() / n as f64 / 60.0
    };
    Ok(SimResult {
        policy,
        tasks_per_patient: scenario.patients.iter().map(|p| p.tasks.len()).max().unwrap_or(0),
        patients: n,
        average_wait_min,
        utilization,
        span_s,
        trace: run.trace,
    })
}

fn memoized(models: &BTreeMap<String, ForestModel>) -> BTreeMap<String, MemoizedModel<'_>> {
    models.iter().map(|(k, m)| (k.clone(), MemoizedModel::new(m))).collect()
}

/// One simulated day under `sim.policy`.
pub fn simulate(
    models: &BTreeMap<String, ForestModel>,
    sim: &SimConfig,
    gen: &GeneratorConfig,
) -> Result<SimResult, HqrError> {
    let scenario = build_scenario(sim, gen).map_err(HqrError::InvalidSimulation)?;
    run_scenario(&scenario, sim.policy, &memoized(models))
}

/// Both policies at each level over identical scenarios. Runs concurrently.
pub fn compare_policies(
    models: &BTreeMap<String, ForestModel>,
    base: &SimConfig,
    gen: &GeneratorConfig,
    levels: &[usize],
) -> Result<Vec<PolicyComparison>, HqrError> {
    let scenarios: Vec<Scenario> = levels
        .iter()
        .map(|&level| {
            let sim = SimConfig {
                tasks_per_patient: level,
                ..base.clone()
            };
            build_scenario(&sim, gen).map_err(HqrError::InvalidSimulation)
        })
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, Policy)> = (0..levels.len())
        .flat_map(|i| [(i, Policy::Hqr), (i, Policy::FifoFixedOrder)])
        .collect();
    let waits: Vec<f64> = jobs
        .par_iter()
        .map(|&(i, policy)| {
            let predictors = memoized(models);
            run_scenario(&scenarios[i], policy, &predictors).map(|r| r.average_wait_min)
        })
        .collect::<Result<_, _>>()?;
    Ok(levels
        .iter()
        .enumerate()
        .map(|(i, &level)| PolicyComparison {
            tasks_per_patient: level,
            avg_wait_hqr_min: waits[2 * i],
            avg_wait_without_min: waits[2 * i + 1],
        })
        .collect())
}

/// `level,policy,avg_wait_min` rows, two per level.
pub fn comparison_csv(rows: &[PolicyComparison]) -> String {
    let mut out = String::from("level,policy,avg_wait_min\n");
    for r in rows {
        for (policy, wait) in [
            (Policy::Hqr, r.avg_wait_hqr_min),
            (Policy::FifoFixedOrder, r.avg_wait_without_min),
        ] {
            out.push_str(&format!("{},{},{:.3}\n", r.tasks_per_patient, policy.as_str(), wait));
        }
    }
    out
}
