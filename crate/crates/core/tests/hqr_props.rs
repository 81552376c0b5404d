use std::collections::BTreeMap;

use carequeue_core::hqr::{find_cycle, order_by_wait};
use carequeue_core::{
    predict_queue_wait, recommend, FeatureInput, Gender, HqrError, PatientDescriptor, QueueContext, QueueState,
    TaskRequest, TimePredictor,
};
use chrono::NaiveDate;
use proptest::prelude::*;

/// Service time grows with age.
struct ByAge;

impl TimePredictor for ByAge {
    fn predict_time(&self, input: &FeatureInput) -> Result<f64, HqrError> {
        Ok(60.0 + 2.0 * f64::from(input.age))
    }
}

fn queue(task: &str, ages: &[u32], windows: u32) -> QueueState {
    QueueState {
        task_id: task.into(),
        waiting: ages
            .iter()
            .enumerate()
            .map(|(i, &a)| PatientDescriptor::new(format!("{task}-{i}"), Gender::Female, a))
            .collect(),
        windows,
        context: QueueContext {
            at: NaiveDate::from_ymd_opt(2015, 10, 6).unwrap().and_hms_opt(10, 0, 0).unwrap(),
            department: "d".into(),
            doctor: None,
        },
    }
}

/// Waits for `n` tasks plus a random DAG over them (edges only go from a
/// lower to a higher index of a shuffled order).
type PlanInput = (Vec<(String, f64)>, Vec<(String, String)>);

fn plan_input() -> impl Strategy<Value = PlanInput> {
    (1usize..8).prop_flat_map(|n| {
        (
            prop::collection::vec(0u32..50, n),
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
            prop::collection::vec(any::<bool>(), n * n),
        )
            .prop_map(move |(waits, topo, edges)| {
                let name = |i: usize| format!("t{i}");
                let waits = waits.iter().enumerate().map(|(i, w)| (name(i), f64::from(*w))).collect();
                let mut deps = Vec::new();
                for a in 0..n {
                    for b in a + 1..n {
                        if edges[a * n + b] && edges[b * n + a] {
                            deps.push((name(topo[a]), name(topo[b])));
                        }
                    }
                }
                (waits, deps)
            })
    })
}

proptest! {
    #[test]
    fn plan_is_a_permutation_respecting_dependencies((waits, deps) in plan_input()) {
        let order = order_by_wait(&waits, &deps).unwrap();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..waits.len()).collect::<Vec<_>>());
        let pos = |t: &str| order.iter().position(|&i| waits[i].0 == t).unwrap();
        for (a, b) in &deps {
            prop_assert!(pos(a) < pos(b), "{a} must precede {b}");
        }
    }

    #[test]
    fn without_dependencies_plan_is_sorted_by_wait((waits, _) in plan_input()) {
        let order = order_by_wait(&waits, &[]).unwrap();
        for w in order.windows(2) {
            let (a, b) = (&waits[w[0]], &waits[w[1]]);
            prop_assert!(a.1 < b.1 || (a.1 == b.1 && a.0 < b.0));
        }
    }

    #[test]
    fn a_closing_edge_is_reported_as_cycle(n in 2usize..6) {
        let tasks: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let mut deps: Vec<(String, String)> = tasks.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
        prop_assert!(find_cycle(&tasks, &deps).is_none());
        deps.push((tasks[n - 1].clone(), tasks[0].clone()));
        let cycle = find_cycle(&tasks, &deps).unwrap();
        prop_assert_eq!(cycle.first(), cycle.last());
        prop_assert_eq!(cycle.len(), n + 1);
    }

    #[test]
    fn wait_grows_with_queue_and_shrinks_with_windows(
        ages in prop::collection::vec(0u32..95, 0..30),
        extra in 0u32..95,
        windows in 1u32..6,
    ) {
        let base = predict_queue_wait(&ByAge, &queue("CT", &ages, windows)).unwrap();
        prop_assert!(base.is_sign_positive());
        let mut longer = ages.clone();
        longer.push(extra);
        prop_assert!(predict_queue_wait(&ByAge, &queue("CT", &longer, windows)).unwrap() > base);
        prop_assert!(predict_queue_wait(&ByAge, &queue("CT", &ages, windows + 1)).unwrap() <= base);
        let total: f64 = ages.iter().map(|a| 60.0 + 2.0 * f64::from(*a)).sum();
        prop_assert!((base - total / f64::from(windows)).abs() < 1e-6);
    }
}

#[test]
fn recommend_rejects_bad_requests() {
    let models = BTreeMap::from([("CT".to_string(), ByAge), ("MR".to_string(), ByAge)]);
    let queues = BTreeMap::from([
        ("CT".to_string(), queue("CT", &[30], 1)),
        ("MR".to_string(), queue("MR", &[30, 40], 1)),
    ]);
    let patient = PatientDescriptor::new("me", Gender::Male, 33);
    let req = |tasks: &[&str], deps: &[(&str, &str)]| TaskRequest {
        patient: patient.clone(),
        tasks: tasks.iter().map(|s| s.to_string()).collect(),
        dependencies: deps.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
    };
    assert!(matches!(recommend(&models, &queues, &req(&[], &[])), Err(HqrError::EmptyRequest)));
    assert!(matches!(recommend(&models, &queues, &req(&["CT", "CT"], &[])), Err(HqrError::DuplicateTask(_))));
    assert!(matches!(recommend(&models, &queues, &req(&["XR"], &[])), Err(HqrError::MissingModel(_))));
    assert!(matches!(
        recommend(&models, &queues, &req(&["CT"], &[("CT", "MR")])),
        Err(HqrError::UnknownDependency { .. })
    ));
    let plan = recommend(&models, &queues, &req(&["MR", "CT"], &[])).unwrap();
    assert_eq!(plan.task_order(), ["CT", "MR"]);
    let plan = recommend(&models, &queues, &req(&["MR", "CT"], &[("MR", "CT")])).unwrap();
    assert_eq!(plan.task_order(), ["MR", "CT"]);
}
