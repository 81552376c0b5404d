//! Fixtures shared by the benchmarks.

use std::collections::BTreeMap;

use carequeue_core::{
    build_dataset, generate_history, train_forest, Dataset, ForestModel, Gender, GeneratorConfig, PatientDescriptor,
    QueueContext, QueueState, TrainConfig,
};
use chrono::NaiveDate;

/// The first `rows` noise-free records of one task.
pub fn task_dataset(task: &str, rows: usize, seed: u64) -> Dataset {
    let mut gen = GeneratorConfig::hospital(seed, 1 + rows as u32 / 100);
    gen.tasks.retain(|t| t.task_id == task);
    let mut records = generate_history(&gen);
    records.truncate(rows);
    build_dataset(&records, task).expect("task has records")
}

/// Small forests for every task of the synthetic hospital.
pub fn hospital_models(trees: usize) -> BTreeMap<String, ForestModel> {
    let gen = GeneratorConfig::hospital(1, 7);
    let records = generate_history(&gen);
    let config = TrainConfig {
        k: trees,
        ..TrainConfig::default()
    };
    gen.tasks
        .iter()
        .map(|t| {
            let data = build_dataset(&records, &t.task_id).expect("task has records");
            (t.task_id.clone(), train_forest(&data, &config).expect("training"))
        })
        .collect()
}

/// Every hospital queue holding `depth` patients of mixed age.
pub fn hospital_queues(depth: usize) -> BTreeMap<String, QueueState> {
    let gen = GeneratorConfig::hospital(1, 0);
    let at = NaiveDate::from_ymd_opt(2015, 10, 6).unwrap().and_hms_opt(10, 0, 0).unwrap();
    gen.tasks
        .iter()
        .map(|t| {
            let waiting = (0..depth)
                .map(|i| {
                    let gender = if i % 2 == 0 { Gender::Male } else { Gender::Female };
                    PatientDescriptor::new(format!("{}-{i}", t.task_id), gender, (i * 17 % 90) as u32)
                })
                .collect();
            let queue = QueueState {
                task_id: t.task_id.clone(),
                waiting,
                windows: t.windows,
                context: QueueContext {
                    at,
                    department: t.department.clone(),
                    doctor: t.doctors.first().cloned(),
                },
            };
            (t.task_id.clone(), queue)
        })
        .collect()
}
