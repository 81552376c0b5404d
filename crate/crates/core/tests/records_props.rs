use std::collections::BTreeMap;

use carequeue_core::records::write_records_csv;
use carequeue_core::{
    build_dataset, clean_and_derive, generate_history, parse_records, ColumnMapping, GeneratorConfig, TaskMode,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn written_history_cleans_back_to_itself(seed in 0u64..10_000, days in 1u32..3) {
        let gen = GeneratorConfig::hospital(seed, days);
        let records = generate_history(&gen);
        let mut csv = Vec::new();
        write_records_csv(&records, &mut csv).unwrap();
        let parsed = parse_records(csv.as_slice(), &ColumnMapping::default()).unwrap();
        prop_assert!(parsed.errors.is_empty());
        let modes: BTreeMap<String, TaskMode> =
            gen.tasks.iter().map(|t| (t.task_id.clone(), TaskMode::IntervalEndpoints)).collect();
        let (back, stats) = clean_and_derive(&parsed.rows, &modes);
        prop_assert_eq!(stats.kept, records.len());
        prop_assert_eq!(stats.dropped(), 0);
        prop_assert_eq!(&back, &records);
        for t in &gen.tasks {
            let data = build_dataset(&back, &t.task_id).unwrap();
            prop_assert!(data.rows.iter().all(|r| r.target_s >= 1.0 && r.values.len() == data.schema.features.len()));
        }
    }

    #[test]
    fn inter_arrival_drops_one_row_per_unit(seed in 0u64..10_000) {
        let gen = GeneratorConfig::hospital(seed, 1);
        let records = generate_history(&gen);
        let mut csv = Vec::new();
        write_records_csv(&records, &mut csv).unwrap();
        let parsed = parse_records(csv.as_slice(), &ColumnMapping::default()).unwrap();
        let modes: BTreeMap<String, TaskMode> =
            gen.tasks.iter().map(|t| (t.task_id.clone(), TaskMode::InterArrival)).collect();
        let (back, stats) = clean_and_derive(&parsed.rows, &modes);
        let units: std::collections::BTreeSet<(&str, &str, Option<&str>)> = records
            .iter()
            .map(|r| (r.task.as_str(), r.department.as_str(), r.doctor.as_deref()))
            .collect();
        prop_assert_eq!(stats.no_successor, units.len());
        prop_assert_eq!(back.len() + units.len(), records.len() - stats.inconsistent);
        prop_assert!(back.iter().all(|r| r.duration_s >= 0.0));
    }
}
