//! Synthetic treatment histories and a discrete-event hospital simulation.
//!
//! The generator reproduces the qualitative shape of real outpatient data:
//! U-shaped service time over age, slower service for women, two daily
//! arrival peaks and quiet weekends. The simulator replays one day of
//! patients under either the recommender or fixed listed-order visiting.

mod generator;
mod sim;

pub use generator::{
    draw_service_s, expected_service_s, generate_history, ArrivalProfile, GeneratorConfig, TaskProfile, NOISE_HIGH,
    NOISE_LOW,
};
pub use sim::{
    build_scenario, compare_policies, comparison_csv, run_scenario, simulate, MemoizedModel, Policy, PolicyComparison,
    Scenario, ScenarioPatient, ScenarioTask, ServiceInterval, SimConfig, SimResult,
};
