//! Treatment-time prediction and hospital queue recommendation.
//!
//! * [`records`]: CSV ingestion, cleaning and per-task datasets.
//! * [`forest`]: weighted random forest of multi-branch regression trees with
//!   box-plot leaf denoising.
//! * [`hqr`]: queue wait prediction and dependency-aware task ordering.
//! * [`simgen`]: synthetic treatment histories and a discrete-event hospital
//!   simulation comparing recommendation against fixed-order visiting.

pub mod error;
pub mod forest;
pub mod hqr;
pub mod records;
pub mod simgen;

pub use error::{ForestError, HqrError, RecordsError};
pub use forest::{
    load_model, save_model, train_forest, train_forest_with, Execution, ForestModel, TrainConfig,
    WeightingMode,
};
pub use hqr::{
    predict_patient_time, predict_queue_wait, recommend, TimePredictor, PatientDescriptor, PatientStatus, PlanEntry, QueueContext,
    QueueState, RecommendationPlan, TaskRequest,
};
pub use records::{
    build_dataset, clean_and_derive, encode_dataset, parse_records, ColumnMapping, CleanStats, Dataset, FeatureInput, FeatureVector,
    Gender, RawRow, Schema, TaskMode, TreatmentRecord,
};
pub use simgen::{
    compare_policies, generate_history, simulate, GeneratorConfig, Policy, PolicyComparison, SimConfig, SimResult,
};
