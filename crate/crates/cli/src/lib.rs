//! Command line and HTTP service for carequeue.

pub mod commands;
pub mod service;
pub mod store;

pub use commands::{run, EXIT_DATA, EXIT_OK, EXIT_USAGE};
pub use service::{router, AppState, Clock};
pub use store::{LogEntry, Mutation, QueueStore, Snapshot, TaskConfig};
