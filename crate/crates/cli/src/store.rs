//! Live queue state with a single writer and an append-only mutation log.
//!
//! Every applied mutation bumps the revision by one and is appended to the
//! log before the new snapshot is published. Readers clone an `Arc` of the
//! current snapshot and never block the writer for longer than a pointer
//! swap.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use carequeue_core::{PatientDescriptor, PatientStatus};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Static description of one treatment queue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task_id: String,
    pub windows: u32,
    pub department: String,
    #[serde(default)]
    pub doctor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mutation {
    Enqueue { patient: PatientDescriptor },
    StartService { patient_id: String },
    Complete { patient_id: String },
}

/// One line of the mutation log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub revision: u64,
    pub task_id: String,
    pub mutation: Mutation,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown patient `{patient_id}` in queue `{task_id}`")]
    UnknownPatient { task_id: String, patient_id: String },
    #[error("patient `{patient_id}` already queued for `{task_id}`")]
    DuplicatePatient { task_id: String, patient_id: String },
    #[error("patient `{patient_id}` cannot {action} while {status}")]
    IllegalTransition {
        patient_id: String,
        action: &'static str,
        status: &'static str,
    },
    #[error("log entry {found} out of sequence, expected revision {expected}")]
    OutOfSequence { expected: u64, found: u64 },
    #[error("log line {line}: {source}")]
    LogFormat {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate task `{0}` in configuration")]
    DuplicateTask(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskQueue {
    pub config: TaskConfig,
    /// Arrival order; in-service patients stay in place until completed.
    pub patients: Vec<PatientDescriptor>,
}

/// Immutable state at one revision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Snapshot {
    pub revision: u64,
    pub queues: BTreeMap<String, TaskQueue>,
}

impl Snapshot {
    pub fn empty(configs: &[TaskConfig]) -> Result<Self, StoreError> {
        let mut queues = BTreeMap::new();
        for c in configs {
            let queue = TaskQueue {
                config: c.clone(),
                patients: Vec::new(),
            };
            if queues.insert(c.task_id.clone(), queue).is_some() {
                return Err(StoreError::DuplicateTask(c.task_id.clone()));
            }
        }
        Ok(Snapshot { revision: 0, queues })
    }

    /// Returns the state after `mutation`, leaving `self` untouched.
    pub fn apply(&self, task_id: &str, mutation: &Mutation) -> Result<Snapshot, StoreError> {
        let queue = self
            .queues
            .get(task_id)
            .ok_or_else(|| StoreError::UnknownTask(task_id.to_string()))?;
        let mut patients = queue.patients.clone();
        let find = |patients: &[PatientDescriptor], id: &str| {
            patients
                .iter()
                .position(|p| p.patient_id == id)
                .ok_or_else(|| StoreError::UnknownPatient {
                    task_id: task_id.to_string(),
                    patient_id: id.to_string(),
                })
        };
        match mutation {
            Mutation::Enqueue { patient } => {
                if patients.iter().any(|p| p.patient_id == patient.patient_id) {
                    return Err(StoreError::DuplicatePatient {
                        task_id: task_id.to_string(),
                        patient_id: patient.patient_id.clone(),
                    });
                }
                let mut p = PatientDescriptor::new(patient.patient_id.clone(), patient.gender, patient.age);
                p.status = PatientStatus::Waiting;
                patients.push(p);
            }
            Mutation::StartService { patient_id } => {
                let i = find(&patients, patient_id)?;
                if patients[i].status != PatientStatus::Waiting {
                    return Err(StoreError::IllegalTransition {
                        patient_id: patient_id.clone(),
                        action: "start service",
                        status: "in service",
                    });
                }
                patients[i].status = PatientStatus::InService;
            }
            Mutation::Complete { patient_id } => {
                let i = find(&patients, patient_id)?;
                if patients[i].status != PatientStatus::InService {
                    return Err(StoreError::IllegalTransition {
                        patient_id: patient_id.clone(),
                        action: "complete",
                        status: "waiting",
                    });
                }
                patients.remove(i);
            }
        }
        let mut queues = self.queues.clone();
        queues.insert(
            task_id.to_string(),
            TaskQueue {
                config: queue.config.clone(),
                patients,
            },
        );
        Ok(Snapshot {
            revision: self.revision + 1,
            queues,
        })
    }
}

/// Rebuilds state by applying `entries` to empty queues.
pub fn replay(configs: &[TaskConfig], entries: &[LogEntry]) -> Result<Snapshot, StoreError> {
    let mut state = Snapshot::empty(configs)?;
    for e in entries {
        if e.revision != state.revision + 1 {
            return Err(StoreError::OutOfSequence {
                expected: state.revision + 1,
                found: e.revision,
            });
        }
        state = state.apply(&e.task_id, &e.mutation)?;
    }
    Ok(state)
}

pub fn read_log(path: &Path) -> Result<Vec<LogEntry>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|source| StoreError::LogFormat { line: i + 1, source })?;
        entries.push(entry);
    }
    Ok(entries)
}

struct Writer {
    log: Vec<LogEntry>,
    file: Option<BufWriter<File>>,
}

pub struct QueueStore {
    configs: Vec<TaskConfig>,
    current: RwLock<Arc<Snapshot>>,
    writer: Mutex<Writer>,
}

impl QueueStore {
    /// In-memory store; the log lives only as long as the process.
    pub fn in_memory(configs: Vec<TaskConfig>) -> Result<Self, StoreError> {
        let state = Snapshot::empty(&configs)?;
        Ok(QueueStore {
            configs,
            current: RwLock::new(Arc::new(state)),
            writer: Mutex::new(Writer {
                log: Vec::new(),
                file: None,
            }),
        })
    }

    /// Replays the log at `path` (if any) and keeps appending to it.
    pub fn open(configs: Vec<TaskConfig>, path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let log = read_log(&path)?;
        let state = replay(&configs, &log)?;
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(QueueStore {
            configs,
            current: RwLock::new(Arc::new(state)),
            writer: Mutex::new(Writer {
                log,
                file: Some(BufWriter::new(file)),
            }),
        })
    }

    pub fn configs(&self) -> &[TaskConfig] {
        &self.configs
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().clone()
    }

    /// Applies one mutation and returns the new revision.
    pub fn mutate(&self, task_id: &str, mutation: Mutation) -> Result<u64, StoreError> {
        let mut writer = self.writer.lock();
        let next = self.snapshot().apply(task_id, &mutation)?;
        let entry = LogEntry {
            revision: next.revision,
            task_id: task_id.to_string(),
            mutation,
        };
        if let Some(file) = writer.file.as_mut() {
            serde_json::to_writer(&mut *file, &entry).map_err(std::io::Error::from)?;
            file.write_all(b"\n")?;
            file.flush()?;
        }
        writer.log.push(entry);
        let revision = next.revision;
        *self.current.write() = Arc::new(next);
        Ok(revision)
    }

    /// Copy of every applied mutation, oldest first.
    pub fn log(&self) -> Vec<LogEntry> {
        self.writer.lock().log.clone()
    }
}
