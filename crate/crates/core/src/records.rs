//! Treatment-event ingestion: CSV parsing, cleaning, feature derivation and
//! per-task dataset assembly.
//!
//! Raw rows are parsed leniently (every row either parses or lands in the
//! error list), then cleaned: rows missing gender, age, task or start time are
//! dropped as incomplete, rows with a negative duration as inconsistent.
//! Durations come either from the row's own endpoints or, for tasks such as
//! payment that only log an operation time, from the gap to the next patient
//! served by the same unit.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::RecordsError;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// Category used for rows without an attending doctor (payment, pharmacy).
pub const NO_DOCTOR: &str = "none";

pub const MAX_AGE: u32 = 130;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn parse(s: &str) -> Option<Gender> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Some(Gender::Male),
            "female" | "f" => Some(Gender::Female),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "Male",
            Gender::Female => "Female",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A parsed but uncleaned event row. Any field except the card number and
/// department may be absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub patient_card_no: String,
    pub patient_gender: Option<String>,
    pub patient_age: Option<i64>,
    pub task_name: Option<String>,
    pub department: String,
    pub doctor_name: Option<String>,
    pub start_time: Option<NaiveDateTime>,
    pub end_time: Option<NaiveDateTime>,
}

/// Header names for each [`RawRow`] field. Optional columns that are absent
/// from the header parse as missing values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub patient_card_no: String,
    pub gender: String,
    pub age: String,
    pub task: String,
    pub department: String,
    pub doctor: String,
    pub start_time: String,
    pub end_time: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            patient_card_no: "patient_card_no".into(),
            gender: "gender".into(),
            age: "age".into(),
            task: "task".into(),
            department: "department".into(),
            doctor: "doctor".into(),
            start_time: "start_time".into(),
            end_time: "end_time".into(),
        }
    }
}

impl ColumnMapping {
    fn header_names(&self) -> [&str; 8] {
        [
            &self.patient_card_no,
            &self.gender,
            &self.age,
            &self.task,
            &self.department,
            &self.doctor,
            &self.start_time,
            &self.end_time,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowError {
    ColumnCount { expected: usize, got: usize },
    Timestamp { column: String, value: String },
    Age(String),
    Csv(String),
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowError::ColumnCount { expected, got } => {
                write!(f, "expected {expected} columns, found {got}")
            }
            RowError::Timestamp { column, value } => {
                write!(f, "malformed timestamp in `{column}`: {value:?}")
            }
            RowError::Age(v) => write!(f, "malformed age {v:?}"),
            RowError::Csv(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedRows {
    pub rows: Vec<RawRow>,
    /// `(data row index, error)`; the header is not counted.
    pub errors: Vec<(usize, RowError)>,
}

fn null_to_none(s: &str) -> Option<&str> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("null") {
        None
    } else {
        Some(t)
    }
}

fn parse_timestamp(column: &str, s: &str) -> Result<Option<NaiveDateTime>, RowError> {
    match null_to_none(s) {
        None => Ok(None),
        Some(v) => NaiveDateTime::parse_from_str(v, TIMESTAMP_FORMAT)
            .map(Some)
            .map_err(|_| RowError::Timestamp {
                column: column.to_string(),
                value: v.to_string(),
            }),
    }
}

/// Parses CSV text with a header row into raw rows. Row-level problems never
/// abort the parse; only a header lacking the card-number or department
/// column does.
pub fn parse_records<R: Read>(input: R, mapping: &ColumnMapping) -> Result<ParsedRows, RecordsError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        // Empty input: no header, no rows.
        Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => return Err(e.into()),
        Err(_) => return Ok(ParsedRows::default()),
    };
    if headers.is_empty() {
        return Ok(ParsedRows::default());
    }
    let position = |name: &str| headers.iter().position(|h| h.trim() == name);
    let cols: Vec<Option<usize>> = mapping.header_names().iter().map(|n| position(n)).collect();
    let card = cols[0].ok_or_else(|| RecordsError::MissingColumn(mapping.patient_card_no.clone()))?;
    let dept = cols[4].ok_or_else(|| RecordsError::MissingColumn(mapping.department.clone()))?;
    let expected = headers.len();

    let mut out = ParsedRows::default();
    for (index, record) in reader.records().enumerate() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                out.errors.push((index, RowError::Csv(e.to_string())));
                continue;
            }
        };
        if record.len() != expected {
            out.errors.push((
                index,
                RowError::ColumnCount {
                    expected,
                    got: record.len(),
                },
            ));
            continue;
        }
        let field = |i: Option<usize>| i.and_then(|i| null_to_none(&record[i]));
        let parsed = (|| {
            let patient_age = match field(cols[2]) {
                None => None,
                Some(a) => Some(a.parse::<i64>().map_err(|_| RowError::Age(a.to_string()))?),
            };
            let start_time = match cols[6] {
                Some(i) => parse_timestamp(&mapping.start_time, &record[i])?,
                None => None,
            };
            let end_time = match cols[7] {
                Some(i) => parse_timestamp(&mapping.end_time, &record[i])?,
                None => None,
            };
            Ok(RawRow {
                patient_card_no: record[card].trim().to_string(),
                patient_gender: field(cols[1]).map(str::to_string),
                patient_age,
                task_name: field(cols[3]).map(str::to_string),
                department: record[dept].trim().to_string(),
                doctor_name: field(cols[5]).map(str::to_string),
                start_time,
                end_time,
            })
        })();
        match parsed {
            Ok(row) => out.rows.push(row),
            Err(e) => out.errors.push((index, e)),
        }
    }
    Ok(out)
}

/// How a task's duration is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    /// `end_time - start_time`.
    IntervalEndpoints,
    /// Gap between consecutive patients of one servicing unit.
    InterArrival,
}

/// One cleaned event with its derived features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentRecord {
    pub patient_card_no: String,
    pub gender: Gender,
    pub age: u32,
    pub department: String,
    pub doctor: Option<String>,
    pub task: String,
    pub start_time: NaiveDateTime,
    pub end_time: Option<NaiveDateTime>,
    pub week_day: Weekday,
    pub hour_of_day: u32,
    pub duration_s: f64,
}

impl TreatmentRecord {
    pub fn doctor_or_none(&self) -> &str {
        self.doctor.as_deref().unwrap_or(NO_DOCTOR)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanStats {
    pub input: usize,
    pub kept: usize,
    pub incomplete: usize,
    pub inconsistent: usize,
    pub unmapped_task: usize,
    pub no_successor: usize,
}

impl CleanStats {
    pub fn dropped(&self) -> usize {
        self.incomplete + self.inconsistent + self.unmapped_task + self.no_successor
    }

    /// One `reason:count` line per entry.
    pub fn report(&self) -> String {
        format!(
            "input:{}\nkept:{}\nincomplete:{}\ninconsistent:{}\nunmapped_task:{}\nno_successor:{}\n",
            self.input,
            self.kept,
            self.incomplete,
            self.inconsistent,
            self.unmapped_task,
            self.no_successor
        )
    }
}

struct Complete<'a> {
    index: usize,
    raw: &'a RawRow,
    gender: Gender,
    age: u32,
    task: &'a str,
    start: NaiveDateTime,
}

fn derive(c: &Complete<'_>, end_time: Option<NaiveDateTime>, duration_s: f64) -> TreatmentRecord {
    TreatmentRecord {
        patient_card_no: c.raw.patient_card_no.clone(),
        gender: c.gender,
        age: c.age,
        department: c.raw.department.clone(),
        doctor: c.raw.doctor_name.clone(),
        task: c.task.to_string(),
        start_time: c.start,
        end_time,
        week_day: c.start.weekday(),
        hour_of_day: c.start.hour(),
        duration_s,
    }
}

/// Cleans raw rows and derives the feature columns. Output keeps input order.
pub fn clean_and_derive(
    raw: &[RawRow],
    task_modes: &BTreeMap<String, TaskMode>,
) -> (Vec<TreatmentRecord>, CleanStats) {
    let mut stats = CleanStats {
        input: raw.len(),
        ..CleanStats::default()
    };
    let mut kept: Vec<(usize, TreatmentRecord)> = Vec::new();
    let mut groups: BTreeMap<(&str, &str, &str), Vec<Complete<'_>>> = BTreeMap::new();

    for (index, row) in raw.iter().enumerate() {
        let gender = row.patient_gender.as_deref().and_then(Gender::parse);
        let age = row
            .patient_age
            .filter(|a| (0..=MAX_AGE as i64).contains(a))
            .map(|a| a as u32);
        let (Some(gender), Some(age), Some(task), Some(start)) =
            (gender, age, row.task_name.as_deref(), row.start_time)
        else {
            stats.incomplete += 1;
            continue;
        };
        let complete = Complete {
            index,
            raw: row,
            gender,
            age,
            task,
            start,
        };
        match task_modes.get(task) {
            None => stats.unmapped_task += 1,
            Some(TaskMode::IntervalEndpoints) => {
                let Some(end) = row.end_time else {
                    stats.incomplete += 1;
                    continue;
                };
                let duration = (end - start).num_seconds();
                if duration < 0 {
                    stats.inconsistent += 1;
                } else {
                    kept.push((index, derive(&complete, Some(end), duration as f64)));
                }
            }
            Some(TaskMode::InterArrival) => {
                let doctor = row.doctor_name.as_deref().unwrap_or(NO_DOCTOR);
                groups
                    .entry((task, row.department.as_str(), doctor))
                    .or_default()
                    .push(complete);
            }
        }
    }

    for (_, mut members) in groups {
        members.sort_by_key(|c| (c.start, c.index));
        stats.no_successor += 1;
        for pair in members.windows(2) {
            let gap = (pair[1].start - pair[0].start).num_seconds();
            kept.push((pair[0].index, derive(&pair[0], None, gap as f64)));
        }
    }

    kept.sort_by_key(|(i, _)| *i);
    stats.kept = kept.len();
    (kept.into_iter().map(|(_, r)| r).collect(), stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Categorical,
    Numeric,
    CyclicOrdinal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

/// Feature layout plus one dense dictionary (`id == index`) per categorical
/// feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<FeatureSpec>,
    pub dictionaries: BTreeMap<String, Vec<String>>,
}

pub const GENDER: usize = 0;
pub const AGE: usize = 1;
pub const DEPARTMENT: usize = 2;
pub const DOCTOR: usize = 3;
pub const WEEK_DAY: usize = 4;
pub const HOUR_OF_DAY: usize = 5;

/// Everything needed to place one patient visit in feature space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureInput {
    pub gender: Gender,
    pub age: u32,
    pub department: String,
    pub doctor: Option<String>,
    pub week_day: Weekday,
    pub hour_of_day: u32,
}

impl FeatureInput {
    pub fn from_record(r: &TreatmentRecord) -> Self {
        FeatureInput {
            gender: r.gender,
            age: r.age,
            department: r.department.clone(),
            doctor: r.doctor.clone(),
            week_day: r.week_day,
            hour_of_day: r.hour_of_day,
        }
    }
}

impl Schema {
    fn treatment(dictionaries: BTreeMap<String, Vec<String>>) -> Self {
        let f = |name: &str, kind| FeatureSpec {
            name: name.to_string(),
            kind,
        };
        Schema {
            features: vec![
                f("gender", FeatureKind::Categorical),
                f("age", FeatureKind::Numeric),
                f("department", FeatureKind::Categorical),
                f("doctor", FeatureKind::Categorical),
                f("week_day", FeatureKind::CyclicOrdinal),
                f("hour_of_day", FeatureKind::CyclicOrdinal),
            ],
            dictionaries,
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn kinds(&self) -> Vec<FeatureKind> {
        self.features.iter().map(|f| f.kind).collect()
    }

    /// Dense id of `value`, or the dictionary length for unseen values so
    /// the trees route it down their default branch.
    pub fn category_id(&self, feature: &str, value: &str) -> u32 {
        match self.dictionaries.get(feature) {
            Some(dict) => dict
                .binary_search_by(|v| v.as_str().cmp(value))
                .map(|i| i as u32)
                .unwrap_or(dict.len() as u32),
            None => 0,
        }
    }

    pub fn encode(&self, input: &FeatureInput) -> Vec<f64> {
        vec![
            self.category_id("gender", input.gender.as_str()) as f64,
            input.age as f64,
            self.category_id("department", &input.department) as f64,
            self.category_id("doctor", input.doctor.as_deref().unwrap_or(NO_DOCTOR)) as f64,
            input.week_day.num_days_from_monday() as f64,
            input.hour_of_day as f64,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub target_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub task: String,
    pub schema: Schema,
    pub rows: Vec<FeatureVector>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.target_s).collect()
    }
}

fn dictionary<'a>(values: impl Iterator<Item = &'a str>) -> Vec<String> {
    let set: std::collections::BTreeSet<&str> = values.collect();
    set.into_iter().map(str::to_string).collect()
}

/// Assembles the training set for one task. Dictionaries are built from the
/// observed values in sorted order, so the result depends only on the input.
pub fn build_dataset(records: &[TreatmentRecord], task: &str) -> Result<Dataset, RecordsError> {
    let selected: Vec<&TreatmentRecord> = records.iter().filter(|r| r.task == task).collect();
    if selected.is_empty() {
        return Err(RecordsError::EmptyDataset(task.to_string()));
    }
    let mut dictionaries = BTreeMap::new();
    dictionaries.insert(
        "gender".to_string(),
        dictionary(selected.iter().map(|r| r.gender.as_str())),
    );
    dictionaries.insert(
        "department".to_string(),
        dictionary(selected.iter().map(|r| r.department.as_str())),
    );
    dictionaries.insert(
        "doctor".to_string(),
        dictionary(selected.iter().map(|r| r.doctor_or_none())),
    );
    let schema = Schema::treatment(dictionaries);
    let rows = selected
        .iter()
        .map(|r| FeatureVector {
            values: schema.encode(&FeatureInput::from_record(r)),
            target_s: r.duration_s,
        })
        .collect();
    Ok(Dataset {
        task: task.to_string(),
        schema,
        rows,
    })
}

/// Encodes `task`'s records under an existing schema, e.g. a trained
/// model's, so that evaluation rows share its category ids.
pub fn encode_dataset(records: &[TreatmentRecord], task: &str, schema: &Schema) -> Dataset {
    let rows = records
        .iter()
        .filter(|r| r.task == task)
        .map(|r| FeatureVector {
            values: schema.encode(&FeatureInput::from_record(r)),
            target_s: r.duration_s,
        })
        .collect();
    Dataset {
        task: task.to_string(),
        schema: schema.clone(),
        rows,
    }
}

/// Distinct task names in first-seen order.
pub fn task_names(records: &[TreatmentRecord]) -> Vec<String> {
    let mut seen = Vec::<String>::new();
    for r in records {
        if !seen.iter().any(|t| t == &r.task) {
            seen.push(r.task.clone());
        }
    }
    seen
}

/// Writes records in the canonical CSV layout accepted by [`parse_records`]
/// with the default [`ColumnMapping`].
pub fn write_records_csv<W: Write>(records: &[TreatmentRecord], out: W) -> Result<(), RecordsError> {
    let mut w = csv::Writer::from_writer(out);
    let m = ColumnMapping::default();
    w.write_record(m.header_names())?;
    for r in records {
        let ts = |t: Option<NaiveDateTime>| {
            t.map(|t| t.format(TIMESTAMP_FORMAT).to_string())
                .unwrap_or_else(|| "Null".to_string())
        };
        w.write_record([
            r.patient_card_no.as_str(),
            r.gender.as_str(),
            &r.age.to_string(),
            &r.task,
            &r.department,
            r.doctor.as_deref().unwrap_or("Null"),
            &ts(Some(r.start_time)),
            &ts(r.end_time),
        ])?;
    }
    w.flush()?;
    Ok(())
}
