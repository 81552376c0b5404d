//! Subcommands of the `carequeue` binary.
//!
//! [`run`] returns the process exit code: 0 on success, 1 when the command
//! line is malformed and 2 when the inputs are unusable.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use carequeue_core::records::write_records_csv;
use carequeue_core::simgen::comparison_csv;
use carequeue_core::{
    build_dataset, clean_and_derive, compare_policies, generate_history, load_model, parse_records, recommend,
    save_model, train_forest_with, ColumnMapping, Execution, FeatureInput, ForestModel, Gender, GeneratorConfig,
    QueueState, SimConfig, TaskMode, TaskRequest, TrainConfig, WeightingMode,
};
use chrono::{Datelike, NaiveDateTime, Timelike};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::service::{router, to_minutes, AppState, Clock};
use crate::store::{QueueStore, TaskConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

const TIMESTAMP: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Parser)]
#[command(name = "carequeue", version, about = "Treatment time prediction and queue recommendation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic treatment history as CSV.
    Gen(GenArgs),
    /// Train one model file per task from a treatment CSV.
    Train(TrainArgs),
    /// Predict one patient's service time.
    Predict(PredictArgs),
    /// Order a patient's tasks against given queue snapshots.
    Recommend(RecommendArgs),
    /// Compare recommended and fixed-order visiting in simulation.
    Simulate(SimulateArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 28)]
    pub days: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Share of rows replaced by extreme values, for every task.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Weighting {
    Literal,
    Normalized,
    Uniform,
}

impl From<Weighting> for WeightingMode {
    fn from(w: Weighting) -> Self {
        match w {
            Weighting::Literal => WeightingMode::Literal,
            Weighting::Normalized => WeightingMode::Normalized,
            Weighting::Uniform => WeightingMode::Uniform,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Task to train; repeat for several. Defaults to every task in the input.
    #[arg(long = "task")]
    pub tasks: Vec<String>,
    /// Output file; only with a single task.
    #[arg(long, conflicts_with = "out_dir")]
    pub out: Option<PathBuf>,
    /// Directory receiving `<task>.model` files.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long, value_enum)]
    pub weighting: Option<Weighting>,
    /// Keep raw leaf means.
    #[arg(long)]
    pub no_denoise: bool,
    /// Train trees one after another instead of in parallel.
    #[arg(long)]
    pub serial: bool,
    /// Task whose durations come from gaps between consecutive patients.
    #[arg(long = "inter-arrival")]
    pub inter_arrival: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_parser = parse_gender)]
    pub gender: Gender,
    #[arg(long)]
    pub age: u32,
    /// Defaults to the model's only department, if it has just one.
    #[arg(long)]
    pub department: Option<String>,
    #[arg(long)]
    pub doctor: Option<String>,
    /// Service time, "YYYY-MM-DD hh:mm:ss".
    #[arg(long, value_parser = parse_timestamp)]
    pub at: NaiveDateTime,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    /// Directory of `<task>.model` files.
    #[arg(long)]
    pub models: PathBuf,
    /// JSON file with the patient, tasks, dependencies and queues.
    #[arg(long)]
    pub input: PathBuf,
    /// Print the plan as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Directory of `<task>.model` files; trained from a synthetic history
    /// when omitted.
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub patients: usize,
    /// Tasks per patient, as `a..b` (inclusive) or a comma list.
    #[arg(long, default_value = "2..6", value_parser = parse_levels)]
    pub levels: Levels,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub days: u32,
    #[arg(long, default_value_t = 0.3)]
    pub dependency_fraction: f64,
    /// History length used when training models on the fly.
    #[arg(long, default_value_t = 14)]
    pub history_days: u32,
    /// Trees per model when training on the fly.
    #[arg(long, default_value_t = 20)]
    pub trees: usize,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub models: PathBuf,
    /// JSON list of queue configurations; the synthetic hospital by default.
    #[arg(long)]
    pub hospital: Option<PathBuf>,
    /// Append-only mutation log, replayed on start.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Fixed service time for predictions instead of the wall clock.
    #[arg(long, value_parser = parse_timestamp)]
    pub clock: Option<NaiveDateTime>,
    #[arg(long, env = "PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "0.0.0.0")]
    pub bind: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Levels(pub Vec<usize>);

fn parse_levels(s: &str) -> Result<Levels, String> {
    let levels: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| format!("bad level range `{s}`"))?;
        let b: usize = b.trim().parse().map_err(|_| format!("bad level range `{s}`"))?;
        if a > b {
            return Err(format!("empty level range `{s}`"));
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| format!("bad level `{x}`")))
            .collect::<Result<_, _>>()?
    };
    if levels.is_empty() {
        return Err("no levels".into());
    }
    Ok(Levels(levels))
}

fn parse_gender(s: &str) -> Result<Gender, String> {
    Gender::parse(s).ok_or_else(|| format!("unknown gender `{s}`"))
}

fn parse_timestamp(s: &str) -> Result<NaiveDateTime, String> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP).map_err(|e| format!("expected YYYY-MM-DD hh:mm:ss: {e}"))
}

/// Input of the `recommend` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecommendInput {
    #[serde(flatten)]
    pub request: TaskRequest,
    pub queues: Vec<QueueState>,
}

/// Misuse of the command line that clap cannot see.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(String);

/// Parses `args` (program name first) and runs the chosen subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render();
            if e.use_stderr() {
                let _ = write!(err, "{rendered}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{rendered}");
            return EXIT_OK;
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_DATA
            }
        }
    }
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    match command {
        Command::Gen(a) => gen(a, err),
        Command::Train(a) => train(a, err),
        Command::Predict(a) => predict(a, out),
        Command::Recommend(a) => recommend_cmd(a, out),
        Command::Simulate(a) => simulate(a, out, err),
        Command::Serve(a) => serve(a, err),
    }
}

fn gen(a: GenArgs, err: &mut dyn Write) -> anyhow::Result<()> {
    let mut config = GeneratorConfig::hospital(a.seed, a.days);
    if let Some(noise) = a.noise {
        if !(0.0..=0.5).contains(&noise) {
            return Err(UsageError(format!("--noise must lie in [0, 0.5], got {noise}")).into());
        }
        for t in &mut config.tasks {
            t.noise_fraction = noise;
        }
    }
    let records = generate_history(&config);
    let file = fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_records_csv(&records, std::io::BufWriter::new(file))?;
    writeln!(err, "wrote {} records to {}", records.len(), a.out.display())?;
    Ok(())
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    let mut c = TrainConfig {
        k: a.trees,
        seed: a.seed,
        ..TrainConfig::default()
    };
    if let Some(v) = a.min_leaf {
        c.min_leaf = v;
    }
    if let Some(v) = a.max_depth {
        c.max_depth = v;
    }
    if let Some(w) = a.weighting {
        c.weighting_mode = w.into();
    }
    c.denoise_leaves = !a.no_denoise;
    c
}

fn check_task_id(task: &str) -> anyhow::Result<()> {
    if task.is_empty() || task.contains(['/', '\\']) || task.starts_with('.') {
        bail!("task id `{task}` cannot name a model file");
    }
    Ok(())
}

fn train(a: TrainArgs, err: &mut dyn Write) -> anyhow::Result<()> {
    if a.out.is_some() && a.tasks.len() != 1 {
        return Err(UsageError("--out needs exactly one --task; use --out-dir for several".into()).into());
    }
    let config = train_config(&a);
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    let text = fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let parsed = parse_records(std::io::BufReader::new(text), &ColumnMapping::default())?;
    for (row, e) in parsed.errors.iter().take(5) {
        writeln!(err, "row {row}: {e}")?;
    }
    let names: BTreeSet<String> = parsed.rows.iter().filter_map(|r| r.task_name.clone()).collect();
    let modes: BTreeMap<String, TaskMode> = names
        .iter()
        .map(|t| {
            let mode = if a.inter_arrival.contains(t) {
                TaskMode::InterArrival
            } else {
                TaskMode::IntervalEndpoints
            };
            (t.clone(), mode)
        })
        .collect();
    let (records, stats) = clean_and_derive(&parsed.rows, &modes);
    write!(err, "{}", stats.report())?;
    let tasks: Vec<String> = if a.tasks.is_empty() {
        names.into_iter().collect()
    } else {
        a.tasks.clone()
    };
    if tasks.is_empty() {
        bail!("input has no tasks");
    }
    let execution = if a.serial { Execution::Serial } else { Execution::Parallel };
    for task in &tasks {
        check_task_id(task)?;
        let data = build_dataset(&records, task)?;
        let model = train_forest_with(&data, &config, execution).with_context(|| format!("training `{task}`"))?;
        let path = match (&a.out, &a.out_dir) {
            (Some(p), _) => p.clone(),
            (None, Some(dir)) => dir.join(format!("{task}.model")),
            (None, None) => PathBuf::from(format!("{task}.model")),
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, save_model(&model)?).with_context(|| format!("writing {}", path.display()))?;
        writeln!(
            err,
            "{task}: {} rows, {} trees, mean OOB accuracy {:.3} -> {}",
            data.rows.len(),
            model.trees.len(),
            model.mean_accuracy(),
            path.display()
        )?;
    }
    Ok(())
}

pub fn read_model(path: &Path) -> anyhow::Result<ForestModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load_model(&text).with_context(|| format!("loading {}", path.display()))
}

/// Loads every `*.model` file in `dir`, keyed by the task stored inside.
pub fn load_models(dir: &Path) -> anyhow::Result<BTreeMap<String, ForestModel>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "model"))
        .collect();
    paths.sort();
    let mut models = BTreeMap::new();
    for p in paths {
        let model = read_model(&p)?;
        if let Some(prev) = models.insert(model.task.clone(), model) {
            bail!("two model files for task `{}`", prev.task);
        }
    }
    if models.is_empty() {
        bail!("no .model files in {}", dir.display());
    }
    Ok(models)
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let model = read_model(&a.model)?;
    let department = match a.department {
        Some(d) => d,
        None => match model.schema.dictionaries.get("department").map(Vec::as_slice) {
            Some([only]) => only.clone(),
            _ => return Err(UsageError("--department is required for this model".into()).into()),
        },
    };
    let input = FeatureInput {
        gender: a.gender,
        age: a.age,
        department,
        doctor: a.doctor,
        week_day: a.at.weekday(),
        hour_of_day: a.at.hour(),
    };
    let seconds = model.predict_input(&input)?;
    writeln!(out, "{seconds:.1}")?;
    Ok(())
}

fn recommend_cmd(a: RecommendArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let input: RecommendInput = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.input.display()))?;
    let models = load_models(&a.models)?;
    let queues: BTreeMap<String, QueueState> = input.queues.into_iter().map(|q| (q.task_id.clone(), q)).collect();
    let plan = recommend(&models, &queues, &input.request)?;
    if a.json {
        let rows: Vec<_> = plan
            .entries
            .iter()
            .map(|e| {
                serde_json::json!({
                    "task": e.task_id,
                    "predicted_wait_min": to_minutes(e.predicted_wait_s),
                    "queue_length": e.queue_length,
                })
            })
            .collect();
        writeln!(out, "{}", serde_json::to_string_pretty(&rows)?)?;
    } else {
        writeln!(out, "task\tpredicted_wait_min\tqueue_length")?;
        for e in &plan.entries {
            writeln!(out, "{}\t{:.1}\t{}", e.task_id, to_minutes(e.predicted_wait_s), e.queue_length)?;
        }
    }
    Ok(())
}

/// Trains quick models on a synthetic history of the default hospital.
pub fn synthetic_models(seed: u64, days: u32, trees: usize) -> anyhow::Result<BTreeMap<String, ForestModel>> {
    let gen = GeneratorConfig::hospital(seed, days);
    let records = generate_history(&gen);
    let config = TrainConfig {
        k: trees,
        seed,
        ..TrainConfig::default()
    };
    let mut models = BTreeMap::new();
    for t in &gen.tasks {
        let data = build_dataset(&records, &t.task_id)?;
        models.insert(t.task_id.clone(), train_forest_with(&data, &config, Execution::Parallel)?);
    }
    Ok(models)
}

fn simulate(a: SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    let gen = GeneratorConfig::hospital(a.seed, a.history_days);
    let base = SimConfig {
        seed: a.seed,
        patients: a.patients,
        dependency_fraction: a.dependency_fraction,
        days: a.days,
        ..SimConfig::default()
    };
    for &level in &a.levels.0 {
        SimConfig {
            tasks_per_patient: level,
            ..base.clone()
        }
        .validate(&gen)
        .map_err(UsageError)?;
    }
    let models = match &a.models {
        Some(dir) => load_models(dir)?,
        None => {
            writeln!(err, "training {} models on {} synthetic days", gen.tasks.len(), a.history_days)?;
            synthetic_models(a.seed, a.history_days, a.trees)?
        }
    };
    let rows = compare_policies(&models, &base, &gen, &a.levels.0)?;
    let csv = comparison_csv(&rows);
    match &a.out {
        Some(p) => {
            fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?;
            writeln!(err, "wrote {} rows to {}", rows.len() * 2, p.display())?;
        }
        None => out.write_all(csv.as_bytes())?,
    }
    Ok(())
}

/// Queue configuration of the synthetic hospital.
pub fn default_hospital() -> Vec<TaskConfig> {
    GeneratorConfig::hospital(0, 0)
        .tasks
        .iter()
        .map(|t| TaskConfig {
            task_id: t.task_id.clone(),
            windows: t.windows,
            department: t.department.clone(),
            doctor: t.doctors.first().cloned(),
        })
        .collect()
}

fn serve(a: ServeArgs, err: &mut dyn Write) -> anyhow::Result<()> {
    let models = load_models(&a.models)?;
    let configs = match &a.hospital {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => default_hospital()
            .into_iter()
            .filter(|c| models.contains_key(&c.task_id))
            .collect(),
    };
    let store = match &a.log {
        Some(p) => QueueStore::open(configs, p)?,
        None => QueueStore::in_memory(configs)?,
    };
    let clock = a.clock.map_or(Clock::System, Clock::Fixed);
    let state = Arc::new(AppState::new(Arc::new(store), models, clock)?);
    let addr: SocketAddr = format!("{}:{}", a.bind, a.port)
        .parse()
        .map_err(|e| UsageError(format!("bad listen address: {e}")))?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        writeln!(err, "listening on {}", listener.local_addr()?)?;
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_accept_ranges_and_lists() {
        assert_eq!(parse_levels("2..6").unwrap(), Levels(vec![2, 3, 4, 5, 6]));
        assert_eq!(parse_levels("2, 4").unwrap(), Levels(vec![2, 4]));
        assert!(parse_levels("6..2").is_err());
        assert!(parse_levels("x").is_err());
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(["carequeue", "gen", "--bogus"], &mut out, &mut err);
        assert_eq!(code, EXIT_USAGE);
        assert!(String::from_utf8(err).unwrap().contains("Usage"));
    }

    #[test]
    fn help_is_success() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run(["carequeue", "--help"], &mut out, &mut err), EXIT_OK);
        assert!(!out.is_empty());
    }

    #[test]
    fn task_ids_must_be_plain_names() {
        assert!(check_task_id("CT").is_ok());
        assert!(check_task_id("../x").is_err());
        assert!(check_task_id("").is_err());
    }
}
