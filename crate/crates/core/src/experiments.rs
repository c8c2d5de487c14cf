//! Batch runner: resolves a configuration into grid cells, fans the
//! `(cell, realization)` work items out over a rayon pool, and writes CSV
//! data, a JSON summary and a manifest with checksums.
//!
//! Every random stream is derived from the master seed and the item indices,
//! and results are gathered in index order, so output bytes do not depend on
//! the number of workers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{QrcError, Result};
use crate::learn::{train_eval, SplitSpec};
use crate::output::{Cell, CsvTable};
use crate::reservoir::{
    convergence_with, run_trajectory_from, trajectory_csv, ConvergenceSeries, Dynamics,
    NamedInitialState, DISTANCE_FLOOR,
};
use crate::seed::{derive_seed, tag};
use crate::spectral::{log_grid, mean_and_stderr, phase_cell, phase_cells_csv, PhaseCell};
use crate::spin_model::{
    default_observables, sample_realization, z_observables, DisorderRealization, ModelParams,
    ObservableDescriptor, Sector,
};
use crate::tasks::{gen_input, ipc_capacity, CapacityReport, InputKind, IpcConfig, TaskSpec, ThresholdMode};

/// Environment variable consulted for the worker count.
pub const WORKERS_ENV: &str = "QRC_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PhaseDiagram,
    DynamicsTrace,
    ConvergenceMap,
    ConvergenceCurve,
    TaskSweep,
    IpcSweep,
    ConservedTrace,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::PhaseDiagram => "phase_diagram",
            Self::DynamicsTrace => "dynamics_trace",
            Self::ConvergenceMap => "convergence_map",
            Self::ConvergenceCurve => "convergence_curve",
            Self::TaskSweep => "task_sweep",
            Self::IpcSweep => "ipc_sweep",
            Self::ConservedTrace => "conserved_trace",
        }
    }

    fn seed_tag(self) -> u64 {
        match self {
            Self::PhaseDiagram => tag::PHASE,
            Self::DynamicsTrace => tag::DYNAMICS,
            Self::ConvergenceMap | Self::ConvergenceCurve => tag::CONVERGENCE,
            Self::TaskSweep => tag::TASK,
            Self::IpcSweep => tag::IPC,
            Self::ConservedTrace => tag::CONSERVED,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogAxis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_spins: usize,
    pub j_s: f64,
    pub h: Vec<f64>,
    pub w: Vec<f64>,
    /// Replaces `h` by a log-spaced grid when present.
    pub h_log: Option<LogAxis>,
    pub w_log: Option<LogAxis>,
    /// Explicit `(h, w)` pairs; when non-empty they replace the `h × w` grid.
    pub points: Vec<[f64; 2]>,
    pub sector: Sector,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            n_spins: 10,
            j_s: 1.0,
            h: vec![10.0],
            w: vec![0.0],
            h_log: None,
            w_log: None,
            points: Vec::new(),
            sector: Sector::Even,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableSet {
    /// `σ^x, σ^y, σ^z` on every site plus all `σ^z σ^z` pairs.
    Default,
    /// `σ^z` on every site.
    Z,
}

impl ObservableSet {
    pub fn resolve(self, n_spins: usize) -> Vec<ObservableDescriptor> {
        match self {
            Self::Default => default_observables(n_spins),
            Self::Z => z_observables(n_spins),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Uniform,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReservoirSection {
    pub dt: f64,
    /// Sweeps the time step when non-empty.
    pub dt_values: Vec<f64>,
    pub observables: ObservableSet,
    /// Named state, or `random` for a seeded random state per realization.
    pub initial_state: String,
    /// States compared by the conserved-quantity experiment.
    pub initial_states: Vec<String>,
    pub steps: usize,
    pub input: InputMode,
    pub input_lo: f64,
    pub input_hi: f64,
}

impl Default for ReservoirSection {
    fn default() -> Self {
        Self {
            dt: 10.0,
            dt_values: Vec::new(),
            observables: ObservableSet::Default,
            initial_state: "maximal_coherent".into(),
            initial_states: ["all_up_z", "all_down_z", "half_half_z", "half_half_x"]
                .map(String::from)
                .to_vec(),
            steps: 200,
            input: InputMode::Uniform,
            input_lo: 0.0,
            input_hi: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    /// Task names such as `narma10` or `delay10`; all are scored on the same
    /// trajectory.
    pub tasks: Vec<String>,
    pub washout: usize,
    pub train: usize,
    pub test: usize,
    pub ridge: f64,
    pub input_lo: f64,
    pub input_hi: f64,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            tasks: vec!["narma10".into(), "delay10".into()],
            washout: 1000,
            train: 2000,
            test: 2000,
            ridge: 0.0,
            input_lo: 0.0,
            input_hi: 0.2,
        }
    }
}

impl TaskSection {
    pub fn split(&self) -> SplitSpec {
        SplitSpec {
            washout: self.washout,
            train: self.train,
            test: self.test,
        }
    }
}

/// Parses `narma<n>` or `delay<tau>`.
pub fn parse_task(name: &str) -> Result<TaskSpec> {
    let number = |rest: &str| {
        rest.parse::<usize>()
            .map_err(|_| QrcError::Config(format!("bad task name {name:?}")))
    };
    let spec = if let Some(rest) = name.strip_prefix("narma") {
        TaskSpec::Narma { n: number(rest)? }
    } else if let Some(rest) = name.strip_prefix("delay") {
        TaskSpec::Delay { tau: number(rest)? }
    } else {
        return Err(QrcError::Config(format!("unknown task {name:?}")));
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdName {
    Surrogate,
    Analytic,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IpcSection {
    pub d_max: usize,
    /// Post-washout length `L`.
    pub samples: usize,
    pub washout: usize,
    /// Maximum delay window per degree, starting at degree 1.
    pub windows: Vec<usize>,
    pub threshold: ThresholdName,
    pub surrogate_samples: usize,
    pub patience: usize,
}

impl Default for IpcSection {
    fn default() -> Self {
        Self {
            d_max: 6,
            samples: 100_000,
            washout: 1000,
            windows: (1..=6).map(crate::tasks::default_window).collect(),
            threshold: ThresholdName::Surrogate,
            surrogate_samples: 1000,
            patience: 2,
        }
    }
}

impl IpcSection {
    fn ipc_config(&self, surrogate_seed: u64) -> IpcConfig {
        let windows = (1..=self.d_max)
            .map(|d| {
                let w = self
                    .windows
                    .get(d - 1)
                    .copied()
                    .unwrap_or_else(|| crate::tasks::default_window(d));
                (d, w)
            })
            .collect();
        IpcConfig {
            d_max: self.d_max,
            windows,
            washout: self.washout,
            threshold_mode: match self.threshold {
                ThresholdName::Surrogate => ThresholdMode::Surrogate {
                    samples_per_degree: self.surrogate_samples,
                    seed: surrogate_seed,
                },
                ThresholdName::Analytic => ThresholdMode::Analytic,
                ThresholdName::None => ThresholdMode::None,
            },
            patience: self.patience,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub reservoir: ReservoirSection,
    #[serde(default)]
    pub task: TaskSection,
    #[serde(default)]
    pub ipc: IpcSection,
}

fn default_realizations() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// One grid point of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CellSpec {
    pub index: usize,
    /// Position along the `h` and `w` axes of a product grid.
    pub ih: usize,
    pub iw: usize,
    pub h: f64,
    pub w: f64,
    pub dt: f64,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            master_seed: 0,
            realizations: default_realizations(),
            output_dir: default_output_dir().join(experiment.name()),
            workers: None,
            model: ModelSection::default(),
            reservoir: ReservoirSection::default(),
            task: TaskSection::default(),
            ipc: IpcSection::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| QrcError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| QrcError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| e.context(format!("config {}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| QrcError::Config(e.to_string()))
    }

    pub fn h_values(&self) -> Vec<f64> {
        match self.model.h_log {
            Some(a) => log_grid(a.lo, a.hi, a.n),
            None => self.model.h.clone(),
        }
    }

    pub fn w_values(&self) -> Vec<f64> {
        match self.model.w_log {
            Some(a) => log_grid(a.lo, a.hi, a.n),
            None => self.model.w.clone(),
        }
    }

    pub fn dt_values(&self) -> Vec<f64> {
        if self.reservoir.dt_values.is_empty() {
            vec![self.reservoir.dt]
        } else {
            self.reservoir.dt_values.clone()
        }
    }

    /// Cells in `h`-major order, then `w`, then `dt`. The phase diagram does
    /// not depend on `dt` and uses only the first value.
    pub fn cells(&self) -> Vec<CellSpec> {
        let dts = if self.experiment == ExperimentKind::PhaseDiagram {
            vec![self.dt_values()[0]]
        } else {
            self.dt_values()
        };
        let mut hw = Vec::new();
        if self.model.points.is_empty() {
            let ws = self.w_values();
            for (ih, &h) in self.h_values().iter().enumerate() {
                for (iw, &w) in ws.iter().enumerate() {
                    hw.push((ih, iw, h, w));
                }
            }
        } else {
            for (k, p) in self.model.points.iter().enumerate() {
                hw.push((k, 0, p[0], p[1]));
            }
        }
        let mut cells = Vec::new();
        for (ih, iw, h, w) in hw {
            for &dt in &dts {
                cells.push(CellSpec {
                    index: cells.len(),
                    ih,
                    iw,
                    h,
                    w,
                    dt,
                });
            }
        }
        cells
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(QrcError::Config(m));
        if self.realizations == 0 {
            return bad("realizations must be >= 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be >= 1".into());
        }
        self.template(1.0, 0.0).validate()?;
        let cells = self.cells();
        if cells.is_empty() {
            return bad("the parameter grid is empty".into());
        }
        for c in &cells {
            if !(c.h.is_finite() && c.w.is_finite() && c.w >= 0.0) {
                return bad(format!("invalid grid point h={}, w={}", c.h, c.w));
            }
            if !(c.dt.is_finite() && c.dt >= 0.0) {
                return bad(format!("invalid dt {}", c.dt));
            }
        }
        let r = &self.reservoir;
        if !(0.0..=1.0).contains(&r.input_lo) || !(0.0..=1.0).contains(&r.input_hi) || r.input_lo >= r.input_hi {
            return bad(format!("reservoir input range [{}, {}] must lie in [0, 1]", r.input_lo, r.input_hi));
        }
        match self.experiment {
            ExperimentKind::DynamicsTrace | ExperimentKind::ConvergenceMap | ExperimentKind::ConvergenceCurve | ExperimentKind::ConservedTrace
                if r.steps == 0 => {
                    return bad("steps must be >= 1".into());
                }
            _ => {}
        }
        match self.experiment {
            ExperimentKind::DynamicsTrace => {
                self.initial_state(0)?;
            }
            ExperimentKind::ConservedTrace => {
                if r.initial_states.is_empty() {
                    return bad("initial_states is empty".into());
                }
                for s in &r.initial_states {
                    NamedInitialState::parse(s).map_err(|e| QrcError::Config(e.to_string()))?;
                }
            }
            ExperimentKind::TaskSweep => {
                let t = &self.task;
                if t.tasks.is_empty() {
                    return bad("no tasks given".into());
                }
                for name in &t.tasks {
                    parse_task(name)?;
                }
                self.initial_state(0)?;
                if !(0.0..=1.0).contains(&t.input_lo) || !(0.0..=1.0).contains(&t.input_hi) || t.input_lo >= t.input_hi {
                    return bad(format!("task input range [{}, {}] must lie in [0, 1]", t.input_lo, t.input_hi));
                }
                if t.train == 0 || t.test < 2 {
                    return bad("task split needs train >= 1 and test >= 2".into());
                }
                if !(t.ridge.is_finite() && t.ridge >= 0.0) {
                    return bad(format!("ridge must be >= 0, got {}", t.ridge));
                }
            }
            ExperimentKind::IpcSweep => {
                let i = &self.ipc;
                if i.d_max == 0 || i.samples < 2 {
                    return bad("ipc needs d_max >= 1 and samples >= 2".into());
                }
                let widest = (1..=i.d_max)
                    .map(|d| i.windows.get(d - 1).copied().unwrap_or_else(|| crate::tasks::default_window(d)))
                    .max()
                    .unwrap_or(0);
                if widest > i.washout + 1 {
                    return bad(format!("ipc washout {} is shorter than the widest window {widest}", i.washout));
                }
                self.initial_state(0)?;
            }
            _ => {}
        }
        Ok(())
    }

    fn template(&self, h: f64, w: f64) -> ModelParams {
        ModelParams {
            n_spins: self.model.n_spins,
            h,
            w,
            j_s: self.model.j_s,
            seed: 0,
        }
    }

    fn initial_state(&self, seed: u64) -> Result<NamedInitialState> {
        if self.reservoir.initial_state == "random" {
            return Ok(NamedInitialState::Random(seed));
        }
        NamedInitialState::parse(&self.reservoir.initial_state).map_err(|e| QrcError::Config(e.to_string()))
    }

    fn item_seed(&self, cell: usize, realization: usize, stream: u64) -> u64 {
        derive_seed(
            self.master_seed,
            &[self.experiment.seed_tag(), cell as u64, realization as u64, stream],
        )
    }

    fn realization(&self, cell: &CellSpec, r: usize) -> Result<DisorderRealization> {
        sample_realization(&ModelParams {
            seed: self.item_seed(cell.index, r, tag::REALIZATION),
            ..self.template(cell.h, cell.w)
        })
    }

    fn reservoir_inputs(&self, cell: usize, r: usize, len: usize) -> Result<Vec<f64>> {
        let kind = match self.reservoir.input {
            InputMode::Binary => InputKind::Binary,
            InputMode::Uniform => InputKind::Uniform {
                lo: self.reservoir.input_lo,
                hi: self.reservoir.input_hi,
            },
        };
        gen_input(kind, len, self.item_seed(cell, r, tag::INPUT))
    }
}

/// Named scaled-down or full-scale configurations.
pub fn preset(kind: ExperimentKind, name: &str) -> Result<ExperimentConfig> {
    let paper = match name {
        "paper" => true,
        "desk" => false,
        other => return Err(QrcError::Config(format!("unknown preset {other:?}; use paper or desk"))),
    };
    let mut c = ExperimentConfig::new(kind);
    c.model.n_spins = if paper { 10 } else { 8 };
    let grid = LogAxis {
        lo: 0.01,
        hi: 100.0,
        n: 20,
    };
    match kind {
        ExperimentKind::PhaseDiagram => {
            c.realizations = if paper { 1200 } else { 200 };
            c.model.h_log = Some(grid);
            c.model.w_log = Some(grid);
        }
        ExperimentKind::ConvergenceMap => {
            c.realizations = if paper { 600 } else { 20 };
            c.model.h_log = Some(grid);
            c.model.w_log = Some(grid);
        }
        ExperimentKind::ConvergenceCurve => {
            c.realizations = if paper { 100 } else { 20 };
            c.model.points = vec![[0.01, 0.0], [10.0, 0.0], [1.0, 100.0]];
            c.reservoir.dt_values = vec![0.1, 1.0, 10.0, 100.0];
        }
        ExperimentKind::DynamicsTrace => {
            c.model.points = vec![[10.0, 0.0], [1.0, 10.0], [0.01, 0.0], [1.0, 100.0]];
            c.reservoir.input = InputMode::Binary;
            c.reservoir.initial_state = "random".into();
            c.reservoir.observables = ObservableSet::Z;
            c.reservoir.steps = 100;
        }
        ExperimentKind::ConservedTrace => {
            c.model.points = vec![[10.0, 0.0], [1.0, 100.0]];
            c.reservoir.steps = 100;
        }
        ExperimentKind::TaskSweep => {
            c.realizations = if paper { 100 } else { 20 };
            c.model.h_log = Some(LogAxis {
                lo: 0.01,
                hi: 100.0,
                n: if paper { 20 } else { 9 },
            });
        }
        ExperimentKind::IpcSweep => {
            c.realizations = if paper { 10 } else { 5 };
            c.ipc.samples = if paper { 100_000 } else { 20_000 };
            c.model.h_log = Some(LogAxis {
                lo: 0.01,
                hi: 100.0,
                n: if paper { 20 } else { 5 },
            });
        }
    }
    Ok(c)
}

/// Worker count: explicit setting, then `QRC_WORKERS`, then the number of
/// available cores.
pub fn resolve_workers(explicit: Option<usize>) -> Result<usize> {
    if let Some(n) = explicit {
        return Ok(n.max(1));
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| QrcError::Config(format!("{WORKERS_ENV}={v:?} is not a positive integer"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub cell: usize,
    pub h: f64,
    pub w: f64,
    pub dt: f64,
    pub realization: Option<usize>,
    pub message: String,
}

impl Failure {
    fn new(cell: &CellSpec, realization: Option<usize>, err: &QrcError) -> Self {
        Self {
            cell: cell.index,
            h: cell.h,
            w: cell.w,
            dt: cell.dt,
            realization,
            message: err.to_string(),
        }
    }
}

/// In-memory result of an experiment, before anything touches the disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutputs {
    /// `(file name, contents)` in a fixed order.
    pub files: Vec<(String, String)>,
    pub summary: Value,
    pub failures: Vec<Failure>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master_seed: u64,
    pub derivation: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: ExperimentKind,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub seeds: SeedRecord,
    pub workers: usize,
    pub checksums: BTreeMap<String, String>,
    pub wall_time_seconds: f64,
    pub failures: Vec<Failure>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Runs the experiment on a dedicated pool and writes its outputs plus the
/// manifest into `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Manifest> {
    config.validate()?;
    let workers = resolve_workers(config.workers)?;
    let start = Instant::now();
    let outputs = compute_with_workers(config, workers)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let mut checksums = BTreeMap::new();
    for (name, contents) in &outputs.files {
        fs::write(dir.join(name), contents)?;
        checksums.insert(name.clone(), sha256_hex(contents.as_bytes()));
    }
    let manifest = Manifest {
        experiment: config.experiment,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        seeds: SeedRecord {
            master_seed: config.master_seed,
            derivation: "splitmix64 chain over [master_seed, experiment tag, cell index, realization index, stream tag]".into(),
        },
        workers,
        checksums,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        failures: outputs.failures,
    };
    for f in &manifest.failures {
        log::warn!("cell {} (h={}, w={}, dt={}) failed: {}", f.cell, f.h, f.w, f.dt, f.message);
    }
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn compute_with_workers(config: &ExperimentConfig, workers: usize) -> Result<ExperimentOutputs> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| QrcError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| compute(config))
}

/// Computes all outputs on the current rayon pool.
pub fn compute(config: &ExperimentConfig) -> Result<ExperimentOutputs> {
    config.validate()?;
    let cells = config.cells();
    let mut out = match config.experiment {
        ExperimentKind::PhaseDiagram => phase_diagram(config, &cells),
        ExperimentKind::DynamicsTrace => dynamics_trace(config, &cells),
        ExperimentKind::ConvergenceMap => convergence(config, &cells, false),
        ExperimentKind::ConvergenceCurve => convergence(config, &cells, true),
        ExperimentKind::TaskSweep => task_sweep(config, &cells),
        ExperimentKind::IpcSweep => ipc_sweep(config, &cells),
        ExperimentKind::ConservedTrace => conserved_trace(config, &cells),
    }?;
    let summary = json!({
        "experiment": config.experiment.name(),
        "n_cells": cells.len(),
        "realizations": config.realizations,
        "n_failures": out.failures.len(),
        "results": out.summary,
    });
    out.files.push((SUMMARY_FILE.into(), serde_json::to_string_pretty(&summary)? + "\n"));
    out.summary = summary;
    Ok(out)
}

/// Evaluates `f` on every `(cell, realization)` pair in parallel and returns
/// the results grouped per cell, in index order.
fn per_item<T, F>(cells: &[CellSpec], reps: usize, f: F) -> Vec<Vec<Result<T>>>
where
    T: Send,
    F: Fn(&CellSpec, usize) -> Result<T> + Sync + Send,
{
    let flat: Vec<Result<T>> = (0..cells.len() * reps)
        .into_par_iter()
        .map(|k| {
            let cell = &cells[k / reps];
            let r = k % reps;
            f(cell, r).map_err(|e| e.context(format!("h={}, w={}, dt={}, realization {r}", cell.h, cell.w, cell.dt)))
        })
        .collect();
    let mut grouped = Vec::with_capacity(cells.len());
    let mut it = flat.into_iter();
    for _ in cells {
        grouped.push(it.by_ref().take(reps).collect());
    }
    grouped
}

fn split_ok<T>(cell: &CellSpec, items: Vec<Result<T>>, failures: &mut Vec<Failure>) -> Vec<(usize, T)> {
    let mut ok = Vec::new();
    for (r, item) in items.into_iter().enumerate() {
        match item {
            Ok(v) => ok.push((r, v)),
            Err(e) => failures.push(Failure::new(cell, Some(r), &e)),
        }
    }
    ok
}

fn mean_std(xs: &[f64]) -> (f64, f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let (mean, stderr) = mean_and_stderr(xs);
    let std = stderr * (xs.len() as f64).sqrt();
    (mean, std, stderr)
}

fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn phase_diagram(config: &ExperimentConfig, cells: &[CellSpec]) -> Result<ExperimentOutputs> {
    let template = config.template(1.0, 0.0);
    let mut done: Vec<PhaseCell> = Vec::new();
    let mut failures = Vec::new();
    for c in cells {
        match phase_cell(c.h, c.w, c.ih, c.iw, config.realizations, &template, config.master_seed, config.model.sector) {
            Ok(p) => done.push(p),
            Err(e) => failures.push(Failure::new(c, None, &e)),
        }
    }
    let summary = json!({ "cells": done });
    Ok(ExperimentOutputs {
        files: vec![("phase_diagram.csv".into(), phase_cells_csv(&done))],
        summary,
        failures,
    })
}

fn dynamics_for(config: &ExperimentConfig, cell: &CellSpec, r: usize) -> Result<Arc<Dynamics>> {
    let real = config.realization(cell, r)?;
    Ok(Arc::new(Dynamics::new(&real, cell.dt)?))
}

fn dynamics_trace(config: &ExperimentConfig, cells: &[CellSpec]) -> Result<ExperimentOutputs> {
    let obs = config.reservoir.observables.resolve(config.model.n_spins);
    let results = per_item(cells, config.realizations, |cell, r| {
        let dynamics = dynamics_for(config, cell, r)?;
        let inputs = config.reservoir_inputs(cell.index, r, config.reservoir.steps)?;
        let init = config.initial_state(config.item_seed(cell.index, r, tag::INITIAL_A))?;
        let rho = init.density_matrix(config.model.n_spins)?;
        let traj = run_trajectory_from(&dynamics, &obs, &inputs, rho, false)?;
        Ok(trajectory_csv(&traj))
    });
    let mut files = Vec::new();
    let mut failures = Vec::new();
    let mut listing = Vec::new();
    for (cell, items) in cells.iter().zip(results) {
        for (r, csv) in split_ok(cell, items, &mut failures) {
            let name = format!("trajectory_c{:03}_r{:03}.csv", cell.index, r);
            listing.push(json!({"file": name, "h": cell.h, "w": cell.w, "dt": cell.dt, "realization": r}));
            files.push((name, csv));
        }
    }
    Ok(ExperimentOutputs {
        files,
        summary: json!({ "trajectories": listing }),
        failures,
    })
}

fn convergence(config: &ExperimentConfig, cells: &[CellSpec], curves: bool) -> Result<ExperimentOutputs> {
    let steps = config.reservoir.steps;
    let results = per_item(cells, config.realizations, |cell, r| -> Result<ConvergenceSeries> {
        let dynamics = dynamics_for(config, cell, r)?;
        let inputs = config.reservoir_inputs(cell.index, r, steps)?;
        convergence_with(
            &dynamics,
            &inputs,
            config.item_seed(cell.index, r, tag::INITIAL_A),
            config.item_seed(cell.index, r, tag::INITIAL_B),
        )
    });
    let mut failures = Vec::new();
    let mut files = Vec::new();
    let mut table = CsvTable::new(&[
        "h",
        "w",
        "dt",
        "n_pairs",
        "median_final_distance",
        "mean_final_distance",
        "mean_final_distance_clamped",
    ]);
    let mut rows = Vec::new();
    for (cell, items) in cells.iter().zip(results) {
        let ok = split_ok(cell, items, &mut failures);
        if ok.is_empty() {
            continue;
        }
        let finals: Vec<f64> = ok.iter().map(|(_, s)| s.final_raw()).collect();
        let clamped: Vec<f64> = finals.iter().map(|d| d.max(DISTANCE_FLOOR)).collect();
        let med = median(&finals);
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        let mean_c = clamped.iter().sum::<f64>() / clamped.len() as f64;
        table.push_row(&[
            Cell::from(cell.h),
            Cell::from(cell.w),
            Cell::from(cell.dt),
            Cell::from(ok.len()),
            Cell::from(med),
            Cell::from(mean),
            Cell::from(mean_c),
        ]);
        rows.push(json!({
            "h": cell.h, "w": cell.w, "dt": cell.dt, "n_pairs": ok.len(),
            "median_final_distance": med, "mean_final_distance": mean,
        }));
        if curves {
            let mut t = CsvTable::new(&["step", "distance_raw", "distance_clamped", "distance_median_raw"]);
            for k in 0..=steps {
                let at: Vec<f64> = ok.iter().map(|(_, s)| s.raw[k]).collect();
                let mean = at.iter().sum::<f64>() / at.len() as f64;
                t.push_row(&[
                    Cell::from(k),
                    Cell::from(mean),
                    Cell::from(mean.max(DISTANCE_FLOOR)),
                    Cell::from(median(&at)),
                ]);
            }
            files.push((format!("convergence_c{:03}.csv", cell.index), t.into_string()));
        }
    }
    let name = if curves { "convergence_curve_summary.csv" } else { "convergence_map.csv" };
    files.insert(0, (name.into(), table.into_string()));
    Ok(ExperimentOutputs {
        files,
        summary: json!({ "cells": rows }),
        failures,
    })
}

struct TaskScores {
    c_train: Vec<f64>,
    c_test: Vec<f64>,
}

fn task_sweep(config: &ExperimentConfig, cells: &[CellSpec]) -> Result<ExperimentOutputs> {
    let t = &config.task;
    let specs: Vec<TaskSpec> = t.tasks.iter().map(|n| parse_task(n)).collect::<Result<_>>()?;
    let split = t.split();
    let obs = config.reservoir.observables.resolve(config.model.n_spins);
    let results = per_item(cells, config.realizations, |cell, r| {
        let dynamics = dynamics_for(config, cell, r)?;
        let inputs = gen_input(
            InputKind::Uniform {
                lo: t.input_lo,
                hi: t.input_hi,
            },
            split.total(),
            config.item_seed(cell.index, r, tag::INPUT),
        )?;
        let init = config.initial_state(config.item_seed(cell.index, r, tag::INITIAL_A))?;
        let rho = init.density_matrix(config.model.n_spins)?;
        let traj = run_trajectory_from(&dynamics, &obs, &inputs, rho, false)?;
        let mut scores = TaskScores {
            c_train: Vec::new(),
            c_test: Vec::new(),
        };
        for spec in &specs {
            let target = spec.target(&inputs)?;
            let fit = train_eval(&traj.design, &target, split, t.ridge)?;
            scores.c_train.push(fit.c_train);
            scores.c_test.push(fit.c_test);
        }
        Ok(scores)
    });
    let mut failures = Vec::new();
    let mut per_real = CsvTable::new(&["h", "w", "dt", "realization", "task", "c_train", "c_test"]);
    let mut agg = CsvTable::new(&["h", "w", "dt", "task", "n_realizations", "mean_c", "std_c", "stderr_c"]);
    let mut rows = Vec::new();
    for (cell, items) in cells.iter().zip(results) {
        let ok = split_ok(cell, items, &mut failures);
        for (k, spec) in specs.iter().enumerate() {
            let name = spec.name();
            for (r, s) in &ok {
                per_real.push_row(&[
                    Cell::from(cell.h),
                    Cell::from(cell.w),
                    Cell::from(cell.dt),
                    Cell::from(*r),
                    Cell::from(name.as_str()),
                    Cell::from(s.c_train[k]),
                    Cell::from(s.c_test[k]),
                ]);
            }
            if ok.is_empty() {
                continue;
            }
            let cs: Vec<f64> = ok.iter().map(|(_, s)| s.c_test[k]).collect();
            let (mean, std, stderr) = mean_std(&cs);
            agg.push_row(&[
                Cell::from(cell.h),
                Cell::from(cell.w),
                Cell::from(cell.dt),
                Cell::from(name.as_str()),
                Cell::from(cs.len()),
                Cell::from(mean),
                Cell::from(std),
                Cell::from(stderr),
            ]);
            rows.push(json!({
                "h": cell.h, "w": cell.w, "dt": cell.dt, "task": name,
                "n_realizations": cs.len(), "mean_c": mean, "std_c": std, "stderr_c": stderr,
            }));
        }
    }
    Ok(ExperimentOutputs {
        files: vec![
            ("task_sweep.csv".into(), agg.into_string()),
            ("task_realizations.csv".into(), per_real.into_string()),
        ],
        summary: json!({ "cells": rows }),
        failures,
    })
}

fn ipc_sweep(config: &ExperimentConfig, cells: &[CellSpec]) -> Result<ExperimentOutputs> {
    let ic = &config.ipc;
    let obs = config.reservoir.observables.resolve(config.model.n_spins);
    let len = ic.washout + ic.samples;
    let results = per_item(cells, config.realizations, |cell, r| -> Result<CapacityReport> {
        let dynamics = dynamics_for(config, cell, r)?;
        let raw = gen_input(
            InputKind::Uniform { lo: -1.0, hi: 1.0 },
            len,
            config.item_seed(cell.index, r, tag::INPUT),
        )?;
        let inputs: Vec<f64> = raw.iter().map(|x| ((1.0 + x) / 2.0).clamp(0.0, 1.0)).collect();
        let init = config.initial_state(config.item_seed(cell.index, r, tag::INITIAL_A))?;
        let rho = init.density_matrix(config.model.n_spins)?;
        let traj = run_trajectory_from(&dynamics, &obs, &inputs, rho, false)?;
        let ipc = ic.ipc_config(config.item_seed(cell.index, r, tag::SURROGATE));
        ipc_capacity(&traj.design, &raw, &ipc)
    });
    let degrees: Vec<usize> = (1..=ic.d_max).collect();
    let mut header: Vec<String> = ["h", "w", "dt", "realization", "total", "normalized_total"].map(String::from).to_vec();
    header.extend(degrees.iter().map(|d| format!("capacity_d{d}")));
    let mut per_real = CsvTable::new(&header);
    let mut long = CsvTable::new(&["h", "w", "dt", "realization", "degree", "capacity", "threshold", "n_targets_counted"]);
    let mut sum_header: Vec<String> = ["h", "w", "dt", "n_realizations", "mean_total", "mean_normalized_total", "std_normalized_total"]
        .map(String::from)
        .to_vec();
    sum_header.extend(degrees.iter().map(|d| format!("mean_capacity_d{d}")));
    let mut agg = CsvTable::new(&sum_header);
    let mut failures = Vec::new();
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for (cell, items) in cells.iter().zip(results) {
        let ok = split_ok(cell, items, &mut failures);
        for (r, rep) in &ok {
            let mut cells_row = vec![
                Cell::from(cell.h),
                Cell::from(cell.w),
                Cell::from(cell.dt),
                Cell::from(*r),
                Cell::from(rep.total),
                Cell::from(rep.normalized_total),
            ];
            cells_row.extend(degrees.iter().map(|d| Cell::from(rep.per_degree.get(d).copied().unwrap_or(0.0))));
            per_real.push_row(&cells_row);
            for d in &degrees {
                long.push_row(&[
                    Cell::from(cell.h),
                    Cell::from(cell.w),
                    Cell::from(cell.dt),
                    Cell::from(*r),
                    Cell::from(*d),
                    Cell::from(rep.per_degree.get(d).copied().unwrap_or(0.0)),
                    Cell::from(rep.threshold_table.get(d).copied().unwrap_or(0.0)),
                    Cell::from(rep.counted(*d)),
                ]);
            }
            files.push((
                format!("ipc_report_c{:03}_r{:03}.json", cell.index, r),
                serde_json::to_string(rep)? + "\n",
            ));
        }
        if ok.is_empty() {
            continue;
        }
        let norm: Vec<f64> = ok.iter().map(|(_, rep)| rep.normalized_total).collect();
        let totals: Vec<f64> = ok.iter().map(|(_, rep)| rep.total).collect();
        let (mean_n, std_n, _) = mean_std(&norm);
        let (mean_t, _, _) = mean_std(&totals);
        let per_degree: Vec<f64> = degrees
            .iter()
            .map(|d| {
                let v: Vec<f64> = ok.iter().map(|(_, rep)| rep.per_degree.get(d).copied().unwrap_or(0.0)).collect();
                mean_std(&v).0
            })
            .collect();
        let mut row = vec![
            Cell::from(cell.h),
            Cell::from(cell.w),
            Cell::from(cell.dt),
            Cell::from(ok.len()),
            Cell::from(mean_t),
            Cell::from(mean_n),
            Cell::from(std_n),
        ];
        row.extend(per_degree.iter().map(|&c| Cell::from(c)));
        agg.push_row(&row);
        rows.push(json!({
            "h": cell.h, "w": cell.w, "dt": cell.dt, "n_realizations": ok.len(),
            "mean_total": mean_t, "mean_normalized_total": mean_n, "std_normalized_total": std_n,
            "mean_capacity_by_degree": per_degree,
        }));
    }
    let mut all = vec![
        ("ipc_sweep.csv".to_string(), agg.into_string()),
        ("ipc_realizations.csv".to_string(), per_real.into_string()),
        ("ipc_degrees.csv".to_string(), long.into_string()),
    ];
    all.extend(files);
    Ok(ExperimentOutputs {
        files: all,
        summary: json!({ "cells": rows }),
        failures,
    })
}

fn conserved_trace(config: &ExperimentConfig, cells: &[CellSpec]) -> Result<ExperimentOutputs> {
    let states: Vec<NamedInitialState> = config
        .reservoir
        .initial_states
        .iter()
        .map(|s| NamedInitialState::parse(s))
        .collect::<Result<_>>()?;
    let obs = config.reservoir.observables.resolve(config.model.n_spins);
    let steps = config.reservoir.steps;
    let results = per_item(cells, config.realizations, |cell, r| {
        let dynamics = dynamics_for(config, cell, r)?;
        let inputs = config.reservoir_inputs(cell.index, r, steps)?;
        states
            .iter()
            .map(|st| {
                let rho = st.density_matrix(config.model.n_spins)?;
                let traj = run_trajectory_from(&dynamics, &obs, &inputs, rho, true)?;
                Ok((inputs.clone(), traj.conserved.unwrap_or_default()))
            })
            .collect::<Result<Vec<_>>>()
    });
    let spread = |xs: Vec<f64>| {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    let mut failures = Vec::new();
    let mut files = Vec::new();
    let mut summary = CsvTable::new(&[
        "h",
        "w",
        "dt",
        "realization",
        "initial_energy_spread",
        "final_energy_spread",
        "final_parity_spread",
    ]);
    let mut rows = Vec::new();
    for (cell, items) in cells.iter().zip(results) {
        for (r, traces) in split_ok(cell, items, &mut failures) {
            let mut header = vec!["step".to_string(), "s".to_string()];
            for st in &states {
                let n = st.name();
                header.extend([format!("e_post_inject_{n}"), format!("e_post_evolve_{n}"), format!("parity_{n}")]);
            }
            let mut t = CsvTable::new(&header);
            let inputs = &traces[0].0;
            for k in 0..steps {
                let mut row = vec![Cell::from(k), Cell::from(inputs[k])];
                for (_, c) in &traces {
                    row.push(Cell::from(c.e_post_inject[k]));
                    row.push(Cell::from(c.e_post_evolve[k]));
                    row.push(Cell::from(c.parity_post_evolve[k]));
                }
                t.push_row(&row);
            }
            files.push((format!("conserved_c{:03}_r{:03}.csv", cell.index, r), t.into_string()));
            let first = spread(traces.iter().map(|(_, c)| c.e_post_evolve[0]).collect());
            let last = spread(traces.iter().map(|(_, c)| c.e_post_evolve[steps - 1]).collect());
            let parity = spread(traces.iter().map(|(_, c)| c.parity_post_evolve[steps - 1]).collect());
            summary.push_row(&[
                Cell::from(cell.h),
                Cell::from(cell.w),
                Cell::from(cell.dt),
                Cell::from(r),
                Cell::from(first),
                Cell::from(last),
                Cell::from(parity),
            ]);
            rows.push(json!({
                "h": cell.h, "w": cell.w, "dt": cell.dt, "realization": r,
                "initial_energy_spread": first, "final_energy_spread": last, "final_parity_spread": parity,
            }));
        }
    }
    files.insert(0, ("conserved_summary.csv".into(), summary.into_string()));
    Ok(ExperimentOutputs {
        files,
        summary: json!({ "cells": rows }),
        failures,
    })
}

/// Rough operation counts and single-core time for a configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostEstimate {
    pub n_cells: usize,
    pub work_items: usize,
    pub hilbert_dim: usize,
    pub diagonalizations: usize,
    pub evolution_steps: usize,
    pub estimated_seconds: f64,
}

// Calibrated on a single core: seconds per d³ for a dense real symmetric
// eigendecomposition and for one fused reservoir step.
const EIG_SECONDS_PER_D3: f64 = 2.5e-10;
const STEP_SECONDS_PER_D3: f64 = 1.0e-10;

pub fn estimate_cost(config: &ExperimentConfig) -> Result<CostEstimate> {
    config.validate()?;
    let n_cells = config.cells().len();
    let items = n_cells * config.realizations;
    let dim = 1usize << config.model.n_spins;
    let d3 = (dim as f64).powi(3);
    let (diag, steps, eig_d3) = match config.experiment {
        ExperimentKind::PhaseDiagram => (items, 0, d3 / 8.0 * 0.4),
        ExperimentKind::DynamicsTrace => (items, items * config.reservoir.steps, d3),
        ExperimentKind::ConvergenceMap | ExperimentKind::ConvergenceCurve => {
            (items, 2 * items * config.reservoir.steps, d3)
        }
        ExperimentKind::ConservedTrace => (
            items,
            // The staged step costs about 2.7 fused steps.
            (2.7 * (items * config.reservoir.steps * config.reservoir.initial_states.len()) as f64) as usize,
            d3,
        ),
        ExperimentKind::TaskSweep => (items, items * config.task.split().total(), d3),
        ExperimentKind::IpcSweep => (items, items * (config.ipc.washout + config.ipc.samples), d3),
    };
    let workers = resolve_workers(config.workers)? as f64;
    let seconds = (diag as f64 * EIG_SECONDS_PER_D3 * eig_d3 + steps as f64 * STEP_SECONDS_PER_D3 * d3) / workers;
    Ok(CostEstimate {
        n_cells,
        work_items: items,
        hilbert_dim: dim,
        diagonalizations: diag,
        evolution_steps: steps,
        estimated_seconds: seconds,
    })
}
