//! `qrc-lab`: runs reservoir-computing experiments from a TOML config, a
//! preset, or command-line flags.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qrc_core::experiments::{
    estimate_cost, preset, run_experiment, ExperimentConfig, ExperimentKind, InputMode, LogAxis,
    ObservableSet, ThresholdName,
};
use qrc_core::spin_model::Sector;

#[derive(Parser, Debug)]
#[command(name = "qrc-lab", version, about = "Quantum reservoir computing experiments on disordered spin networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Gap-ratio phase diagram over field and disorder.
    PhaseDiagram {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        sector: Option<SectorArg>,
    },
    /// Records observable trajectories under a random input stream.
    Evolve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        input: Option<InputArg>,
    },
    /// Distance between two reservoirs fed the same inputs.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Write only the final-distance map instead of full curves.
        #[arg(long)]
        map: bool,
        /// Number of state pairs per cell (same as --realizations).
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long, value_enum)]
        input: Option<InputArg>,
    },
    /// Trains linear readouts on NARMA and delay tasks.
    Task {
        #[command(flatten)]
        common: Common,
        /// Task family; repeat to score several tasks on the same trajectory.
        #[arg(long = "task", value_enum)]
        tasks: Vec<TaskArg>,
        /// NARMA order.
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Delay of the delay task.
        #[arg(long, default_value_t = 10)]
        tau: usize,
        #[arg(long)]
        ridge: Option<f64>,
        #[arg(long)]
        washout: Option<usize>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        /// Upper end of the uniform input range.
        #[arg(long)]
        input_hi: Option<f64>,
    },
    /// Information processing capacity.
    Ipc {
        #[command(flatten)]
        common: Common,
        /// Post-washout length of the input stream.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        d_max: Option<usize>,
        #[arg(long)]
        washout: Option<usize>,
        #[arg(long, value_enum)]
        threshold: Option<ThresholdArg>,
        #[arg(long)]
        surrogate_samples: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
    },
    /// Energy and parity of several initial states under the input map.
    Conserved {
        #[command(flatten)]
        common: Common,
        /// Initial states, comma separated.
        #[arg(long, value_delimiter = ',')]
        states: Vec<String>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment configuration; flags override its values.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    n_spins: Option<usize>,
    #[arg(long)]
    j_s: Option<f64>,
    /// Field values, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    h: Vec<f64>,
    /// Disorder strengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    w: Vec<f64>,
    /// Log-spaced field grid as `lo,hi,n`.
    #[arg(long, value_parser = parse_log_axis)]
    h_log: Option<LogAxis>,
    #[arg(long, value_parser = parse_log_axis)]
    w_log: Option<LogAxis>,
    /// Explicit `h,w` grid point; repeatable, replaces the product grid.
    #[arg(long = "point", value_parser = parse_point)]
    points: Vec<[f64; 2]>,
    /// Time steps, comma separated.
    #[arg(long, value_delimiter = ',')]
    dt: Vec<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    observables: Option<ObservablesArg>,
    #[arg(long)]
    initial_state: Option<String>,
    /// Worker threads; defaults to QRC_WORKERS or the number of cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Print the resolved configuration and a cost estimate without running.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SectorArg {
    Even,
    Odd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InputArg {
    Uniform,
    Binary,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum TaskArg {
    Narma,
    Delay,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ThresholdArg {
    Surrogate,
    Analytic,
    None,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ObservablesArg {
    Default,
    Z,
}

fn parse_log_axis(text: &str) -> Result<LogAxis, String> {
    let parts: Vec<&str> = text.split(',').collect();
    let [lo, hi, n] = parts.as_slice() else {
        return Err("expected lo,hi,n".into());
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
    let axis = LogAxis {
        lo: num(lo)?,
        hi: num(hi)?,
        n: n.trim().parse().map_err(|e| format!("{n:?}: {e}"))?,
    };
    if !(axis.lo > 0.0 && axis.hi > 0.0 && axis.n > 0) {
        return Err("log grid needs positive bounds and n >= 1".into());
    }
    Ok(axis)
}

fn parse_point(text: &str) -> Result<[f64; 2], String> {
    let (h, w) = text.split_once(',').ok_or("expected h,w")?;
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
    Ok([num(h)?, num(w)?])
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Run(String),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn kind_of(command: &Command) -> ExperimentKind {
    match command {
        Command::PhaseDiagram { .. } => ExperimentKind::PhaseDiagram,
        Command::Evolve { .. } => ExperimentKind::DynamicsTrace,
        Command::Converge { map: true, .. } => ExperimentKind::ConvergenceMap,
        Command::Converge { .. } => ExperimentKind::ConvergenceCurve,
        Command::Task { .. } => ExperimentKind::TaskSweep,
        Command::Ipc { .. } => ExperimentKind::IpcSweep,
        Command::Conserved { .. } => ExperimentKind::ConservedTrace,
    }
}

fn common_of(command: &Command) -> &Common {
    match command {
        Command::PhaseDiagram { common, .. }
        | Command::Evolve { common, .. }
        | Command::Converge { common, .. }
        | Command::Task { common, .. }
        | Command::Ipc { common, .. }
        | Command::Conserved { common, .. } => common,
    }
}

fn base_config(kind: ExperimentKind, common: &Common) -> Result<ExperimentConfig, Failure> {
    if let Some(path) = &common.config {
        let mut c = ExperimentConfig::from_file(path).map_err(|e| Failure::Usage(e.to_string()))?;
        // A curve config may be run as a map and vice versa; other kinds must match.
        let compatible = c.experiment == kind
            || matches!(
                (c.experiment, kind),
                (ExperimentKind::ConvergenceCurve, ExperimentKind::ConvergenceMap)
                    | (ExperimentKind::ConvergenceMap, ExperimentKind::ConvergenceCurve)
            );
        if !compatible {
            return Err(Failure::Usage(format!(
                "{} describes a {} experiment, not {}",
                path.display(),
                c.experiment.name(),
                kind.name()
            )));
        }
        c.experiment = kind;
        return Ok(c);
    }
    match common.preset {
        Some(p) => {
            let name = match p {
                PresetArg::Paper => "paper",
                PresetArg::Desk => "desk",
            };
            preset(kind, name).map_err(|e| Failure::Usage(e.to_string()))
        }
        None => Ok(ExperimentConfig::new(kind)),
    }
}

fn apply_common(c: &mut ExperimentConfig, a: &Common) {
    if let Some(out) = &a.out {
        c.output_dir = out.clone();
    }
    if let Some(s) = a.seed {
        c.master_seed = s;
    }
    if let Some(r) = a.realizations {
        c.realizations = r;
    }
    if let Some(n) = a.n_spins {
        c.model.n_spins = n;
    }
    if let Some(j) = a.j_s {
        c.model.j_s = j;
    }
    let grid_given = !a.h.is_empty() || !a.w.is_empty() || a.h_log.is_some() || a.w_log.is_some();
    if grid_given {
        c.model.points.clear();
    }
    if !a.h.is_empty() {
        c.model.h = a.h.clone();
        c.model.h_log = None;
    }
    if !a.w.is_empty() {
        c.model.w = a.w.clone();
        c.model.w_log = None;
    }
    if a.h_log.is_some() {
        c.model.h_log = a.h_log;
    }
    if a.w_log.is_some() {
        c.model.w_log = a.w_log;
    }
    if !a.points.is_empty() {
        c.model.points = a.points.clone();
    }
    match a.dt.as_slice() {
        [] => {}
        [one] => {
            c.reservoir.dt = *one;
            c.reservoir.dt_values.clear();
        }
        many => c.reservoir.dt_values = many.to_vec(),
    }
    if let Some(s) = a.steps {
        c.reservoir.steps = s;
    }
    if let Some(o) = a.observables {
        c.reservoir.observables = match o {
            ObservablesArg::Default => ObservableSet::Default,
            ObservablesArg::Z => ObservableSet::Z,
        };
    }
    if let Some(s) = &a.initial_state {
        c.reservoir.initial_state = s.clone();
    }
    if a.workers.is_some() {
        c.workers = a.workers;
    }
}

fn input_mode(arg: InputArg) -> InputMode {
    match arg {
        InputArg::Uniform => InputMode::Uniform,
        InputArg::Binary => InputMode::Binary,
    }
}

fn resolve(command: &Command) -> Result<ExperimentConfig, Failure> {
    let kind = kind_of(command);
    let common = common_of(command);
    let mut c = base_config(kind, common)?;
    if common.config.is_none() && common.out.is_none() && common.preset.is_none() {
        c.output_dir = PathBuf::from("runs").join(kind.name());
    }
    apply_common(&mut c, common);
    match command {
        Command::PhaseDiagram { sector, .. } => {
            if let Some(s) = sector {
                c.model.sector = match s {
                    SectorArg::Even => Sector::Even,
                    SectorArg::Odd => Sector::Odd,
                };
            }
        }
        Command::Evolve { input, .. } => {
            if let Some(i) = input {
                c.reservoir.input = input_mode(*i);
            }
        }
        Command::Converge { pairs, input, .. } => {
            if let Some(p) = pairs {
                c.realizations = *p;
            }
            if let Some(i) = input {
                c.reservoir.input = input_mode(*i);
            }
        }
        Command::Task {
            tasks,
            n,
            tau,
            ridge,
            washout,
            train,
            test,
            input_hi,
            ..
        } => {
            if !tasks.is_empty() {
                c.task.tasks = tasks
                    .iter()
                    .map(|t| match t {
                        TaskArg::Narma => format!("narma{n}"),
                        TaskArg::Delay => format!("delay{tau}"),
                    })
                    .collect();
            }
            if let Some(r) = ridge {
                c.task.ridge = *r;
            }
            if let Some(v) = washout {
                c.task.washout = *v;
            }
            if let Some(v) = train {
                c.task.train = *v;
            }
            if let Some(v) = test {
                c.task.test = *v;
            }
            if let Some(v) = input_hi {
                c.task.input_hi = *v;
            }
        }
        Command::Ipc {
            samples,
            d_max,
            washout,
            threshold,
            surrogate_samples,
            patience,
            ..
        } => {
            if let Some(v) = samples {
                c.ipc.samples = *v;
            }
            if let Some(v) = d_max {
                c.ipc.d_max = *v;
            }
            if let Some(v) = washout {
                c.ipc.washout = *v;
            }
            if let Some(t) = threshold {
                c.ipc.threshold = match t {
                    ThresholdArg::Surrogate => ThresholdName::Surrogate,
                    ThresholdArg::Analytic => ThresholdName::Analytic,
                    ThresholdArg::None => ThresholdName::None,
                };
            }
            if let Some(v) = surrogate_samples {
                c.ipc.surrogate_samples = *v;
            }
            if let Some(v) = patience {
                c.ipc.patience = *v;
            }
        }
        Command::Conserved { states, .. } => {
            if !states.is_empty() {
                c.reservoir.initial_states = states.clone();
            }
        }
    }
    c.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(c)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let config = resolve(&cli.command)?;
    if common_of(&cli.command).dry_run {
        let estimate = estimate_cost(&config).map_err(|e| Failure::Usage(e.to_string()))?;
        let toml = config.to_toml_string().map_err(|e| Failure::Run(e.to_string()))?;
        println!("{toml}");
        let estimate = serde_json::to_string_pretty(&estimate).map_err(|e| Failure::Run(e.to_string()))?;
        println!("{estimate}");
        return Ok(());
    }
    let manifest = run_experiment(&config).map_err(|e| Failure::Run(e.to_string()))?;
    let summary_path = config.output_dir.join(qrc_core::experiments::SUMMARY_FILE);
    let summary = std::fs::read_to_string(&summary_path)
        .map_err(|e| Failure::Run(format!("cannot read {}: {e}", summary_path.display())))?;
    print!("{summary}");
    eprintln!(
        "wrote {} files to {} in {:.1} s",
        manifest.checksums.len() + 1,
        config.output_dir.display(),
        manifest.wall_time_seconds
    );
    if !manifest.failures.is_empty() {
        return Err(Failure::Run(format!(
            "{} work item(s) failed; see {}",
            manifest.failures.len(),
            config.output_dir.join(qrc_core::experiments::MANIFEST_FILE).display()
        )));
    }
    Ok(())
}
