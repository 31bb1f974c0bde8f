//! `tcsc` — solve a case, estimate its flow Jacobian, or run a control scenario.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tcsc_core::controller::ControlError;
use tcsc_core::output::{fmt_f64, write_bundle};
use tcsc_core::{
    load_case, run_scenario, FlowDefinition, ImpedanceState, IngestError, JacobianEstimator,
    NewtonRaphson, FlowSolver, ScenarioConfig, ScenarioError, SolverOptions,
};

#[derive(Parser)]
#[command(name = "tcsc", version, about = "Cooperative TCSC control: power flow, Jacobian estimation, scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Flow {
    /// `|V_f − V_t|²·conj(1/z)`, the power absorbed by the series element.
    SeriesElement,
    /// `V_f·conj(I_ft)`, the power leaving the from-bus.
    SendingEnd,
}

impl From<Flow> for FlowDefinition {
    fn from(f: Flow) -> Self {
        match f {
            Flow::SeriesElement => FlowDefinition::SeriesElement,
            Flow::SendingEnd => FlowDefinition::SendingEnd,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the AC power flow from flat start and print the solution as JSON.
    Solve {
        case: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long = "max-iter", default_value_t = 20)]
        max_iter: usize,
        #[arg(long, value_enum, default_value = "series-element")]
        flow: Flow,
    },
    /// Estimate the 2n×2n branch-flow Jacobian and write it as CSV.
    Jacobian {
        case: PathBuf,
        #[arg(long, default_value_t = 1e-6, allow_negative_numbers = true)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "series-element")]
        flow: Flow,
    },
    /// Run a scenario and write the output bundle.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace the scenario's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Record every d-th step in the per-step tables.
        #[arg(long, default_value_t = 1)]
        downsample: usize,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Io(String),
    Parse(String),
    Solver(String),
    Estimator(String),
    Control(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
            Failure::Parse(_) => 4,
            Failure::Solver(_) => 5,
            Failure::Estimator(_) => 6,
            Failure::Control(_) => 7,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m)
            | Failure::Io(m)
            | Failure::Parse(m)
            | Failure::Solver(m)
            | Failure::Estimator(m)
            | Failure::Control(m) => m,
        }
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Parse(e.to_string()),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let msg = e.to_string();
        match e {
            ScenarioError::ConfigIo { .. } => Failure::Io(msg),
            ScenarioError::ConfigParse { .. }
            | ScenarioError::Invalid(_)
            | ScenarioError::Contingency(_) => Failure::Parse(msg),
            ScenarioError::Case(inner) => match inner {
                IngestError::Io { .. } => Failure::Io(msg),
                _ => Failure::Parse(msg),
            },
            ScenarioError::Setpoint(_) => Failure::Solver(msg),
            ScenarioError::Control(inner) => match inner {
                ControlError::Diverged { .. } => Failure::Solver(msg),
                ControlError::Estimation { .. } => Failure::Estimator(msg),
                _ => Failure::Control(msg),
            },
        }
    }
}

#[derive(Serialize)]
struct BusOut {
    id: usize,
    vm: f64,
    va_deg: f64,
}

#[derive(Serialize)]
struct BranchOut {
    id: usize,
    from: usize,
    to: usize,
    p: f64,
    q: f64,
}

#[derive(Serialize)]
struct SolveOut {
    converged: bool,
    iterations: usize,
    max_mismatch: f64,
    flow: &'static str,
    buses: Vec<BusOut>,
    branches: Vec<BranchOut>,
}

fn solve(case_path: &Path, tol: f64, max_iter: usize, flow: Flow) -> Result<(), Failure> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Failure::Usage(format!("--tol must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Failure::Usage("--max-iter must be at least 1".into()));
    }
    let case = load_case(case_path)?;
    let options = SolverOptions {
        tolerance: tol,
        max_iterations: max_iter,
        ..SolverOptions::default()
    };
    let sol = NewtonRaphson
        .solve(&case, &options)
        .map_err(|e| Failure::Solver(format!("{}: {e}", case_path.display())))?;
    let definition = FlowDefinition::from(flow);
    let flows = sol.flows(&case, definition);
    let out = SolveOut {
        converged: true,
        iterations: sol.iterations,
        max_mismatch: sol.max_mismatch,
        flow: match flow {
            Flow::SeriesElement => "series_element",
            Flow::SendingEnd => "sending_end",
        },
        buses: case
            .buses()
            .iter()
            .zip(&sol.v)
            .map(|(b, v)| BusOut {
                id: b.id,
                vm: v.norm(),
                va_deg: v.arg().to_degrees(),
            })
            .collect(),
        branches: case
            .branches()
            .iter()
            .zip(&flows)
            .map(|(br, p)| BranchOut {
                id: br.id,
                from: br.from_bus,
                to: br.to_bus,
                p: p.re,
                q: p.im,
            })
            .collect(),
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&out).expect("solution serializes")
    );
    Ok(())
}

fn jacobian(case_path: &Path, lambda: f64, out: &Path, flow: Flow) -> Result<(), Failure> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Failure::Usage(format!("--lambda must be positive, got {lambda}")));
    }
    let case = load_case(case_path)?;
    let state = ImpedanceState::nominal(&case);
    let est = JacobianEstimator::new(lambda)
        .with_flow(flow.into())
        .with_parallel(true)
        .estimate(&NewtonRaphson, &case, &state, &SolverOptions::default(), 0)
        .map_err(|e| Failure::Estimator(e.to_string()))?;

    let n = case.branch_count();
    let labels = |a: &str, b: &str| -> Vec<String> {
        (1..=n)
            .map(|i| format!("{a}_{i}"))
            .chain((1..=n).map(|i| format!("{b}_{i}")))
            .collect()
    };
    let rows = labels("re_p", "im_p");
    let mut csv = String::from("output,");
    csv.push_str(&labels("r", "x").join(","));
    csv.push('\n');
    let m = est.matrix();
    for (i, label) in rows.iter().enumerate() {
        csv.push_str(label);
        for j in 0..m.ncols() {
            write!(csv, ",{}", fmt_f64(m[(i, j)])).unwrap();
        }
        csv.push('\n');
    }
    fs::write(out, csv).map_err(|e| Failure::Io(format!("cannot write {}: {e}", out.display())))
}

fn run(scenario: &Path, out: &Path, seed: Option<u64>, downsample: usize) -> Result<(), Failure> {
    if downsample == 0 {
        return Err(Failure::Usage("--downsample must be at least 1".into()));
    }
    let mut config = ScenarioConfig::from_path(scenario)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let run = run_scenario(&config)?;
    write_bundle(out, &run, downsample).map_err(|e| Failure::Io(e.to_string()))?;
    let s = &run.summary;
    println!("steps          {}", s.steps);
    println!("windows        {}", s.windows);
    println!("initial H      {}", s.initial_h);
    println!("final H        {}", s.final_h);
    println!("initial S      {}", s.initial_s);
    println!("final S        {}", s.final_s);
    println!("refreshes      {}", s.refresh_count);
    println!("seed           {}", s.seed);
    println!("wall time      {:.3} s", s.wall_time.as_secs_f64());
    println!("bundle         {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve {
            case,
            tol,
            max_iter,
            flow,
        } => solve(case, *tol, *max_iter, *flow),
        Command::Jacobian {
            case,
            lambda,
            out,
            flow,
        } => jacobian(case, *lambda, out, *flow),
        Command::Run {
            scenario,
            out,
            seed,
            downsample,
        } => run(scenario, out, *seed, *downsample),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("tcsc: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
