//! The contingency experiment: capture the healthy setpoint, break a branch,
//! then let the controller pull flows back under load noise.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{run_cca_with, ControlError, ControlParams, Trajectory};
use crate::disturbance::DisturbanceModel;
use crate::ingest::{load_case, IngestError};
use crate::network::{ImpedanceState, NetworkCase, NetworkError};
use crate::powerflow::{FlowDefinition, FlowSolver, NewtonRaphson, PowerFlowError, SolverOptions};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    ConfigIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scenario {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("loading case: {0}")]
    Case(#[source] IngestError),
    #[error("capturing setpoint on the nominal case: {0}")]
    Setpoint(#[source] PowerFlowError),
    #[error("applying contingency: {0}")]
    Contingency(#[source] NetworkError),
    #[error("control loop: {0}")]
    Control(#[source] ControlError),
}

/// One forced impedance change. Ids are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contingency {
    pub branch: usize,
    pub reactance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resistance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// MATPOWER `.m` or native `.json`; relative paths resolve against the
    /// scenario file's directory.
    pub case_path: PathBuf,
    #[serde(default)]
    pub contingency: Vec<Contingency>,
    /// 1-based branch ids whose actuators are out of service.
    #[serde(default)]
    pub frozen_branches: BTreeSet<usize>,
    #[serde(default)]
    pub noise_std_mw: f64,
    #[serde(default)]
    pub perturb_generation: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: ControlParams,
}

impl ScenarioConfig {
    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::ConfigIo {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: ScenarioConfig =
            serde_json::from_str(&text).map_err(|source| ScenarioError::ConfigParse {
                path: path.to_path_buf(),
                source,
            })?;
        if cfg.case_path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.case_path = dir.join(&cfg.case_path);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.noise_std_mw >= 0.0 && self.noise_std_mw.is_finite()) {
            return Err(ScenarioError::Invalid(format!(
                "noise_std_mw must be non-negative, got {}",
                self.noise_std_mw
            )));
        }
        if let Some(c) = self
            .contingency
            .iter()
            .find(|c| !c.reactance.is_finite() || c.resistance.is_some_and(|r| !r.is_finite()))
        {
            return Err(ScenarioError::Invalid(format!(
                "contingency on branch {} has a non-finite impedance",
                c.branch
            )));
        }
        self.params
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))
    }

    pub fn disturbance(&self, base_mva: f64) -> DisturbanceModel {
        DisturbanceModel {
            perturb_generation: self.perturb_generation,
            ..DisturbanceModel::from_mw(self.noise_std_mw, base_mva, self.seed)
        }
    }
}

/// Branch flows of the solved nominal case.
pub fn capture_setpoint<S: FlowSolver>(
    solver: &S,
    case: &NetworkCase,
    options: &SolverOptions,
    flow: FlowDefinition,
) -> Result<Vec<Complex64>, PowerFlowError> {
    Ok(solver.solve(case, options)?.flows(case, flow))
}

/// Overwrite the listed entries, then freeze `frozen` (1-based ids) at the
/// resulting values.
pub fn apply_contingency(
    state: &ImpedanceState,
    contingency: &[Contingency],
    frozen: &BTreeSet<usize>,
) -> Result<ImpedanceState, NetworkError> {
    let n = state.branch_count();
    let mut out = state.clone();
    for c in contingency {
        if c.branch == 0 || c.branch > n {
            return Err(NetworkError::UnknownBranch(c.branch));
        }
        let i = c.branch - 1;
        out.set_entry(n + i, c.reactance);
        if let Some(r) = c.resistance {
            out.set_entry(i, r);
        }
    }
    for &b in frozen {
        if b == 0 {
            return Err(NetworkError::UnknownBranch(b));
        }
        out.freeze(b - 1)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub initial_h: f64,
    pub final_h: f64,
    pub initial_s: f64,
    pub final_s: f64,
    pub refresh_count: usize,
    pub steps: usize,
    pub windows: usize,
    pub seed: u64,
    /// Excluded from serialization so identical runs give identical files.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl ScenarioSummary {
    fn new(traj: &Trajectory, seed: u64, wall_time: Duration) -> Self {
        ScenarioSummary {
            initial_h: traj.initial_h(),
            final_h: traj.final_h(),
            initial_s: traj.s0,
            final_s: traj.final_s(),
            refresh_count: traj.refresh_count,
            steps: traj.steps.len() - 1,
            windows: traj.windows.len(),
            seed,
            wall_time,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    /// Nominal, pre-contingency case.
    pub case: NetworkCase,
    pub sigma: Vec<Complex64>,
    /// Impedances after the contingency, before any control.
    pub initial_state: ImpedanceState,
    pub trajectory: Trajectory,
    pub summary: ScenarioSummary,
}

/// Load the case named by `config` and run the experiment.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioRun, ScenarioError> {
    config.validate()?;
    let case = load_case(&config.case_path).map_err(ScenarioError::Case)?;
    run_scenario_on(&NewtonRaphson, &SolverOptions::default(), case, config)
}

/// Run the experiment on an already loaded case.
pub fn run_scenario_on<S: FlowSolver>(
    solver: &S,
    options: &SolverOptions,
    case: NetworkCase,
    config: &ScenarioConfig,
) -> Result<ScenarioRun, ScenarioError> {
    config.validate()?;
    let started = Instant::now();
    let params = &config.params;
    let sigma =
        capture_setpoint(solver, &case, options, params.flow).map_err(ScenarioError::Setpoint)?;
    let initial_state = apply_contingency(
        &ImpedanceState::nominal(&case),
        &config.contingency,
        &config.frozen_branches,
    )
    .map_err(ScenarioError::Contingency)?;
    let disturbance = config.disturbance(case.base_mva());
    let trajectory = run_cca_with(
        solver,
        options,
        &case,
        &initial_state,
        &sigma,
        params,
        &disturbance,
    )
    .map_err(ScenarioError::Control)?;
    let summary = ScenarioSummary::new(&trajectory, config.seed, started.elapsed());
    Ok(ScenarioRun {
        case,
        sigma,
        initial_state,
        trajectory,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zero_load_setpoint_is_zero() {
        let case = cases::three_bus_zero_load();
        for flow in [FlowDefinition::SeriesElement, FlowDefinition::SendingEnd] {
            let sigma = capture_setpoint(&NewtonRaphson, &case, &SolverOptions::default(), flow).unwrap();
            assert!(sigma.iter().all(|s| s.norm() < 1e-12), "{sigma:?}");
        }
    }

    #[test]
    fn two_bus_setpoint_matches_closed_form() {
        let z = c(0.02, 0.1);
        let s = c(0.5, 0.2);
        let case = cases::two_bus(s, z);
        // |V2|² is the larger root of U² + (2Re(w) − 1)U + |w|² = 0, w = z·conj(S);
        // the series loss is then |I|²·z = |S|²/|V2|²·z.
        let w = z * s.conj();
        let b = 2.0 * w.re - 1.0;
        let u = (-b + (b * b - 4.0 * w.norm_sqr()).sqrt()) / 2.0;
        let expected = s.norm_sqr() / u * z;
        let sigma =
            capture_setpoint(&NewtonRaphson, &case, &SolverOptions::default(), FlowDefinition::SeriesElement)
                .unwrap();
        assert!((sigma[0] - expected).norm() < 1e-10, "{:?} vs {expected:?}", sigma[0]);
    }

    #[test]
    fn contingency_overwrites_and_freezes() {
        let case = cases::three_bus_triangle();
        let state = ImpedanceState::nominal(&case);
        let frozen = BTreeSet::from([2]);
        let out = apply_contingency(
            &state,
            &[Contingency {
                branch: 2,
                reactance: 0.6,
                resistance: None,
            }],
            &frozen,
        )
        .unwrap();
        assert_eq!(out.values()[4], 0.6);
        assert_eq!(out.values()[1], state.values()[1]);
        assert!(out.is_entry_frozen(1) && out.is_entry_frozen(4));
        assert_eq!((out.lower()[4], out.upper()[4]), (0.6, 0.6));
    }

    #[test]
    fn empty_contingency_is_identity() {
        let case = cases::three_bus_triangle();
        let state = ImpedanceState::nominal(&case);
        assert_eq!(apply_contingency(&state, &[], &BTreeSet::new()).unwrap(), state);
    }

    #[test]
    fn unknown_contingency_branch_is_rejected() {
        let case = cases::three_bus_triangle();
        let state = ImpedanceState::nominal(&case);
        let bad = Contingency {
            branch: 99,
            reactance: 0.6,
            resistance: None,
        };
        assert!(matches!(
            apply_contingency(&state, &[bad], &BTreeSet::new()),
            Err(NetworkError::UnknownBranch(99))
        ));
        assert!(apply_contingency(&state, &[], &BTreeSet::from([4])).is_err());
    }

    fn config(case_path: &str) -> ScenarioConfig {
        serde_json::from_str(&format!(r#"{{"case_path": "{case_path}"}}"#)).unwrap()
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = config("x.m");
        assert_eq!(cfg.params, ControlParams::default());
        assert!(cfg.contingency.is_empty() && cfg.frozen_branches.is_empty());
        assert_eq!(cfg.noise_std_mw, 0.0);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(serde_json::from_str::<ScenarioConfig>(r#"{"case_path": "a.m", "sede": 1}"#).is_err());
    }

    #[test]
    fn negative_noise_is_invalid() {
        let cfg = ScenarioConfig {
            noise_std_mw: -1.0,
            ..config("x.m")
        };
        assert!(matches!(cfg.validate(), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn equilibrium_scenario_exits_at_step_zero() {
        let cfg = config("unused.json");
        let run = run_scenario_on(
            &NewtonRaphson,
            &SolverOptions::default(),
            cases::three_bus_triangle(),
            &cfg,
        )
        .unwrap();
        assert_eq!(run.summary.initial_h, 0.0);
        assert_eq!(run.summary.steps, 0);
        assert_eq!(run.trajectory.steps.len(), 1);
    }

    #[test]
    fn relative_case_path_resolves_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        fs::write(&path, r#"{"case_path": "grid.json", "seed": 3}"#).unwrap();
        let cfg = ScenarioConfig::from_path(&path).unwrap();
        assert_eq!(cfg.case_path, dir.path().join("grid.json"));
        assert_eq!(cfg.seed, 3);
        assert!(matches!(run_scenario(&cfg), Err(ScenarioError::Case(IngestError::Io { .. }))));
    }
}
