//! Cooperative TCSC control of transmission branch flows.
//!
//! The pieces, bottom-up:
//!
//! * [`network`] — grid description and the controllable impedance vector;
//! * [`ingest`] — MATPOWER and JSON case files;
//! * [`powerflow`] — polar Newton–Raphson AC power flow and branch flows;
//! * [`jacobian`] — finite-difference sensitivity of branch flows to impedances;
//! * [`controller`] — objective, control law, performance index and the gated loop;
//! * [`scenario`] — the contingency experiment, with [`disturbance`] noise;
//! * [`output`] — CSV/JSON artifacts of a run.

pub mod cases;
pub mod controller;
pub mod disturbance;
pub mod ingest;
pub mod jacobian;
pub mod network;
pub mod output;
pub mod powerflow;
pub mod scenario;

pub use controller::{
    run_cca, run_cca_with, BoundHandling, ControlError, ControlParams, MismatchVector, Trajectory,
};
pub use disturbance::DisturbanceModel;
pub use ingest::{load_case, IngestError};
pub use jacobian::{estimate_jacobian, EstimationError, JacobianEstimate, JacobianEstimator};
pub use network::{BranchSpec, BusKind, BusSpec, ImpedanceState, NetworkCase, NetworkError};
pub use powerflow::{
    solve_nr, FlowDefinition, FlowSolver, NewtonRaphson, PowerFlowError, PowerFlowSolution,
    SolverOptions,
};
pub use scenario::{run_scenario, ScenarioConfig, ScenarioError, ScenarioRun, ScenarioSummary};
