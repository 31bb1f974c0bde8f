//! RTS-24 fixture: parsing, AC power flow, estimation and short scenario runs.

use std::collections::BTreeSet;
use std::path::PathBuf;

use num_complex::Complex64;
use tcsc_core::controller::ControlParams;
use tcsc_core::ingest::{case_from_json, case_to_json};
use tcsc_core::jacobian::JacobianEstimator;
use tcsc_core::powerflow::{branch_power, sending_end_power};
use tcsc_core::scenario::{apply_contingency, capture_setpoint, run_scenario_on, Contingency};
use tcsc_core::{
    load_case, solve_nr, BusKind, FlowDefinition, ImpedanceState, NetworkCase, NewtonRaphson,
    ScenarioConfig, SolverOptions,
};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn rts24() -> NetworkCase {
    load_case(&data("case24_ieee_rts.m")).unwrap()
}

/// Rows of a matrix in the raw MATPOWER text, split on whitespace.
fn raw_rows(table: &str) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(data("case24_ieee_rts.m")).unwrap();
    let start = format!("mpc.{table} = [");
    text.lines()
        .skip_while(|l| !l.starts_with(&start))
        .skip(1)
        .take_while(|l| !l.starts_with("];"))
        .map(|l| {
            l.trim_end_matches(';')
                .split_whitespace()
                .map(|t| t.trim_end_matches(';').parse().unwrap())
                .collect()
        })
        .collect()
}

#[test]
fn fixture_shape_matches_the_raw_tables() {
    let case = rts24();
    let bus = raw_rows("bus");
    assert_eq!(case.bus_count(), bus.len());
    assert_eq!(case.branch_count(), raw_rows("branch").len());
    assert_eq!(case.base_mva(), 100.0);
    assert_eq!((case.bus_count(), case.branch_count()), (24, 38));

    let total_load_mw: f64 = bus.iter().map(|r| r[2]).sum();
    let parsed: f64 = case.buses().iter().map(|b| b.p_load).sum::<f64>() * 100.0;
    assert!((parsed - total_load_mw).abs() < 1e-9);
    assert!((total_load_mw - 2850.0).abs() < 1e-9);

    let slack: Vec<usize> = bus.iter().filter(|r| r[1] == 3.0).map(|r| r[0] as usize).collect();
    assert_eq!(slack, [case.buses()[case.slack_index()].id]);
    let pv = bus.iter().filter(|r| r[1] == 2.0).count();
    assert_eq!(case.buses().iter().filter(|b| b.kind == BusKind::PV).count(), pv);
}

#[test]
fn flat_start_solve_balances_losses() {
    let case = rts24();
    let sol = solve_nr(&case, &SolverOptions::default()).unwrap();
    assert!(sol.iterations <= 10);
    // Without shunts, total injection is exactly the series I²Z dissipation.
    let injected: Complex64 = sol.p_injected.iter().sum();
    let series: Complex64 = sol.p_e.iter().sum();
    assert!((injected - series).norm() < 1e-7, "{injected} vs {series}");
    for br in case.branches() {
        let (f, t) = br.terminals();
        let forward = sending_end_power(&sol.v, br);
        let reversed = tcsc_core::BranchSpec {
            from_bus: br.to_bus,
            to_bus: br.from_bus,
            ..br.clone()
        };
        let backward = sending_end_power(&sol.v, &reversed);
        assert!((forward + backward - branch_power(&sol.v, br)).norm() < 1e-12);
        assert!(sol.v[f].norm() > 0.9 && sol.v[t].norm() > 0.9);
    }
}

#[test]
fn json_round_trip_through_disk() {
    let case = rts24();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rts.json");
    std::fs::write(&path, case_to_json(&case)).unwrap();
    assert_eq!(load_case(&path).unwrap(), case);
    assert_eq!(case_from_json(&case_to_json(&case)).unwrap(), case);
}

#[test]
fn jacobian_has_full_dimension_and_parallel_matches() {
    let case = rts24();
    let state = ImpedanceState::nominal(&case);
    let est = JacobianEstimator::new(1e-6);
    let seq = est.estimate(&NewtonRaphson, &case, &state, &SolverOptions::default(), 0).unwrap();
    let par = est
        .with_parallel(true)
        .estimate(&NewtonRaphson, &case, &state, &SolverOptions::default(), 0)
        .unwrap();
    assert_eq!(seq.matrix().shape(), (76, 76));
    assert_eq!(seq.matrix(), par.matrix());
}

#[test]
fn setpoint_is_the_nominal_solution() {
    let case = rts24();
    let sol = solve_nr(&case, &SolverOptions::default()).unwrap();
    let sigma = capture_setpoint(&NewtonRaphson, &case, &SolverOptions::default(), FlowDefinition::SeriesElement)
        .unwrap();
    assert_eq!(sigma, sol.p_e);
}

#[test]
fn branch_five_contingency() {
    let case = rts24();
    let state = apply_contingency(
        &ImpedanceState::nominal(&case),
        &[Contingency { branch: 5, reactance: 0.6, resistance: None }],
        &BTreeSet::from([5]),
    )
    .unwrap();
    assert_eq!(state.values()[38 + 4], 0.6);
    assert!(state.is_entry_frozen(4) && state.is_entry_frozen(42));
    let bad = Contingency { branch: 99, reactance: 0.6, resistance: None };
    assert!(apply_contingency(&state, &[bad], &BTreeSet::new()).is_err());
}

fn short_paper_config(seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::from_path(&data("paper_24bus.json")).unwrap();
    cfg.seed = seed;
    cfg.params = ControlParams {
        max_steps: 500,
        ..cfg.params
    };
    cfg
}

#[test]
fn short_paper_run_keeps_branch_five_fixed() {
    let cfg = short_paper_config(3);
    let run = run_scenario_on(&NewtonRaphson, &SolverOptions::default(), rts24(), &cfg).unwrap();
    assert_eq!(run.trajectory.steps.len(), 501);
    assert_eq!(run.trajectory.windows.len(), 5);
    assert!(run.trajectory.index_is_monotone());
    for r in &run.trajectory.steps {
        assert_eq!(r.impedance[4], run.initial_state.values()[4]);
        assert_eq!(r.impedance[42], 0.6);
    }
    assert!(run.summary.final_h < run.summary.initial_h);
}

#[test]
fn seed_changes_the_noise_but_not_the_start() {
    let a = run_scenario_on(&NewtonRaphson, &SolverOptions::default(), rts24(), &short_paper_config(1)).unwrap();
    let b = run_scenario_on(&NewtonRaphson, &SolverOptions::default(), rts24(), &short_paper_config(2)).unwrap();
    assert_eq!(a.sigma, b.sigma);
    assert_ne!(a.trajectory.steps[1].h, b.trajectory.steps[1].h);
}

#[test]
fn healthy_noiseless_grid_is_already_at_setpoint() {
    let mut cfg = short_paper_config(0);
    cfg.contingency.clear();
    cfg.frozen_branches.clear();
    cfg.noise_std_mw = 0.0;
    let run = run_scenario_on(&NewtonRaphson, &SolverOptions::default(), rts24(), &cfg).unwrap();
    assert_eq!(run.summary.initial_h, 0.0);
    assert_eq!(run.trajectory.steps.len(), 1);
}
