//! AC power flow: nodal admittance matrix, bus power mismatches, a polar
//! Newton–Raphson solver and per-branch transmission power.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{BranchSpec, BusKind, NetworkCase};

const J: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerFlowError {
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("warm start has {found} voltages, case has {expected} buses")]
    StartDimension { expected: usize, found: usize },
    #[error("no convergence after {iterations} iterations (max mismatch {max_mismatch:e} p.u.)")]
    Diverged { iterations: usize, max_mismatch: f64 },
    #[error("singular Newton matrix at iteration {iteration}")]
    Singular { iteration: usize },
}

/// Dense m×m bus admittance matrix. `G = Re`, `B = Im`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    entries: DMatrix<Complex64>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries[(i, j)]
    }

    pub fn conductance(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)].re
    }

    pub fn susceptance(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)].im
    }

    /// Injected bus currents `Y·v`.
    pub fn currents(&self, v: &[Complex64]) -> Vec<Complex64> {
        let v = DVector::from_column_slice(v);
        (&self.entries * v).iter().copied().collect()
    }
}

pub fn build_ybus(case: &NetworkCase) -> AdmittanceMatrix {
    let m = case.bus_count();
    let mut entries = DMatrix::from_element(m, m, Complex64::default());
    for br in case.branches() {
        let y = br.admittance().expect("validated case has nonzero impedances");
        let (f, t) = br.terminals();
        entries[(f, f)] += y;
        entries[(t, t)] += y;
        entries[(f, t)] -= y;
        entries[(t, f)] -= y;
    }
    AdmittanceMatrix { entries }
}

/// Bus power mismatches `specified − computed`, with the computed injections
/// evaluated term by term from `|V_i||V_j|(G cos θ_ij ± B sin θ_ij)` sums.
///
/// Active entries are zero at the slack bus and reactive entries are zero at
/// slack and PV buses, whose injections are free variables.
pub fn residuals(case: &NetworkCase, v: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    let y = build_ybus(case);
    let m = case.bus_count();
    let mut dp = vec![0.0; m];
    let mut dq = vec![0.0; m];
    for (i, bus) in case.buses().iter().enumerate() {
        let (mut p, mut q) = (0.0, 0.0);
        for j in 0..m {
            let theta = v[i].arg() - v[j].arg();
            let mag = v[i].norm() * v[j].norm();
            let (g, b) = (y.conductance(i, j), y.susceptance(i, j));
            p += mag * (g * theta.cos() + b * theta.sin());
            q += mag * (g * theta.sin() - b * theta.cos());
        }
        let spec = bus.specified_injection();
        if bus.kind != BusKind::Slack {
            dp[i] = spec.re - p;
        }
        if bus.kind == BusKind::PQ {
            dq[i] = spec.im - q;
        }
    }
    (dp, dq)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub enum SolverStart {
    /// Slack/PV magnitudes at setpoint, PQ magnitudes 1, all angles 0.
    #[default]
    Flat,
    /// The voltages stored in the case (`v_init`).
    CaseInit,
    /// Voltages of an earlier solution.
    Warm(Vec<Complex64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Infinity-norm bound on the mismatch vector, per-unit.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub start: SolverStart,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-8,
            max_iterations: 20,
            start: SolverStart::Flat,
        }
    }
}

impl SolverOptions {
    pub fn warm(mut self, v: &[Complex64]) -> Self {
        self.start = SolverStart::Warm(v.to_vec());
        self
    }

    fn validate(&self) -> Result<(), PowerFlowError> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(PowerFlowError::InvalidOptions(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(PowerFlowError::InvalidOptions(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub v: Vec<Complex64>,
    /// Bus voltage angles in radians.
    pub theta: Vec<f64>,
    /// Realized complex bus injections `V ∘ conj(Y·V)`.
    pub p_injected: Vec<Complex64>,
    /// Branch transmission power `|V_f − V_t|²·conj(y)`, see [`branch_power`].
    pub p_e: Vec<Complex64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn flows(&self, case: &NetworkCase, definition: FlowDefinition) -> Vec<Complex64> {
        match definition {
            FlowDefinition::SeriesElement => self.p_e.clone(),
            FlowDefinition::SendingEnd => definition.flows(case, &self.v),
        }
    }
}

/// Transmission power across the series element: `|V_f − V_t|²·conj(1/z)`.
pub fn branch_power(v: &[Complex64], branch: &BranchSpec) -> Complex64 {
    let (f, t) = branch.terminals();
    let y = branch.impedance.inv();
    (v[f] - v[t]).norm_sqr() * y.conj()
}

/// Complex power leaving the from-bus into the branch: `V_f·conj((V_f − V_t)/z)`.
pub fn sending_end_power(v: &[Complex64], branch: &BranchSpec) -> Complex64 {
    let (f, t) = branch.terminals();
    v[f] * ((v[f] - v[t]) / branch.impedance).conj()
}

/// Which per-branch power the controller measures and regulates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowDefinition {
    /// [`branch_power`].
    #[default]
    SeriesElement,
    /// [`sending_end_power`], the quantity MATPOWER reports as `PF + jQF`.
    SendingEnd,
}

impl FlowDefinition {
    pub fn branch_flow(self, v: &[Complex64], branch: &BranchSpec) -> Complex64 {
        match self {
            FlowDefinition::SeriesElement => branch_power(v, branch),
            FlowDefinition::SendingEnd => sending_end_power(v, branch),
        }
    }

    pub fn flows(self, case: &NetworkCase, v: &[Complex64]) -> Vec<Complex64> {
        case.branches()
            .iter()
            .map(|br| self.branch_flow(v, br))
            .collect()
    }
}

/// Anything that can produce a power-flow solution for a case.
pub trait FlowSolver: Sync {
    fn solve(
        &self,
        case: &NetworkCase,
        options: &SolverOptions,
    ) -> Result<PowerFlowSolution, PowerFlowError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NewtonRaphson;

impl FlowSolver for NewtonRaphson {
    fn solve(
        &self,
        case: &NetworkCase,
        options: &SolverOptions,
    ) -> Result<PowerFlowSolution, PowerFlowError> {
        solve_nr(case, options)
    }
}

fn initial_voltages(case: &NetworkCase, start: &SolverStart) -> Result<(Vec<f64>, Vec<f64>), PowerFlowError> {
    let m = case.bus_count();
    let (mut vm, mut va): (Vec<f64>, Vec<f64>) = match start {
        SolverStart::Flat => (vec![1.0; m], vec![0.0; m]),
        SolverStart::CaseInit => case
            .buses()
            .iter()
            .map(|b| (b.v_init.norm(), b.v_init.arg()))
            .unzip(),
        SolverStart::Warm(v) => {
            if v.len() != m {
                return Err(PowerFlowError::StartDimension {
                    expected: m,
                    found: v.len(),
                });
            }
            v.iter().map(|v| (v.norm(), v.arg())).unzip()
        }
    };
    for (i, bus) in case.buses().iter().enumerate() {
        match bus.kind {
            BusKind::Slack => {
                vm[i] = bus.v_setpoint;
                va[i] = 0.0;
            }
            BusKind::PV => vm[i] = bus.v_setpoint,
            BusKind::PQ => {}
        }
    }
    Ok((vm, va))
}

/// Solve the AC power-flow equations by full Newton–Raphson in polar form.
///
/// Unknowns are the angles of PV and PQ buses and the magnitudes of PQ
/// buses. The slack bus is the angle reference at 0 rad. Convergence is
/// declared when the infinity norm of the mismatch drops to `tolerance`.
pub fn solve_nr(
    case: &NetworkCase,
    options: &SolverOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    options.validate()?;
    let y = build_ybus(case);
    let (mut vm, mut va) = initial_voltages(case, &options.start)?;

    let pv_pq: Vec<usize> = case
        .buses()
        .iter()
        .enumerate()
        .filter(|(_, b)| b.kind == BusKind::PV)
        .chain(case.buses().iter().enumerate().filter(|(_, b)| b.kind == BusKind::PQ))
        .map(|(i, _)| i)
        .collect();
    let pq = &pv_pq[pv_pq.len() - case.buses().iter().filter(|b| b.kind == BusKind::PQ).count()..];
    let n_ang = pv_pq.len();
    let dim = n_ang + pq.len();
    let spec: Vec<Complex64> = case.buses().iter().map(|b| b.specified_injection()).collect();

    let mut iteration = 0;
    loop {
        let v: Vec<Complex64> = vm
            .iter()
            .zip(&va)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect();
        let current = y.currents(&v);
        let s: Vec<Complex64> = v.iter().zip(&current).map(|(v, i)| v * i.conj()).collect();

        let mut f = DVector::zeros(dim);
        for (row, &i) in pv_pq.iter().enumerate() {
            f[row] = s[i].re - spec[i].re;
        }
        for (row, &i) in pq.iter().enumerate() {
            f[n_ang + row] = s[i].im - spec[i].im;
        }
        let max_mismatch = f.amax();

        if max_mismatch <= options.tolerance {
            let p_e = case.branches().iter().map(|br| branch_power(&v, br)).collect();
            return Ok(PowerFlowSolution {
                v,
                theta: va,
                p_injected: s,
                p_e,
                iterations: iteration,
                max_mismatch,
            });
        }
        if !max_mismatch.is_finite() || iteration == options.max_iterations {
            return Err(PowerFlowError::Diverged {
                iterations: iteration,
                max_mismatch,
            });
        }
        iteration += 1;

        let unit: Vec<Complex64> = v.iter().map(|v| v / v.norm()).collect();
        // dS_i/dθ_k = −j V_i conj(Y_ik V_k) + δ_ik j V_i conj(I_i)
        // dS_i/d|V_k| = V_i conj(Y_ik V_k/|V_k|) + δ_ik conj(I_i) V_i/|V_i|
        let d_angle = |i: usize, k: usize| {
            let mut d = -J * v[i] * (y.get(i, k) * v[k]).conj();
            if i == k {
                d += J * v[i] * current[i].conj();
            }
            d
        };
        let d_mag = |i: usize, k: usize| {
            let mut d = v[i] * (y.get(i, k) * unit[k]).conj();
            if i == k {
                d += current[i].conj() * unit[i];
            }
            d
        };
        let mut jac = DMatrix::zeros(dim, dim);
        for (r, &i) in pv_pq.iter().enumerate() {
            for (c, &k) in pv_pq.iter().enumerate() {
                jac[(r, c)] = d_angle(i, k).re;
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[(r, n_ang + c)] = d_mag(i, k).re;
            }
        }
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pv_pq.iter().enumerate() {
                jac[(n_ang + r, c)] = d_angle(i, k).im;
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[(n_ang + r, n_ang + c)] = d_mag(i, k).im;
            }
        }

        let dx = jac
            .lu()
            .solve(&(-f))
            .ok_or(PowerFlowError::Singular { iteration })?;
        for (row, &i) in pv_pq.iter().enumerate() {
            va[i] += dx[row];
        }
        for (row, &i) in pq.iter().enumerate() {
            vm[i] += dx[n_ang + row];
        }
    }
}
