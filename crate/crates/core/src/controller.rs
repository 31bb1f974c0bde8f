//! Cooperative impedance control: objective, gains, control law, Euler
//! integration, the windowed performance index and the gated loop that ties
//! them together.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disturbance::{perturb_loads, DisturbanceModel};
use crate::jacobian::{EstimationError, JacobianEstimate, JacobianEstimator};
use crate::network::{apply_state, ImpedanceState, NetworkCase, NetworkError};
use crate::powerflow::{FlowDefinition, FlowSolver, NewtonRaphson, PowerFlowError, SolverOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("invalid control parameters: {0}")]
    InvalidParams(String),
    #[error("{what} has length {found}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("window {k} needs the objective up to step {needed}, history ends at step {available}")]
    IncompleteWindow {
        k: usize,
        needed: usize,
        available: usize,
    },
    #[error("power flow failed at step {step}: {source}")]
    Diverged {
        step: usize,
        #[source]
        source: PowerFlowError,
        /// Impedances in force when the solve failed.
        state: Box<ImpedanceState>,
    },
    #[error("jacobian estimation failed at step {step}: {source}")]
    Estimation {
        step: usize,
        #[source]
        source: EstimationError,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// What happens when an Euler step would leave the bound interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundHandling {
    /// Clamp the entry onto the violated bound; it keeps its gain.
    #[default]
    Project,
    /// Let the entry leave the interval; its gain drops to zero from then on.
    Freeze,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlParams {
    /// Control gain applied to every in-bounds, actuated entry.
    pub c: f64,
    /// Weight of the reactive-power mismatch, in `[0, 1]`.
    pub epsilon: f64,
    /// Estimator perturbation, per-unit.
    pub lambda: f64,
    /// Steps per performance-index window.
    pub window_t: usize,
    /// Euler step size.
    pub dt: f64,
    pub max_steps: usize,
    /// Stop once the objective is at or below this value.
    pub h_tolerance: f64,
    pub bounds: BoundHandling,
    pub flow: FlowDefinition,
    pub parallel_estimation: bool,
}

impl Default for ControlParams {
    fn default() -> Self {
        ControlParams {
            c: 0.02,
            epsilon: 0.2,
            lambda: 1e-6,
            window_t: 100,
            dt: 0.01,
            max_steps: 10_000,
            h_tolerance: 0.0,
            bounds: BoundHandling::Project,
            flow: FlowDefinition::SeriesElement,
            parallel_estimation: false,
        }
    }
}

impl ControlParams {
    pub fn validate(&self) -> Result<(), ControlError> {
        let fail = |msg: String| Err(ControlError::InvalidParams(msg));
        if !(self.c > 0.0 && self.c.is_finite()) {
            return fail(format!("c must be positive, got {}", self.c));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return fail(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.window_t == 0 {
            return fail("window_t must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return fail(format!("dt must be positive, got {}", self.dt));
        }
        if self.h_tolerance.is_nan() || self.h_tolerance < 0.0 {
            return fail(format!("h_tolerance must be non-negative, got {}", self.h_tolerance));
        }
        Ok(())
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), ControlError> {
    if expected == found {
        Ok(())
    } else {
        Err(ControlError::Dimension {
            what,
            expected,
            found,
        })
    }
}

/// `(Re(P_e − σ) ‖ ε·Im(P_e − σ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchVector {
    stacked: Vec<f64>,
}

impl MismatchVector {
    pub fn new(p_e: &[Complex64], sigma: &[Complex64], epsilon: f64) -> Result<Self, ControlError> {
        check_len("setpoint", p_e.len(), sigma.len())?;
        let diff: Vec<Complex64> = p_e.iter().zip(sigma).map(|(p, s)| p - s).collect();
        let mut stacked: Vec<f64> = diff.iter().map(|d| d.re).collect();
        stacked.extend(diff.iter().map(|d| epsilon * d.im));
        Ok(MismatchVector { stacked })
    }

    pub fn from_stacked(stacked: Vec<f64>) -> Self {
        MismatchVector { stacked }
    }

    pub fn stacked(&self) -> &[f64] {
        &self.stacked
    }
}

/// `‖Re(P_e) − Re(σ)‖² + ε‖Im(P_e) − Im(σ)‖²`.
pub fn objective(p_e: &[Complex64], sigma: &[Complex64], epsilon: f64) -> Result<f64, ControlError> {
    check_len("setpoint", p_e.len(), sigma.len())?;
    let (re, im) = p_e
        .iter()
        .zip(sigma)
        .map(|(p, s)| p - s)
        .fold((0.0, 0.0), |(re, im), d| (re + d.re * d.re, im + d.im * d.im));
    Ok(re + epsilon * im)
}

/// Per-entry gain: `c` on unfrozen entries inside their closed bound
/// interval, 0 elsewhere.
pub fn kappa(state: &ImpedanceState, c: f64) -> Vec<f64> {
    (0..state.dim())
        .map(|e| {
            if !state.is_entry_frozen(e) && state.within_bounds(e) {
                c
            } else {
                0.0
            }
        })
        .collect()
}

/// `U = −κ ∘ (Jᵀ·ẽ)`.
pub fn control_signal(
    estimate: &JacobianEstimate,
    mismatch: &MismatchVector,
    kappa_vec: &[f64],
) -> Result<Vec<f64>, ControlError> {
    let dim = estimate.dim();
    check_len("mismatch", dim, mismatch.stacked.len())?;
    check_len("kappa", dim, kappa_vec.len())?;
    let grad = estimate.transpose_mul(&mismatch.stacked);
    Ok(grad.iter().zip(kappa_vec).map(|(g, k)| -k * g).collect())
}

/// Objective rate under the control law: `−2‖√κ ∘ (Jᵀ·ẽ)‖²`.
pub fn descent_rate(
    estimate: &JacobianEstimate,
    mismatch: &MismatchVector,
    kappa_vec: &[f64],
) -> Result<f64, ControlError> {
    let dim = estimate.dim();
    check_len("mismatch", dim, mismatch.stacked.len())?;
    check_len("kappa", dim, kappa_vec.len())?;
    let grad = estimate.transpose_mul(&mismatch.stacked);
    let norm_sq: f64 = grad
        .iter()
        .zip(kappa_vec)
        .map(|(g, k)| {
            let w = k.sqrt() * g;
            w * w
        })
        .sum();
    Ok(-2.0 * norm_sq)
}

/// One explicit Euler step `Z ← Z + dt·U`, projected onto the bounds.
/// Frozen branches do not move.
pub fn euler_step(state: &ImpedanceState, u: &[f64], dt: f64) -> Result<ImpedanceState, ControlError> {
    check_len("control signal", state.dim(), u.len())?;
    let mut next = state.clone();
    next.advance(u, dt, true);
    Ok(next)
}

/// Maximum objective over window `k ≥ 1`, i.e. steps `(k−1)T+1 ..= kT` of
/// `h_history` (indexed by step, starting at step 0).
pub fn performance_index(h_history: &[f64], k: usize, window_t: usize) -> Result<f64, ControlError> {
    let needed = k * window_t;
    if k == 0 || window_t == 0 || h_history.len() <= needed {
        return Err(ControlError::IncompleteWindow {
            k,
            needed,
            available: h_history.len().saturating_sub(1),
        });
    }
    Ok(h_history[(k - 1) * window_t + 1..=needed]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub h: f64,
    /// `P_e − σ` per branch.
    pub mismatch: Vec<Complex64>,
    pub impedance: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowRecord {
    pub k: usize,
    pub s_raw: f64,
    /// `min(s_raw, previous clamped value)`.
    pub s_clamped: f64,
    pub jacobian_refreshed: bool,
}

/// A step whose objective exceeds the clamped index of an earlier window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundViolation {
    /// Window whose index was exceeded.
    pub window: usize,
    pub bound: f64,
    pub step: usize,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub window_t: usize,
    pub steps: Vec<StepRecord>,
    pub windows: Vec<WindowRecord>,
    /// `S_0 = H_0`.
    pub s0: f64,
    pub refresh_count: usize,
    /// Steps at which the Jacobian was (re-)estimated.
    pub refresh_steps: Vec<usize>,
}

impl Trajectory {
    pub fn h_history(&self) -> Vec<f64> {
        self.steps.iter().map(|r| r.h).collect()
    }

    pub fn initial_h(&self) -> f64 {
        self.steps[0].h
    }

    pub fn final_h(&self) -> f64 {
        self.steps.last().expect("trajectory has step 0").h
    }

    /// Last clamped index, or `S_0` if no window completed.
    pub fn final_s(&self) -> f64 {
        self.windows.last().map_or(self.s0, |w| w.s_clamped)
    }

    /// `S_0, S_1, …` as stored by the loop.
    pub fn clamped_sequence(&self) -> Vec<f64> {
        std::iter::once(self.s0)
            .chain(self.windows.iter().map(|w| w.s_clamped))
            .collect()
    }

    pub fn index_is_monotone(&self) -> bool {
        self.clamped_sequence().windows(2).all(|w| w[1] <= w[0])
    }

    /// For every completed window N, the steps `i ≥ (N−1)T+1` inside
    /// completed windows whose objective exceeds the clamped `S_N`. Only the
    /// worst offending step per window is reported.
    pub fn upper_bound_violations(&self) -> Vec<BoundViolation> {
        let t = self.window_t;
        let last = self.windows.len() * t;
        let h = self.h_history();
        if last == 0 || h.len() <= last {
            return Vec::new();
        }
        // suffix_max[i] = (max H over i..=last, argmax)
        let mut suffix = vec![(f64::NEG_INFINITY, 0); last + 2];
        for i in (1..=last).rev() {
            suffix[i] = if h[i] >= suffix[i + 1].0 {
                (h[i], i)
            } else {
                suffix[i + 1]
            };
        }
        self.windows
            .iter()
            .filter_map(|w| {
                let (worst, step) = suffix[(w.k - 1) * t + 1];
                (worst > w.s_clamped).then_some(BoundViolation {
                    window: w.k,
                    bound: w.s_clamped,
                    step,
                    h: worst,
                })
            })
            .collect()
    }
}

/// Run the gated cooperative control loop with the default solver.
pub fn run_cca(
    case: &NetworkCase,
    state: &ImpedanceState,
    sigma: &[Complex64],
    params: &ControlParams,
    disturbance: &DisturbanceModel,
) -> Result<Trajectory, ControlError> {
    run_cca_with(
        &NewtonRaphson,
        &SolverOptions::default(),
        case,
        state,
        sigma,
        params,
        disturbance,
    )
}

/// Run the gated cooperative control loop.
///
/// Each step measures branch flows on `case` with that step's load noise and
/// the current impedances. At step 0, and at every window boundary
/// `s = kT` where the window maximum `S_k` did not fall below the stored
/// `S_{k−1}`, the Jacobian is re-estimated on the same perturbed case and the
/// stored index keeps its previous value. Impedances then move one projected
/// Euler step along `U = −κ ∘ Jᵀẽ`.
///
/// The loop stops when the objective reaches `h_tolerance` or after
/// `max_steps` control updates. Power-flow solves are warm-started from the
/// previous step, and `options` supplies tolerance and iteration limits.
pub fn run_cca_with<S: FlowSolver>(
    solver: &S,
    options: &SolverOptions,
    case: &NetworkCase,
    state: &ImpedanceState,
    sigma: &[Complex64],
    params: &ControlParams,
    disturbance: &DisturbanceModel,
) -> Result<Trajectory, ControlError> {
    params.validate()?;
    let n = case.branch_count();
    check_len("setpoint", n, sigma.len())?;
    check_len("impedance state", 2 * n, state.dim())?;
    let t = params.window_t;
    let estimator = JacobianEstimator::new(params.lambda)
        .with_flow(params.flow)
        .with_parallel(params.parallel_estimation);

    let mut state = state.clone();
    let mut voltages: Option<Vec<Complex64>> = None;
    let measure = |state: &ImpedanceState, step: usize, warm: &Option<Vec<Complex64>>| {
        let loaded = perturb_loads(case, disturbance, step);
        let applied = apply_state(&loaded, state)?;
        let opts = match warm {
            Some(v) => options.clone().warm(v),
            None => options.clone(),
        };
        let sol = solver
            .solve(&applied, &opts)
            .map_err(|source| ControlError::Diverged {
                step,
                source,
                state: Box::new(state.clone()),
            })?;
        let flows = sol.flows(&applied, params.flow);
        let h = objective(&flows, sigma, params.epsilon)?;
        let record = StepRecord {
            step,
            h,
            mismatch: flows.iter().zip(sigma).map(|(p, s)| p - s).collect(),
            impedance: state.values().to_vec(),
        };
        Ok::<_, ControlError>((loaded, sol.v, flows, record))
    };

    let (mut loaded, v, mut flows, first) = measure(&state, 0, &voltages)?;
    voltages = Some(v);
    let s0 = first.h;
    let mut h = first.h;
    let mut h_history = vec![h];
    let mut traj = Trajectory {
        window_t: t,
        steps: vec![first],
        windows: Vec::new(),
        s0,
        refresh_count: 0,
        refresh_steps: Vec::new(),
    };
    let mut stored_s = s0;
    let mut estimate: Option<JacobianEstimate> = None;
    let mut s = 0;

    loop {
        let mut refresh = s == 0;
        if s > 0 && s % t == 0 {
            let k = s / t;
            let raw = performance_index(&h_history, k, t)?;
            refresh = raw >= stored_s;
            stored_s = if refresh { stored_s } else { raw };
            traj.windows.push(WindowRecord {
                k,
                s_raw: raw,
                s_clamped: stored_s,
                jacobian_refreshed: false,
            });
        }
        if h <= params.h_tolerance || s >= params.max_steps {
            break;
        }
        if refresh {
            let v = voltages.as_deref().expect("measured before the first update");
            let est = estimator
                .estimate(solver, &loaded, &state, &options.clone().warm(v), s)
                .map_err(|source| ControlError::Estimation { step: s, source })?;
            estimate = Some(est);
            traj.refresh_count += 1;
            traj.refresh_steps.push(s);
            if let Some(w) = traj.windows.last_mut().filter(|w| w.k * t == s) {
                w.jacobian_refreshed = true;
            }
        }
        let est = estimate.as_ref().expect("estimated at step 0");
        let mismatch = MismatchVector::new(&flows, sigma, params.epsilon)?;
        let u = control_signal(est, &mismatch, &kappa(&state, params.c))?;
        state.advance(&u, params.dt, params.bounds == BoundHandling::Project);
        s += 1;

        let (next_loaded, v, next_flows, record) = measure(&state, s, &voltages)?;
        loaded = next_loaded;
        voltages = Some(v);
        flows = next_flows;
        h = record.h;
        h_history.push(h);
        traj.steps.push(record);
    }
    Ok(traj)
}
