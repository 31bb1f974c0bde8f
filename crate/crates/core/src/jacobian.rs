//! Perturbation estimate of the branch-flow sensitivity matrix.
//!
//! The matrix is 2n×2n. Rows `0..n` hold `Re(P_e)`, rows `n..2n` hold
//! `Im(P_e)`; columns `0..n` are branch resistances and `n..2n` branch
//! reactances. Column `i` is a one-sided difference obtained by adding
//! `lambda` to impedance entry `i` alone and re-solving the power flow.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::network::{apply_state, apply_values, ImpedanceState, NetworkCase, NetworkError};
use crate::powerflow::{
    FlowDefinition, FlowSolver, NewtonRaphson, PowerFlowError, PowerFlowSolution, SolverOptions,
    SolverStart,
};

/// Perturbed solves are tightened to `lambda · TOLERANCE_PER_LAMBDA` so that
/// solver residue stays well below the flow change being differenced.
const TOLERANCE_PER_LAMBDA: f64 = 1e-6;
const TOLERANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Resistance,
    Reactance,
}

impl std::fmt::Display for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Component::Resistance => "resistance",
            Component::Reactance => "reactance",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error("perturbation must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error("base power flow failed: {0}")]
    BaseSolve(#[source] PowerFlowError),
    #[error("power flow failed with branch {branch} {component} perturbed: {source}")]
    PerturbedSolve {
        branch: usize,
        component: Component,
        #[source]
        source: PowerFlowError,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("entry {entry} is outside 1..={dim}")]
    EntryOutOfRange { entry: usize, dim: usize },
    #[error("jacobian must be square with even dimension, got {rows}x{cols}")]
    Shape { rows: usize, cols: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianEstimate {
    matrix: DMatrix<f64>,
    lambda: f64,
    base_flows: Vec<Complex64>,
    estimated_at_step: usize,
}

impl JacobianEstimate {
    /// Wrap an externally computed sensitivity matrix.
    pub fn from_matrix(
        matrix: DMatrix<f64>,
        lambda: f64,
        base_flows: Vec<Complex64>,
        estimated_at_step: usize,
    ) -> Result<Self, EstimationError> {
        let (rows, cols) = matrix.shape();
        if rows != cols || rows % 2 != 0 {
            return Err(EstimationError::Shape { rows, cols });
        }
        Ok(JacobianEstimate {
            matrix,
            lambda,
            base_flows,
            estimated_at_step,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn base_flows(&self) -> &[Complex64] {
        &self.base_flows
    }

    pub fn estimated_at_step(&self) -> usize {
        self.estimated_at_step
    }

    /// `Jᵀ·x`.
    pub fn transpose_mul(&self, x: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        self.matrix.tr_mul(&x).iter().copied().collect()
    }

    /// `J·x`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        (&self.matrix * x).iter().copied().collect()
    }

    /// Column for impedance entry `entry`, numbered from 1: entries `1..=n`
    /// are branch resistances and `n+1..=2n` branch reactances.
    pub fn column_for_entry(&self, entry: usize) -> Result<Vec<f64>, EstimationError> {
        let dim = self.dim();
        if entry == 0 || entry > dim {
            return Err(EstimationError::EntryOutOfRange { entry, dim });
        }
        Ok(self.matrix.column(entry - 1).iter().copied().collect())
    }
}

/// Configurable finite-difference estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianEstimator {
    pub lambda: f64,
    pub flow: FlowDefinition,
    /// Run the 2n perturbed solves on the rayon pool.
    pub parallel: bool,
}

impl JacobianEstimator {
    pub fn new(lambda: f64) -> Self {
        JacobianEstimator {
            lambda,
            flow: FlowDefinition::default(),
            parallel: false,
        }
    }

    pub fn with_flow(mut self, flow: FlowDefinition) -> Self {
        self.flow = flow;
        self
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    /// Run the estimation: one base solve, then one solve per impedance
    /// entry with that entry raised by `lambda`. The state is read-only;
    /// each perturbation is made on a private copy of the impedance vector.
    ///
    /// Perturbations ignore actuation bounds and frozen branches.
    pub fn estimate<S: FlowSolver>(
        &self,
        solver: &S,
        case: &NetworkCase,
        state: &ImpedanceState,
        options: &SolverOptions,
        step: usize,
    ) -> Result<JacobianEstimate, EstimationError> {
        let lambda = self.lambda;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(EstimationError::BadLambda(lambda));
        }
        let tolerance = options
            .tolerance
            .min((lambda * TOLERANCE_PER_LAMBDA).max(TOLERANCE_FLOOR));
        let base_options = SolverOptions {
            tolerance,
            ..options.clone()
        };
        let base_case = apply_state(case, state)?;
        let base = solver
            .solve(&base_case, &base_options)
            .map_err(EstimationError::BaseSolve)?;
        let base_flows = base.flows(&base_case, self.flow);

        let dim = state.dim();
        let n = state.branch_count();
        let perturbed_options = SolverOptions {
            start: SolverStart::Warm(base.v.clone()),
            ..base_options
        };

        let column = |entry: usize| -> Result<Vec<f64>, EstimationError> {
            let mut values = state.values().to_vec();
            values[entry] += lambda;
            let perturbed = apply_values(case, &values)?;
            let sol: PowerFlowSolution = solver
                .solve(&perturbed, &perturbed_options)
                .map_err(|source| EstimationError::PerturbedSolve {
                    branch: entry % n + 1,
                    component: if entry < n {
                        Component::Resistance
                    } else {
                        Component::Reactance
                    },
                    source,
                })?;
            let flows = sol.flows(&perturbed, self.flow);
            let mut col = vec![0.0; dim];
            for j in 0..n {
                let d = (flows[j] - base_flows[j]) / lambda;
                col[j] = d.re;
                col[n + j] = d.im;
            }
            Ok(col)
        };

        let columns: Vec<Result<Vec<f64>, EstimationError>> = if self.parallel {
            (0..dim).into_par_iter().map(column).collect()
        } else {
            (0..dim).map(column).collect()
        };
        let mut matrix = DMatrix::zeros(dim, dim);
        for (entry, col) in columns.into_iter().enumerate() {
            matrix.set_column(entry, &DVector::from_vec(col?));
        }
        Ok(JacobianEstimate {
            matrix,
            lambda,
            base_flows,
            estimated_at_step: step,
        })
    }
}

/// Estimate with the default Newton–Raphson solver and series-element flows.
pub fn estimate_jacobian(
    case: &NetworkCase,
    state: &ImpedanceState,
    lambda: f64,
    options: &SolverOptions,
) -> Result<JacobianEstimate, EstimationError> {
    JacobianEstimator::new(lambda).estimate(&NewtonRaphson, case, state, options, 0)
}
