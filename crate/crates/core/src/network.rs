//! Grid description and the controllable branch impedance state.
//!
//! A [`NetworkCase`] is an immutable, validated description of buses and
//! series-impedance branches in per-unit. An [`ImpedanceState`] holds the
//! 2n-vector of branch resistances followed by branch reactances that the
//! controller is allowed to move, together with per-entry bounds and the set
//! of frozen (non-actuated) branches.

use std::collections::{BTreeSet, VecDeque};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("zero impedance has no admittance")]
    ZeroImpedance,
    #[error("branch {branch} has zero impedance")]
    ZeroBranchImpedance { branch: usize },
    #[error("case has no slack bus")]
    NoSlack,
    #[error("case has {count} slack buses, expected exactly one")]
    MultipleSlack { count: usize },
    #[error("case has no buses")]
    Empty,
    #[error("bus at position {position} has id {found}, expected {expected}")]
    BusIdOrder {
        position: usize,
        expected: usize,
        found: usize,
    },
    #[error("branch at position {position} has id {found}, expected {expected}")]
    BranchIdOrder {
        position: usize,
        expected: usize,
        found: usize,
    },
    #[error("branch {branch} references unknown bus {bus}")]
    UnknownBus { branch: usize, bus: usize },
    #[error("branch {branch} connects bus {bus} to itself")]
    SelfLoop { branch: usize, bus: usize },
    #[error("bus {bus} is not connected to the slack bus")]
    Disconnected { bus: usize },
    #[error("bus {bus} needs a positive voltage setpoint, got {value}")]
    BadSetpoint { bus: usize, value: f64 },
    #[error("non-finite value in {what} of element {id}")]
    NonFinite { what: &'static str, id: usize },
    #[error("base power must be positive, got {0}")]
    BadBase(f64),
    #[error("impedance state has dimension {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("unknown branch id {0}")]
    UnknownBranch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    PV,
    PQ,
}

fn unit_voltage() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

/// One bus. Powers are per-unit on the case base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusSpec {
    pub id: usize,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    #[serde(default)]
    pub p_gen: f64,
    /// Held voltage magnitude for PV and slack buses.
    pub v_setpoint: f64,
    /// Initial voltage guess, used by [`SolverStart::CaseInit`](crate::powerflow::SolverStart).
    #[serde(default = "unit_voltage")]
    pub v_init: Complex64,
}

impl BusSpec {
    /// Specified net complex injection (generation minus load).
    pub fn specified_injection(&self) -> Complex64 {
        Complex64::new(self.p_gen - self.p_load, -self.q_load)
    }
}

/// A pure series-impedance branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "BranchRecord", from = "BranchRecord")]
pub struct BranchSpec {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub impedance: Complex64,
}

#[derive(Serialize, Deserialize)]
struct BranchRecord {
    id: usize,
    from: usize,
    to: usize,
    r: f64,
    x: f64,
}

impl From<BranchSpec> for BranchRecord {
    fn from(b: BranchSpec) -> Self {
        BranchRecord {
            id: b.id,
            from: b.from_bus,
            to: b.to_bus,
            r: b.impedance.re,
            x: b.impedance.im,
        }
    }
}

impl From<BranchRecord> for BranchSpec {
    fn from(r: BranchRecord) -> Self {
        BranchSpec {
            id: r.id,
            from_bus: r.from,
            to_bus: r.to,
            impedance: Complex64::new(r.r, r.x),
        }
    }
}

impl BranchSpec {
    /// Zero-based indices of the terminal buses.
    pub fn terminals(&self) -> (usize, usize) {
        (self.from_bus - 1, self.to_bus - 1)
    }

    pub fn admittance(&self) -> Result<Complex64, NetworkError> {
        branch_admittance(self.impedance)
            .map_err(|_| NetworkError::ZeroBranchImpedance { branch: self.id })
    }
}

/// Validated, immutable grid description.
///
/// Buses and branches are numbered densely from 1 and stored in id order, so
/// the zero-based position of an element is always `id - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CaseRecord")]
pub struct NetworkCase {
    base_mva: f64,
    buses: Vec<BusSpec>,
    branches: Vec<BranchSpec>,
}

#[derive(Deserialize)]
struct CaseRecord {
    base_mva: f64,
    buses: Vec<BusSpec>,
    branches: Vec<BranchSpec>,
}

impl TryFrom<CaseRecord> for NetworkCase {
    type Error = NetworkError;

    fn try_from(r: CaseRecord) -> Result<Self, Self::Error> {
        NetworkCase::new(r.base_mva, r.buses, r.branches)
    }
}

impl NetworkCase {
    pub fn new(
        base_mva: f64,
        buses: Vec<BusSpec>,
        branches: Vec<BranchSpec>,
    ) -> Result<Self, NetworkError> {
        let case = NetworkCase {
            base_mva,
            buses,
            branches,
        };
        case.validate()?;
        Ok(case)
    }

    fn validate(&self) -> Result<(), NetworkError> {
        if !(self.base_mva.is_finite() && self.base_mva > 0.0) {
            return Err(NetworkError::BadBase(self.base_mva));
        }
        if self.buses.is_empty() {
            return Err(NetworkError::Empty);
        }
        for (pos, bus) in self.buses.iter().enumerate() {
            if bus.id != pos + 1 {
                return Err(NetworkError::BusIdOrder {
                    position: pos,
                    expected: pos + 1,
                    found: bus.id,
                });
            }
            let finite = [bus.p_load, bus.q_load, bus.p_gen, bus.v_setpoint]
                .iter()
                .all(|v| v.is_finite())
                && bus.v_init.is_finite();
            if !finite {
                return Err(NetworkError::NonFinite {
                    what: "bus data",
                    id: bus.id,
                });
            }
            if bus.kind != BusKind::PQ && bus.v_setpoint <= 0.0 {
                return Err(NetworkError::BadSetpoint {
                    bus: bus.id,
                    value: bus.v_setpoint,
                });
            }
        }
        let slack_count = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .count();
        match slack_count {
            0 => return Err(NetworkError::NoSlack),
            1 => {}
            count => return Err(NetworkError::MultipleSlack { count }),
        }

        let m = self.buses.len();
        for (pos, br) in self.branches.iter().enumerate() {
            if br.id != pos + 1 {
                return Err(NetworkError::BranchIdOrder {
                    position: pos,
                    expected: pos + 1,
                    found: br.id,
                });
            }
            for bus in [br.from_bus, br.to_bus] {
                if bus == 0 || bus > m {
                    return Err(NetworkError::UnknownBus { branch: br.id, bus });
                }
            }
            if br.from_bus == br.to_bus {
                return Err(NetworkError::SelfLoop {
                    branch: br.id,
                    bus: br.from_bus,
                });
            }
            if !br.impedance.is_finite() {
                return Err(NetworkError::NonFinite {
                    what: "branch impedance",
                    id: br.id,
                });
            }
            br.admittance()?;
        }
        self.check_connected()
    }

    fn check_connected(&self) -> Result<(), NetworkError> {
        let m = self.buses.len();
        let mut adjacency = vec![Vec::new(); m];
        for br in &self.branches {
            let (f, t) = br.terminals();
            adjacency[f].push(t);
            adjacency[t].push(f);
        }
        let mut seen = vec![false; m];
        let mut queue = VecDeque::from([self.slack_index()]);
        seen[self.slack_index()] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(NetworkError::Disconnected { bus: i + 1 }),
            None => Ok(()),
        }
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn buses(&self) -> &[BusSpec] {
        &self.buses
    }

    pub fn branches(&self) -> &[BranchSpec] {
        &self.branches
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    /// Zero-based position of the slack bus.
    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    /// Nominal impedance vector `(Re(z_1..z_n) ‖ Im(z_1..z_n))`.
    pub fn impedance_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.branches.iter().map(|b| b.impedance.re).collect();
        v.extend(self.branches.iter().map(|b| b.impedance.im));
        v
    }

    /// Copy of this case with bus injections rewritten by `f`. Topology and
    /// impedances are untouched, so the result needs no revalidation beyond
    /// finiteness, which callers guarantee.
    pub(crate) fn map_buses(&self, mut f: impl FnMut(&mut BusSpec)) -> NetworkCase {
        let mut out = self.clone();
        out.buses.iter_mut().for_each(&mut f);
        out
    }
}

/// `1 / z`.
pub fn branch_admittance(z: Complex64) -> Result<Complex64, NetworkError> {
    if z.norm_sqr() == 0.0 {
        return Err(NetworkError::ZeroImpedance);
    }
    Ok(z.inv())
}

/// Actuation bounds for every impedance entry: `[0.5·|v0|, 4·|v0|]` carried
/// onto the sign of the nominal value. Zero nominal entries are pinned at 0.
pub fn default_bounds(case: &NetworkCase) -> (Vec<f64>, Vec<f64>) {
    case.impedance_vector()
        .into_iter()
        .map(|v0| {
            let (a, b) = (0.5 * v0, 4.0 * v0);
            (a.min(b), a.max(b))
        })
        .unzip()
}

/// Controllable impedance vector with bounds and frozen branches.
///
/// Entries `0..n` are branch resistances, `n..2n` branch reactances, where
/// entry `i` and `n + i` belong to the branch with id `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceState {
    pub(crate) values: Vec<f64>,
    pub(crate) lower: Vec<f64>,
    pub(crate) upper: Vec<f64>,
    /// Zero-based branch indices.
    pub(crate) frozen: BTreeSet<usize>,
}

impl ImpedanceState {
    /// The nominal impedances of `case` with [`default_bounds`] and nothing frozen.
    pub fn nominal(case: &NetworkCase) -> Self {
        let (lower, upper) = default_bounds(case);
        ImpedanceState {
            values: case.impedance_vector(),
            lower,
            upper,
            frozen: BTreeSet::new(),
        }
    }

    pub fn new(
        values: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        frozen: BTreeSet<usize>,
    ) -> Result<Self, NetworkError> {
        let dim = values.len();
        if !dim.is_multiple_of(2) {
            return Err(NetworkError::Dimension {
                expected: dim + 1,
                found: dim,
            });
        }
        for other in [lower.len(), upper.len()] {
            if other != dim {
                return Err(NetworkError::Dimension {
                    expected: dim,
                    found: other,
                });
            }
        }
        if let Some(&b) = frozen.iter().find(|&&b| b >= dim / 2) {
            return Err(NetworkError::UnknownBranch(b + 1));
        }
        Ok(ImpedanceState {
            values,
            lower,
            upper,
            frozen,
        })
    }

    pub fn branch_count(&self) -> usize {
        self.values.len() / 2
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn frozen(&self) -> &BTreeSet<usize> {
        &self.frozen
    }

    /// Whether the branch owning `entry` (either component) is frozen.
    pub fn is_entry_frozen(&self, entry: usize) -> bool {
        self.frozen.contains(&(entry % self.branch_count()))
    }

    pub fn within_bounds(&self, entry: usize) -> bool {
        let v = self.values[entry];
        self.lower[entry] <= v && v <= self.upper[entry]
    }

    /// Complex impedance of the branch at zero-based index `branch`.
    pub fn impedance(&self, branch: usize) -> Complex64 {
        let n = self.branch_count();
        Complex64::new(self.values[branch], self.values[n + branch])
    }

    /// Overwrite one entry without regard to bounds or freezing.
    pub fn set_entry(&mut self, entry: usize, value: f64) {
        self.values[entry] = value;
    }

    /// Freeze a branch at its current impedance. Its bounds collapse onto the
    /// current values.
    pub fn freeze(&mut self, branch: usize) -> Result<(), NetworkError> {
        let n = self.branch_count();
        if branch >= n {
            return Err(NetworkError::UnknownBranch(branch + 1));
        }
        for e in [branch, n + branch] {
            self.lower[e] = self.values[e];
            self.upper[e] = self.values[e];
        }
        self.frozen.insert(branch);
        Ok(())
    }

    /// `values += dt·u` on unfrozen entries, optionally projected onto the
    /// closed bound interval.
    pub(crate) fn advance(&mut self, u: &[f64], dt: f64, project: bool) {
        for e in 0..self.values.len() {
            if self.is_entry_frozen(e) {
                continue;
            }
            let mut v = self.values[e] + dt * u[e];
            if project {
                v = v.clamp(self.lower[e], self.upper[e]);
            }
            self.values[e] = v;
        }
    }
}

/// Materialize `state` as branch impedances of `case`.
pub fn apply_state(case: &NetworkCase, state: &ImpedanceState) -> Result<NetworkCase, NetworkError> {
    apply_values(case, state.values())
}

pub(crate) fn apply_values(case: &NetworkCase, values: &[f64]) -> Result<NetworkCase, NetworkError> {
    let n = case.branch_count();
    if values.len() != 2 * n {
        return Err(NetworkError::Dimension {
            expected: 2 * n,
            found: values.len(),
        });
    }
    let mut out = case.clone();
    for (i, br) in out.branches.iter_mut().enumerate() {
        br.impedance = Complex64::new(values[i], values[n + i]);
        if !br.impedance.is_finite() {
            return Err(NetworkError::NonFinite {
                what: "branch impedance",
                id: br.id,
            });
        }
        br.admittance()?;
    }
    Ok(out)
}
