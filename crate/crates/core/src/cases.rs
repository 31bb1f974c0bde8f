//! Small hand-built networks used by tests, examples and the CLI fixtures.

use num_complex::Complex64;

use crate::network::{BranchSpec, BusKind, BusSpec, NetworkCase};

fn bus(id: usize, kind: BusKind, load: Complex64, p_gen: f64, v_setpoint: f64) -> BusSpec {
    BusSpec {
        id,
        kind,
        p_load: load.re,
        q_load: load.im,
        p_gen,
        v_setpoint,
        v_init: Complex64::new(1.0, 0.0),
    }
}

fn branch(id: usize, from_bus: usize, to_bus: usize, r: f64, x: f64) -> BranchSpec {
    BranchSpec {
        id,
        from_bus,
        to_bus,
        impedance: Complex64::new(r, x),
    }
}

/// Slack bus 1 at 1∠0 p.u. feeding a PQ load on bus 2 through `z`.
pub fn two_bus(load: Complex64, z: Complex64) -> NetworkCase {
    NetworkCase::new(
        100.0,
        vec![
            bus(1, BusKind::Slack, Complex64::default(), 0.0, 1.0),
            bus(2, BusKind::PQ, load, 0.0, 1.0),
        ],
        vec![branch(1, 1, 2, z.re, z.im)],
    )
    .expect("two-bus case is valid")
}

/// Meshed slack / PV / PQ triangle with lossy branches.
pub fn three_bus_triangle() -> NetworkCase {
    NetworkCase::new(
        100.0,
        vec![
            bus(1, BusKind::Slack, Complex64::default(), 0.0, 1.02),
            bus(2, BusKind::PV, Complex64::new(0.2, 0.1), 0.7, 1.01),
            bus(3, BusKind::PQ, Complex64::new(0.9, 0.3), 0.0, 1.0),
        ],
        vec![
            branch(1, 1, 2, 0.02, 0.08),
            branch(2, 2, 3, 0.03, 0.10),
            branch(3, 1, 3, 0.025, 0.09),
        ],
    )
    .expect("triangle case is valid")
}

/// The triangle with every load and generation removed and all setpoints at
/// 1 p.u.: no power flows for any choice of impedances.
pub fn three_bus_zero_load() -> NetworkCase {
    let base = three_bus_triangle();
    let buses = base
        .buses()
        .iter()
        .map(|b| bus(b.id, b.kind, Complex64::default(), 0.0, 1.0))
        .collect();
    NetworkCase::new(100.0, buses, base.branches().to_vec()).expect("zero-load case is valid")
}
