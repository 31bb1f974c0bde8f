//! Seeded Gaussian perturbation of bus injections.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::network::{BusKind, NetworkCase};

/// Zero-mean normal load noise, resampled every time step.
///
/// The draws for step `s` come from ChaCha8 seeded with `seed` on stream
/// `s`. Every bus consumes two draws in id order (active then reactive), so a
/// bus's noise depends only on `(seed, step, bus id, component)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceModel {
    /// Standard deviation in per-unit.
    pub std_pu: f64,
    pub seed: u64,
    /// Also perturb PV generation with the active-power draw.
    #[serde(default)]
    pub perturb_generation: bool,
}

impl DisturbanceModel {
    pub fn new(std_pu: f64, seed: u64) -> Self {
        DisturbanceModel {
            std_pu,
            seed,
            perturb_generation: false,
        }
    }

    pub fn none() -> Self {
        DisturbanceModel::new(0.0, 0)
    }

    /// `std_mw` megawatts on the case base.
    pub fn from_mw(std_mw: f64, base_mva: f64, seed: u64) -> Self {
        DisturbanceModel::new(std_mw / base_mva, seed)
    }

    pub fn is_silent(&self) -> bool {
        self.std_pu == 0.0
    }
}

/// The case with this step's load noise applied to PQ buses.
pub fn perturb_loads(case: &NetworkCase, model: &DisturbanceModel, step: usize) -> NetworkCase {
    if model.is_silent() {
        return case.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    rng.set_stream(step as u64);
    let std = model.std_pu;
    case.map_buses(|bus| {
        let dp: f64 = StandardNormal.sample(&mut rng);
        let dq: f64 = StandardNormal.sample(&mut rng);
        match bus.kind {
            BusKind::PQ => {
                bus.p_load += std * dp;
                bus.q_load += std * dq;
            }
            BusKind::PV if model.perturb_generation => bus.p_gen += std * dp,
            _ => {}
        }
    })
}
