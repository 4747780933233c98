//! Stochastic Lotka–Volterra predator–prey kinetics simulated with the
//! Gillespie direct method. Reactions:
//!
//! * prey birth      `Y₁ → 2Y₁`       hazard `r₁Y₁`
//! * predation       `Y₁ + Y₂ → 2Y₂`  hazard `r₂Y₁Y₂`
//! * predator death  `Y₂ → ∅`         hazard `r₃Y₂`

use rand::Rng;
use rand_distr::Exp1;

use super::SimError;

pub const DEFAULT_POPULATION_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Populations {
    pub prey: u64,
    pub predators: u64,
}

/// Advances `state` from time 0 to `horizon`. Returns the number of
/// reactions fired.
pub fn simulate<R: Rng + ?Sized>(
    rates: [f64; 3],
    state: &mut Populations,
    horizon: f64,
    cap: u64,
    rng: &mut R,
) -> Result<u64, SimError> {
    if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(SimError::InvalidParameter(format!("LV rates {rates:?}")));
    }
    let [r1, r2, r3] = rates;
    let mut t = 0.0;
    let mut events = 0u64;
    loop {
        let y1 = state.prey as f64;
        let y2 = state.predators as f64;
        let h1 = r1 * y1;
        let h2 = r2 * y1 * y2;
        let h3 = r3 * y2;
        let total = h1 + h2 + h3;
        if total <= 0.0 {
            return Ok(events);
        }
        let e: f64 = rng.sample(Exp1);
        let wait = e / total;
        let next = t + wait;
        if next > horizon {
            return Ok(events);
        }
        debug_assert!(next >= t);
        t = next;
        let pick = rng.random::<f64>() * total;
        if pick < h1 {
            state.prey += 1;
        } else if pick < h1 + h2 {
            state.prey -= 1;
            state.predators += 1;
        } else {
            state.predators -= 1;
        }
        events += 1;
        if state.prey > cap || state.predators > cap {
            return Err(SimError::PopulationCap { cap });
        }
    }
}
