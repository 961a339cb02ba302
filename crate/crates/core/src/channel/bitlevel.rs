//! Pulse-by-pulse BB84 sampler. Slow, only meant for small blocks where it
//! serves as an independent check of the block-level binomial sampler.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::rates::ChannelState;

pub const MAX_BIT_LEVEL_PULSES: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BitLevelCounts {
    pub n_pulses: u64,
    /// Clicks in matching bases, i.e. the sifted key length.
    pub n_sifted: u64,
    pub n_errors: u64,
    /// Clicks in any basis combination.
    pub n_clicks: u64,
}

impl BitLevelCounts {
    pub fn gain(&self) -> f64 {
        self.n_clicks as f64 / self.n_pulses.max(1) as f64
    }

    pub fn qber(&self) -> f64 {
        if self.n_sifted == 0 {
            0.5
        } else {
            self.n_errors as f64 / self.n_sifted as f64
        }
    }
}

/// Simulate `n_pulses` signal pulses of mean photon number `mu`. Each photon
/// survives with probability `eta`; a dark count fires independently with
/// probability `y0`. Signal clicks err with `e_d`, dark clicks with `e0`.
pub fn simulate_bb84_bits<R: Rng + ?Sized>(
    ch: &ChannelState,
    mu: f64,
    p_z: f64,
    n_pulses: u64,
    rng: &mut R,
) -> Result<BitLevelCounts> {
    if n_pulses > MAX_BIT_LEVEL_PULSES {
        return Err(Error::param(format!("bit-level sampler limited to {MAX_BIT_LEVEL_PULSES} pulses")));
    }
    if !(mu > 0.0) || !(0.0..=1.0).contains(&p_z) {
        return Err(Error::param("need mu > 0 and p_z in [0, 1]"));
    }
    let photons = Poisson::new(mu).map_err(|e| Error::param(e.to_string()))?;
    let mut c = BitLevelCounts { n_pulses, ..Default::default() };
    for _ in 0..n_pulses {
        let n = photons.sample(rng) as i32;
        let signal = n > 0 && rng.random::<f64>() < 1.0 - (1.0 - ch.eta).powi(n);
        let dark = rng.random::<f64>() < ch.y0;
        let alice_z = rng.random::<f64>() < p_z;
        let bob_z = rng.random::<f64>() < p_z;
        if !(signal || dark) {
            continue;
        }
        c.n_clicks += 1;
        if alice_z != bob_z {
            continue;
        }
        c.n_sifted += 1;
        let p_err = match (signal, dark) {
            (true, false) => ch.e_d,
            (false, true) => ch.e0,
            // Both fired: the detector reports one of them at random.
            _ => {
                if rng.random::<bool>() {
                    ch.e_d
                } else {
                    ch.e0
                }
            }
        };
        if rng.random::<f64>() < p_err {
            c.n_errors += 1;
        }
    }
    Ok(c)
}
