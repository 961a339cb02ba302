use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::{effective_link, ControlState, EffectiveLink, NoiseSchedule};
use crate::error::{Error, Result};
use crate::io::{flag, sig10};
use crate::rates::{bb84_sifting, protocol_rate, LinkParams, LinkRate, ProtocolConfig, ProtocolKind};
use crate::rng::{indexed_stream, SimRng};
use crate::stats::wilson_interval;

pub const TELEMETRY_CSV_HEADER: &str = "block,n_pulses,n_sifted,n_errors,q_mu_hat,e_mu_hat,e_lo,e_hi,v_hat,eta_hat,aborted";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Pulses per block (one block is one simulated second).
    pub n_pulses: u64,
    /// Confidence of the per-block Wilson interval.
    pub confidence: f64,
    pub abort_threshold: f64,
    pub abort_consecutive: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { n_pulses: 1_000_000, confidence: 0.95, abort_threshold: 0.11, abort_consecutive: 2 }
    }
}

/// Session abort on sustained high QBER: `consecutive` blocks in a row with
/// the QBER point estimate strictly above `threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbortRule {
    pub threshold: f64,
    pub consecutive: usize,
    run: usize,
}

impl AbortRule {
    pub fn new(threshold: f64, consecutive: usize) -> Self {
        Self { threshold, consecutive: consecutive.max(1), run: 0 }
    }

    /// Feed one block's QBER estimate; true when the session aborts on it.
    pub fn observe(&mut self, qber: f64) -> bool {
        if qber > self.threshold {
            self.run += 1;
        } else {
            self.run = 0;
        }
        if self.run >= self.consecutive {
            self.run = 0;
            true
        } else {
            false
        }
    }

    pub fn reset(&mut self) {
        self.run = 0;
    }
}

/// Observed statistics of one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub block_index: usize,
    pub n_pulses: u64,
    pub n_sifted: u64,
    pub n_errors: u64,
    pub q_mu_hat: f64,
    pub e_mu_hat: f64,
    pub e_lo: f64,
    pub e_hi: f64,
    pub v_hat: f64,
    pub y0_hat: f64,
    pub eta_hat: f64,
    /// Signed frame-rotation estimate from mismatched-basis clicks (BB84/E91).
    pub theta_hat: f64,
    /// Signed phase-offset estimate from the monitor quadrature (COW).
    pub phi_hat: f64,
    pub aborted: bool,
}

impl Telemetry {
    pub fn csv_cells(&self) -> Vec<String> {
        vec![
            self.block_index.to_string(),
            self.n_pulses.to_string(),
            self.n_sifted.to_string(),
            self.n_errors.to_string(),
            sig10(self.q_mu_hat),
            sig10(self.e_mu_hat),
            sig10(self.e_lo),
            sig10(self.e_hi),
            sig10(self.v_hat),
            sig10(self.eta_hat),
            flag(self.aborted).to_string(),
        ]
    }

    /// Rebuild from a CSV record with the telemetry columns. Fields not in
    /// the CSV (dark-count and rotation estimates) come back as zero.
    pub fn from_csv_record(rec: &csv::StringRecord, headers: &csv::StringRecord) -> Result<Self> {
        let get = |name: &str| -> Result<&str> {
            headers
                .iter()
                .position(|h| h == name)
                .and_then(|i| rec.get(i))
                .ok_or_else(|| Error::param(format!("CSV is missing column '{name}'")))
        };
        let num = |name: &str| -> Result<f64> {
            get(name)?.trim().parse::<f64>().map_err(|e| Error::param(format!("column '{name}': {e}")))
        };
        let int = |name: &str| -> Result<u64> {
            get(name)?.trim().parse::<u64>().map_err(|e| Error::param(format!("column '{name}': {e}")))
        };
        Ok(Self {
            block_index: int("block")? as usize,
            n_pulses: int("n_pulses")?,
            n_sifted: int("n_sifted")?,
            n_errors: int("n_errors")?,
            q_mu_hat: num("q_mu_hat")?,
            e_mu_hat: num("e_mu_hat")?,
            e_lo: num("e_lo")?,
            e_hi: num("e_hi")?,
            v_hat: num("v_hat")?,
            y0_hat: 0.0,
            eta_hat: num("eta_hat")?,
            theta_hat: 0.0,
            phi_hat: 0.0,
            aborted: get("aborted")?.trim() == "1",
        })
    }
}

/// Everything a block produces: the telemetry the controller sees, plus the
/// model-true channel and rate used for accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockOutcome {
    pub telemetry: Telemetry,
    pub effective: EffectiveLink,
    pub truth: LinkRate,
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    // Both arguments are in range here, so construction cannot fail.
    Binomial::new(n, p).map(|b| b.sample(rng)).unwrap_or(0)
}

/// Sifting factor the protocol applies at the given control settings.
pub(crate) fn sifting_factor(proto: &ProtocolConfig, ctrl: &ControlState) -> f64 {
    match proto.kind {
        ProtocolKind::Bb84Decoy => bb84_sifting(proto.q, ctrl.p_z),
        _ => proto.q,
    }
}

/// Sample one block. The abort flag comes from `abort`, which carries the
/// consecutive-exceedance count across blocks.
#[allow(clippy::too_many_arguments)]
pub fn step_block<R: Rng + ?Sized>(
    link: &LinkParams,
    sched: &NoiseSchedule,
    ctrl: &ControlState,
    proto: &ProtocolConfig,
    sim: &SimConfig,
    t: usize,
    rng: &mut R,
    abort: &mut AbortRule,
) -> Result<BlockOutcome> {
    let eff = effective_link(link, sched, ctrl, proto, t)?;
    let truth = protocol_rate(&eff.channel, &ctrl.operating_point(), proto, link.f_rep)?;
    let q_mu = truth.q_mu.clamp(0.0, 1.0);
    let e_mu = truth.e_mu.clamp(0.0, 1.0);

    let q_eff = sifting_factor(proto, ctrl);
    let n = sim.n_pulses;
    let n_trials = ((n as f64) * q_eff).round() as u64;
    let n_sifted = binomial(n_trials, q_mu, rng);
    let n_errors = binomial(n_sifted, e_mu, rng);
    let q_mu_hat = if n_trials > 0 { n_sifted as f64 / n_trials as f64 } else { 0.0 };
    let (e_mu_hat, (e_lo, e_hi)) = if n_sifted == 0 {
        (0.5, (0.0, 1.0))
    } else {
        (n_errors as f64 / n_sifted as f64, wilson_interval(n_errors, n_sifted, sim.confidence)?)
    };

    let y0_hat = binomial(n, eff.channel.y0, rng) as f64 / n as f64;
    let click = (q_mu_hat - y0_hat).clamp(0.0, 1.0 - 1e-12);
    let eta_hat = if ctrl.mu_s > 0.0 { (-(-click).ln_1p() / ctrl.mu_s).clamp(0.0, 1.0) } else { 0.0 };

    let white = 1.0 - eff.depol;
    let (v_hat, theta_hat, phi_hat) = match proto.kind {
        ProtocolKind::Bb84Decoy | ProtocolKind::E91 => {
            let k = binomial(n_sifted, (1.0 - eff.channel.visibility) / 2.0, rng);
            let v = if n_sifted > 0 { 1.0 - 2.0 * k as f64 / n_sifted as f64 } else { 0.0 };
            let n_mis = binomial(((n as f64) * (1.0 - q_eff)).round() as u64, q_mu, rng);
            let p_flip = (1.0 + white * (2.0 * eff.residual_theta).sin()) / 2.0;
            let k_mis = binomial(n_mis, p_flip.clamp(0.0, 1.0), rng);
            let th = if n_mis > 0 { 0.5 * (2.0 * k_mis as f64 / n_mis as f64 - 1.0).clamp(-1.0, 1.0).asin() } else { 0.0 };
            (v, th, 0.0)
        }
        ProtocolKind::Cow => {
            let n_mon = binomial(((n as f64) * proto.cow.monitor_fraction).round() as u64, q_mu, rng);
            let k = binomial(n_mon, (1.0 - eff.channel.visibility) / 2.0, rng);
            let v = if n_mon > 0 { 1.0 - 2.0 * k as f64 / n_mon as f64 } else { 0.0 };
            let p_quad = (1.0 + white * eff.residual_phi.sin()) / 2.0;
            let k_quad = binomial(n_mon, p_quad.clamp(0.0, 1.0), rng);
            let ph = if n_mon > 0 { (2.0 * k_quad as f64 / n_mon as f64 - 1.0).clamp(-1.0, 1.0).asin() } else { 0.0 };
            (v, 0.0, ph)
        }
    };

    let aborted = abort.observe(e_mu_hat);
    let telemetry = Telemetry {
        block_index: t,
        n_pulses: n,
        n_sifted,
        n_errors,
        q_mu_hat,
        e_mu_hat,
        e_lo: e_lo.min(e_mu_hat),
        e_hi: e_hi.max(e_mu_hat),
        v_hat: v_hat.clamp(0.0, 1.0),
        y0_hat,
        eta_hat,
        theta_hat,
        phi_hat,
        aborted,
    };
    Ok(BlockOutcome { telemetry, effective: eff, truth })
}

/// A seeded simulator instance. Each block draws from its own generator
/// stream, so block `t` depends only on (seed, t, inputs at t).
#[derive(Debug, Clone)]
pub struct ChannelSim {
    pub link: LinkParams,
    pub schedule: NoiseSchedule,
    pub proto: ProtocolConfig,
    pub config: SimConfig,
    seed: u64,
    abort: AbortRule,
}

impl ChannelSim {
    pub fn new(link: LinkParams, schedule: NoiseSchedule, proto: ProtocolConfig, config: SimConfig, seed: u64) -> Result<Self> {
        link.validate()?;
        proto.validate()?;
        schedule.validate()?;
        if config.n_pulses == 0 {
            return Err(Error::param("n_pulses must be positive"));
        }
        let abort = AbortRule::new(config.abort_threshold, config.abort_consecutive);
        Ok(Self { link, schedule, proto, config, seed, abort })
    }

    pub fn blocks(&self) -> usize {
        self.schedule.blocks()
    }

    fn block_rng(&self, t: usize) -> SimRng {
        indexed_stream(self.seed, "channel-block", t as u64)
    }

    pub fn step_block(&mut self, ctrl: &ControlState, t: usize) -> Result<BlockOutcome> {
        let mut rng = self.block_rng(t);
        step_block(&self.link, &self.schedule, ctrl, &self.proto, &self.config, t, &mut rng, &mut self.abort)
    }

    /// Run every block at a fixed control setting.
    pub fn run_fixed(&mut self, ctrl: &ControlState) -> Result<Vec<Telemetry>> {
        (0..self.blocks()).map(|t| self.step_block(ctrl, t).map(|o| o.telemetry)).collect()
    }
}
