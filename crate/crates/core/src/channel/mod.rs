//! Block-level stochastic simulator of the fiber link.
//!
//! A block is one control interval. [`effective_link`] folds the noise
//! schedule, persistent events and the current compensation settings into
//! the physical channel seen by the source; [`ChannelSim::step_block`] then
//! samples detection statistics from the analytic gains and returns the
//! resulting [`Telemetry`].

mod bitlevel;
mod scenario;
mod sim;

pub use bitlevel::{simulate_bb84_bits, BitLevelCounts};
pub use scenario::{
    coherent_rotation, make_scenario, EventKind, EventState, NoiseEvent, NoiseSchedule, PhaseDriftProcess, SCENARIOS,
    SWEEP_INCOHERENT_SHARE,
};
pub use sim::{AbortRule, BlockOutcome, ChannelSim, SimConfig, Telemetry, TELEMETRY_CSV_HEADER};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rates::{cow_visibility, transmittance, ChannelState, LinkParams, OperatingPoint, ProtocolConfig, ProtocolKind};

/// Source and receiver settings applied during a block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlState {
    pub mu_s: f64,
    pub mu_w: f64,
    pub p_z: f64,
    /// Polarization-frame compensation, radians.
    pub theta_c: f64,
    /// Interferometer phase compensation, radians.
    pub phi_c: f64,
}

impl ControlState {
    pub fn nominal(cfg: &ProtocolConfig) -> Self {
        let op = OperatingPoint::nominal(cfg);
        Self { mu_s: op.mu_s, mu_w: op.mu_w, p_z: op.p_z, theta_c: 0.0, phi_c: 0.0 }
    }

    pub fn operating_point(&self) -> OperatingPoint {
        OperatingPoint { mu_s: self.mu_s, mu_w: self.mu_w, p_z: self.p_z }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.mu_s, self.mu_w, self.p_z, self.theta_c, self.phi_c]
    }
}

/// Physical channel of one block after noise, events and compensation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveLink {
    pub channel: ChannelState,
    /// White depolarizing probability actually hitting the photons.
    pub depol: f64,
    /// Frame rotation left after compensation.
    pub residual_theta: f64,
    /// Phase offset left after compensation (COW).
    pub residual_phi: f64,
}

/// Effective transmittance, visibility and error probability for block `t`.
///
/// * `eta = T(d) eta_det 10^(-loss/10) (1 - gamma)`
/// * BB84 / E91: `V = (1 - p) cos^2(theta - theta_c)`, `e_d' = e_d + sin^2(theta - theta_c) + p/2`
/// * COW: `V = (1 - p) cow_visibility(mu, dphi - phi_c)`, `e_d' = e_d + p/2`
///
/// `p` is the white part of the depolarizing stress; the coherent part enters
/// through the rotation series of the schedule.
pub fn effective_link(
    link: &LinkParams,
    sched: &NoiseSchedule,
    ctrl: &ControlState,
    proto: &ProtocolConfig,
    t: usize,
) -> Result<EffectiveLink> {
    if t >= sched.blocks() {
        return Err(Error::param(format!("block {t} beyond schedule of {} blocks", sched.blocks())));
    }
    let ev = sched.event_state(t);
    let gamma = sched.damp_gamma[t];
    let eta = transmittance(link) * 10f64.powf(-ev.loss_db / 10.0) * (1.0 - gamma);
    let depol = (sched.incoherent_share * sched.depol_p[t] + ev.depol).clamp(0.0, 1.0);
    let e_noise = depol / 2.0;
    let residual_theta = link.theta + sched.rotation[t] - ctrl.theta_c;
    let residual_phi = sched.phase_drift[t] + 2.0 * sched.rotation[t] - ctrl.phi_c;
    let dip = ev.dip.clamp(0.0, 1.0);

    let align = residual_theta.sin().powi(2);
    let (e_d, visibility) = match proto.kind {
        ProtocolKind::Bb84Decoy => {
            let v = (1.0 - depol) * residual_theta.cos().powi(2) * (1.0 - dip);
            (link.e_d + align + e_noise + dip / 2.0, v)
        }
        ProtocolKind::E91 => {
            let v = proto.e91.v_source * (1.0 - depol) * residual_theta.cos().powi(2) * (1.0 - dip);
            ((1.0 - v) / 2.0, v)
        }
        ProtocolKind::Cow => {
            let coh = cow_visibility(ctrl.mu_s, residual_phi)?.visibility;
            (link.e_d + e_noise + dip / 2.0, (1.0 - depol) * coh * (1.0 - dip))
        }
    };
    Ok(EffectiveLink {
        channel: ChannelState {
            eta,
            y0: (link.y0 + ev.dark).min(1.0),
            e0: link.e0,
            e_d: e_d.clamp(0.0, 1.0),
            visibility: visibility.clamp(0.0, 1.0),
        },
        depol,
        residual_theta,
        residual_phi,
    })
}
