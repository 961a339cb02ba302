//! PPO actor-critic controller: observation encoding, bounded actions, the
//! safety filter and the reward.

mod ppo;
mod toy;

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

pub use ppo::{
    act_calls, advantages, discounted_returns, reset_act_calls, standardize, surrogate, ActOutput, PpoAgent, PpoConfig,
    RolloutBuffer, Transition, UpdateReport, PPO_PROGRESS_CSV_HEADER,
};
pub use toy::{train_toy, ToyEnv, ToyReport};

use crate::channel::{ControlState, Telemetry};
use crate::error::{Error, Result};
use crate::rates::ProtocolKind;
use crate::tcn::Forecast;

/// Knobs a controller may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    MuS,
    MuW,
    PZ,
    ThetaC,
    PhiC,
}

/// Ordered list of knobs active for a protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionMask(pub Vec<Knob>);

impl ActionMask {
    pub fn for_protocol(kind: ProtocolKind) -> Self {
        use Knob::*;
        Self(match kind {
            ProtocolKind::Bb84Decoy => vec![MuS, MuW, PZ, ThetaC],
            ProtocolKind::E91 => vec![MuS, ThetaC],
            ProtocolKind::Cow => vec![MuS, PhiC],
        })
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-step adjustment limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActionBox {
    pub d_mu: f64,
    pub d_pz: f64,
    pub d_theta: f64,
    pub d_phi: f64,
}

impl Default for ActionBox {
    fn default() -> Self {
        Self { d_mu: 0.05, d_pz: 0.05, d_theta: 0.02, d_phi: 0.05 }
    }
}

impl ActionBox {
    pub fn limit(&self, k: Knob) -> f64 {
        match k {
            Knob::MuS | Knob::MuW => self.d_mu,
            Knob::PZ => self.d_pz,
            Knob::ThetaC => self.d_theta,
            Knob::PhiC => self.d_phi,
        }
    }
}

/// Parameter deltas for one block. Inactive knobs stay at zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub d_mu_s: f64,
    pub d_mu_w: f64,
    pub d_pz: f64,
    pub d_theta_c: f64,
    pub d_phi_c: f64,
}

impl Action {
    /// Map squashed policy outputs in [-1, 1] onto the boxes of the masked knobs.
    pub fn from_unit(unit: &[f64], mask: &ActionMask, boxes: &ActionBox) -> Result<Self> {
        if unit.len() != mask.len() {
            return Err(Error::shape(format!("{} action components for {} knobs", unit.len(), mask.len())));
        }
        let mut a = Action::default();
        for (&k, &u) in mask.0.iter().zip(unit) {
            let v = u.clamp(-1.0, 1.0) * boxes.limit(k);
            match k {
                Knob::MuS => a.d_mu_s = v,
                Knob::MuW => a.d_mu_w = v,
                Knob::PZ => a.d_pz = v,
                Knob::ThetaC => a.d_theta_c = v,
                Knob::PhiC => a.d_phi_c = v,
            }
        }
        Ok(a)
    }
}

/// Absolute safe operating region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyBounds {
    pub mu_s: (f64, f64),
    pub mu_w: (f64, f64),
    /// Required margin mu_w < mu_s - gap.
    pub gap: f64,
    pub p_z: (f64, f64),
    pub theta_c: (f64, f64),
}

impl Default for SafetyBounds {
    fn default() -> Self {
        Self { mu_s: (0.1, 1.0), mu_w: (0.02, 0.3), gap: 0.05, p_z: (0.5, 0.95), theta_c: (-FRAC_PI_2, FRAC_PI_2) }
    }
}

fn wrap_pi(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        PI
    } else {
        y
    }
}

impl SafetyBounds {
    /// Project a control state into the safe region.
    pub fn filter(&self, c: &ControlState) -> ControlState {
        let fin = |x: f64, fallback: f64| if x.is_finite() { x } else { fallback };
        let mu_s = fin(c.mu_s, self.mu_s.0).clamp(self.mu_s.0, self.mu_s.1);
        let mw_hi = (mu_s - self.gap - 1e-9).min(self.mu_w.1);
        let mu_w = fin(c.mu_w, self.mu_w.0).clamp(self.mu_w.0, mw_hi.max(self.mu_w.0));
        ControlState {
            mu_s,
            mu_w,
            p_z: fin(c.p_z, self.p_z.0).clamp(self.p_z.0, self.p_z.1),
            theta_c: fin(c.theta_c, 0.0).clamp(self.theta_c.0, self.theta_c.1),
            phi_c: wrap_pi(fin(c.phi_c, 0.0)),
        }
    }

    pub fn contains(&self, c: &ControlState) -> bool {
        let inr = |x: f64, (lo, hi): (f64, f64)| x >= lo && x <= hi;
        inr(c.mu_s, self.mu_s)
            && inr(c.mu_w, self.mu_w)
            && c.mu_w < c.mu_s - self.gap
            && inr(c.p_z, self.p_z)
            && inr(c.theta_c, self.theta_c)
            && inr(c.phi_c, (-PI, PI))
    }

    pub fn apply(&self, c: &ControlState, a: &Action) -> ControlState {
        self.filter(&ControlState {
            mu_s: c.mu_s + a.d_mu_s,
            mu_w: c.mu_w + a.d_mu_w,
            p_z: c.p_z + a.d_pz,
            theta_c: c.theta_c + a.d_theta_c,
            phi_c: c.phi_c + a.d_phi_c,
        })
    }

    /// Control parameters scaled to [-1, 1].
    pub fn scaled(&self, c: &ControlState) -> [f64; 5] {
        let s = |x: f64, (lo, hi): (f64, f64)| (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0);
        [
            s(c.mu_s, self.mu_s),
            s(c.mu_w, self.mu_w),
            s(c.p_z, self.p_z),
            s(c.theta_c, self.theta_c),
            s(c.phi_c, (-PI, PI)),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub w_rate: f64,
    pub w_err: f64,
    /// Rate normalization in bit/s; 0 means "asymptotic rate at nominal settings".
    pub skr_ref: f64,
    pub qber_ref: f64,
    pub abort_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { w_rate: 1.0, w_err: 0.5, skr_ref: 0.0, qber_ref: 0.11, abort_penalty: 1.0 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_rate > 0.0 && self.w_err > 0.0 && self.skr_ref > 0.0 && self.qber_ref > 0.0) {
            return Err(Error::param("reward needs positive w_rate, w_err, skr_ref and qber_ref"));
        }
        Ok(())
    }
}

/// r = w_rate skr/skr_ref - w_err qber/qber_ref - penalty on abort.
pub fn reward(skr_bps: f64, qber: f64, aborted: bool, cfg: &RewardConfig) -> f64 {
    let penalty = if aborted { cfg.abort_penalty } else { 0.0 };
    cfg.w_rate * skr_bps / cfg.skr_ref - cfg.w_err * qber / cfg.qber_ref - penalty
}

/// Reference levels that put raw telemetry on a common scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsScale {
    /// Gain at nominal settings on the clean link.
    pub q_ref: f64,
    /// Transmittance of the clean link.
    pub eta_ref: f64,
    pub qber_ref: f64,
    pub theta_scale: f64,
    pub phi_scale: f64,
}

/// Observation layout, in order:
///
/// | index | content |
/// |---|---|
/// | `0..F` | forecast features, `tanh(z / 3)` of the normalized forecast |
/// | `F` | `q_mu_hat / q_ref - 1` |
/// | `F+1` | `2 e_mu_hat / qber_ref - 1` |
/// | `F+2` | `2 v_hat - 1` |
/// | `F+3` | `eta_hat / eta_ref - 1` |
/// | `F+4` | `tanh(theta_hat / theta_scale)` |
/// | `F+5` | `tanh(phi_hat / phi_scale)` |
/// | `F+6..F+11` | `mu_s, mu_w, p_z, theta_c, phi_c` scaled to [-1, 1] |
///
/// Every component is clipped to [-1, 1].
pub fn observe(forecast: &Forecast, telem: &Telemetry, ctrl: &ControlState, scale: &ObsScale, bounds: &SafetyBounds) -> Vec<f64> {
    let mut obs: Vec<f64> = forecast.y_next_norm.iter().map(|z| (z / 3.0).tanh()).collect();
    obs.push(telem.q_mu_hat / scale.q_ref - 1.0);
    obs.push(2.0 * telem.e_mu_hat / scale.qber_ref - 1.0);
    obs.push(2.0 * telem.v_hat - 1.0);
    obs.push(telem.eta_hat / scale.eta_ref - 1.0);
    obs.push((telem.theta_hat / scale.theta_scale).tanh());
    obs.push((telem.phi_hat / scale.phi_scale).tanh());
    obs.extend(bounds.scaled(ctrl));
    obs.iter().map(|v| if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 }).collect()
}

pub fn obs_dim(forecast_features: usize) -> usize {
    forecast_features + 11
}
