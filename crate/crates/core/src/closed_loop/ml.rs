use super::{Controller, ControllerKind, Feedback, LoopEnv};
use crate::channel::{ControlState, Telemetry};
use crate::controller::{obs_dim, observe, Action, ActionBox, ActionMask, ObsScale, PpoAgent, SafetyBounds, Transition, UpdateReport};
use crate::error::{Error, Result};
use crate::rng::{stream, SimRng};
use crate::tcn::{Forecaster, Tcn};

/// Forecast-driven PPO controller.
///
/// At block `t` the telemetry of block `t-1` goes through the forecaster,
/// the observation is built from forecast, telemetry and current settings,
/// and the policy proposes bounded deltas. Each block's reward completes the
/// transition started by its decision; with learning on, a PPO update runs
/// whenever the rollout buffer fills.
#[derive(Debug, Clone)]
pub struct MlController {
    forecaster: Forecaster,
    pub agent: PpoAgent,
    mask: ActionMask,
    boxes: ActionBox,
    bounds: SafetyBounds,
    scale: ObsScale,
    /// Record transitions and update the policy.
    pub learn: bool,
    /// Sample from the policy; otherwise act on its mean.
    pub stochastic: bool,
    policy_rng: SimRng,
    update_rng: SimRng,
    pending: Option<Transition>,
    pub updates: Vec<UpdateReport>,
    /// Blocks on which the network output was unusable.
    pub fallbacks: usize,
}

impl MlController {
    pub fn new(env: &LoopEnv, tcn: Tcn, agent: PpoAgent, learn: bool, seed: u64) -> Result<Self> {
        let mask = ActionMask::for_protocol(env.proto.kind);
        let want_obs = obs_dim(tcn.cfg.features.len());
        if agent.act_dim != mask.len() || agent.obs_dim != want_obs {
            return Err(Error::Config(format!(
                "policy has {} inputs / {} outputs, {} needs {} / {}",
                agent.obs_dim,
                agent.act_dim,
                env.proto.kind,
                want_obs,
                mask.len()
            )));
        }
        if !agent.tag.is_empty() && agent.tag != env.proto.kind.name() {
            return Err(Error::Config(format!("policy was trained for {}, not {}", agent.tag, env.proto.kind)));
        }
        Ok(Self {
            forecaster: Forecaster::new(tcn),
            agent,
            mask,
            boxes: env.boxes,
            bounds: env.bounds,
            scale: env.obs_scale,
            learn,
            stochastic: learn,
            policy_rng: stream(seed, "policy"),
            update_rng: stream(seed, "ppo-update"),
            pending: None,
            updates: Vec::new(),
            fallbacks: 0,
        })
    }

    pub fn into_parts(self) -> (Tcn, PpoAgent, Vec<UpdateReport>) {
        (self.forecaster.model, self.agent, self.updates)
    }
}

impl Controller for MlController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Ml
    }

    fn begin(&mut self, _nominal: &ControlState) -> Result<()> {
        self.forecaster.reset();
        self.pending = None;
        Ok(())
    }

    fn decide(&mut self, _t: usize, last: Option<&Telemetry>, current: &ControlState) -> Result<ControlState> {
        let Some(tel) = last else {
            return Ok(*current);
        };
        let forecast = self.forecaster.push(tel)?;
        let obs = observe(&forecast, tel, current, &self.scale, &self.bounds);
        let unit = if self.stochastic {
            let phase = self.agent.phase();
            let out = self.agent.act(&obs, &mut self.policy_rng)?;
            if out.fallback {
                self.fallbacks += 1;
            } else {
                self.pending = Some(Transition {
                    obs,
                    u: out.u,
                    log_prob: out.log_prob,
                    value: out.value,
                    reward: 0.0,
                    done: false,
                    phase,
                });
            }
            out.unit
        } else {
            let a = self.agent.deterministic(&obs)?;
            if a.iter().all(|v| v.is_finite()) {
                a
            } else {
                self.fallbacks += 1;
                vec![0.0; self.mask.len()]
            }
        };
        let action = Action::from_unit(&unit, &self.mask, &self.boxes)?;
        Ok(self.bounds.apply(current, &action))
    }

    fn feedback(&mut self, fb: &Feedback) -> Result<()> {
        let Some(mut tr) = self.pending.take() else {
            return Ok(());
        };
        if !self.learn {
            return Ok(());
        }
        tr.reward = fb.reward;
        tr.done = fb.telemetry.aborted;
        self.agent.record(tr);
        if self.agent.ready() {
            let report = self.agent.update(&mut self.update_rng)?;
            self.updates.push(report);
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        if let Some(last) = self.agent.buffer.transitions.last_mut() {
            last.done = true;
        }
        Ok(())
    }
}
