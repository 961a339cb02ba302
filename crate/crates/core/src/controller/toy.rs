//! One-step quadratic bandit used to sanity-check the learner.

use rand::Rng;

use super::{PpoAgent, PpoConfig, Transition, UpdateReport};
use crate::error::Result;
use crate::rng::stream;

/// Reward `-(a - target)^2` for a scalar action `a = tanh(u) * scale`.
/// Each step is its own episode and the observation is constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyEnv {
    pub target: f64,
    pub scale: f64,
}

impl Default for ToyEnv {
    fn default() -> Self {
        Self { target: 0.6, scale: 1.0 }
    }
}

impl ToyEnv {
    pub const OBS: [f64; 1] = [1.0];

    pub fn reward(&self, unit: f64) -> f64 {
        let a = unit * self.scale;
        -(a - self.target) * (a - self.target)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyReport {
    pub updates: Vec<UpdateReport>,
    /// Deterministic action after each update.
    pub actions: Vec<f64>,
    /// First update after which the deterministic action was within
    /// `tolerance` (relative) of the target.
    pub reached_at: Option<usize>,
}

pub fn train_toy(env: &ToyEnv, cfg: PpoConfig, max_updates: usize, tolerance: f64, seed: u64) -> Result<(PpoAgent, ToyReport)> {
    let mut agent = PpoAgent::new(cfg, 1, 1, &mut stream(seed, "toy-init"))?;
    let mut act_rng = stream(seed, "toy-act");
    let mut upd_rng = stream(seed, "toy-update");
    let mut report = ToyReport { updates: Vec::new(), actions: Vec::new(), reached_at: None };
    for k in 0..max_updates {
        while !agent.ready() {
            let phase = agent.phase();
            let out = agent.act(&ToyEnv::OBS, &mut act_rng)?;
            let reward = env.reward(out.unit[0]);
            agent.record(Transition {
                obs: ToyEnv::OBS.to_vec(),
                u: out.u,
                log_prob: out.log_prob,
                value: out.value,
                reward,
                done: true,
                phase,
            });
        }
        report.updates.push(agent.update(&mut upd_rng)?);
        let a = agent.deterministic(&ToyEnv::OBS)?[0] * env.scale;
        report.actions.push(a);
        if report.reached_at.is_none() && (a - env.target).abs() <= tolerance * env.target.abs() {
            report.reached_at = Some(k + 1);
        }
    }
    let _ = act_rng.random::<u8>();
    Ok((agent, report))
}
