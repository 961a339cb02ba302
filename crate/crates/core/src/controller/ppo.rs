use std::cell::Cell;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::sig10;
use crate::nn::{Adam, AdamConfig, Dense, ParamId, ParamStore, Tape, Tensor, Var};

pub const PPO_PROGRESS_CSV_HEADER: &str = "update,mean_reward,policy_loss,value_loss,entropy";

thread_local! {
    static ACT_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Policy evaluations run on this thread since the last reset.
pub fn act_calls() -> u64 {
    ACT_CALLS.with(Cell::get)
}

pub fn reset_act_calls() {
    ACT_CALLS.with(|c| c.set(0));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub clip_eps: f64,
    pub lr: f64,
    /// Critic learning rate.
    pub value_lr: f64,
    pub epochs: usize,
    pub rollout: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub log_std_init: f64,
    pub log_std_min: f64,
    pub hidden: Vec<usize>,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            clip_eps: 0.2,
            lr: 3e-4,
            value_lr: 1e-3,
            epochs: 4,
            rollout: 256,
            minibatch: 64,
            entropy_coef: 0.01,
            log_std_init: -0.5,
            log_std_min: -5.0,
            hidden: vec![64, 64],
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::param("gamma must be in (0, 1)"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::param("clip_eps must be in (0, 1)"));
        }
        if self.minibatch == 0 || self.rollout < self.minibatch {
            return Err(Error::param("rollout length must be at least the (positive) minibatch size"));
        }
        if !(self.lr > 0.0 && self.value_lr > 0.0) || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::param("learning rates and hidden sizes must be positive"));
        }
        Ok(())
    }

    /// Critic targets are returns multiplied by this factor, which keeps
    /// them O(1) whatever the horizon.
    fn value_scale(&self) -> f64 {
        1.0 - self.gamma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    /// Pre-squash Gaussian sample.
    pub u: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    /// Episode ended after this step (no bootstrap through it).
    pub done: bool,
    /// Fraction of the rollout remaining when the step was taken.
    pub phase: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn clear(&mut self) {
        self.transitions.clear();
    }
}

/// Discounted returns with a zero bootstrap at episode ends and at the end
/// of the sequence.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        if dones.get(t).copied().unwrap_or(false) {
            acc = 0.0;
        }
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Raw advantages `sum_l gamma^l r_{t+l} - V(s_t)` over one rollout,
/// truncated at its end.
pub fn advantages(rewards: &[f64], values: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::InsufficientData("empty rollout".into()));
    }
    if rewards.len() != values.len() {
        return Err(Error::shape(format!("{} rewards, {} values", rewards.len(), values.len())));
    }
    let g = discounted_returns(rewards, &[], gamma);
    Ok(g.iter().zip(values).map(|(g, v)| g - v).collect())
}

/// Zero mean, unit variance (a constant vector maps to zeros).
pub fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len().max(1) as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
    if sd < 1e-12 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - m) / sd).collect()
}

/// Clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)` and its derivative
/// with respect to `r`.
pub fn surrogate(ratio: f64, adv: f64, eps: f64) -> (f64, f64) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    if unclipped <= clipped {
        (unclipped, adv)
    } else {
        (clipped, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub update: usize,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

impl UpdateReport {
    pub fn csv_cells(&self) -> Vec<String> {
        vec![
            self.update.to_string(),
            sig10(self.mean_reward),
            sig10(self.policy_loss),
            sig10(self.value_loss),
            sig10(self.entropy),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    pub u: Vec<f64>,
    /// tanh(u), each component in [-1, 1].
    pub unit: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    /// Network output was not finite; the zero action was substituted.
    pub fallback: bool,
}

#[derive(Debug, Clone)]
struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, sizes: &[usize], out_gain: f64, rng: &mut R) -> Result<Self> {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { out_gain } else { (0.5f64).sqrt() };
                Dense::new(store, &format!("{name}{i}"), sizes[i], sizes[i + 1], gain, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(tape, h)?;
            if i + 1 < self.layers.len() {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }
}

#[derive(Serialize, Deserialize)]
struct PpoCheckpoint {
    config: PpoConfig,
    obs_dim: usize,
    act_dim: usize,
    updates: usize,
    #[serde(default)]
    tag: String,
    actor: ParamStore,
    critic: ParamStore,
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal-Gaussian actor with a tanh squash and a separate critic. The
/// critic also sees the fraction of the rollout remaining, since returns are
/// truncated at the rollout end.
#[derive(Debug, Clone)]
pub struct PpoAgent {
    pub cfg: PpoConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
    actor: ParamStore,
    actor_net: Mlp,
    log_std: ParamId,
    critic: ParamStore,
    critic_net: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    pub buffer: RolloutBuffer,
    updates: usize,
    /// Free-form label saved with the checkpoint (the protocol it was trained for).
    pub tag: String,
}

impl PpoAgent {
    pub fn new<R: Rng + ?Sized>(cfg: PpoConfig, obs_dim: usize, act_dim: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if obs_dim == 0 || act_dim == 0 {
            return Err(Error::param("observation and action sizes must be positive"));
        }
        let mut actor = ParamStore::new();
        let sizes: Vec<usize> = std::iter::once(obs_dim).chain(cfg.hidden.iter().copied()).chain([act_dim]).collect();
        let actor_net = Mlp::new(&mut actor, "actor", &sizes, 0.01, rng)?;
        let log_std = actor.add("log_std", Tensor::column(&vec![cfg.log_std_init; act_dim]))?;
        let mut critic = ParamStore::new();
        let sizes: Vec<usize> = std::iter::once(obs_dim + 1).chain(cfg.hidden.iter().copied()).chain([1]).collect();
        let critic_net = Mlp::new(&mut critic, "critic", &sizes, 1.0, rng)?;
        let actor_opt = Adam::new(&actor, AdamConfig { lr: cfg.lr, ..Default::default() });
        let critic_opt = Adam::new(&critic, AdamConfig { lr: cfg.value_lr, ..Default::default() });
        Ok(Self {
            cfg,
            obs_dim,
            act_dim,
            actor,
            actor_net,
            log_std,
            critic,
            critic_net,
            actor_opt,
            critic_opt,
            buffer: RolloutBuffer::default(),
            updates: 0,
            tag: String::new(),
        })
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn log_std(&self) -> &[f64] {
        &self.actor.get(self.log_std).data
    }

    pub fn set_log_std(&mut self, v: f64) {
        self.actor.get_mut(self.log_std).fill(v);
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.obs_dim {
            return Err(Error::shape(format!("observation of {} values, expected {}", obs.len(), self.obs_dim)));
        }
        Ok(())
    }

    /// Pre-squash policy mean.
    pub fn mean(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        ACT_CALLS.with(|c| c.set(c.get() + 1));
        let mut tape = Tape::new(&self.actor);
        let x = tape.input(Tensor::column(obs));
        let m = self.actor_net.forward(&mut tape, x)?;
        Ok(tape.value(m).data.clone())
    }

    /// Squashed mean action.
    pub fn deterministic(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.mean(obs)?.into_iter().map(f64::tanh).collect())
    }

    pub fn value(&self, obs: &[f64], phase: f64) -> Result<f64> {
        self.check_obs(obs)?;
        let mut x = obs.to_vec();
        x.push(phase);
        let mut tape = Tape::new(&self.critic);
        let xi = tape.input(Tensor::column(&x));
        let v = self.critic_net.forward(&mut tape, xi)?;
        Ok(tape.value(v).data[0] / self.cfg.value_scale())
    }

    /// Fraction of the rollout still to be collected.
    pub fn phase(&self) -> f64 {
        1.0 - self.buffer.len() as f64 / self.cfg.rollout as f64
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<ActOutput> {
        let mean = self.mean(obs)?;
        let value = self.value(obs, self.phase())?;
        if mean.iter().any(|m| !m.is_finite()) || !value.is_finite() {
            let u = vec![0.0; self.act_dim];
            return Ok(ActOutput { unit: u.clone(), u, log_prob: 0.0, value: 0.0, fallback: true });
        }
        let mut u = Vec::with_capacity(self.act_dim);
        let mut log_prob = 0.0;
        for (&m, &ls) in mean.iter().zip(self.log_std()) {
            let sigma = ls.exp();
            let xi: f64 = rng.sample(StandardNormal);
            u.push(m + sigma * xi);
            log_prob += -0.5 * xi * xi - ls - HALF_LN_2PI;
        }
        let unit = u.iter().map(|v| v.tanh()).collect();
        Ok(ActOutput { u, unit, log_prob, value, fallback: false })
    }

    pub fn record(&mut self, t: Transition) {
        self.buffer.transitions.push(t);
    }

    pub fn ready(&self) -> bool {
        self.buffer.len() >= self.cfg.rollout
    }

    fn batch(&self, idx: &[usize], with_phase: bool) -> Tensor {
        let rows = self.obs_dim + usize::from(with_phase);
        let mut x = Tensor::zeros(rows, idx.len());
        for (j, &i) in idx.iter().enumerate() {
            let tr = &self.buffer.transitions[i];
            for (r, &v) in tr.obs.iter().enumerate() {
                *x.at_mut(r, j) = v;
            }
            if with_phase {
                *x.at_mut(self.obs_dim, j) = tr.phase;
            }
        }
        x
    }

    /// One PPO update over the buffered rollout. The buffer is cleared in
    /// every case. A non-finite loss restores the pre-update networks.
    pub fn update<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<UpdateReport> {
        let n = self.buffer.len();
        if n == 0 {
            return Err(Error::InsufficientData("empty rollout".into()));
        }
        let snapshot = (self.actor.clone(), self.critic.clone(), self.actor_opt.clone(), self.critic_opt.clone());
        let result = self.update_inner(rng);
        self.buffer.clear();
        match result {
            Ok(r) => {
                self.updates += 1;
                Ok(r)
            }
            Err(e) => {
                (self.actor, self.critic, self.actor_opt, self.critic_opt) = snapshot;
                Err(e)
            }
        }
    }

    fn update_inner<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<UpdateReport> {
        let tr = &self.buffer.transitions;
        let n = tr.len();
        let rewards: Vec<f64> = tr.iter().map(|t| t.reward).collect();
        let dones: Vec<bool> = tr.iter().map(|t| t.done).collect();
        let returns = discounted_returns(&rewards, &dones, self.cfg.gamma);
        let raw: Vec<f64> = returns.iter().zip(tr).map(|(g, t)| g - t.value).collect();
        let adv = standardize(&raw);
        let mean_reward = rewards.iter().sum::<f64>() / n as f64;
        let scale = self.cfg.value_scale();
        let eps = self.cfg.clip_eps;

        let mut order: Vec<usize> = (0..n).collect();
        let (mut p_loss, mut v_loss, mut clipped, mut batches, mut seen) = (0.0, 0.0, 0usize, 0usize, 0usize);
        for epoch in 0..self.cfg.epochs {
            order.shuffle(rng);
            let last_epoch = epoch + 1 == self.cfg.epochs;
            for mb in order.chunks(self.cfg.minibatch) {
                let b = mb.len() as f64;
                // Actor.
                let x = self.batch(mb, false);
                let log_std = self.actor.get(self.log_std).data.clone();
                let mut tape = Tape::new(&self.actor);
                let xi = tape.input(x);
                let mean_var = self.actor_net.forward(&mut tape, xi)?;
                let mean = tape.value(mean_var).clone();
                let mut seed = Tensor::zeros(self.act_dim, mb.len());
                let mut g_log_std = vec![0.0; self.act_dim];
                let mut loss = 0.0;
                for (j, &i) in mb.iter().enumerate() {
                    let t = &self.buffer.transitions[i];
                    let mut logp = 0.0;
                    for (a, &ls) in log_std.iter().enumerate() {
                        let z = (t.u[a] - mean.at(a, j)) / ls.exp();
                        logp += -0.5 * z * z - ls - HALF_LN_2PI;
                    }
                    let ratio = (logp - t.log_prob).exp();
                    let (obj, d_ratio) = surrogate(ratio, adv[i], eps);
                    loss -= obj / b;
                    if d_ratio == 0.0 {
                        if last_epoch {
                            clipped += 1;
                        }
                        continue;
                    }
                    let d_logp = -d_ratio * ratio / b;
                    for (a, &ls) in log_std.iter().enumerate() {
                        let sigma = ls.exp();
                        let z = (t.u[a] - mean.at(a, j)) / sigma;
                        *seed.at_mut(a, j) = d_logp * z / sigma;
                        g_log_std[a] += d_logp * (z * z - 1.0);
                    }
                }
                let entropy: f64 = log_std.iter().map(|ls| ls + 0.5 + HALF_LN_2PI).sum();
                loss -= self.cfg.entropy_coef * entropy;
                g_log_std.iter_mut().for_each(|g| *g -= self.cfg.entropy_coef);
                if !loss.is_finite() {
                    return Err(Error::Diverged("non-finite policy loss".into()));
                }
                let mut grads = tape.backward_with(mean_var, seed)?;
                grads.params[self.log_std.0] = Tensor::column(&g_log_std);
                grads.clip_norm(self.cfg.max_grad_norm);
                self.actor_opt.step(&mut self.actor, &grads.params)?;
                let lo = self.cfg.log_std_min;
                self.actor.get_mut(self.log_std).data.iter_mut().for_each(|v| *v = v.clamp(lo, 2.0));

                // Critic.
                let x = self.batch(mb, true);
                let target = Tensor::from_vec(1, mb.len(), mb.iter().map(|&i| returns[i] * scale).collect())?;
                let mut tape = Tape::new(&self.critic);
                let xi = tape.input(x);
                let v = self.critic_net.forward(&mut tape, xi)?;
                let l = tape.mse(v, &target)?;
                let vl = tape.value(l).data[0];
                if !vl.is_finite() {
                    return Err(Error::Diverged("non-finite value loss".into()));
                }
                let mut grads = tape.backward(l)?;
                grads.clip_norm(self.cfg.max_grad_norm);
                self.critic_opt.step(&mut self.critic, &grads.params)?;

                if last_epoch {
                    p_loss += loss;
                    v_loss += vl;
                    batches += 1;
                    seen += mb.len();
                }
            }
        }
        let entropy: f64 = self.log_std().iter().map(|ls| ls + 0.5 + HALF_LN_2PI).sum();
        let k = batches.max(1) as f64;
        Ok(UpdateReport {
            update: self.updates + 1,
            mean_reward,
            policy_loss: p_loss / k,
            value_loss: v_loss / k,
            entropy,
            clip_fraction: clipped as f64 / seen.max(1) as f64,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = PpoCheckpoint {
            config: self.cfg.clone(),
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            updates: self.updates,
            tag: self.tag.clone(),
            actor: self.actor.clone(),
            critic: self.critic.clone(),
        };
        Ok(serde_json::to_string_pretty(&ck)?)
    }

    /// Restore networks from a checkpoint. Optimizer moments start fresh.
    pub fn from_json(s: &str) -> Result<Self> {
        let ck: PpoCheckpoint = serde_json::from_str(s)?;
        let mut agent = Self::new(ck.config, ck.obs_dim, ck.act_dim, &mut crate::rng::stream(0, "ppo-load"))?;
        agent.actor.load_values(&ck.actor)?;
        agent.critic.load_values(&ck.critic)?;
        agent.updates = ck.updates;
        agent.tag = ck.tag;
        Ok(agent)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn advantage_examples() {
        let a = advantages(&[1.0, 1.0], &[0.0, 0.0], 0.5).unwrap();
        assert_eq!(a, vec![1.5, 1.0]);
        let r = [0.3, -0.2, 1.0];
        let g = discounted_returns(&r, &[], 0.9);
        assert!(advantages(&r, &g, 0.9).unwrap().iter().all(|v| v.abs() < 1e-15));
        let a = advantages(&r, &[0.1, 0.1, 0.1], 0.0).unwrap();
        assert_eq!(a, vec![0.3 - 0.1, -0.2 - 0.1, 1.0 - 0.1]);
        assert!(advantages(&[], &[], 0.9).is_err());
    }

    #[test]
    fn episode_boundaries_stop_bootstrapping() {
        let g = discounted_returns(&[1.0, 1.0, 1.0], &[false, true, false], 0.5);
        assert_eq!(g, vec![1.5, 1.0, 1.0]);
    }

    #[test]
    fn clip_examples() {
        let (obj, d) = surrogate(1.5, 1.0, 0.2);
        assert_eq!((obj, d), (1.2, 0.0));
        let (obj, d) = surrogate(1.1, 2.0, 0.2);
        assert_eq!((obj, d), (2.2, 2.0));
        let (obj, d) = surrogate(0.5, -1.0, 0.2);
        assert_eq!((obj, d), (-0.8, 0.0));
        // Pessimistic side stays unclipped.
        let (obj, d) = surrogate(0.5, 1.0, 0.2);
        assert_eq!((obj, d), (0.5, 1.0));
    }

    #[test]
    fn standardize_moments() {
        let s = standardize(&[1.0, 2.0, 3.0, 4.0]);
        let m: f64 = s.iter().sum::<f64>() / 4.0;
        let v: f64 = s.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-15 && (v - 1.0).abs() < 1e-12);
        assert_eq!(standardize(&[2.0, 2.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_variance_policy_is_deterministic() {
        let mut agent = PpoAgent::new(PpoConfig::default(), 3, 2, &mut stream(1, "a")).unwrap();
        agent.set_log_std(f64::NEG_INFINITY);
        let obs = [0.1, -0.5, 0.9];
        let out = agent.act(&obs, &mut stream(2, "b")).unwrap();
        assert_eq!(out.unit, agent.deterministic(&obs).unwrap());
    }

    #[test]
    fn seeded_actions_reproduce() {
        let agent = PpoAgent::new(PpoConfig::default(), 3, 2, &mut stream(1, "a")).unwrap();
        let run = || {
            let mut rng = stream(5, "act");
            (0..10).map(|i| agent.act(&[0.1 * i as f64, 0.0, -0.3], &mut rng).unwrap().u).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation() {
        let c = PpoConfig { rollout: 32, minibatch: 64, ..Default::default() };
        assert!(c.validate().is_err());
        let c = PpoConfig { gamma: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let agent = PpoAgent::new(PpoConfig::default(), 4, 2, &mut stream(3, "a")).unwrap();
        let back = PpoAgent::from_json(&agent.to_json().unwrap()).unwrap();
        let obs = [0.2, 0.1, -0.4, 0.0];
        assert_eq!(back.mean(&obs).unwrap(), agent.mean(&obs).unwrap());
        assert_eq!(back.value(&obs, 0.5).unwrap(), agent.value(&obs, 0.5).unwrap());
    }

    /// A sample whose ratio is already past the clip on the favourable side
    /// must not move the policy.
    #[test]
    fn clipped_samples_contribute_no_gradient() {
        let cfg = PpoConfig { rollout: 4, minibatch: 4, epochs: 1, entropy_coef: 0.0, ..Default::default() };
        let mut agent = PpoAgent::new(cfg, 2, 1, &mut stream(4, "a")).unwrap();
        let before = agent.actor.clone();
        for k in 0..4 {
            let obs = vec![0.1 * k as f64, 0.2];
            let m = agent.mean(&obs).unwrap()[0];
            let ls = agent.log_std()[0];
            let u = m + 0.3;
            let z = 0.3 / ls.exp();
            let logp_now = -0.5 * z * z - ls - HALF_LN_2PI;
            // Stored log-prob makes the ratio 1.5 (above 1 + eps) and the
            // advantages, after standardization, are positive for k >= 2
            // and negative with ratio above 1 - eps for k < 2... so use a
            // ratio of 1.5 with positive advantage and 0.5 with negative.
            let (stored, reward) = if k >= 2 { (logp_now - 1.5f64.ln(), 1.0) } else { (logp_now - 0.5f64.ln(), -1.0) };
            agent.record(Transition { obs, u: vec![u], log_prob: stored, value: 0.0, reward, done: true, phase: 1.0 });
        }
        let r = agent.update(&mut stream(1, "u")).unwrap();
        assert_eq!(r.clip_fraction, 1.0);
        for id in before.ids() {
            if before.name(id) != "log_std" {
                assert_eq!(before.get(id), agent.actor.get(id), "{}", before.name(id));
            }
        }
    }
}
