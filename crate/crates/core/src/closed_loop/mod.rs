//! Closed-loop operation: a controller picks source settings block by block,
//! the channel responds, and the run is logged for comparison.
//!
//! Per block `t`:
//! 1. the controller sees telemetry of block `t-1` and returns new settings,
//! 2. the safety filter projects them into the safe region,
//! 3. the channel simulates block `t`,
//! 4. secret-key throughput and reward are computed and fed back.
//!
//! A block whose QBER estimate exceeds the abort threshold yields no key. When
//! the abort rule fires, the settings are reset to nominal for the next block.

mod baselines;
mod experiment;
mod metrics;
mod ml;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use baselines::{RecalibController, StaticController};
pub use experiment::{
    evaluate, parallel_map, pretrain_ppo, run_closed_loop, train_tcn, tcn_training_series, worker_count, EvalOutput,
    MlModels,
};
pub use metrics::{
    adaptation_time, compare, seed_metrics, write_metrics_csv, write_seed_metrics_csv, MetricRow, SeedMetrics,
    METRICS_CSV_HEADER, SEED_METRICS_CSV_HEADER,
};
pub use ml::MlController;

use crate::channel::{ChannelSim, ControlState, NoiseSchedule, SimConfig, Telemetry, TELEMETRY_CSV_HEADER};
use crate::config::WorkbenchConfig;
use crate::controller::{reward, ActionBox, ObsScale, RewardConfig, SafetyBounds};
use crate::error::{Error, Result};
use crate::io::sig10;
use crate::rates::{protocol_rate, transmittance, ChannelState, LinkParams, LinkRate, OperatingPoint, ProtocolConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub blocks: usize,
    /// Leading blocks left out of medians.
    pub warmup_blocks: usize,
    /// Blocks before an event that define the pre-event median.
    pub pre_event_window: usize,
    pub recovery_fraction: f64,
    /// Consecutive blocks that must meet the recovery level.
    pub recovery_run: usize,
    pub block_seconds: f64,
    pub recalib_period: usize,
    pub recalib_grid: Vec<f64>,
    /// Keep running PPO updates while controlling.
    pub online_learning: bool,
    pub bootstrap_resamples: usize,
    pub ci_level: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            blocks: 600,
            warmup_blocks: 100,
            pre_event_window: 50,
            recovery_fraction: 0.95,
            recovery_run: 3,
            block_seconds: 1.0,
            recalib_period: 15,
            recalib_grid: vec![0.3, 0.4, 0.5, 0.6, 0.7],
            online_learning: true,
            bootstrap_resamples: 10_000,
            ci_level: 0.95,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.recalib_grid.is_empty() || self.recalib_period <= self.recalib_grid.len() {
            return Err(Error::Config("recalib_period must exceed the number of grid points".into()));
        }
        if self.recovery_run == 0 || !(self.recovery_fraction > 0.0) || !(self.block_seconds > 0.0) {
            return Err(Error::Config("recovery_run, recovery_fraction and block_seconds must be positive".into()));
        }
        if self.bootstrap_resamples == 0 || !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Config("bootstrap needs resamples > 0 and ci_level in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub scenario: String,
    /// Telemetry blocks (static control) used to fit the forecaster.
    pub tcn_blocks: usize,
    pub ppo_episodes: usize,
    pub episode_blocks: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { scenario: "training-mix".into(), tcn_blocks: 1000, ppo_episodes: 40, episode_blocks: 512 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Ml,
    Static,
    Recalib,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::Ml, ControllerKind::Static, ControllerKind::Recalib];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Ml => "ml",
            ControllerKind::Static => "static",
            ControllerKind::Recalib => "recalib",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ml" => Ok(ControllerKind::Ml),
            "static" => Ok(ControllerKind::Static),
            "recalib" => Ok(ControllerKind::Recalib),
            other => Err(Error::Config(format!("unknown controller '{other}' (expected ml, static or recalib)"))),
        }
    }
}

/// What a controller learns after each block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feedback {
    pub telemetry: Telemetry,
    pub control: ControlState,
    pub skr_bps: f64,
    pub reward: f64,
}

pub trait Controller {
    fn kind(&self) -> ControllerKind;

    /// Called once before the first block.
    fn begin(&mut self, _nominal: &ControlState) -> Result<()> {
        Ok(())
    }

    /// Settings for block `t`. `last` is the telemetry of block `t-1`.
    fn decide(&mut self, t: usize, last: Option<&Telemetry>, current: &ControlState) -> Result<ControlState>;

    fn feedback(&mut self, fb: &Feedback) -> Result<()>;

    /// Called once after the last block.
    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Fixed physical setting of a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopEnv {
    pub link: LinkParams,
    pub proto: ProtocolConfig,
    pub sim: SimConfig,
    /// Reward with `skr_ref` resolved.
    pub reward: RewardConfig,
    pub bounds: SafetyBounds,
    pub boxes: ActionBox,
    pub obs_scale: ObsScale,
    pub cfg: LoopConfig,
}

/// Model rate of the clean link at the protocol's nominal settings.
pub fn nominal_rate(link: &LinkParams, proto: &ProtocolConfig) -> Result<LinkRate> {
    protocol_rate(&ChannelState::nominal(link, proto), &OperatingPoint::nominal(proto), proto, link.f_rep)
}

impl LoopEnv {
    pub fn from_config(cfg: &WorkbenchConfig) -> Result<Self> {
        cfg.validate()?;
        let proto = cfg.protocol_config();
        let nominal = nominal_rate(&cfg.link, &proto)?;
        let mut reward = cfg.reward;
        if reward.skr_ref == 0.0 {
            reward.skr_ref = nominal.report.r_bps;
        }
        reward.validate()?;
        let obs_scale = ObsScale {
            q_ref: nominal.q_mu,
            eta_ref: transmittance(&cfg.link),
            qber_ref: reward.qber_ref,
            theta_scale: cfg.observation.theta_scale,
            phi_scale: cfg.observation.phi_scale,
        };
        Ok(Self {
            link: cfg.link,
            proto,
            sim: cfg.sim,
            reward,
            bounds: cfg.safety,
            boxes: cfg.action,
            obs_scale,
            cfg: cfg.closed_loop.clone(),
        })
    }

    pub fn nominal_control(&self) -> ControlState {
        self.bounds.filter(&ControlState::nominal(&self.proto))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockRecord {
    pub telemetry: Telemetry,
    pub control: ControlState,
    pub skr_bps: f64,
    pub skr_finite: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub scenario: String,
    pub seed: u64,
    pub controller: ControllerKind,
    pub records: Vec<BlockRecord>,
}

pub fn episode_csv_header() -> String {
    format!("{TELEMETRY_CSV_HEADER},mu_s,mu_w,p_z,theta_c,phi_c,skr_bps,skr_finite,reward,controller")
}

impl EpisodeLog {
    pub fn skr(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.skr_bps).collect()
    }

    pub fn qber(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.telemetry.e_mu_hat).collect()
    }

    pub fn abort_count(&self) -> usize {
        self.records.iter().filter(|r| r.telemetry.aborted).count()
    }

    /// Secret bits produced over the run.
    pub fn total_secret_bits(&self, block_seconds: f64) -> f64 {
        self.records.iter().map(|r| r.skr_bps * block_seconds).sum()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows = self.records.iter().map(|r| {
            let mut cells = r.telemetry.csv_cells();
            cells.extend(r.control.as_array().iter().map(|&x| sig10(x)));
            cells.extend([sig10(r.skr_bps), sig10(r.skr_finite), sig10(r.reward), self.controller.to_string()]);
            cells
        });
        crate::io::write_table(w, &episode_csv_header(), rows)
    }

    pub fn read_csv<R: Read>(r: R, scenario: &str, seed: u64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>().join(",") != episode_csv_header() {
            return Err(Error::param("episode CSV header does not match"));
        }
        let mut records = Vec::new();
        let mut controller = None;
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::param(format!("bad number in column {}", headers.get(i).unwrap_or("?"))))
            };
            let base = 11;
            let kind: ControllerKind = rec.get(base + 8).unwrap_or("").parse()?;
            if *controller.get_or_insert(kind) != kind {
                return Err(Error::param("episode CSV mixes controllers"));
            }
            records.push(BlockRecord {
                telemetry: Telemetry::from_csv_record(&rec, &headers)?,
                control: ControlState {
                    mu_s: num(base)?,
                    mu_w: num(base + 1)?,
                    p_z: num(base + 2)?,
                    theta_c: num(base + 3)?,
                    phi_c: num(base + 4)?,
                },
                skr_bps: num(base + 5)?,
                skr_finite: num(base + 6)?,
                reward: num(base + 7)?,
            });
        }
        let controller = controller.ok_or_else(|| Error::InsufficientData("empty episode CSV".into()))?;
        Ok(Self { scenario: scenario.to_string(), seed, controller, records })
    }
}

/// Run one episode of `schedule` under `ctl`, simulating with `seed`.
pub fn run_episode(env: &LoopEnv, schedule: NoiseSchedule, seed: u64, ctl: &mut dyn Controller) -> Result<EpisodeLog> {
    let scenario = schedule.name.clone();
    let mut sim = ChannelSim::new(env.link, schedule, env.proto, env.sim, seed)?;
    let nominal = env.nominal_control();
    ctl.begin(&nominal)?;
    let mut current = nominal;
    let mut last: Option<Telemetry> = None;
    let mut records = Vec::with_capacity(sim.blocks());
    for t in 0..sim.blocks() {
        current = env.bounds.filter(&ctl.decide(t, last.as_ref(), &current)?);
        let out = sim.step_block(&current, t)?;
        let tel = out.telemetry;
        let keyed = tel.e_mu_hat <= env.sim.abort_threshold;
        let skr_bps = if keyed { out.truth.report.r_bps } else { 0.0 };
        let skr_finite = if keyed { out.truth.report.r_finite_bps(env.link.f_rep) } else { 0.0 };
        let r = reward(skr_bps, tel.e_mu_hat.clamp(0.0, 0.5), tel.aborted, &env.reward);
        ctl.feedback(&Feedback { telemetry: tel, control: current, skr_bps, reward: r })?;
        records.push(BlockRecord { telemetry: tel, control: current, skr_bps, skr_finite, reward: r });
        if tel.aborted {
            current = nominal;
        }
        last = Some(tel);
    }
    ctl.finish()?;
    Ok(EpisodeLog { scenario, seed, controller: ctl.kind(), records })
}
