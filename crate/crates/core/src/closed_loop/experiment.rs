use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;

use super::{
    compare, run_episode, seed_metrics, Controller, ControllerKind, EpisodeLog, LoopEnv, MetricRow, MlController,
    RecalibController, SeedMetrics, StaticController, TrainingConfig,
};
use crate::channel::{make_scenario, ChannelSim, NoiseSchedule};
use crate::controller::{obs_dim, ActionMask, PpoAgent, PpoConfig, UpdateReport};
use crate::error::{Error, Result};
use crate::rng::{indexed_stream, stream};
use crate::tcn::{feature_row, windows, Tcn, TcnConfig, TrainReport};

/// Worker threads to use: `OPTIQKD_THREADS` if set, else the machine's
/// available parallelism.
pub fn worker_count() -> usize {
    std::env::var("OPTIQKD_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Map `f` over `items` on up to [`worker_count`] threads. Output order
/// follows input order; the first error (by index) wins.
pub fn parallel_map<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync,
{
    let workers = worker_count().min(items.len()).max(1);
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<U>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.unwrap_or_else(|| Err(Error::InsufficientData("worker did not finish".into()))))
        .collect()
}

/// Trained forecaster and policy used by the ML controller.
#[derive(Debug, Clone)]
pub struct MlModels {
    pub tcn: Tcn,
    pub agent: PpoAgent,
}

/// Forecaster training series: the training scenario run under static
/// control.
pub fn tcn_training_series(env: &LoopEnv, tcn: &TcnConfig, training: &TrainingConfig, seed: u64) -> Result<Vec<Vec<f64>>> {
    let sched = make_scenario(&training.scenario, training.tcn_blocks, seed)?;
    let mut sim = ChannelSim::new(env.link, sched, env.proto, env.sim, seed)?;
    let tel = sim.run_fixed(&env.nominal_control())?;
    Ok(tel.iter().map(|t| feature_row(&tcn.features, t)).collect())
}

pub fn train_tcn(env: &LoopEnv, cfg: &TcnConfig, training: &TrainingConfig, seed: u64) -> Result<(Tcn, TrainReport)> {
    let series = tcn_training_series(env, cfg, training, seed)?;
    let mut model = Tcn::new(cfg.clone(), &mut stream(seed, "tcn-init"))?;
    model.calibrate(&series);
    let data = windows(&series, cfg.window);
    let report = model.train(&data, cfg.epochs, cfg.lr, &mut stream(seed, "tcn-train"))?;
    Ok((model, report))
}

/// Train a fresh policy on `training.ppo_episodes` episodes of the training
/// scenario, each with its own schedule and channel seed.
pub fn pretrain_ppo(
    env: &LoopEnv,
    tcn: &Tcn,
    cfg: &PpoConfig,
    training: &TrainingConfig,
    seed: u64,
) -> Result<(PpoAgent, Vec<UpdateReport>)> {
    let mask = ActionMask::for_protocol(env.proto.kind);
    let mut agent = PpoAgent::new(cfg.clone(), obs_dim(tcn.cfg.features.len()), mask.len(), &mut stream(seed, "ppo-init"))?;
    agent.tag = env.proto.kind.name().to_string();
    let mut ctl = MlController::new(env, tcn.clone(), agent, true, seed)?;
    for e in 0..training.ppo_episodes {
        let ep_seed: u64 = indexed_stream(seed, "ppo-episode", e as u64).random();
        let sched = make_scenario(&training.scenario, training.episode_blocks, ep_seed)?;
        run_episode(env, sched, ep_seed, &mut ctl)?;
    }
    let (_, mut agent, updates) = ctl.into_parts();
    agent.buffer.clear();
    Ok((agent, updates))
}

fn controller_for(kind: ControllerKind, env: &LoopEnv, models: Option<&MlModels>, seed: u64) -> Result<Box<dyn Controller>> {
    Ok(match kind {
        ControllerKind::Static => Box::new(StaticController::new()),
        ControllerKind::Recalib => Box::new(RecalibController::new(env.cfg.recalib_period, env.cfg.recalib_grid.clone())),
        ControllerKind::Ml => {
            let m = models.ok_or_else(|| Error::Checkpoint("the ml controller needs trained models".into()))?;
            let learn = env.cfg.online_learning;
            Box::new(MlController::new(env, m.tcn.clone(), m.agent.clone(), learn, seed)?)
        }
    })
}

fn schedule(scenario: &str, blocks: usize, seed: u64) -> Result<NoiseSchedule> {
    if blocks < 200 {
        return Err(Error::param(format!("closed-loop runs need at least 200 blocks, got {blocks}")));
    }
    make_scenario(scenario, blocks, seed)
}

/// One episode per seed of `scenario` under one controller kind.
pub fn run_closed_loop(
    env: &LoopEnv,
    scenario: &str,
    kind: ControllerKind,
    seeds: &[u64],
    blocks: usize,
    models: Option<&MlModels>,
) -> Result<Vec<EpisodeLog>> {
    parallel_map(seeds, |&seed| {
        let mut ctl = controller_for(kind, env, models, seed)?;
        run_episode(env, schedule(scenario, blocks, seed)?, seed, ctl.as_mut())
    })
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    /// Logs per controller, in the requested order, one per seed.
    pub logs: Vec<(ControllerKind, Vec<EpisodeLog>)>,
    pub seed_metrics: Vec<SeedMetrics>,
    /// Aggregate table; empty when only one controller ran.
    pub rows: Vec<MetricRow>,
}

/// Run every (controller, seed) pair on `scenario` and summarize.
pub fn evaluate(
    env: &LoopEnv,
    scenario: &str,
    kinds: &[ControllerKind],
    seeds: &[u64],
    blocks: usize,
    models: Option<&MlModels>,
) -> Result<EvalOutput> {
    if seeds.is_empty() || kinds.is_empty() {
        return Err(Error::param("evaluation needs at least one seed and one controller"));
    }
    if kinds.contains(&ControllerKind::Ml) && models.is_none() {
        return Err(Error::Checkpoint("the ml controller needs trained models".into()));
    }
    let jobs: Vec<(ControllerKind, u64)> = kinds.iter().flat_map(|&k| seeds.iter().map(move |&s| (k, s))).collect();
    let mut done = parallel_map(&jobs, |&(kind, seed)| {
        let mut ctl = controller_for(kind, env, models, seed)?;
        let sched = schedule(scenario, blocks, seed)?;
        let event = sched.events.first().map(|e| e.block);
        let log = run_episode(env, sched, seed, ctl.as_mut())?;
        let m = seed_metrics(&log, &env.cfg, event)?;
        Ok((log, m))
    })?
    .into_iter();
    let mut logs = Vec::new();
    let mut per_ctl = Vec::new();
    for &k in kinds {
        let (l, m): (Vec<_>, Vec<_>) = done.by_ref().take(seeds.len()).unzip();
        logs.push((k, l));
        per_ctl.push(m);
    }
    let rows = if per_ctl.len() >= 2 { compare(&per_ctl, &env.cfg)? } else { Vec::new() };
    Ok(EvalOutput { logs, seed_metrics: per_ctl.into_iter().flatten().collect(), rows })
}
