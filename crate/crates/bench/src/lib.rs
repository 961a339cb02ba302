//! Inputs shared by the benchmarks.

use qkdloop_core::channel::make_scenario;
use qkdloop_core::controller::{obs_dim, ActionMask, PpoAgent, PpoConfig};
use qkdloop_core::rng::stream;
use qkdloop_core::tcn::{feature_row, Tcn, TcnConfig};
use qkdloop_core::{ChannelSim, LoopEnv, WorkbenchConfig};

pub fn env() -> LoopEnv {
    LoopEnv::from_config(&WorkbenchConfig::default()).expect("default config is valid")
}

pub fn sim(env: &LoopEnv, blocks: usize) -> ChannelSim {
    let sched = make_scenario("noise-sweep", blocks, 1).expect("known scenario");
    ChannelSim::new(env.link, sched, env.proto, env.sim, 1).expect("valid simulator")
}

/// Untrained forecaster calibrated on a nominal run, plus one input window.
pub fn tcn(env: &LoopEnv) -> (Tcn, Vec<Vec<f64>>) {
    let cfg = TcnConfig::default();
    let mut s = sim(env, 200);
    let rows: Vec<Vec<f64>> = s
        .run_fixed(&env.nominal_control())
        .expect("simulation runs")
        .iter()
        .map(|t| feature_row(&cfg.features, t))
        .collect();
    let mut model = Tcn::new(cfg.clone(), &mut stream(1, "bench-tcn")).expect("valid config");
    model.calibrate(&rows);
    let window = rows[rows.len() - cfg.window..].to_vec();
    (model, window)
}

pub fn agent(env: &LoopEnv) -> (PpoAgent, Vec<f64>) {
    let obs = obs_dim(TcnConfig::default().features.len());
    let act = ActionMask::for_protocol(env.proto.kind).len();
    let agent = PpoAgent::new(PpoConfig::default(), obs, act, &mut stream(1, "bench-ppo")).expect("valid config");
    (agent, vec![0.1; obs])
}
