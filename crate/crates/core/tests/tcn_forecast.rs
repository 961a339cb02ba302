use qkdloop_core::channel::{make_scenario, ChannelSim, ControlState, SimConfig, Telemetry};
use qkdloop_core::rng::stream;
use qkdloop_core::tcn::{feature_row, persistence_mse, windows, Forecaster, Tcn, TcnConfig};
use qkdloop_core::{LinkParams, ProtocolConfig};

fn telemetry(scenario: &str, blocks: usize, seed: u64) -> Vec<Telemetry> {
    let proto = ProtocolConfig::bb84();
    let sched = make_scenario(scenario, blocks, seed).unwrap();
    let mut sim = ChannelSim::new(LinkParams::default(), sched, proto, SimConfig::default(), seed).unwrap();
    sim.run_fixed(&ControlState::nominal(&proto)).unwrap()
}

fn series(scenario: &str, blocks: usize, seed: u64, cfg: &TcnConfig) -> Vec<Vec<f64>> {
    telemetry(scenario, blocks, seed).iter().map(|t| feature_row(&cfg.features, t)).collect()
}

/// Train on 500 blocks of sinusoidal drift and score on an independent run.
#[test]
fn sine_drift_forecast_halves_persistence_error() {
    let cfg = TcnConfig::default();
    for seed in 1..=5 {
        let train = series("sine-drift", 500, seed, &cfg);
        let test = windows(&series("sine-drift", 300, seed + 1000, &cfg), cfg.window);
        let mut m = Tcn::new(cfg.clone(), &mut stream(seed, "tcn-init")).unwrap();
        m.calibrate(&train);
        let data = windows(&train, cfg.window);
        let initial = m.mse(&data).unwrap();
        let report = m.train(&data, cfg.epochs, cfg.lr, &mut stream(seed, "tcn-train")).unwrap();
        let last = *report.epoch_losses.last().unwrap();
        assert!(last < initial, "seed {seed}: {initial} -> {last}");
        let ratio = m.mse(&test).unwrap() / persistence_mse(&test, Some(&m.norm));
        let raw = m.mse_raw(&test).unwrap() / persistence_mse(&test, None);
        assert!(ratio <= 0.5, "seed {seed}: normalized ratio {ratio}");
        assert!(raw <= 0.5, "seed {seed}: raw ratio {raw}");
    }
}

#[test]
fn constant_data_is_learned() {
    let cfg = TcnConfig { window: 8, epochs: 40, ..Default::default() };
    let row = vec![0.03, 0.94];
    let series: Vec<Vec<f64>> = vec![row.clone(); 200];
    let mut m = Tcn::new(cfg.clone(), &mut stream(1, "c")).unwrap();
    m.calibrate(&series);
    let data = windows(&series, cfg.window);
    m.train(&data, cfg.epochs, cfg.lr, &mut stream(1, "ct")).unwrap();
    assert!(m.mse(&data).unwrap() < 1e-6);
    let f = m.forward(&series[..8]).unwrap();
    for (a, b) in f.y_next.iter().zip(&row) {
        assert!((a - b).abs() < 1e-6);
    }
}

/// The forecast at block t must not depend on anything after t.
#[test]
fn forecaster_is_causal_over_streams() {
    let cfg = TcnConfig::default();
    let tel = telemetry("sine-drift", 200, 3);
    let mut m = Tcn::new(cfg.clone(), &mut stream(3, "init")).unwrap();
    m.calibrate(&tel.iter().map(|t| feature_row(&cfg.features, t)).collect::<Vec<_>>());
    let mut full = Forecaster::new(m.clone());
    let all: Vec<_> = tel.iter().map(|t| full.push(t).unwrap()).collect();
    let mut short = Forecaster::new(m);
    let cut: Vec<_> = tel[..120].iter().map(|t| short.push(t).unwrap()).collect();
    assert_eq!(&all[..120], &cut[..]);
    assert!(all[..cfg.window - 1].iter().all(|f| f.persistence));
    assert!(!all[150].persistence);
}

#[test]
fn training_is_deterministic_and_reloadable() {
    let cfg = TcnConfig { epochs: 3, ..Default::default() };
    let train = series("nominal", 200, 1, &cfg);
    let run = || {
        let mut m = Tcn::new(cfg.clone(), &mut stream(1, "init")).unwrap();
        m.calibrate(&train);
        let data = windows(&train, cfg.window);
        let r = m.train(&data, cfg.epochs, cfg.lr, &mut stream(1, "train")).unwrap();
        (m, r)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(ra, rb);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tcn.json");
    a.save(&path).unwrap();
    let back = Tcn::load(&path).unwrap();
    let data = windows(&train, cfg.window);
    assert_eq!(back.mse(&data).unwrap(), a.mse(&data).unwrap());
}
