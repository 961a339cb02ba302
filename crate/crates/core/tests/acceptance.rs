//! Acceptance criteria. Each test prints exactly one `PASS` or `FAIL` line
//! and then asserts on it.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use qkdloop_core::channel::make_scenario;
use qkdloop_core::closed_loop::{
    evaluate, pretrain_ppo, train_tcn, write_metrics_csv, ControllerKind, EvalOutput, LoopEnv, MlModels,
};
use qkdloop_core::config::WorkbenchConfig;
use qkdloop_core::controller::{train_toy, PpoAgent, PpoConfig, ToyEnv};
use qkdloop_core::nn::{conv1d_causal, Dense, LayerParams, ParamStore, Tape, Tensor};
use qkdloop_core::rates::{
    decoy_bounds, e91_key_rate, link_key_rate, LinkParams, Observation, ProtocolConfig,
};
use qkdloop_core::rng::stream;
use qkdloop_core::stats::{bootstrap_mean_ci, wilson_interval};
use qkdloop_core::tcn::{feature_row, persistence_mse, windows, Tcn, TcnConfig};
use qkdloop_core::{ChannelSim, ControlState, SimConfig};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde_json::Value;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn report(id: u32, name: &str, pass: bool, detail: String, elapsed: Duration) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("{status} criterion {id} ({name}): {detail} [{:.1}s]", elapsed.as_secs_f64());
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}

#[test]
fn c01_rate_engine_matches_oracle() {
    let t0 = Instant::now();
    let f: Value = serde_json::from_str(include_str!("fixtures/rates_oracle.json")).unwrap();
    let num = |v: &Value| -> f64 { v.as_str().map_or_else(|| v.as_f64().unwrap(), |s| s.parse().unwrap()) };
    let mut worst = 0.0f64;
    let mut n = 0;
    for (key, cfg) in [
        ("bb84", ProtocolConfig::bb84()),
        ("e91", ProtocolConfig::e91()),
        ("cow", ProtocolConfig::cow()),
        ("cow_drift", ProtocolConfig::cow()),
    ] {
        for row in f[key].as_array().unwrap() {
            let d = num(&row["distance_km"]);
            let dphi = row.get("dphi").map_or(0.0, num);
            let r = link_key_rate(&LinkParams::default().at_distance(d), &cfg, dphi).unwrap();
            for (got, field) in [
                (r.q_mu, "q_mu"),
                (r.e_mu, "e_mu"),
                (r.report.r_per_pulse, "r_pp"),
                (r.report.r_finite, "r_finite"),
                (r.report.r_bps, "r_bps"),
            ] {
                worst = worst.max(rel_err(got, num(&row[field])));
                n += 1;
            }
        }
    }
    let el = t0.elapsed();
    let pass = worst <= 1e-9 && el < Duration::from_secs(5);
    report(1, "rate-engine exactness", pass, format!("{n} values on 0-120 km, max rel err {worst:.2e} (<= 1e-9)"), el);
}

/// Poisson photon-number sum to n = 50, written out independently.
fn oracle_gain(eta: f64, mu: f64, y0: f64, e_d: f64, e0: f64) -> (f64, f64) {
    let (mut q, mut eq) = (0.0, 0.0);
    for k in 0..=50 {
        let p = (-mu).exp() * mu.powi(k) / (1..=k).map(f64::from).product::<f64>();
        let click = 1.0 - (1.0 - eta).powi(k);
        q += p * (y0 + click);
        eq += p * (e0 * y0 + e_d * click);
    }
    (q, eq / q)
}

#[test]
fn c02_decoy_bounds_are_safe() {
    let t0 = Instant::now();
    let mut rng = stream(2024, "decoy-safety");
    let mut violations = 0;
    let mut checked = 0;
    for _ in 0..1000 {
        let eta: f64 = 10f64.powf(rng.random_range(-4.0..-0.3));
        let y0: f64 = 10f64.powf(rng.random_range(-7.0..-4.0));
        let e_d: f64 = rng.random_range(0.0..0.08);
        let mu_s: f64 = rng.random_range(0.3..0.9);
        let mu_w: f64 = rng.random_range(0.02..0.25f64.min(mu_s - 0.05));
        let mut cfg = ProtocolConfig::bb84();
        cfg.bb84.mu_s = mu_s;
        cfg.bb84.mu_w = mu_w;
        let obs = |mu| {
            let (gain, qber) = oracle_gain(eta, mu, y0, e_d, 0.5);
            Observation { gain, qber }
        };
        let y1 = y0 + eta;
        let e1 = (0.5 * y0 + e_d * eta) / y1;
        match decoy_bounds(obs(mu_s), obs(mu_w), &cfg, y0, 0.5) {
            Ok(b) => {
                checked += 1;
                if b.y1_lower > y1 * (1.0 + 1e-12) || b.e1_upper < e1 * (1.0 - 1e-12) {
                    violations += 1;
                }
            }
            Err(_) => violations += 1,
        }
    }
    let el = t0.elapsed();
    let pass = violations == 0 && el < Duration::from_secs(10);
    report(2, "decoy-bound safety", pass, format!("{checked}/1000 feasible, {violations} violations"), el);
}

#[test]
fn c03_e91_threshold() {
    let t0 = Instant::now();
    let mut cfg = ProtocolConfig::e91();
    cfg.f_ec = 1.0;
    // Parametrize by visibility: Q = (1 - V) / 2, S = 2 sqrt(2) V.
    let rate = |q: f64| {
        let v = 1.0 - 2.0 * q;
        e91_key_rate(2.0 * 2f64.sqrt() * v, q, &cfg, 1.0).unwrap().components.raw
    };
    let (mut lo, mut hi) = (1e-6, 0.25);
    assert!(rate(lo) > 0.0 && rate(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    let pass = (0.10..=0.125).contains(&root);
    report(3, "E91 zero crossing", pass, format!("rate crosses zero at Q = {root:.6} (required in [0.100, 0.125])"), t0.elapsed());
}

fn numeric_grad(mut loss: impl FnMut(f64) -> f64, x: f64) -> f64 {
    let h = 1e-6 * x.abs().max(1.0);
    (loss(x + h) - loss(x - h)) / (2.0 * h)
}

#[test]
fn c04_tcn_correctness() {
    let t0 = Instant::now();
    let mut rng = stream(4, "gradcheck");
    // Gradient check over a network touching every op.
    let mut store = ParamStore::new();
    let conv = LayerParams::new(&mut store, "conv", 2, 3, 3, 2, &mut rng).unwrap();
    let dense = Dense::new(&mut store, "dense", 3, 2, 1.0, &mut rng).unwrap();
    let x = Tensor::from_vec(2, 9, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let target = Tensor::from_vec(2, 1, vec![0.3, -0.2]).unwrap();
    let forward = |store: &ParamStore, x: &Tensor| -> f64 {
        let mut tape = Tape::new(store);
        let xi = tape.input(x.clone());
        let c = conv.forward(&mut tape, xi).unwrap();
        let r = tape.relu(c);
        let t = tape.tanh(r);
        let s = tape.add(t, r).unwrap();
        let last = tape.last_col(s).unwrap();
        let d = dense.forward(&mut tape, last).unwrap();
        let l = tape.mse(d, &target).unwrap();
        let extra = tape.sum(d);
        let total = tape.add(l, extra).unwrap();
        tape.value(total).data[0]
    };
    let (grads, gx) = {
        let mut tape = Tape::new(&store);
        let xi = tape.input(x.clone());
        let c = conv.forward(&mut tape, xi).unwrap();
        let r = tape.relu(c);
        let t = tape.tanh(r);
        let s = tape.add(t, r).unwrap();
        let last = tape.last_col(s).unwrap();
        let d = dense.forward(&mut tape, last).unwrap();
        let l = tape.mse(d, &target).unwrap();
        let extra = tape.sum(d);
        let total = tape.add(l, extra).unwrap();
        let g = tape.backward(total).unwrap();
        let gx = g.wrt(xi).unwrap().clone();
        (g, gx)
    };
    let mut worst = 0.0f64;
    for id in store.ids().collect::<Vec<_>>() {
        for i in 0..store.get(id).data.len() {
            let base = store.get(id).data[i];
            let mut s2 = store.clone();
            let num = numeric_grad(
                |v| {
                    s2.get_mut(id).data[i] = v;
                    forward(&s2, &x)
                },
                base,
            );
            let ana = grads.param(id).data[i];
            worst = worst.max((ana - num).abs() / ana.abs().max(num.abs()).max(1e-6));
        }
    }
    for i in 0..x.data.len() {
        let mut x2 = x.clone();
        let num = numeric_grad(
            |v| {
                x2.data[i] = v;
                forward(&store, &x2)
            },
            x.data[i],
        );
        worst = worst.max((gx.data[i] - num).abs() / gx.data[i].abs().max(num.abs()).max(1e-6));
    }
    let grad_ok = worst < 1e-4;

    // Causality: perturbing input column j leaves outputs before j untouched.
    let mut causal_ok = true;
    for d in [1, 2, 4, 8] {
        let kernel = Tensor::from_vec(2, 6, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let bias = Tensor::from_vec(2, 1, vec![0.1, -0.1]).unwrap();
        let x = Tensor::from_vec(2, 40, (0..80).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = conv1d_causal(&x, &kernel, &bias, d).unwrap();
        for j in [5, 20, 39] {
            let mut xp = x.clone();
            *xp.at_mut(0, j) += 1.0;
            *xp.at_mut(1, j) -= 0.5;
            let yp = conv1d_causal(&xp, &kernel, &bias, d).unwrap();
            for t in 0..j {
                causal_ok &= (0..2).all(|c| yp.at(c, t) == y.at(c, t));
            }
            causal_ok &= (0..2).any(|c| yp.at(c, j) != y.at(c, j));
        }
    }

    // Sinusoidal drift: trained MSE against persistence on held-out runs.
    let cfg = TcnConfig::default();
    let series = |blocks: usize, seed: u64| -> Vec<Vec<f64>> {
        let proto = ProtocolConfig::bb84();
        let sched = make_scenario("sine-drift", blocks, seed).unwrap();
        let mut sim = ChannelSim::new(LinkParams::default(), sched, proto, SimConfig::default(), seed).unwrap();
        let tel = sim.run_fixed(&ControlState::nominal(&proto)).unwrap();
        tel.iter().map(|t| feature_row(&cfg.features, t)).collect()
    };
    let mut ratios = Vec::new();
    for seed in SEEDS {
        let train = series(500, seed);
        let test = windows(&series(300, seed + 1000), cfg.window);
        let mut m = Tcn::new(cfg.clone(), &mut stream(seed, "tcn-init")).unwrap();
        m.calibrate(&train);
        m.train(&windows(&train, cfg.window), cfg.epochs, cfg.lr, &mut stream(seed, "tcn-train")).unwrap();
        ratios.push(m.mse(&test).unwrap() / persistence_mse(&test, Some(&m.norm)));
    }
    let wins = ratios.iter().filter(|&&r| r <= 0.5).count();
    let el = t0.elapsed();
    let pass = grad_ok && causal_ok && wins == 5 && el < Duration::from_secs(180);
    let ratios: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    report(
        4,
        "TCN correctness",
        pass,
        format!(
            "max grad rel err {worst:.1e} (< 1e-4), causality {}, sine-drift MSE/persistence [{}] ({wins}/5 <= 0.5)",
            if causal_ok { "exact" } else { "violated" },
            ratios.join(", ")
        ),
        el,
    );
}

#[test]
fn c05_ppo_toy() {
    let t0 = Instant::now();
    let env = ToyEnv::default();
    let mut reached = Vec::new();
    for seed in 1..=3 {
        let (_, r) = train_toy(&env, PpoConfig::default(), 200, 0.05, seed).unwrap();
        reached.push(r.reached_at);
    }
    let el = t0.elapsed();
    let hits = reached.iter().filter(|r| r.is_some()).count();
    let pass = hits == 3 && el < Duration::from_secs(180);
    report(5, "PPO sanity", pass, format!("updates to reach 5% of optimum per seed {reached:?} (<= 200, 3/3)"), el);
}

struct Trained {
    cfg: WorkbenchConfig,
    env: LoopEnv,
    models: MlModels,
    train_time: Duration,
}

fn trained() -> &'static Trained {
    static MODELS: OnceLock<Trained> = OnceLock::new();
    MODELS.get_or_init(|| {
        let t0 = Instant::now();
        let cfg = WorkbenchConfig::default();
        let env = LoopEnv::from_config(&cfg).unwrap();
        let (tcn, _) = train_tcn(&env, &cfg.tcn, &cfg.training, 1).unwrap();
        let (agent, _) = pretrain_ppo(&env, &tcn, &cfg.ppo, &cfg.training, 1).unwrap();
        Trained { cfg, env, models: MlModels { tcn, agent }, train_time: t0.elapsed() }
    })
}

fn sweep() -> &'static (EvalOutput, Duration) {
    static SWEEP: OnceLock<(EvalOutput, Duration)> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let tr = trained();
        let t0 = Instant::now();
        let kinds = [ControllerKind::Ml, ControllerKind::Static];
        let out = evaluate(&tr.env, "noise-sweep", &kinds, &SEEDS, tr.cfg.closed_loop.blocks, Some(&tr.models)).unwrap();
        (out, tr.train_time + t0.elapsed())
    })
}

fn seed_values(out: &EvalOutput, kind: ControllerKind, f: impl Fn(&qkdloop_core::closed_loop::SeedMetrics) -> f64) -> Vec<f64> {
    out.seed_metrics.iter().filter(|m| m.controller == kind).map(f).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn c06_closed_loop_skr_gain() {
    let (out, el) = sweep();
    let ml = seed_values(out, ControllerKind::Ml, |m| m.median_skr_bps);
    let st = seed_values(out, ControllerKind::Static, |m| m.median_skr_bps);
    let (a, b) = (mean(&ml), mean(&st));
    let ratio = if b > 0.0 { a / b } else { f64::INFINITY };
    let pass = a >= 1.15 * b && a > 0.0 && *el < Duration::from_secs(20 * 60);
    report(
        6,
        "closed-loop SKR gain",
        pass,
        format!("median SKR ml {a:.4e} bps vs static {b:.4e} bps, ratio {ratio:.3} (>= 1.15)"),
        *el,
    );
}

#[test]
fn c07_closed_loop_qber_suppression() {
    let (out, el) = sweep();
    let tr = trained();
    let ml = mean(&seed_values(out, ControllerKind::Ml, |m| m.median_qber));
    let st = mean(&seed_values(out, ControllerKind::Static, |m| m.median_qber));
    let logs = &out.logs.iter().find(|(k, _)| *k == ControllerKind::Ml).unwrap().1;
    let mut worst_top = 0.0f64;
    for log in logs {
        let sched = make_scenario("noise-sweep", tr.cfg.closed_loop.blocks, log.seed).unwrap();
        for (r, &p) in log.records.iter().zip(&sched.depol_p) {
            if (p - 0.5).abs() < 1e-12 {
                worst_top = worst_top.max(r.telemetry.e_mu_hat);
            }
        }
    }
    let pass = ml <= 0.7 * st && worst_top <= 0.11;
    report(
        7,
        "closed-loop QBER suppression",
        pass,
        format!("median QBER ml {ml:.4} vs static {st:.4}, ratio {:.3} (<= 0.7); worst ml QBER at p = 0.5: {worst_top:.4} (<= 0.11)", ml / st),
        *el,
    );
}

#[test]
fn c08_adaptation() {
    let tr = trained();
    let t0 = Instant::now();
    let kinds = [ControllerKind::Ml, ControllerKind::Recalib];
    let out = evaluate(&tr.env, "splice-3db", &kinds, &SEEDS, tr.cfg.closed_loop.blocks, Some(&tr.models)).unwrap();
    let get = |k| out.seed_metrics.iter().filter(|m| m.controller == k).map(|m| m.adaptation_blocks.flatten()).collect::<Vec<_>>();
    let (ml, rc) = (get(ControllerKind::Ml), get(ControllerKind::Recalib));
    let censor = tr.cfg.closed_loop.blocks / 2;
    let wins = ml
        .iter()
        .zip(&rc)
        .filter(|(m, r)| matches!(m, Some(m) if (*m as f64) <= 0.5 * r.unwrap_or(censor) as f64))
        .count();
    let show = |v: &[Option<usize>]| v.iter().map(|x| x.map_or("none".to_string(), |b| b.to_string())).collect::<Vec<_>>().join(",");
    report(
        8,
        "adaptation after 3 dB splice",
        wins >= 4,
        format!("adaptation blocks ml [{}] vs recalib [{}]; {wins}/5 seeds with ml <= 0.5 x recalib (>= 4)", show(&ml), show(&rc)),
        t0.elapsed(),
    );
}

#[test]
fn c09_statistics() {
    let t0 = Instant::now();
    let mut rng = stream(9, "wilson-coverage");
    let (n, p) = (1000u64, 0.03);
    let binom = Binomial::new(n, p).unwrap();
    let covered = (0..500)
        .filter(|_| {
            let k = binom.sample(&mut rng);
            let (lo, hi) = wilson_interval(k, n, 0.95).unwrap();
            lo <= p && p <= hi
        })
        .count();
    let coverage = covered as f64 / 500.0;
    let ci = bootstrap_mean_ci(&[0.042; 5], 10_000, 0.95, &mut stream(9, "bootstrap")).unwrap();
    let degenerate = ci.lo == ci.point && ci.hi == ci.point;
    report(
        9,
        "statistical machinery",
        coverage >= 0.93 && degenerate,
        format!("Wilson coverage {:.1}% (>= 93%), constant bootstrap CI degenerate: {degenerate}", 100.0 * coverage),
        t0.elapsed(),
    );
}

#[test]
fn c10_eval_is_deterministic() {
    let tr = trained();
    let t0 = Instant::now();
    // Go through checkpoint text, as the command line does.
    let tcn = Tcn::from_json(&tr.models.tcn.to_json().unwrap()).unwrap();
    let agent = PpoAgent::from_json(&tr.models.agent.to_json().unwrap()).unwrap();
    let models = MlModels { tcn, agent };
    let run = || {
        let kinds = [ControllerKind::Ml, ControllerKind::Static, ControllerKind::Recalib];
        let out = evaluate(&tr.env, "noise-sweep", &kinds, &[1, 2], 300, Some(&models)).unwrap();
        let mut bytes = Vec::new();
        write_metrics_csv(&mut bytes, &out.rows).unwrap();
        for (_, logs) in &out.logs {
            for l in logs {
                l.write_csv(&mut bytes).unwrap();
            }
        }
        bytes
    };
    let (a, b) = (run(), run());
    report(10, "determinism", a == b, format!("two eval runs produced {} and {} bytes, identical: {}", a.len(), b.len(), a == b), t0.elapsed());
}
