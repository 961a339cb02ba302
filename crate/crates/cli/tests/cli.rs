use std::ffi::OsStr;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qkdloop_core::closed_loop::{tcn_training_series, METRICS_CSV_HEADER, SEED_METRICS_CSV_HEADER};
use qkdloop_core::tcn::{windows, Tcn};
use qkdloop_core::{LoopEnv, WorkbenchConfig};

/// Settings that keep training runs to a few seconds.
const SMALL: &[&str] = &[
    "--set",
    "tcn.epochs=2",
    "--set",
    "training.tcn_blocks=300",
    "--set",
    "training.ppo_episodes=1",
    "--set",
    "training.episode_blocks=300",
];

fn qkdloop<S: AsRef<OsStr>>(args: &[S], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qkdloop"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("OPTIQKD_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn ok<S: AsRef<OsStr> + std::fmt::Debug>(args: &[S], out: &Path) -> Output {
    let o = qkdloop(args, out);
    assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn small<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    extra.iter().chain(SMALL).copied().collect()
}

/// Parse a CSV, check its header and that every cell after the first
/// `text_cols` is a number.
fn table(path: &Path, header: &str, text_cols: usize) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>().join(","), header, "{}", path.display());
    let rows: Vec<_> = r.records().map(|r| r.unwrap()).collect();
    for row in &rows {
        assert_eq!(row.len(), header.split(',').count());
        for cell in row.iter().skip(text_cols) {
            cell.parse::<f64>().unwrap_or_else(|_| panic!("{cell} in {}", path.display()));
        }
    }
    rows
}

#[test]
fn rates_table() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["rates"], dir.path());
    let rows = table(&dir.path().join("rates_bb84.csv"), "distance_km,q_mu,e_mu,r_pp,r_finite,r_bps", 0);
    assert_eq!(rows.len(), 41);
    let r_pp: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(r_pp.windows(2).all(|w| w[1] <= w[0]));
    assert!(r_pp[0] > 0.0 && r_pp[0] == r_pp.iter().cloned().fold(0.0, f64::max));

    for p in ["e91", "cow"] {
        ok(&["rates", "--protocol", p, "--to-km", "50"], dir.path());
        assert_eq!(table(&dir.path().join(format!("rates_{p}.csv")), "distance_km,q_mu,e_mu,r_pp,r_finite,r_bps", 0).len(), 11);
    }
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["rates", "--protocol", "b92"],
        vec!["rates", "--step-km", "0"],
        vec!["simulate", "--scenario", "nonexistent"],
        vec!["show-config", "--set", "nope.key=1"],
        vec!["show-config", "--set", "ppo.gamma=1.5"],
        vec!["eval", "--seeds", "5..1"],
        vec!["eval", "--controllers", "pid"],
        vec!["train", "forecast"],
        vec!["frobnicate"],
    ] {
        let o = qkdloop(&args, dir.path());
        assert_eq!(code(&o), 1, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(code(&qkdloop(&["--help"], dir.path())), 0);
}

#[test]
fn show_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(&["show-config"], dir.path());
    let cfg = WorkbenchConfig::from_toml(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg, WorkbenchConfig::default());

    let o = ok(&["show-config", "--protocol", "cow", "--set", "loop.blocks=700"], dir.path());
    let cfg = WorkbenchConfig::from_toml(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg.closed_loop.blocks, 700);

    let path = dir.path().join("c.toml");
    fs::write(&path, "[loop]\nblocks = 321\n").unwrap();
    let o = ok(&["show-config", "--config", path.to_str().unwrap()], dir.path());
    assert!(String::from_utf8(o.stdout).unwrap().contains("blocks = 321"));
}

#[test]
fn simulate_writes_telemetry() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--scenario", "splice-3db", "--seeds", "1..2", "--blocks", "120"], dir.path());
    for s in [1, 2] {
        let rows = table(
            &dir.path().join(format!("telemetry_splice-3db_s{s}.csv")),
            qkdloop_core::channel::TELEMETRY_CSV_HEADER,
            0,
        );
        assert_eq!(rows.len(), 120);
    }
}

#[test]
fn tcn_training_is_reproducible_and_reloadable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        ok(&small(&["train", "tcn", "--seed", "1", "--scenario", "nominal"]), d.path());
    }
    let ckpt = fs::read(a.path().join("tcn.json")).unwrap();
    assert_eq!(ckpt, fs::read(b.path().join("tcn.json")).unwrap());
    assert_eq!(fs::read(a.path().join("tcn_loss.csv")).unwrap(), fs::read(b.path().join("tcn_loss.csv")).unwrap());
    assert_eq!(table(&a.path().join("tcn_loss.csv"), "epoch,train_loss", 0).len(), 2);
    let eval = table(&a.path().join("tcn_eval.csv"), "dataset,windows,mse", 1);
    let logged: f64 = eval[0][2].parse().unwrap();

    let model = Tcn::load(&a.path().join("tcn.json")).unwrap();
    let mut cfg = WorkbenchConfig::default();
    cfg.tcn.epochs = 2;
    cfg.training.tcn_blocks = 300;
    cfg.training.scenario = "nominal".into();
    let env = LoopEnv::from_config(&cfg).unwrap();
    let series = tcn_training_series(&env, &cfg.tcn, &cfg.training, 1).unwrap();
    let data = windows(&series, cfg.tcn.window);
    assert_eq!(eval[0][1].parse::<usize>().unwrap(), data.len());
    let again = model.mse(&data).unwrap();
    assert!((again - logged).abs() <= 1e-8 * logged, "{again} vs {logged}");
}

#[test]
fn toy_policy_improves() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["train", "ppo", "--toy", "--seed", "1"], dir.path());
    let rows = table(&dir.path().join("ppo_progress.csv"), qkdloop_core::controller::PPO_PROGRESS_CSV_HEADER, 0);
    let reward = |r: &csv::StringRecord| r[1].parse::<f64>().unwrap();
    assert!(reward(rows.last().unwrap()) > reward(&rows[0]));
    assert!(dir.path().join("ppo_toy.json").exists());
}

#[test]
fn policy_training_needs_a_forecaster() {
    let dir = tempfile::tempdir().unwrap();
    let o = qkdloop(&small(&["train", "ppo"]), dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
    let o = qkdloop(&["eval", "--controllers", "ml,static"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&small(&["train", "tcn"]), out);
    ok(&small(&["train", "ppo"]), out);
    table(&out.join("ppo_progress.csv"), qkdloop_core::controller::PPO_PROGRESS_CSV_HEADER, 0);

    let eval = ["eval", "--controllers", "ml,static", "--seeds", "1..2", "--blocks", "200"];
    ok(&eval, out);
    let metrics = fs::read(out.join("metrics.csv")).unwrap();
    let seed_metrics = fs::read(out.join("seed_metrics.csv")).unwrap();
    let episode = fs::read(out.join("episodes/ml_noise-sweep_s2.csv")).unwrap();
    ok(&eval, out);
    assert_eq!(metrics, fs::read(out.join("metrics.csv")).unwrap());
    assert_eq!(seed_metrics, fs::read(out.join("seed_metrics.csv")).unwrap());
    assert_eq!(episode, fs::read(out.join("episodes/ml_noise-sweep_s2.csv")).unwrap());

    let rows = table(&out.join("metrics.csv"), METRICS_CSV_HEADER, 3);
    for ctl in ["ml", "static"] {
        assert!(rows.iter().any(|r| &r[0] == ctl && &r[2] == "median_skr_bps"));
    }
    table(&out.join("seed_metrics.csv"), SEED_METRICS_CSV_HEADER, 4);
    for ctl in ["ml", "static"] {
        for s in [1, 2] {
            let p = out.join(format!("episodes/{ctl}_noise-sweep_s{s}.csv"));
            let mut r = csv::Reader::from_path(&p).unwrap();
            assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>().join(","), qkdloop_core::closed_loop::episode_csv_header());
            assert_eq!(r.records().count(), 200);
        }
    }
}

#[test]
fn splice_reports_adaptation_for_baselines() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["eval", "--scenario", "splice-3db", "--controllers", "static,recalib", "--seeds", "1..2"], dir.path());
    let rows = table(&dir.path().join("seed_metrics.csv"), SEED_METRICS_CSV_HEADER, 4);
    for ctl in ["static", "recalib"] {
        assert_eq!(rows.iter().filter(|r| &r[0] == ctl && &r[3] == "adaptation_blocks").count(), 2);
    }
}
