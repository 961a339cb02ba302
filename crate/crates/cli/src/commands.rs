use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};

use qkdloop_core::channel::{make_scenario, SCENARIOS, TELEMETRY_CSV_HEADER};
use qkdloop_core::closed_loop::{
    evaluate, parallel_map, pretrain_ppo, tcn_training_series, train_tcn, write_metrics_csv, write_seed_metrics_csv,
    MlModels,
};
use qkdloop_core::controller::{train_toy, PpoAgent, ToyEnv, PPO_PROGRESS_CSV_HEADER};
use qkdloop_core::io::{sig10, write_table};
use qkdloop_core::rates::link_key_rate;
use qkdloop_core::tcn::Tcn;
use qkdloop_core::{ChannelSim, ControllerKind, LoopEnv, WorkbenchConfig};

use crate::{Cli, Command, Common, TrainTarget, Usage};

pub const RATES_CSV_HEADER: &str = "distance_km,q_mu,e_mu,r_pp,r_finite,r_bps";
pub const TCN_LOSS_CSV_HEADER: &str = "epoch,train_loss";
pub const TCN_EVAL_CSV_HEADER: &str = "dataset,windows,mse";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Usage(msg.into()))
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let c = &cli.common;
    if let Some(s) = &c.scenario {
        if !SCENARIOS.contains(&s.as_str()) {
            return Err(usage(format!("unknown scenario '{s}' (expected one of {})", SCENARIOS.join(", "))));
        }
    }
    match &cli.command {
        Command::ShowConfig => {
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
        Command::Rates { from_km, to_km, step_km, dphi } => rates(c, &cfg, *from_km, *to_km, *step_km, *dphi),
        Command::Simulate => simulate(c, &cfg),
        Command::Train { target: TrainTarget::Tcn, .. } => train_forecaster(c, cfg),
        Command::Train { target: TrainTarget::Ppo, toy: true, max_updates, .. } => train_policy_toy(c, &cfg, *max_updates),
        Command::Train { target: TrainTarget::Ppo, tcn, .. } => train_policy(c, cfg, tcn.as_deref()),
        Command::Eval { controllers, tcn, ppo } => eval(c, &cfg, controllers, tcn.as_deref(), ppo.as_deref()),
    }
}

fn load_config(c: &Common) -> Result<WorkbenchConfig> {
    let mut cfg = match &c.config {
        Some(p) => WorkbenchConfig::load(p).map_err(|e| usage(format!("config {}: {e}", p.display())))?,
        None => WorkbenchConfig::default(),
    };
    if let Some(p) = c.protocol {
        cfg.protocol = p.into();
    }
    for o in &c.overrides {
        cfg.apply_override(o).map_err(|e| usage(format!("--set {o}: {e}")))?;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

/// Seeds from `--seed` / `--seeds`, else `default`.
pub fn seeds(c: &Common, default: &[u64]) -> Result<Vec<u64>> {
    let list = match (&c.seed, &c.seeds) {
        (Some(s), _) => vec![*s],
        (None, None) => default.to_vec(),
        (None, Some(spec)) => parse_seeds(spec)?,
    };
    if list.is_empty() {
        return Err(usage("the seed list is empty"));
    }
    Ok(list)
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| usage(format!("bad seed '{s}' in --seeds {spec}")));
    if let Some((a, b)) = spec.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        return Ok((num(a)?..=num(b)?).collect());
    }
    spec.split(',').filter(|s| !s.trim().is_empty()).map(num).collect()
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Where a per-seed artifact goes: the output directory itself for a single
/// seed, `OUT/s{seed}` otherwise.
fn seed_dir(out: &Path, seed: u64, many: bool) -> PathBuf {
    if many {
        out.join(format!("s{seed}"))
    } else {
        out.to_path_buf()
    }
}

fn rates(c: &Common, cfg: &WorkbenchConfig, from: f64, to: f64, step: f64, dphi: f64) -> Result<()> {
    if !(from >= 0.0 && to >= from && step > 0.0 && from.is_finite() && to.is_finite()) {
        return Err(usage(format!("invalid distance grid {from}..{to} step {step}")));
    }
    let proto = cfg.protocol_config();
    let n = ((to - from) / step + 1e-9).floor() as usize + 1;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let d = from + i as f64 * step;
        let r = link_key_rate(&cfg.link.at_distance(d), &proto, dphi)?;
        let rep = &r.report;
        rows.push(vec![sig10(d), sig10(r.q_mu), sig10(r.e_mu), sig10(rep.r_per_pulse), sig10(rep.r_finite), sig10(rep.r_bps)]);
    }
    create_out(&c.out)?;
    let path = c.out.join(format!("rates_{}.csv", cfg.protocol.name()));
    write_table(create(&path)?, RATES_CSV_HEADER, rows)?;
    println!("wrote {n} rows to {}", path.display());
    Ok(())
}

fn simulate(c: &Common, cfg: &WorkbenchConfig) -> Result<()> {
    let seeds = seeds(c, &[1])?;
    let scenario = c.scenario.as_deref().unwrap_or("nominal");
    let blocks = c.blocks.unwrap_or(cfg.closed_loop.blocks);
    let env = LoopEnv::from_config(cfg)?;
    let runs = parallel_map(&seeds, |&seed| {
        let sched = make_scenario(scenario, blocks, seed)?;
        ChannelSim::new(env.link, sched, env.proto, env.sim, seed)?.run_fixed(&env.nominal_control())
    })?;
    create_out(&c.out)?;
    for (seed, tel) in seeds.iter().zip(runs) {
        let path = c.out.join(format!("telemetry_{scenario}_s{seed}.csv"));
        let aborts = tel.iter().filter(|t| t.aborted).count();
        write_table(create(&path)?, TELEMETRY_CSV_HEADER, tel.iter().map(|t| t.csv_cells()))?;
        println!("seed {seed}: {} blocks, {aborts} aborts -> {}", tel.len(), path.display());
    }
    Ok(())
}

fn train_forecaster(c: &Common, mut cfg: WorkbenchConfig) -> Result<()> {
    if let Some(s) = &c.scenario {
        cfg.training.scenario = s.clone();
    }
    if let Some(b) = c.blocks {
        cfg.training.tcn_blocks = b;
    }
    let seeds = seeds(c, &[1])?;
    let env = LoopEnv::from_config(&cfg)?;
    for &seed in &seeds {
        let dir = seed_dir(&c.out, seed, seeds.len() > 1);
        create_out(&dir)?;
        let (model, report) = train_tcn(&env, &cfg.tcn, &cfg.training, seed).context("forecaster training failed")?;
        model.save(&dir.join("tcn.json"))?;
        let rows = report.epoch_losses.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), sig10(*l)]);
        write_table(create(&dir.join("tcn_loss.csv"))?, TCN_LOSS_CSV_HEADER, rows)?;
        let n = tcn_training_series(&env, &cfg.tcn, &cfg.training, seed)?.len().saturating_sub(cfg.tcn.window);
        let eval = vec![vec!["training".to_string(), n.to_string(), sig10(report.final_loss)]];
        write_table(create(&dir.join("tcn_eval.csv"))?, TCN_EVAL_CSV_HEADER, eval)?;
        println!("seed {seed}: final training MSE {:.4e} -> {}", report.final_loss, dir.join("tcn.json").display());
    }
    Ok(())
}

fn write_progress(path: &Path, updates: &[qkdloop_core::controller::UpdateReport]) -> Result<()> {
    write_table(create(path)?, PPO_PROGRESS_CSV_HEADER, updates.iter().map(|u| u.csv_cells()))?;
    Ok(())
}

fn train_policy_toy(c: &Common, cfg: &WorkbenchConfig, max_updates: usize) -> Result<()> {
    let seeds = seeds(c, &[1])?;
    for &seed in &seeds {
        let dir = seed_dir(&c.out, seed, seeds.len() > 1);
        create_out(&dir)?;
        let env = ToyEnv::default();
        let (agent, report) = train_toy(&env, cfg.ppo.clone(), max_updates, 0.05, seed).context("toy policy training failed")?;
        agent.save(&dir.join("ppo_toy.json"))?;
        write_progress(&dir.join("ppo_progress.csv"), &report.updates)?;
        let first = report.updates.first().map_or(f64::NAN, |u| u.mean_reward);
        let last = report.updates.last().map_or(f64::NAN, |u| u.mean_reward);
        let reached = report.reached_at.map_or("not reached".to_string(), |u| format!("reached after {u} updates"));
        println!("seed {seed}: mean reward {first:.4} -> {last:.4}, target {reached}");
    }
    Ok(())
}

fn load_tcn(path: &Path) -> Result<Tcn> {
    Tcn::load(path).with_context(|| format!("missing or unreadable forecaster checkpoint {}", path.display()))
}

fn train_policy(c: &Common, mut cfg: WorkbenchConfig, tcn: Option<&Path>) -> Result<()> {
    if let Some(s) = &c.scenario {
        cfg.training.scenario = s.clone();
    }
    if let Some(b) = c.blocks {
        cfg.training.episode_blocks = b;
    }
    let seeds = seeds(c, &[1])?;
    let env = LoopEnv::from_config(&cfg)?;
    for &seed in &seeds {
        let dir = seed_dir(&c.out, seed, seeds.len() > 1);
        let tcn_path = tcn.map_or_else(|| dir.join("tcn.json"), Path::to_path_buf);
        let model = load_tcn(&tcn_path)?;
        create_out(&dir)?;
        let (agent, updates) = pretrain_ppo(&env, &model, &cfg.ppo, &cfg.training, seed).context("policy training failed")?;
        agent.save(&dir.join("ppo.json"))?;
        write_progress(&dir.join("ppo_progress.csv"), &updates)?;
        let first = updates.first().map_or(f64::NAN, |u| u.mean_reward);
        let last = updates.last().map_or(f64::NAN, |u| u.mean_reward);
        println!("seed {seed}: {} updates, mean reward {first:.4} -> {last:.4}", updates.len());
    }
    Ok(())
}

fn parse_controllers(spec: &str) -> Result<Vec<ControllerKind>> {
    let mut out = Vec::new();
    for s in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let k: ControllerKind = s.parse().map_err(|e| usage(format!("{e}")))?;
        if !out.contains(&k) {
            out.push(k);
        }
    }
    if out.is_empty() {
        return Err(usage("no controllers given"));
    }
    Ok(out)
}

fn eval(c: &Common, cfg: &WorkbenchConfig, controllers: &str, tcn: Option<&Path>, ppo: Option<&Path>) -> Result<()> {
    let kinds = parse_controllers(controllers)?;
    let seeds = seeds(c, &[1, 2, 3, 4, 5])?;
    let scenario = c.scenario.as_deref().unwrap_or("noise-sweep");
    let blocks = c.blocks.unwrap_or(cfg.closed_loop.blocks);
    if blocks < 200 {
        return Err(usage(format!("closed-loop runs need at least 200 blocks, got {blocks}")));
    }
    let env = LoopEnv::from_config(cfg)?;
    let models = if kinds.contains(&ControllerKind::Ml) {
        let tcn = load_tcn(&tcn.map_or_else(|| c.out.join("tcn.json"), Path::to_path_buf))?;
        let ppo_path = ppo.map_or_else(|| c.out.join("ppo.json"), Path::to_path_buf);
        let agent = PpoAgent::load(&ppo_path)
            .with_context(|| format!("missing or unreadable policy checkpoint {}", ppo_path.display()))?;
        Some(MlModels { tcn, agent })
    } else {
        None
    };
    let out = evaluate(&env, scenario, &kinds, &seeds, blocks, models.as_ref())?;

    let episodes = c.out.join("episodes");
    create_out(&episodes)?;
    for (kind, logs) in &out.logs {
        for log in logs {
            let path = episodes.join(format!("{kind}_{scenario}_s{}.csv", log.seed));
            let mut w = create(&path)?;
            log.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    write_metrics_csv(create(&c.out.join("metrics.csv"))?, &out.rows)?;
    write_seed_metrics_csv(create(&c.out.join("seed_metrics.csv"))?, &cfg.closed_loop, &out.seed_metrics)?;

    for r in out.rows.iter().filter(|r| matches!(r.metric.as_str(), "median_skr_bps" | "median_qber" | "skr_change_pct")) {
        println!("{:>16} {:<16} {:.4e}  [{:.4e}, {:.4e}]", r.controller, r.metric, r.value, r.ci_lo, r.ci_hi);
    }
    println!("wrote metrics for {} controllers x {} seeds to {}", kinds.len(), seeds.len(), c.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_specs() {
        assert_eq!(parse_seeds("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_seeds("3..=4").unwrap(), vec![3, 4]);
        assert_eq!(parse_seeds("7, 9").unwrap(), vec![7, 9]);
        assert!(parse_seeds("5..1").unwrap().is_empty());
        assert!(parse_seeds("x..2").is_err());
    }

    #[test]
    fn controller_lists() {
        assert_eq!(parse_controllers("static,ml,static").unwrap(), vec![ControllerKind::Static, ControllerKind::Ml]);
        assert!(parse_controllers("").is_err());
        assert!(parse_controllers("pid").is_err());
    }
}
