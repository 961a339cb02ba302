use std::io::Write;

use rand::Rng;

use super::{ControllerKind, EpisodeLog, LoopConfig};
use crate::error::{Error, Result};
use crate::io::{sig10, write_table};
use crate::rng::stream;
use crate::stats::{bootstrap_mean_ci, median};

pub const METRICS_CSV_HEADER: &str = "controller,scenario,metric,value,ci_lo,ci_hi";
pub const SEED_METRICS_CSV_HEADER: &str = "controller,scenario,seed,metric,value";

/// Blocks after `event` until the rate is back to `fraction` of the median
/// over the `window` blocks before it, for `run` blocks in a row. `None`
/// when that never happens inside the series.
pub fn adaptation_time(skr: &[f64], event: usize, window: usize, fraction: f64, run: usize) -> Result<Option<usize>> {
    if event >= skr.len() {
        return Err(Error::param(format!("event block {event} outside a log of {} blocks", skr.len())));
    }
    if event < window || window == 0 {
        return Err(Error::InsufficientData(format!("{event} blocks before the event, need {window}")));
    }
    let level = fraction * median(&skr[event - window..event]).unwrap_or(0.0);
    let run = run.max(1);
    Ok((event..skr.len())
        .find(|&t| t + run <= skr.len() && skr[t..t + run].iter().all(|&v| v >= level))
        .map(|t| t - event))
}

/// Per-seed summary of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedMetrics {
    pub controller: ControllerKind,
    pub scenario: String,
    pub seed: u64,
    pub median_skr_bps: f64,
    pub median_qber: f64,
    pub abort_count: usize,
    /// `Some(None)` when the run had an event but never recovered.
    pub adaptation_blocks: Option<Option<usize>>,
    /// Blocks after the event, the value reported for runs that never recover.
    pub censor_blocks: usize,
    pub total_secret_bits: f64,
}

impl SeedMetrics {
    /// Adaptation time with unrecovered runs censored at the log end.
    pub fn adaptation_or_censored(&self) -> Option<usize> {
        self.adaptation_blocks.map(|a| a.unwrap_or(self.censor_blocks))
    }

    fn values(&self, cfg: &LoopConfig) -> Vec<(&'static str, f64)> {
        let mut v = vec![
            ("median_skr_bps", self.median_skr_bps),
            ("median_qber", self.median_qber),
            ("abort_count", self.abort_count as f64),
            ("total_secret_bits", self.total_secret_bits),
        ];
        if let Some(a) = self.adaptation_or_censored() {
            v.push(("adaptation_blocks", a as f64));
            v.push(("adaptation_seconds", a as f64 * cfg.block_seconds));
            v.push(("recovered", if matches!(self.adaptation_blocks, Some(Some(_))) { 1.0 } else { 0.0 }));
        }
        v
    }
}

pub fn seed_metrics(log: &EpisodeLog, cfg: &LoopConfig, event: Option<usize>) -> Result<SeedMetrics> {
    let skr = log.skr();
    let qber = log.qber();
    let from = cfg.warmup_blocks.min(skr.len().saturating_sub(1));
    let adaptation = match event {
        Some(e) => Some(adaptation_time(&skr, e, cfg.pre_event_window, cfg.recovery_fraction, cfg.recovery_run)?),
        None => None,
    };
    Ok(SeedMetrics {
        controller: log.controller,
        scenario: log.scenario.clone(),
        seed: log.seed,
        median_skr_bps: median(&skr[from..]).unwrap_or(0.0),
        median_qber: median(&qber[from..]).unwrap_or(0.0),
        abort_count: log.abort_count(),
        adaptation_blocks: adaptation,
        censor_blocks: event.map_or(0, |e| skr.len() - e),
        total_secret_bits: log.total_secret_bits(cfg.block_seconds),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub controller: String,
    pub scenario: String,
    pub metric: String,
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl MetricRow {
    pub fn csv_cells(&self) -> Vec<String> {
        vec![
            self.controller.clone(),
            self.scenario.clone(),
            self.metric.clone(),
            sig10(self.value),
            sig10(self.ci_lo),
            sig10(self.ci_hi),
        ]
    }
}

/// Relative change `(a / b - 1) * 100` of paired seed means with a
/// percentile bootstrap over seeds. A zero baseline gives an infinite (or
/// undefined) change and a degenerate interval.
fn paired_change<R: Rng + ?Sized>(a: &[f64], b: &[f64], resamples: usize, conf: f64, rng: &mut R) -> (f64, f64, f64) {
    let change = |sa: f64, sb: f64| {
        if sb == 0.0 {
            if sa == 0.0 {
                f64::NAN
            } else {
                f64::INFINITY.copysign(sa)
            }
        } else {
            (sa / sb - 1.0) * 100.0
        }
    };
    let point = change(a.iter().sum(), b.iter().sum());
    if !point.is_finite() {
        return (point, point, point);
    }
    let n = a.len();
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let (mut sa, mut sb) = (0.0, 0.0);
            for _ in 0..n {
                let i = rng.random_range(0..n);
                sa += a[i];
                sb += b[i];
            }
            change(sa, sb)
        })
        .filter(|v| v.is_finite())
        .collect();
    if stats.is_empty() {
        return (point, point, point);
    }
    stats.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (stats.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        stats[lo] + (stats[hi] - stats[lo]) * (pos - lo as f64)
    };
    let alpha = (1.0 - conf) / 2.0;
    (point, q(alpha).min(point), q(1.0 - alpha).max(point))
}

/// Aggregate per-seed metrics into a table. Each controller gets the seed
/// mean of every metric with a bootstrap interval; every controller other
/// than a baseline is also compared against each baseline present.
pub fn compare(runs: &[Vec<SeedMetrics>], cfg: &LoopConfig) -> Result<Vec<MetricRow>> {
    if runs.len() < 2 {
        return Err(Error::InsufficientData("comparison needs at least two controllers".into()));
    }
    let key = |m: &[SeedMetrics]| -> Vec<(String, u64)> { m.iter().map(|s| (s.scenario.clone(), s.seed)).collect() };
    let reference = key(&runs[0]);
    if reference.is_empty() {
        return Err(Error::InsufficientData("no runs to compare".into()));
    }
    for r in runs {
        if key(r) != reference {
            return Err(Error::Config("controllers were run on different scenarios or seeds".into()));
        }
        if r.iter().any(|s| s.controller != r[0].controller) {
            return Err(Error::Config("a run list mixes controllers".into()));
        }
    }
    let scenario = runs[0][0].scenario.clone();
    if reference.iter().any(|(s, _)| *s != scenario) {
        return Err(Error::Config("one comparison covers one scenario".into()));
    }
    let mut rows = Vec::new();
    for r in runs {
        let ctl = r[0].controller;
        let names: Vec<&str> = r[0].values(cfg).iter().map(|v| v.0).collect();
        for name in names {
            let vals: Vec<f64> = r.iter().map(|s| s.values(cfg).into_iter().find(|v| v.0 == name).map_or(0.0, |v| v.1)).collect();
            let mut rng = stream(0, &format!("bootstrap/{ctl}/{scenario}/{name}"));
            let ci = bootstrap_mean_ci(&vals, cfg.bootstrap_resamples, cfg.ci_level, &mut rng)?;
            rows.push(MetricRow {
                controller: ctl.to_string(),
                scenario: scenario.clone(),
                metric: name.to_string(),
                value: ci.point,
                ci_lo: ci.lo,
                ci_hi: ci.hi,
            });
        }
    }
    for base in runs.iter().filter(|r| matches!(r[0].controller, ControllerKind::Static | ControllerKind::Recalib)) {
        let bk = base[0].controller;
        for r in runs.iter().filter(|r| r[0].controller != bk) {
            let ctl = r[0].controller;
            let mut pairs: Vec<(&str, Vec<f64>, Vec<f64>)> = vec![
                ("skr_change_pct", r.iter().map(|s| s.median_skr_bps).collect(), base.iter().map(|s| s.median_skr_bps).collect()),
                ("qber_change_pct", r.iter().map(|s| s.median_qber).collect(), base.iter().map(|s| s.median_qber).collect()),
            ];
            let ad: Option<Vec<f64>> = r.iter().map(|s| s.adaptation_or_censored().map(|v| v as f64)).collect();
            let bd: Option<Vec<f64>> = base.iter().map(|s| s.adaptation_or_censored().map(|v| v as f64)).collect();
            if let (Some(a), Some(b)) = (ad, bd) {
                pairs.push(("adaptation_change_pct", a, b));
            }
            for (name, a, b) in pairs {
                let mut rng = stream(0, &format!("bootstrap/{ctl}-vs-{bk}/{scenario}/{name}"));
                let (v, lo, hi) = paired_change(&a, &b, cfg.bootstrap_resamples, cfg.ci_level, &mut rng);
                rows.push(MetricRow {
                    controller: format!("{ctl}_vs_{bk}"),
                    scenario: scenario.clone(),
                    metric: name.to_string(),
                    value: v,
                    ci_lo: lo,
                    ci_hi: hi,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_metrics_csv<W: Write>(w: W, rows: &[MetricRow]) -> Result<()> {
    write_table(w, METRICS_CSV_HEADER, rows.iter().map(MetricRow::csv_cells))
}

pub fn write_seed_metrics_csv<W: Write>(w: W, cfg: &LoopConfig, metrics: &[SeedMetrics]) -> Result<()> {
    let rows = metrics.iter().flat_map(|m| {
        m.values(cfg).into_iter().map(move |(name, v)| {
            vec![m.controller.to_string(), m.scenario.clone(), m.seed.to_string(), name.to_string(), sig10(v)]
        })
    });
    write_table(w, SEED_METRICS_CSV_HEADER, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptation_examples() {
        let mut skr = vec![100.0; 50];
        skr.push(50.0);
        skr.extend([60.0, 70.0, 96.0, 97.0, 98.0, 99.0]);
        assert_eq!(adaptation_time(&skr, 50, 50, 0.95, 3).unwrap(), Some(3));

        let mut never = vec![100.0; 50];
        never.extend([50.0; 20]);
        assert_eq!(adaptation_time(&never, 50, 50, 0.95, 3).unwrap(), None);

        let mut osc = vec![100.0; 50];
        osc.extend([40.0, 96.0, 80.0, 96.0, 96.0, 96.0]);
        assert_eq!(adaptation_time(&osc, 50, 50, 0.95, 3).unwrap(), Some(3));

        assert!(adaptation_time(&skr, 20, 50, 0.95, 3).is_err());
        assert!(adaptation_time(&skr, 500, 50, 0.95, 3).is_err());
    }

    fn seed(ctl: ControllerKind, seed: u64, skr: f64, qber: f64) -> SeedMetrics {
        SeedMetrics {
            controller: ctl,
            scenario: "noise-sweep".into(),
            seed,
            median_skr_bps: skr,
            median_qber: qber,
            abort_count: 0,
            adaptation_blocks: None,
            censor_blocks: 0,
            total_secret_bits: skr * 100.0,
        }
    }

    #[test]
    fn self_comparison_is_zero() {
        let cfg = LoopConfig { bootstrap_resamples: 2000, ..Default::default() };
        let a: Vec<_> = (1..=5).map(|s| seed(ControllerKind::Static, s, 100.0 + s as f64, 0.03)).collect();
        let mut b = a.clone();
        b.iter_mut().for_each(|m| m.controller = ControllerKind::Ml);
        let rows = compare(&[b, a], &cfg).unwrap();
        let gain = rows.iter().find(|r| r.metric == "skr_change_pct").unwrap();
        assert_eq!(gain.controller, "ml_vs_static");
        assert_eq!((gain.value, gain.ci_lo, gain.ci_hi), (0.0, 0.0, 0.0));
        for r in &rows {
            assert!(r.ci_lo <= r.value && r.value <= r.ci_hi, "{r:?}");
        }
    }

    #[test]
    fn improvement_is_relative_median_change() {
        let cfg = LoopConfig { bootstrap_resamples: 500, ..Default::default() };
        let st: Vec<_> = (1..=5).map(|s| seed(ControllerKind::Static, s, 200.0, 0.03)).collect();
        let ml: Vec<_> = (1..=5).map(|s| seed(ControllerKind::Ml, s, 250.0, 0.015)).collect();
        let rows = compare(&[ml, st], &cfg).unwrap();
        let get = |m: &str| rows.iter().find(|r| r.metric == m && r.controller == "ml_vs_static").unwrap().value;
        assert!((get("skr_change_pct") - 25.0).abs() < 1e-12);
        assert!((get("qber_change_pct") + 50.0).abs() < 1e-12);
        let med = rows.iter().find(|r| r.controller == "static" && r.metric == "median_skr_bps").unwrap();
        assert_eq!((med.value, med.ci_lo, med.ci_hi), (200.0, 200.0, 200.0));
    }

    #[test]
    fn mismatched_runs_are_rejected() {
        let cfg = LoopConfig::default();
        let a: Vec<_> = (1..=3).map(|s| seed(ControllerKind::Static, s, 1.0, 0.0)).collect();
        let b: Vec<_> = (2..=4).map(|s| seed(ControllerKind::Ml, s, 1.0, 0.0)).collect();
        assert!(compare(&[a.clone(), b], &cfg).is_err());
        assert!(compare(&[a], &cfg).is_err());
    }

    #[test]
    fn zero_baseline_gives_infinite_gain() {
        let (v, lo, hi) = paired_change(&[1.0, 2.0], &[0.0, 0.0], 100, 0.95, &mut stream(1, "x"));
        assert!(v.is_infinite() && lo == v && hi == v);
    }
}
