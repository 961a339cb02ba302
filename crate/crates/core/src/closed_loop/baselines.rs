use super::{Controller, ControllerKind, Feedback};
use crate::channel::{ControlState, Telemetry};
use crate::error::Result;

/// Holds the nominal calibration forever.
#[derive(Debug, Clone, Copy, Default)]
pub struct StaticController {
    nominal: Option<ControlState>,
}

impl StaticController {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Controller for StaticController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Static
    }

    fn begin(&mut self, nominal: &ControlState) -> Result<()> {
        self.nominal = Some(*nominal);
        Ok(())
    }

    fn decide(&mut self, _t: usize, _last: Option<&Telemetry>, current: &ControlState) -> Result<ControlState> {
        Ok(self.nominal.unwrap_or(*current))
    }

    fn feedback(&mut self, _fb: &Feedback) -> Result<()> {
        Ok(())
    }
}

/// Periodic recalibration: at the start of every period the signal intensity
/// is swept over a grid, one block per point, and the point with the best
/// measured key rate is kept until the next sweep.
#[derive(Debug, Clone)]
pub struct RecalibController {
    pub period: usize,
    pub grid: Vec<f64>,
    nominal: Option<ControlState>,
    best: Option<ControlState>,
    scan: Vec<(ControlState, f64)>,
    probing: bool,
}

impl RecalibController {
    pub fn new(period: usize, grid: Vec<f64>) -> Self {
        Self { period, grid, nominal: None, best: None, scan: Vec::new(), probing: false }
    }

    fn held(&self, current: &ControlState) -> ControlState {
        self.best.or(self.nominal).unwrap_or(*current)
    }
}

impl Controller for RecalibController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Recalib
    }

    fn begin(&mut self, nominal: &ControlState) -> Result<()> {
        self.nominal = Some(*nominal);
        self.best = None;
        self.scan.clear();
        Ok(())
    }

    fn decide(&mut self, t: usize, _last: Option<&Telemetry>, current: &ControlState) -> Result<ControlState> {
        let phase = t % self.period;
        let held = self.held(current);
        self.probing = phase < self.grid.len();
        if phase == 0 {
            self.scan.clear();
        }
        if self.probing {
            return Ok(ControlState { mu_s: self.grid[phase], ..held });
        }
        Ok(held)
    }

    fn feedback(&mut self, fb: &Feedback) -> Result<()> {
        if fb.telemetry.aborted {
            self.best = self.nominal;
        }
        if !self.probing {
            return Ok(());
        }
        self.scan.push((fb.control, fb.skr_bps));
        if self.scan.len() == self.grid.len() {
            let mut best = self.scan[0];
            for &(c, s) in &self.scan[1..] {
                if s > best.1 {
                    best = (c, s);
                }
            }
            self.best = Some(best.0);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_loop::{run_episode, LoopEnv};
    use crate::channel::make_scenario;
    use crate::config::WorkbenchConfig;

    #[test]
    fn recalib_picks_argmax_and_holds() {
        let env = LoopEnv::from_config(&WorkbenchConfig::default()).unwrap();
        let mut ctl = RecalibController::new(15, vec![0.3, 0.4, 0.5, 0.6, 0.7]);
        let log = run_episode(&env, make_scenario("nominal", 200, 1).unwrap(), 1, &mut ctl).unwrap();
        for start in (0..195).step_by(15) {
            let probes = &log.records[start..start + 5];
            let mus: Vec<f64> = probes.iter().map(|r| r.control.mu_s).collect();
            assert_eq!(mus, vec![0.3, 0.4, 0.5, 0.6, 0.7]);
            let best = probes.iter().max_by(|a, b| a.skr_bps.total_cmp(&b.skr_bps)).unwrap().control;
            for r in log.records.iter().skip(start + 5).take(10) {
                assert_eq!(r.control, best);
            }
        }
    }

    #[test]
    fn recalib_changes_only_at_scans_after_splice() {
        let env = LoopEnv::from_config(&WorkbenchConfig::default()).unwrap();
        let mut ctl = RecalibController::new(15, vec![0.3, 0.4, 0.5, 0.6, 0.7]);
        let log = run_episode(&env, make_scenario("splice-3db", 310, 1).unwrap(), 1, &mut ctl).unwrap();
        let event = 155;
        let changed = (event..log.records.len()).find(|&t| log.records[t].control != log.records[t - 1].control).unwrap();
        assert_eq!(changed % 15, 0);
        assert!(changed >= event);
    }
}
