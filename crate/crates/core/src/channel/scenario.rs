use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Named scenarios understood by [`make_scenario`].
pub const SCENARIOS: &[&str] = &["nominal", "noise-sweep", "splice-3db", "sine-drift", "training-mix", "high-noise"];

/// Fraction of the noise-sweep depolarizing stress that is white noise. The
/// remainder shows up as a slow polarization-frame rotation (phase offset for
/// COW) which an aligned receiver can undo.
pub const SWEEP_INCOHERENT_SHARE: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    /// Extra fiber loss in dB from this block on.
    StepLossDb,
    /// Extra depolarizing probability from this block on.
    StepDepol,
    /// Extra background yield from this block on.
    StepDarkCounts,
    /// Single-block fractional visibility loss.
    VisibilityDip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseEvent {
    pub block: usize,
    pub kind: EventKind,
    pub magnitude: f64,
}

/// Bounded mean-reverting random walk for the inter-pulse phase drift:
/// `dphi(t+1) = (1 - reversion) dphi(t) + step * xi`, clipped to +-bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseDriftProcess {
    pub reversion: f64,
    pub step: f64,
    pub bound: f64,
}

impl Default for PhaseDriftProcess {
    fn default() -> Self {
        Self { reversion: 0.05, step: 0.05, bound: PI }
    }
}

impl PhaseDriftProcess {
    pub fn realize<R: Rng + ?Sized>(&self, blocks: usize, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(blocks);
        let mut phi = 0.0f64;
        for _ in 0..blocks {
            out.push(phi);
            let xi: f64 = StandardNormal.sample(rng);
            phi = ((1.0 - self.reversion) * phi + self.step * xi).clamp(-self.bound, self.bound);
        }
        out
    }
}

/// Per-block noise stressors of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub name: String,
    /// Depolarizing stress p(t).
    pub depol_p: Vec<f64>,
    /// Amplitude-damping parameter gamma(t).
    pub damp_gamma: Vec<f64>,
    /// Share of p(t) acting as white depolarizing noise. 1.0 means all of it.
    pub incoherent_share: f64,
    /// Polarization-frame rotation theta(t) in radians (doubled into a phase
    /// offset for COW).
    pub rotation: Vec<f64>,
    pub phase_process: PhaseDriftProcess,
    /// Realized phase drift dphi(t).
    pub phase_drift: Vec<f64>,
    pub events: Vec<NoiseEvent>,
}

impl NoiseSchedule {
    /// Quiet schedule of the given length.
    pub fn constant(name: &str, blocks: usize) -> Self {
        Self {
            name: name.to_string(),
            depol_p: vec![0.0; blocks],
            damp_gamma: vec![0.0; blocks],
            incoherent_share: 1.0,
            rotation: vec![0.0; blocks],
            phase_process: PhaseDriftProcess::default(),
            phase_drift: vec![0.0; blocks],
            events: Vec::new(),
        }
    }

    /// Explicit depolarizing series, everything else quiet.
    pub fn from_depol_series(name: &str, depol_p: Vec<f64>) -> Result<Self> {
        let mut s = Self::constant(name, depol_p.len());
        s.depol_p = depol_p;
        s.validate()?;
        Ok(s)
    }

    pub fn blocks(&self) -> usize {
        self.depol_p.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.blocks();
        if n == 0 {
            return Err(Error::param("schedule has no blocks"));
        }
        if [self.damp_gamma.len(), self.rotation.len(), self.phase_drift.len()].iter().any(|&l| l != n) {
            return Err(Error::param("schedule series lengths differ"));
        }
        if self.depol_p.iter().chain(&self.damp_gamma).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::param("depolarizing and damping values must lie in [0,1]"));
        }
        if !(0.0..=1.0).contains(&self.incoherent_share) {
            return Err(Error::param("incoherent share must lie in [0,1]"));
        }
        if self.events.windows(2).any(|w| w[0].block >= w[1].block) {
            return Err(Error::param("event block indices must be strictly increasing"));
        }
        Ok(())
    }

    /// Add an event, keeping the list ordered.
    pub fn with_event(mut self, event: NoiseEvent) -> Result<Self> {
        self.events.push(event);
        self.events.sort_by_key(|e| e.block);
        self.validate()?;
        Ok(self)
    }

    /// Block index of the first event of a kind.
    pub fn first_event(&self, kind: EventKind) -> Option<usize> {
        self.events.iter().find(|e| e.kind == kind).map(|e| e.block)
    }

    /// Cumulative effect of persistent events up to and including block `t`,
    /// plus any single-block dip at `t`.
    pub fn event_state(&self, t: usize) -> EventState {
        let mut st = EventState::default();
        for e in self.events.iter().take_while(|e| e.block <= t) {
            match e.kind {
                EventKind::StepLossDb => st.loss_db += e.magnitude,
                EventKind::StepDepol => st.depol += e.magnitude,
                EventKind::StepDarkCounts => st.dark += e.magnitude,
                EventKind::VisibilityDip if e.block == t => st.dip += e.magnitude,
                EventKind::VisibilityDip => {}
            }
        }
        st
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EventState {
    pub loss_db: f64,
    pub depol: f64,
    pub dark: f64,
    pub dip: f64,
}

/// Rotation that produces a `sin^2` error equal to the coherent part of a
/// depolarizing stress p.
pub fn coherent_rotation(p: f64, incoherent_share: f64) -> f64 {
    ((1.0 - incoherent_share) * p / 2.0).sqrt().asin()
}

fn sweep_levels(blocks: usize, levels: usize, max: f64) -> Vec<f64> {
    let per = blocks.div_ceil(levels).max(1);
    (0..blocks)
        .map(|t| {
            let k = (t / per).min(levels - 1);
            max * k as f64 / (levels - 1) as f64
        })
        .collect()
}

fn with_coherent_split(mut s: NoiseSchedule, share: f64) -> NoiseSchedule {
    s.incoherent_share = share;
    s.rotation = s.depol_p.iter().map(|&p| coherent_rotation(p, share)).collect();
    s
}

/// Build a reproducible named scenario of `blocks` blocks. `seed` drives the
/// phase-drift realization and any randomized segments.
pub fn make_scenario(name: &str, blocks: usize, seed: u64) -> Result<NoiseSchedule> {
    if blocks == 0 {
        return Err(Error::param("scenario needs at least one block"));
    }
    let mut s = match name {
        "nominal" => NoiseSchedule::constant(name, blocks),
        "noise-sweep" => {
            let mut s = NoiseSchedule::constant(name, blocks);
            s.depol_p = sweep_levels(blocks, 6, 0.5);
            with_coherent_split(s, SWEEP_INCOHERENT_SHARE)
        }
        "splice-3db" => NoiseSchedule::constant(name, blocks).with_event(NoiseEvent {
            block: blocks / 2,
            kind: EventKind::StepLossDb,
            magnitude: 3.0,
        })?,
        "sine-drift" => {
            let mut s = NoiseSchedule::constant(name, blocks);
            s.depol_p = (0..blocks)
                .map(|t| 0.15 + 0.1 * (2.0 * PI * t as f64 / 50.0).sin())
                .collect();
            s
        }
        "high-noise" => {
            let mut s = NoiseSchedule::constant(name, blocks);
            s.depol_p = vec![0.4; blocks];
            s
        }
        "training-mix" => training_mix(blocks, seed)?,
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    s.phase_drift = s.phase_process.realize(blocks, &mut rng::stream(seed, "phase-drift"));
    s.validate()?;
    Ok(s)
}

/// Piecewise-constant random stress levels with the sweep's coherent split,
/// an occasional loss step and a slowly wandering frame rotation on top.
fn training_mix(blocks: usize, seed: u64) -> Result<NoiseSchedule> {
    let mut r = rng::stream(seed, "training-mix");
    let mut s = NoiseSchedule::constant("training-mix", blocks);
    let mut t = 0;
    while t < blocks {
        let len = r.random_range(20..80).min(blocks - t);
        let level: f64 = if r.random_bool(0.2) { 0.0 } else { r.random_range(0.0..0.5) };
        s.depol_p[t..t + len].fill(level);
        t += len;
    }
    let mut s = with_coherent_split(s, SWEEP_INCOHERENT_SHARE);
    let mut wander = 0.0f64;
    for th in s.rotation.iter_mut() {
        let xi: f64 = StandardNormal.sample(&mut r);
        wander = (0.98 * wander + 0.01 * xi).clamp(-0.3, 0.3);
        *th += wander;
    }
    if blocks > 40 && r.random_bool(0.5) {
        let block = r.random_range(blocks / 4..3 * blocks / 4);
        let magnitude = r.random_range(0.5..3.0);
        s = s.with_event(NoiseEvent { block, kind: EventKind::StepLossDb, magnitude })?;
    }
    Ok(s)
}
