//! Analytic gain, error-rate, decoy-bound and secure-key-rate models for
//! decoy-state BB84, E91 and COW.
//!
//! Everything in here is a pure function of its arguments. Rates are per
//! emitted pulse unless a name says otherwise; throughput in bits/s is the
//! per-pulse rate times the source clock.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest photon number kept in the Poisson expansion. For mu <= 1 the
/// discarded tail is below 1e-30.
pub const PHOTON_CUTOFF: usize = 50;

/// Fiber and detector constants of one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkParams {
    pub alpha_db_per_km: f64,
    pub distance_km: f64,
    pub eta_det: f64,
    /// Background (dark-count) yield per pulse.
    pub y0: f64,
    /// Intrinsic alignment error probability.
    pub e_d: f64,
    /// Error probability of a background click.
    pub e0: f64,
    /// Source clock, Hz.
    pub f_rep: f64,
    /// Static preparation misalignment, radians.
    pub theta: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            alpha_db_per_km: 0.2,
            distance_km: 25.0,
            eta_det: 0.2,
            y0: 5e-6,
            e_d: 0.015,
            e0: 0.5,
            f_rep: 250e6,
            theta: 0.0,
        }
    }
}

impl LinkParams {
    pub fn at_distance(mut self, distance_km: f64) -> Self {
        self.distance_km = distance_km;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha_db_per_km >= 0.0
            && self.distance_km >= 0.0
            && self.eta_det > 0.0
            && self.eta_det <= 1.0
            && (0.0..1.0).contains(&self.y0)
            && (0.0..=0.5).contains(&self.e_d)
            && (0.0..=1.0).contains(&self.e0)
            && self.f_rep > 0.0
            && self.theta.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("link parameters out of range: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    #[serde(rename = "bb84")]
    Bb84Decoy,
    E91,
    Cow,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 3] = [ProtocolKind::Bb84Decoy, ProtocolKind::E91, ProtocolKind::Cow];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Bb84Decoy => "bb84",
            ProtocolKind::E91 => "e91",
            ProtocolKind::Cow => "cow",
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bb84" | "bb84decoy" | "bb84-decoy" => Ok(ProtocolKind::Bb84Decoy),
            "e91" => Ok(ProtocolKind::E91),
            "cow" => Ok(ProtocolKind::Cow),
            other => Err(Error::param(format!("unknown protocol '{other}' (expected bb84, e91 or cow)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bb84Params {
    pub mu_s: f64,
    pub mu_w: f64,
    pub p_s: f64,
}

impl Default for Bb84Params {
    fn default() -> Self {
        Self { mu_s: 0.5, mu_w: 0.1, p_s: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct E91Params {
    /// Two-photon visibility of the source with no added channel noise.
    pub v_source: f64,
}

impl Default for E91Params {
    fn default() -> Self {
        Self { v_source: 0.97 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CowParams {
    /// Mean photon number per signal bin, |alpha|^2.
    pub alpha_sq: f64,
    pub monitor_fraction: f64,
}

impl Default for CowParams {
    fn default() -> Self {
        Self { alpha_sq: 0.5, monitor_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteKeyParams {
    /// Post-processing block size in pulses.
    pub n_block: f64,
    pub epsilon: f64,
}

impl Default for FiniteKeyParams {
    fn default() -> Self {
        Self { n_block: 1e10, epsilon: 1e-10 }
    }
}

/// Protocol selection plus every protocol's parameter set and the shared
/// sifting / reconciliation / finite-key settings. `kind` picks which
/// parameter set is live.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub kind: ProtocolKind,
    /// Sifting factor.
    pub q: f64,
    /// Error-correction inefficiency f(E), taken as constant.
    pub f_ec: f64,
    pub bb84: Bb84Params,
    pub e91: E91Params,
    pub cow: CowParams,
    pub finite_key: FiniteKeyParams,
}

impl ProtocolConfig {
    pub fn new(kind: ProtocolKind) -> Self {
        let cow = CowParams::default();
        let q = match kind {
            ProtocolKind::Bb84Decoy | ProtocolKind::E91 => 0.5,
            ProtocolKind::Cow => 0.9 * (1.0 - cow.monitor_fraction),
        };
        Self {
            kind,
            q,
            f_ec: 1.16,
            bb84: Bb84Params::default(),
            e91: E91Params::default(),
            cow,
            finite_key: FiniteKeyParams::default(),
        }
    }

    pub fn bb84() -> Self {
        Self::new(ProtocolKind::Bb84Decoy)
    }

    pub fn e91() -> Self {
        Self::new(ProtocolKind::E91)
    }

    pub fn cow() -> Self {
        Self::new(ProtocolKind::Cow)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bb84;
        let checks = [
            (self.q > 0.0 && self.q <= 1.0, "0 < q <= 1"),
            (self.f_ec >= 1.0, "f_ec >= 1"),
            (b.mu_w > 0.0 && b.mu_w < b.mu_s, "0 < mu_w < mu_s"),
            (b.p_s > 0.0 && b.p_s < 1.0, "0 < p_s < 1"),
            (self.e91.v_source > 0.0 && self.e91.v_source <= 1.0, "0 < v_source <= 1"),
            (self.cow.alpha_sq > 0.0, "alpha_sq > 0"),
            ((0.0..1.0).contains(&self.cow.monitor_fraction), "0 <= monitor_fraction < 1"),
            (self.finite_key.n_block >= 1.0, "n_block >= 1"),
            (self.finite_key.epsilon > 0.0 && self.finite_key.epsilon < 1.0, "0 < epsilon < 1"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, what)) => Err(Error::param(format!("protocol config violates {what}"))),
            None => Ok(()),
        }
    }
}

/// Gains and error rates of a weak-coherent source at one intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainStats {
    pub q_mu: f64,
    pub e_mu: f64,
    pub q1: f64,
    pub e1: f64,
    pub y1: f64,
}

/// Observed (gain, QBER) pair at one intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub gain: f64,
    pub qber: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoyBounds {
    pub y1_lower: f64,
    pub q1_lower: f64,
    pub e1_upper: f64,
}

/// Single-photon gain and error used in the privacy-amplification term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinglePhoton {
    pub q1: f64,
    pub e1: f64,
}

impl From<DecoyBounds> for SinglePhoton {
    fn from(b: DecoyBounds) -> Self {
        Self { q1: b.q1_lower, e1: b.e1_upper }
    }
}

impl From<GainStats> for SinglePhoton {
    fn from(g: GainStats) -> Self {
        Self { q1: g.q1, e1: g.e1 }
    }
}

/// Signed pieces of the rate before clamping. `raw = q * (pa_term - ec_leak)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RateComponents {
    pub ec_leak: f64,
    pub pa_term: f64,
    pub raw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KeyRateReport {
    pub r_per_pulse: f64,
    pub r_bps: f64,
    pub r_finite: f64,
    pub components: RateComponents,
}

impl KeyRateReport {
    fn from_components(q: f64, ec_leak: f64, pa_term: f64, cfg: &ProtocolConfig, f_rep: f64) -> Self {
        let raw = q * (pa_term - ec_leak);
        Self::from_raw(raw, RateComponents { ec_leak, pa_term, raw }, cfg, f_rep)
    }

    fn from_raw(raw: f64, components: RateComponents, cfg: &ProtocolConfig, f_rep: f64) -> Self {
        let r = if raw.is_finite() { raw.max(0.0) } else { 0.0 };
        let r_finite = (r - finite_key_penalty(cfg.finite_key.n_block, cfg.finite_key.epsilon)).max(0.0);
        Self { r_per_pulse: r, r_bps: r * f_rep, r_finite, components }
    }

    /// Scale every per-pulse quantity, e.g. by a detection probability.
    /// The finite-key correction is re-applied after scaling.
    pub fn scaled(&self, factor: f64, cfg: &ProtocolConfig, f_rep: f64) -> Self {
        let c = self.components;
        let raw = c.raw * factor;
        Self::from_raw(
            raw,
            RateComponents { ec_leak: c.ec_leak * factor, pa_term: c.pa_term * factor, raw },
            cfg,
            f_rep,
        )
    }

    pub fn r_finite_bps(&self, f_rep: f64) -> f64 {
        self.r_finite * f_rep
    }
}

/// Binary Shannon entropy in bits, with 0 log 0 = 0.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain { what: "binary_entropy", value: x });
    }
    Ok(h2(x))
}

/// Binary entropy for arguments already known to lie in [0,1]; out-of-range
/// inputs are clamped.
pub(crate) fn h2(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 || x.is_nan() {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// Overall intensity transmittance, fiber times detector.
pub fn transmittance(link: &LinkParams) -> f64 {
    10f64.powf(-link.alpha_db_per_km * link.distance_km / 10.0) * link.eta_det
}

/// Gain and QBER of a Poisson source by explicit photon-number summation,
/// with yields `Y_n = Y0 + 1 - (1-eta)^n` and per-photon-number error
/// weights `e0*Y0 + e_d*(1 - (1-eta)^n)`.
pub fn poisson_gain(eta: f64, mu: f64, y0: f64, e_d: f64, e0: f64) -> (f64, f64) {
    let mut pmf = (-mu).exp();
    let mut loss_pow = 1.0;
    let mut q = 0.0;
    let mut eq = 0.0;
    for n in 0..=PHOTON_CUTOFF {
        if n > 0 {
            pmf *= mu / n as f64;
            loss_pow *= 1.0 - eta;
        }
        let clicked = 1.0 - loss_pow;
        q += (y0 + clicked) * pmf;
        eq += (e0 * y0 + e_d * clicked) * pmf;
    }
    let e = if q > 0.0 { (eq / q).clamp(0.0, 1.0) } else { 0.5 };
    (q.clamp(0.0, 1.0), e)
}

/// Closed-form approximation `Q = Y0 + 1 - exp(-eta*mu)` and the matching QBER.
pub fn closed_form_gain(eta: f64, mu: f64, y0: f64, e_d: f64, e0: f64) -> (f64, f64) {
    let clicked = -(-eta * mu).exp_m1();
    let q = y0 + clicked;
    let e = if q > 0.0 { (e0 * y0 + e_d * clicked) / q } else { 0.5 };
    (q.min(1.0), e)
}

pub fn bb84_model_gains(link: &LinkParams, mu: f64) -> Result<GainStats> {
    if !(mu > 0.0) {
        return Err(Error::param(format!("intensity mu must be positive, got {mu}")));
    }
    let eta = transmittance(link);
    Ok(gain_stats(eta, mu, link.y0, link.e_d, link.e0))
}

pub(crate) fn gain_stats(eta: f64, mu: f64, y0: f64, e_d: f64, e0: f64) -> GainStats {
    if eta == 0.0 && y0 == 0.0 {
        return GainStats { q_mu: 0.0, e_mu: 0.5, q1: 0.0, e1: 0.5, y1: 0.0 };
    }
    let (q_mu, e_mu) = poisson_gain(eta, mu, y0, e_d, e0);
    let single = mu * (-mu).exp();
    let y1 = (y0 + eta).min(1.0);
    let q1 = y1 * single;
    let e1 = if q1 > 0.0 { ((e0 * y0 + e_d * eta * single) / q1).clamp(0.0, 1.0) } else { 0.5 };
    GainStats { q_mu, e_mu, q1, e1, y1 }
}

/// Two-intensity (signal + weak decoy, known vacuum yield) bounds on the
/// single-photon yield and error rate.
pub fn decoy_bounds(
    obs_s: Observation,
    obs_w: Observation,
    cfg: &ProtocolConfig,
    y0: f64,
    e0: f64,
) -> Result<DecoyBounds> {
    let (mu_s, mu_w) = (cfg.bb84.mu_s, cfg.bb84.mu_w);
    if !(mu_w > 0.0 && mu_w < mu_s) {
        return Err(Error::param(format!("decoy needs 0 < mu_w < mu_s, got {mu_w} / {mu_s}")));
    }
    for o in [obs_s, obs_w] {
        if !(o.gain > 0.0 && o.gain < 1.0) || !(0.0..=1.0).contains(&o.qber) {
            return Err(Error::param(format!("observation out of range: {o:?}")));
        }
    }
    let ratio = mu_w * mu_w / (mu_s * mu_s);
    let y1 = (mu_s / (mu_s * mu_w - mu_w * mu_w))
        * (obs_w.gain * mu_w.exp()
            - obs_s.gain * mu_s.exp() * ratio
            - ((mu_s * mu_s - mu_w * mu_w) / (mu_s * mu_s)) * y0);
    let y1_lower = y1.min(1.0);
    if !(y1_lower > 0.0) {
        return Err(Error::BoundInfeasible { y1_lower });
    }
    let e1_upper = ((obs_w.qber * obs_w.gain * mu_w.exp() - e0 * y0) / (y1_lower * mu_w)).clamp(0.0, 0.5);
    Ok(DecoyBounds { y1_lower, q1_lower: y1_lower * mu_s * (-mu_s).exp(), e1_upper })
}

/// GLLP / Devetak-Winter rate per emitted pulse.
pub fn bb84_key_rate(
    single: impl Into<SinglePhoton>,
    q_mu: f64,
    e_mu: f64,
    cfg: &ProtocolConfig,
    f_rep: f64,
) -> KeyRateReport {
    bb84_key_rate_sifted(single, q_mu, e_mu, cfg.q, cfg, f_rep)
}

pub(crate) fn bb84_key_rate_sifted(
    single: impl Into<SinglePhoton>,
    q_mu: f64,
    e_mu: f64,
    q: f64,
    cfg: &ProtocolConfig,
    f_rep: f64,
) -> KeyRateReport {
    let s = single.into();
    let ec_leak = q_mu * cfg.f_ec * h2(e_mu);
    let pa_term = s.q1 * (1.0 - h2(s.e1));
    KeyRateReport::from_components(q, ec_leak, pa_term, cfg, f_rep)
}

/// Sifted-key approximation `q * Q * (1 - 2 H2(E))`.
pub fn bb84_sifted_rate(q_mu: f64, e_mu: f64, cfg: &ProtocolConfig, f_rep: f64) -> KeyRateReport {
    let h = h2(e_mu);
    KeyRateReport::from_components(cfg.q, q_mu * h, q_mu * (1.0 - h), cfg, f_rep)
}

/// CHSH value and QBER of a visibility-`v` two-photon state.
pub fn e91_quantities(v: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain { what: "visibility", value: v });
    }
    Ok((2.0 * SQRT_2 * v, (1.0 - v) / 2.0))
}

/// Eve's Holevo information bound as a function of the CHSH value.
pub fn e91_holevo_term(s: f64) -> f64 {
    let x = ((s / 2.0).powi(2) - 1.0).max(0.0).sqrt();
    h2((1.0 + x) / 2.0)
}

/// Per detected pair. Multiply by the pair detection probability for a
/// per-pulse figure (see [`link_key_rate`]).
pub fn e91_key_rate(s: f64, qber: f64, cfg: &ProtocolConfig, f_rep: f64) -> Result<KeyRateReport> {
    if !(0.0..=0.5).contains(&qber) {
        return Err(Error::Domain { what: "E91 QBER", value: qber });
    }
    if !(0.0..=2.0 * SQRT_2 + 1e-12).contains(&s) {
        return Err(Error::Domain { what: "CHSH value", value: s });
    }
    let ec_leak = cfg.f_ec * h2(qber);
    let pa_term = 1.0 - e91_holevo_term(s);
    Ok(KeyRateReport::from_components(cfg.q, ec_leak, pa_term, cfg, f_rep))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CowCoherence {
    pub visibility: f64,
    pub e_ph: f64,
}

/// Monitor-line visibility under inter-pulse phase drift `dphi`.
pub fn cow_visibility(alpha_sq: f64, dphi: f64) -> Result<CowCoherence> {
    if !(alpha_sq >= 0.0) {
        return Err(Error::Domain { what: "mean photon number", value: alpha_sq });
    }
    let visibility = (-2.0 * alpha_sq * (1.0 - dphi.cos())).exp();
    Ok(CowCoherence { visibility, e_ph: (1.0 - visibility) / 2.0 })
}

/// Per emitted signal bin.
pub fn cow_key_rate(q_mu: f64, e_mu: f64, e_ph: f64, cfg: &ProtocolConfig, f_rep: f64) -> Result<KeyRateReport> {
    for (what, v) in [("COW gain", q_mu), ("COW QBER", e_mu), ("COW phase error", e_ph)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain { what, value: v });
        }
    }
    let ec_leak = q_mu * cfg.f_ec * h2(e_mu);
    let pa_term = q_mu * (1.0 - h2(e_ph));
    Ok(KeyRateReport::from_components(cfg.q, ec_leak, pa_term, cfg, f_rep))
}

/// `7 sqrt(log2(2/eps)/N) + (2/N) log2(1/eps)`.
pub fn finite_key_penalty(n: f64, eps: f64) -> f64 {
    7.0 * ((2.0 / eps).log2() / n).sqrt() + (2.0 / n) * (1.0 / eps).log2()
}

pub fn finite_key_rate(r_asym: f64, n: f64, eps: f64) -> Result<f64> {
    if !(n >= 1.0) {
        return Err(Error::param(format!("finite-key block size must be >= 1, got {n}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::param(format!("security parameter must be in (0,1), got {eps}")));
    }
    if n.is_infinite() {
        return Ok(r_asym.max(0.0));
    }
    Ok((r_asym - finite_key_penalty(n, eps)).max(0.0))
}

/// Physical channel seen by the source in one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelState {
    /// Overall transmittance including detector.
    pub eta: f64,
    pub y0: f64,
    pub e0: f64,
    /// Error probability of a detected signal photon (alignment + noise).
    pub e_d: f64,
    /// Interference visibility: two-photon visibility for E91, monitor-line
    /// visibility for COW. Unused for BB84.
    pub visibility: f64,
}

impl ChannelState {
    /// Noise-free channel of a link at the protocol's nominal settings.
    pub fn nominal(link: &LinkParams, cfg: &ProtocolConfig) -> Self {
        let visibility = match cfg.kind {
            ProtocolKind::E91 => cfg.e91.v_source,
            _ => 1.0,
        };
        Self { eta: transmittance(link), y0: link.y0, e0: link.e0, e_d: link.e_d, visibility }
    }
}

/// Source settings chosen by a controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    /// Signal intensity (BB84), pair brightness (E91), |alpha|^2 (COW).
    pub mu_s: f64,
    pub mu_w: f64,
    /// Z-basis probability (BB84).
    pub p_z: f64,
}

impl OperatingPoint {
    pub fn nominal(cfg: &ProtocolConfig) -> Self {
        let mu_s = match cfg.kind {
            ProtocolKind::Cow => cfg.cow.alpha_sq,
            _ => cfg.bb84.mu_s,
        };
        Self { mu_s, mu_w: cfg.bb84.mu_w, p_z: 0.5 }
    }
}

/// Sifting factor of biased-basis BB84; equals `q` at `p_z = 0.5`.
pub fn bb84_sifting(q: f64, p_z: f64) -> f64 {
    2.0 * q * (p_z * p_z + (1.0 - p_z) * (1.0 - p_z))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkRate {
    pub q_mu: f64,
    pub e_mu: f64,
    pub report: KeyRateReport,
}

/// Per-pulse secure rate of any protocol on a given channel and operating
/// point. BB84 uses the decoy bounds computed from the model observations at
/// both intensities; E91 is the per-pair rate times the pair detection
/// probability; COW takes the phase error from the channel visibility.
pub fn protocol_rate(
    ch: &ChannelState,
    op: &OperatingPoint,
    cfg: &ProtocolConfig,
    f_rep: f64,
) -> Result<LinkRate> {
    match cfg.kind {
        ProtocolKind::Bb84Decoy => {
            let (q_s, e_s) = poisson_gain(ch.eta, op.mu_s, ch.y0, ch.e_d, ch.e0);
            let (q_w, e_w) = poisson_gain(ch.eta, op.mu_w, ch.y0, ch.e_d, ch.e0);
            let mut decoy_cfg = *cfg;
            decoy_cfg.bb84.mu_s = op.mu_s;
            decoy_cfg.bb84.mu_w = op.mu_w;
            let q = bb84_sifting(cfg.q, op.p_z);
            let report = match decoy_bounds(
                Observation { gain: q_s, qber: e_s },
                Observation { gain: q_w, qber: e_w },
                &decoy_cfg,
                ch.y0,
                ch.e0,
            ) {
                Ok(bounds) => bb84_key_rate_sifted(bounds, q_s, e_s, q, cfg, f_rep),
                Err(Error::BoundInfeasible { .. }) | Err(Error::InvalidParam(_)) => KeyRateReport::default(),
                Err(e) => return Err(e),
            };
            Ok(LinkRate { q_mu: q_s, e_mu: e_s, report })
        }
        ProtocolKind::E91 => {
            let pair_error = (1.0 - ch.visibility) / 2.0;
            let (q_mu, e_mu) = poisson_gain(ch.eta, op.mu_s, ch.y0, pair_error, ch.e0);
            let qber = e_mu.clamp(0.0, 0.5);
            let s = 2.0 * SQRT_2 * (1.0 - 2.0 * qber);
            let per_pair = e91_key_rate(s, qber, cfg, f_rep)?;
            Ok(LinkRate { q_mu, e_mu, report: per_pair.scaled(q_mu, cfg, f_rep) })
        }
        ProtocolKind::Cow => {
            let (q_mu, e_mu) = poisson_gain(ch.eta, op.mu_s, ch.y0, ch.e_d, ch.e0);
            let e_ph = ((1.0 - ch.visibility) / 2.0).clamp(0.0, 1.0);
            let report = cow_key_rate(q_mu, e_mu, e_ph, cfg, f_rep)?;
            Ok(LinkRate { q_mu, e_mu, report })
        }
    }
}

/// Rate of a noise-free link at the protocol's nominal settings. `dphi` is
/// the uncompensated inter-pulse phase drift (COW only).
pub fn link_key_rate(link: &LinkParams, cfg: &ProtocolConfig, dphi: f64) -> Result<LinkRate> {
    link.validate()?;
    cfg.validate()?;
    let mut ch = ChannelState::nominal(link, cfg);
    let op = OperatingPoint::nominal(cfg);
    if cfg.kind == ProtocolKind::Cow {
        ch.visibility = cow_visibility(op.mu_s, dphi)?.visibility;
    }
    protocol_rate(&ch, &op, cfg, link.f_rep)
}
