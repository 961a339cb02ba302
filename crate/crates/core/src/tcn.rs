//! Dilated causal residual TCN forecasting the next block's telemetry.
//!
//! Architecture: a 1x1 input projection to `hidden` channels, `L` residual
//! blocks `h <- h + ReLU(conv_d(h))`, and a linear head reading the last time
//! step. With `persistence_skip` the head predicts a correction to the last
//! observed (normalized) row rather than the row itself.

use std::cell::Cell;
use std::collections::VecDeque;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Telemetry;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Dense, LayerParams, ParamStore, Tape, Tensor};

thread_local! {
    static FORWARD_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Network forward passes run on this thread since the last reset.
pub fn forward_calls() -> u64 {
    FORWARD_CALLS.with(Cell::get)
}

pub fn reset_forward_calls() {
    FORWARD_CALLS.with(|c| c.set(0));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Feature {
    #[serde(rename = "q_mu_hat")]
    QMu,
    #[serde(rename = "e_mu_hat")]
    EMu,
    #[serde(rename = "v_hat")]
    Visibility,
    #[serde(rename = "eta_hat")]
    Eta,
    #[serde(rename = "y0_hat")]
    Y0,
}

impl Feature {
    pub fn extract(self, t: &Telemetry) -> f64 {
        match self {
            Feature::QMu => t.q_mu_hat,
            Feature::EMu => t.e_mu_hat,
            Feature::Visibility => t.v_hat,
            Feature::Eta => t.eta_hat,
            Feature::Y0 => t.y0_hat,
        }
    }
}

pub fn feature_row(features: &[Feature], t: &Telemetry) -> Vec<f64> {
    features.iter().map(|f| f.extract(t)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcnConfig {
    pub layers: usize,
    pub dilations: Vec<usize>,
    pub kernel: usize,
    pub hidden: usize,
    pub window: usize,
    pub features: Vec<Feature>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Blocks used to calibrate the z-score normalization before freezing.
    pub calibration_blocks: usize,
    pub persistence_skip: bool,
    /// Final learning rate as a fraction of `lr`, reached by cosine decay.
    pub lr_final_fraction: f64,
}

impl Default for TcnConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            dilations: vec![1, 2, 4, 8],
            kernel: 3,
            hidden: 16,
            window: 32,
            features: vec![Feature::EMu, Feature::Visibility],
            lr: 1e-3,
            epochs: 50,
            batch_size: 32,
            calibration_blocks: 100,
            persistence_skip: true,
            lr_final_fraction: 1.0,
        }
    }
}

impl TcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dilations.len() != self.layers {
            return Err(Error::param(format!("{} dilations for {} layers", self.dilations.len(), self.layers)));
        }
        if self.dilations.contains(&0) || self.kernel == 0 || self.hidden == 0 {
            return Err(Error::param("dilations, kernel and hidden must be positive"));
        }
        if self.window < 2 {
            return Err(Error::param("window must be at least 2"));
        }
        if self.features.is_empty() || self.batch_size == 0 {
            return Err(Error::param("need at least one feature and a positive batch size"));
        }
        Ok(())
    }

    /// 1 + (k - 1) * sum(d).
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * self.dilations.iter().sum::<usize>()
    }
}

const STD_FLOOR: f64 = 1e-9;

/// Running per-feature z-score, frozen once `limit` rows have been seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    m2: Vec<f64>,
    pub count: usize,
    pub limit: usize,
}

impl Normalizer {
    pub fn new(dim: usize, limit: usize) -> Self {
        Self { mean: vec![0.0; dim], m2: vec![0.0; dim], count: 0, limit: limit.max(1) }
    }

    pub fn frozen(&self) -> bool {
        self.count >= self.limit
    }

    pub fn observe(&mut self, row: &[f64]) {
        if self.frozen() {
            return;
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(row) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    pub fn std(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.m2.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect()
    }

    pub fn normalize(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(self.std()).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn denormalize(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(self.std()).map(|((z, m), s)| z * s + m).collect()
    }
}

/// One training pair: `window` raw feature rows (oldest first) and the raw
/// row of the following block.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub window: Vec<Vec<f64>>,
    pub next: Vec<f64>,
}

/// All (window, next) pairs of a feature series.
pub fn windows(series: &[Vec<f64>], window: usize) -> Vec<Sample> {
    if series.len() <= window {
        return Vec::new();
    }
    (window..series.len())
        .map(|t| Sample { window: series[t - window..t].to_vec(), next: series[t].clone() })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    /// Prediction for the next block, normalized.
    pub y_next_norm: Vec<f64>,
    /// Prediction in physical units, clamped to [0, 1].
    pub y_next: Vec<f64>,
    pub horizon: usize,
    /// True when the persistence fallback produced the forecast.
    pub persistence: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean normalized MSE per epoch.
    pub epoch_losses: Vec<f64>,
    /// Normalized MSE of the trained model over the whole dataset.
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Tcn {
    pub cfg: TcnConfig,
    pub norm: Normalizer,
    store: ParamStore,
    proj: LayerParams,
    blocks: Vec<LayerParams>,
    head: Dense,
}

#[derive(Serialize, Deserialize)]
struct TcnCheckpoint {
    config: TcnConfig,
    normalizer: Normalizer,
    params: ParamStore,
}

impl Tcn {
    pub fn new<R: Rng + ?Sized>(cfg: TcnConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let f = cfg.features.len();
        let mut store = ParamStore::new();
        let proj = LayerParams::new(&mut store, "proj", f, cfg.hidden, 1, 1, rng)?;
        let blocks = cfg
            .dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| LayerParams::new(&mut store, &format!("block{i}"), cfg.hidden, cfg.hidden, cfg.kernel, d, rng))
            .collect::<Result<Vec<_>>>()?;
        let gain = if cfg.persistence_skip { 0.1 } else { 1.0 };
        let head = Dense::new(&mut store, "head", cfg.hidden, f, gain, rng)?;
        let norm = Normalizer::new(f, cfg.calibration_blocks);
        Ok(Self { cfg, norm, store, proj, blocks, head })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn proj_layer(&self) -> LayerParams {
        self.proj
    }

    pub fn block_layers(&self) -> &[LayerParams] {
        &self.blocks
    }

    pub fn head_layer(&self) -> Dense {
        self.head
    }

    /// Feed the calibration prefix of a raw series into the normalizer.
    pub fn calibrate(&mut self, series: &[Vec<f64>]) {
        for row in series.iter().take(self.cfg.calibration_blocks) {
            self.norm.observe(row);
        }
    }

    fn window_tensor(&self, window: &[Vec<f64>]) -> Result<Tensor> {
        let f = self.cfg.features.len();
        if window.len() < self.cfg.window {
            return Err(Error::param(format!("window of {} rows, need {}", window.len(), self.cfg.window)));
        }
        let rows = &window[window.len() - self.cfg.window..];
        let mut x = Tensor::zeros(f, rows.len());
        for (t, r) in rows.iter().enumerate() {
            if r.len() != f {
                return Err(Error::shape(format!("row of {} features, expected {f}", r.len())));
            }
            for (c, z) in self.norm.normalize(r).into_iter().enumerate() {
                *x.at_mut(c, t) = z;
            }
        }
        Ok(x)
    }

    /// Record the forward pass on `tape`; returns (input, output) handles.
    fn record(&self, tape: &mut Tape, x: Tensor) -> Result<(crate::nn::Var, crate::nn::Var)> {
        let xi = tape.input(x);
        let mut h = self.proj.forward(tape, xi)?;
        for b in &self.blocks {
            let c = b.forward(tape, h)?;
            let c = tape.relu(c);
            h = tape.add(h, c)?;
        }
        let last = tape.last_col(h)?;
        let mut y = self.head.forward(tape, last)?;
        if self.cfg.persistence_skip {
            let skip = tape.last_col(xi)?;
            y = tape.add(y, skip)?;
        }
        Ok((xi, y))
    }

    /// Normalized forecast from the last `window` raw rows.
    pub fn predict_norm(&self, window: &[Vec<f64>]) -> Result<Vec<f64>> {
        let x = self.window_tensor(window)?;
        let mut tape = Tape::new(&self.store);
        let (_, y) = self.record(&mut tape, x)?;
        FORWARD_CALLS.with(|c| c.set(c.get() + 1));
        Ok(tape.value(y).data.clone())
    }

    pub fn forward(&self, window: &[Vec<f64>]) -> Result<Forecast> {
        let z = self.predict_norm(window)?;
        let raw = self.norm.denormalize(&z).into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Forecast { y_next_norm: z, y_next: raw, horizon: 1, persistence: false })
    }

    fn sample_grad(&self, s: &Sample) -> Result<(f64, crate::nn::Gradients)> {
        let x = self.window_tensor(&s.window)?;
        let target = Tensor::column(&self.norm.normalize(&s.next));
        let mut tape = Tape::new(&self.store);
        let (_, y) = self.record(&mut tape, x)?;
        let loss = tape.mse(y, &target)?;
        let l = tape.value(loss).data[0];
        Ok((l, tape.backward(loss)?))
    }

    /// Mean normalized MSE over a dataset.
    pub fn mse(&self, data: &[Sample]) -> Result<f64> {
        let mut total = 0.0;
        for s in data {
            let z = self.predict_norm(&s.window)?;
            let t = self.norm.normalize(&s.next);
            total += z.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / z.len() as f64;
        }
        Ok(total / data.len().max(1) as f64)
    }

    /// Mean MSE in physical units over a dataset, after clamping.
    pub fn mse_raw(&self, data: &[Sample]) -> Result<f64> {
        let mut total = 0.0;
        for s in data {
            let y = self.forward(&s.window)?.y_next;
            total += y.iter().zip(&s.next).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
        }
        Ok(total / data.len().max(1) as f64)
    }

    /// Minimize normalized MSE with Adam over shuffled minibatches. The
    /// normalizer must already be calibrated. On a non-finite loss the
    /// parameters are restored and `Diverged` is returned.
    pub fn train<R: Rng + ?Sized>(&mut self, data: &[Sample], epochs: usize, lr: f64, rng: &mut R) -> Result<TrainReport> {
        if data.len() < 64 {
            return Err(Error::InsufficientData(format!("{} training pairs, need at least 64", data.len())));
        }
        if !self.norm.frozen() {
            return Err(Error::InsufficientData(format!(
                "normalizer saw {} of {} calibration rows",
                self.norm.count, self.norm.limit
            )));
        }
        let snapshot = self.store.clone();
        let mut opt = Adam::new(&self.store, AdamConfig { lr, ..Default::default() });
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut epoch_losses = Vec::with_capacity(epochs);
        let floor = self.cfg.lr_final_fraction.clamp(0.0, 1.0);
        for epoch in 0..epochs {
            let progress = if epochs > 1 { epoch as f64 / (epochs - 1) as f64 } else { 0.0 };
            opt.cfg.lr = lr * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
            order.shuffle(rng);
            let mut sum = 0.0;
            for batch in order.chunks(self.cfg.batch_size) {
                let mut acc: Option<crate::nn::Gradients> = None;
                for &i in batch {
                    let (l, g) = self.sample_grad(&data[i])?;
                    sum += l;
                    match acc.as_mut() {
                        Some(a) => a.accumulate(&g)?,
                        None => acc = Some(g),
                    }
                }
                let mut g = acc.expect("non-empty batch");
                g.scale(1.0 / batch.len() as f64);
                if !sum.is_finite() || opt.step(&mut self.store, &g.params).is_err() {
                    self.store = snapshot;
                    return Err(Error::Diverged(format!("non-finite TCN loss in epoch {epoch}")));
                }
            }
            epoch_losses.push(sum / data.len() as f64);
        }
        let final_loss = self.mse(data)?;
        Ok(TrainReport { epoch_losses, final_loss })
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = TcnCheckpoint { config: self.cfg.clone(), normalizer: self.norm.clone(), params: self.store.clone() };
        Ok(serde_json::to_string_pretty(&ck)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: TcnCheckpoint = serde_json::from_str(s)?;
        let mut rng = crate::rng::stream(0, "tcn-load");
        let mut model = Self::new(ck.config, &mut rng)?;
        model.store.load_values(&ck.params)?;
        if ck.normalizer.mean.len() != model.cfg.features.len() {
            return Err(Error::Checkpoint("normalizer width does not match features".into()));
        }
        model.norm = ck.normalizer;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Persistence forecast: the last row, repeated.
pub fn persistence_mse(data: &[Sample], norm: Option<&Normalizer>) -> f64 {
    let mut total = 0.0;
    for s in data {
        let last = s.window.last().expect("non-empty window");
        let (a, b) = match norm {
            Some(n) => (n.normalize(last), n.normalize(&s.next)),
            None => (last.clone(), s.next.clone()),
        };
        total += a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    }
    total / data.len().max(1) as f64
}

/// Online wrapper: keeps the telemetry history and falls back to
/// persistence until a full window is available.
#[derive(Debug, Clone)]
pub struct Forecaster {
    pub model: Tcn,
    history: VecDeque<Vec<f64>>,
}

impl Forecaster {
    pub fn new(model: Tcn) -> Self {
        Self { model, history: VecDeque::new() }
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }

    pub fn features(&self) -> &[Feature] {
        &self.model.cfg.features
    }

    /// Append block telemetry and forecast the following block.
    pub fn push(&mut self, t: &Telemetry) -> Result<Forecast> {
        let row = feature_row(&self.model.cfg.features, t);
        self.model.norm.observe(&row);
        self.history.push_back(row);
        while self.history.len() > self.model.cfg.window {
            self.history.pop_front();
        }
        if self.history.len() < self.model.cfg.window || !self.model.norm.frozen() {
            let last = self.history.back().expect("just pushed").clone();
            return Ok(Forecast {
                y_next_norm: self.model.norm.normalize(&last),
                y_next: last,
                horizon: 1,
                persistence: true,
            });
        }
        let window: Vec<Vec<f64>> = self.history.iter().cloned().collect();
        self.model.forward(&window)
    }
}
