//! Small differentiable toolkit: dense and dilated causal convolution
//! layers, ReLU/tanh, residual sums, a reverse-mode tape and Adam.

mod optim;
mod tape;
mod tensor;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use optim::{Adam, AdamConfig};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

pub type TensorBuf = Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    #[serde(flatten)]
    tensor: Tensor,
}

/// Named trainable tensors of a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Checkpoint", into = "Checkpoint")]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

#[derive(Clone, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    params: Vec<NamedTensor>,
}

const CHECKPOINT_FORMAT: &str = "qkdloop-params-v1";

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::param(format!("duplicate parameter name '{name}'")));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("parameter init"));
        }
        self.names.push(name);
        self.tensors.push(t);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub(crate) fn get_mut_by_index(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Overwrite values from `other`, which must have the same layout.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Checkpoint("parameter names do not match the model".into()));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint(format!("shape {:?} vs {:?}", a.shape(), b.shape())));
            }
        }
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl From<ParamStore> for Checkpoint {
    fn from(store: ParamStore) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            params: store
                .names
                .into_iter()
                .zip(store.tensors)
                .map(|(name, tensor)| NamedTensor { name, tensor })
                .collect(),
        }
    }
}

impl TryFrom<Checkpoint> for ParamStore {
    type Error = Error;

    fn try_from(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format '{}'", ck.format)));
        }
        let mut store = Self::new();
        for p in ck.params {
            let t = Tensor::from_vec(p.tensor.rows, p.tensor.cols, p.tensor.data)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", p.name)))?;
            store.add(p.name, t)?;
        }
        Ok(store)
    }
}

fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor { rows, cols, data }
}

/// Fully connected layer y = W x + b.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    /// Kaiming-uniform weights scaled by `gain`, zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::param("dense layer needs positive sizes"));
        }
        let bound = gain * (6.0 / inputs as f64).sqrt();
        let w = store.add(format!("{name}.w"), uniform(outputs, inputs, bound, rng))?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(outputs, 1))?;
        Ok(Self { w, b, inputs, outputs })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.dense(x, self.w, self.b)
    }
}

/// Dilated causal 1-D convolution. The kernel is stored as (out, in * k),
/// tap `i` of input channel `c` at column `c * k + i` multiplying
/// `x(t - dilation * i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerParams {
    pub w: ParamId,
    pub b: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
}

pub type Conv1d = LayerParams;

impl LayerParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel == 0 || dilation == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::param("conv layer needs kernel >= 1, dilation >= 1 and positive channels"));
        }
        let fan_in = (in_channels * kernel) as f64;
        let w = store.add(format!("{name}.w"), uniform(out_channels, in_channels * kernel, (6.0 / fan_in).sqrt(), rng))?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(out_channels, 1))?;
        Ok(Self { w, b, in_channels, out_channels, kernel, dilation })
    }

    /// Receptive field in time steps.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * self.dilation
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.conv1d_causal(x, self.w, self.b, self.kernel, self.dilation)
    }
}

/// One-shot evaluation of a causal convolution outside any model.
pub fn conv1d_causal(x: &Tensor, kernel: &Tensor, bias: &Tensor, dilation: usize) -> Result<Tensor> {
    if x.rows == 0 || kernel.rows == 0 || kernel.cols % x.rows != 0 {
        return Err(Error::shape(format!("kernel {:?} for input {:?}", kernel.shape(), x.shape())));
    }
    let k = kernel.cols / x.rows;
    let mut store = ParamStore::new();
    let w = store.add("w", kernel.clone())?;
    let b = store.add("b", bias.clone())?;
    let mut tape = Tape::new(&store);
    let xi = tape.input(x.clone());
    let y = tape.conv1d_causal(xi, w, b, k, dilation)?;
    Ok(tape.value(y).clone())
}
