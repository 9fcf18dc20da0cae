//! Minimal neural-network building blocks on top of `candle-core` tensors:
//! a named parameter store, dense/conv/GRU layers and Adam with global-norm
//! clipping. All initialization goes through seeded streams so that runs
//! are reproducible.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var, D};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Named trainable parameters. Keys are `/`-separated component paths.
#[derive(Clone)]
pub struct Params {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl std::fmt::Debug for Params {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Params")
            .field("tensors", &self.vars.len())
            .field("elements", &self.num_elements())
            .field("dtype", &self.dtype)
            .finish()
    }
}

impl Params {
    pub fn new(dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }

    pub fn num_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    fn insert(&mut self, name: String, value: Tensor) -> Result<Var> {
        if self.vars.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter {name}")));
        }
        let var = Var::from_tensor(&value.to_dtype(self.dtype)?)?;
        self.vars.insert(name, var.clone());
        Ok(var)
    }

    /// Order-sensitive 64-bit fingerprint of every parameter value.
    pub fn fingerprint(&self) -> Result<u64> {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for (name, var) in &self.vars {
            for b in name.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3);
            }
            let flat = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for x in flat {
                h = (h ^ x.to_bits()).wrapping_mul(0x0000_0100_0000_01B3);
            }
        }
        Ok(h)
    }

    /// Copies parameter values from `tensors`; every parameter must be present
    /// with a matching shape.
    pub fn load(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: stored shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().detach()))
            .collect()
    }
}

/// Parameter factory scoped to a name prefix.
pub struct Init<'a> {
    params: &'a mut Params,
    rng: &'a mut StreamRng,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(params: &'a mut Params, rng: &'a mut StreamRng) -> Self {
        Self {
            params,
            rng,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: &str) -> Init<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}/{}", self.prefix, name)
        };
        Init {
            params: self.params,
            rng: self.rng,
            prefix,
        }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}/{}", self.prefix, name)
        }
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = if std == 0.0 {
            vec![0.0; n]
        } else {
            let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
            (0..n).map(|_| dist.sample(self.rng)).collect()
        };
        let t = Tensor::from_vec(values, shape, &self.params.device)?;
        let path = self.path(name);
        self.params.insert(path, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let t = Tensor::full(value, shape, &self.params.device)?;
        let path = self.path(name);
        self.params.insert(path, t)
    }
}

// ---------------------------------------------------------------------------
// Elementwise helpers

/// `0.5 * (1 + tanh(x / 2))`, which stays finite for large |x|.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x * 0.5)?.tanh()? + 1.0)?.affine(0.5, 0.0)?)
}

pub fn swish(x: &Tensor) -> Result<Tensor> {
    Ok(x.silu()?)
}

/// Numerically stable log-softmax over the last dimension.
pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

pub fn softmax(x: &Tensor) -> Result<Tensor> {
    Ok(log_softmax(x)?.exp()?)
}

/// `log(1 + exp(x))` computed stably as `max(x, 0) + log(1 + exp(-|x|))`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let pos = x.relu()?;
    let neg_abs = (x.abs()?.neg())?;
    Ok((pos + (neg_abs.exp()? + 1.0)?.log()?)?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

pub fn to_vec1(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

pub fn to_vec2(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    Ok(t.to_dtype(DType::F64)?.to_vec2::<f64>()?)
}

pub fn from_rows(rows: &[f64], shape: &[usize], dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_slice(rows, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

// ---------------------------------------------------------------------------
// Layers

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    /// Fan-in scaled normal weights, multiplied by `scale`; zero bias.
    pub fn new(init: &mut Init, input: usize, output: usize, scale: f64) -> Result<Self> {
        let std = scale / (input as f64).sqrt();
        Ok(Self {
            weight: init.normal("weight", &[input, output], std)?,
            bias: init.constant("bias", &[output], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(self.weight.as_tensor())?.broadcast_add(self.bias.as_tensor())?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: Var,
    shift: Var,
}

impl LayerNorm {
    const EPS: f64 = 1e-5;

    pub fn new(init: &mut Init, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: init.constant("gain", &[dim], 1.0)?,
            shift: init.constant("shift", &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + Self::EPS)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(self.gain.as_tensor())?
            .broadcast_add(self.shift.as_tensor())?)
    }
}

/// Linear -> LayerNorm -> swish.
#[derive(Debug, Clone)]
pub struct Dense {
    linear: Linear,
    norm: LayerNorm,
}

impl Dense {
    pub fn new(init: &mut Init, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(&mut init.sub("linear"), input, output, 1.0)?,
            norm: LayerNorm::new(&mut init.sub("norm"), output)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        swish(&self.norm.forward(&self.linear.forward(x)?)?)
    }
}

/// Stack of [`Dense`] layers followed by an optional linear read-out.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Dense>,
    out: Option<Linear>,
}

impl Mlp {
    pub fn new(
        init: &mut Init,
        input: usize,
        units: usize,
        layers: usize,
        output: Option<(usize, f64)>,
    ) -> Result<Self> {
        let mut dense = Vec::with_capacity(layers);
        let mut width = input;
        for i in 0..layers {
            dense.push(Dense::new(&mut init.sub(&format!("layer{i}")), width, units)?);
            width = units;
        }
        let out = match output {
            Some((n, scale)) => Some(Linear::new(&mut init.sub("out"), width, n, scale)?),
            None => None,
        };
        Ok(Self { layers: dense, out })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for layer in &self.layers {
            x = layer.forward(&x)?;
        }
        match &self.out {
            Some(out) => out.forward(&x),
            None => Ok(x),
        }
    }
}

/// Stride-2 convolution with "same" padding (spatial size halves).
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Var,
    out_channels: usize,
}

impl Conv2d {
    pub fn new(init: &mut Init, input: usize, output: usize, kernel: usize) -> Result<Self> {
        let std = 1.0 / ((input * kernel * kernel) as f64).sqrt();
        Ok(Self {
            weight: init.normal("weight", &[output, input, kernel, kernel], std)?,
            bias: init.constant("bias", &[output], 0.0)?,
            out_channels: output,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), 1, 2, 1, 1)?;
        let b = self.bias.as_tensor().reshape((1, self.out_channels, 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }
}

/// Stride-2 transposed convolution (spatial size doubles).
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Var,
    bias: Var,
    out_channels: usize,
}

impl ConvTranspose2d {
    pub fn new(init: &mut Init, input: usize, output: usize, kernel: usize) -> Result<Self> {
        // Each output pixel sees input * (kernel / stride)^2 terms.
        let fan_in = (input * kernel * kernel / 4).max(1);
        let std = 1.0 / (fan_in as f64).sqrt();
        Ok(Self {
            weight: init.normal("weight", &[input, output, kernel, kernel], std)?,
            bias: init.constant("bias", &[output], 0.0)?,
            out_channels: output,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(self.weight.as_tensor(), 1, 0, 2, 1)?;
        let b = self.bias.as_tensor().reshape((1, self.out_channels, 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }
}

/// Gated recurrent unit cell.
#[derive(Debug, Clone)]
pub struct GruCell {
    input: Linear,
    recurrent: Linear,
    hidden: usize,
}

impl GruCell {
    pub fn new(init: &mut Init, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            input: Linear::new(&mut init.sub("input"), input, 3 * hidden, 1.0)?,
            recurrent: Linear::new(&mut init.sub("recurrent"), hidden, 3 * hidden, 1.0)?,
            hidden,
        })
    }

    pub fn forward(&self, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        let n = self.hidden;
        let xi = self.input.forward(x)?;
        let hh = self.recurrent.forward(h)?;
        let reset = sigmoid(&(xi.narrow(1, 0, n)? + hh.narrow(1, 0, n)?)?)?;
        let update = sigmoid(&(xi.narrow(1, n, n)? + hh.narrow(1, n, n)?)?)?;
        let cand = (xi.narrow(1, 2 * n, n)? + (reset * hh.narrow(1, 2 * n, n)?)?)?.tanh()?;
        // h' = (1 - u) * cand + u * h
        let keep = (update.ones_like()? - &update)?;
        Ok(((keep * cand)? + (update * h)?)?)
    }
}

// ---------------------------------------------------------------------------
// Optimizer

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, clip_norm: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(clip_norm),
        }
    }
}

/// Adam over a [`Params`] store. Moments live alongside the parameters so the
/// whole optimizer state can be checkpointed.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

/// Statistics of one optimizer step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    pub clipped: bool,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &Params) -> Result<Self> {
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for (name, var) in params.iter() {
            first.insert(name.clone(), var.as_tensor().zeros_like()?);
            second.insert(name.clone(), var.as_tensor().zeros_like()?);
        }
        Ok(Self {
            config,
            step: 0,
            first,
            second,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Global L2 norm of the gradients of `params` (missing gradients count as zero).
    pub fn grad_norm(params: &Params, grads: &GradStore) -> Result<f64> {
        let mut total = 0.0;
        for (_, var) in params.iter() {
            if let Some(g) = grads.get(var.as_tensor()) {
                total += scalar(&g.sqr()?.sum_all()?)?;
            }
        }
        Ok(total.sqrt())
    }

    pub fn step(&mut self, params: &Params, grads: &GradStore) -> Result<StepStats> {
        let norm = Self::grad_norm(params, grads)?;
        if !norm.is_finite() {
            return Err(Error::Domain(format!("non-finite gradient norm {norm}")));
        }
        let mut scale = 1.0;
        let mut clipped = false;
        if let Some(max) = self.config.clip_norm {
            if norm > max {
                scale = max / (norm + 1e-6);
                clipped = true;
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (name, var) in params.iter() {
            let g = match grads.get(var.as_tensor()) {
                Some(g) => (g.detach() * scale)?,
                None => var.as_tensor().zeros_like()?,
            };
            let m = self
                .first
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("optimizer has no slot for {name}")))?;
            *m = ((&*m * c.beta1)? + (&g * (1.0 - c.beta1))?)?;
            let m = m.clone();
            let v = self
                .second
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("optimizer has no slot for {name}")))?;
            *v = ((&*v * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?;
            let denom = ((&*v / bias2)?.sqrt()? + c.eps)?;
            let update = ((m / bias1)? / denom)?;
            var.set(&(var.as_tensor().detach() - (update * c.learning_rate)?)?)?;
        }
        Ok(StepStats {
            grad_norm: norm,
            clipped,
        })
    }

    /// Moments keyed `m/<param>` and `v/<param>`.
    pub fn state_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (k, t) in &self.first {
            out.insert(format!("m/{k}"), t.clone());
        }
        for (k, t) in &self.second {
            out.insert(format!("v/{k}"), t.clone());
        }
        out
    }

    pub fn restore(&mut self, step: u64, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for (k, slot) in self.first.iter_mut() {
            let t = tensors
                .get(&format!("m/{k}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer moment m/{k}")))?;
            *slot = t.to_dtype(slot.dtype())?;
        }
        for (k, slot) in self.second.iter_mut() {
            let t = tensors
                .get(&format!("v/{k}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer moment v/{k}")))?;
            *slot = t.to_dtype(slot.dtype())?;
        }
        self.step = step;
        Ok(())
    }
}
