//! Named parameter storage and the small set of layers the encoders, attention
//! and fusion blocks are assembled from.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, BatchNormState, Conv3dOpts, Real, Tensor, NORM_EPS};

/// Learnable tensors and non-learnable buffers (batch-norm running
/// statistics), keyed by dotted path in insertion order.
pub struct ModelParams<T: Real> {
    params: IndexMap<String, Tensor<T>>,
    buffers: IndexMap<String, Tensor<T>>,
}

impl<T: Real> Default for ModelParams<T> {
    fn default() -> Self {
        ModelParams {
            params: IndexMap::new(),
            buffers: IndexMap::new(),
        }
    }
}

impl<T: Real> ModelParams<T> {
    pub fn new() -> Self {
        Self::default()
    }

    fn check_unique(&self, name: &str) -> Result<()> {
        if self.params.contains_key(name) || self.buffers.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        Ok(())
    }

    pub fn insert(&mut self, name: String, t: Tensor<T>) -> Result<()> {
        self.check_unique(&name)?;
        self.params.insert(name, t);
        Ok(())
    }

    pub fn insert_buffer(&mut self, name: String, t: Tensor<T>) -> Result<()> {
        self.check_unique(&name)?;
        self.buffers.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).or_else(|| self.buffers.get(name))
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Parameters followed by buffers, the order used for checkpoints.
    pub fn all(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params().chain(self.buffers())
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of learnable scalars whose name starts with `prefix`.
    pub fn param_count(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn zero_grad(&self) {
        for t in self.params.values() {
            t.zero_grad();
        }
    }
}

/// Creates parameters under a dotted prefix, drawing initial values from a
/// shared generator.
pub struct ParamBuilder<'a, T: Real> {
    store: &'a mut ModelParams<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Real> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ModelParams<T>, rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder {
            store,
            rng,
            prefix: String::new(),
        }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn sub(&mut self, name: &str) -> ParamBuilder<'_, T> {
        let prefix = self.path(name);
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    /// Uniform in `±1/√fan_in`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<Tensor<T>> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(self.rng.random_range(-bound..bound))).collect();
        self.add(name, Tensor::param(data, shape)?)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], v: f64) -> Result<Tensor<T>> {
        self.add(name, Tensor::full(shape, T::of(v)).as_leaf(true))
    }

    fn add(&mut self, name: &str, t: Tensor<T>) -> Result<Tensor<T>> {
        self.store.insert(self.path(name), t.clone())?;
        Ok(t)
    }

    pub fn buffer(&mut self, name: &str, t: Tensor<T>) -> Result<Tensor<T>> {
        self.store.insert_buffer(self.path(name), t.clone())?;
        Ok(t)
    }
}

/// Per-call state: train/eval switch and the generator driving dropout.
pub struct ForwardCtx {
    pub train: bool,
    pub rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn train(seed: u64) -> Self {
        ForwardCtx {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn eval() -> Self {
        ForwardCtx {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

/// `y = x·W + b` over the last axis; `W` is stored `in × out`.
pub struct Linear<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, input: usize, output: usize, bias: bool) -> Result<Self> {
        let weight = pb.uniform("w", &[input, output], input)?;
        let bias = if bias {
            Some(pb.constant("b", &[output], 0.0)?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let lifted;
        let x2 = if x.rank() == 1 {
            lifted = x.reshape(&[1, x.numel()])?;
            &lifted
        } else {
            x
        };
        let y = x2.matmul(&self.weight)?;
        let y = match &self.bias {
            Some(b) => y.add(b)?,
            None => y,
        };
        if x.rank() == 1 {
            y.reshape(&[self.out_dim()])
        } else {
            Ok(y)
        }
    }
}

pub struct LayerNorm<T: Real> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, width: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: pb.constant("gamma", &[width], 1.0)?,
            beta: pb.constant("beta", &[width], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        tensor::layer_norm(x, Some(&self.gamma), Some(&self.beta), NORM_EPS)
    }
}

pub struct BatchNorm<T: Real> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub state: BatchNormState<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, channels: usize) -> Result<Self> {
        let state = BatchNormState::new(channels);
        pb.buffer("running_mean", state.running_mean.clone())?;
        pb.buffer("running_var", state.running_var.clone())?;
        Ok(BatchNorm {
            gamma: pb.constant("gamma", &[channels], 1.0)?,
            beta: pb.constant("beta", &[channels], 0.0)?,
            state,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        tensor::batch_norm(x, &self.gamma, &self.beta, &self.state, ctx.train)
    }
}

pub struct Conv1d<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> Conv1d<T> {
    pub fn new(
        pb: &mut ParamBuilder<'_, T>,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Ok(Conv1d {
            weight: pb.uniform("w", &[cout, cin, k], cin * k)?,
            bias: pb.constant("b", &[cout], 0.0)?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        tensor::conv1d(x, &self.weight, Some(&self.bias), self.stride, self.padding)
    }
}

pub struct Conv3d<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub opts: Conv3dOpts,
}

impl<T: Real> Conv3d<T> {
    pub fn new(
        pb: &mut ParamBuilder<'_, T>,
        cin: usize,
        cout: usize,
        k: usize,
        opts: Conv3dOpts,
        bias: bool,
    ) -> Result<Self> {
        let cin_g = cin / opts.groups.max(1);
        let weight = pb.uniform("w", &[cout, cin_g, k, k, k], cin_g * k * k * k)?;
        let bias = if bias {
            Some(pb.constant("b", &[cout], 0.0)?)
        } else {
            None
        };
        Ok(Conv3d { weight, bias, opts })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        tensor::conv3d(x, &self.weight, self.bias.as_ref(), self.opts)
    }
}
