//! Browser bindings for a few small, self-contained views of the fusion
//! model. Every exported function is a thin wrapper over a plain Rust
//! function so the numbers can be tested natively.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use adafuse::attention::MultiHeadAttention;
use adafuse::config::{AttentionConfig, FusionConfig, FusionMode};
use adafuse::fusion::AdaptiveBlock;
use adafuse::model::{Model, FUSION_PREFIX};
use adafuse::nn::{ModelParams, ParamBuilder};
use adafuse::{Error, Result, Tensor};

const SOURCE_STEPS: usize = 8;
const SOURCE_WIDTH: usize = 6;

/// One adaptive block evaluated on a synthetic `channels × size × size`
/// target map.
#[wasm_bindgen]
pub struct GateView {
    channels: usize,
    size: usize,
    weights: Vec<f32>,
    gain: Vec<f32>,
}

#[wasm_bindgen]
impl GateView {
    #[wasm_bindgen(getter)]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    /// Channel softmax of the gate, `channels × size × size`.
    #[wasm_bindgen(getter)]
    pub fn weights(&self) -> Vec<f32> {
        self.weights.clone()
    }

    /// `Σ_c |reinforced| / Σ_c |target|` at each location, `size × size`.
    #[wasm_bindgen(getter)]
    pub fn gain(&self) -> Vec<f32> {
        self.gain.clone()
    }

    /// Index of the heaviest channel at each location.
    pub fn dominant(&self) -> Vec<u32> {
        let loc = self.size * self.size;
        (0..loc)
            .map(|l| {
                (0..self.channels)
                    .max_by(|&a, &b| self.weights[a * loc + l].total_cmp(&self.weights[b * loc + l]))
                    .unwrap_or(0) as u32
            })
            .collect()
    }
}

/// Gaussian bumps, one per channel, at seeded positions.
fn blob_map(rng: &mut ChaCha8Rng, channels: usize, size: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(channels * size * size);
    for _ in 0..channels {
        let (cy, cx) = (rng.random_range(0.0..size as f64), rng.random_range(0.0..size as f64));
        let width = rng.random_range(0.15..0.4) * size as f64;
        for y in 0..size {
            for x in 0..size {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                out.push(2.0 * (-d2 / (2.0 * width * width)).exp());
            }
        }
    }
    out
}

/// `coupling` scales the source sequence, and with it the global term the
/// source adds to every gate location.
pub fn gate_view(seed: u64, channels: usize, size: usize, coupling: f64, residual: bool) -> Result<GateView> {
    if channels == 0 || size == 0 || channels > 16 || size > 64 {
        return Err(Error::Config("channels must be 1..=16 and size 1..=64".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ModelParams::<f64>::new();
    let cfg = AttentionConfig {
        model_dim: 8,
        heads: 2,
        layers: 1,
        mlp_ratio: 2,
    };
    let block = AdaptiveBlock::new(
        &mut ParamBuilder::new(&mut store, &mut rng),
        SOURCE_WIDTH,
        channels,
        channels,
        1,
        residual,
        &cfg,
    )?;
    let target = Tensor::new(blob_map(&mut rng, channels, size), &[1, channels, size, size])?;
    let source: Vec<f64> = (0..SOURCE_STEPS * SOURCE_WIDTH)
        .map(|_| coupling * rng.random_range(-1.0..1.0))
        .collect();
    let source = Tensor::new(source, &[1, SOURCE_STEPS, SOURCE_WIDTH])?;
    let trace = block.trace(&source, &target)?;
    let weights = trace.gate.softmax(1)?.to_vec();
    let (x, r) = (target.to_vec(), trace.reinforced.to_vec());
    let loc = size * size;
    let gain = (0..loc)
        .map(|l| {
            let (num, den) = (0..channels).fold((0.0, 0.0), |(n, d), c| {
                (n + r[c * loc + l].abs(), d + x[c * loc + l].abs())
            });
            if den == 0.0 {
                0.0
            } else {
                (num / den) as f32
            }
        })
        .collect();
    Ok(GateView {
        channels,
        size,
        weights: weights.into_iter().map(|w| w as f32).collect(),
        gain,
    })
}

/// Attention weights, `heads × queries × keys`, for seeded inputs scaled by
/// `sharpness`.
pub fn attention_weights(seed: u64, queries: usize, keys: usize, heads: usize, sharpness: f64) -> Result<Vec<f32>> {
    if queries == 0 || keys == 0 || heads == 0 || queries > 32 || keys > 32 || heads > 8 {
        return Err(Error::Config("queries and keys must be 1..=32, heads 1..=8".into()));
    }
    let dim = 4 * heads;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ModelParams::<f64>::new();
    let mha = MultiHeadAttention::new(&mut ParamBuilder::new(&mut store, &mut rng), dim, heads)?;
    let mut input = |n: usize| -> Result<Tensor<f64>> {
        let data = (0..n * dim).map(|_| sharpness * rng.random_range(-1.0..1.0)).collect();
        Tensor::new(data, &[1, n, dim])
    };
    let (q, kv) = (input(queries)?, input(keys)?);
    Ok(mha
        .attend(&q, &kv)?
        .weights
        .to_vec()
        .into_iter()
        .map(|w| w as f32)
        .collect())
}

/// Learnable parameter counts of one configuration.
#[wasm_bindgen]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub total: usize,
    pub audio: usize,
    pub visual: usize,
    pub fusion: usize,
    pub head: usize,
}

pub fn budget(preset: &str, mode: &str) -> Result<Budget> {
    let base = match preset {
        "desk" => FusionConfig::desk(),
        "default" => FusionConfig::default(),
        other => return Err(Error::Config(format!("unknown preset `{other}`"))),
    };
    let cfg = FusionConfig {
        mode: mode.parse::<FusionMode>()?,
        ..base
    };
    let m = Model::<f32>::new(&cfg, 0)?;
    Ok(Budget {
        total: m.param_count(""),
        audio: m.param_count("encoder.audio."),
        visual: m.param_count("encoder.visual."),
        fusion: m.param_count(FUSION_PREFIX),
        head: m.param_count("head."),
    })
}

fn js(e: Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen(js_name = gateView)]
pub fn gate_view_js(
    seed: u32,
    channels: usize,
    size: usize,
    coupling: f64,
    residual: bool,
) -> Result<GateView, JsValue> {
    gate_view(seed as u64, channels, size, coupling, residual).map_err(js)
}

#[wasm_bindgen(js_name = attentionWeights)]
pub fn attention_weights_js(
    seed: u32,
    queries: usize,
    keys: usize,
    heads: usize,
    sharpness: f64,
) -> Result<Vec<f32>, JsValue> {
    attention_weights(seed as u64, queries, keys, heads, sharpness).map_err(js)
}

#[wasm_bindgen(js_name = paramBudget)]
pub fn budget_js(preset: &str, mode: &str) -> Result<Budget, JsValue> {
    budget(preset, mode).map_err(js)
}
