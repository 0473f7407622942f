//! Multi-head scaled dot-product attention, pre-norm transformer layers and
//! the stacked cross-transformer baseline fusion.

use crate::config::AttentionConfig;
use crate::encoders::map_to_sequence;
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, ParamBuilder};
use crate::tensor::{self, Real, Tensor};

/// Attention output together with the per-head weights
/// (`batch × heads × n_q × n_k`).
pub struct Attended<T: Real> {
    pub out: Tensor<T>,
    pub weights: Tensor<T>,
}

/// Softmax attention over already-projected `q`, `k`, `v` of width `d`, split
/// into `heads` heads. Returns the concatenated head outputs (`b × n_q × d`)
/// and the weights.
pub fn scaled_dot_product<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, heads: usize) -> Result<Attended<T>> {
    if q.rank() != 3 || k.rank() != 3 || v.rank() != 3 {
        return Err(Error::InvalidTensor(format!(
            "attention expects batch × positions × width inputs, got {:?}, {:?}, {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let (b, nq, d) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let nk = k.shape()[1];
    if k.shape() != v.shape() || k.shape()[0] != b || k.shape()[2] != d {
        return Err(Error::ShapeMismatch {
            op: "attention",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("width {d} is not divisible by {heads} heads")));
    }
    let hd = d / heads;
    let split = |t: &Tensor<T>, n: usize| t.reshape(&[b, n, heads, hd])?.permute(&[0, 2, 1, 3]);
    let qh = split(q, nq)?;
    let kt = split(k, nk)?.transpose(2, 3)?;
    let vh = split(v, nk)?;
    let scores = qh.matmul(&kt)?.scale(T::of(1.0 / (hd as f64).sqrt()));
    let weights = scores.softmax(3)?;
    let mixed = weights.matmul(&vh)?.permute(&[0, 2, 1, 3])?.reshape(&[b, nq, d])?;
    Ok(Attended { out: mixed, weights })
}

/// Learned projections around [`scaled_dot_product`]: bias-free `W_Q`, `W_K`,
/// `W_V` and an output map `W_O` with bias.
pub struct MultiHeadAttention<T: Real> {
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
    pub heads: usize,
}

impl<T: Real> MultiHeadAttention<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model_dim {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            wq: Linear::new(&mut pb.sub("wq"), dim, dim, false)?,
            wk: Linear::new(&mut pb.sub("wk"), dim, dim, false)?,
            wv: Linear::new(&mut pb.sub("wv"), dim, dim, false)?,
            wo: Linear::new(&mut pb.sub("wo"), dim, dim, true)?,
            heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.wq.in_dim()
    }

    /// Queries from `x_q`, keys and values from `x_kv`.
    pub fn attend(&self, x_q: &Tensor<T>, x_kv: &Tensor<T>) -> Result<Attended<T>> {
        let d = self.dim();
        if x_q.shape().last() != Some(&d) || x_kv.shape().last() != Some(&d) {
            return Err(Error::ShapeMismatch {
                op: "attention",
                lhs: x_q.shape().to_vec(),
                rhs: x_kv.shape().to_vec(),
            });
        }
        let att = scaled_dot_product(
            &self.wq.forward(x_q)?,
            &self.wk.forward(x_kv)?,
            &self.wv.forward(x_kv)?,
            self.heads,
        )?;
        Ok(Attended {
            out: self.wo.forward(&att.out)?,
            weights: att.weights,
        })
    }

    pub fn forward(&self, x_q: &Tensor<T>, x_kv: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.attend(x_q, x_kv)?.out)
    }
}

/// Pre-norm layer: `y = Attn(LN₁ t, LN₁ s) + t`, `out = MLP(LN₂ y) + y`.
pub struct TransformerLayer<T: Real> {
    pub ln1: LayerNorm<T>,
    pub attn: MultiHeadAttention<T>,
    pub ln2: LayerNorm<T>,
    pub mlp1: Linear<T>,
    pub mlp2: Linear<T>,
}

impl<T: Real> TransformerLayer<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, dim: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(TransformerLayer {
            ln1: LayerNorm::new(&mut pb.sub("ln1"), dim)?,
            attn: MultiHeadAttention::new(&mut pb.sub("attn"), dim, heads)?,
            ln2: LayerNorm::new(&mut pb.sub("ln2"), dim)?,
            mlp1: Linear::new(&mut pb.sub("mlp1"), dim, dim * mlp_ratio, true)?,
            mlp2: Linear::new(&mut pb.sub("mlp2"), dim * mlp_ratio, dim, true)?,
        })
    }

    pub fn from_config(pb: &mut ParamBuilder<'_, T>, cfg: &AttentionConfig) -> Result<Self> {
        Self::new(pb, cfg.model_dim, cfg.heads, cfg.mlp_ratio)
    }

    fn mlp_block(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.mlp1.forward(&self.ln2.forward(y)?)?.relu();
        self.mlp2.forward(&h)?.add(y)
    }

    /// Self-attention layer.
    pub fn msa(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.ln1.forward(h)?;
        let y = self.attn.forward(&n, &n)?.add(h)?;
        self.mlp_block(&y)
    }

    /// Cross-modal layer: `target` queries, `source` keys and values.
    pub fn cross(&self, target: &Tensor<T>, source: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self
            .attn
            .forward(&self.ln1.forward(target)?, &self.ln1.forward(source)?)?
            .add(target)?;
        self.mlp_block(&y)
    }
}

/// Baseline fusion: per-modality affine projections to `model_dim`, then `L`
/// cross-transformer layers in each direction updated in lockstep, then mean
/// pooling and concatenation `[ĥ_a, ĥ_v]`.
pub struct McaFusion<T: Real> {
    pub proj_a: Linear<T>,
    pub proj_v: Linear<T>,
    pub layers_a: Vec<TransformerLayer<T>>,
    pub layers_v: Vec<TransformerLayer<T>>,
}

impl<T: Real> McaFusion<T> {
    pub fn new(
        pb: &mut ParamBuilder<'_, T>,
        audio_channels: usize,
        visual_channels: usize,
        cfg: &AttentionConfig,
    ) -> Result<Self> {
        let d = cfg.model_dim;
        let proj_a = Linear::new(&mut pb.sub("proj_a"), audio_channels, d, true)?;
        let proj_v = Linear::new(&mut pb.sub("proj_v"), visual_channels, d, true)?;
        let mut layers_a = Vec::with_capacity(cfg.layers);
        let mut layers_v = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            layers_a.push(TransformerLayer::from_config(&mut pb.sub(&format!("cross_a{l}")), cfg)?);
            layers_v.push(TransformerLayer::from_config(&mut pb.sub(&format!("cross_v{l}")), cfg)?);
        }
        Ok(McaFusion {
            proj_a,
            proj_v,
            layers_a,
            layers_v,
        })
    }

    pub fn output_width(&self) -> usize {
        2 * self.proj_a.out_dim()
    }

    /// Fuses sequences already at `model_dim`; returns `batch × 2·model_dim`.
    pub fn fuse_projected(&self, h_a: &Tensor<T>, h_v: &Tensor<T>) -> Result<Tensor<T>> {
        let (mut a, mut v) = (h_a.clone(), h_v.clone());
        for (la, lv) in self.layers_a.iter().zip(&self.layers_v) {
            let next_a = la.cross(&a, &v)?;
            let next_v = lv.cross(&v, &a)?;
            a = next_a;
            v = next_v;
        }
        tensor::concat(&[a.mean_axis(1, false)?, v.mean_axis(1, false)?], 1)
    }

    /// Fuses encoder feature maps (`b × C_a × L`, `b × C_v × S × H × W`).
    pub fn forward(&self, audio_map: &Tensor<T>, visual_map: &Tensor<T>) -> Result<Tensor<T>> {
        let h_a = self.proj_a.forward(&map_to_sequence(audio_map)?)?;
        let h_v = self.proj_v.forward(&map_to_sequence(visual_map)?)?;
        self.fuse_projected(&h_a, &h_v)
    }
}
