//! Unimodal encoders: 1-D CNN over MFCC frames, residual 3-D CNN over video
//! clips, and a per-token projection for word embeddings.

use crate::config::{AudioConfig, TextConfig, VisualConfig};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv1d, Conv3d, ForwardCtx, Linear, ParamBuilder};
use crate::tensor::{self, Conv3dOpts, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Audio,
    Visual,
    Text,
}

impl Modality {
    /// Rank of the batched tensor, with the axis meaning.
    pub fn layout(self) -> (usize, &'static str) {
        match self {
            Modality::Audio => (3, "batch × coeffs × frames"),
            Modality::Visual => (5, "batch × channels × frames × height × width"),
            Modality::Text => (3, "batch × tokens × embed_dim"),
        }
    }
}

/// A batched tensor tagged with the modality whose layout it follows.
#[derive(Debug, Clone)]
pub struct ModalityFeatures<T: Real> {
    pub modality: Modality,
    pub tensor: Tensor<T>,
}

impl<T: Real> ModalityFeatures<T> {
    pub fn new(modality: Modality, tensor: Tensor<T>) -> Result<Self> {
        let (rank, layout) = modality.layout();
        if tensor.rank() != rank {
            return Err(Error::InvalidTensor(format!(
                "{modality:?} features must be {layout}, got shape {:?}",
                tensor.shape()
            )));
        }
        Ok(ModalityFeatures { modality, tensor })
    }

    fn expect(&self, m: Modality) -> Result<&Tensor<T>> {
        if self.modality != m {
            return Err(Error::InvalidTensor(format!(
                "expected {m:?} features, got {:?}",
                self.modality
            )));
        }
        Ok(&self.tensor)
    }
}

/// `batch × C × …` map to `batch × positions × C` sequence.
pub fn map_to_sequence<T: Real>(map: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c) = (map.shape()[0], map.shape()[1]);
    let p = map.numel() / (b * c);
    map.reshape(&[b, c, p])?.transpose(1, 2)
}

/// Mean over every axis after the channel axis: `batch × C × …` to `batch × C`.
pub fn global_avg_pool<T: Real>(map: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c) = (map.shape()[0], map.shape()[1]);
    let p = map.numel() / (b * c);
    map.reshape(&[b, c, p])?.mean_axis(2, false)
}

/// Conv1D→ReLU→BN, Conv1D→ReLU, MaxPool→BN→Dropout, Conv1D→ReLU→BN→Flatten.
pub struct AudioEncoder<T: Real> {
    cfg: AudioConfig,
    conv1: Conv1d<T>,
    bn1: BatchNorm<T>,
    conv2: Conv1d<T>,
    bn2: BatchNorm<T>,
    conv3: Conv1d<T>,
    bn3: BatchNorm<T>,
}

impl<T: Real> AudioEncoder<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, cfg: &AudioConfig) -> Result<Self> {
        let [c1, c2, c3] = cfg.channels[..] else {
            return Err(Error::Config("audio encoder needs exactly three conv widths".into()));
        };
        let (k, p) = (cfg.kernel, cfg.padding);
        Ok(AudioEncoder {
            conv1: Conv1d::new(&mut pb.sub("conv1"), cfg.coeffs, c1, k, 1, p)?,
            bn1: BatchNorm::new(&mut pb.sub("bn1"), c1)?,
            conv2: Conv1d::new(&mut pb.sub("conv2"), c1, c2, k, 1, p)?,
            bn2: BatchNorm::new(&mut pb.sub("bn2"), c2)?,
            conv3: Conv1d::new(&mut pb.sub("conv3"), c2, c3, k, 1, p)?,
            bn3: BatchNorm::new(&mut pb.sub("bn3"), c3)?,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &AudioConfig {
        &self.cfg
    }

    /// Output map before flattening: `batch × channels × len`.
    pub fn feature_map(&self, x: &ModalityFeatures<T>, ctx: &mut ForwardCtx) -> Result<Tensor<T>> {
        let x = x.expect(Modality::Audio)?;
        if x.shape()[1] != self.cfg.coeffs {
            return Err(Error::ShapeMismatch {
                op: "audio_encode",
                lhs: vec![x.shape()[0], self.cfg.coeffs, x.shape()[2]],
                rhs: x.shape().to_vec(),
            });
        }
        let frames = x.shape()[2];
        if self.cfg.output_len(frames).is_none() {
            return Err(Error::InvalidTensor(format!(
                "audio input of {frames} frames is too short for kernel {} and pool {}",
                self.cfg.kernel, self.cfg.pool
            )));
        }
        let h = self.bn1.forward(&self.conv1.forward(x)?.relu(), ctx)?;
        let h = self.conv2.forward(&h)?.relu();
        let h = tensor::maxpool1d(&h, self.cfg.pool, self.cfg.pool)?;
        let h = self.bn2.forward(&h, ctx)?;
        let h = tensor::dropout(&h, self.cfg.dropout, ctx.train, &mut ctx.rng)?;
        self.bn3.forward(&self.conv3.forward(&h)?.relu(), ctx)
    }

    /// `batch × d_f`.
    pub fn encode(&self, x: &ModalityFeatures<T>, ctx: &mut ForwardCtx) -> Result<Tensor<T>> {
        self.feature_map(x, ctx)?.flatten(1)
    }

    /// Activations of the first convolution before ReLU and BN.
    pub fn first_conv(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.conv1.forward(x)
    }
}

/// conv→BN→ReLU→conv→BN plus a shortcut (identity, or strided 1×1×1 conv + BN
/// when the shape changes).
pub struct VisualStage<T: Real> {
    conv_a: Conv3d<T>,
    bn_a: BatchNorm<T>,
    conv_b: Conv3d<T>,
    bn_b: BatchNorm<T>,
    shortcut: Option<(Conv3d<T>, BatchNorm<T>)>,
}

impl<T: Real> VisualStage<T> {
    fn new(
        pb: &mut ParamBuilder<'_, T>,
        cin: usize,
        cout: usize,
        stride: usize,
        kernel: usize,
        groups: usize,
    ) -> Result<Self> {
        let pad = kernel / 2;
        let conv_a = Conv3d::new(
            &mut pb.sub("conv_a"),
            cin,
            cout,
            kernel,
            Conv3dOpts::uniform(stride, pad),
            false,
        )?;
        let bn_a = BatchNorm::new(&mut pb.sub("bn_a"), cout)?;
        let opts_b = Conv3dOpts {
            groups,
            ..Conv3dOpts::uniform(1, pad)
        };
        let conv_b = Conv3d::new(&mut pb.sub("conv_b"), cout, cout, kernel, opts_b, false)?;
        let bn_b = BatchNorm::new(&mut pb.sub("bn_b"), cout)?;
        let shortcut = if stride != 1 || cin != cout {
            Some((
                Conv3d::new(
                    &mut pb.sub("short"),
                    cin,
                    cout,
                    1,
                    Conv3dOpts::uniform(stride, 0),
                    false,
                )?,
                BatchNorm::new(&mut pb.sub("short_bn"), cout)?,
            ))
        } else {
            None
        };
        Ok(VisualStage {
            conv_a,
            bn_a,
            conv_b,
            bn_b,
            shortcut,
        })
    }

    pub fn shortcut_forward(&self, x: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        match &self.shortcut {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, ctx),
            None => Ok(x.clone()),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        let h = self.bn_a.forward(&self.conv_a.forward(x)?, ctx)?.relu();
        let h = self.bn_b.forward(&self.conv_b.forward(&h)?, ctx)?;
        h.add(&self.shortcut_forward(x, ctx)?)
    }

    /// Weight of the stage's last convolution.
    pub fn last_conv_weight(&self) -> &Tensor<T> {
        &self.conv_b.weight
    }
}

/// Residual 3-D CNN producing a `batch × C × S × H × W` feature map.
pub struct VisualEncoder<T: Real> {
    cfg: VisualConfig,
    stages: Vec<VisualStage<T>>,
}

impl<T: Real> VisualEncoder<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, cfg: &VisualConfig) -> Result<Self> {
        let mut stages = Vec::with_capacity(cfg.stages.len());
        let mut cin = cfg.in_channels;
        for (i, (&cout, &stride)) in cfg.stages.iter().zip(&cfg.strides).enumerate() {
            let groups = if cout % cfg.groups == 0 { cfg.groups } else { 1 };
            stages.push(VisualStage::new(
                &mut pb.sub(&format!("stage{i}")),
                cin,
                cout,
                stride,
                cfg.kernel,
                groups,
            )?);
            cin = cout;
        }
        Ok(VisualEncoder {
            cfg: cfg.clone(),
            stages,
        })
    }

    pub fn stages(&self) -> &[VisualStage<T>] {
        &self.stages
    }

    /// Output extents `[C, S, H, W]` for an input clip of `[frames, h, w]`.
    pub fn output_extents(&self, input: [usize; 3]) -> [usize; 4] {
        let s = self.cfg.total_stride();
        [self.cfg.out_channels(), input[0] / s, input[1] / s, input[2] / s]
    }

    pub fn encode(&self, x: &ModalityFeatures<T>, ctx: &mut ForwardCtx) -> Result<Tensor<T>> {
        let x = x.expect(Modality::Visual)?;
        if x.shape()[1] != self.cfg.in_channels {
            return Err(Error::ShapeMismatch {
                op: "visual_encode",
                lhs: vec![x.shape()[0], self.cfg.in_channels],
                rhs: x.shape().to_vec(),
            });
        }
        let s = self.cfg.total_stride();
        if x.shape()[2..].iter().any(|&e| e % s != 0) {
            return Err(Error::InvalidTensor(format!(
                "visual extents {:?} are not divisible by the stride chain {:?} (product {s})",
                &x.shape()[2..],
                self.cfg.strides
            )));
        }
        let mut h = x.clone();
        for stage in &self.stages {
            h = stage.forward(&h, ctx)?;
        }
        Ok(h)
    }
}

/// Per-token affine projection of word embeddings.
pub struct TextEncoder<T: Real> {
    cfg: TextConfig,
    pub proj: Linear<T>,
}

impl<T: Real> TextEncoder<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, cfg: &TextConfig) -> Result<Self> {
        Ok(TextEncoder {
            proj: Linear::new(&mut pb.sub("proj"), cfg.embed_dim, cfg.width, true)?,
            cfg: cfg.clone(),
        })
    }

    /// `batch × tokens × embed_dim` to `batch × tokens × width`.
    pub fn encode(&self, x: &ModalityFeatures<T>) -> Result<Tensor<T>> {
        let x = x.expect(Modality::Text)?;
        if x.shape()[2] != self.cfg.embed_dim {
            return Err(Error::ShapeMismatch {
                op: "text_encode",
                lhs: vec![self.cfg.embed_dim],
                rhs: vec![x.shape()[2]],
            });
        }
        self.proj.forward(x)
    }
}
