//! Architecture and training hyperparameters, (de)serialized as TOML.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioConfig {
    /// MFCC coefficients per frame.
    pub coeffs: usize,
    /// Output widths of the three 1-D convolutions.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub padding: usize,
    pub pool: usize,
    pub dropout: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        AudioConfig {
            coeffs: 13,
            channels: vec![32, 64, 128],
            kernel: 3,
            padding: 0,
            pool: 2,
            dropout: 0.25,
        }
    }
}

impl AudioConfig {
    /// Temporal length of the encoder's output map for `frames` input frames.
    pub fn output_len(&self, frames: usize) -> Option<usize> {
        let conv = |len: usize| (len + 2 * self.padding).checked_sub(self.kernel).map(|v| v + 1);
        let l = conv(frames)?;
        let l = conv(l)?;
        let l = l.checked_sub(self.pool).map(|v| v / self.pool + 1)?;
        conv(l)
    }

    /// Flattened width `d_f` of the encoder output.
    pub fn flat_width(&self, frames: usize) -> Option<usize> {
        Some(self.out_channels() * self.output_len(frames)?)
    }

    pub fn out_channels(&self) -> usize {
        self.channels.last().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisualConfig {
    pub in_channels: usize,
    /// Output channels of each residual stage.
    pub stages: Vec<usize>,
    /// Stride of each stage, applied on all three axes.
    pub strides: Vec<usize>,
    pub kernel: usize,
    /// Groups of the second convolution in each stage.
    pub groups: usize,
}

impl Default for VisualConfig {
    fn default() -> Self {
        VisualConfig {
            in_channels: 3,
            stages: vec![64, 128, 256, 512],
            strides: vec![1, 2, 2, 2],
            kernel: 3,
            groups: 1,
        }
    }
}

impl VisualConfig {
    /// Two stride-2 stages, 3 → 16 → 32 channels.
    pub fn two_stage() -> Self {
        VisualConfig {
            stages: vec![16, 32],
            strides: vec![2, 2],
            ..Default::default()
        }
    }

    pub fn out_channels(&self) -> usize {
        self.stages.last().copied().unwrap_or(0)
    }

    pub fn total_stride(&self) -> usize {
        self.strides.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextConfig {
    pub embed_dim: usize,
    pub width: usize,
}

impl Default for TextConfig {
    fn default() -> Self {
        TextConfig {
            embed_dim: 300,
            width: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub audio: AudioConfig,
    pub visual: VisualConfig,
    pub text: TextConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub heads: usize,
    /// Cross-transformer depth of the MCA baseline.
    pub layers: usize,
    pub mlp_ratio: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            model_dim: 64,
            heads: 4,
            layers: 2,
            mlp_ratio: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SingleLabel,
    MultiLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modalities {
    /// Audio + visual.
    Av,
    /// Audio + visual + text, with text as the reinforced target.
    Avt,
}

/// Which fusion stage sits between the encoders and the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Both adaptive blocks (audio → visual and visual → audio).
    Adaptive,
    /// Stacked cross-transformer layers in both directions.
    McaBaseline,
    /// Pooled unimodal features concatenated, no fusion block.
    Concat,
    /// Only the block in which audio reinforces the visual map.
    A2v,
    /// Only the block in which visual reinforces the audio map.
    V2a,
    /// Adaptive blocks with the self-attention selector replaced by mean pooling.
    NoSelfattn,
    /// Adaptive blocks without the residual term.
    NoResidual,
}

impl FusionMode {
    pub const ALL: [FusionMode; 7] = [
        FusionMode::Adaptive,
        FusionMode::McaBaseline,
        FusionMode::Concat,
        FusionMode::A2v,
        FusionMode::V2a,
        FusionMode::NoSelfattn,
        FusionMode::NoResidual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Adaptive => "adaptive",
            FusionMode::McaBaseline => "mca_baseline",
            FusionMode::Concat => "concat",
            FusionMode::A2v => "a2v",
            FusionMode::V2a => "v2a",
            FusionMode::NoSelfattn => "no_selfattn",
            FusionMode::NoResidual => "no_residual",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Ok(match norm.as_str() {
            "adaptive" => FusionMode::Adaptive,
            "mca" | "mca_baseline" => FusionMode::McaBaseline,
            "concat" => FusionMode::Concat,
            "a2v" | "single_direction_a2v" | "a_>v" => FusionMode::A2v,
            "v2a" | "single_direction_v2a" | "v_>a" => FusionMode::V2a,
            "no_selfattn" | "no_self_attention" => FusionMode::NoSelfattn,
            "no_residual" => FusionMode::NoResidual,
            _ => return Err(Error::Config(format!("unknown fusion mode `{s}`"))),
        })
    }
}

/// Complete model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub task: Task,
    pub modalities: Modalities,
    pub mode: FusionMode,
    pub classes: usize,
    /// Self-attention layers in each feature selector.
    pub selector_depth: usize,
    pub encoders: EncoderConfig,
    pub attention: AttentionConfig,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            task: Task::SingleLabel,
            modalities: Modalities::Av,
            mode: FusionMode::Adaptive,
            classes: 8,
            selector_depth: 1,
            encoders: EncoderConfig::default(),
            attention: AttentionConfig::default(),
        }
    }
}

impl FusionConfig {
    /// Small audio-visual model sized for the synthetic data set.
    pub fn desk() -> Self {
        FusionConfig {
            classes: 4,
            encoders: EncoderConfig {
                audio: AudioConfig {
                    channels: vec![8, 16, 16],
                    dropout: 0.1,
                    ..Default::default()
                },
                visual: VisualConfig {
                    stages: vec![8, 16],
                    ..VisualConfig::two_stage()
                },
                text: TextConfig {
                    embed_dim: 16,
                    width: 16,
                },
            },
            attention: AttentionConfig {
                model_dim: 16,
                heads: 2,
                layers: 1,
                mlp_ratio: 2,
            },
            ..Default::default()
        }
    }

    /// Multi-label audio-visual-text model (four emotions).
    pub fn trimodal() -> Self {
        FusionConfig {
            task: Task::MultiLabel,
            modalities: Modalities::Avt,
            classes: 4,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let a = &self.encoders.audio;
        if a.channels.len() != 3 || a.channels.contains(&0) {
            return bad(format!(
                "audio.channels must hold three positive widths, got {:?}",
                a.channels
            ));
        }
        if a.coeffs == 0 || a.kernel == 0 || a.pool == 0 {
            return bad("audio coeffs, kernel and pool must be positive".into());
        }
        if !(0.0..1.0).contains(&a.dropout) {
            return bad(format!("audio.dropout must lie in [0, 1), got {}", a.dropout));
        }
        let v = &self.encoders.visual;
        if v.stages.is_empty() || v.stages.len() != v.strides.len() {
            return bad("visual.stages and visual.strides must be non-empty and equally long".into());
        }
        if v.stages.contains(&0) || v.strides.contains(&0) || v.in_channels == 0 {
            return bad("visual widths and strides must be positive".into());
        }
        if v.kernel.is_multiple_of(2) {
            return bad("visual.kernel must be odd".into());
        }
        if v.groups == 0 || v.stages.iter().any(|c| c % v.groups != 0) {
            return bad(format!("visual.groups = {} must divide every stage width", v.groups));
        }
        let t = &self.encoders.text;
        if t.embed_dim == 0 || t.width == 0 {
            return bad("text widths must be positive".into());
        }
        let at = &self.attention;
        if at.model_dim == 0 || at.heads == 0 || !at.model_dim.is_multiple_of(at.heads) {
            return bad(format!(
                "attention.model_dim ({}) must be a positive multiple of heads ({})",
                at.model_dim, at.heads
            ));
        }
        if at.mlp_ratio == 0 || at.layers == 0 {
            return bad("attention.layers and mlp_ratio must be positive".into());
        }
        if self.classes < 2 && self.task == Task::SingleLabel {
            return bad("single-label task needs at least two classes".into());
        }
        if self.classes == 0 {
            return bad("classes must be positive".into());
        }
        if self.modalities == Modalities::Avt
            && matches!(self.mode, FusionMode::McaBaseline | FusionMode::A2v | FusionMode::V2a)
        {
            return bad(format!("mode `{}` is only defined for audio-visual models", self.mode));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 8,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// On-disk run configuration: `[model]` and `[train]` tables.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: FusionConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Format {
            what: "config",
            detail: e.to_string(),
        })?;
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}
