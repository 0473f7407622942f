//! End-to-end model: encoders, a fusion stage, an affine classification head,
//! and the single- and multi-label losses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::McaFusion;
use crate::config::{FusionConfig, FusionMode, Modalities, Task};
use crate::encoders::{global_avg_pool, AudioEncoder, Modality, ModalityFeatures, TextEncoder, VisualEncoder};
use crate::error::{Error, Result};
use crate::fusion::{BidirectionalFusion, BlockSettings, Directions, TrimodalFusion};
use crate::nn::{ForwardCtx, Linear, ModelParams, ParamBuilder};
use crate::tensor::{self, Real, Tensor};

/// Prefix shared by every fusion-stage parameter.
pub const FUSION_PREFIX: &str = "fusion.";

/// One mini-batch of raw modality features.
#[derive(Clone)]
pub struct Batch<T: Real> {
    /// `b × coeffs × frames`.
    pub audio: Tensor<T>,
    /// `b × channels × frames × height × width`.
    pub visual: Tensor<T>,
    /// `b × tokens × embed_dim`, for audio-visual-text models.
    pub text: Option<Tensor<T>>,
}

pub struct Prediction<T: Real> {
    pub logits: Tensor<T>,
    pub probabilities: Tensor<T>,
    pub task: Task,
}

impl<T: Real> Prediction<T> {
    /// Argmax class per row (single-label) .
    pub fn argmax(&self) -> Vec<usize> {
        let n = self.logits.shape()[1];
        self.probabilities
            .data()
            .chunks(n)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(
                        (0, T::neg_infinity()),
                        |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                    )
                    .0
            })
            .collect()
    }

    /// Per-cell decisions at probability threshold 0.5 (multi-label).
    pub fn thresholded(&self) -> Vec<Vec<bool>> {
        let n = self.logits.shape()[1];
        self.probabilities
            .data()
            .chunks(n)
            .map(|row| row.iter().map(|&p| p.f64() >= 0.5).collect())
            .collect()
    }
}

/// Affine head followed by the task's probability transform.
pub fn classify<T: Real>(joint: &Tensor<T>, head: &Linear<T>, task: Task) -> Result<Prediction<T>> {
    if joint.rank() != 2 || joint.shape()[1] != head.in_dim() {
        return Err(Error::ShapeMismatch {
            op: "classify",
            lhs: vec![head.in_dim()],
            rhs: joint.shape().to_vec(),
        });
    }
    let logits = head.forward(joint)?;
    let probabilities = match task {
        Task::SingleLabel => logits.detach().softmax(1)?,
        Task::MultiLabel => logits.detach().sigmoid(),
    };
    Ok(Prediction {
        logits,
        probabilities,
        task,
    })
}

fn check_binary<T: Real>(op: &str, y: &Tensor<T>) -> Result<()> {
    if let Some(v) = y.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        return Err(Error::InvalidLabel(format!(
            "{op}: target entry {} is not 0 or 1",
            v.f64()
        )));
    }
    Ok(())
}

/// Mean over the batch of `−log softmax(logits)[true]`, from one-hot targets.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() != 2 || logits.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    check_binary("cross_entropy", y)?;
    let n = y.shape()[1];
    for (i, row) in y.data().chunks(n).enumerate() {
        if row.iter().filter(|&&v| v == T::one()).count() != 1 {
            return Err(Error::InvalidLabel(format!(
                "cross_entropy: target row {i} is not one-hot"
            )));
        }
    }
    let b = T::of(logits.shape()[0] as f64);
    Ok(logits.log_softmax(1)?.mul(y)?.sum_all().scale(-T::one() / b))
}

/// Mean binary cross-entropy over every (sample, class) cell.
pub fn multilabel_loss<T: Real>(logits: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    check_binary("multilabel_loss", y)?;
    logits.bce_with_logits(y)
}

pub fn loss<T: Real>(pred: &Prediction<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    match pred.task {
        Task::SingleLabel => cross_entropy(&pred.logits, y),
        Task::MultiLabel => multilabel_loss(&pred.logits, y),
    }
}

pub enum FusionStage<T: Real> {
    Adaptive(BidirectionalFusion<T>),
    Trimodal(TrimodalFusion<T>),
    Mca(McaFusion<T>),
    Concat,
}

/// Width of the joint representation the head receives.
pub fn joint_width(cfg: &FusionConfig) -> usize {
    let c_a = cfg.encoders.audio.out_channels();
    let c_v = cfg.encoders.visual.out_channels();
    let w = cfg.encoders.text.width;
    match (cfg.modalities, cfg.mode) {
        (Modalities::Av, FusionMode::Concat) => c_a + c_v,
        (Modalities::Av, FusionMode::McaBaseline) => 2 * cfg.attention.model_dim,
        (Modalities::Av, FusionMode::A2v) => c_v,
        (Modalities::Av, FusionMode::V2a) => c_a,
        (Modalities::Av, _) => c_a + c_v,
        (Modalities::Avt, FusionMode::Concat) => c_a + c_v + w,
        (Modalities::Avt, _) => 2 * w,
    }
}

pub struct Model<T: Real> {
    cfg: FusionConfig,
    params: ModelParams<T>,
    pub audio: AudioEncoder<T>,
    pub visual: VisualEncoder<T>,
    pub text: Option<TextEncoder<T>>,
    pub fusion: FusionStage<T>,
    pub head: Linear<T>,
}

impl<T: Real> Model<T> {
    /// Builds and initializes a model. Encoders and head are drawn before the
    /// fusion stage, so two modes with equal head width share every
    /// non-fusion initial value under the same seed.
    pub fn new(cfg: &FusionConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut params, &mut rng);
        let audio = AudioEncoder::new(&mut pb.sub("encoder.audio"), &cfg.encoders.audio)?;
        let visual = VisualEncoder::new(&mut pb.sub("encoder.visual"), &cfg.encoders.visual)?;
        let text = match cfg.modalities {
            Modalities::Avt => Some(TextEncoder::new(&mut pb.sub("encoder.text"), &cfg.encoders.text)?),
            Modalities::Av => None,
        };
        let head = Linear::new(&mut pb.sub("head"), joint_width(cfg), cfg.classes, true)?;

        let c_a = cfg.encoders.audio.out_channels();
        let c_v = cfg.encoders.visual.out_channels();
        let settings = BlockSettings {
            selector_depth: if cfg.mode == FusionMode::NoSelfattn {
                0
            } else {
                cfg.selector_depth
            },
            residual: cfg.mode != FusionMode::NoResidual,
        };
        let mut fb = pb.sub("fusion");
        let fusion = match (cfg.modalities, cfg.mode) {
            (_, FusionMode::Concat) => FusionStage::Concat,
            (Modalities::Av, FusionMode::McaBaseline) => {
                FusionStage::Mca(McaFusion::new(&mut fb.sub("mca"), c_a, c_v, &cfg.attention)?)
            }
            (Modalities::Av, mode) => {
                let dirs = match mode {
                    FusionMode::A2v => Directions::AudioToVisual,
                    FusionMode::V2a => Directions::VisualToAudio,
                    _ => Directions::Both,
                };
                FusionStage::Adaptive(BidirectionalFusion::new(
                    &mut fb,
                    c_a,
                    c_v,
                    dirs,
                    &settings,
                    &cfg.attention,
                )?)
            }
            (Modalities::Avt, _) => FusionStage::Trimodal(TrimodalFusion::new(
                &mut fb,
                c_a,
                c_v,
                cfg.encoders.text.width,
                &settings,
                &cfg.attention,
            )?),
        };
        Ok(Model {
            cfg: cfg.clone(),
            params,
            audio,
            visual,
            text,
            fusion,
            head,
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn param_count(&self, prefix: &str) -> usize {
        self.params.param_count(prefix)
    }

    /// Runs the encoders and fusion stage, returning `batch × d_I`.
    pub fn joint(&self, batch: &Batch<T>, ctx: &mut ForwardCtx) -> Result<Tensor<T>> {
        let audio = ModalityFeatures::new(Modality::Audio, batch.audio.clone())?;
        let visual = ModalityFeatures::new(Modality::Visual, batch.visual.clone())?;
        let a_map = self.audio.feature_map(&audio, ctx)?;
        let v_map = self.visual.encode(&visual, ctx)?;
        let text = match (&self.text, &batch.text) {
            (Some(enc), Some(t)) => Some(enc.encode(&ModalityFeatures::new(Modality::Text, t.clone())?)?),
            (Some(_), None) => return Err(Error::InvalidTensor("model expects text features".into())),
            (None, _) => None,
        };
        match (&self.fusion, text) {
            (FusionStage::Concat, text) => {
                let mut parts = vec![global_avg_pool(&a_map)?, global_avg_pool(&v_map)?];
                if let Some(t) = text {
                    parts.push(t.mean_axis(1, false)?);
                }
                tensor::concat(&parts, 1)
            }
            (FusionStage::Mca(m), _) => m.forward(&a_map, &v_map),
            (FusionStage::Adaptive(f), _) => Ok(f.forward(&a_map, &v_map)?.joint),
            (FusionStage::Trimodal(f), Some(t)) => Ok(f.forward(&a_map, &v_map, &t)?.joint),
            (FusionStage::Trimodal(_), None) => Err(Error::InvalidTensor("model expects text features".into())),
        }
    }

    pub fn forward(&self, batch: &Batch<T>, ctx: &mut ForwardCtx) -> Result<Prediction<T>> {
        classify(&self.joint(batch, ctx)?, &self.head, self.cfg.task)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check_leaves;
    use rand::Rng;

    fn random(seed: u64, shape: &[usize]) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
    }

    fn head(input: usize, out: usize) -> (Linear<f64>, ModelParams<f64>) {
        let mut store = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = Linear::new(&mut ParamBuilder::new(&mut store, &mut rng), input, out, true).unwrap();
        (h, store)
    }

    fn one_hot(labels: &[usize], n: usize) -> Tensor<f64> {
        let mut v = vec![0.0; labels.len() * n];
        for (i, &l) in labels.iter().enumerate() {
            v[i * n + l] = 1.0;
        }
        Tensor::new(v, &[labels.len(), n]).unwrap()
    }

    #[test]
    fn zero_head_is_uniform() {
        let (h, _) = head(5, 8);
        h.weight.data_mut().fill(0.0);
        let p = classify(&random(1, &[3, 5]), &h, Task::SingleLabel).unwrap();
        assert!(p.probabilities.data().iter().all(|&v| (v - 0.125).abs() < 1e-15));
    }

    #[test]
    fn identity_head_picks_hot_index() {
        let (h, _) = head(4, 4);
        h.weight.data_mut().copy_from_slice(&Tensor::<f64>::eye(4).to_vec());
        let p = classify(&one_hot(&[2, 0], 4), &h, Task::SingleLabel).unwrap();
        assert_eq!(p.argmax(), vec![2, 0]);
        assert!(classify(&random(1, &[2, 3]), &h, Task::SingleLabel).is_err());
    }

    #[test]
    fn cross_entropy_analytic_values() {
        let uniform8 = cross_entropy(&Tensor::zeros(&[2, 8]), &one_hot(&[1, 5], 8)).unwrap();
        assert!((uniform8.item() - 8f64.ln()).abs() < 1e-12);
        let uniform4 = cross_entropy(&Tensor::zeros(&[1, 4]), &one_hot(&[3], 4)).unwrap();
        assert!((uniform4.item() - 4f64.ln()).abs() < 1e-12);
        let sure = Tensor::new(vec![800.0, 0.0, 0.0], &[1, 3]).unwrap();
        assert_eq!(cross_entropy(&sure, &one_hot(&[0], 3)).unwrap().item(), 0.0);
    }

    #[test]
    fn cross_entropy_rejects_bad_targets() {
        let logits = Tensor::<f64>::zeros(&[1, 3]);
        let two_hot = Tensor::new(vec![1.0, 1.0, 0.0], &[1, 3]).unwrap();
        assert!(matches!(cross_entropy(&logits, &two_hot), Err(Error::InvalidLabel(_))));
        let soft = Tensor::new(vec![0.5, 0.5, 0.0], &[1, 3]).unwrap();
        assert!(matches!(cross_entropy(&logits, &soft), Err(Error::InvalidLabel(_))));
    }

    #[test]
    fn cross_entropy_gradient_closed_form() {
        let logits = random(2, &[3, 4]).as_leaf(true);
        let y = one_hot(&[0, 3, 1], 4);
        cross_entropy(&logits, &y).unwrap().backward().unwrap();
        let p = logits.detach().softmax(1).unwrap().to_vec();
        for ((g, p), y) in logits.grad().unwrap().iter().zip(p).zip(y.to_vec()) {
            assert!((g - (p - y) / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn multilabel_analytic_values() {
        let y = Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let zero = multilabel_loss(&Tensor::zeros(&[2, 2]), &y).unwrap();
        assert!((zero.item() - 2f64.ln()).abs() < 1e-12);
        let sat = Tensor::new(vec![20.0, -20.0, -20.0, 20.0], &[2, 2]).unwrap();
        assert!(multilabel_loss(&sat, &y).unwrap().item() < 1e-6);
        let bad = Tensor::new(vec![2.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        assert!(multilabel_loss(&sat, &bad).is_err());
    }

    #[test]
    fn loss_of_classify_grad_checks() {
        let (h, store) = head(5, 3);
        let x = random(4, &[2, 5]).as_leaf(true);
        let y = one_hot(&[2, 1], 3);
        let mut leaves = vec![x.clone()];
        leaves.extend(store.params().map(|(_, t)| t.clone()));
        let r = grad_check_leaves(
            || cross_entropy(&classify(&x, &h, Task::SingleLabel)?.logits, &y),
            &leaves,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r}");
        let yb = Tensor::new(vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0], &[2, 3]).unwrap();
        let r = grad_check_leaves(
            || multilabel_loss(&classify(&x, &h, Task::MultiLabel)?.logits, &yb),
            &leaves,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r}");
    }

    fn desk_batch(cfg: &FusionConfig, b: usize) -> Batch<f64> {
        Batch {
            audio: random(5, &[b, 13, 20]),
            visual: random(6, &[b, 3, 4, 8, 8]),
            text: (cfg.modalities == Modalities::Avt).then(|| random(7, &[b, 3, cfg.encoders.text.embed_dim])),
        }
    }

    #[test]
    fn every_mode_runs_with_declared_width() {
        for mode in FusionMode::ALL {
            let cfg = FusionConfig {
                mode,
                ..FusionConfig::desk()
            };
            let m = Model::<f64>::new(&cfg, 1).unwrap();
            let j = m.joint(&desk_batch(&cfg, 2), &mut ForwardCtx::eval()).unwrap();
            assert_eq!(j.shape(), &[2, joint_width(&cfg)], "{mode}");
            let p = m.forward(&desk_batch(&cfg, 2), &mut ForwardCtx::eval()).unwrap();
            for row in p.probabilities.to_vec().chunks(cfg.classes) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        for mode in [FusionMode::Adaptive, FusionMode::Concat, FusionMode::NoResidual] {
            let cfg = FusionConfig {
                mode,
                ..FusionConfig::trimodal()
            };
            let m = Model::<f64>::new(&cfg, 1).unwrap();
            let p = m.forward(&desk_batch(&cfg, 2), &mut ForwardCtx::eval()).unwrap();
            assert_eq!(p.logits.shape(), &[2, 4]);
            assert_eq!(p.thresholded().len(), 2);
        }
    }

    #[test]
    fn concat_differs_only_in_fusion_params() {
        let a = Model::<f32>::new(&FusionConfig::desk(), 9).unwrap();
        let c = Model::<f32>::new(
            &FusionConfig {
                mode: FusionMode::Concat,
                ..FusionConfig::desk()
            },
            9,
        )
        .unwrap();
        for (name, t) in c.params().params() {
            assert!(!name.starts_with(FUSION_PREFIX));
            assert_eq!(a.params().get(name).unwrap().to_vec(), t.to_vec(), "{name}");
        }
        for name in a.params().names() {
            assert!(name.starts_with(FUSION_PREFIX) || c.params().get(&name).is_some());
        }
        assert_eq!(a.param_count("") - c.param_count(""), a.param_count(FUSION_PREFIX));
    }

    #[test]
    fn param_count_is_additive() {
        let m = Model::<f32>::new(&FusionConfig::desk(), 0).unwrap();
        let parts: usize = ["encoder.", "fusion.", "head."].iter().map(|p| m.param_count(p)).sum();
        assert_eq!(parts, m.param_count(""));
    }

    #[test]
    fn default_model_fusion_share_is_small() {
        let m = Model::<f32>::new(&FusionConfig::default(), 0).unwrap();
        let share = m.param_count(FUSION_PREFIX) as f64 / m.param_count("") as f64;
        assert!(share > 0.0 && share < 0.05, "{share}");
    }
}
