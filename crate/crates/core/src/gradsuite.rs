//! Finite-difference gradient checks over every differentiable primitive and
//! every composed block, at 64-bit precision.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{McaFusion, TransformerLayer};
use crate::config::{AttentionConfig, AudioConfig, Task, TextConfig};
use crate::encoders::{AudioEncoder, Modality, ModalityFeatures, TextEncoder, VisualStage};
use crate::error::{Error, Result};
use crate::fusion::{fuse_gate, reinforce, AdaptiveBlock, BlockSettings, Selector, TrimodalFusion};
use crate::model::{classify, cross_entropy, multilabel_loss};
use crate::nn::{ForwardCtx, Linear, ModelParams, ParamBuilder};
use crate::tensor::{self, grad_check_leaves, BatchNormState, Conv3dOpts, GradCheckReport, Tensor, NORM_EPS};

/// Tolerance for single primitives.
pub const PRIMITIVE_TOL: f64 = 1e-4;
/// Tolerance for composed blocks.
pub const COMPOSED_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Primitive,
    Encoder,
    Attention,
    Fusion,
    Model,
}

impl Group {
    pub fn tol(self) -> f64 {
        match self {
            Group::Primitive => PRIMITIVE_TOL,
            _ => COMPOSED_TOL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Primitive => "primitive",
            Group::Encoder => "encoder",
            Group::Attention => "attention",
            Group::Fusion => "fusion",
            Group::Model => "model",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub group: Group,
    pub max_rel_error: f64,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

type Check = fn(f64) -> Result<GradCheckReport>;

fn rand_t(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(lo..hi)).collect(), shape).expect("valid shape")
}

fn leaf(seed: u64, shape: &[usize]) -> Tensor<f64> {
    rand_t(seed, shape, -1.0, 1.0).as_leaf(true)
}

/// Fixed weights that turn any output into a scalar with a non-trivial
/// gradient everywhere.
fn probe(y: &Tensor<f64>) -> Result<Tensor<f64>> {
    let w = rand_t(0xbeef, y.shape(), -1.0, 1.0);
    Ok(y.mul(&w)?.sum_all())
}

fn unary(f: fn(&Tensor<f64>) -> Result<Tensor<f64>>, x: Tensor<f64>, tol: f64) -> Result<GradCheckReport> {
    grad_check_leaves(|| probe(&f(&x)?), std::slice::from_ref(&x), tol)
}

fn binary(
    f: fn(&Tensor<f64>, &Tensor<f64>) -> Result<Tensor<f64>>,
    a: Tensor<f64>,
    b: Tensor<f64>,
    tol: f64,
) -> Result<GradCheckReport> {
    grad_check_leaves(|| probe(&f(&a, &b)?), &[a.clone(), b.clone()], tol)
}

fn with_params<M>(seed: u64, f: impl FnOnce(&mut ParamBuilder<'_, f64>) -> Result<M>) -> Result<(M, Vec<Tensor<f64>>)> {
    let mut store = ModelParams::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = f(&mut ParamBuilder::new(&mut store, &mut rng))?;
    // move every parameter off its initial constant so affine and bias
    // gradients are exercised at generic points
    let mut jitter = ChaCha8Rng::seed_from_u64(seed ^ 0x51);
    for (_, t) in store.params() {
        for v in t.data_mut().iter_mut() {
            *v += jitter.random_range(-0.2..0.2);
        }
    }
    let leaves = store.params().map(|(_, t)| t.clone()).collect();
    Ok((m, leaves))
}

fn small_attention() -> AttentionConfig {
    AttentionConfig {
        model_dim: 8,
        heads: 2,
        layers: 1,
        mlp_ratio: 2,
    }
}

const CHECKS: &[(&str, Group, Check)] = &[
    ("add_broadcast", Group::Primitive, |t| {
        binary(|a, b| a.add(b), leaf(1, &[2, 3, 4]), leaf(2, &[3, 1]), t)
    }),
    ("sub_broadcast", Group::Primitive, |t| {
        binary(|a, b| a.sub(b), leaf(3, &[2, 3]), leaf(4, &[3]), t)
    }),
    ("mul_broadcast", Group::Primitive, |t| {
        binary(|a, b| a.mul(b), leaf(5, &[2, 1, 4]), leaf(6, &[3, 4]), t)
    }),
    ("div", Group::Primitive, |t| {
        binary(
            |a, b| a.div(b),
            leaf(7, &[2, 3]),
            rand_t(8, &[2, 3], 0.5, 2.0).as_leaf(true),
            t,
        )
    }),
    ("relu", Group::Primitive, |t| {
        unary(|x| Ok(x.relu()), leaf(9, &[3, 4]), t)
    }),
    ("tanh", Group::Primitive, |t| {
        unary(|x| Ok(x.tanh()), leaf(10, &[3, 4]), t)
    }),
    ("sigmoid", Group::Primitive, |t| {
        unary(|x| Ok(x.sigmoid()), leaf(11, &[3, 4]), t)
    }),
    ("exp", Group::Primitive, |t| {
        unary(|x| Ok(x.exp()), leaf(12, &[3, 4]), t)
    }),
    ("ln", Group::Primitive, |t| {
        unary(|x| Ok(x.ln()), rand_t(13, &[3, 4], 0.5, 3.0).as_leaf(true), t)
    }),
    ("scale_shift", Group::Primitive, |t| {
        unary(|x| Ok(x.scale(-1.7).add_scalar(0.3).neg()), leaf(14, &[5]), t)
    }),
    ("sum_axis", Group::Primitive, |t| {
        unary(|x| x.sum_axis(1, false), leaf(15, &[2, 3, 4]), t)
    }),
    ("mean_axis", Group::Primitive, |t| {
        unary(|x| x.mean_axis(2, true), leaf(16, &[2, 3, 4]), t)
    }),
    ("softmax", Group::Primitive, |t| {
        unary(|x| x.softmax(1), leaf(17, &[2, 5, 3]), t)
    }),
    ("log_softmax", Group::Primitive, |t| {
        unary(|x| x.log_softmax(2), leaf(18, &[2, 3, 5]), t)
    }),
    ("matmul_batched", Group::Primitive, |t| {
        binary(|a, b| a.matmul(b), leaf(19, &[2, 1, 3, 4]), leaf(20, &[3, 4, 2]), t)
    }),
    ("reshape_permute", Group::Primitive, |t| {
        unary(
            |x| {
                x.reshape(&[4, 6])?
                    .transpose(0, 1)?
                    .reshape(&[2, 3, 4])?
                    .permute(&[2, 0, 1])
            },
            leaf(21, &[2, 3, 4]),
            t,
        )
    }),
    ("narrow", Group::Primitive, |t| {
        unary(|x| x.narrow(1, 1, 2), leaf(22, &[2, 4, 3]), t)
    }),
    ("concat", Group::Primitive, |t| {
        binary(
            |a, b| tensor::concat(&[a.clone(), b.clone()], 1),
            leaf(23, &[2, 2, 3]),
            leaf(24, &[2, 1, 3]),
            t,
        )
    }),
    ("conv1d", Group::Primitive, |t| {
        let (x, w, b) = (leaf(25, &[2, 3, 7]), leaf(26, &[4, 3, 3]), leaf(27, &[4]));
        grad_check_leaves(
            || probe(&tensor::conv1d(&x, &w, Some(&b), 2, 1)?),
            &[x.clone(), w.clone(), b.clone()],
            t,
        )
    }),
    ("conv3d_grouped", Group::Primitive, |t| {
        let (x, w, b) = (leaf(28, &[1, 4, 3, 4, 4]), leaf(29, &[4, 2, 3, 3, 3]), leaf(30, &[4]));
        let opts = Conv3dOpts {
            groups: 2,
            ..Conv3dOpts::uniform(2, 1)
        };
        grad_check_leaves(
            || probe(&tensor::conv3d(&x, &w, Some(&b), opts)?),
            &[x.clone(), w.clone(), b.clone()],
            t,
        )
    }),
    ("maxpool1d", Group::Primitive, |t| {
        unary(|x| tensor::maxpool1d(x, 2, 2), leaf(31, &[2, 3, 8]), t)
    }),
    ("layer_norm", Group::Primitive, |t| {
        let (x, g, b) = (leaf(32, &[2, 3, 6]), leaf(33, &[6]), leaf(34, &[6]));
        grad_check_leaves(
            || probe(&tensor::layer_norm(&x, Some(&g), Some(&b), NORM_EPS)?),
            &[x.clone(), g.clone(), b.clone()],
            t,
        )
    }),
    ("batch_norm_train", Group::Primitive, |t| {
        let (x, g, b) = (leaf(35, &[3, 4, 5]), leaf(36, &[4]), leaf(37, &[4]));
        let state = BatchNormState::new(4);
        grad_check_leaves(
            || probe(&tensor::batch_norm(&x, &g, &b, &state, true)?),
            &[x.clone(), g.clone(), b.clone()],
            t,
        )
    }),
    ("dropout_fixed_mask", Group::Primitive, |t| {
        let x = leaf(38, &[4, 5]);
        grad_check_leaves(
            || {
                let mut rng = ChaCha8Rng::seed_from_u64(3);
                probe(&tensor::dropout(&x, 0.3, true, &mut rng)?)
            },
            std::slice::from_ref(&x),
            t,
        )
    }),
    ("bce_with_logits", Group::Primitive, |t| {
        let x = rand_t(39, &[3, 4], -3.0, 3.0).as_leaf(true);
        let y = Tensor::new((0..12).map(|i| (i % 3 == 0) as u8 as f64).collect(), &[3, 4])?;
        grad_check_leaves(|| x.bce_with_logits(&y), std::slice::from_ref(&x), t)
    }),
    ("audio_encoder", Group::Encoder, |t| {
        let cfg = AudioConfig {
            channels: vec![4, 6, 5],
            dropout: 0.2,
            ..Default::default()
        };
        let (enc, mut leaves) = with_params(40, |pb| AudioEncoder::new(pb, &cfg))?;
        let x = leaf(41, &[2, 13, 12]);
        leaves.insert(0, x.clone());
        grad_check_leaves(
            || {
                let mut ctx = ForwardCtx::train(5);
                probe(&enc.encode(&ModalityFeatures::new(Modality::Audio, x.clone())?, &mut ctx)?)
            },
            &leaves,
            t,
        )
    }),
    ("visual_stage", Group::Encoder, |t| {
        let (stage, mut leaves) = with_params(42, |pb| {
            let cfg = crate::config::VisualConfig {
                stages: vec![4],
                strides: vec![2],
                ..crate::config::VisualConfig::two_stage()
            };
            crate::encoders::VisualEncoder::new(pb, &cfg)
        })?;
        let x = leaf(43, &[2, 3, 2, 4, 4]);
        leaves.insert(0, x.clone());
        let st: &VisualStage<f64> = &stage.stages()[0];
        grad_check_leaves(|| probe(&st.forward(&x, &ForwardCtx::train(0))?), &leaves, t)
    }),
    ("text_encoder", Group::Encoder, |t| {
        let cfg = TextConfig { embed_dim: 6, width: 4 };
        let (enc, mut leaves) = with_params(44, |pb| TextEncoder::new(pb, &cfg))?;
        let x = leaf(45, &[2, 3, 6]);
        leaves.insert(0, x.clone());
        grad_check_leaves(
            || probe(&enc.encode(&ModalityFeatures::new(Modality::Text, x.clone())?)?),
            &leaves,
            t,
        )
    }),
    ("msa_layer", Group::Attention, |t| {
        let (l, mut leaves) = with_params(46, |pb| TransformerLayer::from_config(pb, &small_attention()))?;
        let h = leaf(47, &[2, 3, 8]);
        leaves.insert(0, h.clone());
        grad_check_leaves(|| probe(&l.msa(&h)?), &leaves, t)
    }),
    ("cross_transformer_layer", Group::Attention, |t| {
        let (l, mut leaves) = with_params(48, |pb| TransformerLayer::from_config(pb, &small_attention()))?;
        let (tg, src) = (leaf(49, &[2, 3, 8]), leaf(50, &[2, 4, 8]));
        leaves.splice(0..0, [tg.clone(), src.clone()]);
        grad_check_leaves(|| probe(&l.cross(&tg, &src)?), &leaves, t)
    }),
    ("mca_fusion", Group::Attention, |t| {
        let (m, mut leaves) = with_params(51, |pb| McaFusion::new(pb, 3, 4, &small_attention()))?;
        let (a, v) = (leaf(52, &[2, 3, 4]), leaf(53, &[2, 4, 1, 2, 2]));
        leaves.splice(0..0, [a.clone(), v.clone()]);
        grad_check_leaves(|| probe(&m.forward(&a, &v)?), &leaves, t)
    }),
    ("select_features", Group::Fusion, |t| {
        let (s, mut leaves) = with_params(54, |pb| Selector::new(pb, 5, 1, &small_attention()))?;
        let h = leaf(55, &[2, 3, 5]);
        leaves.insert(0, h.clone());
        grad_check_leaves(|| probe(&s.select(&h)?), &leaves, t)
    }),
    ("fuse_gate", Group::Fusion, |t| {
        let ((w_v, w_a), mut leaves) = with_params(56, |pb| {
            Ok((
                Linear::new(&mut pb.sub("v"), 3, 3, true)?,
                Linear::new(&mut pb.sub("a"), 4, 3, false)?,
            ))
        })?;
        let (xa, xv) = (leaf(57, &[2, 4]), leaf(58, &[2, 3, 2, 1, 2]));
        leaves.splice(0..0, [xa.clone(), xv.clone()]);
        grad_check_leaves(|| probe(&fuse_gate(&xa, &xv, &w_v, &w_a)?), &leaves, t)
    }),
    ("reinforce", Group::Fusion, |t| {
        let (g, x) = (leaf(59, &[2, 4, 2, 2, 1]), leaf(60, &[2, 4, 2, 2, 1]));
        grad_check_leaves(|| probe(&reinforce(&g, &x, true)?), &[g.clone(), x.clone()], t)
    }),
    ("adaptive_block", Group::Fusion, |t| {
        let (b, mut leaves) = with_params(61, |pb| AdaptiveBlock::new(pb, 4, 3, 3, 1, true, &small_attention()))?;
        let (src, tgt) = (leaf(62, &[2, 3, 4]), leaf(63, &[2, 3, 2, 1, 2]));
        leaves.splice(0..0, [src.clone(), tgt.clone()]);
        grad_check_leaves(|| probe(&b.forward(&src, &tgt)?), &leaves, t)
    }),
    ("trimodal_fuse", Group::Fusion, |t| {
        let settings = BlockSettings {
            selector_depth: 1,
            residual: true,
        };
        let (f, mut leaves) = with_params(64, |pb| TrimodalFusion::new(pb, 3, 4, 4, &settings, &small_attention()))?;
        let (a, v, x) = (leaf(65, &[1, 3, 3]), leaf(66, &[1, 4, 1, 1, 2]), leaf(67, &[1, 2, 4]));
        leaves.splice(0..0, [a.clone(), v.clone(), x.clone()]);
        grad_check_leaves(|| probe(&f.forward(&a, &v, &x)?.joint), &leaves, t)
    }),
    ("cross_entropy_classify", Group::Model, |t| {
        let (head, mut leaves) = with_params(68, |pb| Linear::new(pb, 6, 4, true))?;
        let x = leaf(69, &[3, 6]);
        leaves.insert(0, x.clone());
        let mut y = vec![0.0; 12];
        for (r, c) in [(0, 1), (1, 3), (2, 0)] {
            y[r * 4 + c] = 1.0;
        }
        let y = Tensor::new(y, &[3, 4])?;
        grad_check_leaves(
            || cross_entropy(&classify(&x, &head, Task::SingleLabel)?.logits, &y),
            &leaves,
            t,
        )
    }),
    ("multilabel_classify", Group::Model, |t| {
        let (head, mut leaves) = with_params(70, |pb| Linear::new(pb, 6, 4, true))?;
        let x = leaf(71, &[3, 6]);
        leaves.insert(0, x.clone());
        let y = Tensor::new((0..12).map(|i| (i % 2) as f64).collect(), &[3, 4])?;
        grad_check_leaves(
            || multilabel_loss(&classify(&x, &head, Task::MultiLabel)?.logits, &y),
            &leaves,
            t,
        )
    }),
];

/// Names accepted by [`run`]: every check name, every group name, and `all`.
pub fn selectors() -> Vec<&'static str> {
    let mut v = vec!["all", "primitive", "encoder", "attention", "fusion", "model"];
    v.extend(CHECKS.iter().map(|c| c.0));
    v
}

/// Runs the checks matching `selector`. `tol` overrides the per-group
/// tolerance when given.
pub fn run(selector: &str, tol: Option<f64>) -> Result<Vec<CheckResult>> {
    let chosen: Vec<_> = CHECKS
        .iter()
        .filter(|(name, group, _)| selector == "all" || selector == *name || selector == group.name())
        .collect();
    if chosen.is_empty() {
        return Err(Error::Config(format!(
            "unknown grad-check module `{selector}`; expected one of: {}",
            selectors().join(", ")
        )));
    }
    chosen
        .into_iter()
        .map(|(name, group, check)| {
            let tol = tol.unwrap_or(group.tol());
            let r = check(tol)?;
            Ok(CheckResult {
                name,
                group: *group,
                max_rel_error: r.max_rel_error,
                checked: r.checked,
                tol,
                passed: r.passed,
            })
        })
        .collect()
}

/// Runs everything and reports the wall time.
pub fn run_timed(selector: &str, tol: Option<f64>) -> Result<(Vec<CheckResult>, f64)> {
    let start = Instant::now();
    let r = run(selector, tol)?;
    Ok((r, start.elapsed().as_secs_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_selector_rejected() {
        assert!(run("nope", None).is_err());
    }

    #[test]
    fn fusion_group_passes() {
        for r in run("fusion", None).unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }
}
