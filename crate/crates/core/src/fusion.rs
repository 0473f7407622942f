//! Adaptive cross-modal blocks: a source modality is reduced to a selected
//! vector, fused with the target map into a tanh gate, and the gate's
//! channel softmax reweights the target (plus a residual copy).

use crate::attention::TransformerLayer;
use crate::config::AttentionConfig;
use crate::encoders::{global_avg_pool, map_to_sequence};
use crate::error::{Error, Result};
use crate::nn::{Linear, ParamBuilder};
use crate::tensor::{self, Real, Tensor};

/// `tanh((W_v x_V + b_v) ⊕ W_a x_A)`. `w_v` maps channels `C → k` at every
/// location of `x_v` (`b × C × …`); `w_a` maps `x_a` (`b × d_f`) to `k` and is
/// broadcast over the locations. Output is `b × k × …`.
pub fn fuse_gate<T: Real>(x_a: &Tensor<T>, x_v: &Tensor<T>, w_v: &Linear<T>, w_a: &Linear<T>) -> Result<Tensor<T>> {
    if x_v.rank() < 3 || x_a.rank() != 2 || x_a.shape()[0] != x_v.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "fuse_gate",
            lhs: x_a.shape().to_vec(),
            rhs: x_v.shape().to_vec(),
        });
    }
    let (b, c) = (x_v.shape()[0], x_v.shape()[1]);
    if c != w_v.in_dim() || x_a.shape()[1] != w_a.in_dim() {
        return Err(Error::ShapeMismatch {
            op: "fuse_gate",
            lhs: vec![w_a.in_dim(), w_v.in_dim()],
            rhs: vec![x_a.shape()[1], c],
        });
    }
    let k = w_v.out_dim();
    let local = w_v.forward(&map_to_sequence(x_v)?)?;
    let global = w_a.forward(x_a)?.reshape(&[b, 1, k])?;
    let gate = local.add(&global)?.tanh().transpose(1, 2)?;
    let mut shape = x_v.shape().to_vec();
    shape[1] = k;
    gate.reshape(&shape)
}

/// `softmax_C(gate) ⊗ x_v`, plus `x_v` when `residual` is set.
pub fn reinforce<T: Real>(gate: &Tensor<T>, x_v: &Tensor<T>, residual: bool) -> Result<Tensor<T>> {
    if gate.shape() != x_v.shape() {
        return Err(Error::ShapeMismatch {
            op: "reinforce",
            lhs: gate.shape().to_vec(),
            rhs: x_v.shape().to_vec(),
        });
    }
    let weighted = gate.softmax(1)?.mul(x_v)?;
    if residual {
        weighted.add(x_v)
    } else {
        Ok(weighted)
    }
}

/// Projects a source sequence to `model_dim`, runs `depth` self-attention
/// layers, and mean-pools to the selected vector `x_A`. With depth 0 it
/// reduces to projection and mean pooling.
pub struct Selector<T: Real> {
    pub proj: Linear<T>,
    pub layers: Vec<TransformerLayer<T>>,
}

impl<T: Real> Selector<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, in_dim: usize, depth: usize, cfg: &AttentionConfig) -> Result<Self> {
        let proj = Linear::new(&mut pb.sub("proj"), in_dim, cfg.model_dim, true)?;
        let layers = (0..depth)
            .map(|l| TransformerLayer::from_config(&mut pb.sub(&format!("msa{l}")), cfg))
            .collect::<Result<_>>()?;
        Ok(Selector { proj, layers })
    }

    pub fn out_dim(&self) -> usize {
        self.proj.out_dim()
    }

    /// `b × n × in_dim` to `b × model_dim`.
    pub fn select(&self, seq: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.proj.forward(seq)?;
        for l in &self.layers {
            h = l.msa(&h)?;
        }
        h.mean_axis(1, false)
    }
}

/// Intermediate values of one block evaluation.
pub struct BlockTrace<T: Real> {
    pub selected: Tensor<T>,
    pub gate: Tensor<T>,
    pub reinforced: Tensor<T>,
}

/// Selector, gate projections `W_v` (`C → k`, with `b_v`) and `W_a`
/// (`d_f → k`), and the reinforcement step.
pub struct AdaptiveBlock<T: Real> {
    pub selector: Selector<T>,
    pub w_v: Linear<T>,
    pub w_a: Linear<T>,
    pub residual: bool,
}

impl<T: Real> AdaptiveBlock<T> {
    /// `k` must equal `target_channels`; the gate reweights the target's
    /// own channels.
    pub fn new(
        pb: &mut ParamBuilder<'_, T>,
        source_channels: usize,
        target_channels: usize,
        k: usize,
        selector_depth: usize,
        residual: bool,
        cfg: &AttentionConfig,
    ) -> Result<Self> {
        if k != target_channels {
            return Err(Error::Config(format!(
                "gate width k = {k} must equal the target channel count {target_channels}"
            )));
        }
        let selector = Selector::new(&mut pb.sub("selector"), source_channels, selector_depth, cfg)?;
        let w_v = Linear::new(&mut pb.sub("w_v"), target_channels, k, true)?;
        let w_a = Linear::new(&mut pb.sub("w_a"), selector.out_dim(), k, false)?;
        Ok(AdaptiveBlock {
            selector,
            w_v,
            w_a,
            residual,
        })
    }

    /// `source_seq`: `b × n × C_src`; `target_map`: `b × C × …`.
    pub fn trace(&self, source_seq: &Tensor<T>, target_map: &Tensor<T>) -> Result<BlockTrace<T>> {
        let selected = self.selector.select(source_seq)?;
        let gate = fuse_gate(&selected, target_map, &self.w_v, &self.w_a)?;
        let reinforced = reinforce(&gate, target_map, self.residual)?;
        Ok(BlockTrace {
            selected,
            gate,
            reinforced,
        })
    }

    pub fn forward(&self, source_seq: &Tensor<T>, target_map: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.trace(source_seq, target_map)?.reinforced)
    }
}

/// Output of the audio-visual fusion stage. The joint vector concatenates
/// the pooled reinforced maps in the order `[v→a, a→v]`.
pub struct FusedRepresentation<T: Real> {
    /// Visual map reinforced by audio.
    pub forward_av: Option<Tensor<T>>,
    /// Audio map reinforced by visual.
    pub forward_va: Option<Tensor<T>>,
    pub joint: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Directions {
    Both,
    AudioToVisual,
    VisualToAudio,
}

/// One adaptive block per enabled direction.
pub struct BidirectionalFusion<T: Real> {
    pub a2v: Option<AdaptiveBlock<T>>,
    pub v2a: Option<AdaptiveBlock<T>>,
}

pub struct BlockSettings {
    pub selector_depth: usize,
    pub residual: bool,
}

impl<T: Real> BidirectionalFusion<T> {
    pub fn new(
        pb: &mut ParamBuilder<'_, T>,
        audio_channels: usize,
        visual_channels: usize,
        dirs: Directions,
        block: &BlockSettings,
        cfg: &AttentionConfig,
    ) -> Result<Self> {
        let make = |pb: &mut ParamBuilder<'_, T>, name: &str, src: usize, tgt: usize| {
            AdaptiveBlock::new(
                &mut pb.sub(name),
                src,
                tgt,
                tgt,
                block.selector_depth,
                block.residual,
                cfg,
            )
        };
        let a2v = match dirs {
            Directions::Both | Directions::AudioToVisual => Some(make(pb, "a2v", audio_channels, visual_channels)?),
            Directions::VisualToAudio => None,
        };
        let v2a = match dirs {
            Directions::Both | Directions::VisualToAudio => Some(make(pb, "v2a", visual_channels, audio_channels)?),
            Directions::AudioToVisual => None,
        };
        Ok(BidirectionalFusion { a2v, v2a })
    }

    pub fn output_width(&self) -> usize {
        self.a2v.as_ref().map_or(0, |b| b.w_v.out_dim()) + self.v2a.as_ref().map_or(0, |b| b.w_v.out_dim())
    }

    /// `audio_map`: `b × C_a × L`; `visual_map`: `b × C_v × S × H × W`.
    pub fn forward(&self, audio_map: &Tensor<T>, visual_map: &Tensor<T>) -> Result<FusedRepresentation<T>> {
        let forward_av = match &self.a2v {
            Some(block) => Some(block.forward(&map_to_sequence(audio_map)?, visual_map)?),
            None => None,
        };
        let forward_va = match &self.v2a {
            Some(block) => Some(block.forward(&map_to_sequence(visual_map)?, audio_map)?),
            None => None,
        };
        let pooled = [&forward_va, &forward_av]
            .into_iter()
            .flatten()
            .map(global_avg_pool)
            .collect::<Result<Vec<_>>>()?;
        let joint = if pooled.len() == 1 {
            pooled.into_iter().next().expect("one part")
        } else {
            tensor::concat(&pooled, 1)?
        };
        Ok(FusedRepresentation {
            forward_av,
            forward_va,
            joint,
        })
    }
}

pub struct TrimodalRepresentation<T: Real> {
    /// Text reinforced by audio (`b × W × tokens`).
    pub audio_text: Tensor<T>,
    /// Text reinforced by visual.
    pub visual_text: Tensor<T>,
    pub joint: Tensor<T>,
}

/// Audio and visual each reinforce the text sequence, read as a
/// `width × tokens` map.
pub struct TrimodalFusion<T: Real> {
    pub at: AdaptiveBlock<T>,
    pub vt: AdaptiveBlock<T>,
}

impl<T: Real> TrimodalFusion<T> {
    pub fn new(
        pb: &mut ParamBuilder<'_, T>,
        audio_channels: usize,
        visual_channels: usize,
        text_width: usize,
        block: &BlockSettings,
        cfg: &AttentionConfig,
    ) -> Result<Self> {
        let (d, r) = (block.selector_depth, block.residual);
        Ok(TrimodalFusion {
            at: AdaptiveBlock::new(&mut pb.sub("a2t"), audio_channels, text_width, text_width, d, r, cfg)?,
            vt: AdaptiveBlock::new(&mut pb.sub("v2t"), visual_channels, text_width, text_width, d, r, cfg)?,
        })
    }

    pub fn output_width(&self) -> usize {
        2 * self.at.w_v.out_dim()
    }

    /// `text`: `b × tokens × W` as produced by the text encoder.
    pub fn forward(
        &self,
        audio_map: &Tensor<T>,
        visual_map: &Tensor<T>,
        text: &Tensor<T>,
    ) -> Result<TrimodalRepresentation<T>> {
        let text_map = text.transpose(1, 2)?;
        let audio_text = self.at.forward(&map_to_sequence(audio_map)?, &text_map)?;
        let visual_text = self.vt.forward(&map_to_sequence(visual_map)?, &text_map)?;
        let joint = tensor::concat(&[global_avg_pool(&audio_text)?, global_avg_pool(&visual_text)?], 1)?;
        Ok(TrimodalRepresentation {
            audio_text,
            visual_text,
            joint,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelParams;
    use crate::tensor::grad_check_leaves;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, shape: &[usize]) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
    }

    fn cfg() -> AttentionConfig {
        AttentionConfig {
            model_dim: 8,
            heads: 2,
            layers: 1,
            mlp_ratio: 2,
        }
    }

    fn with_store<M>(f: impl FnOnce(&mut ParamBuilder<'_, f64>) -> Result<M>) -> (M, ModelParams<f64>) {
        let mut store = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = f(&mut ParamBuilder::new(&mut store, &mut rng)).unwrap();
        (m, store)
    }

    fn randomize(store: &ModelParams<f64>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, t) in store.params() {
            for v in t.data_mut().iter_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
    }

    #[test]
    fn gate_matches_tiled_sum() {
        let (lin, _) = with_store(|pb| {
            Ok((
                Linear::new(&mut pb.sub("v"), 3, 3, true)?,
                Linear::new(&mut pb.sub("a"), 4, 3, false)?,
            ))
        });
        let (w_v, w_a) = lin;
        w_v.bias.as_ref().unwrap().data_mut().copy_from_slice(&[0.1, -0.2, 0.3]);
        let x_a = random(1, &[2, 4]);
        let x_v = random(2, &[2, 3, 2, 1, 2]);
        let g = fuse_gate(&x_a, &x_v, &w_v, &w_a).unwrap();
        assert_eq!(g.shape(), &[2, 3, 2, 1, 2]);
        let (wv, bv, wa) = (w_v.weight.to_vec(), w_v.bias.unwrap().to_vec(), w_a.weight.to_vec());
        let (xa, xv, gv) = (x_a.to_vec(), x_v.to_vec(), g.to_vec());
        for b in 0..2 {
            for k in 0..3 {
                let audio: f64 = (0..4).map(|i| xa[b * 4 + i] * wa[i * 3 + k]).sum();
                for p in 0..4 {
                    let local: f64 = (0..3).map(|c| xv[(b * 3 + c) * 4 + p] * wv[c * 3 + k]).sum::<f64>() + bv[k];
                    let want = (local + audio).tanh();
                    assert!((gv[(b * 3 + k) * 4 + p] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_params_give_zero_gate_and_zero_coupling() {
        let ((w_v, w_a), _) = with_store(|pb| {
            Ok((
                Linear::new(&mut pb.sub("v"), 3, 3, true)?,
                Linear::new(&mut pb.sub("a"), 4, 3, false)?,
            ))
        });
        let x_v = random(3, &[1, 3, 2, 2, 2]);
        w_a.weight.data_mut().fill(0.0);
        let g1 = fuse_gate(&random(4, &[1, 4]), &x_v, &w_v, &w_a).unwrap();
        let g2 = fuse_gate(&random(5, &[1, 4]), &x_v, &w_v, &w_a).unwrap();
        assert_eq!(g1.to_vec(), g2.to_vec());
        w_v.weight.data_mut().fill(0.0);
        let g = fuse_gate(&random(4, &[1, 4]), &x_v, &w_v, &w_a).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gate_scales_by_one_plus_inverse_c() {
        let x = random(6, &[2, 4, 3]);
        let out = reinforce(&Tensor::zeros(&[2, 4, 3]), &x, true).unwrap();
        for (o, v) in out.to_vec().iter().zip(x.to_vec()) {
            assert!((o - v * 1.25).abs() < 1e-12);
        }
    }

    #[test]
    fn reinforce_decomposes_and_is_bounded() {
        let g = random(7, &[2, 5, 2, 2, 1]).scale(3.0);
        let x = random(8, &[2, 5, 2, 2, 1]);
        let full = reinforce(&g, &x, true).unwrap().to_vec();
        let bare = reinforce(&g, &x, false).unwrap().to_vec();
        for ((f, b), v) in full.iter().zip(&bare).zip(x.to_vec()) {
            assert!((f - v - b).abs() < 1e-12);
            assert!(f.abs() <= 2.0 * v.abs());
        }
        assert!(reinforce(&g, &random(1, &[2, 4, 2, 2, 1]), true).is_err());
    }

    #[test]
    fn k_must_match_target_channels() {
        let mut store = ModelParams::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        assert!(AdaptiveBlock::new(&mut pb, 4, 6, 5, 1, true, &cfg()).is_err());
    }

    #[test]
    fn selector_without_attention_is_mean_of_projection() {
        let (sel, _) = with_store(|pb| Selector::new(pb, 5, 0, &cfg()));
        let h = random(9, &[2, 3, 5]);
        let got = sel.select(&h).unwrap();
        let want = sel.proj.forward(&h.mean_axis(1, false).unwrap()).unwrap();
        for (a, b) in got.to_vec().iter().zip(want.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_value_selector_is_mean_of_positions() {
        let (sel, _) = with_store(|pb| Selector::new(pb, 5, 1, &cfg()));
        let l = &sel.layers[0];
        l.attn.wv.weight.data_mut().fill(0.0);
        l.mlp2.weight.data_mut().fill(0.0);
        let h = random(10, &[2, 3, 5]);
        let got = sel.select(&h).unwrap();
        let want = sel.proj.forward(&h).unwrap().mean_axis(1, false).unwrap();
        for (a, b) in got.to_vec().iter().zip(want.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn block_preserves_shape_and_selfattn_ablation_differs() {
        let (full, store) = with_store(|pb| AdaptiveBlock::new(pb, 5, 6, 6, 1, true, &cfg()));
        randomize(&store, 1);
        let (bare, _) = with_store(|pb| AdaptiveBlock::new(pb, 5, 6, 6, 0, true, &cfg()));
        let src = random(11, &[2, 4, 5]);
        let tgt = random(12, &[2, 6, 2, 2, 2]);
        let a = full.forward(&src, &tgt).unwrap();
        let b = bare.forward(&src, &tgt).unwrap();
        assert_eq!(a.shape(), tgt.shape());
        assert_eq!(b.shape(), tgt.shape());
        assert_ne!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn block_grad_check_both_inputs() {
        let (block, store) = with_store(|pb| AdaptiveBlock::new(pb, 4, 3, 3, 1, true, &cfg()));
        randomize(&store, 2);
        let src = random(13, &[2, 3, 4]).as_leaf(true);
        let tgt = random(14, &[2, 3, 2, 1, 2]).as_leaf(true);
        let mut leaves = vec![src.clone(), tgt.clone()];
        leaves.extend(store.params().map(|(_, t)| t.clone()));
        let r = grad_check_leaves(|| Ok(block.forward(&src, &tgt)?.tanh().sum_all()), &leaves, 1e-3).unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn source_gradient_is_nonzero() {
        let (block, store) = with_store(|pb| AdaptiveBlock::new(pb, 4, 3, 3, 1, true, &cfg()));
        randomize(&store, 3);
        let src = random(15, &[1, 3, 4]).as_leaf(true);
        let tgt = random(16, &[1, 3, 2, 2, 2]);
        block
            .forward(&src, &tgt)
            .unwrap()
            .mul(&tgt)
            .unwrap()
            .sum_all()
            .backward()
            .unwrap();
        assert!(src.grad().unwrap().iter().any(|g| g.abs() > 1e-8));
    }

    #[test]
    fn bidirectional_widths_and_single_direction() {
        let settings = BlockSettings {
            selector_depth: 1,
            residual: true,
        };
        let audio = random(17, &[2, 4, 5]);
        let visual = random(18, &[2, 6, 1, 2, 2]);
        let (both, _) = with_store(|pb| BidirectionalFusion::new(pb, 4, 6, Directions::Both, &settings, &cfg()));
        let f = both.forward(&audio, &visual).unwrap();
        assert_eq!(f.joint.shape(), &[2, 10]);
        assert_eq!(both.output_width(), 10);
        assert_eq!(f.forward_av.as_ref().unwrap().shape(), visual.shape());
        assert_eq!(f.forward_va.as_ref().unwrap().shape(), audio.shape());
        let again = both.forward(&audio, &visual).unwrap();
        assert_eq!(f.joint.to_vec(), again.joint.to_vec());

        let (one, _) =
            with_store(|pb| BidirectionalFusion::new(pb, 4, 6, Directions::AudioToVisual, &settings, &cfg()));
        let f = one.forward(&audio, &visual).unwrap();
        assert!(f.forward_va.is_none());
        let pooled = global_avg_pool(f.forward_av.as_ref().unwrap()).unwrap();
        assert_eq!(f.joint.to_vec(), pooled.to_vec());
    }

    #[test]
    fn trimodal_zero_gates() {
        let settings = BlockSettings {
            selector_depth: 1,
            residual: true,
        };
        let (tri, _) = with_store(|pb| TrimodalFusion::new(pb, 4, 6, 5, &settings, &cfg()));
        for b in [&tri.at, &tri.vt] {
            b.w_v.weight.data_mut().fill(0.0);
            b.w_a.weight.data_mut().fill(0.0);
        }
        let text = random(19, &[2, 3, 5]);
        let out = tri
            .forward(&random(20, &[2, 4, 7]), &random(21, &[2, 6, 1, 2, 2]), &text)
            .unwrap();
        assert_eq!(out.joint.shape(), &[2, 10]);
        assert_eq!(tri.output_width(), 10);
        let pooled = text.mean_axis(1, false).unwrap().scale(1.2).to_vec();
        let joint = out.joint.to_vec();
        for b in 0..2 {
            for c in 0..5 {
                assert!((joint[b * 10 + c] - pooled[b * 5 + c]).abs() < 1e-12);
                assert!((joint[b * 10 + 5 + c] - pooled[b * 5 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trimodal_grad_check() {
        let settings = BlockSettings {
            selector_depth: 1,
            residual: true,
        };
        let (tri, store) = with_store(|pb| TrimodalFusion::new(pb, 3, 4, 4, &settings, &cfg()));
        randomize(&store, 4);
        let a = random(22, &[1, 3, 3]).as_leaf(true);
        let v = random(23, &[1, 4, 1, 1, 2]).as_leaf(true);
        let t = random(24, &[1, 2, 4]).as_leaf(true);
        let r = grad_check_leaves(
            || Ok(tri.forward(&a, &v, &t)?.joint.tanh().sum_all()),
            &[a.clone(), v.clone(), t.clone()],
            1e-3,
        )
        .unwrap();
        assert!(r.passed, "{r}");
    }
}
