use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use adafuse::attention::{scaled_dot_product, MultiHeadAttention};
use adafuse::checkpoint::{self, Record};
use adafuse::config::{AttentionConfig, FusionConfig, FusionMode};
use adafuse::encoders::map_to_sequence;
use adafuse::fusion::{reinforce, AdaptiveBlock};
use adafuse::harness::{make_folds, MetricsReport};
use adafuse::model::{joint_width, Model, FUSION_PREFIX};
use adafuse::nn::{ModelParams, ParamBuilder};
use adafuse::tensor::concat;
use adafuse::Tensor;

fn values(n: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, n)
}

/// Shape `b × C × …` with one to three trailing extents, all in 1..=5.
fn map_shape() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=5, 3..=5)
}

fn map_pair() -> impl Strategy<Value = (Vec<usize>, Vec<f64>, Vec<f64>)> {
    map_shape().prop_flat_map(|s| {
        let n = s.iter().product();
        (Just(s), values(n, 4.0), values(n, 4.0))
    })
}

fn small_attention(dim: usize) -> AttentionConfig {
    AttentionConfig {
        model_dim: dim,
        heads: 2,
        layers: 1,
        mlp_ratio: 2,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reinforce_decomposes_and_is_bounded((shape, g, x) in map_pair()) {
        let gate = Tensor::new(g, &shape).unwrap().tanh();
        let xv = Tensor::new(x.clone(), &shape).unwrap();
        let full = reinforce(&gate, &xv, true).unwrap();
        let plain = reinforce(&gate, &xv, false).unwrap();
        prop_assert_eq!(full.shape(), xv.shape());
        for ((f, p), v) in full.to_vec().iter().zip(plain.to_vec()).zip(&x) {
            prop_assert!((f - (p + v)).abs() <= 1e-12);
            // softmax weights lie in [0, 1]
            prop_assert!(p.abs() <= v.abs() + 1e-12);
            prop_assert!(f.abs() <= 2.0 * v.abs() + 1e-12);
            prop_assert!(f * v >= -1e-12);
        }
    }

    #[test]
    fn channel_softmax_of_gate_sums_to_one((shape, g, _x) in map_pair()) {
        let gate = Tensor::new(g, &shape).unwrap().tanh();
        let sums = gate.softmax(1).unwrap().sum_axis(1, false).unwrap();
        for s in sums.to_vec() {
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn adaptive_block_gate_is_bounded_and_shape_preserving(
        (shape, _g, x) in map_pair(),
        src in values(2 * 3 * 4, 3.0),
        residual in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let c = shape[1];
        let mut store = ModelParams::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = small_attention(4);
        let block = AdaptiveBlock::new(&mut ParamBuilder::new(&mut store, &mut rng), 4, c, c, 1, residual, &cfg).unwrap();
        // batch of the source is tied to the target's batch
        let b = shape[0];
        let src_data: Vec<f64> = src.iter().cycle().take(b * 3 * 4).copied().collect();
        let source = Tensor::new(src_data, &[b, 3, 4]).unwrap();
        let target = Tensor::new(x, &shape).unwrap();
        let trace = block.trace(&source, &target).unwrap();
        prop_assert_eq!(trace.gate.shape(), target.shape());
        prop_assert_eq!(trace.reinforced.shape(), target.shape());
        prop_assert_eq!(trace.selected.shape(), &[b, 4][..]);
        for v in trace.gate.to_vec() {
            prop_assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn attention_rows_sum_to_one(
        b in 1usize..3, nq in 1usize..6, nk in 1usize..6, heads in 1usize..4, hd in 1usize..4,
        seed in 0u64..1000,
    ) {
        let d = heads * hd;
        let mut store = ModelParams::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mha = MultiHeadAttention::new(&mut ParamBuilder::new(&mut store, &mut rng), d, heads).unwrap();
        let mk = |n: usize, s: u64| {
            let data = (0..b * n * d).map(|i| ((i as f64 + s as f64) * 0.7).sin() * 3.0).collect();
            Tensor::<f64>::new(data, &[b, n, d]).unwrap()
        };
        let got = mha.attend(&mk(nq, seed), &mk(nk, seed + 1)).unwrap();
        prop_assert_eq!(got.weights.shape(), &[b, heads, nq, nk][..]);
        prop_assert_eq!(got.out.shape(), &[b, nq, d][..]);
        for row in got.weights.to_vec().chunks(nk) {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|w| *w >= 0.0));
        }
    }

    #[test]
    fn attention_with_identical_keys_averages_values(
        nq in 1usize..4, nk in 1usize..5, d in 1usize..5, q in values(16, 2.0), v in values(20, 2.0),
    ) {
        let qt = Tensor::new(q.iter().cycle().take(nq * d).copied().collect(), &[1, nq, d]).unwrap();
        let k = Tensor::<f64>::ones(&[1, nk, d]);
        let vt = Tensor::new(v.iter().cycle().take(nk * d).copied().collect(), &[1, nk, d]).unwrap();
        let out = scaled_dot_product(&qt, &k, &vt, 1).unwrap().out.to_vec();
        let vv = vt.to_vec();
        for i in 0..nq {
            for j in 0..d {
                let mean: f64 = (0..nk).map(|r| vv[r * d + j]).sum::<f64>() / nk as f64;
                prop_assert!((out[i * d + j] - mean).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn broadcast_add_matches_loops(rows in 1usize..5, cols in 1usize..5, a in values(16, 5.0), b in values(4, 5.0)) {
        let at = Tensor::new(a[..rows * cols].to_vec(), &[rows, cols]).unwrap();
        let bt = Tensor::new(b[..cols].to_vec(), &[cols]).unwrap();
        let col = Tensor::new(b[..rows].to_vec(), &[rows, 1]).unwrap();
        let s = at.add(&bt).unwrap().to_vec();
        let m = at.mul(&col).unwrap().to_vec();
        for i in 0..rows {
            for j in 0..cols {
                prop_assert_eq!(s[i * cols + j], a[i * cols + j] + b[j]);
                prop_assert_eq!(m[i * cols + j], a[i * cols + j] * b[i]);
            }
        }
    }

    #[test]
    fn softmax_and_log_softmax_agree(n in 1usize..8, x in values(8, 30.0)) {
        let t = Tensor::new(x[..n].to_vec(), &[1, n]).unwrap();
        let p = t.softmax(1).unwrap().to_vec();
        let lp = t.log_softmax(1).unwrap().to_vec();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (a, b) in p.iter().zip(&lp) {
            prop_assert!((a - b.exp()).abs() <= 1e-12);
        }
    }

    #[test]
    fn map_to_sequence_round_trips((shape, _g, x) in map_pair()) {
        let t = Tensor::new(x, &shape).unwrap();
        let seq = map_to_sequence(&t).unwrap();
        let p: usize = shape[2..].iter().product();
        prop_assert_eq!(seq.shape(), &[shape[0], p, shape[1]][..]);
        let back = seq.transpose(1, 2).unwrap().reshape(&shape).unwrap();
        prop_assert_eq!(back.to_vec(), t.to_vec());
    }

    #[test]
    fn concat_then_narrow_recovers_parts(a in 1usize..4, b in 1usize..4, x in values(24, 1.0)) {
        let p = Tensor::new(x[..2 * a].to_vec(), &[2, a]).unwrap();
        let q = Tensor::new(x[8..8 + 2 * b].to_vec(), &[2, b]).unwrap();
        let c = concat(&[p.clone(), q.clone()], 1).unwrap();
        prop_assert_eq!(c.narrow(1, 0, a).unwrap().to_vec(), p.to_vec());
        prop_assert_eq!(c.narrow(1, a, b).unwrap().to_vec(), q.to_vec());
    }

    #[test]
    fn folds_ignore_actor_order(perm in Just((1u32..=24).collect::<Vec<_>>()).prop_shuffle()) {
        let folds = make_folds(&perm).unwrap();
        let all: Vec<u32> = (1..=24).collect();
        let mut tested = Vec::new();
        for f in &folds {
            prop_assert!(f.violations(&all).is_empty());
            tested.extend(f.test_actors.iter().copied());
        }
        tested.sort_unstable();
        tested.dedup();
        prop_assert_eq!(tested.len(), 20);
    }

    #[test]
    fn folds_reject_other_actor_sets(mut actors in prop::collection::vec(1u32..30, 1..30)) {
        actors.sort_unstable();
        prop_assume!(actors != (1..=24).collect::<Vec<_>>());
        prop_assert!(make_folds(&actors).is_err());
    }

    #[test]
    fn single_label_metrics_are_consistent(
        n in 2usize..6,
        pairs in prop::collection::vec((0usize..6, 0usize..6), 1..60),
    ) {
        let names: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let truth: Vec<usize> = pairs.iter().map(|p| p.0 % n).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.1 % n).collect();
        let r = MetricsReport::single_label(&names, &truth, &pred);
        prop_assert!(r.identities_hold());
        let hits = truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
        prop_assert_eq!(r.accuracy, hits as f64 / truth.len() as f64);
        let tp: u64 = r.per_class.iter().map(|c| c.tp).sum();
        let fp: u64 = r.per_class.iter().map(|c| c.fp).sum();
        let fn_: u64 = r.per_class.iter().map(|c| c.fn_).sum();
        prop_assert_eq!(tp as usize, hits);
        prop_assert_eq!(fp, fn_);
        for c in &r.per_class {
            prop_assert_eq!(c.tp + c.fp + c.fn_ + c.tn, truth.len() as u64);
            prop_assert!((0.0..=1.0).contains(&c.f1));
            prop_assert!(c.f1 <= c.precision.max(c.recall) + 1e-15);
            prop_assert!(c.f1 + 1e-15 >= c.precision.min(c.recall));
        }
    }

    #[test]
    fn multi_label_metrics_are_consistent(
        rows in prop::collection::vec(prop::collection::vec(any::<(bool, bool)>(), 3), 1..40),
    ) {
        let names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let truth: Vec<Vec<bool>> = rows.iter().map(|r| r.iter().map(|p| p.0).collect()).collect();
        let pred: Vec<Vec<bool>> = rows.iter().map(|r| r.iter().map(|p| p.1).collect()).collect();
        let r = MetricsReport::multi_label(&names, &truth, &pred);
        prop_assert!(r.identities_hold());
        for (c, m) in r.per_class.iter().enumerate() {
            let agree = truth.iter().zip(&pred).filter(|(t, p)| t[c] == p[c]).count();
            prop_assert_eq!(m.accuracy, agree as f64 / truth.len() as f64);
        }
    }

    #[test]
    fn checkpoint_bytes_round_trip(
        tensors in prop::collection::vec((prop::collection::vec(1usize..4, 0..3), values(27, 100.0)), 0..5),
    ) {
        let records: Vec<Record> = tensors
            .iter()
            .enumerate()
            .map(|(i, (shape, v))| {
                let n = shape.iter().product();
                Record {
                    name: format!("layer{i}.w"),
                    shape: shape.clone(),
                    data: v[..n].iter().map(|x| *x as f32).collect(),
                }
            })
            .collect();
        let bytes = checkpoint::encode(&records);
        let back = checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &records);
        prop_assert_eq!(checkpoint::encode(&back), bytes.clone());
        if !bytes.is_empty() {
            prop_assert!(checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        }
        let mut longer = bytes;
        longer.push(0);
        prop_assert!(checkpoint::decode(&longer).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn param_count_is_additive_over_prefixes(mode_i in 0usize..7, seed in 0u64..100) {
        let cfg = FusionConfig { mode: FusionMode::ALL[mode_i], ..FusionConfig::desk() };
        let model = Model::<f32>::new(&cfg, seed).unwrap();
        let total = model.param_count("");
        let parts: usize = ["encoder.", "head.", FUSION_PREFIX].iter().map(|p| model.param_count(p)).sum();
        prop_assert_eq!(parts, total);
        let head_in = model.params().get("head.w").unwrap().shape()[0];
        prop_assert_eq!(head_in, joint_width(&cfg));
        if cfg.mode == FusionMode::Concat {
            prop_assert_eq!(model.param_count(FUSION_PREFIX), 0);
        }
    }
}
