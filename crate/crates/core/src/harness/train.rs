//! Mini-batch training with Adam, and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Task, TrainConfig};
use crate::error::{Error, Result};
use crate::harness::data::{Dataset, Label};
use crate::harness::metrics::MetricsReport;
use crate::harness::optim::Adam;
use crate::model::{loss, Model, Prediction};
use crate::nn::ForwardCtx;
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Training accuracy of the in-epoch (train-mode) predictions.
    pub acc: f64,
    /// Held-out accuracy after the epoch, when an evaluation set is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_acc: Option<f64>,
}

impl EpochLog {
    pub fn line(&self) -> String {
        match self.eval_acc {
            Some(e) => format!(
                "epoch {} loss {:.6} acc {:.4} eval_acc {:.4}",
                self.epoch, self.loss, self.acc, e
            ),
            None => format!("epoch {} loss {:.6} acc {:.4}", self.epoch, self.loss, self.acc),
        }
    }
}

/// Correct decisions in a batch: samples for single-label, cells for
/// multi-label. Returns `(correct, counted)`.
fn correct(pred: &Prediction<f32>, data: &Dataset, idx: &[usize]) -> (usize, usize) {
    match pred.task {
        Task::SingleLabel => {
            let hits = pred
                .argmax()
                .iter()
                .zip(idx)
                .filter(|(p, &i)| data.samples[i].label == Label::Single(**p))
                .count();
            (hits, idx.len())
        }
        Task::MultiLabel => {
            let mut hits = 0;
            for (row, &i) in pred.thresholded().iter().zip(idx) {
                if let Label::Multi(truth) = &data.samples[i].label {
                    hits += row.iter().zip(truth).filter(|(a, b)| a == b).count();
                }
            }
            (hits, idx.len() * data.classes())
        }
    }
}

fn check_task(model: &Model<f32>, data: &Dataset) -> Result<()> {
    let cfg = model.config();
    if cfg.task != data.task || cfg.classes != data.classes() {
        return Err(Error::Config(format!(
            "model is {:?} with {} classes but the data set is {:?} with {}",
            cfg.task,
            cfg.classes,
            data.task,
            data.classes()
        )));
    }
    Ok(())
}

/// Trains in place. Shuffling, dropout and initialization are all derived
/// from `seed`, so equal inputs give bitwise-equal parameter trajectories.
pub fn train(
    model: &Model<f32>,
    data: &Dataset,
    train_idx: &[usize],
    eval_idx: Option<&[usize]>,
    cfg: &TrainConfig,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    check_task(model, data)?;
    if train_idx.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let params: Vec<Tensor<f32>> = model.params().params().map(|(_, t)| t.clone()).collect();
    let mut opt = Adam::new(&params, cfg);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_5a17);
    let mut ctx = ForwardCtx::train(seed.wrapping_add(1));
    let mut order = train_idx.to_vec();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut hits, mut counted) = (0.0, 0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            model.params().zero_grad();
            let (batch, y) = data.batch::<f32>(chunk)?;
            let pred = model.forward(&batch, &mut ctx)?;
            let l = loss(&pred, &y)?;
            l.backward()?;
            opt.step(&params)?;
            loss_sum += l.item() as f64 * chunk.len() as f64;
            let (h, c) = correct(&pred, data, chunk);
            hits += h;
            counted += c;
        }
        model.params().zero_grad();
        let eval_acc = match eval_idx {
            Some(idx) if !idx.is_empty() => Some(evaluate(model, data, idx)?.accuracy),
            _ => None,
        };
        let entry = EpochLog {
            epoch,
            loss: loss_sum / order.len() as f64,
            acc: hits as f64 / counted as f64,
            eval_acc,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

/// Eval-mode metrics over `idx`; touches neither parameters nor running
/// statistics.
pub fn evaluate(model: &Model<f32>, data: &Dataset, idx: &[usize]) -> Result<MetricsReport> {
    check_task(model, data)?;
    let mut ctx = ForwardCtx::eval();
    let (mut single_t, mut single_p) = (Vec::new(), Vec::new());
    let (mut multi_t, mut multi_p) = (Vec::new(), Vec::new());
    for chunk in idx.chunks(64) {
        let (batch, _) = data.batch::<f32>(chunk)?;
        let pred = no_grad(|| model.forward(&batch, &mut ctx))?;
        match data.task {
            Task::SingleLabel => {
                single_p.extend(pred.argmax());
                for &i in chunk {
                    if let Label::Single(l) = data.samples[i].label {
                        single_t.push(l);
                    }
                }
            }
            Task::MultiLabel => {
                multi_p.extend(pred.thresholded());
                for &i in chunk {
                    if let Label::Multi(v) = &data.samples[i].label {
                        multi_t.push(v.clone());
                    }
                }
            }
        }
    }
    Ok(match data.task {
        Task::SingleLabel => MetricsReport::single_label(&data.class_names, &single_t, &single_p),
        Task::MultiLabel => MetricsReport::multi_label(&data.class_names, &multi_t, &multi_p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint;
    use crate::config::FusionConfig;
    use crate::harness::synth::{generate, SynthSpec};

    fn tiny() -> Dataset {
        generate(&SynthSpec {
            samples: 16,
            frames: 16,
            clip: [4, 4, 4],
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn same_seed_same_trajectory() {
        let data = tiny();
        let idx: Vec<usize> = (0..data.len()).collect();
        let cfg = TrainConfig {
            epochs: 2,
            ..Default::default()
        };
        let run = || {
            let m = Model::<f32>::new(&FusionConfig::desk(), 3).unwrap();
            let log = train(&m, &data, &idx, None, &cfg, 3, &mut |_| {}).unwrap();
            (log, checkpoint::encode(&checkpoint::records(m.params())))
        };
        let (la, ca) = run();
        let (lb, cb) = run();
        assert_eq!(la[0].loss.to_bits(), lb[0].loss.to_bits());
        assert_eq!(la, lb);
        assert_eq!(ca, cb);
    }

    #[test]
    fn evaluate_leaves_model_untouched() {
        let data = tiny();
        let m = Model::<f32>::new(&FusionConfig::desk(), 1).unwrap();
        let before = checkpoint::encode(&checkpoint::records(m.params()));
        let idx: Vec<usize> = (0..data.len()).collect();
        let r = evaluate(&m, &data, &idx).unwrap();
        assert_eq!(r.total, 16);
        assert!(r.identities_hold());
        assert_eq!(checkpoint::encode(&checkpoint::records(m.params())), before);
    }

    #[test]
    fn mismatched_task_rejected() {
        let data = tiny();
        let m = Model::<f32>::new(
            &FusionConfig {
                classes: 6,
                ..FusionConfig::desk()
            },
            1,
        )
        .unwrap();
        assert!(evaluate(&m, &data, &[0]).is_err());
    }
}
