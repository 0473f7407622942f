//! Trains every requested fusion mode under several seeds on one split and
//! reports mean held-out accuracy per mode.

use std::time::Instant;

use serde::Serialize;

use crate::config::{FusionConfig, FusionMode, TrainConfig};
use crate::error::Result;
use crate::harness::data::Dataset;
use crate::harness::train::{evaluate, train};
use crate::model::{Model, FUSION_PREFIX};

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub mode: String,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub params: usize,
    pub fusion_params: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderingCheck {
    pub claim: String,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub train_samples: usize,
    pub test_samples: usize,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub rows: Vec<AblationRow>,
    pub ordering: Vec<OrderingCheck>,
    pub seconds: f64,
}

impl AblationReport {
    pub fn mean(&self, mode: FusionMode) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.mode == mode.name())
            .map(|r| r.mean_accuracy)
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<14} {:>10} {:>10}  per-seed accuracy\n",
            "mode", "params", "mean acc"
        );
        for r in &self.rows {
            let per: Vec<String> = r.accuracies.iter().map(|a| format!("{a:.4}")).collect();
            s.push_str(&format!(
                "{:<14} {:>10} {:>10.4}  {}\n",
                r.mode,
                r.params,
                r.mean_accuracy,
                per.join(" ")
            ));
        }
        for c in &self.ordering {
            s.push_str(&format!("{} {}\n", if c.holds { "holds:" } else { "FAILS:" }, c.claim));
        }
        s
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    data: &Dataset,
    train_idx: &[usize],
    test_idx: &[usize],
    base: &FusionConfig,
    train_cfg: &TrainConfig,
    modes: &[FusionMode],
    seeds: &[u64],
    progress: &mut dyn FnMut(&str),
) -> Result<AblationReport> {
    let start = Instant::now();
    let mut rows = Vec::with_capacity(modes.len());
    for &mode in modes {
        let cfg = FusionConfig { mode, ..base.clone() };
        let mut accuracies = Vec::with_capacity(seeds.len());
        let mut counts = (0, 0);
        for &seed in seeds {
            let model = Model::<f32>::new(&cfg, seed)?;
            counts = (model.param_count(""), model.param_count(FUSION_PREFIX));
            train(&model, data, train_idx, None, train_cfg, seed, &mut |_| {})?;
            let acc = evaluate(&model, data, test_idx)?.accuracy;
            progress(&format!("{mode} seed {seed}: held-out accuracy {acc:.4}"));
            accuracies.push(acc);
        }
        rows.push(AblationRow {
            mode: mode.name().to_string(),
            mean_accuracy: accuracies.iter().sum::<f64>() / accuracies.len().max(1) as f64,
            accuracies,
            params: counts.0,
            fusion_params: counts.1,
        });
    }
    let mut report = AblationReport {
        train_samples: train_idx.len(),
        test_samples: test_idx.len(),
        seeds: seeds.to_vec(),
        epochs: train_cfg.epochs,
        rows,
        ordering: Vec::new(),
        seconds: 0.0,
    };
    if let Some(adaptive) = report.mean(FusionMode::Adaptive) {
        for other in [FusionMode::Concat, FusionMode::A2v, FusionMode::V2a] {
            if let Some(m) = report.mean(other) {
                report.ordering.push(OrderingCheck {
                    claim: format!("adaptive ({adaptive:.4}) >= {other} ({m:.4})"),
                    holds: adaptive >= m,
                });
            }
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
