//! Data ingestion, fold protocol, optimizer, metrics, training and ablation.

pub mod ablation;
pub mod data;
pub mod folds;
pub mod metrics;
pub mod optim;
pub mod synth;
pub mod train;

pub use ablation::{run_ablation, AblationReport};
pub use data::{Dataset, DatasetManifest, Label};
pub use folds::{make_folds, FoldSpec};
pub use metrics::MetricsReport;
pub use optim::Adam;
pub use synth::{generate, SynthSpec};
pub use train::{evaluate, train, EpochLog};
