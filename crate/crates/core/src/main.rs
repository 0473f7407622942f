use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use adafuse::checkpoint;
use adafuse::config::{FusionConfig, FusionMode, Modalities, RunConfig, Task, TrainConfig};
use adafuse::error::{Error, Result};
use adafuse::gradsuite;
use adafuse::harness::data::read_manifest;
use adafuse::harness::{self, make_folds, Dataset, EpochLog, SynthSpec};
use adafuse::model::{Model, FUSION_PREFIX};

#[derive(Parser)]
#[command(
    name = "adafuse",
    version,
    about = "Adaptive cross-modal fusion for emotion recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Small audio-visual model for the synthetic corpus.
    Desk,
    /// Full-width audio-visual model.
    Default,
    /// Multi-label audio-visual-text model.
    Trimodal,
}

impl Preset {
    fn config(self) -> FusionConfig {
        match self {
            Preset::Desk => FusionConfig::desk(),
            Preset::Default => FusionConfig::default(),
            Preset::Trimodal => FusionConfig::trimodal(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint, its config, an epoch log and a report.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Run configuration (TOML with [model] and [train] tables).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Preset used when no --config is given; adopts the manifest's input shapes and classes.
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
        /// Actor fold 0..4; without it the manifest's split fields are used.
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        mode: Option<FusionMode>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a manifest split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// `all`, `train`, `test`, or `fold-N` (the test actors of fold N).
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write the metrics as JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Finite-difference gradient checks at 64-bit precision.
    GradCheck {
        /// `all`, a group (primitive, encoder, attention, fusion, model) or a check name.
        #[arg(long, default_value = "all")]
        module: String,
        /// Overrides the per-group tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Count learnable parameters, overall and under a name prefix.
    ParamCount {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "default")]
        preset: Preset,
        #[arg(long)]
        mode: Option<FusionMode>,
        #[arg(long, default_value = FUSION_PREFIX)]
        prefix: String,
    },
    /// Generate a synthetic fusion-dependent corpus with a manifest.
    GenSynth {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 24)]
        actors: u32,
        #[arg(long, default_value_t = 24)]
        frames: usize,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        /// Every N-th sample is marked `test` (0 disables splits).
        #[arg(long, default_value_t = 5)]
        test_every: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the five actor folds of a 24-actor manifest and check their invariants.
    Folds {
        #[arg(long)]
        manifest: PathBuf,
        /// Also write the folds as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every fusion mode under several seeds and compare held-out accuracy.
    Ablation {
        /// Corpus to use; a synthetic one is generated when omitted.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<FusionMode>>,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report is serializable");
    write_file(path, text.as_bytes())
}

fn read_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    RunConfig::from_toml(&text)
}

/// Fits a preset to the data: task, class count and input widths.
fn adapt(mut cfg: FusionConfig, data: &Dataset) -> FusionConfig {
    cfg.task = data.task;
    cfg.classes = data.classes();
    cfg.encoders.audio.coeffs = data.audio_shape[0];
    cfg.encoders.visual.in_channels = data.visual_shape[0];
    match &data.text_shape {
        Some(t) => {
            cfg.modalities = Modalities::Avt;
            cfg.encoders.text.embed_dim = t[1];
        }
        None => cfg.modalities = Modalities::Av,
    }
    cfg
}

fn split_indices(data: &Dataset, split: &str) -> Result<Vec<usize>> {
    let idx = match split {
        "all" => (0..data.len()).collect(),
        "train" | "test" => data.split_indices(split),
        s if s.starts_with("fold-") => {
            let k: usize = s[5..]
                .parse()
                .map_err(|_| Error::Config(format!("bad fold selector `{s}`")))?;
            let folds = make_folds(&data.actors())?;
            let fold = folds
                .get(k)
                .ok_or_else(|| Error::Config(format!("fold {k} out of range 0..{}", folds.len())))?;
            data.actor_indices(&fold.test_actors)
        }
        other => return Err(Error::Config(format!("unknown split `{other}`"))),
    };
    if idx.is_empty() {
        return Err(Error::Config(format!("split `{split}` selects no samples")));
    }
    Ok(idx)
}

#[derive(Serialize)]
struct TrainReport<'a> {
    mode: FusionMode,
    seed: u64,
    fold: Option<usize>,
    train_samples: usize,
    eval_samples: usize,
    params: usize,
    fusion_params: usize,
    epochs: &'a [EpochLog],
    metrics: Option<harness::MetricsReport>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    manifest: &Path,
    config: Option<&Path>,
    preset: Preset,
    fold: Option<usize>,
    mode: Option<FusionMode>,
    seed: u64,
    epochs: Option<usize>,
    out: &Path,
) -> Result<()> {
    let data = Dataset::load(manifest)?;
    let mut run = match config {
        Some(p) => read_run_config(p)?,
        None => RunConfig {
            model: adapt(preset.config(), &data),
            train: TrainConfig::default(),
        },
    };
    if let Some(m) = mode {
        run.model.mode = m;
    }
    if let Some(e) = epochs {
        run.train.epochs = e;
    }
    run.model.validate()?;
    let (train_idx, eval_idx) = match fold {
        Some(k) => {
            let folds = make_folds(&data.actors())?;
            let f = folds
                .get(k)
                .ok_or_else(|| Error::Config(format!("fold {k} out of range 0..{}", folds.len())))?;
            (data.actor_indices(&f.train_actors), data.actor_indices(&f.test_actors))
        }
        None => {
            let tr = data.split_indices("train");
            if tr.is_empty() {
                ((0..data.len()).collect(), Vec::new())
            } else {
                (tr, data.split_indices("test"))
            }
        }
    };

    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let log_path = out.join("epochs.log");
    let mut log_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::Io {
            path: log_path.clone(),
            source: e,
        })?;
    let model = Model::<f32>::new(&run.model, seed)?;
    let mut io_err = None;
    let log = harness::train(
        &model,
        &data,
        &train_idx,
        (!eval_idx.is_empty()).then_some(eval_idx.as_slice()),
        &run.train,
        seed,
        &mut |e| {
            println!("{}", e.line());
            if let Err(err) = writeln!(log_file, "{}", e.line()) {
                io_err.get_or_insert(err);
            }
        },
    )?;
    if let Some(e) = io_err {
        return Err(Error::Io {
            path: log_path,
            source: e,
        });
    }

    let ckpt = out.join("model.ckpt");
    checkpoint::save(&ckpt, model.params())?;
    write_file(&ckpt.with_extension("toml"), run.to_toml().as_bytes())?;
    let metrics = if eval_idx.is_empty() {
        None
    } else {
        Some(harness::evaluate(&model, &data, &eval_idx)?)
    };
    if let Some(m) = &metrics {
        print!("{}", m.summary());
    }
    write_json(
        &out.join("report.json"),
        &TrainReport {
            mode: run.model.mode,
            seed,
            fold,
            train_samples: train_idx.len(),
            eval_samples: eval_idx.len(),
            params: model.param_count(""),
            fusion_params: model.param_count(FUSION_PREFIX),
            epochs: &log,
            metrics,
        },
    )?;
    println!("checkpoint written to {}", ckpt.display());
    Ok(())
}

fn cmd_eval(ckpt: &Path, manifest: &Path, split: &str, report: Option<&Path>) -> Result<()> {
    let records = checkpoint::read(ckpt)?;
    let run = read_run_config(&ckpt.with_extension("toml"))?;
    let model = Model::<f32>::new(&run.model, 0)?;
    checkpoint::restore(model.params(), &records)?;
    let data = Dataset::load(manifest)?;
    let idx = split_indices(&data, split)?;
    let metrics = harness::evaluate(&model, &data, &idx)?;
    print!("{}", metrics.summary());
    if let Some(p) = report {
        write_json(p, &metrics)?;
    }
    Ok(())
}

fn cmd_grad_check(module: &str, tol: Option<f64>) -> Result<bool> {
    let (results, secs) = gradsuite::run_timed(module, tol)?;
    for r in &results {
        println!(
            "{} {:<26} {:<10} max_rel {:.3e} over {:>5} entries (tol {:.0e})",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.group.name(),
            r.max_rel_error,
            r.checked,
            r.tol
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed, {secs:.2}s", results.len());
    Ok(failed == 0)
}

fn cmd_param_count(config: Option<&Path>, preset: Preset, mode: Option<FusionMode>, prefix: &str) -> Result<()> {
    let mut cfg = match config {
        Some(p) => read_run_config(p)?.model,
        None => preset.config(),
    };
    if let Some(m) = mode {
        cfg.mode = m;
    }
    let model = Model::<f32>::new(&cfg, 0)?;
    let total = model.param_count("");
    let part = model.param_count(prefix);
    println!("mode {}", cfg.mode);
    for p in [
        "encoder.audio.",
        "encoder.visual.",
        "encoder.text.",
        FUSION_PREFIX,
        "head.",
    ] {
        println!("  {:<16} {:>10}", p, model.param_count(p));
    }
    println!("total {total}");
    println!(
        "prefix `{prefix}` {part} ({:.3}% of total)",
        100.0 * part as f64 / total as f64
    );
    Ok(())
}

fn cmd_folds(manifest: &Path, out: Option<&Path>) -> Result<bool> {
    let m = read_manifest(manifest)?;
    let actors = m.actors();
    let folds = make_folds(&actors)?;
    let mut ok = true;
    for f in &folds {
        let v = f.violations(&actors);
        let samples = m.samples.iter().filter(|s| f.test_actors.contains(&s.actor)).count();
        println!(
            "fold {} test {:?} train {} actors ({} test samples) {}",
            f.fold_index,
            f.test_actors,
            f.train_actors.len(),
            samples,
            if v.is_empty() { "ok".to_string() } else { v.join("; ") }
        );
        ok &= v.is_empty();
    }
    if let Some(p) = out {
        write_json(p, &folds)?;
    }
    Ok(ok)
}

fn cmd_ablation(
    manifest: Option<&Path>,
    samples: usize,
    data_seed: u64,
    seeds: &[u64],
    modes: Option<&[FusionMode]>,
    epochs: usize,
    out: &Path,
) -> Result<bool> {
    let data = match manifest {
        Some(p) => Dataset::load(p)?,
        None => harness::generate(&SynthSpec {
            samples,
            seed: data_seed,
            ..Default::default()
        })?,
    };
    let (train_idx, test_idx) = (data.split_indices("train"), data.split_indices("test"));
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Config("ablation needs both `train` and `test` splits".into()));
    }
    let base = adapt(FusionConfig::desk(), &data);
    let train_cfg = TrainConfig {
        epochs,
        ..Default::default()
    };
    let modes = modes.map(<[_]>::to_vec).unwrap_or_else(|| match base.modalities {
        Modalities::Av => FusionMode::ALL.to_vec(),
        Modalities::Avt => vec![
            FusionMode::Adaptive,
            FusionMode::Concat,
            FusionMode::NoSelfattn,
            FusionMode::NoResidual,
        ],
    });
    if base.task == Task::MultiLabel {
        eprintln!("note: multi-label data; accuracies are mean per-class binary accuracies");
    }
    let report = harness::run_ablation(
        &data,
        &train_idx,
        &test_idx,
        &base,
        &train_cfg,
        &modes,
        seeds,
        &mut |s| eprintln!("{s}"),
    )?;
    print!("{}", report.table());
    println!("{:.1}s", report.seconds);
    write_json(out, &report)?;
    Ok(report.ordering.iter().all(|c| c.holds))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train {
            manifest,
            config,
            preset,
            fold,
            mode,
            seed,
            epochs,
            out,
        } => cmd_train(&manifest, config.as_deref(), preset, fold, mode, seed, epochs, &out).map(|_| true),
        Command::Eval {
            checkpoint,
            manifest,
            split,
            report,
        } => cmd_eval(&checkpoint, &manifest, &split, report.as_deref()).map(|_| true),
        Command::GradCheck { module, tol } => cmd_grad_check(&module, tol),
        Command::ParamCount {
            config,
            preset,
            mode,
            prefix,
        } => cmd_param_count(config.as_deref(), preset, mode, &prefix).map(|_| true),
        Command::GenSynth {
            samples,
            classes,
            seed,
            actors,
            frames,
            noise,
            test_every,
            out,
        } => {
            let data = harness::generate(&SynthSpec {
                samples,
                classes,
                seed,
                actors,
                frames,
                noise,
                test_every,
                ..Default::default()
            })?;
            let path = data.write(&out)?;
            println!(
                "{} samples, {} classes, {} actors",
                data.len(),
                data.classes(),
                data.actors().len()
            );
            println!("manifest written to {}", path.display());
            Ok(true)
        }
        Command::Folds { manifest, out } => cmd_folds(&manifest, out.as_deref()),
        Command::Ablation {
            manifest,
            samples,
            data_seed,
            seeds,
            modes,
            epochs,
            out,
        } => cmd_ablation(
            manifest.as_deref(),
            samples,
            data_seed,
            &seeds,
            modes.as_deref(),
            epochs,
            &out,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
