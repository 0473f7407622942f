//! Feature files, the TOML sample manifest, and in-memory datasets.

use std::collections::HashSet;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Task;
use crate::error::{Error, Result};
use crate::model::Batch;
use crate::tensor::{Real, Tensor};

pub const FEATURE_MAGIC: &[u8; 4] = b"AFFT";

/// Magic, rank (u32 LE), extents (u32 LE each), then row-major f32 LE data.
pub fn encode_features(shape: &[usize], data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * shape.len() + 4 * data.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &e in shape {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    let bad = |detail: &str| Error::Format {
        what: "feature file",
        detail: detail.to_string(),
    };
    let word = |i: usize| -> Result<usize> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
            .ok_or_else(|| bad("truncated header"))
    };
    if bytes.get(..4) != Some(FEATURE_MAGIC.as_slice()) {
        return Err(bad("bad magic bytes"));
    }
    let rank = word(4)?;
    let shape = (0..rank).map(|i| word(8 + 4 * i)).collect::<Result<Vec<_>>>()?;
    let start = 8 + 4 * rank;
    let n: usize = shape.iter().product();
    if bytes.len() != start + 4 * n {
        return Err(bad(&format!(
            "header declares {n} values but the payload holds {} bytes",
            bytes.len().saturating_sub(start)
        )));
    }
    let data = bytes[start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((shape, data))
}

pub fn write_features(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    std::fs::write(path, encode_features(shape, data)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    decode_features(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRef {
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    /// Per-sample shape, without a batch axis.
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    /// Actor (single-label corpora) or session identifier.
    pub actor: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    /// Class index, for single-label manifests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    /// One 0/1 entry per class, for multi-label manifests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
    pub audio: FeatureRef,
    pub visual: FeatureRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<FeatureRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub task: Task,
    pub class_names: Vec<String>,
    pub samples: Vec<SampleEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    Single(usize),
    Multi(Vec<bool>),
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: DatasetManifest = toml::from_str(text).map_err(|e| Error::Format {
            what: "manifest",
            detail: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest is always serializable")
    }

    /// Structural checks that need no file access: unique ids, labels in
    /// range and of the right kind.
    pub fn validate(&self) -> Result<()> {
        let n = self.class_names.len();
        if n == 0 {
            return Err(Error::Config("manifest declares no classes".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
            self.label_of(s)?;
        }
        Ok(())
    }

    pub fn label_of(&self, s: &SampleEntry) -> Result<Label> {
        let n = self.class_names.len();
        let bad = |msg: String| Err(Error::InvalidLabel(format!("sample `{}`: {msg}", s.id)));
        match (self.task, s.label, &s.labels) {
            (Task::SingleLabel, Some(l), None) if l < n => Ok(Label::Single(l)),
            (Task::SingleLabel, Some(l), None) => bad(format!("label {l} is not below {n} classes")),
            (Task::MultiLabel, None, Some(v)) if v.len() == n && v.iter().all(|&b| b <= 1) => {
                Ok(Label::Multi(v.iter().map(|&b| b == 1).collect()))
            }
            (Task::MultiLabel, None, Some(v)) => bad(format!("labels {v:?} must hold {n} entries of 0 or 1")),
            (Task::SingleLabel, _, _) => bad("single-label manifests need exactly a `label` field".into()),
            (Task::MultiLabel, _, _) => bad("multi-label manifests need exactly a `labels` field".into()),
        }
    }

    /// Sorted distinct actor identifiers.
    pub fn actors(&self) -> Vec<u32> {
        let mut a: Vec<u32> = self.samples.iter().map(|s| s.actor).collect();
        a.sort_unstable();
        a.dedup();
        a
    }
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::parse(&text)
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub actor: u32,
    pub split: Option<String>,
    pub label: Label,
    pub audio: Vec<f32>,
    pub visual: Vec<f32>,
    pub text: Option<Vec<f32>>,
}

/// Samples sharing one per-modality shape, ordered by id.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub task: Task,
    pub class_names: Vec<String>,
    pub audio_shape: Vec<usize>,
    pub visual_shape: Vec<usize>,
    pub text_shape: Option<Vec<usize>>,
    pub samples: Vec<Sample>,
}

fn load_feature(base: &Path, sample: &str, r: &FeatureRef) -> Result<Vec<f32>> {
    let path = if r.path.is_absolute() {
        r.path.clone()
    } else {
        base.join(&r.path)
    };
    let bytes = match std::fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == ErrorKind::NotFound => {
            return Err(Error::MissingFile {
                sample: sample.to_string(),
                path,
            })
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    let (shape, data) = decode_features(&bytes).map_err(|e| Error::Format {
        what: "feature file",
        detail: format!("{} (sample `{sample}`): {e}", path.display()),
    })?;
    if shape != r.shape {
        return Err(Error::SampleShapeMismatch {
            sample: sample.to_string(),
            declared: r.shape.clone(),
            found: shape,
        });
    }
    Ok(data)
}

impl Dataset {
    /// Reads a manifest and every feature file it names.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = read_manifest(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        Self::from_manifest(&manifest, base)
    }

    pub fn from_manifest(manifest: &DatasetManifest, base: &Path) -> Result<Self> {
        manifest.validate()?;
        let first = manifest
            .samples
            .first()
            .ok_or_else(|| Error::Config("manifest lists no samples".into()))?;
        let audio_shape = first.audio.shape.clone();
        let visual_shape = first.visual.shape.clone();
        let text_shape = first.text.as_ref().map(|t| t.shape.clone());
        let mut samples = Vec::with_capacity(manifest.samples.len());
        for s in &manifest.samples {
            let uniform = s.audio.shape == audio_shape
                && s.visual.shape == visual_shape
                && s.text.as_ref().map(|t| &t.shape) == text_shape.as_ref();
            if !uniform {
                return Err(Error::Format {
                    what: "manifest",
                    detail: format!("sample `{}` declares shapes that differ from the first sample", s.id),
                });
            }
            samples.push(Sample {
                id: s.id.clone(),
                actor: s.actor,
                split: s.split.clone(),
                label: manifest.label_of(s)?,
                audio: load_feature(base, &s.id, &s.audio)?,
                visual: load_feature(base, &s.id, &s.visual)?,
                text: s.text.as_ref().map(|t| load_feature(base, &s.id, t)).transpose()?,
            });
        }
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Dataset {
            task: manifest.task,
            class_names: manifest.class_names.clone(),
            audio_shape,
            visual_shape,
            text_shape,
            samples,
        })
    }

    /// Writes every sample as feature files under `dir` plus `manifest.toml`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let feat_dir = dir.join("features");
        std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
        let mut entries = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            let put = |kind: &str, shape: &[usize], data: &[f32]| -> Result<FeatureRef> {
                let rel = PathBuf::from("features").join(format!("{}.{kind}.bin", s.id));
                write_features(&dir.join(&rel), shape, data)?;
                Ok(FeatureRef {
                    path: rel,
                    shape: shape.to_vec(),
                })
            };
            let (label, labels) = match &s.label {
                Label::Single(l) => (Some(*l), None),
                Label::Multi(v) => (None, Some(v.iter().map(|&b| b as u8).collect())),
            };
            entries.push(SampleEntry {
                id: s.id.clone(),
                actor: s.actor,
                split: s.split.clone(),
                label,
                labels,
                audio: put("audio", &self.audio_shape, &s.audio)?,
                visual: put("visual", &self.visual_shape, &s.visual)?,
                text: match (&s.text, &self.text_shape) {
                    (Some(t), Some(shape)) => Some(put("text", shape, t)?),
                    _ => None,
                },
            });
        }
        let manifest = DatasetManifest {
            task: self.task,
            class_names: self.class_names.clone(),
            samples: entries,
        };
        let path = dir.join("manifest.toml");
        std::fs::write(&path, manifest.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn actors(&self) -> Vec<u32> {
        let mut a: Vec<u32> = self.samples.iter().map(|s| s.actor).collect();
        a.sort_unstable();
        a.dedup();
        a
    }

    /// Indices whose `split` field equals `name`.
    pub fn split_indices(&self, name: &str) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.samples[i].split.as_deref() == Some(name))
            .collect()
    }

    pub fn actor_indices(&self, actors: &[u32]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| actors.contains(&self.samples[i].actor))
            .collect()
    }

    /// Samples per class (single-label) or positive cells per class
    /// (multi-label).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for s in &self.samples {
            match &s.label {
                Label::Single(l) => counts[*l] += 1,
                Label::Multi(v) => {
                    for (c, &b) in counts.iter_mut().zip(v) {
                        *c += b as usize;
                    }
                }
            }
        }
        counts
    }

    /// Stacks the selected samples into a batch and a one-hot (single-label)
    /// or 0/1 (multi-label) target matrix.
    pub fn batch<T: Real>(&self, idx: &[usize]) -> Result<(Batch<T>, Tensor<T>)> {
        let stack = |f: &dyn Fn(&Sample) -> &[f32], shape: &[usize]| -> Result<Tensor<T>> {
            let mut data = Vec::with_capacity(idx.len() * shape.iter().product::<usize>());
            for &i in idx {
                data.extend(f(&self.samples[i]).iter().map(|&v| T::of(v as f64)));
            }
            let mut full = vec![idx.len()];
            full.extend_from_slice(shape);
            Tensor::new(data, &full)
        };
        let audio = stack(&|s| &s.audio, &self.audio_shape)?;
        let visual = stack(&|s| &s.visual, &self.visual_shape)?;
        let text = match &self.text_shape {
            Some(shape) => Some(stack(&|s| s.text.as_deref().unwrap_or(&[]), shape)?),
            None => None,
        };
        let n = self.classes();
        let mut y = vec![T::zero(); idx.len() * n];
        for (row, &i) in idx.iter().enumerate() {
            match &self.samples[i].label {
                Label::Single(l) => y[row * n + l] = T::one(),
                Label::Multi(v) => {
                    for (c, &b) in v.iter().enumerate() {
                        if b {
                            y[row * n + c] = T::one();
                        }
                    }
                }
            }
        }
        Ok((Batch { audio, visual, text }, Tensor::new(y, &[idx.len(), n])?))
    }
}
