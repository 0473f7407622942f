//! Seeded synthetic corpus in which the label can only be read off by
//! combining modalities.
//!
//! Class `c = 2q + x`. The code `q` is visible in both modalities. The bit
//! `x = α xor β` is split: audio carries `α`, visual carries `β`, and each is
//! independent of `x` on its own. Audio templates are per-coefficient
//! profiles held across frames; visual templates are per-pixel colour patterns
//! held across clip frames. Gaussian noise is added to every entry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::Task;
use crate::error::{Error, Result};
use crate::harness::data::{Dataset, Label, Sample};

const FOUR: [&str; 4] = ["neutral", "happy", "sad", "angry"];
const EIGHT: [&str; 8] = [
    "neutral",
    "calm",
    "happy",
    "sad",
    "angry",
    "fearful",
    "disgust",
    "surprised",
];

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub samples: usize,
    /// Even, at least 2.
    pub classes: usize,
    pub seed: u64,
    pub actors: u32,
    /// Every `test_every`-th sample goes to the `test` split; 0 disables.
    pub test_every: usize,
    pub frames: usize,
    pub coeffs: usize,
    /// `[frames, height, width]` of the RGB clip.
    pub clip: [usize; 3],
    pub noise: f64,
    pub task: Task,
    /// `(tokens, embed_dim)` of a text stream, if any.
    pub text: Option<(usize, usize)>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            samples: 1000,
            classes: 4,
            seed: 0,
            actors: 24,
            test_every: 5,
            frames: 24,
            coeffs: 13,
            clip: [4, 8, 8],
            noise: 0.3,
            task: Task::SingleLabel,
            text: None,
        }
    }
}

pub fn class_names(n: usize) -> Vec<String> {
    match n {
        4 => FOUR.iter().map(|s| s.to_string()).collect(),
        8 => EIGHT.iter().map(|s| s.to_string()).collect(),
        _ => (0..n).map(|i| format!("class{i}")).collect(),
    }
}

fn template(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n).map(|_| normal.sample(rng) as f32).collect()
}

pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    if spec.classes < 2 || !spec.classes.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "the synthetic generator needs an even class count of at least 2, got {}",
            spec.classes
        )));
    }
    if spec.samples == 0 || spec.actors == 0 {
        return Err(Error::Config("samples and actors must be positive".into()));
    }
    let audio_shape = vec![spec.coeffs, spec.frames];
    let visual_shape = vec![3, spec.clip[0], spec.clip[1], spec.clip[2]];
    let codes = spec.classes / 2;
    let [frames, h, w] = spec.clip;

    let mut trng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7e3a_91c5_0d42_b6f1);
    // coeffs × frames, constant along frames
    let audio_t = |rng: &mut ChaCha8Rng| -> Vec<f32> {
        template(rng, spec.coeffs)
            .into_iter()
            .flat_map(|v| std::iter::repeat_n(v, spec.frames))
            .collect()
    };
    // 3 × frames × h × w, constant along frames
    let visual_t = |rng: &mut ChaCha8Rng| -> Vec<f32> {
        let img = template(rng, 3 * h * w);
        img.chunks(h * w).flat_map(|c| c.repeat(frames)).collect()
    };
    let audio_q: Vec<Vec<f32>> = (0..codes).map(|_| audio_t(&mut trng)).collect();
    let visual_q: Vec<Vec<f32>> = (0..codes).map(|_| visual_t(&mut trng)).collect();
    let audio_bit: Vec<Vec<f32>> = (0..2).map(|_| audio_t(&mut trng)).collect();
    let visual_bit: Vec<Vec<f32>> = (0..2).map(|_| visual_t(&mut trng)).collect();
    let text_t = spec.text.map(|(t, d)| {
        (
            (0..spec.classes)
                .map(|_| template(&mut trng, t * d))
                .collect::<Vec<_>>(),
            template(&mut trng, t * d),
        )
    });

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mix = |parts: &[&[f32]], rng: &mut ChaCha8Rng| -> Vec<f32> {
        (0..parts[0].len())
            .map(|i| parts.iter().map(|p| p[i]).sum::<f32>() + noise.sample(rng) as f32)
            .collect()
    };
    let mut samples = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let actor = (i % spec.actors as usize) as u32 + 1;
        let class = (i / spec.actors as usize + i % spec.actors as usize) % spec.classes;
        let (q, x) = (class / 2, class % 2);
        let alpha = rng.random_range(0..2usize);
        let beta = alpha ^ x;
        let audio = mix(&[&audio_q[q], &audio_bit[alpha]], &mut rng);
        let visual = mix(&[&visual_q[q], &visual_bit[beta]], &mut rng);
        let secondary = spec.task == Task::MultiLabel && rng.random_bool(0.5);
        let text = text_t.as_ref().map(|(per_class, extra)| {
            let zeros = vec![0.0; extra.len()];
            let flag: &[f32] = if secondary { extra } else { &zeros };
            mix(&[&per_class[class], flag], &mut rng)
        });
        let label = match spec.task {
            Task::SingleLabel => Label::Single(class),
            Task::MultiLabel => {
                let mut v = vec![false; spec.classes];
                v[class] = true;
                if secondary {
                    v[(class + 1) % spec.classes] = true;
                }
                Label::Multi(v)
            }
        };
        let split = (spec.test_every > 0).then(|| {
            if i % spec.test_every == spec.test_every - 1 {
                "test"
            } else {
                "train"
            }
            .to_string()
        });
        samples.push(Sample {
            id: format!("s{i:05}"),
            actor,
            split,
            label,
            audio,
            visual,
            text,
        });
    }
    Ok(Dataset {
        task: spec.task,
        class_names: class_names(spec.classes),
        audio_shape,
        visual_shape,
        text_shape: spec.text.map(|(t, d)| vec![t, d]),
        samples,
    })
}
