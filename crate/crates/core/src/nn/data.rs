//! Procedural classification data.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{Error, Result};

/// A mini-batch in `batch x c x h x w` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub inputs: Vec<T>,
    pub labels: Vec<usize>,
    pub shape: [usize; 3],
}

/// An in-memory labelled split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f32>,
    pub labels: Vec<usize>,
    pub shape: [usize; 3],
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let per = self.per_sample();
        &self.inputs[i * per..(i + 1) * per]
    }

    fn per_sample(&self) -> usize {
        self.shape.iter().product()
    }

    /// Gather the listed samples into a batch of the requested precision.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Batch<T> {
        let per = self.per_sample();
        let mut inputs = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            inputs.extend(self.sample(i).iter().map(|&v| T::from_f32(v).unwrap()));
        }
        Batch {
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            shape: self.shape,
        }
    }
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub seed: u64,
    pub num_classes: usize,
    pub per_class: usize,
    pub shape: [usize; 3],
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Multiplier on every template; lower values make classes harder to separate.
    #[serde(default = "default_contrast")]
    pub contrast: f64,
}

fn default_noise() -> f64 {
    0.5
}

fn default_contrast() -> f64 {
    0.5
}

impl DatasetSpec {
    pub fn new(seed: u64, num_classes: usize, per_class: usize, shape: [usize; 3]) -> Self {
        DatasetSpec {
            seed,
            num_classes,
            per_class,
            shape,
            noise: default_noise(),
            contrast: default_contrast(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Validation("synthetic dataset needs at least 2 classes".into()));
        }
        if self.per_class < 2 {
            return Err(Error::Validation("synthetic dataset needs at least 2 samples per class".into()));
        }
        if self.shape.contains(&0) {
            return Err(Error::Validation("dataset shape entries must be >= 1".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Validation("noise must be a non-negative number".into()));
        }
        if !(self.contrast > 0.0 && self.contrast.is_finite()) {
            return Err(Error::Validation("contrast must be positive".into()));
        }
        Ok(())
    }

    /// Training samples per class (80 %, at least one sample on each side).
    pub fn train_per_class(&self) -> usize {
        (self.per_class * 4 / 5).clamp(1, self.per_class - 1)
    }
}

/// One fixed template per class, derived from the seed only.
///
/// Each channel is a plane wave with a class-specific integer frequency,
/// phase and amplitude, plus a small per-pixel random texture and a channel
/// offset.
pub fn class_templates(spec: &DatasetSpec) -> Vec<Vec<f32>> {
    let [c, h, w] = spec.shape;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    (0..spec.num_classes)
        .map(|_| {
            let mut t = Vec::with_capacity(c * h * w);
            for _ in 0..c {
                let (fy, fx) = loop {
                    let f = (rng.random_range(-2i32..=2), rng.random_range(-2i32..=2));
                    if f != (0, 0) {
                        break f;
                    }
                };
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = rng.random_range(0.6..1.2);
                let offset = 0.5 * rng.sample::<f64, _>(StandardNormal);
                for y in 0..h {
                    for x in 0..w {
                        let arg = 2.0 * PI * (fy as f64 * y as f64 / h as f64 + fx as f64 * x as f64 / w as f64) + phase;
                        let texture = 0.3 * rng.sample::<f64, _>(StandardNormal);
                        t.push((spec.contrast * (amp * arg.cos() + offset + texture)) as f32);
                    }
                }
            }
            t
        })
        .collect()
}

/// Deterministic `(train, validation)` splits: each sample is its class
/// template plus iid Gaussian pixel noise.
pub fn synth_dataset(spec: &DatasetSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let templates = class_templates(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(2);
    let noise = Normal::new(0.0, spec.noise).expect("validated noise");
    let n_train = spec.train_per_class();
    let empty = || Dataset {
        inputs: Vec::new(),
        labels: Vec::new(),
        shape: spec.shape,
    };
    let (mut train, mut val) = (empty(), empty());
    for i in 0..spec.per_class {
        for (label, t) in templates.iter().enumerate() {
            let dst = if i < n_train { &mut train } else { &mut val };
            dst.inputs
                .extend(t.iter().map(|&v| v + noise.sample(&mut rng) as f32));
            dst.labels.push(label);
        }
    }
    Ok((train, val))
}
