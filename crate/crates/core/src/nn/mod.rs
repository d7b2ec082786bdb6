//! A small differentiable CNN kernel and the standard pruning setting.
//!
//! Everything runs on the CPU in a fixed summation order so that a training
//! run is bit-reproducible from its seed. The kernel is generic over `f32`
//! (training) and `f64` (gradient verification).

mod data;
mod graph;
mod ops;
mod prune;
mod schedule;
mod train;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arch::ArchitectureSpec;
use crate::error::{Error, Result};

pub use data::{synth_dataset, Batch, Dataset, DatasetSpec};
pub use graph::{evaluate, forward, loss_and_grads, predict, ForwardCache};
pub use prune::{filter_l2_norms, mask_dense, norm_plan, one_shot_prune, select_kept, PrunedNetwork};
pub use schedule::{lr_at, ScheduleKind, ScheduleSpec};
pub use train::{train, Sgd, TrainOutcome};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + AddAssign + MulAssign + Send + Sync + Debug + Default + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("representable")
}

/// Parameters of one layer. `weight` is filter-major: `[c_out][c_in][k][k]`
/// for conv and `[c_out][c_in]` for fc, so filter `j` is one contiguous row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de>"))]
pub struct LayerParams<T> {
    pub weight: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<Vec<T>>,
}

impl<T: Scalar> LayerParams<T> {
    fn tensors(&self) -> impl Iterator<Item = &Vec<T>> {
        std::iter::once(&self.weight)
            .chain(self.bias.iter())
            .chain(self.scale.iter())
            .chain(self.shift.iter())
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        std::iter::once(&mut self.weight)
            .chain(self.bias.iter_mut())
            .chain(self.scale.iter_mut())
            .chain(self.shift.iter_mut())
    }
}

/// Dense weights for every layer of an architecture, in layer-id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de>"))]
pub struct NetworkWeights<T = f32> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> NetworkWeights<T> {
    /// All-zero tensors shaped for `arch`.
    pub fn zeros(arch: &ArchitectureSpec) -> Self {
        NetworkWeights {
            layers: arch
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: vec![T::zero(); l.c_out * l.filter_len()],
                    bias: l.has_bias.then(|| vec![T::zero(); l.c_out]),
                    scale: l.affine.then(|| vec![T::zero(); l.c_out]),
                    shift: l.affine.then(|| vec![T::zero(); l.c_out]),
                })
                .collect(),
        }
    }

    /// Check shapes against `arch` and that every value is finite.
    pub fn validate(&self, arch: &ArchitectureSpec) -> Result<()> {
        if self.layers.len() != arch.layers.len() {
            return Err(Error::Validation(format!(
                "weights have {} layers, architecture has {}",
                self.layers.len(),
                arch.layers.len()
            )));
        }
        for (l, p) in arch.layers.iter().zip(&self.layers) {
            let want = l.c_out * l.filter_len();
            let ok = p.weight.len() == want
                && p.bias.as_ref().map(Vec::len) == l.has_bias.then_some(l.c_out)
                && p.scale.as_ref().map(Vec::len) == l.affine.then_some(l.c_out)
                && p.shift.as_ref().map(Vec::len) == l.affine.then_some(l.c_out);
            if !ok {
                return Err(Error::Validation(format!("weights of layer {} do not match its shape", l.id)));
            }
            if p.tensors().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("weights of layer {} contain non-finite values", l.id)));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().flat_map(|l| l.tensors()).map(Vec::len).sum()
    }

    /// Flattened view over every scalar, in a fixed order.
    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.tensors()).flatten()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).flatten()
    }

    /// Element-wise conversion to another precision.
    pub fn cast<U: Scalar>(&self) -> NetworkWeights<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.to_f64().unwrap()).unwrap()).collect::<Vec<U>>();
        NetworkWeights {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: conv(&l.weight),
                    bias: l.bias.as_ref().map(conv),
                    scale: l.scale.as_ref().map(conv),
                    shift: l.shift.as_ref().map(conv),
                })
                .collect(),
        }
    }
}

/// Fan-in scaled Gaussian initialization: `w ~ N(0, g / fan_in)` with `g = 2`
/// for layers followed by a ReLU and `g = 1` for the classifier. Biases and
/// shifts start at zero, scales at one.
pub fn init_weights<T: Scalar>(arch: &ArchitectureSpec, seed: u64) -> NetworkWeights<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = NetworkWeights::zeros(arch);
    for (l, p) in arch.layers.iter().zip(w.layers.iter_mut()) {
        let gain = if l.id == arch.classifier_id { 1.0 } else { 2.0 };
        let std = (gain / l.filter_len() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for v in p.weight.iter_mut() {
            *v = cast(normal.sample(&mut rng));
        }
        if let Some(s) = p.scale.as_mut() {
            s.iter_mut().for_each(|v| *v = T::one());
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;

    #[test]
    fn init_is_deterministic_and_scaled() {
        let a = builtin::chain3();
        let w1: NetworkWeights<f32> = init_weights(&a, 7);
        let w2: NetworkWeights<f32> = init_weights(&a, 7);
        assert_eq!(w1, w2);
        assert_ne!(w1, init_weights::<f32>(&a, 8));
        w1.validate(&a).unwrap();
        assert!(w1.layers.iter().all(|l| l.bias.as_ref().unwrap().iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_variance_matches_fan_in() {
        // many seeds so the sample has well over 1000 weights
        let a = builtin::chain3();
        let mut xs = Vec::new();
        for seed in 0..20 {
            let w: NetworkWeights<f64> = init_weights(&a, seed);
            xs.extend_from_slice(&w.layers[0].weight);
        }
        assert!(xs.len() >= 1000);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let expect = 2.0 / 27.0;
        assert!((var / expect - 1.0).abs() < 0.2, "var {var} vs {expect}");
    }

    #[test]
    fn affine_starts_at_identity() {
        let a = builtin::resnet_tiny();
        let w: NetworkWeights<f32> = init_weights(&a, 1);
        for p in &w.layers[..10] {
            assert!(p.scale.as_ref().unwrap().iter().all(|&v| v == 1.0));
            assert!(p.shift.as_ref().unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn validate_rejects_bad_shapes_and_nan() {
        let a = builtin::chain3();
        let mut w: NetworkWeights<f32> = init_weights(&a, 1);
        w.layers[1].weight[0] = f32::NAN;
        assert!(w.validate(&a).is_err());
        let w: NetworkWeights<f32> = init_weights(&builtin::resnet_tiny(), 1);
        assert!(w.validate(&a).is_err());
    }
}
