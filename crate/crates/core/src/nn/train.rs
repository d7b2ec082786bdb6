//! Mini-batch SGD with momentum.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::Dataset;
use super::graph::{evaluate, loss_and_grads};
use super::schedule::{lr_at, ScheduleKind, ScheduleSpec};
use super::{cast, init_weights, NetworkWeights, Scalar};
use crate::arch::ArchitectureSpec;
use crate::error::{Error, Result};

/// Momentum SGD: `v = mu*v + g + wd*w` (decay on filter/matrix weights only),
/// then `w -= lr*v`.
#[derive(Debug, Clone)]
pub struct Sgd<T = f32> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: NetworkWeights<T>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(arch: &ArchitectureSpec, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: NetworkWeights::zeros(arch),
        }
    }

    pub fn step(&mut self, weights: &mut NetworkWeights<T>, grads: &NetworkWeights<T>, lr: f64) {
        let (mu, wd, lr): (T, T, T) = (cast(self.momentum), cast(self.weight_decay), cast(lr));
        for ((w, g), v) in weights.layers.iter_mut().zip(&grads.layers).zip(self.velocity.layers.iter_mut()) {
            for ((wi, &gi), vi) in w.weight.iter_mut().zip(&g.weight).zip(v.weight.iter_mut()) {
                *vi = mu * *vi + gi + wd * *wi;
                *wi = *wi - lr * *vi;
            }
            let pairs = [(&mut w.bias, &g.bias, &mut v.bias), (&mut w.scale, &g.scale, &mut v.scale), (&mut w.shift, &g.shift, &mut v.shift)];
            for (wt, gt, vt) in pairs {
                if let (Some(wt), Some(gt), Some(vt)) = (wt.as_mut(), gt.as_ref(), vt.as_mut()) {
                    for ((wi, &gi), vi) in wt.iter_mut().zip(gt).zip(vt.iter_mut()) {
                        *vi = mu * *vi + gi;
                        *wi = *wi - lr * *vi;
                    }
                }
            }
        }
    }
}

/// Rescale `grads` so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm<T: Scalar>(grads: &mut NetworkWeights<T>, max_norm: f64) -> f64 {
    let norm = grads.values().map(|v| v.to_f64().unwrap().powi(2)).sum::<f64>().sqrt();
    if norm > max_norm {
        let s: T = cast(max_norm / norm);
        grads.values_mut().for_each(|v| *v *= s);
    }
    norm
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: NetworkWeights<f32>,
    /// Validation accuracy after each epoch.
    pub trace: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_accuracy(&self) -> f64 {
        *self.trace.last().expect("at least one epoch")
    }
}

/// Train `weights` on `train_set`, evaluating on `val_set` after every epoch.
///
/// The learning rate is updated every step from the fractional epoch. Batch
/// order is reshuffled each epoch from `seed`; a scratch schedule first
/// replaces the weights with `init_weights(arch, seed)`.
pub fn train(
    weights: &NetworkWeights<f32>,
    arch: &ArchitectureSpec,
    train_set: &Dataset,
    val_set: &Dataset,
    schedule: &ScheduleSpec,
    seed: u64,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    weights.validate(arch)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Validation("training and validation splits must be non-empty".into()));
    }
    if train_set.shape != arch.input_shape || val_set.shape != arch.input_shape {
        return Err(Error::Validation(format!(
            "dataset shape {:?} does not match architecture input {:?}",
            train_set.shape, arch.input_shape
        )));
    }
    let classes = arch.num_classes();
    if train_set.labels.iter().chain(&val_set.labels).any(|&y| y >= classes) {
        return Err(Error::Validation(format!("dataset labels must be < {classes}")));
    }

    let mut w = match schedule.kind {
        ScheduleKind::Scratch => init_weights(arch, seed),
        _ => weights.clone(),
    };
    let mut opt = Sgd::new(arch, schedule.momentum, schedule.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let steps = train_set.len().div_ceil(schedule.batch_size);
    let mut trace = Vec::with_capacity(schedule.epochs);

    for epoch in 0..schedule.epochs {
        order.shuffle(&mut rng);
        for (step, idx) in order.chunks(schedule.batch_size).enumerate() {
            let lr = lr_at(schedule, epoch as f64 + step as f64 / steps as f64)?;
            let batch = train_set.batch::<f32>(idx);
            let (loss, grads) = match loss_and_grads(&w, arch, &batch) {
                Ok(r) => r,
                Err(Error::Training { message, .. }) => {
                    return Err(Error::Training { epoch, message, trace });
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: "non-finite loss".into(),
                    trace,
                });
            }
            let mut grads = grads;
            if let Some(c) = schedule.clip_norm {
                clip_grad_norm(&mut grads, c);
            }
            opt.step(&mut w, &grads, lr);
        }
        if w.values().any(|v| !v.is_finite()) {
            return Err(Error::Training {
                epoch,
                message: "non-finite weights".into(),
                trace,
            });
        }
        let acc = evaluate(&w, arch, val_set)?;
        log::debug!("{} epoch {}/{}: val acc {acc:.4}", schedule.kind.name(), epoch + 1, schedule.epochs);
        trace.push(acc);
    }
    Ok(TrainOutcome { weights: w, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::nn::{synth_dataset, DatasetSpec};

    fn small_data() -> (Dataset, Dataset) {
        synth_dataset(&DatasetSpec::new(1, 10, 20, [3, 8, 8])).unwrap()
    }

    #[test]
    fn zero_lr_step_is_a_no_op() {
        let a = builtin::chain3();
        let mut w: NetworkWeights<f32> = init_weights(&a, 1);
        let before = w.clone();
        let (tr, _) = small_data();
        let (_, g) = loss_and_grads(&w, &a, &tr.batch::<f32>(&[0, 1, 2])).unwrap();
        let mut opt = Sgd::new(&a, 0.9, 5e-4);
        opt.step(&mut w, &g, 0.0);
        opt.step(&mut w, &g, 0.0);
        assert_eq!(w, before);
    }

    #[test]
    fn training_is_deterministic() {
        let a = builtin::chain3();
        let w = init_weights(&a, 2);
        let (tr, va) = small_data();
        let s = ScheduleSpec::finetune(2);
        let r1 = train(&w, &a, &tr, &va, &s, 9).unwrap();
        let r2 = train(&w, &a, &tr, &va, &s, 9).unwrap();
        assert_eq!(r1.trace, r2.trace);
        assert_eq!(r1.weights, r2.weights);
        assert_eq!(r1.trace.len(), 2);
        assert_eq!(evaluate(&r1.weights, &a, &va).unwrap(), r1.final_accuracy());
    }

    #[test]
    fn scratch_ignores_incoming_weights() {
        let a = builtin::chain3();
        let (tr, va) = small_data();
        let s = ScheduleSpec::scratch(1);
        let r1 = train(&init_weights(&a, 1), &a, &tr, &va, &s, 4).unwrap();
        let r2 = train(&init_weights(&a, 2), &a, &tr, &va, &s, 4).unwrap();
        assert_eq!(r1.weights, r2.weights);
    }

    #[test]
    fn divergence_reports_epoch_and_trace() {
        let a = builtin::chain3();
        let (tr, va) = small_data();
        let mut s = ScheduleSpec::finetune(3);
        s.lr0 = 1e12;
        match train(&init_weights(&a, 1), &a, &tr, &va, &s, 1) {
            Err(Error::Training { epoch, trace, .. }) => assert_eq!(trace.len(), epoch),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
