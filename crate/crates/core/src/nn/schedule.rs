//! Retraining schedules and their learning-rate curves.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// Keep the surviving weights, small cosine-annealed learning rate.
    Finetune,
    /// Keep the surviving weights, warm up to the training learning rate, then cosine.
    Rewind,
    /// Re-initialize, then train with the training learning rate.
    Scratch,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 3] = [ScheduleKind::Finetune, ScheduleKind::Rewind, ScheduleKind::Scratch];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Finetune => "finetune",
            ScheduleKind::Rewind => "rewind",
            ScheduleKind::Scratch => "scratch",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown schedule '{s}' (expected finetune, rewind or scratch)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub epochs: usize,
    pub lr0: f64,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
}

fn default_warmup() -> usize {
    5
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_batch_size() -> usize {
    32
}
fn default_clip() -> Option<f64> {
    Some(5.0)
}

impl ScheduleSpec {
    /// Standard hyperparameters for `kind` over `epochs` epochs. Rewind warm-up
    /// is 5 epochs, shortened to `epochs - 1` for shorter runs.
    pub fn new(kind: ScheduleKind, epochs: usize) -> Self {
        let lr0 = match kind {
            ScheduleKind::Finetune => 0.01,
            ScheduleKind::Rewind | ScheduleKind::Scratch => 0.1,
        };
        ScheduleSpec {
            kind,
            epochs,
            lr0,
            warmup_epochs: default_warmup().min(epochs.saturating_sub(1)),
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            batch_size: default_batch_size(),
            clip_norm: default_clip(),
        }
    }

    pub fn finetune(epochs: usize) -> Self {
        Self::new(ScheduleKind::Finetune, epochs)
    }

    pub fn rewind(epochs: usize) -> Self {
        Self::new(ScheduleKind::Rewind, epochs)
    }

    pub fn scratch(epochs: usize) -> Self {
        Self::new(ScheduleKind::Scratch, epochs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Validation("schedule needs at least one epoch".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Validation(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self.kind == ScheduleKind::Rewind && self.warmup_epochs >= self.epochs {
            return Err(Error::Validation(format!(
                "warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Validation(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Validation("weight_decay must be non-negative".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Validation("clip_norm must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Validation("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Learning rate at a (possibly fractional) epoch in `[0, t)`.
pub fn lr_at(s: &ScheduleSpec, epoch: f64) -> Result<f64> {
    s.validate()?;
    let t = s.epochs as f64;
    if !(epoch >= 0.0 && epoch < t) {
        return Err(Error::Validation(format!("epoch {epoch} outside [0, {t})")));
    }
    let cosine = |e: f64, span: f64| 0.5 * s.lr0 * (1.0 + (PI * e / span).cos());
    Ok(match s.kind {
        ScheduleKind::Finetune | ScheduleKind::Scratch => cosine(epoch, t),
        ScheduleKind::Rewind => {
            let w = s.warmup_epochs as f64;
            if epoch < w {
                s.lr0 * epoch / w
            } else {
                cosine(epoch - w, t - w)
            }
        }
    })
}
