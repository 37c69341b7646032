use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimization and preprocessing settings. Defaults are the full-scale
/// values; desk-scale runs override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_initial: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every_steps: u64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: u64,
    /// Side of the square canvas images are zero-padded into.
    pub pad_size: usize,
    /// Longer edge images are resized to at ingestion.
    pub longer_edge: usize,
    pub seed: u64,
    /// Caps the number of optimizer steps per network.
    pub max_steps: Option<u64>,
    /// Write an intermediate checkpoint every this many steps.
    pub checkpoint_every: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_initial: 0.01,
            lr_decay_factor: 0.1,
            lr_decay_every_steps: 10_000,
            momentum: 0.9,
            batch_size: 16,
            epochs: 200,
            pad_size: 500,
            longer_edge: 500,
            seed: 0,
            max_steps: None,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.lr_initial.is_finite() && self.lr_initial > 0.0) {
            return bad("lr_initial must be positive");
        }
        if !self.lr_decay_factor.is_finite() || self.lr_decay_factor <= 0.0 {
            return bad("lr_decay_factor must be positive");
        }
        if self.lr_decay_every_steps == 0 {
            return bad("lr_decay_every_steps must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.pad_size == 0 || self.longer_edge == 0 {
            return bad("pad_size and longer_edge must be at least 1");
        }
        if self.longer_edge > self.pad_size {
            return bad("longer_edge must not exceed pad_size");
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be at least 1");
        }
        Ok(())
    }

    /// Number of optimizer steps for a dataset of `len` training pairs.
    pub fn total_steps(&self, len: usize) -> u64 {
        let per_epoch = len.div_ceil(self.batch_size) as u64;
        let full = per_epoch * self.epochs;
        self.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        crate::tensor::optim::step_decay_lr(
            self.lr_initial,
            self.lr_decay_factor,
            self.lr_decay_every_steps,
            step,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_full_scale_values() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_initial, 0.01);
        assert_eq!(c.lr_decay_factor, 0.1);
        assert_eq!(c.lr_decay_every_steps, 10_000);
        assert_eq!(c.momentum, 0.9);
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.epochs, 200);
        assert_eq!(c.pad_size, 500);
        c.validate().unwrap();
    }

    #[test]
    fn total_steps_keeps_partial_batch() {
        let c = TrainConfig {
            batch_size: 4,
            epochs: 3,
            ..Default::default()
        };
        assert_eq!(c.total_steps(10), 9);
        let c = TrainConfig {
            max_steps: Some(5),
            ..c
        };
        assert_eq!(c.total_steps(10), 5);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = toml::from_str::<TrainConfig>("learningrate = 0.1").unwrap_err();
        assert!(err.to_string().contains("learningrate"));
    }
}
