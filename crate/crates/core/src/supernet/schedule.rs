use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Optimizer and learning-rate schedule for one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub initial_lr: f64,
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "default_decay")]
    pub decay_factor: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_decay() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_batch() -> usize {
    128
}

impl TrainSchedule {
    /// Stand-alone network training: 200 epochs from 0.1, decayed at 160 and 180.
    pub fn subnet_default() -> Self {
        TrainSchedule::new(200, 0.1, vec![160, 180])
    }

    /// Super-network training: 500 epochs from 0.1, decayed at 300 and 400.
    pub fn supernet_default() -> Self {
        TrainSchedule::new(500, 0.1, vec![300, 400])
    }

    /// Adaptation fine-tuning: 200 epochs from 0.01, decayed at 100.
    pub fn adapt_default() -> Self {
        TrainSchedule::new(200, 0.01, vec![100])
    }

    pub fn new(epochs: usize, initial_lr: f64, milestones: Vec<usize>) -> Self {
        TrainSchedule {
            epochs,
            initial_lr,
            milestones,
            decay_factor: default_decay(),
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            batch_size: default_batch(),
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.initial_lr = lr;
        self
    }

    /// Same schedule stretched or shrunk to `epochs`, milestones scaled
    /// proportionally.
    pub fn rescaled(&self, epochs: usize) -> Self {
        let milestones = self
            .milestones
            .iter()
            .map(|&m| m * epochs / self.epochs.max(1))
            .filter(|&m| m < epochs)
            .collect::<Vec<_>>();
        let mut deduped = milestones.clone();
        deduped.dedup();
        TrainSchedule {
            epochs,
            milestones: deduped,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("initial_lr {} must be non-negative", self.initial_lr)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::Config(format!("decay_factor {} must lie in (0, 1)", self.decay_factor)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("milestones must be strictly increasing".into()));
        }
        if self.milestones.last().is_some_and(|&m| m >= self.epochs) {
            return Err(Error::Config("milestones must be below the epoch count".into()));
        }
        Ok(())
    }

    /// Short digest identifying the schedule, stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("schedule serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

/// `initial_lr * decay_factor^(milestones <= epoch)`.
pub fn lr_at_epoch(schedule: &TrainSchedule, epoch: usize) -> Result<f64> {
    if epoch >= schedule.epochs {
        return Err(Error::Range(format!(
            "epoch {epoch} outside a {}-epoch schedule",
            schedule.epochs
        )));
    }
    let passed = schedule.milestones.iter().filter(|&&m| m <= epoch).count();
    Ok(schedule.initial_lr * schedule.decay_factor.powi(passed as i32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn milestone_schedule() {
        let s = TrainSchedule::subnet_default();
        assert_eq!(lr_at_epoch(&s, 0).unwrap(), 0.1);
        assert_eq!(lr_at_epoch(&s, 159).unwrap(), 0.1);
        assert!((lr_at_epoch(&s, 160).unwrap() - 1e-3).abs() < 1e-15);
        assert!((lr_at_epoch(&s, 180).unwrap() - 1e-5).abs() < 1e-17);
        assert!((lr_at_epoch(&s, 199).unwrap() - 1e-5).abs() < 1e-17);
        assert!(matches!(lr_at_epoch(&s, 200), Err(Error::Range(_))));
    }

    #[test]
    fn constant_without_milestones() {
        let s = TrainSchedule::new(7, 0.05, vec![]);
        for e in 0..7 {
            assert_eq!(lr_at_epoch(&s, e).unwrap(), 0.05);
        }
    }

    #[test]
    fn lr_non_increasing() {
        for s in [
            TrainSchedule::supernet_default(),
            TrainSchedule::adapt_default(),
            TrainSchedule::subnet_default(),
        ] {
            s.validate().unwrap();
            let lrs: Vec<f64> = (0..s.epochs).map(|e| lr_at_epoch(&s, e).unwrap()).collect();
            assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn invalid_milestones() {
        assert!(TrainSchedule::new(10, 0.1, vec![5, 5]).validate().is_err());
        assert!(TrainSchedule::new(10, 0.1, vec![10]).validate().is_err());
    }

    #[test]
    fn rescaled_keeps_proportions() {
        let s = TrainSchedule::supernet_default().rescaled(10);
        assert_eq!(s.milestones, vec![6, 8]);
        s.validate().unwrap();
    }
}
