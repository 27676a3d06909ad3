//! Reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// Minimum absolute decrease of the monitored loss that counts as progress.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    1e-4
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig { factor: 0.1, patience: 10, min_lr: 1e-7, threshold: default_threshold() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub config: SchedulerConfig,
    pub lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(config: SchedulerConfig, lr: f64) -> Self {
        PlateauScheduler { config, lr, best: f64::INFINITY, bad_epochs: 0 }
    }

    /// Record one epoch's monitored loss and return the learning rate for
    /// the next epoch. After `patience` consecutive epochs without progress
    /// the rate is multiplied by `factor` (floored at `min_lr`).
    pub fn step(&mut self, loss: f64) -> f64 {
        if loss < self.best - self.config.threshold {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.config.patience {
                self.lr = (self.lr * self.config.factor).max(self.config.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}
