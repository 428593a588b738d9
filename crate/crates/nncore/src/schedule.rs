//! Epoch-indexed learning-rate schedule: linear ramp followed by cosine annealing.

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub start_lr: f64,
    pub peak_lr: f64,
    pub final_lr: f64,
    /// Epochs spent ramping linearly from `start_lr` to `peak_lr`.
    pub ramp_epochs: usize,
    /// The cosine phase ends at this epoch with `final_lr`.
    pub total_epochs: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            start_lr: 0.01,
            peak_lr: 0.25,
            final_lr: 0.05,
            ramp_epochs: 10,
            total_epochs: 100,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let lrs = [self.start_lr, self.peak_lr, self.final_lr];
        if lrs.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(NnError::Argument(format!("invalid learning rates {lrs:?}")));
        }
        if self.total_epochs == 0 || self.ramp_epochs > self.total_epochs {
            return Err(NnError::Argument(format!(
                "ramp of {} epochs does not fit {} total epochs",
                self.ramp_epochs, self.total_epochs
            )));
        }
        Ok(())
    }

    /// Learning rate for `epoch` in `0..=total_epochs`.
    ///
    /// The endpoint `total_epochs` is accepted and yields `final_lr`, so the
    /// curve can be inspected at its boundary.
    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        self.validate()?;
        if epoch > self.total_epochs {
            return Err(NnError::Argument(format!(
                "epoch {epoch} outside schedule of {} epochs",
                self.total_epochs
            )));
        }
        // Written as convex combinations so both endpoints are reproduced exactly.
        if epoch < self.ramp_epochs {
            let t = epoch as f64 / self.ramp_epochs as f64;
            return Ok(self.start_lr * (1.0 - t) + self.peak_lr * t);
        }
        let span = self.total_epochs - self.ramp_epochs;
        if span == 0 {
            return Ok(self.peak_lr);
        }
        let t = (epoch - self.ramp_epochs) as f64 / span as f64;
        let w = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        let w = if epoch == self.total_epochs { 0.0 } else { w };
        Ok(self.peak_lr * w + self.final_lr * (1.0 - w))
    }
}
