use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};

/// Linear warmup to `base_lr`, then linear decay to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Schedule {
    pub fn new(base_lr: f64, warmup_steps: u64, total_steps: u64) -> Result<Self> {
        let s = Self {
            base_lr,
            warmup_steps,
            total_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps == 0 || self.warmup_steps > self.total_steps || !(self.base_lr >= 0.0)
        {
            return Err(Error::Config(format!(
                "schedule needs 0 < warmup_steps <= total_steps and base_lr >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> Real {
        let base = self.base_lr;
        let lr = if step <= self.warmup_steps {
            base * step as f64 / self.warmup_steps as f64
        } else if self.total_steps == self.warmup_steps {
            0.0
        } else {
            base * self.total_steps.saturating_sub(step) as f64
                / (self.total_steps - self.warmup_steps) as f64
        };
        lr.max(0.0) as Real
    }
}
