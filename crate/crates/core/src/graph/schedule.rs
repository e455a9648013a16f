use serde::{Deserialize, Serialize};

use crate::error::{FivesError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleShape {
    #[default]
    Linear,
    Exponential,
}

/// Temperature annealed from `start` to `end` over `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub start: f64,
    pub end: f64,
    pub total_steps: u64,
    pub shape: ScheduleShape,
}

impl TemperatureSchedule {
    pub fn new(start: f64, end: f64, total_steps: u64, shape: ScheduleShape) -> Result<Self> {
        let s = Self {
            start,
            end,
            total_steps,
            shape,
        };
        s.validate()?;
        Ok(s)
    }

    /// A schedule pinned at `tau` (annealing disabled).
    pub fn constant(tau: f64, total_steps: u64) -> Result<Self> {
        Self::new(tau, tau, total_steps, ScheduleShape::Linear)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.end > 0.0 && self.start >= self.end && self.start.is_finite()) {
            return Err(FivesError::Config(format!(
                "temperature schedule needs start >= end > 0, got {} -> {}",
                self.start, self.end
            )));
        }
        Ok(())
    }

    /// Temperature after `step` updates; clamps past the end.
    pub fn at(&self, step: u64) -> f64 {
        if self.total_steps == 0 || step == 0 {
            return self.start;
        }
        if step >= self.total_steps {
            return self.end;
        }
        let frac = step as f64 / self.total_steps as f64;
        let tau = match self.shape {
            ScheduleShape::Linear => self.start + (self.end - self.start) * frac,
            ScheduleShape::Exponential => self.start * (self.end / self.start).powf(frac),
        };
        tau.clamp(self.end, self.start)
    }
}
