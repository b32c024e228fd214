//! Momentum and learning-rate schedules.

use crate::error::{Error, Result};

/// `max(0, (t − 2) / t)`: zero for the first two steps, increasing to 1.
pub fn gamma_nesterov(t: u64) -> Result<f64> {
    if t < 1 {
        return Err(Error::InvalidStep(t));
    }
    Ok(((t as f64 - 2.0) / t as f64).max(0.0))
}

/// `0.9 + 0.09 (P − i) / P`: 0.9 at the last stage, largest at stage 1.
pub fn gamma_stagewise(stage: usize, stages: usize) -> Result<f64> {
    if stage < 1 || stage > stages {
        return Err(Error::StageOutOfRange { stage, stages });
    }
    Ok(0.9 + (stages - stage) as f64 / stages as f64 * 0.09)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentumSchedule {
    Constant(f64),
    Nesterov,
    Stagewise,
}

impl MomentumSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            MomentumSchedule::Constant(g) if !(0.0..1.0).contains(g) => {
                Err(Error::Validation(format!("momentum coefficient {g} outside [0, 1)")))
            }
            _ => Ok(()),
        }
    }

    /// Coefficient for update `t` (1-based) at `stage` of `stages`.
    pub fn gamma(&self, t: u64, stage: usize, stages: usize) -> Result<f64> {
        match self {
            MomentumSchedule::Constant(g) => Ok(*g),
            MomentumSchedule::Nesterov => gamma_nesterov(t),
            MomentumSchedule::Stagewise => gamma_stagewise(stage, stages),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrDecay {
    None,
    /// Cosine from the base rate (at the end of warm-up) to `final_lr` at
    /// `total_steps`, constant afterwards.
    Cosine {
        final_lr: f64,
        total_steps: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_steps: u64,
    pub warmup_start: f64,
    pub decay: LrDecay,
    /// Horizon `T` of the delay discount `η / τ^ρₜ`, `ρₜ = 1 − min(t/T, 1)`.
    pub delay_discount: Option<u64>,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        Self {
            base,
            warmup_steps: 0,
            warmup_start: base,
            decay: LrDecay::None,
            delay_discount: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Validation(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lr", self.base)?;
        if self.warmup_steps > 0 {
            positive("warmup_start", self.warmup_start)?;
        }
        if let LrDecay::Cosine { final_lr, total_steps } = self.decay {
            positive("lr_final", final_lr)?;
            if total_steps <= self.warmup_steps {
                return Err(Error::Validation("lr_total_steps must exceed warmup_steps".into()));
            }
        }
        if self.delay_discount == Some(0) {
            return Err(Error::Validation("lr_discount_T must be at least 1".into()));
        }
        Ok(())
    }

    /// Learning rate after `t` completed updates at a stage with delay `tau`.
    pub fn lr_at(&self, t: u64, tau: usize) -> f64 {
        let scheduled = if t < self.warmup_steps {
            let frac = t as f64 / self.warmup_steps as f64;
            self.warmup_start + (self.base - self.warmup_start) * frac
        } else {
            match self.decay {
                LrDecay::None => self.base,
                LrDecay::Cosine { final_lr, total_steps } => {
                    let span = (total_steps - self.warmup_steps) as f64;
                    let progress = (t - self.warmup_steps) as f64 / span;
                    if progress <= 0.0 {
                        self.base
                    } else if progress >= 1.0 {
                        final_lr
                    } else {
                        final_lr + 0.5 * (self.base - final_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
                    }
                }
            }
        };
        scheduled * self.delay_multiplier(t, tau)
    }

    pub fn delay_multiplier(&self, t: u64, tau: usize) -> f64 {
        match self.delay_discount {
            None => 1.0,
            Some(horizon) => {
                let rho = 1.0 - (t as f64 / horizon as f64).min(1.0);
                if rho == 0.0 {
                    1.0
                } else {
                    (tau.max(1) as f64).powf(-rho)
                }
            }
        }
    }
}
