//! Nesterov variants, Adam variants, and the schedules that drive them.
//!
//! [`StageOptimizer`] bundles one stage's optimizer state with its schedules
//! so the pipeline runner only has to ask for an evaluation point and hand
//! back a gradient.

mod adaptive;
mod nag;
mod schedule;

pub use adaptive::{adaptive_step, AdaptiveParams, AdaptiveState};
pub use nag::{lookahead_point, nag_step, NagState};
pub use schedule::{gamma_nesterov, gamma_stagewise, LrDecay, LrSchedule, MomentumSchedule};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::DenseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    Nag,
    NagDiscounted,
    /// Same update as [`OptimizerKind::Nag`]; kept as its own name for
    /// ablation configs.
    NagBase,
    AdamW,
    NAdamW,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 6] = [
        OptimizerKind::Sgd,
        OptimizerKind::Nag,
        OptimizerKind::NagDiscounted,
        OptimizerKind::NagBase,
        OptimizerKind::AdamW,
        OptimizerKind::NAdamW,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Nag => "nag",
            OptimizerKind::NagDiscounted => "nag_discounted",
            OptimizerKind::NagBase => "nag_base",
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::NAdamW => "nadamw",
        }
    }

    /// Gradients are taken at the look-ahead point and momentum is explicit.
    pub fn is_nag_family(self) -> bool {
        matches!(
            self,
            OptimizerKind::Nag | OptimizerKind::NagDiscounted | OptimizerKind::NagBase
        )
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, OptimizerKind::AdamW | OptimizerKind::NAdamW)
    }

    /// Factor on the gradient in a momentum-SGD style update.
    pub fn grad_coeff(self, lr: f64, gamma: f64) -> f64 {
        if self == OptimizerKind::NagDiscounted {
            lr * (1.0 - gamma)
        } else {
            lr
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown optimizer `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub momentum: MomentumSchedule,
    pub lr: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub momentum_warmup: bool,
}

impl OptimizerSpec {
    /// Nesterov-family spec with a constant rate and no weight decay.
    pub fn nag(kind: OptimizerKind, momentum: MomentumSchedule, lr: f64) -> Self {
        Self {
            kind,
            momentum,
            lr: LrSchedule::constant(lr),
            beta1: 0.99,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            momentum_warmup: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lr.validate()?;
        self.momentum.validate()?;
        if self.kind.is_adaptive() {
            if self.momentum == MomentumSchedule::Nesterov {
                return Err(Error::Validation(
                    "gamma_mode=nesterov is only defined for the nag optimizers".into(),
                ));
            }
            self.adaptive_params(self.beta1).validate()?;
        }
        Ok(())
    }

    fn adaptive_params(&self, beta1: f64) -> AdaptiveParams {
        AdaptiveParams {
            beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            nesterov: self.kind == OptimizerKind::NAdamW,
            momentum_warmup: self.momentum_warmup,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Nag(NagState),
    Adaptive(AdaptiveState),
}

/// What one update used, for the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub lr: f64,
    /// γₜ for Nesterov variants, β₁ for Adam variants, 0 for SGD.
    pub gamma: f64,
    /// Factor multiplying the gradient in the weight update: η(1−γ) for the
    /// discounted variant, η for the others. Meaningless for Adam variants.
    pub grad_coeff: f64,
    /// `dₜ`, for Nesterov variants.
    pub look_ahead: Option<DenseVector>,
}

/// Optimizer state plus schedules for one pipeline stage.
#[derive(Debug, Clone)]
pub struct StageOptimizer {
    spec: OptimizerSpec,
    stage: usize,
    stages: usize,
    tau: usize,
    state: OptimizerState,
    updates: u64,
}

impl StageOptimizer {
    pub fn new(spec: OptimizerSpec, stage: usize, stages: usize, tau: usize, w0: DenseVector) -> Result<Self> {
        spec.validate()?;
        if stage < 1 || stage > stages {
            return Err(Error::StageOutOfRange { stage, stages });
        }
        let state = if spec.kind.is_adaptive() {
            OptimizerState::Adaptive(AdaptiveState::new(w0))
        } else {
            OptimizerState::Nag(NagState::new(w0))
        };
        Ok(Self {
            spec,
            stage,
            stages,
            tau,
            state,
            updates: 0,
        })
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn weights(&self) -> &DenseVector {
        match &self.state {
            OptimizerState::Nag(s) => &s.w,
            OptimizerState::Adaptive(s) => &s.w,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Momentum coefficient the next update will use.
    pub fn gamma(&self) -> Result<f64> {
        match (&self.state, self.spec.kind) {
            (_, OptimizerKind::Sgd) => Ok(0.0),
            (OptimizerState::Nag(s), _) => self.spec.momentum.gamma(s.t, self.stage, self.stages),
            (OptimizerState::Adaptive(_), _) => Ok(self.beta1()),
        }
    }

    fn beta1(&self) -> f64 {
        match self.spec.momentum {
            // stage index was range-checked at construction
            MomentumSchedule::Stagewise => gamma_stagewise(self.stage, self.stages).unwrap_or(0.9),
            _ => self.spec.beta1,
        }
    }

    /// Learning rate the next update will use.
    pub fn lr(&self) -> f64 {
        self.spec.lr.lr_at(self.updates, self.tau)
    }

    /// Where gradients should be evaluated right now: the look-ahead point
    /// for Nesterov variants, the weights otherwise.
    pub fn eval_point(&self) -> Result<DenseVector> {
        match (&self.state, self.spec.kind) {
            (OptimizerState::Nag(s), k) if k.is_nag_family() => lookahead_point(s, self.gamma()?),
            _ => Ok(self.weights().clone()),
        }
    }

    pub fn step(&mut self, g: &DenseVector) -> Result<StepRecord> {
        let lr = self.lr();
        let gamma = self.gamma()?;
        let record = match &self.state {
            OptimizerState::Nag(s) => {
                let discounted = self.spec.kind == OptimizerKind::NagDiscounted;
                let look_ahead = self
                    .spec
                    .kind
                    .is_nag_family()
                    .then(|| s.look_ahead(gamma))
                    .transpose()?;
                let next = nag_step(s, g, gamma, lr, discounted)?;
                self.state = OptimizerState::Nag(next);
                StepRecord {
                    lr,
                    gamma,
                    grad_coeff: self.spec.kind.grad_coeff(lr, gamma),
                    look_ahead,
                }
            }
            OptimizerState::Adaptive(s) => {
                let next = adaptive_step(s, g, lr, &self.spec.adaptive_params(gamma))?;
                self.state = OptimizerState::Adaptive(next);
                StepRecord {
                    lr,
                    gamma,
                    grad_coeff: lr,
                    look_ahead: None,
                }
            }
        };
        self.updates += 1;
        Ok(record)
    }
}
