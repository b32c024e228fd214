use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numerics::DenseVector;
use crate::optimizers::{OptimizerSpec, StageOptimizer};
use crate::stage_models::{quadratic_value_grad, QuadraticSpec};

use super::trace::{weight_hash, Divergence, ProbeKind, ProbePlan, TraceRow, TrainingTrace, UpdateInfo};
use super::Mode;

#[derive(Debug, Clone, PartialEq)]
pub struct FixedDelayConfig {
    pub tau: usize,
    pub steps: u64,
    pub optimizer: OptimizerSpec,
    pub probe_interval: u64,
}

/// Optimizes one quadratic with gradients exactly `tau` updates old.
///
/// Update `t` uses the gradient taken at the evaluation point of step
/// `max(t − tau, 1)`, the same staleness a pipeline stage with delay `tau`
/// sees, warm-up included. The trace has a single stage; row `t` holds
/// `f(wₜ)` before update `t`.
pub fn run_fixed_delay(spec: &QuadraticSpec, w0: &DenseVector, cfg: &FixedDelayConfig) -> Result<TrainingTrace> {
    if cfg.steps == 0 || cfg.probe_interval == 0 {
        return Err(Error::Validation("steps and probe_interval must be at least 1".into()));
    }
    w0.expect_len(spec.dim())?;
    let mut opt = StageOptimizer::new(cfg.optimizer.clone(), 1, 1, cfg.tau, w0.clone())?;
    let plan = ProbePlan {
        interval: cfg.probe_interval,
        steps: cfg.steps,
    };
    let mut trace = TrainingTrace::new(Mode::AsyncStash, cfg.optimizer.kind, vec![cfg.tau], plan);
    let mut points: VecDeque<DenseVector> = VecDeque::with_capacity(cfg.tau + 1);

    for t in 1..=cfg.steps {
        let result = (|| -> Result<()> {
            if points.len() == cfg.tau + 1 {
                points.pop_front();
            }
            points.push_back(opt.eval_point()?);
            let (loss, _) = quadratic_value_grad(spec, opt.weights())?;
            let (_, g) = quadratic_value_grad(spec, &points[0])?;
            let keep = plan.keeps(t, cfg.tau);
            let w_pre = keep.then(|| opt.weights().clone());
            let rec = opt.step(&g)?;
            trace.updates[0].push(UpdateInfo {
                lr: rec.lr,
                gamma: rec.gamma,
                grad_coeff: rec.grad_coeff,
            });
            if let Some(w) = w_pre {
                let d = rec.look_ahead.unwrap_or_else(|| DenseVector::zeros(w.len()));
                trace.probes.insert((1, t, ProbeKind::W), w);
                trace.probes.insert((1, t, ProbeKind::D), d);
                trace.probes.insert((1, t, ProbeKind::G), g);
            }
            trace.losses.push(loss);
            trace.rows.push(TraceRow {
                step: t,
                stage: 1,
                loss,
                lr: rec.lr,
                gamma: rec.gamma,
                update_count: opt.updates(),
                weight_hash: weight_hash(opt.weights()),
            });
            Ok(())
        })();
        match result {
            Ok(()) => {}
            Err(Error::NonFinite { .. }) => {
                trace.diverged = Some(Divergence { step: t, stage: 1 });
                break;
            }
            Err(e) => return Err(e),
        }
    }
    trace.peak_versions[0] = cfg.tau + 1;
    trace.final_weights = vec![opt.weights().clone()];
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::{MomentumSchedule, OptimizerKind};
    use crate::stage_models::Curvature;

    fn scalar_spec() -> QuadraticSpec {
        QuadraticSpec::new(DenseVector::zeros(1), Curvature::Isotropic(1.0)).unwrap()
    }

    /// Delayed heavy-ball oracle on f(w) = ½w² with constant γ.
    fn scalar_oracle(tau: usize, gamma: f64, eta: f64, steps: usize) -> Vec<f64> {
        let mut w = vec![1.0f64];
        let mut w_prev = 1.0f64;
        let mut points = vec![];
        for t in 1..=steps {
            let cur = w[t - 1];
            let d = gamma * (cur - w_prev);
            points.push(cur + d);
            let g = points[t.saturating_sub(tau).max(1) - 1];
            w_prev = cur;
            w.push(cur + d - eta * (1.0 - gamma) * g);
        }
        w
    }

    #[test]
    fn matches_scalar_oracle() {
        for tau in [0, 1, 3] {
            let cfg = FixedDelayConfig {
                tau,
                steps: 30,
                optimizer: OptimizerSpec::nag(OptimizerKind::NagDiscounted, MomentumSchedule::Constant(0.9), 0.5),
                probe_interval: 10,
            };
            let w0 = DenseVector::new(vec![1.0]).unwrap();
            let trace = run_fixed_delay(&scalar_spec(), &w0, &cfg).unwrap();
            let oracle = scalar_oracle(tau, 0.9, 0.5, 30);
            assert_eq!(trace.final_weights[0][0], oracle[30], "tau={tau}");
            let w20 = trace.probe(1, 20, ProbeKind::W).unwrap();
            assert_eq!(w20[0], oracle[19]);
            assert_eq!(trace.rows.len(), 30);
            assert!(trace.diverged.is_none());
        }
    }

    #[test]
    fn divergence_is_marked() {
        let spec = QuadraticSpec::new(DenseVector::zeros(1), Curvature::Isotropic(1.0)).unwrap();
        let cfg = FixedDelayConfig {
            tau: 0,
            steps: 5000,
            optimizer: OptimizerSpec::nag(OptimizerKind::Sgd, MomentumSchedule::Constant(0.0), 5.0),
            probe_interval: 50,
        };
        let trace = run_fixed_delay(&spec, &DenseVector::new(vec![1.0]).unwrap(), &cfg).unwrap();
        assert!(trace.diverged.is_some());
        assert!(trace.rows.len() < 5000);
    }
}
