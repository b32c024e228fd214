use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::forecasters::{poly_fft_forecast, second_order_forecast, ForecasterKind, GradientHistory};
use crate::numerics::{DenseVector, SeededRng};
use crate::optimizers::{OptimizerSpec, StageOptimizer};
use crate::stage_models::{stage_backward, stage_forward, Batch, Dataset, ForwardCache, LossHead, StageFunction};

use super::schedule::{Action, ScheduleShape};
use super::stash::WeightStash;
use super::trace::{weight_hash, Divergence, ProbeKind, ProbePlan, TraceRow, TrainingTrace, UpdateInfo};
use super::{compute_delay, Mode};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub stages: usize,
    pub update_interval: usize,
    /// Microbatches per flush cycle in sync mode.
    pub microbatches: usize,
    /// Optimizer updates per stage.
    pub steps: u64,
    pub seed: u64,
    pub optimizer: OptimizerSpec,
    pub forecaster: ForecasterKind,
    pub fisher_lambda: f64,
    pub history_size: usize,
    pub probe_interval: u64,
}

impl PipelineConfig {
    pub fn shape(&self) -> ScheduleShape {
        ScheduleShape {
            mode: self.mode,
            stages: self.stages,
            update_interval: self.update_interval,
            microbatches: self.microbatches,
        }
    }

    /// Per-stage gradient delay; zero everywhere in sync mode.
    pub fn delays(&self) -> Result<Vec<usize>> {
        (1..=self.stages)
            .map(|i| match self.mode {
                Mode::Sync => Ok(0),
                _ => compute_delay(i, self.stages, self.update_interval),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.shape().validate()?;
        self.optimizer.validate()?;
        if self.steps == 0 || self.probe_interval == 0 {
            return Err(Error::Validation("steps and probe_interval must be at least 1".into()));
        }
        if self.forecaster == ForecasterKind::SecondOrder && self.mode != Mode::AsyncStash {
            return Err(Error::Validation(
                "the second_order forecaster needs the stashed weights of async_stash mode".into(),
            ));
        }
        if self.forecaster == ForecasterKind::PolyFft {
            GradientHistory::new(self.history_size)?;
        }
        if !(self.fisher_lambda.is_finite() && self.fisher_lambda >= 0.0) {
            return Err(Error::Validation(format!(
                "fisher_lambda must be nonnegative, got {}",
                self.fisher_lambda
            )));
        }
        Ok(())
    }
}

/// Stages, loss head and data of one run.
#[derive(Debug, Clone)]
pub struct PipelineModel {
    pub stages: Vec<StageFunction>,
    pub head: LossHead,
    pub dataset: Dataset,
    pub microbatch_size: usize,
    /// Initial weights per stage; drawn from the run seed when absent.
    pub init: Option<Vec<DenseVector>>,
}

impl PipelineModel {
    fn validate(&self, stages: usize) -> Result<()> {
        if self.stages.len() != stages {
            return Err(Error::Validation(format!(
                "model has {} stages but the pipeline has {stages}",
                self.stages.len()
            )));
        }
        if self.microbatch_size == 0 {
            return Err(Error::Validation("microbatch size must be at least 1".into()));
        }
        self.dataset.inputs()[0].expect_len(self.stages[0].input_dim())?;
        for pair in self.stages.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Dimension {
                    expected: pair[1].input_dim(),
                    found: pair[0].output_dim(),
                });
            }
        }
        if let Some(init) = &self.init {
            if init.len() != stages {
                return Err(Error::Validation("one initial weight vector per stage required".into()));
            }
            for (w, s) in init.iter().zip(&self.stages) {
                w.expect_len(s.parameter_count())?;
            }
        }
        Ok(())
    }

    fn initial_weights(&self, seed: u64) -> Result<Vec<DenseVector>> {
        match &self.init {
            Some(init) => Ok(init.clone()),
            None => self
                .stages
                .iter()
                .enumerate()
                .map(|(i, s)| s.init_weights(&mut SeededRng::with_stream(seed, (2 << 32) | i as u64)))
                .collect(),
        }
    }
}

/// One backward pass as the runner executed it.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub stage: usize,
    pub microbatch: u64,
    pub forward_tick: u64,
    pub backward_tick: u64,
    /// Updates applied at this stage before the forward pass.
    pub version_at_forward: u64,
    /// Updates applied at this stage before the backward pass.
    pub version_at_backward: u64,
    /// Weights the forward pass ran with.
    pub forward_point: DenseVector,
    /// Weights the backward pass propagated the error through.
    pub backward_point: DenseVector,
    pub inputs: Vec<DenseVector>,
    pub e_out: Vec<DenseVector>,
    /// Summed weight gradient, before any forecasting.
    pub grad: DenseVector,
}

struct InFlight {
    version: u64,
    tick: u64,
    caches: Vec<ForwardCache>,
    inputs: Vec<DenseVector>,
    point: Option<DenseVector>,
}

struct StageRuntime {
    index: usize,
    tau: usize,
    opt: StageOptimizer,
    eval: DenseVector,
    stash: Option<WeightStash>,
    history: Option<GradientHistory>,
    inflight: BTreeMap<u64, InFlight>,
    acc: Option<DenseVector>,
    acc_count: usize,
    /// Activations (from the previous stage) or error signals (from the
    /// next stage, or the loss head at the last stage) waiting per microbatch.
    inbox_forward: BTreeMap<u64, Vec<DenseVector>>,
    inbox_backward: BTreeMap<u64, Vec<DenseVector>>,
}

impl StageRuntime {
    fn version(&self) -> u64 {
        self.opt.updates()
    }

    fn live_versions(&self) -> usize {
        match &self.stash {
            Some(s) => {
                let current = !s.is_empty() && s.get(self.version()).is_ok();
                s.len() + usize::from(!current)
            }
            None => 1,
        }
    }
}

/// Largest number of weight versions in-flight microbatches can pin at once.
fn stash_capacity(stage: usize, stages: usize, k: usize) -> usize {
    (stages - stage).div_ceil(k) + 1
}

struct Engine<'a> {
    cfg: &'a PipelineConfig,
    model: &'a PipelineModel,
    stages: Vec<StageRuntime>,
    trace: TrainingTrace,
    audit: Option<Vec<AuditRecord>>,
    batches: BTreeMap<u64, Batch>,
    mb_loss: BTreeMap<u64, f64>,
    cycle_losses: Vec<f64>,
    total_microbatches: u64,
}

pub fn run_training(cfg: &PipelineConfig, model: &PipelineModel) -> Result<TrainingTrace> {
    Ok(run(cfg, model, false)?.0)
}

/// Like [`run_training`], also returning a record of every backward pass.
pub fn run_training_audited(cfg: &PipelineConfig, model: &PipelineModel) -> Result<(TrainingTrace, Vec<AuditRecord>)> {
    run(cfg, model, true)
}

fn run(cfg: &PipelineConfig, model: &PipelineModel, audit: bool) -> Result<(TrainingTrace, Vec<AuditRecord>)> {
    cfg.validate()?;
    model.validate(cfg.stages)?;
    let delays = cfg.delays()?;
    let init = model.initial_weights(cfg.seed)?;
    let mut stages = Vec::with_capacity(cfg.stages);
    for (i, w0) in init.into_iter().enumerate() {
        let index = i + 1;
        let tau = delays[i];
        let opt = StageOptimizer::new(cfg.optimizer.clone(), index, cfg.stages, tau, w0)?;
        let eval = opt.eval_point()?;
        let async_mode = cfg.mode != Mode::Sync;
        stages.push(StageRuntime {
            index,
            tau,
            opt,
            eval,
            stash: (cfg.mode == Mode::AsyncStash)
                .then(|| WeightStash::new(stash_capacity(index, cfg.stages, cfg.update_interval))),
            history: (async_mode && cfg.forecaster == ForecasterKind::PolyFft && tau > 0)
                .then(|| GradientHistory::new(cfg.history_size))
                .transpose()?,
            inflight: BTreeMap::new(),
            acc: None,
            acc_count: 0,
            inbox_forward: BTreeMap::new(),
            inbox_backward: BTreeMap::new(),
        });
    }
    let shape = cfg.shape();
    let per_update = match cfg.mode {
        Mode::Sync => cfg.microbatches,
        _ => cfg.update_interval,
    } as u64;
    let mut engine = Engine {
        cfg,
        model,
        stages,
        trace: TrainingTrace::new(
            cfg.mode,
            cfg.optimizer.kind,
            delays,
            ProbePlan {
                interval: cfg.probe_interval,
                steps: cfg.steps,
            },
        ),
        audit: audit.then(Vec::new),
        batches: BTreeMap::new(),
        mb_loss: BTreeMap::new(),
        cycle_losses: Vec::new(),
        total_microbatches: cfg.steps * per_update,
    };

    'ticks: for tick in 0..shape.horizon(cfg.steps) {
        let mut updates = Vec::new();
        for s in 0..cfg.stages {
            let (action, update) = shape.action(s + 1, tick);
            let result = match action {
                Action::Forward(mb) if mb <= engine.total_microbatches => engine.forward(s, mb, tick),
                Action::Backward(mb) if mb <= engine.total_microbatches => engine.backward(s, mb, tick, update),
                _ => Ok(()),
            };
            if update {
                updates.push(s);
            }
            engine.absorb(result, s)?;
            if engine.trace.diverged.is_some() {
                break 'ticks;
            }
        }
        if cfg.mode == Mode::Sync && !updates.is_empty() {
            let result = engine.sync_update(&updates);
            engine.absorb(result, 0)?;
            if engine.trace.diverged.is_some() {
                break;
            }
        }
    }

    let mut trace = engine.trace;
    trace.final_weights = engine.stages.iter().map(|s| s.opt.weights().clone()).collect();
    Ok((trace, engine.audit.unwrap_or_default()))
}

impl Engine<'_> {
    /// Turns a non-finite value into a divergence mark on the trace.
    fn absorb(&mut self, result: Result<()>, stage: usize) -> Result<()> {
        match result {
            Ok(()) => Ok(()),
            Err(Error::NonFinite { .. }) | Err(Error::Divergence { .. }) => {
                self.trace.diverged = Some(Divergence {
                    step: self.stages[stage].opt.updates() + 1,
                    stage: stage + 1,
                });
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    fn forward(&mut self, s: usize, mb: u64, tick: u64) -> Result<()> {
        let last = s + 1 == self.cfg.stages;
        let inputs = if s == 0 {
            let batch = self
                .model
                .dataset
                .microbatch(self.cfg.seed, mb - 1, self.model.microbatch_size)?;
            let inputs = batch.inputs().to_vec();
            self.batches.insert(mb, batch);
            inputs
        } else {
            self.stages[s].inbox_forward.remove(&mb).ok_or_else(|| {
                Error::Validation(format!("stage {} forward of microbatch {mb} before its input", s + 1))
            })?
        };
        let function = &self.model.stages[s];
        let st = &mut self.stages[s];
        let version = st.version();
        if let Some(stash) = &mut st.stash {
            stash.acquire(version, &st.eval)?;
        }
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut caches = Vec::with_capacity(inputs.len());
        for x in &inputs {
            let (y, cache) = stage_forward(function, &st.eval, x)?;
            outputs.push(y);
            caches.push(cache);
        }
        let record = self.audit.is_some();
        st.inflight.insert(
            mb,
            InFlight {
                version,
                tick,
                caches,
                inputs: if record { inputs } else { Vec::new() },
                point: record.then(|| st.eval.clone()),
            },
        );
        let live = st.live_versions();
        let peak = &mut self.trace.peak_versions[s];
        *peak = (*peak).max(live);

        if last {
            let batch = self
                .batches
                .remove(&mb)
                .ok_or_else(|| Error::Validation(format!("microbatch {mb} lost its targets")))?;
            let scale = 1.0 / outputs.len() as f64;
            let mut total = 0.0;
            let mut errors = Vec::with_capacity(outputs.len());
            for (y, target) in outputs.iter().zip(batch.targets()) {
                let (loss, grad) = self.model.head.evaluate(y, target)?;
                total += loss;
                errors.push(grad.scale(scale)?);
            }
            let loss = total * scale;
            self.mb_loss.insert(mb, loss);
            if self.cfg.mode == Mode::Sync {
                self.cycle_losses.push(loss);
            } else {
                self.trace.losses.push(loss);
            }
            self.stages[s].inbox_backward.insert(mb, errors);
        } else {
            self.stages[s + 1].inbox_forward.insert(mb, outputs);
        }
        Ok(())
    }

    fn backward(&mut self, s: usize, mb: u64, tick: u64, update: bool) -> Result<()> {
        let function = &self.model.stages[s];
        let mode = self.cfg.mode;
        let st = &mut self.stages[s];
        let e_out = st.inbox_backward.remove(&mb).ok_or_else(|| {
            Error::Validation(format!(
                "stage {} backward of microbatch {mb} before its error signal",
                s + 1
            ))
        })?;
        let flight = st.inflight.remove(&mb).ok_or_else(|| {
            Error::Validation(format!("stage {} backward of microbatch {mb} without a forward", s + 1))
        })?;
        let point = match &st.stash {
            Some(stash) => stash.get(flight.version)?.clone(),
            None => st.eval.clone(),
        };
        let mut grad: Option<DenseVector> = None;
        let mut e_in = Vec::with_capacity(e_out.len());
        let record = self.audit.is_some();
        let inputs = flight.inputs;
        for (cache, e) in flight.caches.into_iter().zip(&e_out) {
            let (g, back) = stage_backward(function, &point, cache, e)?;
            grad = Some(match grad {
                None => g,
                Some(acc) => acc.add(&g)?,
            });
            e_in.push(back);
        }
        let grad = grad.ok_or(Error::Degenerate("empty microbatch"))?;
        if let Some(log) = &mut self.audit {
            log.push(AuditRecord {
                stage: s + 1,
                microbatch: mb,
                forward_tick: flight.tick,
                backward_tick: tick,
                version_at_forward: flight.version,
                version_at_backward: st.version(),
                forward_point: flight.point.unwrap_or_default(),
                backward_point: point.clone(),
                inputs,
                e_out: if record { e_out } else { Vec::new() },
                grad: grad.clone(),
            });
        }
        let grad = if self.cfg.forecaster == ForecasterKind::SecondOrder && mode == Mode::AsyncStash {
            second_order_forecast(&grad, &st.eval.sub(&point)?, self.cfg.fisher_lambda)?
        } else {
            grad
        };
        if let Some(stash) = &mut st.stash {
            stash.release(flight.version)?;
        }
        st.acc = Some(match st.acc.take() {
            None => grad,
            Some(acc) => acc.add(&grad)?,
        });
        st.acc_count += 1;
        if s > 0 {
            self.stages[s - 1].inbox_backward.insert(mb, e_in);
        }

        if mode != Mode::Sync {
            let st = &self.stages[s];
            let (lr, gamma) = (st.opt.lr(), st.opt.gamma()?);
            if update {
                self.update(s)?;
            }
            let st = &self.stages[s];
            let loss = if s == 0 {
                self.mb_loss.remove(&mb)
            } else {
                self.mb_loss.get(&mb).copied()
            }
            .ok_or_else(|| Error::Validation(format!("loss of microbatch {mb} missing")))?;
            self.trace.rows.push(TraceRow {
                step: mb,
                stage: s + 1,
                loss,
                lr,
                gamma,
                update_count: st.opt.updates(),
                weight_hash: weight_hash(st.opt.weights()),
            });
        }
        Ok(())
    }

    fn update(&mut self, s: usize) -> Result<()> {
        let plan = self.trace.plan;
        let st = &mut self.stages[s];
        let count = st.acc_count;
        let acc = st
            .acc
            .take()
            .ok_or_else(|| Error::Validation(format!("stage {} update without gradients", s + 1)))?;
        st.acc_count = 0;
        let mut g = acc.scale(1.0 / count as f64)?;
        let t = st.opt.updates() + 1;
        if let Some(history) = &mut st.history {
            history.push(t, g.clone())?;
            g = poly_fft_forecast(history, st.tau as u64)?.0;
        }
        let keep = plan.keeps(t, st.tau);
        let w_pre = keep.then(|| st.opt.weights().clone());
        let rec = st.opt.step(&g)?;
        st.eval = st.opt.eval_point()?;
        let live = st.live_versions();
        let stage = st.index;
        self.trace.peak_versions[s] = self.trace.peak_versions[s].max(live);
        self.trace.updates[s].push(UpdateInfo {
            lr: rec.lr,
            gamma: rec.gamma,
            grad_coeff: rec.grad_coeff,
        });
        if let Some(w) = w_pre {
            let d = rec.look_ahead.unwrap_or_else(|| DenseVector::zeros(w.len()));
            self.trace.probes.insert((stage, t, ProbeKind::W), w);
            self.trace.probes.insert((stage, t, ProbeKind::D), d);
            self.trace.probes.insert((stage, t, ProbeKind::G), g);
        }
        Ok(())
    }

    fn sync_update(&mut self, stages: &[usize]) -> Result<()> {
        let loss = self.cycle_losses.iter().sum::<f64>() / self.cycle_losses.len().max(1) as f64;
        self.cycle_losses.clear();
        self.trace.losses.push(loss);
        for &s in stages {
            let st = &self.stages[s];
            let (lr, gamma) = (st.opt.lr(), st.opt.gamma()?);
            if let Err(e) = self.update(s) {
                return match e {
                    Error::NonFinite { .. } => {
                        self.trace.diverged = Some(Divergence {
                            step: self.stages[s].opt.updates() + 1,
                            stage: s + 1,
                        });
                        Ok(())
                    }
                    e => Err(e),
                };
            }
            let st = &self.stages[s];
            self.trace.rows.push(TraceRow {
                step: st.opt.updates(),
                stage: s + 1,
                loss,
                lr,
                gamma,
                update_count: st.opt.updates(),
                weight_hash: weight_hash(st.opt.weights()),
            });
        }
        self.mb_loss.clear();
        Ok(())
    }
}
