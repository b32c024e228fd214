use crate::error::{Error, Result};

use super::Mode;

/// What one stage does during one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Forward(u64),
    Backward(u64),
    /// Optimizer step; shares the tick of the backward that triggers it.
    Update,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScheduleEvent {
    pub tick: u64,
    pub stage: usize,
    pub action: Action,
}

/// Schedule shape: stage count, async update interval, sync microbatches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleShape {
    pub mode: Mode,
    pub stages: usize,
    pub update_interval: usize,
    pub microbatches: usize,
}

impl ScheduleShape {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.update_interval == 0 || self.microbatches == 0 {
            return Err(Error::Validation(
                "stages, update_interval and microbatches must all be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Ticks in one synchronous flush cycle.
    pub fn cycle_len(&self) -> u64 {
        2 * (self.microbatches + self.stages - 1) as u64
    }

    /// Ticks needed to finish `steps` updates at every stage.
    pub fn horizon(&self, steps: u64) -> u64 {
        match self.mode {
            Mode::Sync => steps * self.cycle_len(),
            _ => {
                let n = steps * self.update_interval as u64;
                2 * (n - 1) + 2 * self.stages as u64
            }
        }
    }

    /// First tick at which every stage is in steady state.
    pub fn warmup_ticks(&self) -> u64 {
        match self.mode {
            Mode::Sync => 0,
            _ => 2 * self.stages as u64 - 1,
        }
    }

    /// Work for `stage` (1-based) at `tick`, plus whether an update follows.
    ///
    /// Async 1F1B: microbatch `m` is forwarded at stage `i` on tick
    /// `2(m−1) + i−1` and its backward runs on tick `2(m−1) + 2P−i`, so stage
    /// `i` runs `P−i+1` forwards before its first backward and then alternates.
    /// Sync: each flush cycle forwards `M` microbatches down the pipe, runs
    /// the `M` backwards back up, and ends with one update at every stage.
    pub fn action(&self, stage: usize, tick: u64) -> (Action, bool) {
        let p = self.stages as u64;
        let i = stage as u64;
        match self.mode {
            Mode::Sync => {
                let m = self.microbatches as u64;
                let len = self.cycle_len();
                let (cycle, r) = (tick / len, tick % len);
                let update = r == len - 1;
                let fwd_start = i - 1;
                let bwd_start = (m + p - 1) + (p - i);
                let action = if (fwd_start..fwd_start + m).contains(&r) {
                    Action::Forward(cycle * m + r - fwd_start + 1)
                } else if (bwd_start..bwd_start + m).contains(&r) {
                    Action::Backward(cycle * m + r - bwd_start + 1)
                } else {
                    Action::Idle
                };
                (action, update)
            }
            _ => {
                let fwd_start = i - 1;
                let bwd_start = 2 * p - i;
                if tick >= bwd_start && (tick - bwd_start).is_multiple_of(2) {
                    let mb = (tick - bwd_start) / 2 + 1;
                    (Action::Backward(mb), mb.is_multiple_of(self.update_interval as u64))
                } else if tick >= fwd_start && (tick - fwd_start).is_multiple_of(2) {
                    (Action::Forward((tick - fwd_start) / 2 + 1), false)
                } else {
                    (Action::Idle, false)
                }
            }
        }
    }
}

/// Every event for ticks `0..horizon`, ordered by tick then stage.
pub fn build_schedule(shape: &ScheduleShape, horizon: u64) -> Result<Vec<ScheduleEvent>> {
    shape.validate()?;
    if horizon < shape.stages as u64 {
        return Err(Error::Validation(format!(
            "horizon {horizon} shorter than the pipeline depth {}",
            shape.stages
        )));
    }
    let mut events = Vec::new();
    for tick in 0..horizon {
        for stage in 1..=shape.stages {
            let (action, update) = shape.action(stage, tick);
            events.push(ScheduleEvent { tick, stage, action });
            if update {
                events.push(ScheduleEvent {
                    tick,
                    stage,
                    action: Action::Update,
                });
            }
        }
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtilizationReport {
    pub per_stage: Vec<f64>,
    pub aggregate: f64,
}

/// Fraction of idle ticks per stage over `[warmup_ticks, last tick]`.
pub fn utilization_report(events: &[ScheduleEvent], warmup_ticks: u64) -> Result<UtilizationReport> {
    let stages = events.iter().map(|e| e.stage).max().unwrap_or(0);
    let horizon = events.iter().map(|e| e.tick + 1).max().unwrap_or(0);
    if stages == 0 {
        return Err(Error::Validation("empty schedule".into()));
    }
    if warmup_ticks >= horizon {
        return Err(Error::Validation(format!(
            "warm-up of {warmup_ticks} ticks covers the whole {horizon}-tick schedule"
        )));
    }
    let mut busy = vec![0u64; stages];
    for e in events {
        if e.tick >= warmup_ticks && matches!(e.action, Action::Forward(_) | Action::Backward(_)) {
            busy[e.stage - 1] += 1;
        }
    }
    let span = horizon - warmup_ticks;
    let idle: Vec<u64> = busy.iter().map(|b| span - b).collect();
    Ok(UtilizationReport {
        per_stage: idle.iter().map(|&i| i as f64 / span as f64).collect(),
        aggregate: idle.iter().sum::<u64>() as f64 / (span * stages as u64) as f64,
    })
}
