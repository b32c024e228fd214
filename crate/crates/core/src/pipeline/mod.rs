//! Discrete-event pipeline simulation: 1F1B asynchronous training with or
//! without weight stashing, a synchronous flush baseline, and a fixed-delay
//! harness for single-function experiments.
//!
//! One tick is one forward or backward pass of one microbatch at one stage;
//! all stages advance in lockstep, so every stage sees a constant delay.

mod fixed_delay;
mod runner;
mod schedule;
mod stash;
mod trace;

pub use fixed_delay::{run_fixed_delay, FixedDelayConfig};
pub use runner::{run_training, run_training_audited, AuditRecord, PipelineConfig, PipelineModel};
pub use schedule::{build_schedule, utilization_report, Action, ScheduleEvent, ScheduleShape, UtilizationReport};
pub use stash::WeightStash;
pub use trace::{
    format_float, parse_probes, parse_trace_csv, updates_from_rows, weight_hash, Divergence, ProbeKind, ProbePlan,
    TraceRow, TrainingTrace, UpdateInfo, TRACE_HEADER,
};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Sync,
    AsyncStash,
    AsyncNoStash,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Sync => "sync",
            Mode::AsyncStash => "async_stash",
            Mode::AsyncNoStash => "async_no_stash",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Mode::Sync, Mode::AsyncStash, Mode::AsyncNoStash]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown mode `{s}`")))
    }
}

/// Updates a stage sees between a microbatch's forward and backward pass:
/// `⌊(2(P − i) + 1) / 2K⌋`.
pub fn compute_delay(stage: usize, stages: usize, update_interval: usize) -> Result<usize> {
    if stage < 1 || stage > stages {
        return Err(Error::StageOutOfRange { stage, stages });
    }
    if update_interval == 0 {
        return Err(Error::Validation("update_interval must be at least 1".into()));
    }
    Ok((2 * (stages - stage) + 1) / (2 * update_interval))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delay_table() {
        let taus: Vec<usize> = (1..=8).map(|i| compute_delay(i, 8, 1).unwrap()).collect();
        assert_eq!(taus, [7, 6, 5, 4, 3, 2, 1, 0]);
        assert_eq!(compute_delay(1, 8, 2).unwrap(), 3);
        for k in 1..5 {
            assert_eq!(compute_delay(1, 1, k).unwrap(), 0);
        }
        assert!(compute_delay(0, 8, 1).is_err());
        assert!(compute_delay(9, 8, 1).is_err());
        for p in 1..12 {
            for k in 1..4 {
                for i in 2..=p {
                    assert!(compute_delay(i, p, k).unwrap() <= compute_delay(i - 1, p, k).unwrap());
                }
            }
        }
    }

    #[test]
    fn mode_names() {
        for m in [Mode::Sync, Mode::AsyncStash, Mode::AsyncNoStash] {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("gpipe".parse::<Mode>().is_err());
    }
}
