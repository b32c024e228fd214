//! Deterministic simulator for asynchronous pipeline-parallel training with
//! stale gradients.

pub mod config;
pub mod error;
pub mod forecasters;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod optimizers;
pub mod pipeline;
pub mod stage_models;

pub use config::{parse_config, ExperimentConfig};
pub use error::{Error, Result};
pub use forecasters::ForecasterKind;
pub use harness::{check, report, run_experiment, sweep, CheckReport, Summary};
pub use numerics::{cosine_similarity, rmse, sample_uniform, DenseVector, SeededRng};
pub use optimizers::{OptimizerKind, OptimizerSpec};
pub use pipeline::{compute_delay, Mode, PipelineConfig, TrainingTrace};
