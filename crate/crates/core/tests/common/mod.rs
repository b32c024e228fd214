#![allow(dead_code)]

use asyncpipe::forecasters::ForecasterKind;
use asyncpipe::optimizers::{MomentumSchedule, OptimizerKind, OptimizerSpec};
use asyncpipe::pipeline::{Mode, PipelineConfig, PipelineModel};
use asyncpipe::stage_models::{
    make_synthetic_dataset, mlp_stages, Curvature, Dataset, DatasetKind, LossHead, QuadraticSpec, StageFunction,
};
use asyncpipe::DenseVector;

pub fn config(mode: Mode, stages: usize, k: usize, steps: u64, optimizer: OptimizerSpec) -> PipelineConfig {
    PipelineConfig {
        mode,
        stages,
        update_interval: k,
        microbatches: 1,
        steps,
        seed: 3,
        optimizer,
        forecaster: ForecasterKind::None,
        fisher_lambda: 1.0,
        history_size: 8,
        probe_interval: 50,
    }
}

pub fn nag(lr: f64, gamma: f64) -> OptimizerSpec {
    OptimizerSpec::nag(OptimizerKind::NagDiscounted, MomentumSchedule::Constant(gamma), lr)
}

/// Small tanh MLP on synthetic classification, one affine layer per stage.
pub fn mlp_model(stages: usize, seed: u64) -> PipelineModel {
    let mut dims = vec![6];
    dims.extend(std::iter::repeat_n(5, stages - 1));
    dims.push(3);
    PipelineModel {
        stages: mlp_stages(&dims).unwrap(),
        head: LossHead::SoftmaxCrossEntropy,
        dataset: make_synthetic_dataset(DatasetKind::Classification, 128, 6, 3, seed).unwrap(),
        microbatch_size: 4,
        init: None,
    }
}

pub fn quadratic_spec(dim: usize, seed: u64) -> QuadraticSpec {
    QuadraticSpec::linear_spectrum(dim, 0.05, 1.0, seed).unwrap()
}

/// Separable quadratic: one quadratic per stage, summed by the loss head.
pub fn quadratic_model(specs: &[QuadraticSpec]) -> PipelineModel {
    PipelineModel {
        stages: specs.iter().cloned().map(StageFunction::Quadratic).collect(),
        head: LossHead::Sum,
        dataset: Dataset::unit(),
        microbatch_size: 1,
        init: Some(specs.iter().map(|s| DenseVector::zeros(s.dim())).collect()),
    }
}

pub fn isotropic(optimum: &[f64], c: f64) -> QuadraticSpec {
    QuadraticSpec::new(DenseVector::new(optimum.to_vec()).unwrap(), Curvature::Isotropic(c)).unwrap()
}
