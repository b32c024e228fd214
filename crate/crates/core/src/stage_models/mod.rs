//! Pipeline stage functions and the data they consume.
//!
//! A stage maps `(w, x) -> y` on the way forward and `(w, cache, e_out) ->
//! (grad_w, e_in)` on the way back. The forward cache holds activations
//! rather than a closure over `w`, so a backward pass may be run with weights
//! other than the ones the forward used; the no-stash pipeline mode depends on
//! that.

mod dataset;
mod finite_diff;

pub use dataset::{load_dataset_file, make_synthetic_dataset, Dataset, DatasetKind};
pub use finite_diff::finite_diff_grad;

use crate::error::{Error, Result};
use crate::numerics::{sample_uniform, DenseVector, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AffineSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl AffineSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::Validation("affine stage dimensions must be at least 1".into()));
        }
        Ok(Self {
            input_dim,
            output_dim,
            activation,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Curvature {
    Isotropic(f64),
    Diagonal(DenseVector),
}

/// `f(w) = ½ Σ cᵢ (wᵢ − w*ᵢ)²` with all `cᵢ > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpec {
    optimum: DenseVector,
    curvature: Curvature,
}

impl QuadraticSpec {
    pub fn new(optimum: DenseVector, curvature: Curvature) -> Result<Self> {
        match &curvature {
            Curvature::Isotropic(c) if !(c.is_finite() && *c > 0.0) => {
                return Err(Error::Validation("curvature must be positive".into()))
            }
            Curvature::Diagonal(c) => {
                c.expect_len(optimum.len())?;
                if c.iter().any(|&ci| ci <= 0.0) {
                    return Err(Error::Validation("curvature must be positive".into()));
                }
            }
            _ => {}
        }
        Ok(Self { optimum, curvature })
    }

    /// Curvatures spaced linearly over `[c_min, c_max]`, optimum drawn
    /// uniformly from `[-1, 1)`.
    pub fn linear_spectrum(dim: usize, c_min: f64, c_max: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("quadratic dimension must be at least 1".into()));
        }
        let curvature = (0..dim)
            .map(|j| {
                if dim == 1 {
                    c_max
                } else {
                    c_min + (c_max - c_min) * j as f64 / (dim - 1) as f64
                }
            })
            .collect();
        let optimum = sample_uniform(&mut SeededRng::new(seed), dim, -1.0, 1.0)?;
        Self::new(optimum, Curvature::Diagonal(DenseVector::new(curvature)?))
    }

    pub fn dim(&self) -> usize {
        self.optimum.len()
    }

    pub fn optimum(&self) -> &DenseVector {
        &self.optimum
    }

    pub fn curvature_at(&self, index: usize) -> f64 {
        match &self.curvature {
            Curvature::Isotropic(c) => *c,
            Curvature::Diagonal(c) => c[index],
        }
    }

    /// Lipschitz constant of the gradient.
    pub fn beta(&self) -> f64 {
        match &self.curvature {
            Curvature::Isotropic(c) => *c,
            Curvature::Diagonal(c) => c.iter().copied().fold(f64::MIN, f64::max),
        }
    }

    fn scaled_residual(&self, w: &DenseVector) -> Result<Vec<f64>> {
        w.expect_len(self.dim())?;
        Ok(w.iter()
            .zip(self.optimum.iter())
            .enumerate()
            .map(|(j, (wi, oi))| self.curvature_at(j) * (wi - oi))
            .collect())
    }

    pub fn value(&self, w: &DenseVector) -> Result<f64> {
        Ok(quadratic_value_grad(self, w)?.0)
    }
}

pub fn quadratic_value_grad(spec: &QuadraticSpec, w: &DenseVector) -> Result<(f64, DenseVector)> {
    let grad = spec.scaled_residual(w)?;
    let loss = 0.5
        * grad
            .iter()
            .zip(w.iter().zip(spec.optimum.iter()))
            .map(|(g, (wi, oi))| g * (wi - oi))
            .sum::<f64>();
    if !loss.is_finite() {
        return Err(Error::NonFinite { index: 0, value: loss });
    }
    Ok((loss, DenseVector::new(grad)?))
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageFunction {
    /// Adds `½ Σ cᵢ (wᵢ − w*ᵢ)²` to a 1-dimensional running loss. Chaining
    /// quadratic stages yields a separable quadratic across the pipeline.
    Quadratic(QuadraticSpec),
    /// `y = act(W x + b)`, parameters laid out as row-major `W` then `b`.
    Affine(AffineSpec),
}

impl StageFunction {
    pub fn parameter_count(&self) -> usize {
        match self {
            StageFunction::Quadratic(q) => q.dim(),
            StageFunction::Affine(a) => a.output_dim * a.input_dim + a.output_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            StageFunction::Quadratic(_) => 1,
            StageFunction::Affine(a) => a.input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            StageFunction::Quadratic(_) => 1,
            StageFunction::Affine(a) => a.output_dim,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            StageFunction::Quadratic(_) => "quadratic",
            StageFunction::Affine(_) => "affine_activation",
        }
    }

    /// Initial weights: zeros for quadratic stages, Glorot-uniform matrix and
    /// zero bias for affine stages.
    pub fn init_weights(&self, rng: &mut SeededRng) -> Result<DenseVector> {
        match self {
            StageFunction::Quadratic(q) => Ok(DenseVector::zeros(q.dim())),
            StageFunction::Affine(a) => {
                let limit = (6.0 / (a.input_dim + a.output_dim) as f64).sqrt();
                let mut values = sample_uniform(rng, a.input_dim * a.output_dim, -limit, limit)?.into_vec();
                values.extend(std::iter::repeat_n(0.0, a.output_dim));
                DenseVector::new(values)
            }
        }
    }
}

/// Activations retained by a forward pass for its backward pass.
///
/// Deliberately not `Clone`: [`stage_backward`] takes it by value, so a cache
/// feeds exactly one backward pass.
#[derive(Debug)]
pub struct ForwardCache {
    inner: CacheInner,
}

#[derive(Debug)]
enum CacheInner {
    Quadratic { scaled_residual: Vec<f64> },
    Affine { input: Vec<f64>, act_grad: Vec<f64> },
}

pub fn stage_forward(stage: &StageFunction, w: &DenseVector, x: &DenseVector) -> Result<(DenseVector, ForwardCache)> {
    w.expect_len(stage.parameter_count())?;
    x.expect_len(stage.input_dim())?;
    match stage {
        StageFunction::Quadratic(q) => {
            let scaled_residual = q.scaled_residual(w)?;
            let value = 0.5
                * scaled_residual
                    .iter()
                    .zip(w.iter().zip(q.optimum.iter()))
                    .map(|(g, (wi, oi))| g * (wi - oi))
                    .sum::<f64>();
            let y = DenseVector::new(vec![x[0] + value])?;
            Ok((
                y,
                ForwardCache {
                    inner: CacheInner::Quadratic { scaled_residual },
                },
            ))
        }
        StageFunction::Affine(a) => {
            let (n_in, n_out) = (a.input_dim, a.output_dim);
            let weights = w.as_slice();
            let bias = &weights[n_in * n_out..];
            let mut y = Vec::with_capacity(n_out);
            let mut act_grad = Vec::with_capacity(n_out);
            for r in 0..n_out {
                let row = &weights[r * n_in..(r + 1) * n_in];
                let z = row.iter().zip(x.iter()).map(|(wi, xi)| wi * xi).sum::<f64>() + bias[r];
                match a.activation {
                    Activation::Identity => {
                        y.push(z);
                        act_grad.push(1.0);
                    }
                    Activation::Tanh => {
                        let t = z.tanh();
                        y.push(t);
                        act_grad.push(1.0 - t * t);
                    }
                }
            }
            Ok((
                DenseVector::new(y)?,
                ForwardCache {
                    inner: CacheInner::Affine {
                        input: x.as_slice().to_vec(),
                        act_grad,
                    },
                },
            ))
        }
    }
}

/// Returns `(grad_w, e_in)`: the weight gradient from the cached activations
/// and the error signal propagated through `w`.
pub fn stage_backward(
    stage: &StageFunction,
    w: &DenseVector,
    cache: ForwardCache,
    e_out: &DenseVector,
) -> Result<(DenseVector, DenseVector)> {
    w.expect_len(stage.parameter_count())?;
    e_out.expect_len(stage.output_dim())?;
    match (stage, cache.inner) {
        (StageFunction::Quadratic(q), CacheInner::Quadratic { scaled_residual }) => {
            if scaled_residual.len() != q.dim() {
                return Err(Error::CacheMismatch("quadratic dimension differs"));
            }
            let e = e_out[0];
            let grad = DenseVector::new(scaled_residual.iter().map(|g| e * g).collect())?;
            Ok((grad, e_out.clone()))
        }
        (StageFunction::Affine(a), CacheInner::Affine { input, act_grad }) => {
            let (n_in, n_out) = (a.input_dim, a.output_dim);
            if input.len() != n_in || act_grad.len() != n_out {
                return Err(Error::CacheMismatch("affine shape differs"));
            }
            let weights = w.as_slice();
            let delta: Vec<f64> = e_out.iter().zip(&act_grad).map(|(e, g)| e * g).collect();
            let mut grad = Vec::with_capacity(n_out * n_in + n_out);
            for d in &delta {
                grad.extend(input.iter().map(|xi| d * xi));
            }
            grad.extend_from_slice(&delta);
            let mut e_in = vec![0.0; n_in];
            for (r, d) in delta.iter().enumerate() {
                let row = &weights[r * n_in..(r + 1) * n_in];
                for (acc, wi) in e_in.iter_mut().zip(row) {
                    *acc += wi * d;
                }
            }
            Ok((DenseVector::new(grad)?, DenseVector::new(e_in)?))
        }
        _ => Err(Error::CacheMismatch("cache was produced by a different stage kind")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Values(DenseVector),
    Class(usize),
    /// For objectives that ignore data (quadratic stages).
    Unit,
}

/// Terminal loss attached after the last stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossHead {
    /// `mean_j (y_j − t_j)²`
    MeanSquared,
    SoftmaxCrossEntropy,
    /// Loss is the single incoming value (used to close quadratic pipelines).
    Sum,
}

impl LossHead {
    /// Loss of one example and its gradient with respect to `prediction`.
    pub fn evaluate(&self, prediction: &DenseVector, target: &Target) -> Result<(f64, DenseVector)> {
        let (loss, grad) = match (self, target) {
            (LossHead::MeanSquared, Target::Values(t)) => {
                t.expect_len(prediction.len())?;
                let k = prediction.len() as f64;
                let diff = prediction.sub(t)?;
                let loss = diff.iter().map(|d| d * d).sum::<f64>() / k;
                (loss, diff.scale(2.0 / k)?)
            }
            (LossHead::SoftmaxCrossEntropy, Target::Class(c)) => {
                if *c >= prediction.len() {
                    return Err(Error::Dimension {
                        expected: prediction.len(),
                        found: *c,
                    });
                }
                let max = prediction.iter().copied().fold(f64::MIN, f64::max);
                let exps: Vec<f64> = prediction.iter().map(|z| (z - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                let loss = total.ln() - (prediction[*c] - max);
                let mut grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
                grad[*c] -= 1.0;
                (loss, DenseVector::new(grad)?)
            }
            (LossHead::Sum, _) => {
                prediction.expect_len(1)?;
                (prediction[0], DenseVector::new(vec![1.0])?)
            }
            _ => {
                return Err(Error::Validation(format!(
                    "loss head {self:?} cannot score target {target:?}"
                )))
            }
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite { index: 0, value: loss });
        }
        Ok((loss, grad))
    }
}

/// One microbatch of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<DenseVector>,
    targets: Vec<Target>,
}

impl Batch {
    pub fn new(inputs: Vec<DenseVector>, targets: Vec<Target>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Degenerate("batch must hold at least one example"));
        }
        if inputs.len() != targets.len() {
            return Err(Error::Dimension {
                expected: inputs.len(),
                found: targets.len(),
            });
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[DenseVector] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }
}

/// Stages of a tanh MLP with one affine layer per stage; the last stage is
/// linear and feeds the loss head.
pub fn mlp_stages(dims: &[usize]) -> Result<Vec<StageFunction>> {
    if dims.len() < 2 {
        return Err(Error::Validation(
            "an MLP needs at least an input and an output dimension".into(),
        ));
    }
    let last = dims.len() - 2;
    dims.windows(2)
        .enumerate()
        .map(|(i, pair)| {
            let activation = if i == last {
                Activation::Identity
            } else {
                Activation::Tanh
            };
            AffineSpec::new(pair[0], pair[1], activation).map(StageFunction::Affine)
        })
        .collect()
}
