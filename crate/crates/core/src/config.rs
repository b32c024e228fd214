//! Experiment configuration: the line-oriented `key=value` format, its
//! defaults, validation, and the echo block written atop every output file.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::forecasters::ForecasterKind;
use crate::optimizers::{LrDecay, LrSchedule, MomentumSchedule, OptimizerKind, OptimizerSpec};
use crate::pipeline::{Mode, PipelineConfig, PipelineModel};
use crate::stage_models::{
    load_dataset_file, make_synthetic_dataset, mlp_stages, Dataset, DatasetKind, LossHead, QuadraticSpec, StageFunction,
};

/// Every accepted key, in echo order.
pub const CONFIG_KEYS: [&str; 28] = [
    "mode",
    "stages",
    "update_interval",
    "microbatches",
    "steps",
    "seed",
    "optimizer",
    "gamma_mode",
    "gamma",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "lr",
    "warmup_steps",
    "warmup_start",
    "lr_final",
    "lr_total_steps",
    "lr_delay_discount",
    "lr_discount_T",
    "forecaster",
    "fisher_lambda",
    "history_size",
    "model",
    "model_dims",
    "dataset",
    "probe_interval",
    "out_dir",
];

const ECHO_TITLE: &str = "# resolved config";

/// Synthetic data and default MLP shape.
pub const DEFAULT_INPUT_DIM: usize = 8;
pub const DEFAULT_HIDDEN_DIM: usize = 16;
pub const DEFAULT_OUTPUT_DIM: usize = 4;
pub const DEFAULT_QUADRATIC_DIM: usize = 20;
pub const DATASET_SIZE: usize = 512;
pub const MICROBATCH_SIZE: usize = 8;
const CURVATURE_RANGE: (f64, f64) = (0.05, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaMode {
    Constant,
    Nesterov,
    Stagewise,
}

impl GammaMode {
    pub fn name(self) -> &'static str {
        match self {
            GammaMode::Constant => "constant",
            GammaMode::Nesterov => "nesterov",
            GammaMode::Stagewise => "stagewise",
        }
    }
}

impl FromStr for GammaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(GammaMode::Constant),
            "nesterov" => Ok(GammaMode::Nesterov),
            "stagewise" => Ok(GammaMode::Stagewise),
            _ => Err(Error::Validation(format!("unknown gamma_mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Quadratic,
    Mlp,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Quadratic => "quadratic",
            ModelKind::Mlp => "mlp",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(ModelKind::Quadratic),
            "mlp" => Ok(ModelKind::Mlp),
            _ => Err(Error::Validation(format!("unknown model `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSpec {
    SyntheticRegression,
    SyntheticClassification,
    File(PathBuf),
}

impl DatasetSpec {
    pub fn name(&self) -> String {
        match self {
            DatasetSpec::SyntheticRegression => "synthetic_regression".into(),
            DatasetSpec::SyntheticClassification => "synthetic_classification".into(),
            DatasetSpec::File(p) => format!("file:{}", p.display()),
        }
    }
}

impl FromStr for DatasetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic_regression" => Ok(DatasetSpec::SyntheticRegression),
            "synthetic_classification" => Ok(DatasetSpec::SyntheticClassification),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(DatasetSpec::File(PathBuf::from(p))),
                _ => Err(Error::Validation(format!("unknown dataset `{s}`"))),
            },
        }
    }
}

/// Everything one run needs. Omitted keys take the values of
/// [`ExperimentConfig::default`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub stages: usize,
    pub update_interval: usize,
    pub microbatches: usize,
    pub steps: u64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub gamma_mode: GammaMode,
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub lr: f64,
    pub warmup_steps: u64,
    pub warmup_start: f64,
    /// Cosine decay target; `None` keeps the rate flat after warm-up.
    pub lr_final: Option<f64>,
    /// End of the cosine decay; 0 means `steps`.
    pub lr_total_steps: u64,
    pub lr_delay_discount: bool,
    pub lr_discount_t: u64,
    pub forecaster: ForecasterKind,
    pub fisher_lambda: f64,
    pub history_size: usize,
    pub model: ModelKind,
    /// MLP: layer widths, one more than `stages`. Quadratic: per-stage
    /// dimension, either one value or one per stage. `None` picks defaults.
    pub model_dims: Option<Vec<usize>>,
    pub dataset: DatasetSpec,
    pub probe_interval: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::AsyncStash,
            stages: 1,
            update_interval: 1,
            microbatches: 4,
            steps: 1000,
            seed: 0,
            optimizer: OptimizerKind::NagDiscounted,
            gamma_mode: GammaMode::Constant,
            gamma: 0.99,
            beta1: 0.99,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            lr: 3e-4,
            warmup_steps: 0,
            warmup_start: 1e-7,
            lr_final: None,
            lr_total_steps: 0,
            lr_delay_discount: false,
            lr_discount_t: 6000,
            forecaster: ForecasterKind::None,
            fisher_lambda: 1.0,
            history_size: 8,
            model: ModelKind::Mlp,
            model_dims: None,
            dataset: DatasetSpec::SyntheticClassification,
            probe_interval: 50,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        line,
        message: format!("`{key}` cannot take the value `{value}`"),
    })
}

fn parse_named<T: FromStr<Err = Error>>(value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|e: Error| Error::Parse {
        line,
        message: match e {
            Error::Validation(m) | Error::Trace(m) => m,
            other => other.to_string(),
        },
    })
}

fn parse_switch(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(Error::Parse {
            line,
            message: format!("`{key}` must be `on` or `off`, got `{value}`"),
        }),
    }
}

fn parse_dims(value: &str, line: usize) -> Result<Option<Vec<usize>>> {
    if value == "default" {
        return Ok(None);
    }
    value
        .split(',')
        .map(|d| parse_value::<usize>("model_dims", d.trim(), line))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

impl ExperimentConfig {
    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "mode" => self.mode = parse_named(value, line)?,
            "stages" => self.stages = parse_value(key, value, line)?,
            "update_interval" => self.update_interval = parse_value(key, value, line)?,
            "microbatches" => self.microbatches = parse_value(key, value, line)?,
            "steps" => self.steps = parse_value(key, value, line)?,
            "seed" => self.seed = parse_value(key, value, line)?,
            "optimizer" => self.optimizer = parse_named(value, line)?,
            "gamma_mode" => self.gamma_mode = parse_named(value, line)?,
            "gamma" => self.gamma = parse_value(key, value, line)?,
            "beta1" => self.beta1 = parse_value(key, value, line)?,
            "beta2" => self.beta2 = parse_value(key, value, line)?,
            "eps" => self.eps = parse_value(key, value, line)?,
            "weight_decay" => self.weight_decay = parse_value(key, value, line)?,
            "lr" => self.lr = parse_value(key, value, line)?,
            "warmup_steps" => self.warmup_steps = parse_value(key, value, line)?,
            "warmup_start" => self.warmup_start = parse_value(key, value, line)?,
            "lr_final" => {
                self.lr_final = match value {
                    "none" => None,
                    v => Some(parse_value(key, v, line)?),
                }
            }
            "lr_total_steps" => self.lr_total_steps = parse_value(key, value, line)?,
            "lr_delay_discount" => self.lr_delay_discount = parse_switch(key, value, line)?,
            "lr_discount_T" => self.lr_discount_t = parse_value(key, value, line)?,
            "forecaster" => self.forecaster = parse_named(value, line)?,
            "fisher_lambda" => self.fisher_lambda = parse_value(key, value, line)?,
            "history_size" => self.history_size = parse_value(key, value, line)?,
            "model" => self.model = parse_named(value, line)?,
            "model_dims" => self.model_dims = parse_dims(value, line)?,
            "dataset" => self.dataset = parse_named(value, line)?,
            "probe_interval" => self.probe_interval = parse_value(key, value, line)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => {
                return Err(Error::UnknownKey {
                    key: key.to_string(),
                    line,
                })
            }
        }
        Ok(())
    }

    /// The value of `key` as it appears in the echo block.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "mode" => self.mode.name().to_string(),
            "stages" => self.stages.to_string(),
            "update_interval" => self.update_interval.to_string(),
            "microbatches" => self.microbatches.to_string(),
            "steps" => self.steps.to_string(),
            "seed" => self.seed.to_string(),
            "optimizer" => self.optimizer.name().to_string(),
            "gamma_mode" => self.gamma_mode.name().to_string(),
            "gamma" => self.gamma.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "eps" => self.eps.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "lr" => self.lr.to_string(),
            "warmup_steps" => self.warmup_steps.to_string(),
            "warmup_start" => self.warmup_start.to_string(),
            "lr_final" => self.lr_final.map_or("none".into(), |v| v.to_string()),
            "lr_total_steps" => self.lr_total_steps.to_string(),
            "lr_delay_discount" => if self.lr_delay_discount { "on" } else { "off" }.to_string(),
            "lr_discount_T" => self.lr_discount_t.to_string(),
            "forecaster" => self.forecaster.name().to_string(),
            "fisher_lambda" => self.fisher_lambda.to_string(),
            "history_size" => self.history_size.to_string(),
            "model" => self.model.name().to_string(),
            "model_dims" => match &self.model_dims {
                None => "default".into(),
                Some(d) => d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
            },
            "dataset" => self.dataset.name(),
            "probe_interval" => self.probe_interval.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// One `# key=value` line per key, in a fixed order.
    pub fn echo(&self) -> String {
        let mut out = String::from(ECHO_TITLE);
        out.push('\n');
        for key in CONFIG_KEYS {
            // every listed key has a value
            let _ = writeln!(out, "# {key}={}", self.get(key).unwrap_or_default());
        }
        out
    }

    pub fn momentum(&self) -> MomentumSchedule {
        match self.gamma_mode {
            GammaMode::Constant => MomentumSchedule::Constant(self.gamma),
            GammaMode::Nesterov => MomentumSchedule::Nesterov,
            GammaMode::Stagewise => MomentumSchedule::Stagewise,
        }
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.lr,
            warmup_steps: self.warmup_steps,
            warmup_start: self.warmup_start,
            decay: match self.lr_final {
                None => LrDecay::None,
                Some(final_lr) => LrDecay::Cosine {
                    final_lr,
                    total_steps: if self.lr_total_steps == 0 {
                        self.steps
                    } else {
                        self.lr_total_steps
                    },
                },
            },
            delay_discount: self.lr_delay_discount.then_some(self.lr_discount_t),
        }
    }

    pub fn optimizer_spec(&self) -> OptimizerSpec {
        OptimizerSpec {
            kind: self.optimizer,
            momentum: self.momentum(),
            lr: self.lr_schedule(),
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            momentum_warmup: false,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            mode: self.mode,
            stages: self.stages,
            update_interval: self.update_interval,
            microbatches: self.microbatches,
            steps: self.steps,
            seed: self.seed,
            optimizer: self.optimizer_spec(),
            forecaster: self.forecaster,
            fisher_lambda: self.fisher_lambda,
            history_size: self.history_size,
            probe_interval: self.probe_interval,
        }
    }

    /// Per-stage gradient delays of the resolved pipeline.
    pub fn delays(&self) -> Result<Vec<usize>> {
        self.pipeline().delays()
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline().validate()?;
        if self.gamma_mode != GammaMode::Constant && self.optimizer == OptimizerKind::Sgd {
            return Err(Error::Validation(format!(
                "gamma_mode={} has no effect on sgd",
                self.gamma_mode.name()
            )));
        }
        if let Some(dims) = &self.model_dims {
            if dims.contains(&0) {
                return Err(Error::Validation("model_dims entries must be at least 1".into()));
            }
            let ok = match self.model {
                ModelKind::Mlp => dims.len() == self.stages + 1,
                ModelKind::Quadratic => dims.len() == 1 || dims.len() == self.stages,
            };
            if !ok {
                return Err(Error::Validation(format!(
                    "model_dims has {} entries, which does not fit a {} model with {} stages",
                    dims.len(),
                    self.model.name(),
                    self.stages
                )));
            }
        }
        Ok(())
    }

    /// The quadratic objective of each stage; `None` for the MLP.
    pub fn quadratic_specs(&self) -> Result<Option<Vec<QuadraticSpec>>> {
        if self.model != ModelKind::Quadratic {
            return Ok(None);
        }
        (0..self.stages)
            .map(|i| {
                let dim = match &self.model_dims {
                    None => DEFAULT_QUADRATIC_DIM,
                    Some(d) if d.len() == 1 => d[0],
                    Some(d) => d[i],
                };
                let seed = self.seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                QuadraticSpec::linear_spectrum(dim, CURVATURE_RANGE.0, CURVATURE_RANGE.1, seed)
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Stages, loss head and data described by the config.
    pub fn build_model(&self) -> Result<PipelineModel> {
        if let Some(specs) = self.quadratic_specs()? {
            return Ok(PipelineModel {
                stages: specs.into_iter().map(StageFunction::Quadratic).collect(),
                head: LossHead::Sum,
                dataset: Dataset::unit(),
                microbatch_size: 1,
                init: None,
            });
        }
        let (dataset, head) = self.build_dataset()?;
        let dims = match &self.model_dims {
            Some(d) => d.clone(),
            None => {
                let mut d = vec![dataset.input_dim()];
                d.extend(std::iter::repeat_n(DEFAULT_HIDDEN_DIM, self.stages - 1));
                d.push(dataset.output_dim());
                d
            }
        };
        if dims[0] != dataset.input_dim() || dims[dims.len() - 1] != dataset.output_dim() {
            return Err(Error::Validation(format!(
                "model_dims {dims:?} do not match the dataset ({} inputs, {} outputs)",
                dataset.input_dim(),
                dataset.output_dim()
            )));
        }
        Ok(PipelineModel {
            stages: mlp_stages(&dims)?,
            head,
            dataset,
            microbatch_size: MICROBATCH_SIZE,
            init: None,
        })
    }

    fn build_dataset(&self) -> Result<(Dataset, LossHead)> {
        let (input_dim, output_dim) = match &self.model_dims {
            Some(d) => (d[0], d[d.len() - 1]),
            None => (DEFAULT_INPUT_DIM, DEFAULT_OUTPUT_DIM),
        };
        match &self.dataset {
            DatasetSpec::SyntheticRegression => Ok((
                make_synthetic_dataset(DatasetKind::Regression, DATASET_SIZE, input_dim, output_dim, self.seed)?,
                LossHead::MeanSquared,
            )),
            DatasetSpec::SyntheticClassification => Ok((
                make_synthetic_dataset(
                    DatasetKind::Classification,
                    DATASET_SIZE,
                    input_dim,
                    output_dim,
                    self.seed,
                )?,
                LossHead::SoftmaxCrossEntropy,
            )),
            DatasetSpec::File(path) => Ok((load_dataset_file(path)?, LossHead::MeanSquared)),
        }
    }
}

/// Parses a config document and validates the result.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg = parse_assignments(text, ExperimentConfig::default())?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_assignments(text: &str, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: format!("expected `key=value`, found `{content}`"),
        })?;
        cfg.set(key.trim(), value.trim(), line)?;
    }
    Ok(cfg)
}

/// Recovers the config from the echo block at the top of an output file.
pub fn parse_echo(text: &str) -> Result<ExperimentConfig> {
    let mut lines = text.lines();
    if lines.next() != Some(ECHO_TITLE) {
        return Err(Error::Trace("file does not start with a config echo".into()));
    }
    let body: String = lines
        .map_while(|l| l.strip_prefix("# "))
        .fold(String::new(), |mut s, l| {
            s.push_str(l);
            s.push('\n');
            s
        });
    let cfg = parse_assignments(&body, ExperimentConfig::default())?;
    cfg.validate()?;
    Ok(cfg)
}

/// The echo block at the top of `text`, verbatim.
pub fn echo_block(text: &str) -> &str {
    let mut end = 0;
    for line in text.split_inclusive('\n') {
        if !line.starts_with('#') {
            break;
        }
        end += line.len();
    }
    &text[..end]
}
