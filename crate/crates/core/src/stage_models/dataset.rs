//! Synthetic datasets and the plain-text dataset loader.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{DenseVector, SeededRng};

use super::{Batch, Target};

const TEACHER_HIDDEN: usize = 8;
const REGRESSION_NOISE: f64 = 0.05;
const LABEL_NOISE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<DenseVector>,
    targets: Vec<Target>,
    output_dim: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<DenseVector>, targets: Vec<Target>, output_dim: usize) -> Result<Self> {
        // reuse the batch checks
        Batch::new(inputs.clone(), targets.clone())?;
        let dim = inputs[0].len();
        if let Some(bad) = inputs.iter().find(|x| x.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                found: bad.len(),
            });
        }
        Ok(Self {
            inputs,
            targets,
            output_dim,
        })
    }

    /// A single dummy example for objectives that ignore data.
    pub fn unit() -> Self {
        Self {
            inputs: vec![DenseVector::zeros(1)],
            targets: vec![Target::Unit],
            output_dim: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn inputs(&self) -> &[DenseVector] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    /// Microbatch number `index`, drawn with replacement. The draw depends
    /// only on `(seed, index)`, so every schedule sees the same stream.
    pub fn microbatch(&self, seed: u64, index: u64, size: usize) -> Result<Batch> {
        if self.len() == 1 {
            return Batch::new(vec![self.inputs[0].clone(); size], vec![self.targets[0].clone(); size]);
        }
        let mut rng = SeededRng::with_stream(seed, (1 << 32) | index);
        let (inputs, targets) = (0..size)
            .map(|_| {
                let i = rng.next_index(self.len());
                (self.inputs[i].clone(), self.targets[i].clone())
            })
            .unzip();
        Batch::new(inputs, targets)
    }
}

fn normal_vector(rng: &mut SeededRng, n: usize, scale: f64) -> Result<DenseVector> {
    DenseVector::new((0..n).map(|_| scale * rng.next_normal()).collect())
}

fn mat_vec(rows: &[DenseVector], x: &DenseVector) -> Result<Vec<f64>> {
    rows.iter().map(|r| r.dot(x)).collect()
}

/// Regression targets come from a fixed random tanh teacher plus Gaussian
/// noise; class labels are the argmax of noisy linear scores, so the classes
/// are linearly separable up to the noise-induced margin violations.
pub fn make_synthetic_dataset(
    kind: DatasetKind,
    n: usize,
    input_dim: usize,
    output_dim: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || input_dim == 0 || output_dim == 0 {
        return Err(Error::Validation(
            "dataset size and dimensions must be at least 1".into(),
        ));
    }
    if kind == DatasetKind::Classification && output_dim < 2 {
        return Err(Error::Validation("classification needs at least two classes".into()));
    }
    let mut input_rng = SeededRng::with_stream(seed, 1);
    let mut teacher_rng = SeededRng::with_stream(seed, 2);
    let mut noise_rng = SeededRng::with_stream(seed, 3);

    let inputs = (0..n)
        .map(|_| normal_vector(&mut input_rng, input_dim, 1.0))
        .collect::<Result<Vec<_>>>()?;

    let targets = match kind {
        DatasetKind::Regression => {
            let hidden_scale = 1.0 / (input_dim as f64).sqrt();
            let out_scale = 1.0 / (TEACHER_HIDDEN as f64).sqrt();
            let first = (0..TEACHER_HIDDEN)
                .map(|_| normal_vector(&mut teacher_rng, input_dim, hidden_scale))
                .collect::<Result<Vec<_>>>()?;
            let second = (0..output_dim)
                .map(|_| normal_vector(&mut teacher_rng, TEACHER_HIDDEN, out_scale))
                .collect::<Result<Vec<_>>>()?;
            inputs
                .iter()
                .map(|x| {
                    let h = DenseVector::new(mat_vec(&first, x)?.into_iter().map(f64::tanh).collect())?;
                    let y = mat_vec(&second, &h)?
                        .into_iter()
                        .map(|y| y + REGRESSION_NOISE * noise_rng.next_normal())
                        .collect();
                    Ok(Target::Values(DenseVector::new(y)?))
                })
                .collect::<Result<Vec<_>>>()?
        }
        DatasetKind::Classification => {
            let scale = 1.0 / (input_dim as f64).sqrt();
            let rows = (0..output_dim)
                .map(|_| normal_vector(&mut teacher_rng, input_dim, scale))
                .collect::<Result<Vec<_>>>()?;
            inputs
                .iter()
                .map(|x| {
                    let scores = mat_vec(&rows, x)?;
                    let mut best = 0;
                    let mut best_score = f64::MIN;
                    for (c, s) in scores.iter().enumerate() {
                        let s = s + LABEL_NOISE * scale * noise_rng.next_normal();
                        if s > best_score {
                            best = c;
                            best_score = s;
                        }
                    }
                    Ok(Target::Class(best))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Dataset::new(inputs, targets, output_dim)
}

/// Parses the whitespace-separated dataset format:
///
/// ```text
/// # dim=2 targets=1
/// 0.5 -1.0 3.2
/// ```
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut header: Option<(usize, usize)> = None;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if header.is_none() {
                header = Some(parse_header(rest, line_no)?);
            }
            continue;
        }
        let (dim, k) = header.ok_or_else(|| Error::Parse {
            line: line_no,
            message: "data row before `# dim=<d> targets=<k>` header".into(),
        })?;
        let values = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("not a number: `{tok}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != dim + k {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} columns, found {}", dim + k, values.len()),
            });
        }
        let to_vec = |v: &[f64]| {
            DenseVector::new(v.to_vec()).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })
        };
        inputs.push(to_vec(&values[..dim])?);
        targets.push(Target::Values(to_vec(&values[dim..])?));
    }
    let (_, k) = header.ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing `# dim=<d> targets=<k>` header".into(),
    })?;
    Dataset::new(inputs, targets, k)
}

fn parse_header(rest: &str, line: usize) -> Result<(usize, usize)> {
    let mut dim = None;
    let mut targets = None;
    for tok in rest.split_whitespace() {
        let parsed = |v: &str| {
            v.parse::<usize>().ok().filter(|&x| x > 0).ok_or_else(|| Error::Parse {
                line,
                message: format!("bad header value `{tok}`"),
            })
        };
        if let Some(v) = tok.strip_prefix("dim=") {
            dim = Some(parsed(v)?);
        } else if let Some(v) = tok.strip_prefix("targets=") {
            targets = Some(parsed(v)?);
        }
    }
    match (dim, targets) {
        (Some(d), Some(k)) => Ok((d, k)),
        _ => Err(Error::Parse {
            line,
            message: "header must be `# dim=<d> targets=<k>`".into(),
        }),
    }
}

pub fn load_dataset_file(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_dataset(&std::fs::read_to_string(path)?)
}
