//! The record of one run, and its text formats.
//!
//! `trace.csv` holds one row per stage per recorded step. The probe sidecar
//! holds full vectors, one per line:
//! `t=<step> stage=<i> kind=<w|d|g> v1 v2 ...`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::DenseVector;
use crate::optimizers::OptimizerKind;

use super::Mode;

pub const TRACE_HEADER: &str = "step,stage,loss,lr,gamma,update_count,weight_hash";

/// Round-trip float formatting (17 significant digits).
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// First 16 hex digits of the SHA-256 of the little-endian weight bytes.
pub fn weight_hash(w: &DenseVector) -> String {
    let mut h = Sha256::new();
    for v in w.iter() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().take(8).fold(String::with_capacity(16), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProbeKind {
    /// Weights `wₜ` before update `t`.
    W,
    /// Look-ahead `dₜ`.
    D,
    /// Gradient handed to update `t`, after any forecasting.
    G,
}

impl ProbeKind {
    pub fn letter(self) -> &'static str {
        match self {
            ProbeKind::W => "w",
            ProbeKind::D => "d",
            ProbeKind::G => "g",
        }
    }
}

impl FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w" => Ok(ProbeKind::W),
            "d" => Ok(ProbeKind::D),
            "g" => Ok(ProbeKind::G),
            _ => Err(Error::Trace(format!("unknown probe kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub stage: usize,
    pub loss: f64,
    pub lr: f64,
    pub gamma: f64,
    pub update_count: u64,
    pub weight_hash: String,
}

/// Coefficients used by one optimizer update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateInfo {
    pub lr: f64,
    pub gamma: f64,
    pub grad_coeff: f64,
}

/// Which update steps get full-vector dumps.
///
/// Probes sit at multiples of `interval` beyond the stage delay `tau`; each
/// probe `p` keeps the window `[p − tau, p]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbePlan {
    pub interval: u64,
    pub steps: u64,
}

impl ProbePlan {
    pub fn probe_steps(&self, tau: usize) -> Vec<u64> {
        (1..=self.steps / self.interval)
            .map(|k| k * self.interval)
            .filter(|&p| p > tau as u64)
            .collect()
    }

    pub fn keeps(&self, t: u64, tau: usize) -> bool {
        let lo = t.max(tau as u64 + 1);
        let hi = (t + tau as u64).min(self.steps);
        if lo > hi {
            return false;
        }
        let first = lo.div_ceil(self.interval) * self.interval;
        first <= hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Divergence {
    pub step: u64,
    pub stage: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub mode: Mode,
    pub optimizer: OptimizerKind,
    pub delays: Vec<usize>,
    pub plan: ProbePlan,
    pub rows: Vec<TraceRow>,
    /// Loss per microbatch (async) or per flush cycle (sync), in order.
    pub losses: Vec<f64>,
    /// Per stage, indexed by update step minus one.
    pub updates: Vec<Vec<UpdateInfo>>,
    pub probes: BTreeMap<(usize, u64, ProbeKind), DenseVector>,
    pub final_weights: Vec<DenseVector>,
    /// Per stage, the largest number of weight versions held at once,
    /// counting the live weights.
    pub peak_versions: Vec<usize>,
    pub diverged: Option<Divergence>,
}

impl TrainingTrace {
    pub fn new(mode: Mode, optimizer: OptimizerKind, delays: Vec<usize>, plan: ProbePlan) -> Self {
        let stages = delays.len();
        Self {
            mode,
            optimizer,
            delays,
            plan,
            rows: Vec::new(),
            losses: Vec::new(),
            updates: vec![Vec::new(); stages],
            probes: BTreeMap::new(),
            final_weights: Vec::new(),
            peak_versions: vec![1; stages],
            diverged: None,
        }
    }

    pub fn stages(&self) -> usize {
        self.delays.len()
    }

    /// Mean of the last (up to) 100 recorded losses.
    pub fn final_loss(&self) -> Option<f64> {
        let n = self.losses.len().min(100);
        (n > 0).then(|| self.losses[self.losses.len() - n..].iter().sum::<f64>() / n as f64)
    }

    pub fn probe(&self, stage: usize, step: u64, kind: ProbeKind) -> Option<&DenseVector> {
        self.probes.get(&(stage, step, kind))
    }

    /// Probe steps at `stage` whose full window was recorded.
    pub fn probe_steps(&self, stage: usize) -> Vec<u64> {
        let tau = self.delays[stage - 1];
        let done = self.updates[stage - 1].len() as u64;
        self.plan.probe_steps(tau).into_iter().filter(|&p| p <= done).collect()
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::with_capacity(64 * self.rows.len() + 64);
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.step,
                r.stage,
                format_float(r.loss),
                format_float(r.lr),
                format_float(r.gamma),
                r.update_count,
                r.weight_hash
            );
        }
        out
    }

    pub fn render_probes(&self) -> String {
        let mut out = String::new();
        for ((stage, step, kind), v) in &self.probes {
            let _ = write!(out, "t={step} stage={stage} kind={}", kind.letter());
            for x in v.iter() {
                out.push(' ');
                out.push_str(&format_float(*x));
            }
            out.push('\n');
        }
        out
    }

    /// SHA-256 over the rendered rows and probes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.render_csv().as_bytes());
        h.update(self.render_probes().as_bytes());
        h.finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_field<T: FromStr>(line: usize, name: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Trace(format!("line {line}: bad {name} `{s}`")))
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = data_lines(text);
    match lines.next() {
        Some((_, h)) if h == TRACE_HEADER => {}
        _ => return Err(Error::Trace("missing trace header".into())),
    }
    lines
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Trace(format!("line {n}: expected 7 fields, found {}", f.len())));
            }
            Ok(TraceRow {
                step: parse_field(n, "step", f[0])?,
                stage: parse_field(n, "stage", f[1])?,
                loss: parse_field(n, "loss", f[2])?,
                lr: parse_field(n, "lr", f[3])?,
                gamma: parse_field(n, "gamma", f[4])?,
                update_count: parse_field(n, "update_count", f[5])?,
                weight_hash: f[6].to_string(),
            })
        })
        .collect()
}

pub fn parse_probes(text: &str) -> Result<BTreeMap<(usize, u64, ProbeKind), DenseVector>> {
    let mut probes = BTreeMap::new();
    for (n, line) in data_lines(text) {
        let mut parts = line.split_whitespace();
        let mut tag = |prefix: &str| -> Result<&str> {
            parts
                .next()
                .and_then(|p| p.strip_prefix(prefix))
                .ok_or_else(|| Error::Trace(format!("line {n}: expected `{prefix}...`")))
        };
        let step: u64 = parse_field(n, "step", tag("t=")?)?;
        let stage: usize = parse_field(n, "stage", tag("stage=")?)?;
        let kind: ProbeKind = tag("kind=")?.parse()?;
        let values = parts
            .map(|p| parse_field::<f64>(n, "value", p))
            .collect::<Result<Vec<_>>>()?;
        probes.insert((stage, step, kind), DenseVector::new(values)?);
    }
    Ok(probes)
}

/// Rebuilds per-stage update coefficients from trace rows: an update is
/// wherever a stage's `update_count` advances.
pub fn updates_from_rows(rows: &[TraceRow], stages: usize, kind: OptimizerKind) -> Result<Vec<Vec<UpdateInfo>>> {
    let mut out = vec![Vec::new(); stages];
    let mut counts = vec![0u64; stages];
    for r in rows {
        if r.stage < 1 || r.stage > stages {
            return Err(Error::Trace(format!("row for stage {} of {stages}", r.stage)));
        }
        let c = &mut counts[r.stage - 1];
        match r.update_count.checked_sub(*c) {
            Some(0) => {}
            Some(1) => {
                *c += 1;
                out[r.stage - 1].push(UpdateInfo {
                    lr: r.lr,
                    gamma: r.gamma,
                    grad_coeff: kind.grad_coeff(r.lr, r.gamma),
                });
            }
            _ => {
                return Err(Error::Trace(format!(
                    "stage {} update count jumps from {c} to {}",
                    r.stage, r.update_count
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 0.0, -0.0] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(format_float(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn probe_plan_windows() {
        let plan = ProbePlan {
            interval: 50,
            steps: 200,
        };
        assert_eq!(plan.probe_steps(7), [50, 100, 150, 200]);
        assert!(plan.keeps(43, 7));
        assert!(plan.keeps(50, 7));
        assert!(!plan.keeps(42, 7));
        assert!(!plan.keeps(51, 7));
        assert_eq!(plan.probe_steps(60), [100, 150, 200]);
        assert!(plan.keeps(45, 60));
        assert!(!plan.keeps(39, 60));
        let dense = ProbePlan { interval: 2, steps: 10 };
        assert!((1..=10).all(|t| dense.keeps(t, 3)));
        assert_eq!(dense.probe_steps(0), [2, 4, 6, 8, 10]);
        assert!(!dense.keeps(1, 0));
    }

    #[test]
    fn csv_and_probes_round_trip() {
        let mut t = TrainingTrace::new(
            Mode::AsyncStash,
            OptimizerKind::NagDiscounted,
            vec![1, 0],
            ProbePlan { interval: 1, steps: 2 },
        );
        let w = DenseVector::new(vec![0.1, -2.5e-7]).unwrap();
        t.rows.push(TraceRow {
            step: 1,
            stage: 2,
            loss: 0.25,
            lr: 0.1,
            gamma: 0.0,
            update_count: 1,
            weight_hash: weight_hash(&w),
        });
        t.probes.insert((1, 2, ProbeKind::D), w.clone());
        let rows = parse_trace_csv(&format!("# echo\n{}", t.render_csv())).unwrap();
        assert_eq!(rows, t.rows);
        assert_eq!(parse_probes(&t.render_probes()).unwrap(), t.probes);
        assert_eq!(weight_hash(&w).len(), 16);
        assert!(parse_trace_csv("step,stage\n").is_err());
        assert!(parse_probes("t=1 stage=1 kind=q 1.0").is_err());
    }

    #[test]
    fn updates_rebuilt_from_rows() {
        let row = |stage, update_count, gamma| TraceRow {
            step: 0,
            stage,
            loss: 0.0,
            lr: 0.5,
            gamma,
            update_count,
            weight_hash: String::new(),
        };
        let rows = [row(1, 0, 0.9), row(1, 1, 0.9), row(1, 1, 0.8), row(1, 2, 0.5)];
        let u = updates_from_rows(&rows, 1, OptimizerKind::NagDiscounted).unwrap();
        assert_eq!(u[0].len(), 2);
        assert_eq!(u[0][1].grad_coeff, 0.25);
        assert!(updates_from_rows(&[row(1, 2, 0.0)], 1, OptimizerKind::Nag).is_err());
    }
}
