//! Diagnostics computed from traces: weight gap, alignment of the weight
//! drift with the stale look-ahead, the exact delay identity, suboptimality
//! and log-log rate fits.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, rmse, DenseVector};
use crate::pipeline::{format_float, ProbeKind, TrainingTrace};
use crate::stage_models::QuadraticSpec;

pub const METRICS_HEADER: &str = "step,stage,gap_rmse,cos_align,delay_identity_residual,suboptimality";

/// `(step, value)` pairs with strictly increasing steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub label: String,
    points: Vec<(u64, f64)>,
}

impl MetricSeries {
    pub fn new(label: impl Into<String>, points: Vec<(u64, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Validation("metric steps must strictly increase".into()));
        }
        Ok(Self {
            label: label.into(),
            points,
        })
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mean of the values with steps in `[lo, hi]`.
    pub fn mean_over(&self, lo: u64, hi: u64) -> Option<f64> {
        let vals: Vec<f64> = self
            .points
            .iter()
            .filter(|(s, _)| (lo..=hi).contains(s))
            .map(|(_, v)| *v)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Everything about one probe window needed to relate `Δₜ = wₜ − wₜ₋τ` to
/// the stale look-ahead `d̄ₜ = dₜ₋τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayRecord {
    pub stage: usize,
    pub step: u64,
    pub tau: usize,
    pub w_t: DenseVector,
    pub w_lag: DenseVector,
    pub d_lag: DenseVector,
    /// Gradients of updates `t−τ ..= t−1`.
    pub grads: Vec<DenseVector>,
    /// Momentum coefficients of updates `t−τ ..= t−1`.
    pub gammas: Vec<f64>,
    /// Gradient factors of updates `t−τ ..= t−1`.
    pub coeffs: Vec<f64>,
}

impl DelayRecord {
    pub fn from_trace(trace: &TrainingTrace, stage: usize, step: u64) -> Result<Self> {
        if stage < 1 || stage > trace.stages() {
            return Err(Error::StageOutOfRange {
                stage,
                stages: trace.stages(),
            });
        }
        let tau = trace.delays[stage - 1];
        if step <= tau as u64 {
            return Err(Error::IncompleteWindow(format!(
                "step {step} is inside the first {tau} updates"
            )));
        }
        let lag = step - tau as u64;
        let get = |t: u64, kind: ProbeKind| {
            trace.probe(stage, t, kind).cloned().ok_or_else(|| {
                Error::IncompleteWindow(format!("stage {stage} has no `{}` probe at step {t}", kind.letter()))
            })
        };
        let updates = &trace.updates[stage - 1];
        let info = |t: u64| {
            updates
                .get(t as usize - 1)
                .copied()
                .ok_or_else(|| Error::IncompleteWindow(format!("stage {stage} has no coefficients for update {t}")))
        };
        let mut grads = Vec::with_capacity(tau);
        let mut gammas = Vec::with_capacity(tau);
        let mut coeffs = Vec::with_capacity(tau);
        for k in lag..step {
            grads.push(get(k, ProbeKind::G)?);
            let u = info(k)?;
            gammas.push(u.gamma);
            coeffs.push(u.grad_coeff);
        }
        Ok(Self {
            stage,
            step,
            tau,
            w_t: get(step, ProbeKind::W)?,
            w_lag: get(lag, ProbeKind::W)?,
            d_lag: get(lag, ProbeKind::D)?,
            grads,
            gammas,
            coeffs,
        })
    }

    pub fn drift(&self) -> Result<DenseVector> {
        self.w_t.sub(&self.w_lag)
    }
}

/// RMSE between the current weights and those `τ` updates earlier.
pub fn weight_gap(rec: &DelayRecord) -> Result<f64> {
    rmse(&rec.w_t, &rec.w_lag)
}

/// `cos(Δₜ, d̄ₜ)`; `None` when either vector is zero.
pub fn cosine_alignment(rec: &DelayRecord) -> Result<Option<f64>> {
    match cosine_similarity(&rec.drift()?, &rec.d_lag) {
        Ok(c) => Ok(Some(c)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// `Δₜ` rebuilt from `d̄ₜ` and the window's gradients by unrolling the
/// momentum recursion:
/// `Σᵢ₌₁..τ [ (Π_{j=t−τ+1}^{t−i} γⱼ) d̄ₜ − Σ_{k=t−τ}^{t−i} (Π_{j=k+1}^{t−i} γⱼ) sₖ ḡₖ ]`
/// where `sₖ` is the gradient factor of update `k`.
pub fn delay_identity_rhs(rec: &DelayRecord) -> Result<DenseVector> {
    let tau = rec.tau;
    if rec.grads.len() != tau || rec.gammas.len() != tau || rec.coeffs.len() != tau {
        return Err(Error::IncompleteWindow(format!(
            "window of depth {} for delay {tau}",
            rec.grads.len() + 1
        )));
    }
    // offsets into the window: position p holds update t−τ+p
    let prod = |from: usize, to: usize| -> f64 { (from..=to).map(|p| rec.gammas[p]).product() };
    let mut rhs = DenseVector::zeros(rec.d_lag.len());
    for i in 1..=tau {
        let top = tau - i; // position of update t−i
        rhs = rhs.add_scaled(prod(1, top), &rec.d_lag)?;
        for k in 0..=top {
            let weight = prod(k + 1, top) * rec.coeffs[k];
            rhs = rhs.add_scaled(-weight, &rec.grads[k])?;
        }
    }
    Ok(rhs)
}

/// `‖Δₜ − RHS‖ / max(‖Δₜ‖, 1e-30)`; zero when `τ = 0`.
pub fn delay_identity_residual(rec: &DelayRecord) -> Result<f64> {
    let rhs = delay_identity_rhs(rec)?;
    if rec.tau == 0 {
        return Ok(0.0);
    }
    let drift = rec.drift()?;
    Ok(drift.sub(&rhs)?.norm() / drift.norm().max(1e-30))
}

/// `f(wₚ) − f(w*)` at every recorded probe step of `stage`.
pub fn suboptimality_series(trace: &TrainingTrace, stage: usize, spec: &QuadraticSpec) -> Result<MetricSeries> {
    let f_star = spec.value(spec.optimum())?;
    let points = trace
        .probes
        .iter()
        .filter(|((s, _, kind), _)| *s == stage && *kind == ProbeKind::W)
        .map(|((_, step, _), w)| Ok((*step, (spec.value(w)? - f_star).max(0.0))))
        .collect::<Result<Vec<_>>>()?;
    MetricSeries::new(format!("suboptimality/stage{stage}"), points)
}

/// Least-squares slope of `log value` against `log step` over the points at
/// or after `burn_in`, thinned to a geometric grid (successive steps at least
/// 5% apart) so late, dense probes do not dominate.
pub fn fit_convergence_rate(series: &MetricSeries, burn_in: u64) -> Result<f64> {
    let pts: Vec<(u64, f64)> = series
        .points()
        .iter()
        .copied()
        .filter(|(s, _)| *s >= burn_in && *s > 0)
        .collect();
    if pts.len() < 10 {
        return Err(Error::NotFittable(format!(
            "{} points after burn-in, need 10",
            pts.len()
        )));
    }
    if let Some((s, v)) = pts.iter().find(|(_, v)| *v <= 0.0) {
        return Err(Error::NotFittable(format!("value {v} at step {s} is not positive")));
    }
    let mut grid = Vec::new();
    for &(s, v) in &pts {
        match grid.last() {
            Some(&(last, _)) if (s as f64) < last as f64 * 1.05 => {}
            _ => grid.push((s, v)),
        }
    }
    let used = if grid.len() >= 10 { grid } else { pts };
    let xs: Vec<f64> = used.iter().map(|(s, _)| (*s as f64).ln()).collect();
    let ys: Vec<f64> = used.iter().map(|(_, v)| v.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    pub stage: usize,
    pub gap_rmse: Option<f64>,
    pub cos_align: Option<f64>,
    pub delay_identity_residual: Option<f64>,
    pub suboptimality: Option<f64>,
}

/// One row per stage per probe step. The identity residual is reported for
/// momentum-SGD style optimizers only; suboptimality needs `specs`.
pub fn metric_rows(trace: &TrainingTrace, specs: Option<&[QuadraticSpec]>) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for stage in 1..=trace.stages() {
        for step in trace.probe_steps(stage) {
            let rec = DelayRecord::from_trace(trace, stage, step)?;
            let suboptimality = match specs {
                Some(specs) => {
                    let spec = &specs[stage - 1];
                    Some(spec.value(&rec.w_t)? - spec.value(spec.optimum())?)
                }
                None => None,
            };
            rows.push(MetricRow {
                step,
                stage,
                gap_rmse: Some(weight_gap(&rec)?),
                cos_align: cosine_alignment(&rec)?,
                delay_identity_residual: if trace.optimizer.is_adaptive() {
                    None
                } else {
                    Some(delay_identity_residual(&rec)?)
                },
                suboptimality,
            });
        }
    }
    Ok(rows)
}

pub fn render_metrics_csv(rows: &[MetricRow]) -> String {
    let cell = |v: Option<f64>| v.map(format_float).unwrap_or_default();
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step,
            r.stage,
            cell(r.gap_rmse),
            cell(r.cos_align),
            cell(r.delay_identity_residual),
            cell(r.suboptimality)
        );
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => return Err(Error::Trace("missing metrics header".into())),
    }
    lines
        .map(|(i, line)| {
            let f: Vec<&str> = line.trim().split(',').collect();
            let bad = || Error::Trace(format!("metrics line {}: `{line}`", i + 1));
            if f.len() != 6 {
                return Err(bad());
            }
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| bad())
                }
            };
            Ok(MetricRow {
                step: f[0].parse().map_err(|_| bad())?,
                stage: f[1].parse().map_err(|_| bad())?,
                gap_rmse: opt(f[2])?,
                cos_align: opt(f[3])?,
                delay_identity_residual: opt(f[4])?,
                suboptimality: opt(f[5])?,
            })
        })
        .collect()
}
