//! Runs experiments from configs and writes their artifacts; re-checks and
//! compares stored runs.
//!
//! A run directory holds `trace.csv`, `probes.txt`, `metrics.csv` and
//! `summary.txt`, each opening with the config echo.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{echo_block, parse_echo, ExperimentConfig};
use crate::error::{Error, Result};
use crate::metrics::{delay_identity_rhs, metric_rows, parse_metrics_csv, render_metrics_csv, DelayRecord, MetricRow};
use crate::pipeline::{
    build_schedule, format_float, parse_probes, parse_trace_csv, run_training, updates_from_rows, utilization_report,
    weight_hash, Divergence, ProbeKind, ProbePlan, TrainingTrace,
};

pub const TRACE_FILE: &str = "trace.csv";
pub const PROBES_FILE: &str = "probes.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const COMPARISON_FILE: &str = "comparison.csv";

/// Keys `sweep` accepts as an axis.
pub const SWEEP_AXES: [&str; 6] = ["optimizer", "gamma", "stages", "mode", "forecaster", "seed"];

const COMPARISON_HEADER: &str = "label,rank,status,final_loss,mean_gap_rmse,mean_cos_align,bubble_fraction";

/// Headline numbers of one run. Means are over stage 1's probes in the last
/// three quarters of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub final_loss: Option<f64>,
    pub bubble_fraction: f64,
    pub mean_gap_rmse: Option<f64>,
    pub mean_cos_align: Option<f64>,
    pub mean_suboptimality: Option<f64>,
    pub delays: Vec<usize>,
    pub peak_versions: Vec<usize>,
    pub diverged: Option<Divergence>,
}

impl Summary {
    pub fn status(&self) -> &'static str {
        if self.diverged.is_some() {
            "diverged"
        } else {
            "converged"
        }
    }
}

/// Everything a run produces, before it is written out.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub trace: TrainingTrace,
    pub metrics: Vec<MetricRow>,
    pub summary: Summary,
}

/// Idle fraction of the schedule after warm-up, over the run's full horizon.
pub fn bubble_fraction(cfg: &ExperimentConfig) -> Result<f64> {
    let shape = cfg.pipeline().shape();
    let horizon = shape.horizon(cfg.steps);
    let events = build_schedule(&shape, horizon)?;
    Ok(utilization_report(&events, shape.warmup_ticks())?.aggregate)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn summarize(cfg: &ExperimentConfig, trace: &TrainingTrace, metrics: &[MetricRow]) -> Result<Summary> {
    let from = cfg.steps / 4;
    let window: Vec<&MetricRow> = metrics.iter().filter(|r| r.stage == 1 && r.step >= from).collect();
    Ok(Summary {
        final_loss: trace.final_loss(),
        bubble_fraction: bubble_fraction(cfg)?,
        mean_gap_rmse: mean(window.iter().filter_map(|r| r.gap_rmse)),
        mean_cos_align: mean(window.iter().filter_map(|r| r.cos_align)),
        mean_suboptimality: mean(window.iter().filter_map(|r| r.suboptimality)),
        delays: trace.delays.clone(),
        peak_versions: trace.peak_versions.clone(),
        diverged: trace.diverged,
    })
}

/// Runs `cfg` in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let model = cfg.build_model()?;
    let trace = run_training(&cfg.pipeline(), &model)?;
    let specs = cfg.quadratic_specs()?;
    let metrics = metric_rows(&trace, specs.as_deref())?;
    let summary = summarize(cfg, &trace, &metrics)?;
    Ok(RunArtifacts {
        trace,
        metrics,
        summary,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn render_summary(cfg: &ExperimentConfig, s: &Summary) -> String {
    let mut out = cfg.echo();
    let _ = writeln!(out, "status={}", s.status());
    let _ = writeln!(out, "final_loss={}", cell(s.final_loss));
    let _ = writeln!(out, "bubble_fraction={}", format_float(s.bubble_fraction));
    let _ = writeln!(out, "mean_gap_rmse={}", cell(s.mean_gap_rmse));
    let _ = writeln!(out, "mean_cos_align={}", cell(s.mean_cos_align));
    let _ = writeln!(out, "mean_suboptimality={}", cell(s.mean_suboptimality));
    let _ = writeln!(out, "delays={}", join(&s.delays));
    let _ = writeln!(out, "peak_versions={}", join(&s.peak_versions));
    let (step, stage) = s.diverged.map_or((String::new(), String::new()), |d| {
        (d.step.to_string(), d.stage.to_string())
    });
    let _ = writeln!(out, "diverged_step={step}");
    let _ = writeln!(out, "diverged_stage={stage}");
    out
}

pub fn parse_summary(text: &str) -> Result<Summary> {
    let mut fields = std::collections::BTreeMap::new();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Trace(format!("summary line `{line}`")))?;
        fields.insert(k.trim(), v.trim());
    }
    let field = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::Trace(format!("summary lacks `{k}`")))
    };
    let bad = |k: &str| Error::Trace(format!("summary field `{k}` is malformed"));
    let opt = |k: &str| -> Result<Option<f64>> {
        match field(k)? {
            "" => Ok(None),
            v => v.parse().map(Some).map_err(|_| bad(k)),
        }
    };
    let list = |k: &str| -> Result<Vec<usize>> {
        match field(k)? {
            "" => Ok(Vec::new()),
            v => v.split(',').map(|x| x.parse().map_err(|_| bad(k))).collect(),
        }
    };
    let diverged = match (field("diverged_step")?, field("diverged_stage")?) {
        ("", "") => None,
        (step, stage) => Some(Divergence {
            step: step.parse().map_err(|_| bad("diverged_step"))?,
            stage: stage.parse().map_err(|_| bad("diverged_stage"))?,
        }),
    };
    let summary = Summary {
        final_loss: opt("final_loss")?,
        bubble_fraction: field("bubble_fraction")?.parse().map_err(|_| bad("bubble_fraction"))?,
        mean_gap_rmse: opt("mean_gap_rmse")?,
        mean_cos_align: opt("mean_cos_align")?,
        mean_suboptimality: opt("mean_suboptimality")?,
        delays: list("delays")?,
        peak_versions: list("peak_versions")?,
        diverged,
    };
    if field("status")? != summary.status() {
        return Err(Error::Trace(
            "summary status disagrees with its divergence fields".into(),
        ));
    }
    Ok(summary)
}

/// Writes the four artifacts of a run into `dir`.
pub fn write_artifacts(cfg: &ExperimentConfig, dir: &Path, run: &RunArtifacts) -> Result<()> {
    fs::create_dir_all(dir)?;
    let echo = cfg.echo();
    fs::write(dir.join(TRACE_FILE), format!("{echo}{}", run.trace.render_csv()))?;
    fs::write(dir.join(PROBES_FILE), format!("{echo}{}", run.trace.render_probes()))?;
    fs::write(
        dir.join(METRICS_FILE),
        format!("{echo}{}", render_metrics_csv(&run.metrics)),
    )?;
    fs::write(dir.join(SUMMARY_FILE), render_summary(cfg, &run.summary))?;
    Ok(())
}

/// Runs `cfg` and writes its artifacts under `cfg.out_dir`. Divergence is
/// reported in the summary, not as an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Summary> {
    let run = execute(cfg)?;
    write_artifacts(cfg, &cfg.out_dir, &run)?;
    Ok(run.summary)
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub dir: PathBuf,
    pub summary: Summary,
}

/// Orders rows by final loss, diverged runs last; returns 1-based ranks in
/// row order.
pub fn rank_by_final_loss(rows: &[ComparisonRow]) -> Vec<usize> {
    let key = |r: &ComparisonRow| match (r.summary.diverged, r.summary.final_loss) {
        (None, Some(l)) if l.is_finite() => (0, l),
        _ => (1, 0.0),
    };
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        let (ka, kb) = (key(&rows[a]), key(&rows[b]));
        ka.0.cmp(&kb.0).then(ka.1.partial_cmp(&kb.1).unwrap_or(Ordering::Equal))
    });
    let mut ranks = vec![0; rows.len()];
    for (rank, &i) in order.iter().enumerate() {
        ranks[i] = rank + 1;
    }
    ranks
}

pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let ranks = rank_by_final_loss(rows);
    let mut out = String::from(COMPARISON_HEADER);
    out.push('\n');
    for (r, rank) in rows.iter().zip(ranks) {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{},{rank},{},{},{},{},{}",
            r.label,
            s.status(),
            cell(s.final_loss),
            cell(s.mean_gap_rmse),
            cell(s.mean_cos_align),
            format_float(s.bubble_fraction)
        );
    }
    out
}

/// One run per value of `axis`, run concurrently, each in
/// `<out_dir>/<axis>=<value>`; the comparison table goes to
/// `<out_dir>/comparison.csv`.
pub fn sweep(base: &ExperimentConfig, axis: &str, values: &[String]) -> Result<Vec<ComparisonRow>> {
    if !SWEEP_AXES.contains(&axis) {
        return Err(Error::Validation(format!(
            "`{axis}` is not sweepable; choose one of {}",
            SWEEP_AXES.join(", ")
        )));
    }
    if values.is_empty() {
        return Err(Error::Validation("sweep needs at least one value".into()));
    }
    let mut configs = Vec::with_capacity(values.len());
    for v in values {
        let mut cfg = base.clone();
        cfg.set(axis, v, 0)
            .map_err(|e| Error::Validation(format!("{axis}={v}: {e}")))?;
        cfg.out_dir = base.out_dir.join(format!("{axis}={v}"));
        cfg.validate()?;
        configs.push(cfg);
    }
    let results: Vec<Result<Summary>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|cfg| scope.spawn(move || run_experiment(cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Validation("sweep worker panicked".into())))
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(values.len());
    for ((cfg, v), result) in configs.iter().zip(values).zip(results) {
        rows.push(ComparisonRow {
            label: format!("{axis}={v}"),
            dir: cfg.out_dir.clone(),
            summary: result?,
        });
    }
    fs::write(
        base.out_dir.join(COMPARISON_FILE),
        format!("{}{}", base.echo(), render_comparison(&rows)),
    )?;
    Ok(rows)
}

/// Comparison table over stored run directories, labelled by directory name.
pub fn report(dirs: &[PathBuf]) -> Result<String> {
    let rows = dirs
        .iter()
        .map(|d| {
            let summary = parse_summary(&fs::read_to_string(d.join(SUMMARY_FILE))?)?;
            let label = d
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| d.display().to_string());
            Ok(ComparisonRow {
                label,
                dir: d.clone(),
                summary,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(render_comparison(&rows))
}

/// Outcome of [`check`]: how many properties were tested and which failed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckReport {
    pub checked: usize,
    pub failures: Vec<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn expect(&mut self, ok: bool, failure: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.failures.push(failure());
        }
    }
}

/// Loose bound on rounding error in the delay identity: relative `1e-9` of
/// the drift, or a few ulps per term of the magnitudes that went into it.
fn identity_tolerance(rec: &DelayRecord) -> f64 {
    let terms = rec.w_t.norm()
        + rec.w_lag.norm()
        + rec.d_lag.norm() * rec.tau as f64
        + rec
            .grads
            .iter()
            .zip(&rec.coeffs)
            .map(|(g, c)| g.norm() * c.abs())
            .sum::<f64>()
            * rec.tau as f64;
    let drift = rec.w_t.sub(&rec.w_lag).map(|d| d.norm()).unwrap_or(f64::INFINITY);
    1e-9 * drift + 64.0 * f64::EPSILON * (rec.tau as f64 + 1.0) * terms
}

/// Re-parses a run directory and re-derives its metrics from the stored
/// trace and probes. Unreadable or malformed files are errors; properties
/// that do not hold are listed in the report.
pub fn check(dir: &Path) -> Result<CheckReport> {
    let read = |name: &str| -> Result<String> {
        fs::read_to_string(dir.join(name)).map_err(|e| Error::Io(format!("{}: {e}", dir.join(name).display())))
    };
    let (trace_text, probe_text, metrics_text, summary_text) = (
        read(TRACE_FILE)?,
        read(PROBES_FILE)?,
        read(METRICS_FILE)?,
        read(SUMMARY_FILE)?,
    );
    let cfg = parse_echo(&trace_text)?;
    let mut report = CheckReport::default();

    let echo = echo_block(&trace_text);
    for (name, text) in [
        (PROBES_FILE, &probe_text),
        (METRICS_FILE, &metrics_text),
        (SUMMARY_FILE, &summary_text),
    ] {
        report.expect(echo_block(text) == echo, || {
            format!("{name} has a different config echo")
        });
    }

    let rows = parse_trace_csv(&trace_text)?;
    let delays = cfg.delays()?;
    let stages = cfg.stages;
    let updates = match updates_from_rows(&rows, stages, cfg.optimizer) {
        Ok(u) => u,
        Err(e) => {
            report.expect(false, || e.to_string());
            return Ok(report);
        }
    };
    let summary = parse_summary(&summary_text)?;
    for (i, u) in updates.iter().enumerate() {
        let expected = match summary.diverged {
            None => cfg.steps,
            Some(_) => u.len() as u64,
        };
        report.expect(u.len() as u64 == expected, || {
            format!("stage {} recorded {} updates, expected {expected}", i + 1, u.len())
        });
    }
    report.expect(summary.delays == delays, || {
        format!(
            "summary delays {:?} differ from the config's {delays:?}",
            summary.delays
        )
    });

    let probes = parse_probes(&probe_text)?;
    // W probes are pre-update weights, so W at step p must hash like the
    // weights after update p − 1
    for ((stage, step, kind), w) in &probes {
        if *kind != ProbeKind::W || *step < 2 {
            continue;
        }
        let after = rows
            .iter()
            .rev()
            .find(|r| r.stage == *stage && r.update_count == step - 1);
        if let Some(row) = after {
            let hash = weight_hash(w);
            report.expect(row.weight_hash == hash, || {
                format!(
                    "stage {stage} step {step}: probe hash {hash} vs trace {}",
                    row.weight_hash
                )
            });
        }
    }

    let mut trace = TrainingTrace::new(
        cfg.mode,
        cfg.optimizer,
        delays,
        ProbePlan {
            interval: cfg.probe_interval,
            steps: cfg.steps,
        },
    );
    trace.rows = rows;
    trace.updates = updates;
    trace.probes = probes;
    let specs = cfg.quadratic_specs()?;
    let recomputed = match metric_rows(&trace, specs.as_deref()) {
        Ok(m) => m,
        Err(e) => {
            report.expect(false, || format!("metrics cannot be recomputed: {e}"));
            return Ok(report);
        }
    };
    let stored = parse_metrics_csv(&metrics_text)?;
    report.expect(render_metrics_csv(&stored) == render_metrics_csv(&recomputed), || {
        "metrics.csv differs from the metrics recomputed from trace and probes".into()
    });

    for r in &recomputed {
        let at = format!("stage {} step {}", r.stage, r.step);
        if let Some(g) = r.gap_rmse {
            report.expect(g >= 0.0, || format!("{at}: negative weight gap {g}"));
        }
        if let Some(c) = r.cos_align {
            report.expect(c.abs() <= 1.0 + 1e-12, || {
                format!("{at}: alignment {c} outside [-1, 1]")
            });
        }
        if let Some(s) = r.suboptimality {
            report.expect(s >= -1e-12, || format!("{at}: negative suboptimality {s}"));
        }
        if r.delay_identity_residual.is_some() {
            let rec = DelayRecord::from_trace(&trace, r.stage, r.step)?;
            let err = rec.drift()?.sub(&delay_identity_rhs(&rec)?)?.norm();
            let tol = identity_tolerance(&rec);
            report.expect(err <= tol, || {
                format!("{at}: delay identity off by {err:e} (tolerance {tol:e})")
            });
        }
    }
    Ok(report)
}
