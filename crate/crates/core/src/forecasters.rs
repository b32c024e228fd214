//! Delay corrections that turn a stale gradient into a guess at the current
//! one: a diagonal second-order Taylor term, and a per-coordinate quadratic
//! trend plus periodic residual fitted over recent gradients.

use std::collections::VecDeque;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::numerics::DenseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForecasterKind {
    None,
    SecondOrder,
    PolyFft,
}

impl ForecasterKind {
    pub fn name(self) -> &'static str {
        match self {
            ForecasterKind::None => "none",
            ForecasterKind::SecondOrder => "second_order",
            ForecasterKind::PolyFft => "poly_fft",
        }
    }
}

impl FromStr for ForecasterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            ForecasterKind::None,
            ForecasterKind::SecondOrder,
            ForecasterKind::PolyFft,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Validation(format!("unknown forecaster `{s}`")))
    }
}

/// The last `capacity` gradients, oldest first.
#[derive(Debug, Clone)]
pub struct GradientHistory {
    capacity: usize,
    entries: VecDeque<(u64, DenseVector)>,
}

impl GradientHistory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Validation("history_size must be at least 1".into()));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, step: u64, g: DenseVector) -> Result<()> {
        if let Some((last, prev)) = self.entries.back() {
            if step <= *last {
                return Err(Error::Validation(format!(
                    "history steps must increase: {step} after {last}"
                )));
            }
            g.expect_len(prev.len())?;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((step, g));
        Ok(())
    }

    pub fn newest(&self) -> Option<&(u64, DenseVector)> {
        self.entries.back()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(u64, DenseVector)> {
        self.entries.iter()
    }
}

/// `g + λ (g ⊙ g) ⊙ Δw`
pub fn second_order_forecast(g_stale: &DenseVector, dw: &DenseVector, lambda: f64) -> Result<DenseVector> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Validation(format!(
            "fisher_lambda must be nonnegative, got {lambda}"
        )));
    }
    g_stale.zip_map(dw, |g, d| g + lambda * (g * g) * d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForecastStatus {
    Forecast,
    /// Fewer than three gradients were available; the newest one was returned.
    FallbackNewest,
}

/// Discrete orthogonal polynomials of degree ≤ 2 on the sample points,
/// evaluated at the samples and at one extra point.
struct QuadraticBasis {
    at_samples: [Vec<f64>; 3],
    at_target: [f64; 3],
    norms: [f64; 3],
}

impl QuadraticBasis {
    fn new(xs: &[f64], target: f64) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let u: Vec<f64> = xs.iter().map(|x| x - mean).collect();
        let ut = target - mean;
        let p0 = vec![1.0; xs.len()];
        let p1 = u.clone();
        let n1: f64 = p1.iter().map(|v| v * v).sum();
        // p2 = u² − a·u − b, orthogonal to p0 and p1
        let u2: Vec<f64> = u.iter().map(|v| v * v).collect();
        let b = u2.iter().sum::<f64>() / n;
        let a = u2.iter().zip(&u).map(|(s, v)| s * v).sum::<f64>() / n1;
        let p2: Vec<f64> = u.iter().map(|v| v * v - a * v - b).collect();
        let n2: f64 = p2.iter().map(|v| v * v).sum();
        Self {
            at_target: [1.0, ut, ut * ut - a * ut - b],
            at_samples: [p0, p1, p2],
            norms: [n, n1, n2],
        }
    }

    /// Least-squares fit of `ys`; returns fitted values at the samples and
    /// at the target.
    fn fit(&self, ys: &[f64]) -> (Vec<f64>, f64) {
        let mut fitted = vec![0.0; ys.len()];
        let mut at_target = 0.0;
        for j in 0..3 {
            let p = &self.at_samples[j];
            let c = ys.iter().zip(p).map(|(y, q)| y * q).sum::<f64>() / self.norms[j];
            for (f, q) in fitted.iter_mut().zip(p) {
                *f += c * q;
            }
            at_target += c * self.at_target[j];
        }
        (fitted, at_target)
    }
}

/// Per-coordinate forecast `horizon` steps past the newest entry: a
/// least-squares quadratic in the step index plus the fit residual continued
/// periodically by Fourier synthesis over all bins.
///
/// The residual is treated as a sequence in entry order, so the periodic
/// part assumes evenly spaced steps.
pub fn poly_fft_forecast(history: &GradientHistory, horizon: u64) -> Result<(DenseVector, ForecastStatus)> {
    if horizon == 0 {
        return Err(Error::Validation("forecast horizon must be at least 1".into()));
    }
    let (last_step, newest) = history
        .newest()
        .ok_or_else(|| Error::Validation("cannot forecast from an empty history".into()))?;
    let n = history.len();
    if n < 3 {
        return Ok((newest.clone(), ForecastStatus::FallbackNewest));
    }
    let xs: Vec<f64> = history.iter().map(|(s, _)| *s as f64).collect();
    let basis = QuadraticBasis::new(&xs, (*last_step + horizon) as f64);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    // position of the forecast in the periodic extension
    let position = ((n as u64 - 1 + horizon) % n as u64) as f64;
    let twiddles: Vec<Complex<f64>> = (0..n)
        .map(|f| Complex::from_polar(1.0, std::f64::consts::TAU * f as f64 * position / n as f64))
        .collect();

    let mut out = Vec::with_capacity(newest.len());
    let mut buffer = vec![Complex::new(0.0, 0.0); n];
    for coord in 0..newest.len() {
        let ys: Vec<f64> = history.iter().map(|(_, g)| g[coord]).collect();
        let (fitted, trend) = basis.fit(&ys);
        for (b, (y, f)) in buffer.iter_mut().zip(ys.iter().zip(&fitted)) {
            *b = Complex::new(y - f, 0.0);
        }
        fft.process(&mut buffer);
        let periodic = buffer.iter().zip(&twiddles).map(|(c, w)| (c * w).re).sum::<f64>() / n as f64;
        out.push(trend + periodic);
    }
    Ok((DenseVector::new(out)?, ForecastStatus::Forecast))
}
