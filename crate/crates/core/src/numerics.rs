//! Dense `f64` vectors, a reproducible random stream, and the two scalar
//! comparisons (cosine similarity and RMSE) the metric layer is built on.
//!
//! Every vector is finite by construction. Arithmetic that would produce a
//! NaN or infinity returns [`Error::NonFinite`] instead, so a diverging run
//! surfaces as a typed event rather than silently poisoning later steps.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A finite, flat vector of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseVector {
    values: Vec<f64>,
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

impl DenseVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn filled(len: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.values.iter()
    }

    pub fn expect_len(&self, expected: usize) -> Result<()> {
        if self.len() == expected {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected,
                found: self.len(),
            })
        }
    }

    fn same_len(&self, other: &DenseVector) -> Result<()> {
        other.expect_len(self.len())
    }

    /// Elementwise combination of two equal-length vectors.
    pub fn zip_map(&self, other: &DenseVector, f: impl Fn(f64, f64) -> f64) -> Result<DenseVector> {
        self.same_len(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        DenseVector::new(values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<DenseVector> {
        DenseVector::new(self.values.iter().map(|&a| f(a)).collect())
    }

    pub fn add(&self, other: &DenseVector) -> Result<DenseVector> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseVector) -> Result<DenseVector> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &DenseVector) -> Result<DenseVector> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Result<DenseVector> {
        self.map(|a| a * factor)
    }

    /// `self + alpha * other`
    pub fn add_scaled(&self, alpha: f64, other: &DenseVector) -> Result<DenseVector> {
        self.zip_map(other, |a, b| a + alpha * b)
    }

    pub fn dot(&self, other: &DenseVector) -> Result<f64> {
        self.same_len(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Bitwise equality; distinguishes `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &DenseVector) -> bool {
        self.len() == other.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl TryFrom<Vec<f64>> for DenseVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        DenseVector::new(values)
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.values[index]
    }
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]` against rounding.
pub fn cosine_similarity(a: &DenseVector, b: &DenseVector) -> Result<f64> {
    let dot = a.dot(b)?;
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero-norm vector"));
    }
    let cos = dot / (na * nb);
    if !cos.is_finite() {
        return Err(Error::Degenerate("cosine similarity overflowed"));
    }
    Ok(cos.clamp(-1.0, 1.0))
}

pub fn rmse(a: &DenseVector, b: &DenseVector) -> Result<f64> {
    b.expect_len(a.len())?;
    if a.is_empty() {
        return Err(Error::Degenerate("rmse of empty vectors"));
    }
    let sum: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Reproducible random stream backed by ChaCha8.
///
/// ChaCha output is specified bit-for-bit, so a seed pins the stream on every
/// platform. Independent sub-streams (one per microbatch, per stage, ...) are
/// selected with [`SeededRng::with_stream`].
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n` (`n > 0`).
    pub fn next_index(&mut self, n: usize) -> usize {
        // Rejection sampling keeps the draw unbiased.
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal draw via Box-Muller.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

pub fn sample_uniform(rng: &mut SeededRng, n: usize, lo: f64, hi: f64) -> Result<DenseVector> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidRange { lo, hi });
    }
    let values = (0..n)
        .map(|_| {
            let v = lo + (hi - lo) * rng.next_f64();
            // lo + (hi-lo)*u can round up to hi
            if v >= hi {
                hi.next_down()
            } else {
                v
            }
        })
        .collect();
    DenseVector::new(values)
}
