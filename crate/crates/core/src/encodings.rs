//! Scalar-to-distribution encodings shared by the reward head and the critic.
//!
//! Scalars are squashed with `symlog` and then spread over two adjacent
//! buckets of a fixed, evenly spaced grid. Decoding is the dot product of the
//! weights with the bucket centers, followed by `symexp`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `sign(x) * ln(|x| + 1)`.
pub fn symlog(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("symlog of non-finite value {x}")));
    }
    Ok(symlog_raw(x))
}

/// Inverse of [`symlog`]: `sign(y) * (exp(|y|) - 1)`.
pub fn symexp(y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::Domain(format!("symexp of non-finite value {y}")));
    }
    Ok(symexp_raw(y))
}

#[inline]
pub(crate) fn symlog_raw(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

#[inline]
pub(crate) fn symexp_raw(y: f64) -> f64 {
    y.signum() * y.abs().exp_m1()
}

/// Evenly spaced bucket centers on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    lo: f64,
    hi: f64,
    centers: Vec<f64>,
}

impl BucketSpec {
    pub fn new(count: usize, lo: f64, hi: f64) -> Result<Self> {
        if count < 2 {
            return Err(Error::Config(format!(
                "bucket count must be at least 2, got {count}"
            )));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!(
                "bucket range must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        let last = (count - 1) as f64;
        let mut centers: Vec<f64> = (0..count)
            .map(|i| lo + (hi - lo) * (i as f64) / last)
            .collect();
        centers[count - 1] = hi;
        Ok(Self { lo, hi, centers })
    }

    pub fn count(&self) -> usize {
        self.centers.len()
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    /// Index of the lower bracketing center and the weight of the upper one.
    fn bracket(&self, v: f64) -> (usize, f64) {
        let v = self.clamp(v);
        let k = self.centers.len();
        // Largest i with centers[i] <= v.
        let i = self.centers.partition_point(|&c| c <= v).saturating_sub(1);
        if i >= k - 1 {
            return (k - 1, 0.0);
        }
        let (a, b) = (self.centers[i], self.centers[i + 1]);
        (i, (v - a) / (b - a))
    }
}

/// Two-hot weights over a [`BucketSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct TwoHotVector {
    weights: Vec<f64>,
}

impl TwoHotVector {
    /// Validates the two-hot invariants: non-negative, summing to one, with at
    /// most two adjacent non-zero entries.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain("two-hot weights must be finite and non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!("two-hot weights sum to {sum}, expected 1")));
        }
        let nz: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] != 0.0).collect();
        let ok = match nz.as_slice() {
            [_] => true,
            [a, b] => b - a == 1,
            _ => false,
        };
        if !ok {
            return Err(Error::Domain(format!(
                "two-hot vector has non-zero entries at {nz:?}"
            )));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Indices of non-zero entries.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.weights.len()).filter(|&i| self.weights[i] != 0.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.weights
    }
}

impl AsRef<[f64]> for TwoHotVector {
    fn as_ref(&self) -> &[f64] {
        &self.weights
    }
}

/// Encodes `v` (clamped into the bucket range) as two-hot weights.
///
/// A value lying exactly on a center yields a strict one-hot vector.
pub fn two_hot_encode(v: f64, spec: &BucketSpec) -> Result<TwoHotVector> {
    if !v.is_finite() {
        return Err(Error::Domain(format!("cannot two-hot encode {v}")));
    }
    let mut weights = vec![0.0; spec.count()];
    let (i, upper) = spec.bracket(v);
    if upper == 0.0 {
        weights[i] = 1.0;
    } else {
        weights[i] = 1.0 - upper;
        weights[i + 1] = upper;
    }
    Ok(TwoHotVector { weights })
}

/// Dot product of `weights` with the bucket centers. Accepts any weight
/// vector of the right length, e.g. a softmax output.
pub fn two_hot_decode(weights: &[f64], spec: &BucketSpec) -> Result<f64> {
    if weights.len() != spec.count() {
        return Err(Error::Shape(format!(
            "weight vector has {} entries, bucket spec has {}",
            weights.len(),
            spec.count()
        )));
    }
    Ok(weights.iter().zip(spec.centers()).map(|(w, c)| w * c).sum())
}

/// Flattened two-hot targets of `symlog(values)`, row-major `[values.len(), K]`.
pub(crate) fn symlog_two_hot_rows(values: &[f64], spec: &BucketSpec) -> Vec<f64> {
    let k = spec.count();
    let mut out = vec![0.0; values.len() * k];
    for (row, &v) in out.chunks_mut(k).zip(values) {
        let v = if v.is_finite() { symlog_raw(v) } else { 0.0 };
        let (i, upper) = spec.bracket(v);
        row[i] = 1.0 - upper;
        if upper != 0.0 {
            row[i + 1] = upper;
        }
    }
    out
}
