//! Shared numeric primitives: a finite-only vector type, temperature softmax,
//! Pearson correlation, and the set-overlap metrics used by the filter and
//! membership experiments.

use std::collections::BTreeSet;

use crate::{Error, Result};

/// Contiguous `f64` storage that admits only finite entries. Every
/// constructor rejects NaN and ±∞, so downstream math never has to re-check.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Wraps `values`, rejecting non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value {} at index {i}",
                values[i]
            )));
        }
        Ok(Vector(values))
    }

    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl<'a> IntoIterator for &'a Vector {
    type Item = &'a f64;
    type IntoIter = std::slice::Iter<'a, f64>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Dot product of equal-length slices. Callers guarantee the lengths.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Temperature softmax with max-subtraction: `w_i ∝ exp(s_i / t)`.
///
/// Errors on empty input or `temperature <= 0`. Output entries are positive
/// and sum to 1 within 1e-12.
pub fn softmax(scores: &Vector, temperature: f64) -> Result<Vector> {
    Ok(Vector(softmax_slice(scores.as_slice(), temperature)?))
}

/// Slice-level implementation of [`softmax`] for hot paths.
pub(crate) fn softmax_slice(scores: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("softmax of empty input".into()));
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "softmax temperature must be positive and finite, got {temperature}"
        )));
    }
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
    let mut weights: Vec<f64> = scores
        .iter()
        .map(|&s| ((s - max) / temperature).exp())
        .collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    Ok(weights)
}

/// Pearson correlation of two equal-length series.
///
/// Errors if the lengths differ, fewer than two points are given, or either
/// series has zero variance.
pub fn pearson(x: &Vector, y: &Vector) -> Result<f64> {
    let (x, y) = (x.as_slice(), y.as_slice());
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "pearson length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 2 points, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "a series with zero variance has no correlation".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// F1 of a predicted index set against a ground-truth index set.
///
/// Returns 0 when the intersection is empty (covers empty prediction, empty
/// truth, and plain misses alike).
pub fn f1_score(predicted: &BTreeSet<usize>, truth: &BTreeSet<usize>) -> f64 {
    let tp = predicted.intersection(truth).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let precision = tp / predicted.len() as f64;
    let recall = tp / truth.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Jaccard index and overlap fraction `|a ∩ b| / |a|` of two index sets.
/// Degenerate denominators yield 0, so two empty sets map to `(0, 0)`.
pub fn jaccard_overlap(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> (f64, f64) {
    let inter = a.intersection(b).count() as f64;
    let union = a.union(b).count() as f64;
    let jaccard = if union == 0.0 { 0.0 } else { inter / union };
    let overlap = if a.is_empty() {
        0.0
    } else {
        inter / a.len() as f64
    };
    (jaccard, overlap)
}
