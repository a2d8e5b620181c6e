//! Mimic scoring: rate each sample's gradient by its alignment with the
//! direction from the current weights to a reference model, normalize the
//! scores across the batch with a temperature softmax, and take the
//! weighted-gradient step.
//!
//! Masks restrict which parameter segments enter the *score*; the update
//! itself always applies every sample's full gradient.

use serde::{Deserialize, Serialize};

use crate::models::{ParamMask, ParamVector};
use crate::num::{dot, norm, softmax_slice};
use crate::{Error, Result};

/// How batch weights are produced during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Alignment with a reference direction (the mimic score).
    Mimic,
    /// Gradient-norm weighting: `w_i ∝ ‖g_i‖`.
    Grand,
    /// Plain averaging, i.e. ordinary mini-batch gradient descent.
    Uniform,
}

/// Scoring configuration: softmax temperature and weighting mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MimicConfig {
    pub temperature: f64,
    pub weighting: Weighting,
}

impl MimicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!(
                "mimic.temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// A trained reference model plus the mask selecting which of its parameter
/// segments define the target direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTarget {
    params: ParamVector,
    mask: ParamMask,
}

impl ReferenceTarget {
    pub fn new(params: ParamVector, mask: ParamMask) -> Result<Self> {
        mask.validate_against(params.spec())?;
        Ok(ReferenceTarget { params, mask })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn mask(&self) -> &ParamMask {
        &self.mask
    }
}

/// The masked target direction `θ_ref − θ_t`, concatenated in segment
/// layout order.
pub fn target_vector(theta: &ParamVector, reference: &ReferenceTarget) -> Result<Vec<f64>> {
    if !theta.same_layout(reference.params()) {
        return Err(Error::InvalidArgument(
            "current and reference parameters have different layouts".into(),
        ));
    }
    let cur = theta.masked_values(reference.mask())?;
    let tgt = reference.params().masked_values(reference.mask())?;
    Ok(tgt.iter().zip(&cur).map(|(r, t)| r - t).collect())
}

/// Alignment of one (masked) gradient with the target direction:
/// `⟨−g, v⟩ / ‖v‖`. A zero-norm target is an error here; batch-level callers
/// fall back to uniform weights instead (see [`batch_weights`]).
pub fn mimic_score(grad_masked: &[f64], target: &[f64]) -> Result<f64> {
    if grad_masked.len() != target.len() {
        return Err(Error::InvalidArgument(format!(
            "gradient has {} masked coordinates, target has {}",
            grad_masked.len(),
            target.len()
        )));
    }
    let target_norm = norm(target);
    if target_norm == 0.0 {
        return Err(Error::DegenerateTarget(
            "target direction has zero norm".into(),
        ));
    }
    Ok(-dot(grad_masked, target) / target_norm)
}

/// Softmax-normalizes raw scores at `temperature`; output sums to 1.
pub fn normalize_scores(raw: &[f64], temperature: f64) -> Result<Vec<f64>> {
    softmax_slice(raw, temperature)
}

/// Normalized batch weights for the configured mode.
///
/// For [`Weighting::Mimic`], scores use gradients restricted to the
/// reference mask. When the model has already reached the reference (zero
/// target norm), weights degrade to uniform with a logged warning rather
/// than an error.
pub fn batch_weights(
    theta: &ParamVector,
    reference: Option<&ReferenceTarget>,
    grads: &[ParamVector],
    config: &MimicConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if grads.is_empty() {
        return Err(Error::InvalidArgument("empty gradient batch".into()));
    }
    let b = grads.len();
    match config.weighting {
        Weighting::Uniform => Ok(vec![1.0 / b as f64; b]),
        Weighting::Grand => grand_weights(grads),
        Weighting::Mimic => {
            let reference = reference.ok_or_else(|| {
                Error::Config("mimic.weighting = mimic requires a reference model".into())
            })?;
            let target = target_vector(theta, reference)?;
            if norm(&target) == 0.0 {
                log::warn!("target direction has zero norm; falling back to uniform weights");
                return Ok(vec![1.0 / b as f64; b]);
            }
            let raw = grads
                .iter()
                .map(|g| {
                    if !g.same_layout(theta) {
                        return Err(Error::InvalidArgument(
                            "gradient layout differs from parameters".into(),
                        ));
                    }
                    mimic_score(&g.masked_values(reference.mask())?, &target)
                })
                .collect::<Result<Vec<f64>>>()?;
            normalize_scores(&raw, config.temperature)
        }
    }
}

/// Gradient-norm weights `‖g_i‖ / Σ_j ‖g_j‖`; an all-zero batch falls back
/// to uniform.
pub fn grand_weights(grads: &[ParamVector]) -> Result<Vec<f64>> {
    if grads.is_empty() {
        return Err(Error::InvalidArgument("empty gradient batch".into()));
    }
    let norms: Vec<f64> = grads.iter().map(|g| norm(g.as_slice())).collect();
    let total: f64 = norms.iter().sum();
    if total == 0.0 {
        return Ok(vec![1.0 / grads.len() as f64; grads.len()]);
    }
    Ok(norms.into_iter().map(|n| n / total).collect())
}

/// One reweighted step: `θ' = θ − lr · Σ_i weights[i] · grads[i]`, with the
/// sum accumulated in ascending batch order for bit-reproducibility.
///
/// Weights must sum to 1 within 1e-9 — the guard that keeps every weighting
/// mode on the same step-size scale as plain averaging.
pub fn reweighted_update(
    theta: &ParamVector,
    grads: &[ParamVector],
    weights: &[f64],
    learning_rate: f64,
) -> Result<ParamVector> {
    if grads.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients but {} weights",
            grads.len(),
            weights.len()
        )));
    }
    if grads.is_empty() {
        return Err(Error::InvalidArgument("empty gradient batch".into()));
    }
    if !(learning_rate > 0.0) || !learning_rate.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive and finite, got {learning_rate}"
        )));
    }
    let weight_sum: f64 = weights.iter().sum();
    if (weight_sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "batch weights sum to {weight_sum}, expected 1 within 1e-9"
        )));
    }
    let mut step = vec![0.0; theta.len()];
    for (g, &w) in grads.iter().zip(weights) {
        if !g.same_layout(theta) {
            return Err(Error::InvalidArgument(
                "gradient layout differs from parameters".into(),
            ));
        }
        for (acc, &gj) in step.iter_mut().zip(g.as_slice()) {
            *acc += w * gj;
        }
    }
    let next: Vec<f64> = theta
        .as_slice()
        .iter()
        .zip(&step)
        .map(|(&t, &s)| t - learning_rate * s)
        .collect();
    theta.with_values(next)
}
